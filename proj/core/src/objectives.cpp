#include "nncov/objectives.hpp"

#include <vector>

#include "nncov/autodiff.hpp"
#include "nncov/errors.hpp"

namespace nncov {

namespace {

std::vector<ActivationTrace> forward_all(std::span<const Network> nets, const Tensor& x) {
  std::vector<ActivationTrace> traces;
  traces.reserve(nets.size());
  for (const Network& net : nets) traces.push_back(forward(net, x));
  return traces;
}

}  // namespace

void check_compatible(std::span<const Network> nets) {
  if (nets.size() < 2) throw ConfigError("need at least two models");
  for (const Network& net : nets) {
    if (net.input_shape() != nets.front().input_shape()) {
      throw ConfigError("models '" + nets.front().model_id() + "' and '" + net.model_id() +
                        "' have different input shapes");
    }
    if (net.num_classes() != nets.front().num_classes()) {
      throw ConfigError("models '" + nets.front().model_id() + "' and '" + net.model_id() +
                        "' have different class counts");
    }
  }
}

ObjectiveValue obj1(std::span<const Network> nets, std::span<const ActivationTrace> traces,
                    std::size_t j, std::size_t c, double lambda1) {
  check_compatible(nets);
  if (j >= nets.size()) throw ConfigError("deviant model index out of range");
  if (traces.size() != nets.size()) throw ConfigError("one trace per model required");
  const auto prob = ScalarSelector::class_prob(c);
  ObjectiveValue result{0.0, Tensor(nets.front().input_shape())};
  for (std::size_t k = 0; k < nets.size(); ++k) {
    const double sign = k == j ? -lambda1 : 1.0;
    result.value += sign * evaluate(nets[k], traces[k], prob);
    result.gradient.add_scaled(input_gradient(nets[k], prob, traces[k]), sign);
  }
  return result;
}

ObjectiveValue obj1(std::span<const Network> nets, std::size_t j, std::size_t c, const Tensor& x,
                    double lambda1) {
  check_compatible(nets);
  const auto traces = forward_all(nets, x);
  return obj1(nets, traces, j, c, lambda1);
}

ObjectiveValue obj2(std::span<const Network> nets, std::span<const NeuronId> targets,
                    std::span<const ActivationTrace> traces) {
  if (nets.empty() || targets.size() != nets.size() || traces.size() != nets.size()) {
    throw ConfigError("obj2 needs one target neuron and one trace per model");
  }
  ObjectiveValue result{0.0, Tensor(nets.front().input_shape())};
  for (std::size_t k = 0; k < nets.size(); ++k) {
    const auto sel = ScalarSelector::neuron_output(targets[k]);
    result.value += evaluate(nets[k], traces[k], sel);
    result.gradient.add_scaled(input_gradient(nets[k], sel, traces[k]), 1.0);
  }
  return result;
}

ObjectiveValue obj2(std::span<const Network> nets, std::span<const NeuronId> targets,
                    const Tensor& x) {
  const auto traces = forward_all(nets, x);
  return obj2(nets, targets, traces);
}

ObjectiveValue joint(std::span<const Network> nets, std::span<const ActivationTrace> traces,
                     std::size_t j, std::size_t c, std::span<const NeuronId> targets,
                     const JointConfig& cfg) {
  ObjectiveValue result = obj1(nets, traces, j, c, cfg.lambda1);
  if (cfg.lambda2 == 0.0) return result;
  const ObjectiveValue coverage = obj2(nets, targets, traces);
  result.value += cfg.lambda2 * coverage.value;
  result.gradient.add_scaled(coverage.gradient, cfg.lambda2);
  return result;
}

ObjectiveValue joint(std::span<const Network> nets, std::size_t j, std::size_t c,
                     std::span<const NeuronId> targets, const Tensor& x, const JointConfig& cfg) {
  check_compatible(nets);
  const auto traces = forward_all(nets, x);
  return joint(nets, traces, j, c, targets, cfg);
}

}  // namespace nncov
