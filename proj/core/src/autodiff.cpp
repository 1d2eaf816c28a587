#include "nncov/autodiff.hpp"

#include <cmath>
#include <numeric>
#include <optional>

#include "layer_ops.hpp"
#include "nncov/errors.hpp"

namespace nncov {

ScalarSelector ScalarSelector::class_prob(std::size_t cls) {
  ScalarSelector s;
  s.kind_ = Kind::kClassProb;
  s.cls_ = cls;
  return s;
}

ScalarSelector ScalarSelector::class_logit(std::size_t cls) {
  ScalarSelector s;
  s.kind_ = Kind::kClassLogit;
  s.cls_ = cls;
  return s;
}

ScalarSelector ScalarSelector::neuron_output(NeuronId id) {
  ScalarSelector s;
  s.kind_ = Kind::kNeuronOutput;
  s.neuron_ = id;
  return s;
}

ScalarSelector ScalarSelector::weighted_sum(std::vector<WeightedTerm> terms) {
  ScalarSelector s;
  s.kind_ = Kind::kWeightedSum;
  s.terms_ = std::move(terms);
  return s;
}

void ScalarSelector::validate(const Network& net) const {
  switch (kind_) {
    case Kind::kClassProb:
    case Kind::kClassLogit:
      if (cls_ >= net.num_classes()) {
        throw ShapeError("selector class " + std::to_string(cls_) + " out of range for model '" +
                         net.model_id() + "'");
      }
      return;
    case Kind::kNeuronOutput:
      net.check_neuron(neuron_);
      return;
    case Kind::kWeightedSum:
      for (const WeightedTerm& term : terms_) {
        if (!std::isfinite(term.coefficient)) throw ShapeError("selector coefficient is not finite");
        term.selector.validate(net);
      }
      return;
  }
}

namespace {

// Gradients w.r.t. individual layer outputs, injected during the reverse sweep.
using SeedMap = std::vector<std::optional<Tensor>>;

Tensor& seed_at(SeedMap& seeds, const Network& net, std::size_t layer) {
  if (!seeds[layer]) seeds[layer] = Tensor(net.output_shape(layer));
  return *seeds[layer];
}

void add_seeds(const Network& net, const ActivationTrace& trace, const ScalarSelector& sel,
               double coeff, SeedMap& seeds) {
  switch (sel.kind()) {
    case ScalarSelector::Kind::kClassProb: {
      // d p_c / d z_k = p_c (delta_ck - p_k)
      const auto& p = trace.final_probs;
      const double pc = p[sel.cls()];
      Tensor& seed = seed_at(seeds, net, net.logits_layer());
      for (std::size_t k = 0; k < p.size(); ++k) {
        seed[k] += coeff * pc * ((k == sel.cls() ? 1.0 : 0.0) - p[k]);
      }
      return;
    }
    case ScalarSelector::Kind::kClassLogit:
      seed_at(seeds, net, net.logits_layer())[sel.cls()] += coeff;
      return;
    case ScalarSelector::Kind::kNeuronOutput: {
      const NeuronId& id = sel.neuron();
      const std::size_t source = net.neuron_source_layer(id.layer_index);
      Tensor& seed = seed_at(seeds, net, source);
      if (net.layers()[id.layer_index].kind == LayerKind::kDense) {
        seed[id.unit_index] += coeff;
      } else {
        const Shape& s = net.output_shape(source);
        const std::size_t plane = s[1] * s[2];
        const double share = coeff / static_cast<double>(plane);
        for (std::size_t k = 0; k < plane; ++k) seed[id.unit_index * plane + k] += share;
      }
      return;
    }
    case ScalarSelector::Kind::kWeightedSum:
      for (const WeightedTerm& term : sel.terms()) {
        add_seeds(net, trace, term.selector, coeff * term.coefficient, seeds);
      }
      return;
  }
}

Tensor reverse_sweep(const Network& net, const ActivationTrace& trace, SeedMap& seeds,
                     std::map<std::string, Tensor>* param_grads, bool need_input_grad) {
  std::optional<Tensor> grad;
  for (std::size_t i = net.layers().size(); i-- > 0;) {
    if (seeds[i]) {
      if (grad) {
        grad->add_scaled(*seeds[i], 1.0);
      } else {
        grad = std::move(*seeds[i]);
      }
    }
    if (!grad) continue;
    const Tensor& layer_input = i == 0 ? trace.input : trace.per_layer[i - 1];
    grad = detail::layer_backward(net, i, layer_input, trace.per_layer[i], *grad, param_grads,
                                  need_input_grad || i > 0);
  }
  if (!need_input_grad) return {};
  return grad ? std::move(*grad) : Tensor(net.input_shape());
}

std::map<std::string, Tensor> zero_grads(const Network& net) {
  std::map<std::string, Tensor> grads;
  for (const auto& [name, tensor] : net.params()) grads.emplace(name, Tensor(tensor.shape()));
  return grads;
}

double sample_cross_entropy(std::span<const double> logits, std::size_t label) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - top);
  return std::log(total) + top - logits[label];
}

void check_label(const Network& net, std::size_t label) {
  if (label >= net.num_classes()) {
    throw ShapeError("label " + std::to_string(label) + " out of range for model '" +
                     net.model_id() + "' with " + std::to_string(net.num_classes()) + " classes");
  }
}

}  // namespace

double evaluate(const Network& net, const ActivationTrace& trace, const ScalarSelector& sel) {
  switch (sel.kind()) {
    case ScalarSelector::Kind::kClassProb:
      return trace.final_probs.at(sel.cls());
    case ScalarSelector::Kind::kClassLogit:
      return trace.logits(net)[sel.cls()];
    case ScalarSelector::Kind::kNeuronOutput:
      return neuron_value(net, trace, sel.neuron());
    case ScalarSelector::Kind::kWeightedSum: {
      double total = 0.0;
      for (const WeightedTerm& term : sel.terms()) {
        total += term.coefficient * evaluate(net, trace, term.selector);
      }
      return total;
    }
  }
  return 0.0;
}

Tensor input_gradient(const Network& net, const ScalarSelector& sel, const ActivationTrace& trace) {
  sel.validate(net);
  SeedMap seeds(net.layers().size());
  add_seeds(net, trace, sel, 1.0, seeds);
  return reverse_sweep(net, trace, seeds, nullptr, true);
}

Tensor input_gradient(const Network& net, const ScalarSelector& sel, const Tensor& input) {
  sel.validate(net);
  return input_gradient(net, sel, forward(net, input));
}

ParamGradients param_gradients(const Network& net, const Dataset& data,
                               std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("param_gradients: empty batch");
  ParamGradients result;
  result.grads = zero_grads(net);
  const double inv_n = 1.0 / static_cast<double>(indices.size());
  for (std::size_t idx : indices) {
    const std::size_t label = data.label(idx);
    check_label(net, label);
    const ActivationTrace trace = forward(net, data.sample(idx));
    result.loss += sample_cross_entropy(trace.logits(net), label) * inv_n;
    // d CE / d z_k = p_k - [k == label]
    SeedMap seeds(net.layers().size());
    Tensor& seed = seed_at(seeds, net, net.logits_layer());
    for (std::size_t k = 0; k < net.num_classes(); ++k) {
      seed[k] = (trace.final_probs[k] - (k == label ? 1.0 : 0.0)) * inv_n;
    }
    reverse_sweep(net, trace, seeds, &result.grads, false);
  }
  return result;
}

ParamGradients param_gradients(const Network& net, const Dataset& batch) {
  std::vector<std::size_t> indices(batch.size());
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  return param_gradients(net, batch, indices);
}

double cross_entropy(const Network& net, const Dataset& data) {
  if (data.empty()) throw ConfigError("cross_entropy: empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    check_label(net, data.label(i));
    const ActivationTrace trace = forward(net, data.sample(i));
    total += sample_cross_entropy(trace.logits(net), data.label(i));
  }
  return total / static_cast<double>(data.size());
}

}  // namespace nncov
