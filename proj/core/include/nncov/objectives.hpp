#pragma once

#include <cstddef>
#include <span>

#include "nncov/network.hpp"

namespace nncov {

struct JointConfig {
  double lambda1 = 1.0;
  double lambda2 = 0.1;
};

struct ObjectiveValue {
  double value = 0.0;
  Tensor gradient;  // d value / d x, shaped like x
};

/// Differential objective: sum over k != j of P_k(c | x) minus
/// lambda1 * P_j(c | x), probabilities read after softmax.
/// Throws ConfigError with fewer than two networks or an invalid j.
ObjectiveValue obj1(std::span<const Network> nets, std::size_t j, std::size_t c, const Tensor& x,
                    double lambda1);
ObjectiveValue obj1(std::span<const Network> nets, std::span<const ActivationTrace> traces,
                    std::size_t j, std::size_t c, double lambda1);

/// Coverage objective: the sum of raw (unscaled) outputs of one target
/// neuron per network.
ObjectiveValue obj2(std::span<const Network> nets, std::span<const NeuronId> targets,
                    const Tensor& x);
ObjectiveValue obj2(std::span<const Network> nets, std::span<const NeuronId> targets,
                    std::span<const ActivationTrace> traces);

/// obj1 + lambda2 * obj2, composed from the two results above so that the
/// joint gradient equals obj1.gradient + lambda2 * obj2.gradient exactly.
ObjectiveValue joint(std::span<const Network> nets, std::size_t j, std::size_t c,
                     std::span<const NeuronId> targets, const Tensor& x, const JointConfig& cfg);
ObjectiveValue joint(std::span<const Network> nets, std::span<const ActivationTrace> traces,
                     std::size_t j, std::size_t c, std::span<const NeuronId> targets,
                     const JointConfig& cfg);

// Throws ConfigError unless there are >= 2 networks sharing input shape and class count.
void check_compatible(std::span<const Network> nets);

}  // namespace nncov
