#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "nncov/dataset.hpp"
#include "nncov/network.hpp"

namespace nncov {

struct WeightedTerm;

/// Names a scalar computed from one forward pass of a network: a class
/// probability, a logit, a neuron output, or a weighted sum of those.
class ScalarSelector {
 public:
  enum class Kind { kClassProb, kClassLogit, kNeuronOutput, kWeightedSum };

  static ScalarSelector class_prob(std::size_t cls);
  static ScalarSelector class_logit(std::size_t cls);
  static ScalarSelector neuron_output(NeuronId id);
  static ScalarSelector weighted_sum(std::vector<WeightedTerm> terms);

  Kind kind() const { return kind_; }
  std::size_t cls() const { return cls_; }
  const NeuronId& neuron() const { return neuron_; }
  const std::vector<WeightedTerm>& terms() const { return terms_; }

  // Throws ShapeError if the selector refers to a class or neuron the
  // network does not have, or carries a non-finite coefficient.
  void validate(const Network& net) const;

 private:
  Kind kind_ = Kind::kClassProb;
  std::size_t cls_ = 0;
  NeuronId neuron_;
  std::vector<WeightedTerm> terms_;
};

struct WeightedTerm {
  ScalarSelector selector;
  double coefficient = 1.0;
};

double evaluate(const Network& net, const ActivationTrace& trace, const ScalarSelector& sel);

/// d(sel)/d(input) with parameters held constant. The result has the input's
/// shape.
Tensor input_gradient(const Network& net, const ScalarSelector& sel, const Tensor& input);
Tensor input_gradient(const Network& net, const ScalarSelector& sel, const ActivationTrace& trace);

struct ParamGradients {
  std::map<std::string, Tensor> grads;  // same names and shapes as the network's params
  double loss = 0.0;                    // mean cross-entropy over the batch
};

/// Gradient of the mean softmax cross-entropy over a batch with respect to
/// every parameter, inputs held constant. Throws ConfigError on an empty
/// batch and ShapeError on a label outside [0, num_classes).
ParamGradients param_gradients(const Network& net, const Dataset& batch);
ParamGradients param_gradients(const Network& net, const Dataset& data,
                               std::span<const std::size_t> indices);

// Mean cross-entropy without gradients.
double cross_entropy(const Network& net, const Dataset& data);

}  // namespace nncov
