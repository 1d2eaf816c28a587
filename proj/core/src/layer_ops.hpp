#pragma once

// Per-layer forward and backward kernels. Internal to the core library.

#include <span>

#include "nncov/network.hpp"

namespace nncov::detail {

Tensor layer_forward(const Network& net, std::size_t index, const Tensor& input);

// Given dL/d(output) of layer `index`, returns dL/d(input). When
// `param_grads` is non-null the weight and bias gradients are accumulated
// into it (keyed by parameter name, pre-sized). `need_input_grad` lets the
// caller skip the input gradient of the first layer during training.
Tensor layer_backward(const Network& net, std::size_t index, const Tensor& input,
                      const Tensor& output, const Tensor& grad_output,
                      std::map<std::string, Tensor>* param_grads, bool need_input_grad);

}  // namespace nncov::detail
