#include "nncov/network.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "layer_ops.hpp"
#include "nncov/errors.hpp"

namespace nncov {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv2D: return "conv2d";
    case LayerKind::kReLU: return "relu";
    case LayerKind::kMaxPool2D: return "maxpool2d";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kSoftmax: return "softmax";
  }
  return "?";
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out, std::string weight, std::string bias) {
  LayerSpec s;
  s.kind = LayerKind::kDense;
  s.in_units = in;
  s.out_units = out;
  s.weight_name = std::move(weight);
  s.bias_name = std::move(bias);
  return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in_channels, std::size_t out_channels,
                            std::size_t kernel_h, std::size_t kernel_w, std::size_t stride,
                            std::string weight, std::string bias) {
  LayerSpec s;
  s.kind = LayerKind::kConv2D;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  s.kernel_h = kernel_h;
  s.kernel_w = kernel_w;
  s.stride = stride;
  s.weight_name = std::move(weight);
  s.bias_name = std::move(bias);
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::max_pool(std::size_t window, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::kMaxPool2D;
  s.window = window;
  s.pool_stride = stride;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::kFlatten;
  return s;
}

LayerSpec LayerSpec::softmax() {
  LayerSpec s;
  s.kind = LayerKind::kSoftmax;
  return s;
}

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::kDense) return {out_units, in_units};
  if (kind == LayerKind::kConv2D) return {out_channels, in_channels, kernel_h, kernel_w};
  return {};
}

Shape LayerSpec::bias_shape() const {
  if (kind == LayerKind::kDense) return {out_units};
  if (kind == LayerKind::kConv2D) return {out_channels};
  return {};
}

namespace {

std::string layer_label(std::size_t index, const LayerSpec& spec) {
  return "layer " + std::to_string(index) + " (" + layer_kind_name(spec.kind) + ")";
}

Shape infer_output_shape(std::size_t index, const LayerSpec& spec, const Shape& in) {
  auto fail = [&](const std::string& why) {
    throw ShapeError(layer_label(index, spec) + ": " + why + ", input " + shape_string(in));
  };
  switch (spec.kind) {
    case LayerKind::kDense:
      if (spec.in_units == 0 || spec.out_units == 0) fail("zero units");
      if (in.size() != 1 || in[0] != spec.in_units) fail("expects " + std::to_string(spec.in_units) + " inputs");
      return {spec.out_units};
    case LayerKind::kConv2D: {
      if (spec.in_channels == 0 || spec.out_channels == 0 || spec.kernel_h == 0 ||
          spec.kernel_w == 0 || spec.stride == 0) {
        fail("zero-sized hyperparameter");
      }
      if (in.size() != 3 || in[0] != spec.in_channels) fail("expects C x H x W with C=" + std::to_string(spec.in_channels));
      if (in[1] < spec.kernel_h || in[2] < spec.kernel_w) fail("kernel larger than input");
      return {spec.out_channels, (in[1] - spec.kernel_h) / spec.stride + 1,
              (in[2] - spec.kernel_w) / spec.stride + 1};
    }
    case LayerKind::kMaxPool2D:
      if (spec.window == 0 || spec.pool_stride == 0) fail("zero window or stride");
      if (in.size() != 3) fail("expects C x H x W");
      if (in[1] < spec.window || in[2] < spec.window) fail("window larger than input");
      return {in[0], (in[1] - spec.window) / spec.pool_stride + 1,
              (in[2] - spec.window) / spec.pool_stride + 1};
    case LayerKind::kReLU:
      return in;
    case LayerKind::kFlatten:
      return {element_count(in)};
    case LayerKind::kSoftmax:
      if (in.size() != 1) fail("expects a vector");
      return in;
  }
  fail("unknown layer kind");
  return {};
}

}  // namespace

Network::Network(std::string model_id, Shape input_shape, std::vector<LayerSpec> layers,
                 std::map<std::string, Tensor> params)
    : model_id_(std::move(model_id)),
      input_shape_(std::move(input_shape)),
      layers_(std::move(layers)),
      params_(std::move(params)) {
  if (layers_.empty()) throw ShapeError("network has no layers");
  if (input_shape_.empty() || element_count(input_shape_) == 0) {
    throw ShapeError("network input shape " + shape_string(input_shape_) + " is empty");
  }
  std::set<std::string> referenced;
  Shape current = input_shape_;
  output_shapes_.reserve(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& spec = layers_[i];
    if (spec.kind == LayerKind::kSoftmax && i + 1 != layers_.size()) {
      throw ShapeError(layer_label(i, spec) + ": softmax must be the final layer");
    }
    current = infer_output_shape(i, spec, current);
    output_shapes_.push_back(current);
    if (!spec.is_parametric()) continue;
    for (const auto& [name, shape] : {std::pair{spec.weight_name, spec.weight_shape()},
                                      std::pair{spec.bias_name, spec.bias_shape()}}) {
      if (!referenced.insert(name).second) {
        throw ShapeError(layer_label(i, spec) + ": parameter '" + name + "' referenced twice");
      }
      auto it = params_.find(name);
      if (it == params_.end()) {
        throw ShapeError(layer_label(i, spec) + ": missing parameter '" + name + "'");
      }
      if (it->second.shape() != shape) {
        throw ShapeError(layer_label(i, spec) + ": parameter '" + name + "' has shape " +
                         shape_string(it->second.shape()) + ", expected " + shape_string(shape));
      }
      if (!it->second.all_finite()) {
        throw ShapeError("parameter '" + name + "' contains non-finite values");
      }
    }
  }
  for (const auto& [name, tensor] : params_) {
    if (!referenced.contains(name)) throw ShapeError("parameter '" + name + "' is not used by any layer");
  }
  if (current.size() != 1) {
    throw ShapeError("network output must be a vector, got " + shape_string(current));
  }
  num_classes_ = current[0];
  logits_layer_ = layers_.size() - 1;
  if (ends_in_softmax()) {
    if (layers_.size() < 2) throw ShapeError("softmax needs a preceding layer");
    logits_layer_ = layers_.size() - 2;
  }
}

const Tensor& Network::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ShapeError("no parameter named '" + name + "'");
  return it->second;
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, tensor] : params_) total += tensor.size();
  return total;
}

const Shape& Network::input_shape_of(std::size_t i) const {
  return i == 0 ? input_shape_ : output_shapes_[i - 1];
}

bool Network::is_coverable(std::size_t layer_index) const {
  return layer_index < layers_.size() && layers_[layer_index].is_parametric();
}

std::size_t Network::neuron_count(std::size_t layer_index) const {
  if (!is_coverable(layer_index)) return 0;
  const LayerSpec& spec = layers_[layer_index];
  return spec.kind == LayerKind::kDense ? spec.out_units : spec.out_channels;
}

std::size_t Network::neuron_source_layer(std::size_t layer_index) const {
  if (layer_index + 1 < layers_.size() && layers_[layer_index + 1].kind == LayerKind::kReLU) {
    return layer_index + 1;
  }
  return layer_index;
}

void Network::check_neuron(const NeuronId& id) const {
  if (!is_coverable(id.layer_index)) {
    throw ShapeError("neuron refers to layer " + std::to_string(id.layer_index) +
                     ", which is not a dense or conv layer of model '" + model_id_ + "'");
  }
  if (id.unit_index >= neuron_count(id.layer_index)) {
    throw ShapeError("neuron unit " + std::to_string(id.unit_index) + " out of range for layer " +
                     std::to_string(id.layer_index) + " of model '" + model_id_ + "'");
  }
}

Network Network::with_model_id(std::string model_id) const {
  Network copy = *this;
  copy.model_id_ = std::move(model_id);
  return copy;
}

Network Network::with_params(std::map<std::string, Tensor> params) const {
  return Network(model_id_, input_shape_, layers_, std::move(params));
}

bool Network::bit_equal(const Network& other) const {
  if (model_id_ != other.model_id_ || input_shape_ != other.input_shape_ ||
      layers_ != other.layers_ || params_.size() != other.params_.size()) {
    return false;
  }
  return std::equal(params_.begin(), params_.end(), other.params_.begin(),
                    [](const auto& a, const auto& b) {
                      return a.first == b.first && a.second.bit_equal(b.second);
                    });
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

ActivationTrace forward(const Network& net, const Tensor& input) {
  if (input.shape() != net.input_shape()) {
    throw ShapeError("input shape " + shape_string(input.shape()) + " does not match model '" +
                     net.model_id() + "' input " + shape_string(net.input_shape()));
  }
  ActivationTrace trace;
  trace.input = input;
  trace.per_layer.reserve(net.layers().size());
  const Tensor* current = &trace.input;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    trace.per_layer.push_back(detail::layer_forward(net, i, *current));
    current = &trace.per_layer.back();
  }
  if (net.ends_in_softmax()) {
    trace.final_probs = trace.per_layer.back().values();
  } else {
    trace.final_probs = softmax(trace.per_layer.back().data());
  }
  return trace;
}

Prediction prediction_of(const ActivationTrace& trace) {
  return Prediction{argmax(trace.final_probs), trace.final_probs};
}

Prediction predict(const Network& net, const Tensor& input) {
  return prediction_of(forward(net, input));
}

double neuron_value(const Network& net, const ActivationTrace& trace, const NeuronId& id) {
  net.check_neuron(id);
  const Tensor& out = trace.per_layer[net.neuron_source_layer(id.layer_index)];
  if (net.layers()[id.layer_index].kind == LayerKind::kDense) return out[id.unit_index];
  const std::size_t plane = out.shape()[1] * out.shape()[2];
  const double* p = out.data().data() + id.unit_index * plane;
  double total = 0.0;
  for (std::size_t k = 0; k < plane; ++k) total += p[k];
  return total / static_cast<double>(plane);
}

}  // namespace nncov
