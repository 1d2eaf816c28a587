#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nncov/tensor.hpp"

namespace nncov {

enum class LayerKind { kDense, kConv2D, kReLU, kMaxPool2D, kFlatten, kSoftmax };

const char* layer_kind_name(LayerKind kind);

/// One layer of a feed-forward network.
///
/// Only the fields relevant to `kind` are meaningful. Parametric layers
/// (Dense, Conv2D) name their weight and bias tensors; the tensors
/// themselves live in the owning Network.
///
/// Layouts: Dense weight is [out, in], Conv2D weight is
/// [out_channels, in_channels, kernel_h, kernel_w]; biases are [out].
/// Conv2D uses valid padding.
struct LayerSpec {
  LayerKind kind = LayerKind::kReLU;

  std::size_t in_units = 0;
  std::size_t out_units = 0;

  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;

  std::size_t window = 0;
  std::size_t pool_stride = 0;

  std::string weight_name;
  std::string bias_name;

  static LayerSpec dense(std::size_t in, std::size_t out, std::string weight, std::string bias);
  static LayerSpec conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_h,
                          std::size_t kernel_w, std::size_t stride, std::string weight,
                          std::string bias);
  static LayerSpec relu();
  static LayerSpec max_pool(std::size_t window, std::size_t stride);
  static LayerSpec flatten();
  static LayerSpec softmax();

  bool is_parametric() const { return kind == LayerKind::kDense || kind == LayerKind::kConv2D; }
  Shape weight_shape() const;
  Shape bias_shape() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// A neuron: one Dense unit or one Conv2D output channel.
struct NeuronId {
  std::size_t layer_index = 0;
  std::size_t unit_index = 0;

  friend auto operator<=>(const NeuronId&, const NeuronId&) = default;
};

/// Feed-forward classifier under test. Immutable after construction; every
/// method is const and safe to call concurrently.
class Network {
 public:
  Network(std::string model_id, Shape input_shape, std::vector<LayerSpec> layers,
          std::map<std::string, Tensor> params);

  const std::string& model_id() const { return model_id_; }
  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  const Tensor& param(const std::string& name) const;
  std::size_t num_classes() const { return num_classes_; }
  std::size_t parameter_count() const;

  // Output shape of layer i.
  const Shape& output_shape(std::size_t i) const { return output_shapes_[i]; }
  const Shape& input_shape_of(std::size_t i) const;

  // Index of the layer whose output is the logit vector: the final layer, or
  // the one before it when the network ends in Softmax.
  std::size_t logits_layer() const { return logits_layer_; }
  bool ends_in_softmax() const { return layers_.back().kind == LayerKind::kSoftmax; }

  // Neurons are Dense units and Conv2D channels. A neuron's output is read
  // after the ReLU that directly follows its layer, when there is one.
  bool is_coverable(std::size_t layer_index) const;
  std::size_t neuron_count(std::size_t layer_index) const;
  std::size_t neuron_source_layer(std::size_t layer_index) const;
  void check_neuron(const NeuronId& id) const;

  Network with_model_id(std::string model_id) const;
  Network with_params(std::map<std::string, Tensor> params) const;

  // Bit-exact comparison of every field, including parameter payloads.
  bool bit_equal(const Network& other) const;

 private:
  std::string model_id_;
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::map<std::string, Tensor> params_;
  std::vector<Shape> output_shapes_;
  std::size_t num_classes_ = 0;
  std::size_t logits_layer_ = 0;
};

/// Outputs of every layer for one input, plus the class probabilities.
struct ActivationTrace {
  Tensor input;
  std::vector<Tensor> per_layer;
  std::vector<double> final_probs;

  std::span<const double> logits(const Network& net) const {
    return per_layer[net.logits_layer()].data();
  }
};

// Throws ShapeError when input.shape() != net.input_shape().
ActivationTrace forward(const Network& net, const Tensor& input);

struct Prediction {
  std::size_t cls = 0;
  std::vector<double> probs;

  double confidence() const { return probs[cls]; }
};

Prediction predict(const Network& net, const Tensor& input);
Prediction prediction_of(const ActivationTrace& trace);

// First index of the maximum (ties go to the lowest index).
std::size_t argmax(std::span<const double> values);
std::vector<double> softmax(std::span<const double> logits);

// Raw output of a neuron for a recorded trace: the unit value for Dense, the
// spatial mean of the channel for Conv2D.
double neuron_value(const Network& net, const ActivationTrace& trace, const NeuronId& id);

}  // namespace nncov
