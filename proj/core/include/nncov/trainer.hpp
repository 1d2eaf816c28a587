#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nncov/dataset.hpp"
#include "nncov/network.hpp"

namespace nncov {

/// Architecture template. Parameter names and the input sizes of Dense and
/// Conv2D layers are filled in by `build_layers`, so templates only state
/// output sizes: e.g. conv2d(out=4, 5x5), relu, maxpool(2), flatten,
/// dense(out=10), softmax.
struct Architecture {
  std::vector<LayerSpec> layers;

  /// Parses a comma-separated layer list
  ///   conv:OUT:KHxKW[:STRIDE], relu, maxpool:W[:STRIDE], flatten, dense:OUT, softmax
  /// or a preset name: lenet1, lenet4, lenet5, mlp:H1[:H2...].
  static Architecture parse(std::string_view text);
  static Architecture lenet1();
  static Architecture lenet4();
  static Architecture lenet5();
  static Architecture mlp(const std::vector<std::size_t>& hidden, std::size_t classes = 10);

  // Concrete layer list for the given input shape. Throws ShapeError if the
  // template does not fit.
  std::vector<LayerSpec> build_layers(const Shape& input_shape) const;
};

struct TrainConfig {
  Architecture architecture = Architecture::lenet1();
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  std::uint64_t rng_seed = 0;
  std::optional<std::size_t> sample_limit;  // train on the first N samples only
  std::string model_id = "model";

  void validate() const;
};

struct TrainReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_loss;  // mean training loss after each epoch
};

/// Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases.
Network initialize(const TrainConfig& cfg, const Shape& input_shape);

/// Minibatch SGD on softmax cross-entropy. Deterministic given rng_seed: the
/// shuffle of epoch e depends only on (rng_seed, e), so training for E epochs
/// is a prefix of training for E + k epochs. A tail shorter than batch_size
/// joins the last full batch.
/// Throws ConfigError on an invalid config or empty data, ShapeError on a
/// label outside the class range.
Network train(const TrainConfig& cfg, const Dataset& data, TrainReport* report = nullptr);

/// Continues SGD from `start` for cfg.epochs epochs (epochs may be 0 here).
/// `epoch_offset` selects which shuffle stream the first epoch uses.
Network continue_training(const Network& start, const TrainConfig& cfg, const Dataset& data,
                          std::size_t epoch_offset = 0, TrainReport* report = nullptr);

// Trains once and returns a snapshot after each requested epoch count.
std::vector<Network> train_snapshots(const TrainConfig& cfg, const Dataset& data,
                                     const std::vector<std::size_t>& epoch_counts);

enum class VariantAxis { kSamples, kUnits, kEpochs };

VariantAxis parse_variant_axis(std::string_view text);

/// One network per delta, differing from `base` along one axis:
///  - kSamples: trained on (base sample count - delta) samples
///  - kUnits: every hidden Dense/Conv2D layer has delta fewer units
///  - kEpochs: trained for (base epochs + delta) epochs
/// delta = 0 reproduces the base network bit-exactly. Throws ConfigError on
/// a delta that would leave no samples or no units.
std::vector<Network> make_variants(const TrainConfig& base, const Dataset& data, VariantAxis axis,
                                   const std::vector<std::size_t>& deltas);

double accuracy(const Network& net, const Dataset& data);

}  // namespace nncov
