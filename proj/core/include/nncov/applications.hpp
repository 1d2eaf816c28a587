#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nncov/dataset.hpp"
#include "nncov/generator.hpp"
#include "nncov/network.hpp"
#include "nncov/trainer.hpp"

namespace nncov {

/// Most frequent predicted class. Ties go to the class with the highest
/// summed confidence, then to the lowest class index.
std::size_t majority_label(std::span<const Network> nets, const Tensor& x);
std::size_t majority_label(std::span<const ModelPrediction> predictions);

// Inputs of `records` labeled by majority vote of their stored predictions.
Dataset majority_labeled(std::span<const DifferenceRecord> records);

struct RetrainResult {
  Network net;
  double heldout_before = 0.0;
  double heldout_after = 0.0;
  double pool_before = 0.0;  // accuracy on `extra` against its labels
  double pool_after = 0.0;
};

/// Continues training `net` on trainset + extra for `epochs` epochs with the
/// batch size, learning rate and rng seed of `cfg`. epochs == 0 returns the
/// network unchanged. Throws ConfigError if `extra` is empty, ShapeError on
/// a label outside the class range.
RetrainResult augment_retrain(const Network& net, const TrainConfig& cfg, const Dataset& trainset,
                              const Dataset& heldout, const Dataset& extra, std::size_t epochs);

struct PollutionOptions {
  // Keep only differences where the clean model says `source_class` and the
  // polluted one says `target_class` (either may be left open).
  std::optional<std::size_t> source_class;
  std::optional<std::size_t> target_class;
  // Search only training samples whose label matches the polluted model's
  // prediction on the generated input.
  bool match_polluted_label = true;
  // Ground truth, one flag per training sample. Enables precision/recall.
  std::vector<bool> polluted;
};

struct Suspect {
  std::size_t train_index = 0;
  double distance = 0.0;  // L1 to the closest generated input
};

struct PollutionReport {
  std::vector<Suspect> suspects;  // sorted by train_index
  std::size_t differences = 0;    // generated inputs that passed the class filter
  bool no_differences = false;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> base_rate;       // polluted fraction of the whole training set
  std::optional<double> pool_base_rate;  // polluted fraction of the searched samples
};

/// Relabels round(fraction * n) of the n samples labeled `source` as
/// `target`, chosen uniformly with `rng_seed`. Returns one flag per sample
/// marking the relabeled ones.
std::vector<bool> pollute_labels(std::vector<std::size_t>& labels, std::size_t source,
                                 std::size_t target, double fraction, std::uint64_t rng_seed);

// Index and L1 distance of the sample in `data` closest to x, searching only
// `candidates` when given. Ties go to the lowest index.
std::pair<std::size_t, double> nearest_neighbor(const Dataset& data, const Tensor& x,
                                                std::span<const std::size_t> candidates = {});

/// Generates difference-inducing inputs between the two networks from
/// `seeds` (seeds they already disagree on count as found), maps each to its
/// nearest training sample (L1) and returns the deduplicated suspects. Identical networks, or no differences found, give
/// an empty report with `no_differences` set.
PollutionReport detect_pollution(const Network& clean, const Network& polluted,
                                 const Dataset& trainset, const Dataset& seeds,
                                 const GenerationConfig& cfg, const PollutionOptions& options);

/// Mean over records of the L1 distance to the record's seed. Throws
/// ConfigError on an empty list and ShapeError on a seed index out of range.
double diversity(std::span<const DifferenceRecord> records, const Dataset& seeds);

std::string retrain_report_json(const RetrainResult& result, std::size_t extra_count,
                                std::size_t epochs);
std::string pollution_report_json(const PollutionReport& report);

}  // namespace nncov
