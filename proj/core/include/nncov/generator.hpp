#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nncov/constraints.hpp"
#include "nncov/coverage.hpp"
#include "nncov/dataset.hpp"
#include "nncov/network.hpp"

namespace nncov {

/// Knobs of the coverage-guided difference search. Defaults are the MNIST
/// settings: lambda1 = 1, lambda2 = 0.1, s = 10, t = 0.
struct GenerationConfig {
  double lambda1 = 1.0;
  double lambda2 = 0.1;
  // Ascent step s. For image inputs it is measured in 8-bit intensity levels
  // and multiplied by `intensity_scale` before it touches [0, 1] pixels.
  double step_size = 10.0;
  double intensity_scale = 1.0 / 255.0;
  double threshold = 0.0;
  double desired_coverage = 1.0;
  // When false every seed is visited max_cycles times regardless of coverage.
  bool stop_at_coverage = true;
  std::size_t max_iters_per_seed = 1000;
  std::size_t max_cycles = 10;
  ConstraintSpec constraint = ConstraintSpec::lighting();
  std::uint64_t rng_seed = 0;
  bool scale_outputs = false;
  bool include_dense = true;
  // Divide the joint gradient by its RMS before the constraint is applied.
  bool normalize_gradient = true;
  std::size_t threads = 1;

  void validate() const;
};

struct ModelPrediction {
  std::string model_id;
  std::size_t cls = 0;
  double confidence = 0.0;

  friend bool operator==(const ModelPrediction&, const ModelPrediction&) = default;
};

struct DifferenceRecord {
  std::size_t seed_index = 0;
  std::size_t cycle = 0;
  Tensor input;
  std::vector<ModelPrediction> predictions;
  std::size_t iterations_used = 0;
  std::size_t deviant_index = 0;
  std::string deviant_model;
  std::size_t target_index = 0;  // model whose class probability was pushed down
  std::string constraint;
  std::vector<std::uint8_t> region;  // pixels a rect/patch constraint opened
};

struct SeedOutcome {
  std::size_t seed_index = 0;
  std::size_t cycle = 0;
  std::size_t iterations = 0;
  bool found = false;
  bool preexisting = false;
};

struct GenerationStats {
  std::size_t seeds_visited = 0;
  std::size_t records = 0;
  std::size_t timeouts = 0;
  std::vector<std::size_t> preexisting_differences;  // seed indices
  std::vector<SeedOutcome> outcomes;
  double seconds = 0.0;
  std::optional<double> first_difference_seconds;
  std::optional<std::size_t> first_difference_iterations;
  bool coverage_reached = false;
  std::vector<double> final_ncov;

  double mean_iterations_to_difference() const;  // over seeds that found one
  double mean_iterations_censored(std::size_t timeout) const;  // timeouts count as `timeout`
};

struct GenerationResult {
  std::vector<DifferenceRecord> records;
  std::vector<CoverageTracker> trackers;
  GenerationStats stats;
};

/// Index of a network whose predicted class differs from the most common
/// class (ties: the class seen first), or nullopt if all networks agree.
std::optional<std::size_t> check_difference(std::span<const Network> nets, const Tensor& x);
std::optional<std::size_t> check_difference(std::span<const std::size_t> classes);

/// Runs the coverage-guided ascent over `seeds` (labels are ignored).
///
/// Each seed visit picks one network to push away from the agreed class,
/// then repeats: choose an uncovered target neuron per network, take the
/// joint-objective gradient, constrain it, step and clamp, until the
/// networks disagree or max_iters_per_seed is reached. Seeds the networks
/// already disagree on are logged and skipped. Stops once every model's
/// coverage reaches desired_coverage or after max_cycles passes.
///
/// With threads == 1 the output is a deterministic function of the config.
GenerationResult generate(std::span<const Network> nets, const Dataset& seeds,
                          const GenerationConfig& cfg);

struct CoverageRunReport {
  double seconds = 0.0;
  std::size_t seeds_consumed = 0;
  bool reached = false;  // false: partial report, target not met within max_cycles
  double final_min_ncov = 0.0;
  std::size_t records = 0;
};

CoverageRunReport run_coverage_mode(std::span<const Network> nets, const Dataset& seeds,
                                    const GenerationConfig& cfg);

// Outputs of every network on x in manifest form.
std::vector<ModelPrediction> predictions_for(std::span<const Network> nets, const Tensor& x);

/// Writes records/NNNN.pgm (or .vec for non-image inputs), manifest.jsonl,
/// stats.json and coverage.txt into `dir`.
void write_generation_output(const std::filesystem::path& dir, const GenerationResult& result,
                             const GenerationConfig& cfg);

struct ManifestEntry {
  std::string file;
  std::size_t seed_index = 0;
  std::string deviant_model;
  std::vector<ModelPrediction> predictions;
  std::size_t iterations = 0;
  std::string constraint;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);
// Loads a record file written by write_generation_output, reshaped to `shape`.
Tensor load_record_input(const std::filesystem::path& dir, const ManifestEntry& entry,
                         const Shape& shape);

}  // namespace nncov
