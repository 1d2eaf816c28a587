#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nncov/network.hpp"
#include "nncov/rng.hpp"

namespace nncov {

// Dense units and Conv2D channels, in layer order. With include_dense=false
// only Conv2D channels count.
std::vector<NeuronId> coverable_neurons(const Network& net, bool include_dense = true);

/// Output of every coverable neuron for one trace. With `scale`, each
/// layer's full output is min-max scaled to [0, 1] per input before Conv2D
/// channels are averaged; a constant layer scales to all zeros.
std::map<NeuronId, double> neuron_outputs(const Network& net, const ActivationTrace& trace,
                                          bool scale, bool include_dense = true);

/// Tracks which neurons of one model have produced an output above the
/// threshold for at least one input seen so far (union semantics).
///
/// Not synchronized: callers sharing a tracker across threads must
/// serialize update().
class CoverageTracker {
 public:
  CoverageTracker(const Network& net, double threshold, bool scale_per_layer,
                  bool include_dense = true);

  const std::string& model_id() const { return model_id_; }
  double threshold() const { return threshold_; }
  bool scale_per_layer() const { return scale_; }
  bool include_dense() const { return include_dense_; }

  // Marks every neuron whose output exceeds the threshold; returns the number
  // newly activated. Throws Error if the trace's network is a different model.
  std::size_t update(const Network& net, const ActivationTrace& trace);

  // Ratio of activated to total neurons. Throws Error when total is zero.
  double ncov() const;
  std::size_t activated_count() const { return activated_count_; }
  std::size_t total() const { return neurons_.size(); }
  bool is_activated(const NeuronId& id) const;
  const std::vector<NeuronId>& neurons() const { return neurons_; }
  std::vector<NeuronId> activated() const;

  // Whether `id` is above the threshold on this trace, under the tracker's
  // scaling settings. Does not modify the tracker.
  bool activates(const Network& net, const ActivationTrace& trace, const NeuronId& id) const;

  // Uniform over the inactive neurons; nullopt means everything is covered.
  std::optional<NeuronId> select_inactive(Rng& rng) const;
  // Uniform over all neurons; used once coverage is full.
  NeuronId select_any(Rng& rng) const;

 private:
  std::vector<double> values(const Network& net, const ActivationTrace& trace) const;

  std::string model_id_;
  double threshold_;
  bool scale_;
  bool include_dense_;
  std::vector<NeuronId> neurons_;
  std::vector<bool> activated_;
  std::size_t activated_count_ = 0;
};

struct OverlapCounts {
  std::size_t activated_a = 0;
  std::size_t activated_b = 0;
  std::size_t common = 0;
};

// Neurons above threshold t for each input, and for both.
OverlapCounts overlap(const Network& net, const Tensor& input_a, const Tensor& input_b,
                      double threshold, bool scale = false);

/// Line-oriented coverage report, one record per tracker:
///   <model_id> t=<t> activated=<n> total=<m> ncov=<ratio, 4 decimals>
std::string format_coverage_report(const std::vector<CoverageTracker>& trackers);

}  // namespace nncov
