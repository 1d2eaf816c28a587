#include "nncov/coverage.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "nncov/errors.hpp"

namespace nncov {

namespace {

// Neuron values grouped by layer, in coverable_neurons() order. Scaling maps
// the whole layer output to [0, 1] before the per-channel mean is taken.
std::vector<double> layer_values(const Network& net, const ActivationTrace& trace, bool scale,
                                 bool include_dense) {
  std::vector<double> out;
  for (std::size_t layer = 0; layer < net.layers().size(); ++layer) {
    if (!net.is_coverable(layer)) continue;
    if (!include_dense && net.layers()[layer].kind == LayerKind::kDense) continue;
    const std::size_t first = out.size();
    for (std::size_t u = 0; u < net.neuron_count(layer); ++u) {
      out.push_back(neuron_value(net, trace, NeuronId{layer, u}));
    }
    if (!scale) continue;
    const auto source = trace.per_layer[net.neuron_source_layer(layer)].data();
    const auto [lo, hi] = std::minmax_element(source.begin(), source.end());
    const double min = *lo, max = *hi;
    for (std::size_t k = first; k < out.size(); ++k) {
      out[k] = max > min ? std::clamp((out[k] - min) / (max - min), 0.0, 1.0) : 0.0;
    }
  }
  return out;
}

}  // namespace

std::vector<NeuronId> coverable_neurons(const Network& net, bool include_dense) {
  std::vector<NeuronId> ids;
  for (std::size_t layer = 0; layer < net.layers().size(); ++layer) {
    if (!net.is_coverable(layer)) continue;
    if (!include_dense && net.layers()[layer].kind == LayerKind::kDense) continue;
    for (std::size_t u = 0; u < net.neuron_count(layer); ++u) ids.push_back({layer, u});
  }
  return ids;
}

std::map<NeuronId, double> neuron_outputs(const Network& net, const ActivationTrace& trace,
                                          bool scale, bool include_dense) {
  const auto ids = coverable_neurons(net, include_dense);
  const auto values = layer_values(net, trace, scale, include_dense);
  std::map<NeuronId, double> out;
  for (std::size_t k = 0; k < ids.size(); ++k) out.emplace(ids[k], values[k]);
  return out;
}

CoverageTracker::CoverageTracker(const Network& net, double threshold, bool scale_per_layer,
                                 bool include_dense)
    : model_id_(net.model_id()),
      threshold_(threshold),
      scale_(scale_per_layer),
      include_dense_(include_dense),
      neurons_(coverable_neurons(net, include_dense)),
      activated_(neurons_.size(), false) {}

std::vector<double> CoverageTracker::values(const Network& net, const ActivationTrace& trace) const {
  if (net.model_id() != model_id_) {
    throw Error("coverage tracker for model '" + model_id_ + "' given a trace of '" +
                net.model_id() + "'");
  }
  auto v = layer_values(net, trace, scale_, include_dense_);
  if (v.size() != neurons_.size()) {
    throw Error("coverage tracker for model '" + model_id_ + "' given a different architecture");
  }
  return v;
}

std::size_t CoverageTracker::update(const Network& net, const ActivationTrace& trace) {
  const auto v = values(net, trace);
  std::size_t added = 0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (!activated_[k] && v[k] > threshold_) {
      activated_[k] = true;
      ++added;
    }
  }
  activated_count_ += added;
  return added;
}

bool CoverageTracker::activates(const Network& net, const ActivationTrace& trace,
                                const NeuronId& id) const {
  if (!scale_) return neuron_value(net, trace, id) > threshold_;
  const auto v = values(net, trace);
  const auto it = std::lower_bound(neurons_.begin(), neurons_.end(), id);
  if (it == neurons_.end() || *it != id) return false;
  return v[static_cast<std::size_t>(it - neurons_.begin())] > threshold_;
}

double CoverageTracker::ncov() const {
  if (neurons_.empty()) throw Error("model '" + model_id_ + "' has no coverable neurons");
  return static_cast<double>(activated_count_) / static_cast<double>(neurons_.size());
}

bool CoverageTracker::is_activated(const NeuronId& id) const {
  const auto it = std::lower_bound(neurons_.begin(), neurons_.end(), id);
  return it != neurons_.end() && *it == id && activated_[static_cast<std::size_t>(it - neurons_.begin())];
}

std::vector<NeuronId> CoverageTracker::activated() const {
  std::vector<NeuronId> out;
  for (std::size_t k = 0; k < neurons_.size(); ++k) {
    if (activated_[k]) out.push_back(neurons_[k]);
  }
  return out;
}

std::optional<NeuronId> CoverageTracker::select_inactive(Rng& rng) const {
  const std::size_t inactive = neurons_.size() - activated_count_;
  if (inactive == 0) return std::nullopt;
  std::size_t pick = uniform_index(rng, inactive);
  for (std::size_t k = 0; k < neurons_.size(); ++k) {
    if (activated_[k]) continue;
    if (pick-- == 0) return neurons_[k];
  }
  return std::nullopt;
}

NeuronId CoverageTracker::select_any(Rng& rng) const {
  if (neurons_.empty()) throw Error("model '" + model_id_ + "' has no coverable neurons");
  return neurons_[uniform_index(rng, neurons_.size())];
}

OverlapCounts overlap(const Network& net, const Tensor& input_a, const Tensor& input_b,
                      double threshold, bool scale) {
  const auto a = layer_values(net, forward(net, input_a), scale, true);
  const auto b = layer_values(net, forward(net, input_b), scale, true);
  OverlapCounts counts;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const bool on_a = a[k] > threshold;
    const bool on_b = b[k] > threshold;
    counts.activated_a += on_a;
    counts.activated_b += on_b;
    counts.common += on_a && on_b;
  }
  return counts;
}

std::string format_coverage_report(const std::vector<CoverageTracker>& trackers) {
  std::ostringstream out;
  for (const CoverageTracker& t : trackers) {
    std::ostringstream ratio;
    ratio << std::fixed << std::setprecision(4) << t.ncov();
    out << t.model_id() << " t=" << t.threshold() << " activated=" << t.activated_count()
        << " total=" << t.total() << " ncov=" << ratio.str() << '\n';
  }
  return out.str();
}

}  // namespace nncov
