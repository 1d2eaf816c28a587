#include "nncov/applications.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "json.hpp"
#include "nncov/errors.hpp"
#include "nncov/rng.hpp"

namespace nncov {

namespace {

using json = nlohmann::ordered_json;

double l1(std::span<const double> a, std::span<const double> b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
  return total;
}

}  // namespace

std::size_t majority_label(std::span<const ModelPrediction> predictions) {
  if (predictions.empty()) throw ConfigError("majority vote needs at least one prediction");
  std::map<std::size_t, std::pair<std::size_t, double>> tally;
  for (const ModelPrediction& p : predictions) {
    auto& [votes, confidence] = tally[p.cls];
    ++votes;
    confidence += p.confidence;
  }
  auto best = tally.begin();
  for (auto it = std::next(tally.begin()); it != tally.end(); ++it) {
    const auto& [votes, confidence] = it->second;
    if (votes > best->second.first ||
        (votes == best->second.first && confidence > best->second.second)) {
      best = it;
    }
  }
  return best->first;
}

std::size_t majority_label(std::span<const Network> nets, const Tensor& x) {
  const auto predictions = predictions_for(nets, x);
  return majority_label(predictions);
}

Dataset majority_labeled(std::span<const DifferenceRecord> records) {
  std::vector<Tensor> inputs;
  std::vector<std::size_t> labels;
  for (const DifferenceRecord& r : records) {
    inputs.push_back(r.input);
    labels.push_back(majority_label(r.predictions));
  }
  return Dataset::from_samples(inputs, std::move(labels));
}

RetrainResult augment_retrain(const Network& net, const TrainConfig& cfg, const Dataset& trainset,
                              const Dataset& heldout, const Dataset& extra, std::size_t epochs) {
  if (extra.empty()) throw ConfigError("retraining needs at least one extra sample");
  for (std::size_t label : extra.labels()) {
    if (label >= net.num_classes()) {
      throw ShapeError("extra label " + std::to_string(label) + " out of range");
    }
  }
  RetrainResult out{net};
  out.heldout_before = accuracy(net, heldout);
  out.pool_before = accuracy(net, extra);
  if (epochs > 0) {
    TrainConfig run = cfg;
    run.epochs = epochs;
    run.sample_limit.reset();
    // Fresh shuffle streams, past the ones the original training used.
    out.net = continue_training(net, run, trainset.concat(extra), cfg.epochs);
  }
  out.heldout_after = accuracy(out.net, heldout);
  out.pool_after = accuracy(out.net, extra);
  return out;
}

std::vector<bool> pollute_labels(std::vector<std::size_t>& labels, std::size_t source,
                                 std::size_t target, double fraction, std::uint64_t rng_seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("pollution fraction must lie in [0, 1]");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == source) candidates.push_back(i);
  }
  Rng rng = derive_rng(rng_seed, source, target);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(candidates.size())));
  std::vector<bool> flags(labels.size(), false);
  for (std::size_t k = 0; k < count; ++k) {
    labels[candidates[k]] = target;
    flags[candidates[k]] = true;
  }
  return flags;
}

std::pair<std::size_t, double> nearest_neighbor(const Dataset& data, const Tensor& x,
                                                std::span<const std::size_t> candidates) {
  if (x.size() != data.sample_size()) throw ShapeError("nearest_neighbor: input size mismatch");
  std::pair<std::size_t, double> best{0, std::numeric_limits<double>::infinity()};
  auto consider = [&](std::size_t i) {
    const double d = l1(data.sample_data(i), x.data());
    if (d < best.second) best = {i, d};
  };
  if (candidates.empty()) {
    if (data.empty()) throw ConfigError("nearest_neighbor: empty data");
    for (std::size_t i = 0; i < data.size(); ++i) consider(i);
  } else {
    std::vector<std::size_t> sorted(candidates.begin(), candidates.end());
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i : sorted) consider(i);
  }
  return best;
}

PollutionReport detect_pollution(const Network& clean, const Network& polluted,
                                 const Dataset& trainset, const Dataset& seeds,
                                 const GenerationConfig& cfg, const PollutionOptions& options) {
  if (clean.input_shape() != polluted.input_shape() ||
      clean.input_shape() != trainset.sample_shape()) {
    throw ShapeError("detect_pollution: networks and training set disagree on the input shape");
  }
  if (!options.polluted.empty() && options.polluted.size() != trainset.size()) {
    throw ConfigError("pollution flags must cover every training sample");
  }

  PollutionReport report;
  if (!options.polluted.empty()) {
    const auto count = std::count(options.polluted.begin(), options.polluted.end(), true);
    report.base_rate = static_cast<double>(count) / static_cast<double>(trainset.size());
  }

  std::vector<DifferenceRecord> records;
  const bool same = clean.with_model_id(polluted.model_id()).bit_equal(polluted);
  if (!same) {
    const std::vector<Network> nets{clean, polluted};
    GenerationResult result = generate(nets, seeds, cfg);
    records = std::move(result.records);
    // Seeds the networks already disagree on are difference-inducing too.
    for (std::size_t index : result.stats.preexisting_differences) {
      DifferenceRecord r;
      r.seed_index = index;
      r.input = seeds.sample(index);
      r.predictions = predictions_for(nets, r.input);
      records.push_back(std::move(r));
    }
  }

  std::map<std::size_t, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < trainset.size(); ++i) by_label[trainset.label(i)].push_back(i);

  std::map<std::size_t, double> found;
  std::set<std::size_t> searched;
  for (const DifferenceRecord& r : records) {
    const std::size_t clean_cls = r.predictions[0].cls;
    const std::size_t polluted_cls = r.predictions[1].cls;
    if (options.source_class && clean_cls != *options.source_class) continue;
    if (options.target_class && polluted_cls != *options.target_class) continue;
    std::span<const std::size_t> pool;
    if (options.match_polluted_label) {
      const auto it = by_label.find(polluted_cls);
      if (it == by_label.end()) continue;
      pool = it->second;
    }
    ++report.differences;
    const auto [index, distance] = nearest_neighbor(trainset, r.input, pool);
    if (pool.empty()) {
      for (std::size_t i = 0; i < trainset.size(); ++i) searched.insert(i);
    } else {
      searched.insert(pool.begin(), pool.end());
    }
    auto [it, inserted] = found.emplace(index, distance);
    if (!inserted) it->second = std::min(it->second, distance);
  }

  report.no_differences = report.differences == 0;
  for (const auto& [index, distance] : found) report.suspects.push_back({index, distance});

  if (!options.polluted.empty()) {
    const auto total_polluted = std::count(options.polluted.begin(), options.polluted.end(), true);
    std::size_t hits = 0;
    for (const Suspect& s : report.suspects) hits += options.polluted[s.train_index];
    if (!report.suspects.empty()) {
      report.precision = static_cast<double>(hits) / static_cast<double>(report.suspects.size());
    }
    if (total_polluted > 0) {
      report.recall = static_cast<double>(hits) / static_cast<double>(total_polluted);
    }
    if (!searched.empty()) {
      std::size_t in_pool = 0;
      for (std::size_t i : searched) in_pool += options.polluted[i];
      report.pool_base_rate = static_cast<double>(in_pool) / static_cast<double>(searched.size());
    }
  }
  return report;
}

double diversity(std::span<const DifferenceRecord> records, const Dataset& seeds) {
  if (records.empty()) throw ConfigError("diversity of an empty record list");
  double total = 0.0;
  for (const DifferenceRecord& r : records) {
    if (r.seed_index >= seeds.size()) {
      throw ShapeError("record seed index " + std::to_string(r.seed_index) + " out of range");
    }
    if (r.input.size() != seeds.sample_size()) throw ShapeError("record and seed sizes differ");
    total += l1(r.input.data(), seeds.sample_data(r.seed_index));
  }
  return total / static_cast<double>(records.size());
}

std::string retrain_report_json(const RetrainResult& result, std::size_t extra_count,
                                std::size_t epochs) {
  json j;
  j["extra_samples"] = extra_count;
  j["epochs"] = epochs;
  j["heldout_accuracy_before"] = result.heldout_before;
  j["heldout_accuracy_after"] = result.heldout_after;
  j["heldout_delta"] = result.heldout_after - result.heldout_before;
  j["pool_accuracy_before"] = result.pool_before;
  j["pool_accuracy_after"] = result.pool_after;
  j["pool_delta"] = result.pool_after - result.pool_before;
  return j.dump(2);
}

std::string pollution_report_json(const PollutionReport& report) {
  json j;
  j["differences"] = report.differences;
  j["no_differences"] = report.no_differences;
  json suspects = json::array();
  for (const Suspect& s : report.suspects) {
    suspects.push_back({{"index", s.train_index}, {"distance", s.distance}});
  }
  j["suspects"] = std::move(suspects);
  auto put = [&](const char* key, const std::optional<double>& v) {
    j[key] = v ? json(*v) : json(nullptr);
  };
  put("precision", report.precision);
  put("recall", report.recall);
  put("base_rate", report.base_rate);
  put("pool_base_rate", report.pool_base_rate);
  return j.dump(2);
}

}  // namespace nncov
