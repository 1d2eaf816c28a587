#include "nncov/generator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "nncov/errors.hpp"
#include "nncov/objectives.hpp"

namespace nncov {

namespace {

using Clock = std::chrono::steady_clock;
using json = nlohmann::ordered_json;

std::vector<ActivationTrace> forward_all(std::span<const Network> nets, const Tensor& x) {
  std::vector<ActivationTrace> traces;
  traces.reserve(nets.size());
  for (const Network& net : nets) traces.push_back(forward(net, x));
  return traces;
}

std::vector<std::size_t> classes_of(const std::vector<ActivationTrace>& traces) {
  std::vector<std::size_t> classes;
  for (const ActivationTrace& t : traces) classes.push_back(argmax(t.final_probs));
  return classes;
}

void normalize_rms(Tensor& g) {
  double sq = 0.0;
  for (double v : g.data()) sq += v * v;
  const double rms = std::sqrt(sq / static_cast<double>(g.size()));
  if (rms > 0.0 && std::isfinite(rms)) {
    for (double& v : g.data()) v /= rms;
  }
}

// Trackers shared by all workers; the only mutable state crossing seeds.
class SharedCoverage {
 public:
  SharedCoverage(std::span<const Network> nets, const GenerationConfig& cfg) {
    for (const Network& net : nets) {
      trackers_.emplace_back(net, cfg.threshold, cfg.scale_outputs, cfg.include_dense);
    }
  }

  void update(std::span<const Network> nets, const std::vector<ActivationTrace>& traces) {
    std::lock_guard lock(mu_);
    for (std::size_t k = 0; k < nets.size(); ++k) trackers_[k].update(nets[k], traces[k]);
  }

  double min_ncov() const {
    std::lock_guard lock(mu_);
    double lo = 1.0;
    for (const CoverageTracker& t : trackers_) lo = std::min(lo, t.ncov());
    return lo;
  }

  // Keeps `current` while it is still uncovered and not activated by the
  // present input; otherwise draws a fresh inactive neuron (any neuron once
  // coverage is full).
  NeuronId target(std::size_t k, const Network& net, const ActivationTrace& trace,
                  const std::optional<NeuronId>& current, Rng& rng) const {
    std::lock_guard lock(mu_);
    const CoverageTracker& tracker = trackers_[k];
    if (current && !tracker.is_activated(*current) && !tracker.activates(net, trace, *current)) {
      return *current;
    }
    if (auto pick = tracker.select_inactive(rng)) return *pick;
    return tracker.select_any(rng);
  }

  std::vector<CoverageTracker> snapshot() const {
    std::lock_guard lock(mu_);
    return trackers_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<CoverageTracker> trackers_;
};

struct VisitResult {
  SeedOutcome outcome;
  std::optional<DifferenceRecord> record;
};

VisitResult visit_seed(std::span<const Network> nets, const Dataset& seeds, std::size_t seed_index,
                       std::size_t cycle, const GenerationConfig& cfg, SharedCoverage& coverage) {
  VisitResult result;
  result.outcome.seed_index = seed_index;
  result.outcome.cycle = cycle;

  Rng rng = derive_rng(cfg.rng_seed, seed_index, cycle);
  Tensor x = seeds.sample(seed_index);
  std::vector<ActivationTrace> traces = forward_all(nets, x);
  coverage.update(nets, traces);
  if (check_difference(classes_of(traces))) {
    result.outcome.preexisting = true;
    return result;
  }

  const std::size_t agreed_class = argmax(traces.front().final_probs);
  const std::size_t target_model = uniform_index(rng, nets.size());
  const JointConfig joint_cfg{cfg.lambda1, cfg.lambda2};
  const double step_size =
      cfg.constraint.is_image() ? cfg.step_size * cfg.intensity_scale : cfg.step_size;
  SeedState state(x);
  std::vector<std::optional<NeuronId>> current(nets.size());
  std::vector<NeuronId> targets(nets.size());

  for (std::size_t iter = 1; iter <= cfg.max_iters_per_seed; ++iter) {
    for (std::size_t k = 0; k < nets.size(); ++k) {
      targets[k] = coverage.target(k, nets[k], traces[k], current[k], rng);
      current[k] = targets[k];
    }
    ObjectiveValue objective = joint(nets, traces, target_model, agreed_class, targets, joint_cfg);
    if (cfg.normalize_gradient) normalize_rms(objective.gradient);
    const Tensor constrained = apply(cfg.constraint, objective.gradient, x, rng, state);
    x = step(cfg.constraint, x, constrained, step_size, state);
    traces = forward_all(nets, x);
    const auto classes = classes_of(traces);
    if (auto deviant = check_difference(classes)) {
      DifferenceRecord record;
      record.seed_index = seed_index;
      record.cycle = cycle;
      record.input = x;
      for (std::size_t k = 0; k < nets.size(); ++k) {
        record.predictions.push_back(
            {nets[k].model_id(), classes[k], traces[k].final_probs[classes[k]]});
      }
      record.iterations_used = iter;
      record.deviant_index = *deviant;
      record.deviant_model = nets[*deviant].model_id();
      record.target_index = target_model;
      record.constraint = cfg.constraint.to_string();
      record.region = state.region;
      coverage.update(nets, traces);
      result.outcome.iterations = iter;
      result.outcome.found = true;
      result.record = std::move(record);
      return result;
    }
  }
  result.outcome.iterations = cfg.max_iters_per_seed;
  return result;
}

std::string record_file_name(std::size_t index, const Tensor& input) {
  std::ostringstream name;
  const Shape& s = input.shape();
  const bool image = s.size() == 2 || (s.size() == 3 && s[0] == 1);
  name << "records/" << std::setw(4) << std::setfill('0') << index << (image ? ".pgm" : ".vec");
  return name.str();
}

}  // namespace

void GenerationConfig::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(lambda1) || !finite(lambda2) || !finite(step_size) || !finite(intensity_scale) ||
      std::isnan(threshold) || !finite(desired_coverage)) {
    throw ConfigError("generation config values must be finite");
  }
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("lambda1 and lambda2 must be >= 0");
  if (!(step_size > 0.0)) throw ConfigError("step must be > 0");
  if (desired_coverage < 0.0 || desired_coverage > 1.0) {
    throw ConfigError("coverage_target must lie in [0, 1]");
  }
  if (max_iters_per_seed < 1) throw ConfigError("max_iters must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

double GenerationStats::mean_iterations_to_difference() const {
  double total = 0.0;
  std::size_t n = 0;
  for (const SeedOutcome& o : outcomes) {
    if (!o.found) continue;
    total += static_cast<double>(o.iterations);
    ++n;
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

double GenerationStats::mean_iterations_censored(std::size_t timeout) const {
  double total = 0.0;
  std::size_t n = 0;
  for (const SeedOutcome& o : outcomes) {
    if (o.preexisting) continue;
    total += static_cast<double>(o.found ? o.iterations : timeout);
    ++n;
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

std::optional<std::size_t> check_difference(std::span<const std::size_t> classes) {
  if (classes.empty()) return std::nullopt;
  std::size_t reference = classes.front();
  std::size_t best_count = 0;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto count = static_cast<std::size_t>(std::count(classes.begin(), classes.end(), classes[i]));
    if (count > best_count) {
      best_count = count;
      reference = classes[i];
    }
  }
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] != reference) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> check_difference(std::span<const Network> nets, const Tensor& x) {
  std::vector<std::size_t> classes;
  for (const Network& net : nets) classes.push_back(predict(net, x).cls);
  return check_difference(classes);
}

std::vector<ModelPrediction> predictions_for(std::span<const Network> nets, const Tensor& x) {
  std::vector<ModelPrediction> out;
  for (const Network& net : nets) {
    const Prediction p = predict(net, x);
    out.push_back({net.model_id(), p.cls, p.confidence()});
  }
  return out;
}

GenerationResult generate(std::span<const Network> nets, const Dataset& seeds,
                          const GenerationConfig& cfg) {
  check_compatible(nets);
  cfg.validate();
  if (seeds.empty()) throw ConfigError("seed set is empty");
  if (seeds.sample_shape() != nets.front().input_shape()) {
    throw ConfigError("seed shape " + shape_string(seeds.sample_shape()) +
                      " does not match model input " + shape_string(nets.front().input_shape()));
  }
  const auto started = Clock::now();
  SharedCoverage coverage(nets, cfg);
  GenerationResult result;
  std::mutex result_mu;
  const std::size_t total_visits = cfg.max_cycles * seeds.size();
  std::atomic<std::size_t> next_visit{0};
  std::atomic<bool> reached{false};

  auto record_visit = [&](VisitResult visit) {
    std::lock_guard lock(result_mu);
    GenerationStats& stats = result.stats;
    ++stats.seeds_visited;
    if (visit.outcome.preexisting) {
      if (visit.outcome.cycle == 0) stats.preexisting_differences.push_back(visit.outcome.seed_index);
    } else if (visit.outcome.found) {
      if (!stats.first_difference_seconds) {
        stats.first_difference_seconds =
            std::chrono::duration<double>(Clock::now() - started).count();
        stats.first_difference_iterations = visit.outcome.iterations;
      }
    } else {
      ++stats.timeouts;
    }
    stats.outcomes.push_back(visit.outcome);
    if (visit.record) result.records.push_back(std::move(*visit.record));
  };

  auto worker = [&] {
    while (!reached.load()) {
      if (cfg.stop_at_coverage && coverage.min_ncov() >= cfg.desired_coverage) {
        reached = true;
        break;
      }
      const std::size_t visit = next_visit.fetch_add(1);
      if (visit >= total_visits) break;
      record_visit(visit_seed(nets, seeds, visit % seeds.size(), visit / seeds.size(), cfg, coverage));
    }
  };

  if (cfg.threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < cfg.threads; ++t) pool.emplace_back(worker);
  }
  if (!reached && coverage.min_ncov() >= cfg.desired_coverage) reached = true;

  auto by_visit = [](const auto& a, const auto& b) {
    return std::pair(a.cycle, a.seed_index) < std::pair(b.cycle, b.seed_index);
  };
  std::sort(result.records.begin(), result.records.end(), by_visit);
  std::sort(result.stats.outcomes.begin(), result.stats.outcomes.end(), by_visit);
  std::sort(result.stats.preexisting_differences.begin(), result.stats.preexisting_differences.end());

  result.trackers = coverage.snapshot();
  result.stats.records = result.records.size();
  result.stats.coverage_reached = reached;
  for (const CoverageTracker& t : result.trackers) result.stats.final_ncov.push_back(t.ncov());
  result.stats.seconds = std::chrono::duration<double>(Clock::now() - started).count();
  return result;
}

CoverageRunReport run_coverage_mode(std::span<const Network> nets, const Dataset& seeds,
                                    const GenerationConfig& cfg) {
  const GenerationResult result = generate(nets, seeds, cfg);
  CoverageRunReport report;
  report.seconds = result.stats.seconds;
  report.seeds_consumed = result.stats.seeds_visited;
  report.reached = result.stats.coverage_reached;
  report.final_min_ncov = *std::min_element(result.stats.final_ncov.begin(), result.stats.final_ncov.end());
  report.records = result.records.size();
  return report;
}

void write_generation_output(const std::filesystem::path& dir, const GenerationResult& result,
                             const GenerationConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "records", ec);
  if (ec) throw IoError("cannot create " + (dir / "records").string() + ": " + ec.message());

  std::ofstream manifest(dir / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.jsonl").string());
  for (std::size_t i = 0; i < result.records.size(); ++i) {
    const DifferenceRecord& r = result.records[i];
    const std::string file = record_file_name(i, r.input);
    if (file.ends_with(".pgm")) {
      write_pgm(dir / file, r.input);
    } else {
      std::ofstream vec(dir / file, std::ios::trunc);
      if (!vec) throw IoError("cannot write " + (dir / file).string());
      vec << std::setprecision(17);
      for (double v : r.input.data()) vec << v << '\n';
    }
    json line;
    line["file"] = file;
    line["seed_index"] = r.seed_index;
    line["cycle"] = r.cycle;
    line["deviant_model"] = r.deviant_model;
    json preds = json::array();
    for (const ModelPrediction& p : r.predictions) {
      preds.push_back({{"model", p.model_id}, {"class", p.cls}, {"confidence", p.confidence}});
    }
    line["predictions"] = std::move(preds);
    line["iterations"] = r.iterations_used;
    line["constraint"] = r.constraint;
    manifest << line.dump() << '\n';
  }
  if (!manifest) throw IoError("error writing manifest.jsonl");

  const GenerationStats& s = result.stats;
  json stats;
  stats["seeds_visited"] = s.seeds_visited;
  stats["records"] = s.records;
  stats["timeouts"] = s.timeouts;
  stats["preexisting_differences"] = s.preexisting_differences;
  stats["seconds"] = s.seconds;
  stats["first_difference_seconds"] =
      s.first_difference_seconds ? json(*s.first_difference_seconds) : json(nullptr);
  stats["first_difference_iterations"] =
      s.first_difference_iterations ? json(*s.first_difference_iterations) : json(nullptr);
  stats["mean_iterations_to_difference"] = s.mean_iterations_to_difference();
  stats["coverage_reached"] = s.coverage_reached;
  stats["final_ncov"] = s.final_ncov;
  json per_seed = json::array();
  for (const SeedOutcome& o : s.outcomes) {
    per_seed.push_back({{"seed_index", o.seed_index},
                        {"cycle", o.cycle},
                        {"iterations", o.iterations},
                        {"found", o.found},
                        {"preexisting", o.preexisting}});
  }
  stats["per_seed"] = std::move(per_seed);
  json config;
  config["lambda1"] = cfg.lambda1;
  config["lambda2"] = cfg.lambda2;
  config["step"] = cfg.step_size;
  config["threshold"] = cfg.threshold;
  config["coverage_target"] = cfg.desired_coverage;
  config["stop_at_coverage"] = cfg.stop_at_coverage;
  config["max_iters"] = cfg.max_iters_per_seed;
  config["max_cycles"] = cfg.max_cycles;
  config["constraint"] = cfg.constraint.to_string();
  config["rng_seed"] = cfg.rng_seed;
  config["scale_outputs"] = cfg.scale_outputs;
  stats["config"] = std::move(config);
  std::ofstream stats_out(dir / "stats.json", std::ios::trunc);
  if (!stats_out) throw IoError("cannot write " + (dir / "stats.json").string());
  stats_out << stats.dump(2) << '\n';

  std::ofstream report(dir / "coverage.txt", std::ios::trunc);
  if (!report) throw IoError("cannot write " + (dir / "coverage.txt").string());
  report << format_coverage_report(result.trackers);
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.jsonl");
  if (!in) throw IoError("cannot open " + (dir / "manifest.jsonl").string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      ManifestEntry e;
      e.file = j.at("file").get<std::string>();
      e.seed_index = j.at("seed_index").get<std::size_t>();
      e.deviant_model = j.at("deviant_model").get<std::string>();
      for (const json& p : j.at("predictions")) {
        e.predictions.push_back({p.at("model").get<std::string>(), p.at("class").get<std::size_t>(),
                                 p.at("confidence").get<double>()});
      }
      e.iterations = j.at("iterations").get<std::size_t>();
      e.constraint = j.at("constraint").get<std::string>();
      entries.push_back(std::move(e));
    } catch (const json::exception& err) {
      throw FormatError("manifest.jsonl line " + std::to_string(line_no) + ": " + err.what());
    }
  }
  return entries;
}

Tensor load_record_input(const std::filesystem::path& dir, const ManifestEntry& entry,
                         const Shape& shape) {
  const auto path = dir / entry.file;
  if (entry.file.ends_with(".pgm")) return read_pgm(path).reshaped(shape);
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<double> values;
  double v = 0.0;
  while (in >> v) values.push_back(v);
  return Tensor(shape, std::move(values));
}

}  // namespace nncov
