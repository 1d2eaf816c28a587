#include "nncov/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "nncov/autodiff.hpp"
#include "nncov/errors.hpp"
#include "nncov/rng.hpp"

namespace nncov {

namespace {

constexpr std::uint64_t kInitStream = 0x1A17;
constexpr std::uint64_t kShuffleStream = 0x5EED;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::size_t to_count(const std::string& text, std::string_view context) {
  std::size_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size() || v == 0) {
    throw ConfigError("architecture: bad number '" + text + "' in '" + std::string(context) + "'");
  }
  return v;
}

LayerSpec conv_template(std::size_t out, std::size_t k) {
  return LayerSpec::conv2d(0, out, k, k, 1, "", "");
}

LayerSpec dense_template(std::size_t out) { return LayerSpec::dense(0, out, "", ""); }

Dataset limited(const TrainConfig& cfg, const Dataset& data) {
  if (cfg.sample_limit && *cfg.sample_limit < data.size()) return data.slice(0, *cfg.sample_limit);
  return data;
}

void check_labels(const Network& net, const Dataset& data) {
  for (std::size_t label : data.labels()) {
    if (label >= net.num_classes()) {
      throw ShapeError("label " + std::to_string(label) + " out of range for " +
                       std::to_string(net.num_classes()) + " classes");
    }
  }
}

Network run_sgd(Network net, const TrainConfig& cfg, const Dataset& data, std::size_t epoch_offset,
                std::size_t epochs, TrainReport* report,
                const std::function<void(std::size_t, const Network&)>& on_epoch = {}) {
  std::vector<std::size_t> order(data.size());
  for (std::size_t e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = derive_rng(cfg.rng_seed, kShuffleStream, epoch_offset + e);
    std::shuffle(order.begin(), order.end(), rng);
    double running = 0.0;
    std::size_t batches = 0;
    // A short tail batch is folded into the last full one.
    const std::size_t full = std::max<std::size_t>(1, order.size() / cfg.batch_size);
    for (std::size_t b = 0; b < full; ++b) {
      const std::size_t start = b * cfg.batch_size;
      const std::size_t end = b + 1 == full ? order.size() : start + cfg.batch_size;
      const ParamGradients g =
          param_gradients(net, data, std::span(order).subspan(start, end - start));
      auto params = net.params();
      for (auto& [name, tensor] : params) tensor.add_scaled(g.grads.at(name), -cfg.learning_rate);
      net = net.with_params(std::move(params));
      running += g.loss;
      ++batches;
    }
    if (report) report->epoch_loss.push_back(running / static_cast<double>(batches));
    if (on_epoch) on_epoch(e + 1, net);
  }
  return net;
}

}  // namespace

Architecture Architecture::lenet1() {
  return {{conv_template(4, 5), LayerSpec::relu(), LayerSpec::max_pool(2, 2), conv_template(12, 5),
           LayerSpec::relu(), LayerSpec::max_pool(2, 2), LayerSpec::flatten(), dense_template(10),
           LayerSpec::softmax()}};
}

Architecture Architecture::lenet4() {
  return {{conv_template(6, 5), LayerSpec::relu(), LayerSpec::max_pool(2, 2), conv_template(16, 5),
           LayerSpec::relu(), LayerSpec::max_pool(2, 2), LayerSpec::flatten(), dense_template(84),
           LayerSpec::relu(), dense_template(10), LayerSpec::softmax()}};
}

Architecture Architecture::lenet5() {
  return {{conv_template(6, 5), LayerSpec::relu(), LayerSpec::max_pool(2, 2), conv_template(16, 5),
           LayerSpec::relu(), LayerSpec::max_pool(2, 2), LayerSpec::flatten(), dense_template(120),
           LayerSpec::relu(), dense_template(84), LayerSpec::relu(), dense_template(10),
           LayerSpec::softmax()}};
}

Architecture Architecture::mlp(const std::vector<std::size_t>& hidden, std::size_t classes) {
  Architecture a;
  a.layers.push_back(LayerSpec::flatten());
  for (std::size_t h : hidden) {
    a.layers.push_back(dense_template(h));
    a.layers.push_back(LayerSpec::relu());
  }
  a.layers.push_back(dense_template(classes));
  a.layers.push_back(LayerSpec::softmax());
  return a;
}

Architecture Architecture::parse(std::string_view text) {
  const std::string whole = trim(text);
  if (whole == "lenet1") return lenet1();
  if (whole == "lenet4") return lenet4();
  if (whole == "lenet5") return lenet5();
  if (whole.rfind("mlp:", 0) == 0) {
    std::vector<std::size_t> hidden;
    for (const std::string& part : split(std::string_view(whole).substr(4), ':')) {
      hidden.push_back(to_count(part, whole));
    }
    return mlp(hidden);
  }
  Architecture a;
  for (const std::string& item : split(whole, ',')) {
    const auto fields = split(item, ':');
    const std::string& kind = fields[0];
    if (kind == "relu" && fields.size() == 1) {
      a.layers.push_back(LayerSpec::relu());
    } else if (kind == "flatten" && fields.size() == 1) {
      a.layers.push_back(LayerSpec::flatten());
    } else if (kind == "softmax" && fields.size() == 1) {
      a.layers.push_back(LayerSpec::softmax());
    } else if (kind == "dense" && fields.size() == 2) {
      a.layers.push_back(dense_template(to_count(fields[1], item)));
    } else if (kind == "maxpool" && (fields.size() == 2 || fields.size() == 3)) {
      const std::size_t window = to_count(fields[1], item);
      a.layers.push_back(
          LayerSpec::max_pool(window, fields.size() == 3 ? to_count(fields[2], item) : window));
    } else if (kind == "conv" && (fields.size() == 3 || fields.size() == 4)) {
      const auto x = fields[2].find('x');
      if (x == std::string::npos) throw ConfigError("architecture: expected KHxKW in '" + item + "'");
      LayerSpec spec = conv_template(to_count(fields[1], item), 1);
      spec.kernel_h = to_count(fields[2].substr(0, x), item);
      spec.kernel_w = to_count(fields[2].substr(x + 1), item);
      spec.stride = fields.size() == 4 ? to_count(fields[3], item) : 1;
      a.layers.push_back(spec);
    } else {
      throw ConfigError("architecture: cannot parse layer '" + item + "'");
    }
  }
  if (a.layers.empty()) throw ConfigError("architecture is empty");
  return a;
}

std::vector<LayerSpec> Architecture::build_layers(const Shape& input_shape) const {
  std::vector<LayerSpec> out;
  Shape current = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    LayerSpec spec = layers[i];
    const std::string prefix = "l" + std::to_string(i);
    if (spec.kind == LayerKind::kDense) {
      if (current.size() != 1) throw ShapeError("architecture: dense layer " + std::to_string(i) + " needs a flatten before it");
      spec.in_units = current[0];
      spec.weight_name = prefix + ".w";
      spec.bias_name = prefix + ".b";
    } else if (spec.kind == LayerKind::kConv2D) {
      if (current.size() != 3) throw ShapeError("architecture: conv layer " + std::to_string(i) + " needs a C x H x W input");
      spec.in_channels = current[0];
      spec.weight_name = prefix + ".w";
      spec.bias_name = prefix + ".b";
    }
    out.push_back(spec);
    // Shape propagation reuses the network's own validation.
    std::map<std::string, Tensor> params;
    for (const LayerSpec& s : out) {
      if (!s.is_parametric()) continue;
      params.emplace(s.weight_name, Tensor(s.weight_shape()));
      params.emplace(s.bias_name, Tensor(s.bias_shape()));
    }
    if (spec.kind == LayerKind::kSoftmax) {
      if (i + 1 != layers.size()) throw ShapeError("architecture: softmax must be the final layer");
      continue;
    }
    std::vector<LayerSpec> probe = out;
    probe.push_back(LayerSpec::flatten());
    current = Network("probe", input_shape, probe, std::move(params)).output_shape(out.size() - 1);
  }
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be a positive finite number");
  }
  if (sample_limit && *sample_limit == 0) throw ConfigError("sample_limit must be >= 1");
  if (architecture.layers.empty()) throw ConfigError("architecture is empty");
}

Network initialize(const TrainConfig& cfg, const Shape& input_shape) {
  std::vector<LayerSpec> layers = cfg.architecture.build_layers(input_shape);
  Rng rng = derive_rng(cfg.rng_seed, kInitStream);
  std::map<std::string, Tensor> params;
  for (const LayerSpec& spec : layers) {
    if (!spec.is_parametric()) continue;
    std::size_t fan_in = 0, fan_out = 0;
    if (spec.kind == LayerKind::kDense) {
      fan_in = spec.in_units;
      fan_out = spec.out_units;
    } else {
      fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w;
      fan_out = spec.out_channels * spec.kernel_h * spec.kernel_w;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor w(spec.weight_shape());
    for (double& v : w.data()) v = dist(rng);
    params.emplace(spec.weight_name, std::move(w));
    params.emplace(spec.bias_name, Tensor(spec.bias_shape()));
  }
  return Network(cfg.model_id, input_shape, std::move(layers), std::move(params));
}

Network continue_training(const Network& start, const TrainConfig& cfg, const Dataset& data,
                          std::size_t epoch_offset, TrainReport* report) {
  if (cfg.batch_size < 1 || !(cfg.learning_rate > 0.0)) {
    throw ConfigError("batch_size and learning_rate must be positive");
  }
  const Dataset used = limited(cfg, data);
  if (used.empty()) throw ConfigError("training data is empty");
  check_labels(start, used);
  if (report) report->initial_loss = cross_entropy(start, used);
  Network net = run_sgd(start, cfg, used, epoch_offset, cfg.epochs, report);
  if (report) report->final_loss = cross_entropy(net, used);
  return net;
}

Network train(const TrainConfig& cfg, const Dataset& data, TrainReport* report) {
  cfg.validate();
  if (data.empty()) throw ConfigError("training data is empty");
  const Network start = initialize(cfg, data.sample_shape());
  return continue_training(start, cfg, data, 0, report);
}

std::vector<Network> train_snapshots(const TrainConfig& cfg, const Dataset& data,
                                     const std::vector<std::size_t>& epoch_counts) {
  if (epoch_counts.empty()) return {};
  TrainConfig longest = cfg;
  longest.epochs = *std::max_element(epoch_counts.begin(), epoch_counts.end());
  longest.validate();
  const Dataset used = limited(cfg, data);
  if (used.empty()) throw ConfigError("training data is empty");
  const Network start = initialize(cfg, used.sample_shape());
  check_labels(start, used);
  std::map<std::size_t, Network> kept;
  run_sgd(start, longest, used, 0, longest.epochs, nullptr,
          [&](std::size_t epoch, const Network& net) {
            if (std::find(epoch_counts.begin(), epoch_counts.end(), epoch) != epoch_counts.end()) {
              kept.emplace(epoch, net);
            }
          });
  std::vector<Network> out;
  for (std::size_t e : epoch_counts) {
    if (e == 0) throw ConfigError("snapshot epoch count must be >= 1");
    out.push_back(kept.at(e));
  }
  return out;
}

VariantAxis parse_variant_axis(std::string_view text) {
  if (text == "samples") return VariantAxis::kSamples;
  if (text == "units") return VariantAxis::kUnits;
  if (text == "epochs") return VariantAxis::kEpochs;
  throw ConfigError("unknown variant axis '" + std::string(text) + "'");
}

std::vector<Network> make_variants(const TrainConfig& base, const Dataset& data, VariantAxis axis,
                                   const std::vector<std::size_t>& deltas) {
  base.validate();
  std::vector<Network> out;
  auto id_for = [&](const char* axis_name, std::size_t delta) {
    return base.model_id + "+" + axis_name + std::to_string(delta);
  };
  switch (axis) {
    case VariantAxis::kEpochs: {
      std::vector<std::size_t> counts;
      for (std::size_t d : deltas) counts.push_back(base.epochs + d);
      auto nets = train_snapshots(base, data, counts);
      for (std::size_t i = 0; i < nets.size(); ++i) {
        out.push_back(nets[i].with_model_id(id_for("epochs", deltas[i])));
      }
      return out;
    }
    case VariantAxis::kSamples: {
      const std::size_t available = base.sample_limit ? std::min(*base.sample_limit, data.size()) : data.size();
      for (std::size_t d : deltas) {
        if (d >= available) {
          throw ConfigError("cannot remove " + std::to_string(d) + " of " +
                            std::to_string(available) + " training samples");
        }
        TrainConfig cfg = base;
        cfg.sample_limit = available - d;
        cfg.model_id = id_for("samples", d);
        out.push_back(train(cfg, data));
      }
      return out;
    }
    case VariantAxis::kUnits: {
      std::vector<std::size_t> parametric;
      for (std::size_t i = 0; i < base.architecture.layers.size(); ++i) {
        if (base.architecture.layers[i].is_parametric()) parametric.push_back(i);
      }
      for (std::size_t d : deltas) {
        TrainConfig cfg = base;
        cfg.model_id = id_for("units", d);
        // Every parametric layer except the output layer is hidden.
        for (std::size_t k = 0; k + 1 < parametric.size(); ++k) {
          LayerSpec& spec = cfg.architecture.layers[parametric[k]];
          std::size_t& units = spec.kind == LayerKind::kDense ? spec.out_units : spec.out_channels;
          if (d >= units) {
            throw ConfigError("cannot remove " + std::to_string(d) + " units from a layer with " +
                              std::to_string(units));
          }
          units -= d;
        }
        out.push_back(train(cfg, data));
      }
      return out;
    }
  }
  return out;
}

double accuracy(const Network& net, const Dataset& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    correct += predict(net, data.sample(i)).cls == data.label(i);
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace nncov
