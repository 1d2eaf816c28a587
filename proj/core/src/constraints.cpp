#include "nncov/constraints.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "nncov/errors.hpp"

namespace nncov {

namespace {

struct Planes {
  std::size_t channels = 1;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

Planes planes_of(const Tensor& t) {
  const Shape& s = t.shape();
  if (s.size() < 2) throw ShapeError("spatial constraint needs an image input, got " + shape_string(s));
  Planes p;
  p.rows = s[s.size() - 2];
  p.cols = s[s.size() - 1];
  p.channels = t.size() / (p.rows * p.cols);
  return p;
}

std::size_t parse_count(std::string_view text, std::string_view whole) {
  std::size_t value = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size() || value == 0) {
    throw ConfigError("constraint: bad number in '" + std::string(whole) + "'");
  }
  return value;
}

void mark(std::vector<std::uint8_t>& region, const Planes& p, const Window& w) {
  region.resize(p.rows * p.cols, 0);
  for (std::size_t r = w.row; r < w.row + w.height; ++r) {
    for (std::size_t c = w.col; c < w.col + w.width; ++c) region[r * p.cols + c] = 1;
  }
}

void check_fits(const Planes& p, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || h > p.rows || w > p.cols) {
    throw ShapeError("constraint window " + std::to_string(h) + "x" + std::to_string(w) +
                     " does not fit a " + std::to_string(p.rows) + "x" + std::to_string(p.cols) +
                     " input");
  }
}

Window best_window(const Tensor& grad, const Planes& p, std::size_t h, std::size_t w) {
  // Prefix sums of |G| summed over channels.
  const std::size_t stride = p.cols + 1;
  std::vector<double> prefix((p.rows + 1) * stride, 0.0);
  for (std::size_t r = 0; r < p.rows; ++r) {
    for (std::size_t c = 0; c < p.cols; ++c) {
      double v = 0.0;
      for (std::size_t ch = 0; ch < p.channels; ++ch) {
        v += std::abs(grad[(ch * p.rows + r) * p.cols + c]);
      }
      prefix[(r + 1) * stride + c + 1] =
          v + prefix[r * stride + c + 1] + prefix[(r + 1) * stride + c] - prefix[r * stride + c];
    }
  }
  Window best{0, 0, h, w};
  double best_sum = -1.0;
  for (std::size_t r = 0; r + h <= p.rows; ++r) {
    for (std::size_t c = 0; c + w <= p.cols; ++c) {
      const double sum = prefix[(r + h) * stride + c + w] - prefix[r * stride + c + w] -
                         prefix[(r + h) * stride + c] + prefix[r * stride + c];
      if (sum > best_sum) {
        best_sum = sum;
        best = Window{r, c, h, w};
      }
    }
  }
  return best;
}

bool overlaps(const Window& a, const Window& b) {
  return a.row < b.row + b.height && b.row < a.row + a.height && a.col < b.col + b.width &&
         b.col < a.col + a.width;
}

std::vector<Window> sample_patches(const ConstraintSpec& spec, const Planes& p, Rng& rng) {
  std::vector<Window> patches;
  constexpr int kAttemptsPerPatch = 1000;
  for (std::size_t k = 0; k < spec.patch_count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kAttemptsPerPatch && !placed; ++attempt) {
      Window w{uniform_index(rng, p.rows - spec.patch_size + 1),
               uniform_index(rng, p.cols - spec.patch_size + 1), spec.patch_size, spec.patch_size};
      if (std::none_of(patches.begin(), patches.end(),
                       [&](const Window& o) { return overlaps(w, o); })) {
        patches.push_back(w);
        placed = true;
      }
    }
    if (!placed) {
      throw ConfigError("cannot place " + std::to_string(spec.patch_count) +
                        " non-overlapping patches of size " + std::to_string(spec.patch_size));
    }
  }
  return patches;
}

template <typename Fn>
void for_window(const Planes& p, const Window& w, Fn&& fn) {
  for (std::size_t ch = 0; ch < p.channels; ++ch) {
    for (std::size_t r = w.row; r < w.row + w.height; ++r) {
      for (std::size_t c = w.col; c < w.col + w.width; ++c) fn((ch * p.rows + r) * p.cols + c);
    }
  }
}

}  // namespace

ConstraintSpec ConstraintSpec::none() { return {}; }

ConstraintSpec ConstraintSpec::lighting() {
  ConstraintSpec s;
  s.kind = Kind::kLighting;
  return s;
}

ConstraintSpec ConstraintSpec::single_rect(std::size_t height, std::size_t width) {
  ConstraintSpec s;
  s.kind = Kind::kSingleRect;
  s.rect_h = height;
  s.rect_w = width;
  return s;
}

ConstraintSpec ConstraintSpec::black_patches(std::size_t size, std::size_t count) {
  ConstraintSpec s;
  s.kind = Kind::kBlackPatches;
  s.patch_size = size;
  s.patch_count = count;
  return s;
}

ConstraintSpec ConstraintSpec::discrete_additive(Tensor allowed_mask) {
  ConstraintSpec s;
  s.kind = Kind::kDiscreteAdditive;
  s.allowed_mask = std::move(allowed_mask);
  return s;
}

ConstraintSpec ConstraintSpec::parse(std::string_view text) {
  if (text == "none") return none();
  if (text == "lighting") return lighting();
  if (text == "additive") return discrete_additive();
  if (text.starts_with("rect:")) {
    const auto dims = text.substr(5);
    const auto x = dims.find('x');
    if (x == std::string_view::npos) throw ConfigError("constraint: expected rect:MxN, got '" + std::string(text) + "'");
    return single_rect(parse_count(dims.substr(0, x), text), parse_count(dims.substr(x + 1), text));
  }
  if (text.starts_with("patches:")) {
    const auto rest = text.substr(8);
    const auto colon = rest.find(':');
    if (colon == std::string_view::npos) {
      throw ConfigError("constraint: expected patches:M:COUNT, got '" + std::string(text) + "'");
    }
    return black_patches(parse_count(rest.substr(0, colon), text),
                         parse_count(rest.substr(colon + 1), text));
  }
  throw ConfigError("unknown constraint '" + std::string(text) + "'");
}

std::string ConstraintSpec::to_string() const {
  switch (kind) {
    case Kind::kNone: return "none";
    case Kind::kLighting: return "lighting";
    case Kind::kSingleRect: return "rect:" + std::to_string(rect_h) + "x" + std::to_string(rect_w);
    case Kind::kBlackPatches:
      return "patches:" + std::to_string(patch_size) + ":" + std::to_string(patch_count);
    case Kind::kDiscreteAdditive: return "additive";
  }
  return "?";
}

SeedState::SeedState(Tensor seed_input) : seed(std::move(seed_input)) {}

Tensor apply(const ConstraintSpec& spec, const Tensor& grad, const Tensor& x, Rng& rng,
             SeedState& state) {
  if (grad.shape() != x.shape()) {
    throw ShapeError("gradient " + shape_string(grad.shape()) + " does not match input " +
                     shape_string(x.shape()));
  }
  switch (spec.kind) {
    case ConstraintSpec::Kind::kNone:
      return grad;
    case ConstraintSpec::Kind::kLighting: {
      const double m = grad.mean();
      const double sign = m > 0.0 ? 1.0 : (m < 0.0 ? -1.0 : 0.0);
      return Tensor::full(grad.shape(), sign);
    }
    case ConstraintSpec::Kind::kSingleRect: {
      const Planes p = planes_of(grad);
      check_fits(p, spec.rect_h, spec.rect_w);
      const Window w = spec.random_placement
                           ? Window{uniform_index(rng, p.rows - spec.rect_h + 1),
                                    uniform_index(rng, p.cols - spec.rect_w + 1), spec.rect_h,
                                    spec.rect_w}
                           : best_window(grad, p, spec.rect_h, spec.rect_w);
      mark(state.region, p, w);
      Tensor out(grad.shape());
      for_window(p, w, [&](std::size_t i) { out[i] = grad[i]; });
      return out;
    }
    case ConstraintSpec::Kind::kBlackPatches: {
      const Planes p = planes_of(grad);
      check_fits(p, spec.patch_size, spec.patch_size);
      if (state.patches.empty()) {
        state.patches = sample_patches(spec, p, rng);
        for (const Window& w : state.patches) mark(state.region, p, w);
      }
      Tensor out(grad.shape());
      for (const Window& w : state.patches) {
        double total = 0.0;
        std::size_t n = 0;
        for_window(p, w, [&](std::size_t i) {
          total += grad[i];
          ++n;
        });
        if (total / static_cast<double>(n) > 0.0) continue;
        for_window(p, w, [&](std::size_t i) { out[i] = grad[i]; });
      }
      return out;
    }
    case ConstraintSpec::Kind::kDiscreteAdditive: {
      if (!spec.allowed_mask.empty() && spec.allowed_mask.shape() != x.shape()) {
        throw ShapeError("allowed mask " + shape_string(spec.allowed_mask.shape()) +
                         " does not match input " + shape_string(x.shape()));
      }
      Tensor out(grad.shape());
      for (std::size_t i = 0; i < grad.size(); ++i) {
        out[i] = (grad[i] > 0.0 && spec.allowed(i) && x[i] == 0.0) ? 1.0 : 0.0;
      }
      return out;
    }
  }
  return grad;
}

Tensor clamp(const ConstraintSpec& spec, const Tensor& x) {
  Tensor out = x;
  if (spec.kind == ConstraintSpec::Kind::kDiscreteAdditive) {
    for (double& v : out.data()) v = v >= 0.5 ? 1.0 : 0.0;
  } else {
    for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

Tensor clamp(const ConstraintSpec& spec, const Tensor& x, const SeedState& state) {
  Tensor out = clamp(spec, x);
  if (spec.kind != ConstraintSpec::Kind::kDiscreteAdditive) return out;
  if (state.seed.shape() != x.shape()) throw ShapeError("clamp: seed shape differs from input");
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = spec.allowed(i) ? std::max(out[i], state.seed[i]) : state.seed[i];
  }
  return out;
}

Tensor step(const ConstraintSpec& spec, const Tensor& x, const Tensor& constrained_grad,
            double step_size, SeedState& state) {
  switch (spec.kind) {
    case ConstraintSpec::Kind::kLighting: {
      const double direction = constrained_grad.empty() ? 0.0 : constrained_grad[0];
      // Beyond +-1 every pixel is already saturated.
      state.light_offset = std::clamp(state.light_offset + step_size * direction, -1.0, 1.0);
      Tensor moved = state.seed;
      for (double& v : moved.data()) v += state.light_offset;
      return clamp(spec, moved, state);
    }
    case ConstraintSpec::Kind::kDiscreteAdditive: {
      Tensor moved = x;
      moved.add_scaled(constrained_grad, 1.0);
      return clamp(spec, moved, state);
    }
    default: {
      Tensor moved = x;
      moved.add_scaled(constrained_grad, step_size);
      return clamp(spec, moved, state);
    }
  }
}

std::string constraint_violation(const ConstraintSpec& spec, const Tensor& seed,
                                 const Tensor& generated, const std::vector<std::uint8_t>& region) {
  if (seed.shape() != generated.shape()) return "shape differs from seed";
  std::ostringstream why;
  if (spec.kind == ConstraintSpec::Kind::kDiscreteAdditive) {
    for (std::size_t i = 0; i < seed.size(); ++i) {
      const double v = generated[i];
      if (v != 0.0 && v != 1.0) return "feature " + std::to_string(i) + " is not binary";
      if (!spec.allowed(i) && v != seed[i]) return "feature " + std::to_string(i) + " changed off the allowed mask";
      if (v < seed[i]) return "feature " + std::to_string(i) + " was removed";
    }
    return {};
  }
  for (std::size_t i = 0; i < generated.size(); ++i) {
    if (!(generated[i] >= 0.0 && generated[i] <= 1.0)) return "pixel " + std::to_string(i) + " outside [0,1]";
  }
  switch (spec.kind) {
    case ConstraintSpec::Kind::kLighting: {
      constexpr double kTol = 1e-12;
      // generated == clamp(seed + delta) for a single delta.
      double lo = -2.0, hi = 2.0;
      for (std::size_t i = 0; i < seed.size(); ++i) {
        const double g = generated[i], s = seed[i];
        if (g <= 0.0) {
          hi = std::min(hi, -s + kTol);
        } else if (g >= 1.0) {
          lo = std::max(lo, 1.0 - s - kTol);
        } else {
          lo = std::max(lo, g - s - kTol);
          hi = std::min(hi, g - s + kTol);
        }
      }
      if (lo > hi) return "lighting change is not a uniform offset";
      return {};
    }
    case ConstraintSpec::Kind::kSingleRect:
    case ConstraintSpec::Kind::kBlackPatches: {
      const Planes p = planes_of(seed);
      for (std::size_t i = 0; i < seed.size(); ++i) {
        const std::size_t pixel = i % (p.rows * p.cols);
        const bool open = pixel < region.size() && region[pixel] != 0;
        if (!open && generated[i] != seed[i]) {
          return "pixel " + std::to_string(i) + " changed outside the permitted region";
        }
      }
      return {};
    }
    default:
      return {};
  }
}

}  // namespace nncov
