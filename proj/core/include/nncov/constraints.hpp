#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nncov/rng.hpp"
#include "nncov/tensor.hpp"

namespace nncov {

/// Rule-based realism constraint applied to the ascent gradient.
///
///  - kNone: gradient passes through; inputs are clamped to [0, 1].
///  - kLighting: every pixel moves by the same amount, up or down by the
///    sign of mean(G).
///  - kSingleRect: only an rect_h x rect_w window of G is applied. The window
///    maximizes sum |G| (ties: smallest row, then column) unless
///    random_placement is set.
///  - kBlackPatches: patch_count fixed patch_size x patch_size patches per
///    seed; a patch whose mean gradient is positive is zeroed, so patches can
///    only get darker on balance.
///  - kDiscreteAdditive: binary features; a feature may only flip 0 -> 1,
///    only where allowed_mask is nonzero and the gradient is positive.
struct ConstraintSpec {
  enum class Kind { kNone, kLighting, kSingleRect, kBlackPatches, kDiscreteAdditive };

  Kind kind = Kind::kNone;
  std::size_t rect_h = 0;
  std::size_t rect_w = 0;
  bool random_placement = false;
  std::size_t patch_size = 0;
  std::size_t patch_count = 0;
  Tensor allowed_mask;  // empty: every feature allowed

  static ConstraintSpec none();
  static ConstraintSpec lighting();
  static ConstraintSpec single_rect(std::size_t height, std::size_t width);
  static ConstraintSpec black_patches(std::size_t size, std::size_t count);
  static ConstraintSpec discrete_additive(Tensor allowed_mask = {});

  /// Parses `lighting | rect:MxN | patches:M:COUNT | additive | none`.
  /// Throws ConfigError on anything else.
  static ConstraintSpec parse(std::string_view text);
  std::string to_string() const;

  bool is_image() const { return kind != Kind::kDiscreteAdditive; }
  bool allowed(std::size_t i) const { return allowed_mask.empty() || allowed_mask[i] != 0.0; }
};

struct Window {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  friend bool operator==(const Window&, const Window&) = default;
};

/// Per-seed constraint state. Never shared between seeds.
struct SeedState {
  explicit SeedState(Tensor seed_input);

  Tensor seed;
  double light_offset = 0.0;
  std::vector<Window> patches;
  // Spatial pixels (row-major H*W) the constraint has let change so far.
  std::vector<std::uint8_t> region;
};

/// Constrained gradient. Throws ShapeError if grad and x differ in shape or
/// a window does not fit in the input.
Tensor apply(const ConstraintSpec& spec, const Tensor& grad, const Tensor& x, Rng& rng,
             SeedState& state);

/// Domain projection: images clamp to [0, 1]; binary features snap to
/// {0, 1}, never drop below the seed on allowed features and equal the seed
/// elsewhere.
Tensor clamp(const ConstraintSpec& spec, const Tensor& x, const SeedState& state);
Tensor clamp(const ConstraintSpec& spec, const Tensor& x);

/// One ascent step from x along an already-constrained gradient.
/// Lighting accumulates a single offset so that the result is always
/// clamp(seed + offset); discrete features ignore step_size.
Tensor step(const ConstraintSpec& spec, const Tensor& x, const Tensor& constrained_grad,
            double step_size, SeedState& state);

/// Empty when `generated` satisfies the constraint with respect to `seed`;
/// otherwise a description of the first violation. `region` is the
/// SeedState region recorded during generation (rect and patch kinds).
std::string constraint_violation(const ConstraintSpec& spec, const Tensor& seed,
                                 const Tensor& generated, const std::vector<std::uint8_t>& region);

}  // namespace nncov
