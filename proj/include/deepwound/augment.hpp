#pragma once

#include <random>
#include <utility>

#include "deepwound/imaging.hpp"
#include "deepwound/labels.hpp"

namespace deepwound::augment {

/// Ranges for random training-time transforms. Defaults reproduce the
/// published augmentation: full rotation, 10 px shift, 30% zoom, 0.2 shear,
/// independent horizontal/vertical flips at 50%.
struct AugmentConfig {
  double rotation_range = 360.0;  // degrees, angle drawn from [0, rotation_range)
  double shift_limit = 10.0;      // pixels, per axis
  double zoom_factor = 0.30;      // zoom drawn from [1 - z, 1 + z]
  double shear_factor = 0.20;     // shear drawn from [-s, s]
  double flip_probability = 0.5;

  void validate() const;
};

struct TransformParams {
  double angle = 0.0;  // degrees, counter-clockwise
  double dx = 0.0;     // pixels, +x moves content right
  double dy = 0.0;     // pixels, +y moves content down
  double zoom = 1.0;   // >1 magnifies content
  double shear = 0.0;  // x' = x + shear * y about the center
  bool flip_h = false;
  bool flip_v = false;

  bool is_identity() const {
    return angle == 0.0 && dx == 0.0 && dy == 0.0 && zoom == 1.0 && shear == 0.0 && !flip_h && !flip_v;
  }
  friend bool operator==(const TransformParams&, const TransformParams&) = default;
};

using Rng = std::mt19937_64;

TransformParams sample_params(const AugmentConfig& cfg, Rng& rng);

/// Composed affine warp (rotation, zoom, shear about the image center, then
/// translation), bilinear sampling with edge replication, then flips.
/// Labels pass through untouched.
std::pair<imaging::RawImage, LabelVector> apply_transform(const imaging::RawImage& img,
                                                          const LabelVector& labels,
                                                          const TransformParams& params);

}  // namespace deepwound::augment
