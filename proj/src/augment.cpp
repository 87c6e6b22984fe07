#include "deepwound/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "deepwound/error.hpp"

namespace deepwound::augment {

void AugmentConfig::validate() const {
  if (rotation_range < 0 || rotation_range > 360 || shift_limit < 0 || zoom_factor < 0 ||
      zoom_factor >= 1 || shear_factor < 0 || flip_probability < 0 || flip_probability > 1) {
    throw Error(ErrorCode::kInvalidConfig, "augmentation ranges out of bounds");
  }
}

TransformParams sample_params(const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  // Every field consumes exactly one draw so the stream layout never depends
  // on the configured ranges.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  TransformParams p;
  p.angle = cfg.rotation_range * unit(rng);
  if (p.angle >= 360.0) p.angle = 0.0;
  p.dx = between(-cfg.shift_limit, cfg.shift_limit);
  p.dy = between(-cfg.shift_limit, cfg.shift_limit);
  p.zoom = between(1.0 - cfg.zoom_factor, 1.0 + cfg.zoom_factor);
  p.shear = between(-cfg.shear_factor, cfg.shear_factor);
  p.flip_h = unit(rng) < cfg.flip_probability;
  p.flip_v = unit(rng) < cfg.flip_probability;
  return p;
}

namespace {

imaging::RawImage warp(const imaging::RawImage& img, const TransformParams& p) {
  const double theta = p.angle * std::numbers::pi / 180.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  // Forward map (y axis points down, positive angle turns content
  // counter-clockwise on screen): A = R * Shear * zoom.
  const double a00 = p.zoom * c;
  const double a01 = p.zoom * (c * p.shear + s);
  const double a10 = p.zoom * -s;
  const double a11 = p.zoom * (-s * p.shear + c);
  const double det = a00 * a11 - a01 * a10;
  const double i00 = a11 / det, i01 = -a01 / det, i10 = -a10 / det, i11 = a00 / det;

  const double cx = (img.width - 1) / 2.0;
  const double cy = (img.height - 1) / 2.0;
  const double max_x = img.width - 1;
  const double max_y = img.height - 1;

  imaging::RawImage out(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double qx = x - cx - p.dx;
      const double qy = y - cy - p.dy;
      const double sx = std::clamp(i00 * qx + i01 * qy + cx, 0.0, max_x);
      const double sy = std::clamp(i10 * qx + i11 * qy + cy, 0.0, max_y);
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, img.width - 1);
      const int y1 = std::min(y0 + 1, img.height - 1);
      const double fx = sx - x0;
      const double fy = sy - y0;
      for (int ch = 0; ch < img.channels; ++ch) {
        const double top = img.at(x0, y0, ch) * (1 - fx) + img.at(x1, y0, ch) * fx;
        const double bot = img.at(x0, y1, ch) * (1 - fx) + img.at(x1, y1, ch) * fx;
        const double v = top * (1 - fy) + bot * fy;
        out.at(x, y, ch) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

}  // namespace

std::pair<imaging::RawImage, LabelVector> apply_transform(const imaging::RawImage& img,
                                                          const LabelVector& labels,
                                                          const TransformParams& params) {
  if (img.empty() || img.channels != 3) {
    throw Error(ErrorCode::kShapeMismatch, "augmentation expects a non-empty 3-channel image");
  }
  if (!(params.zoom > 0)) throw Error(ErrorCode::kInvalidConfig, "zoom must be positive");

  const bool geometric = params.angle != 0.0 || params.dx != 0.0 || params.dy != 0.0 ||
                         params.zoom != 1.0 || params.shear != 0.0;
  imaging::RawImage out = geometric ? warp(img, params) : img;

  const int w = out.width, h = out.height, ch = out.channels;
  if (params.flip_h) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w / 2; ++x) {
        for (int c = 0; c < ch; ++c) std::swap(out.at(x, y, c), out.at(w - 1 - x, y, c));
      }
    }
  }
  if (params.flip_v) {
    const std::size_t row = static_cast<std::size_t>(w) * ch;
    for (int y = 0; y < h / 2; ++y) {
      std::swap_ranges(out.pixels.begin() + y * row, out.pixels.begin() + (y + 1) * row,
                       out.pixels.begin() + (h - 1 - y) * row);
    }
  }
  return {std::move(out), labels};
}

}  // namespace deepwound::augment
