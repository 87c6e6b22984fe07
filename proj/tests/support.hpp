#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "deepwound/classifier.hpp"
#include "deepwound/dataset.hpp"
#include "deepwound/ensemble.hpp"
#include "deepwound/imaging.hpp"

namespace testing_support {

using deepwound::imaging::RawImage;

// Positives per label in the clinical dataset (1,335 images).
inline constexpr std::array<std::size_t, 9> kClinicalPositives = {615, 355, 449, 398, 631, 448, 129, 98, 160};
inline constexpr std::size_t kClinicalTotal = 1335;

/// Manifest with exactly the clinical positive counts, labels spread over the
/// entries by coprime strides so columns are not nested.
inline deepwound::dataset::Manifest clinical_manifest() {
  constexpr std::array<std::size_t, 9> stride = {7, 11, 13, 17, 19, 23, 29, 31, 37};
  deepwound::dataset::Manifest m(kClinicalTotal);
  for (std::size_t i = 0; i < kClinicalTotal; ++i) {
    m[i].image_path = "img/" + std::to_string(i) + ".jpg";
    m[i].source_tag = i % 5 == 0 ? "web" : "clinical";
    for (std::size_t k = 0; k < 9; ++k) m[i].labels[k] = (i * stride[k] + k) % kClinicalTotal < kClinicalPositives[k];
  }
  return m;
}

/// Wound-like test pattern: skin-tone gradient, a dark reddish blob, fine
/// texture. No CLAHE tile of it is flat.
inline RawImage wound_image(int w, int h, unsigned seed = 1) {
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> noise(-6, 6);
  RawImage img(w, h, 3);
  const double cx = w * 0.55, cy = h * 0.45, r = std::min(w, h) * 0.25;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double g = static_cast<double>(x + y) / (w + h);
      double rr = 150 + 80 * g, gg = 110 + 60 * g, bb = 90 + 50 * g;
      const double d = std::hypot(x - cx, y - cy) / r;
      if (d < 1.0) {
        const double k = 1.0 - d * d;
        rr -= 40 * k;
        gg -= 70 * k;
        bb -= 60 * k;
      }
      const int n = noise(rng);
      img.at(x, y, 0) = static_cast<std::uint8_t>(std::clamp(rr + n, 0.0, 255.0));
      img.at(x, y, 1) = static_cast<std::uint8_t>(std::clamp(gg + n, 0.0, 255.0));
      img.at(x, y, 2) = static_cast<std::uint8_t>(std::clamp(bb + n, 0.0, 255.0));
    }
  }
  return img;
}

/// Every pixel distinct per channel, so misplaced samples are visible.
inline RawImage asymmetric_pattern(int w, int h) {
  RawImage img(w, h, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = static_cast<std::uint8_t>((x * 7 + y * 3) % 256);
      img.at(x, y, 1) = static_cast<std::uint8_t>((x * x + 5 * y) % 256);
      img.at(x, y, 2) = static_cast<std::uint8_t>((y * 11 + x) % 256);
    }
  }
  return img;
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("deepwound-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

/// Returns fixed probabilities whatever the image.
class StubClassifier : public deepwound::Classifier {
 public:
  StubClassifier(deepwound::Probabilities p, int freeze, int side = deepwound::imaging::kInputSide)
      : p_(p), freeze_(freeze), side_(side) {}

  std::vector<deepwound::Probabilities> predict(std::span<const deepwound::imaging::ModelInput> batch) const override {
    return std::vector<deepwound::Probabilities>(batch.size(), p_);
  }
  int input_side() const override { return side_; }
  std::string preprocessing_tag() const override { return std::string(deepwound::imaging::kCaffeBgrTag); }
  int freeze_through_index() const override { return freeze_; }

 private:
  deepwound::Probabilities p_;
  int freeze_;
  int side_;
};

inline deepwound::ensemble::EnsembleBundle stub_bundle(const std::array<deepwound::Probabilities, 3>& p,
                                                       const std::string& version = "stub-1") {
  return deepwound::ensemble::EnsembleBundle({std::make_shared<StubClassifier>(p[0], 6),
                                              std::make_shared<StubClassifier>(p[1], 10),
                                              std::make_shared<StubClassifier>(p[2], 14)},
                                             0.5, version);
}

}  // namespace testing_support
