#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "deepwound/labels.hpp"

namespace deepwound::dataset {

struct ManifestEntry {
  std::string image_path;
  LabelVector labels{};
  std::string source_tag;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

using Manifest = std::vector<ManifestEntry>;

struct DatasetSplit {
  Manifest train;
  Manifest validation;
  std::uint64_t seed = 0;
  double ratio = 0.8;
};

struct ClassCount {
  std::size_t positive = 0;
  std::size_t negative = 0;
  friend bool operator==(const ClassCount&, const ClassCount&) = default;
};

using ClassCounts = std::array<ClassCount, kNumLabels>;

/// Header row of the manifest CSV.
std::string manifest_header();

/// Parses a manifest CSV. Relative image paths are resolved against the
/// directory of the manifest file.
Manifest load_manifest(const std::string& path);

/// Parses manifest text. `base_dir` (if non-empty) prefixes relative paths.
Manifest parse_manifest(const std::string& text, const std::string& base_dir = {});

std::string format_manifest(const Manifest& entries);
void save_manifest(const Manifest& entries, const std::string& path);

ClassCounts class_counts(const Manifest& entries);

/// Seeded shuffle, then the first round(ratio * n) entries go to training.
DatasetSplit split_dataset(const Manifest& entries, double ratio, std::uint64_t seed);

}  // namespace deepwound::dataset
