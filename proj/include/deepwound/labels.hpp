#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

namespace deepwound {

inline constexpr std::size_t kNumLabels = 9;

/// Canonical label order. Every 9-vector in the project (manifests, model
/// outputs, reports) is indexed this way.
inline constexpr std::array<std::string_view, kNumLabels> kLabelNames = {
    "wound",       "infection", "granulation_tissue",
    "fibrinous_exudate", "open_wound", "drainage",
    "steri_strips", "staples",   "sutures",
};

using LabelVector = std::array<bool, kNumLabels>;
using Probabilities = std::array<double, kNumLabels>;

inline std::optional<std::size_t> label_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumLabels; ++i) {
    if (kLabelNames[i] == name) return i;
  }
  return std::nullopt;
}

}  // namespace deepwound
