#pragma once

#include <span>
#include <string>
#include <vector>

#include "deepwound/imaging.hpp"
#include "deepwound/labels.hpp"

namespace deepwound {

/// Anything that maps preprocessed images to nine label probabilities.
/// Implementations must be safe to call concurrently.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::vector<Probabilities> predict(std::span<const imaging::ModelInput> batch) const = 0;
  virtual int input_side() const = 0;
  virtual std::string preprocessing_tag() const = 0;
  /// Freeze index of the member, used to check ensemble composition.
  virtual int freeze_through_index() const = 0;
};

}  // namespace deepwound
