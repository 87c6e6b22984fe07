#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepwound/classifier.hpp"
#include "deepwound/imaging.hpp"
#include "deepwound/labels.hpp"
#include "deepwound/woundnet.hpp"

namespace deepwound::ensemble {

inline constexpr std::size_t kMembers = 3;
inline constexpr double kDecisionThreshold = 0.5;

/// True iff at least two of exactly three votes are true.
bool majority_vote(std::span<const bool> votes);

struct LabelAssessment {
  std::array<double, kMembers> probabilities{};
  std::array<bool, kMembers> votes{};
  bool decision = false;
  double mean_probability = 0.0;
};

struct Assessment {
  std::array<LabelAssessment, kNumLabels> labels{};
  double threshold = kDecisionThreshold;
  std::string model_version;
  std::string timestamp;  // UTC ISO-8601

  LabelVector decisions() const;
  Probabilities mean_probabilities() const;
};

/// Thresholds each member's probability, then majority-votes per label.
Assessment combine(const std::array<Probabilities, kMembers>& member_probabilities,
                   double threshold = kDecisionThreshold);

class EnsembleBundle {
 public:
  using Member = std::shared_ptr<const Classifier>;

  /// Requires three members whose freeze indices are exactly {6, 10, 14}.
  EnsembleBundle(std::array<Member, kMembers> members, double threshold, std::string version);

  const std::array<Member, kMembers>& members() const { return members_; }
  double threshold() const { return threshold_; }
  const std::string& version() const { return version_; }

 private:
  std::array<Member, kMembers> members_;
  double threshold_;
  std::string version_;
};

/// kRaw: decoded photograph. kPreprocessed: already resized and CLAHE-processed
/// (the output of the preprocess step); it must match every member's side.
enum class InputStage { kRaw, kPreprocessed };

/// Each member sees the image resized to its input side, CLAHE-processed and
/// normalized with its own preprocessing tag.
std::array<Probabilities, kMembers> member_probabilities(const EnsembleBundle& bundle, const imaging::RawImage& img,
                                                         InputStage stage = InputStage::kRaw,
                                                         const imaging::ClaheConfig& clahe = {});

Assessment assess(const EnsembleBundle& bundle, const imaging::RawImage& img, InputStage stage = InputStage::kRaw,
                  const imaging::ClaheConfig& clahe = {});

/// Directory layout: manifest.json + A.dwm, B.dwm, C.dwm.
void save_ensemble(const std::string& dir, const std::array<const woundnet::ModelHandle*, kMembers>& models,
                   const std::string& version, double threshold = kDecisionThreshold);
/// Builds an ensemble directory from already-saved model bundle files.
void assemble_ensemble(const std::string& dir, const std::array<std::string, kMembers>& model_files,
                       const std::string& version, double threshold = kDecisionThreshold);
EnsembleBundle load_ensemble(const std::string& dir);

nlohmann::json to_json(const Assessment& a);
std::string utc_timestamp_now();

}  // namespace deepwound::ensemble
