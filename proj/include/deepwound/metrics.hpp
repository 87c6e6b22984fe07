#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepwound/dataset.hpp"
#include "deepwound/ensemble.hpp"
#include "deepwound/imaging.hpp"
#include "deepwound/labels.hpp"
#include "deepwound/woundnet.hpp"

namespace deepwound::metrics {

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

/// Throws LengthMismatch.
Confusion confusion(std::span<const bool> decisions, std::span<const bool> truth);

/// Harmonic mean of sensitivity and specificity; 0 when both are 0.
double f1_sens_spec(double sensitivity, double specificity);

struct MetricsRow {
  std::string label;
  Confusion counts;
  double accuracy = 0.0;
  /// Undefined when the label has no positives (resp. negatives).
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> f1;
};

/// Throws EmptySample when there are no samples.
MetricsRow metrics_row(const Confusion& c, std::string label = {});

struct RocCurve {
  /// One entry per distinct score threshold, descending, preceded by
  /// (+inf, 0, 0).
  std::vector<double> thresholds;
  std::vector<double> fpr;
  std::vector<double> tpr;
  double auc = 0.0;
};

/// Sweeps every distinct score as a threshold (predict positive if score >=
/// threshold); AUC by the trapezoidal rule. Throws LengthMismatch, or
/// DegenerateTruth when truth is all positive or all negative.
RocCurve roc_curve(std::span<const double> scores, std::span<const bool> truth);

/// Gradient of the pre-sigmoid logit of `label` w.r.t. the CHW network input.
std::vector<float> input_gradient(const woundnet::ModelHandle& model, const imaging::ModelInput& input,
                                  std::size_t label);

/// side*side map in [0,1]: max |gradient| over channels, min-max scaled.
/// A gradient that is constant across pixels gives an all-zero map.
std::vector<float> saliency_map(const woundnet::ModelHandle& model, const imaging::ModelInput& input,
                                std::size_t label);
std::vector<float> saliency_from_gradient(std::span<const float> grad_chw, int channels, int side);

imaging::RawImage saliency_gray(std::span<const float> map, int side);
/// JET-coloured map alpha-blended over `base` (which must be side x side).
imaging::RawImage saliency_overlay(std::span<const float> map, const imaging::RawImage& base, double alpha = 0.4);

struct LabelEvaluation {
  MetricsRow row;
  std::optional<RocCurve> roc;  // absent when truth is degenerate
};

struct EvaluationReport {
  std::size_t samples = 0;
  std::string model_version;
  std::array<LabelEvaluation, kNumLabels> labels;

  nlohmann::json to_json() const;
  /// label,tp,fp,tn,fn,accuracy,sensitivity,specificity,f1,auc
  std::string to_csv() const;
};

/// Returns the decoded image for an entry.
using RawLoader = std::function<imaging::RawImage(const dataset::ManifestEntry&)>;

struct EvaluationOutputs {
  EvaluationReport report;
  std::vector<ensemble::Assessment> assessments;  // one per validation entry
};

/// Ensemble decisions against the manifest labels; ROC on mean member
/// probability.
EvaluationOutputs evaluate_ensemble(const ensemble::EnsembleBundle& bundle, const dataset::Manifest& validation,
                                    const RawLoader& loader,
                                    ensemble::InputStage stage = ensemble::InputStage::kRaw);

/// Writes metrics.json, metrics.csv and roc_<label>.csv into `dir`.
void write_evaluation(const EvaluationReport& report, const std::string& dir);

}  // namespace deepwound::metrics
