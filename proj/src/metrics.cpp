#include "deepwound/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "deepwound/error.hpp"

namespace deepwound::metrics {

Confusion confusion(std::span<const bool> decisions, std::span<const bool> truth) {
  if (decisions.size() != truth.size()) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(decisions.size()) + " decisions vs " +
                                                std::to_string(truth.size()) + " truth values");
  }
  Confusion c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i]) {
      (decisions[i] ? c.tp : c.fn)++;
    } else {
      (decisions[i] ? c.fp : c.tn)++;
    }
  }
  return c;
}

double f1_sens_spec(double sensitivity, double specificity) {
  const double d = sensitivity + specificity;
  return d == 0.0 ? 0.0 : 2.0 * sensitivity * specificity / d;
}

MetricsRow metrics_row(const Confusion& c, std::string label) {
  if (c.total() == 0) throw Error(ErrorCode::kEmptySample, "no samples for label " + label);
  MetricsRow r;
  r.label = std::move(label);
  r.counts = c;
  r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  if (c.tp + c.fn > 0) r.sensitivity = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (c.tn + c.fp > 0) r.specificity = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  if (r.sensitivity && r.specificity) r.f1 = f1_sens_spec(*r.sensitivity, *r.specificity);
  return r;
}

RocCurve roc_curve(std::span<const double> scores, std::span<const bool> truth) {
  if (scores.size() != truth.size()) throw Error(ErrorCode::kLengthMismatch, "scores vs truth");
  const auto pos = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), true));
  const std::size_t neg = truth.size() - pos;
  if (pos == 0 || neg == 0) {
    throw Error(ErrorCode::kDegenerateTruth, "ROC needs both positive and negative samples");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve roc;
  roc.thresholds.push_back(std::numeric_limits<double>::infinity());
  roc.fpr.push_back(0.0);
  roc.tpr.push_back(0.0);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    // Tied scores move together.
    for (; i < order.size() && scores[order[i]] == t; ++i) (truth[order[i]] ? tp : fp)++;
    roc.thresholds.push_back(t);
    roc.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
    roc.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
  }
  for (std::size_t k = 1; k < roc.fpr.size(); ++k) {
    roc.auc += (roc.fpr[k] - roc.fpr[k - 1]) * (roc.tpr[k] + roc.tpr[k - 1]) / 2.0;
  }
  return roc;
}

std::vector<float> input_gradient(const woundnet::ModelHandle& model, const imaging::ModelInput& input,
                                  std::size_t label) {
  if (label >= kNumLabels) throw Error(ErrorCode::kInvalidConfig, "label index out of range");
  const auto x = model.network_input(input);
  nn::Trace<float> trace;
  model.network().forward_logits(std::span<const float>(x), nn::Mode::kInference, &trace);
  std::vector<float> seed(kNumLabels, 0.f);
  seed[label] = 1.f;
  std::vector<float> grad;
  model.network().backward(trace, seed, nullptr, &grad);
  return grad;
}

std::vector<float> saliency_from_gradient(std::span<const float> grad_chw, int channels, int side) {
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  if (grad_chw.size() != plane * channels) throw Error(ErrorCode::kShapeMismatch, "gradient size");
  std::vector<float> map(plane, 0.f);
  for (int c = 0; c < channels; ++c) {
    for (std::size_t p = 0; p < plane; ++p) map[p] = std::max(map[p], std::abs(grad_chw[c * plane + p]));
  }
  const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
  const float min = *lo, range = *hi - *lo;
  if (!(range > 0.f)) return std::vector<float>(plane, 0.f);
  for (auto& v : map) v = (v - min) / range;
  return map;
}

std::vector<float> saliency_map(const woundnet::ModelHandle& model, const imaging::ModelInput& input,
                                std::size_t label) {
  return saliency_from_gradient(input_gradient(model, input, label), 3, model.input_side());
}

imaging::RawImage saliency_gray(std::span<const float> map, int side) {
  if (map.size() != static_cast<std::size_t>(side) * side) throw Error(ErrorCode::kShapeMismatch, "saliency size");
  imaging::RawImage out(side, side, 3);
  for (std::size_t p = 0; p < map.size(); ++p) {
    const auto v = static_cast<std::uint8_t>(std::lround(std::clamp(map[p], 0.f, 1.f) * 255.f));
    for (int c = 0; c < 3; ++c) out.pixels[p * 3 + c] = v;
  }
  return out;
}

imaging::RawImage saliency_overlay(std::span<const float> map, const imaging::RawImage& base, double alpha) {
  const int side = base.width;
  if (base.height != side || base.channels != 3 || map.size() != static_cast<std::size_t>(side) * side) {
    throw Error(ErrorCode::kShapeMismatch, "overlay base must be a square RGB image matching the map");
  }
  cv::Mat gray(side, side, CV_8UC1);
  for (std::size_t p = 0; p < map.size(); ++p) {
    gray.data[p] = static_cast<std::uint8_t>(std::lround(std::clamp(map[p], 0.f, 1.f) * 255.f));
  }
  cv::Mat heat;
  cv::applyColorMap(gray, heat, cv::COLORMAP_JET);  // BGR
  imaging::RawImage out(side, side, 3);
  for (std::size_t p = 0; p < map.size(); ++p) {
    for (int c = 0; c < 3; ++c) {
      const double h = heat.data[p * 3 + (2 - c)];
      const double v = alpha * h + (1.0 - alpha) * base.pixels[p * 3 + c];
      out.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  }
  return out;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::string optional_csv(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream s;
  s.precision(6);
  s << *v;
  return s.str();
}

}  // namespace

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json labels_json = nlohmann::json::array();
  for (const auto& l : labels) {
    const auto& r = l.row;
    labels_json.push_back({{"label", r.label},
                           {"tp", r.counts.tp},
                           {"fp", r.counts.fp},
                           {"tn", r.counts.tn},
                           {"fn", r.counts.fn},
                           {"accuracy", r.accuracy},
                           {"sensitivity", optional_json(r.sensitivity)},
                           {"specificity", optional_json(r.specificity)},
                           {"f1", optional_json(r.f1)},
                           {"auc", l.roc ? nlohmann::json(l.roc->auc) : nlohmann::json()}});
  }
  return {{"samples", samples}, {"model_version", model_version}, {"labels", labels_json}};
}

std::string EvaluationReport::to_csv() const {
  std::ostringstream out;
  out << "label,tp,fp,tn,fn,accuracy,sensitivity,specificity,f1,auc\n";
  for (const auto& l : labels) {
    const auto& r = l.row;
    out << r.label << ',' << r.counts.tp << ',' << r.counts.fp << ',' << r.counts.tn << ',' << r.counts.fn << ','
        << optional_csv(r.accuracy) << ',' << optional_csv(r.sensitivity) << ',' << optional_csv(r.specificity)
        << ',' << optional_csv(r.f1) << ',' << (l.roc ? optional_csv(l.roc->auc) : "") << '\n';
  }
  return out.str();
}

EvaluationOutputs evaluate_ensemble(const ensemble::EnsembleBundle& bundle, const dataset::Manifest& validation,
                                    const RawLoader& loader, ensemble::InputStage stage) {
  if (validation.empty()) throw Error(ErrorCode::kEmptySample, "validation set is empty");
  EvaluationOutputs out;
  out.report.samples = validation.size();
  out.report.model_version = bundle.version();
  for (const auto& entry : validation) out.assessments.push_back(ensemble::assess(bundle, loader(entry), stage));

  for (std::size_t k = 0; k < kNumLabels; ++k) {
    std::vector<char> decisions, truth;
    std::vector<double> scores;
    for (std::size_t i = 0; i < validation.size(); ++i) {
      decisions.push_back(out.assessments[i].labels[k].decision);
      truth.push_back(validation[i].labels[k]);
      scores.push_back(out.assessments[i].labels[k].mean_probability);
    }
    // vector<bool> has no contiguous storage; spans need real bools.
    std::unique_ptr<bool[]> d(new bool[decisions.size()]), t(new bool[truth.size()]);
    std::copy(decisions.begin(), decisions.end(), d.get());
    std::copy(truth.begin(), truth.end(), t.get());
    const std::span<const bool> ds(d.get(), decisions.size()), ts(t.get(), truth.size());

    auto& le = out.report.labels[k];
    le.row = metrics_row(confusion(ds, ts), std::string(kLabelNames[k]));
    try {
      le.roc = roc_curve(scores, ts);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerateTruth) throw;
    }
  }
  return out;
}

void write_evaluation(const EvaluationReport& report, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream f(fs::path(dir) / name);
    if (!f) throw Error(ErrorCode::kIoError, "cannot write " + (fs::path(dir) / name).string());
    return f;
  };
  open("metrics.json") << report.to_json().dump(2) << '\n';
  open("metrics.csv") << report.to_csv();
  for (const auto& l : report.labels) {
    if (!l.roc) continue;
    auto f = open("roc_" + l.row.label + ".csv");
    f << "threshold,fpr,tpr\n";
    f.precision(9);
    for (std::size_t i = 0; i < l.roc->fpr.size(); ++i) {
      if (std::isinf(l.roc->thresholds[i])) {
        f << "inf";
      } else {
        f << l.roc->thresholds[i];
      }
      f << ',' << l.roc->fpr[i] << ',' << l.roc->tpr[i] << '\n';
    }
  }
}

}  // namespace deepwound::metrics
