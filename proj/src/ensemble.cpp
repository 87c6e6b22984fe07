#include "deepwound/ensemble.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "deepwound/error.hpp"

namespace deepwound::ensemble {

namespace fs = std::filesystem;

bool majority_vote(std::span<const bool> votes) {
  if (votes.size() != kMembers) {
    throw Error(ErrorCode::kWrongArity, "majority vote needs exactly 3 votes, got " + std::to_string(votes.size()));
  }
  return std::count(votes.begin(), votes.end(), true) >= 2;
}

LabelVector Assessment::decisions() const {
  LabelVector d{};
  for (std::size_t k = 0; k < kNumLabels; ++k) d[k] = labels[k].decision;
  return d;
}

Probabilities Assessment::mean_probabilities() const {
  Probabilities p{};
  for (std::size_t k = 0; k < kNumLabels; ++k) p[k] = labels[k].mean_probability;
  return p;
}

Assessment combine(const std::array<Probabilities, kMembers>& member_probabilities, double threshold) {
  Assessment a;
  a.threshold = threshold;
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    LabelAssessment& l = a.labels[k];
    double sum = 0.0;
    for (std::size_t m = 0; m < kMembers; ++m) {
      l.probabilities[m] = member_probabilities[m][k];
      l.votes[m] = l.probabilities[m] >= threshold;
      sum += l.probabilities[m];
    }
    l.decision = majority_vote(l.votes);
    l.mean_probability = sum / static_cast<double>(kMembers);
  }
  return a;
}

EnsembleBundle::EnsembleBundle(std::array<Member, kMembers> members, double threshold, std::string version)
    : members_(std::move(members)), threshold_(threshold), version_(std::move(version)) {
  std::set<int> freeze;
  for (const auto& m : members_) {
    if (!m) throw Error(ErrorCode::kWrongArity, "ensemble member is missing");
    freeze.insert(m->freeze_through_index());
  }
  if (freeze != std::set<int>{6, 10, 14}) {
    throw Error(ErrorCode::kWrongArity, "ensemble members must carry freeze indices 6, 10 and 14");
  }
  if (!(threshold_ > 0.0 && threshold_ < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "decision threshold must lie in (0, 1)");
  }
}

std::array<Probabilities, kMembers> member_probabilities(const EnsembleBundle& bundle, const imaging::RawImage& img,
                                                         InputStage stage, const imaging::ClaheConfig& clahe) {
  std::map<int, imaging::RawImage> prepared;
  std::array<Probabilities, kMembers> out{};
  for (std::size_t m = 0; m < kMembers; ++m) {
    const auto& member = bundle.members()[m];
    const int side = member->input_side();
    auto it = prepared.find(side);
    if (it == prepared.end()) {
      if (stage == InputStage::kPreprocessed && (img.width != side || img.height != side)) {
        throw Error(ErrorCode::kShapeMismatch, "preprocessed image is " + std::to_string(img.width) + "x" +
                                                   std::to_string(img.height) + ", member expects side " +
                                                   std::to_string(side));
      }
      it = prepared.emplace(side, stage == InputStage::kRaw ? imaging::preprocess(img, side, clahe) : img).first;
    }
    const auto input = imaging::to_model_input(it->second, member->preprocessing_tag(), side);
    const auto probs = member->predict(std::span(&input, 1));
    if (probs.size() != 1) throw Error(ErrorCode::kShapeMismatch, "member returned a wrong batch size");
    out[m] = probs.front();
  }
  return out;
}

Assessment assess(const EnsembleBundle& bundle, const imaging::RawImage& img, InputStage stage,
                  const imaging::ClaheConfig& clahe) {
  Assessment a = combine(member_probabilities(bundle, img, stage, clahe), bundle.threshold());
  a.model_version = bundle.version();
  a.timestamp = utc_timestamp_now();
  return a;
}

namespace {

void write_manifest(const std::string& dir, const std::array<std::string, kMembers>& files,
                    const std::array<woundnet::ModelVariant, kMembers>& variants, const std::string& version,
                    double threshold) {
  nlohmann::json members = nlohmann::json::array();
  for (std::size_t m = 0; m < kMembers; ++m) {
    members.push_back({{"variant", woundnet::to_string(variants[m].id)},
                       {"freeze_through_index", variants[m].freeze_through_index},
                       {"file", files[m]}});
  }
  nlohmann::json manifest = {{"format", "deepwound-ensemble"},
                             {"version", version},
                             {"decision_threshold", threshold},
                             {"members", members}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw Error(ErrorCode::kIoError, "cannot write ensemble manifest in " + dir);
  out << manifest.dump(2) << '\n';
}

}  // namespace

void save_ensemble(const std::string& dir, const std::array<const woundnet::ModelHandle*, kMembers>& models,
                   const std::string& version, double threshold) {
  fs::create_directories(dir);
  std::array<std::string, kMembers> files;
  std::array<woundnet::ModelVariant, kMembers> variants;
  for (std::size_t m = 0; m < kMembers; ++m) {
    variants[m] = models[m]->variant();
    files[m] = woundnet::to_string(variants[m].id) + ".dwm";
    woundnet::save_model(*models[m], (fs::path(dir) / files[m]).string());
  }
  write_manifest(dir, files, variants, version, threshold);
}

void assemble_ensemble(const std::string& dir, const std::array<std::string, kMembers>& model_files,
                       const std::string& version, double threshold) {
  std::array<std::string, kMembers> files;
  std::array<woundnet::ModelVariant, kMembers> variants;
  std::set<int> freeze;
  for (std::size_t m = 0; m < kMembers; ++m) {
    variants[m] = woundnet::load_model(model_files[m]).variant();
    files[m] = woundnet::to_string(variants[m].id) + ".dwm";
    freeze.insert(variants[m].freeze_through_index);
  }
  if (freeze != std::set<int>{6, 10, 14}) {
    throw Error(ErrorCode::kWrongArity, "ensemble needs one model of each variant A, B and C");
  }
  fs::create_directories(dir);
  for (std::size_t m = 0; m < kMembers; ++m) {
    const auto target = fs::path(dir) / files[m];
    if (fs::absolute(model_files[m]) != fs::absolute(target)) {
      fs::copy_file(model_files[m], target, fs::copy_options::overwrite_existing);
    }
  }
  write_manifest(dir, files, variants, version, threshold);
}

EnsembleBundle load_ensemble(const std::string& dir) {
  const auto path = fs::path(dir) / "manifest.json";
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kCorruptBundle, "no ensemble manifest at " + path.string());
  try {
    const auto manifest = nlohmann::json::parse(in);
    if (manifest.at("format").get<std::string>() != "deepwound-ensemble") {
      throw Error(ErrorCode::kCorruptBundle, path.string() + " is not an ensemble manifest");
    }
    const auto& members = manifest.at("members");
    if (members.size() != kMembers) throw Error(ErrorCode::kCorruptBundle, "ensemble must list three members");
    std::array<EnsembleBundle::Member, kMembers> loaded;
    for (std::size_t m = 0; m < kMembers; ++m) {
      auto model = woundnet::load_model((fs::path(dir) / members[m].at("file").get<std::string>()).string());
      if (model.variant().freeze_through_index != members[m].at("freeze_through_index").get<int>()) {
        throw Error(ErrorCode::kCorruptBundle, "member freeze index disagrees with the ensemble manifest");
      }
      loaded[m] = std::make_shared<woundnet::ModelHandle>(std::move(model));
    }
    return EnsembleBundle(std::move(loaded), manifest.at("decision_threshold").get<double>(),
                          manifest.at("version").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptBundle, path.string() + ": " + e.what());
  } catch (const Error& e) {
    // missing member files, bad thresholds, wrong freeze sets
    if (e.code() == ErrorCode::kCorruptBundle) throw;
    throw Error(ErrorCode::kCorruptBundle, dir + ": " + e.what());
  }
}

nlohmann::json to_json(const Assessment& a) {
  nlohmann::json labels = nlohmann::json::array();
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    const auto& l = a.labels[k];
    labels.push_back({{"name", kLabelNames[k]},
                      {"probabilities", l.probabilities},
                      {"votes", l.votes},
                      {"decision", l.decision},
                      {"mean_probability", l.mean_probability}});
  }
  return {{"model_version", a.model_version},
          {"timestamp", a.timestamp},
          {"threshold", a.threshold},
          {"labels", labels}};
}

std::string utc_timestamp_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace deepwound::ensemble
