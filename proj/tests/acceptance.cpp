// One PASS/FAIL line per acceptance criterion; exit status 1 if any fail.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <functional>
#include <iostream>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "deepwound/augment.hpp"
#include "deepwound/dataset.hpp"
#include "deepwound/ensemble.hpp"
#include "deepwound/metrics.hpp"
#include "reference_results.hpp"
#include "service_support.hpp"
#include "training_support.hpp"

using namespace deepwound;
using testing_support::TempDir;

namespace {

// Pinned tolerances.
constexpr double kF1RowTol = 0.01;
constexpr double kPriorF1Tol = 5e-4;  // 0.711 is quoted to three places
constexpr double kAucTol = 1e-9;
constexpr int kClaheTol = 2;
constexpr double kLossTol = 1e-6;
constexpr double kGradRelTol = 1e-4;
constexpr double kMemorizeLoss = 0.05;
constexpr double kMemorizeSeconds = 300.0;
constexpr double kProbTol = 1e-8;  // CLI prints 9 significant digits

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

int failures = 0;

void report(int n, const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << " [" << n << "] " << name << ": " << o.detail << " ["
            << fmt(secs, 3) << " s]" << std::endl;
}

Probabilities filled(double p) {
  Probabilities out;
  out.fill(p);
  return out;
}

// ---- 1, 2: F1 rows

Outcome reported_f1_rows() {
  double worst = 0;
  std::string worst_label;
  for (const auto& row : testing_support::kReportedRows) {
    metrics::Confusion c;
    c.tp = static_cast<std::size_t>(std::lround(row.sensitivity * 100));
    c.fn = 100 - c.tp;
    c.tn = static_cast<std::size_t>(std::lround(row.specificity * 100));
    c.fp = 100 - c.tn;
    const auto r = metrics::metrics_row(c, std::string(row.label));
    const double d = std::abs(*r.f1 - row.f1);
    if (d > worst) {
      worst = d;
      worst_label = row.label;
    }
  }
  return {worst <= kF1RowTol, "max |F1 - reported| = " + fmt(worst) + " (" + worst_label + "), tol " + fmt(kF1RowTol)};
}

Outcome prior_f1() {
  const double f = metrics::f1_sens_spec(testing_support::kPriorSensitivity, testing_support::kPriorSpecificity);
  return {std::abs(f - testing_support::kPriorF1) <= kPriorF1Tol, "F1(0.8, 0.64) = " + fmt(f, 6)};
}

// ---- 3: AUC

Outcome auc_oracle() {
  std::mt19937_64 rng(77);
  double worst = 0;
  for (int instance = 0; instance < 100; ++instance) {
    const int n = std::uniform_int_distribution<int>(2, 50)(rng);
    std::vector<double> s(n);
    std::vector<char> t(n);
    for (int i = 0; i < n; ++i) {
      s[i] = instance % 2 ? std::uniform_int_distribution<int>(0, 5)(rng) / 5.0
                          : std::uniform_real_distribution<double>(0, 1)(rng);
      t[i] = std::bernoulli_distribution(0.5)(rng);
    }
    t[0] = 1;
    t[1] = 0;
    double wins = 0, pairs = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (t[i] && !t[j]) {
          pairs += 1;
          wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    const auto roc = metrics::roc_curve(s, std::span(reinterpret_cast<const bool*>(t.data()), t.size()));
    worst = std::max(worst, std::abs(roc.auc - wins / pairs));
  }
  return {worst <= kAucTol, "100 instances, max |AUC - pairwise| = " + fmt(worst, 3)};
}

// ---- 4: CLAHE

std::vector<std::uint8_t> reference_clahe(const std::vector<std::uint8_t>& plane, int w, int h) {
  cv::Mat in(h, w, CV_8U, const_cast<std::uint8_t*>(plane.data())), out;
  cv::createCLAHE(1.0, cv::Size(8, 8))->apply(in, out);
  return {out.data, out.data + plane.size()};
}

Outcome clahe() {
  for (int v : {0, 37, 128, 255}) {
    const imaging::RawImage flat(224, 224, 3, static_cast<std::uint8_t>(v));
    if (!(imaging::apply_clahe(flat) == flat)) return {false, "constant " + std::to_string(v) + " changed"};
  }
  const std::vector<std::function<int(int, int)>> gradients = {
      [](int x, int) { return x * 255 / 223; },
      [](int, int y) { return y * 255 / 223; },
      [](int x, int y) { return (x + y) * 255 / 446; },
      [](int x, int y) { return 40 + (x * 3 + y) % 90; },
      [](int x, int y) { return x / 2 + y / 4; },
  };
  int worst = 0;
  for (const auto& g : gradients) {
    std::vector<std::uint8_t> plane(224 * 224);
    for (int y = 0; y < 224; ++y)
      for (int x = 0; x < 224; ++x) plane[y * 224 + x] = static_cast<std::uint8_t>(std::clamp(g(x, y), 0, 255));
    const auto ours = imaging::clahe_plane(plane, 224, 224, {});
    const auto ref = reference_clahe(plane, 224, 224);
    for (std::size_t i = 0; i < plane.size(); ++i) worst = std::max(worst, std::abs(int(ours[i]) - int(ref[i])));
  }
  return {worst <= kClaheTol, "constants exact; 5 gradients, max |diff| vs reference = " + std::to_string(worst)};
}

// ---- 5: majority vote

Outcome majority() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  int bad_oracle = 0, bad_perm = 0, bad_mono = 0;
  for (int i = 0; i < 10000; ++i) {
    std::array<double, 3> p = {u(rng), u(rng), u(rng)};
    if (i % 17 == 0) p[i % 3] = ensemble::kDecisionThreshold;
    int yes = 0;
    for (double x : p) yes += x >= ensemble::kDecisionThreshold;
    const bool d = ensemble::combine({filled(p[0]), filled(p[1]), filled(p[2])}).labels[0].decision;
    bad_oracle += d != (yes >= 2);
    auto q = p;
    std::sort(q.begin(), q.end());
    do {
      bad_perm += ensemble::combine({filled(q[0]), filled(q[1]), filled(q[2])}).labels[0].decision != d;
    } while (std::next_permutation(q.begin(), q.end()));
    for (int k = 0; k < 3; ++k) {
      auto up = p;
      up[k] = std::min(1.0, up[k] + u(rng));
      bad_mono += ensemble::combine({filled(up[0]), filled(up[1]), filled(up[2])}).labels[0].decision < d;
    }
  }
  return {bad_oracle + bad_perm + bad_mono == 0, "10000 triples; oracle/permutation/monotonicity violations " +
                                                     std::to_string(bad_oracle) + "/" + std::to_string(bad_perm) +
                                                     "/" + std::to_string(bad_mono)};
}

// ---- 6: loss and gradient

Outcome loss_and_gradient() {
  LabelVector ones, zeros{};
  ones.fill(true);
  const double e1 = std::abs(training::bce_loss(filled(0.5), ones) - std::log(2.0));
  const double e2 = std::abs(training::bce_loss(filled(1.0), ones));
  const double e3 = std::abs(training::bce_loss(filled(0.1), zeros) + std::log(0.9));
  const double loss_err = std::max({e1, e2, e3});

  // Head of the real architecture (reduced input side), double precision.
  const auto model = woundnet::build_woundnet(woundnet::ModelVariant::c(),
                                              woundnet::BackboneSource::seeded_random(8), 32, 8);
  nn::Network<double> net(model.network().layers(), 19);
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    const auto& p = model.network().params()[i];
    net.params()[i].weight.assign(p.weight.begin(), p.weight.end());
    net.params()[i].bias.assign(p.bias.begin(), p.bias.end());
  }
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd(0, 1);
  std::vector<double> x(3 * 32 * 32);
  for (auto& v : x) v = nd(rng);
  LabelVector t{};
  t[0] = t[4] = t[7] = true;

  nn::Trace<double> trace;
  const auto z = net.forward_logits(std::span<const double>(x), nn::Mode::kInference, &trace);
  auto grads = net.zero_gradients();
  net.backward(trace, training::bce_logit_gradient<double>(z, t), &grads);
  double worst = 0;
  for (std::size_t layer : {20u, 22u, 24u}) {
    auto& w = net.params()[layer].weight;
    std::uniform_int_distribution<std::size_t> pick(0, w.size() - 1);
    for (int s = 0; s < 12; ++s) {
      const std::size_t i = s == 0 ? 0 : pick(rng);
      const double keep = w[i], h = 1e-5;
      w[i] = keep + h;
      const double up = training::bce_loss_from_logits<double>(net.forward_logits(std::span<const double>(x)), t);
      w[i] = keep - h;
      const double down = training::bce_loss_from_logits<double>(net.forward_logits(std::span<const double>(x)), t);
      w[i] = keep;
      const double numeric = (up - down) / (2 * h), analytic = grads[layer].weight[i];
      worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-7}));
    }
  }
  return {loss_err <= kLossTol && worst <= kGradRelTol,
          "closed-form loss error " + fmt(loss_err, 3) + "; head gradient max rel. error " + fmt(worst, 3)};
}

// ---- 7: freeze policy

Outcome freeze_policy() {
  std::string detail;
  bool ok = true;
  for (const auto& v : {woundnet::ModelVariant::a(), woundnet::ModelVariant::b(), woundnet::ModelVariant::c()}) {
    const auto p = testing_support::probe_freeze(v);
    ok = ok && p.frozen_unchanged && p.frozen_layers_untouched && p.trainable_changed;
    detail += "freeze " + std::to_string(v.freeze_through_index) + ": frozen " +
              (p.frozen_unchanged && p.frozen_layers_untouched ? "unchanged" : "CHANGED") + ", trainable " +
              (p.trainable_changed ? "updated" : "NOT updated") + "; ";
  }
  return {ok, detail + "5 steps at 32 px"};
}

// ---- 8: memorization

Outcome memorization() {
  const auto r = testing_support::run_memorization();
  return {r.final_train_loss < kMemorizeLoss && r.clean_loss < kMemorizeLoss && r.seconds < kMemorizeSeconds,
          std::to_string(r.steps) + " steps, final training loss " + fmt(r.final_train_loss) + ", clean loss " +
              fmt(r.clean_loss) + ", budget " + fmt(kMemorizeSeconds, 3) + " s"};
}

// ---- 9: augmentation

Outcome augmentation() {
  const auto img = testing_support::asymmetric_pattern(57, 43);
  LabelVector labels{};
  labels[2] = labels[6] = true;
  augment::AugmentConfig cfg;
  augment::Rng rng(13);
  int label_bad = 0, shape_bad = 0;
  for (int i = 0; i < 200; ++i) {
    const auto [out, l] = augment::apply_transform(img, labels, augment::sample_params(cfg, rng));
    label_bad += l != labels;
    shape_bad += out.width != img.width || out.height != img.height || out.channels != img.channels;
  }
  const bool identity = augment::apply_transform(img, labels, {}).first == img;
  augment::TransformParams flip;
  flip.flip_h = flip.flip_v = true;
  const auto once = augment::apply_transform(img, labels, flip).first;
  const bool double_flip = augment::apply_transform(once, labels, flip).first == img && !(once == img);
  augment::Rng r1(99), r2(99);
  bool seeded = true;
  for (int i = 0; i < 20; ++i) {
    const auto p1 = augment::sample_params(cfg, r1), p2 = augment::sample_params(cfg, r2);
    seeded = seeded && p1 == p2 && augment::apply_transform(img, labels, p1).first ==
                                       augment::apply_transform(img, labels, p2).first;
  }
  const bool ok = label_bad == 0 && shape_bad == 0 && identity && double_flip && seeded;
  return {ok, "labels " + std::string(label_bad ? "changed" : "invariant") + ", shape " +
                  (shape_bad ? "changed" : "invariant") + ", identity " + (identity ? "exact" : "differs") +
                  ", double flip " + (double_flip ? "exact" : "differs") + ", seeded " +
                  (seeded ? "deterministic" : "differs")};
}

// ---- 10: split

Outcome split() {
  const auto m = testing_support::clinical_manifest();
  const auto s = dataset::split_dataset(m, 0.8, 42);
  std::set<std::string> a, b, all;
  for (const auto& e : s.train) a.insert(e.image_path);
  for (const auto& e : s.validation) b.insert(e.image_path);
  for (const auto& e : m) all.insert(e.image_path);
  std::set<std::string> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(both, both.end()));
  std::set<std::string> uni(a);
  uni.insert(b.begin(), b.end());
  const bool ok = s.train.size() == 1068 && s.validation.size() == 267 && both.empty() && uni == all;
  return {ok, std::to_string(m.size()) + " -> " + std::to_string(s.train.size()) + "/" +
                  std::to_string(s.validation.size()) + ", overlap " + std::to_string(both.size()) +
                  (uni == all ? ", exhaustive" : ", NOT exhaustive")};
}

// ---- 11: service

Outcome service_round_trip() {
  Probabilities a{}, b{}, c{};
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    a[k] = k % 2 ? 0.8 : 0.3;
    b[k] = k % 3 ? 0.55 : 0.45;
    c[k] = k < 5 ? 0.7 : 0.2;
  }
  const auto stub = std::make_shared<ensemble::EnsembleBundle>(testing_support::stub_bundle({a, b, c}, "stub"));
  testing_support::TestServer server(stub);
  const auto img = testing_support::wound_image(240, 180, 3);

  const auto res = server.upload(testing_support::plain_jpeg(img));
  if (!res || res->status != 200) return {false, "/assess did not return 200"};
  const auto j = nlohmann::json::parse(res->body);
  int mismatches = 0;
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    const int yes = (a[k] >= 0.5) + (b[k] >= 0.5) + (c[k] >= 0.5);
    mismatches += j.at("labels").at(k).at("decision").get<bool>() != (yes >= 2);
  }
  const bool nine = j.at("labels").size() == kNumLabels;

  const auto exif_upload = testing_support::jpeg_with_exif(img);
  const auto res2 = server.upload(exif_upload);
  bool clean = false;
  if (res2 && res2->status == 200) {
    const auto png = server.store().image_png(nlohmann::json::parse(res2->body).at("image_id"));
    const std::string stored(png->begin(), png->end());
    clean = stored.find("Exif") == std::string::npos && stored.find("eXIf") == std::string::npos &&
            stored.find(testing_support::kExifSecret) == std::string::npos;
  }

  // CLI parity needs a loadable bundle: three untrained 32 px members.
  TempDir dir;
  std::array<woundnet::ModelHandle, 3> models = {
      woundnet::build_woundnet(woundnet::ModelVariant::a(), woundnet::BackboneSource::seeded_random(4), 32, 4),
      woundnet::build_woundnet(woundnet::ModelVariant::b(), woundnet::BackboneSource::seeded_random(4), 32, 4),
      woundnet::build_woundnet(woundnet::ModelVariant::c(), woundnet::BackboneSource::seeded_random(4), 32, 4)};
  ensemble::save_ensemble(dir.file("bundle"), {&models[0], &models[1], &models[2]}, "parity-1");
  const auto jpeg = testing_support::plain_jpeg(img);
  std::ofstream(dir.file("probe.jpg"), std::ios::binary) << jpeg;

  const std::string cmd =
      std::string(DEEPWOUND_CLI_PATH) + " predict --bundle " + dir.file("bundle") + " --image " + dir.file("probe.jpg");
  std::string cli_out;
  if (FILE* p = popen(cmd.c_str(), "r")) {
    char buf[512];
    while (fgets(buf, sizeof buf, p)) cli_out += buf;
    if (pclose(p) != 0) return {false, "CLI predict failed"};
  }
  testing_support::TestServer real(
      std::make_shared<ensemble::EnsembleBundle>(ensemble::load_ensemble(dir.file("bundle"))));
  const auto res3 = real.upload(jpeg);
  if (!res3 || res3->status != 200) return {false, "/assess on the real bundle failed"};
  const auto j3 = nlohmann::json::parse(res3->body);
  std::istringstream rows(cli_out);
  int parity_bad = 0, rows_seen = 0;
  double worst = 0;
  for (std::string name; rows >> name;) {
    int decision;
    double mean;
    std::string members;
    rows >> decision >> mean >> members;
    const auto& l = j3.at("labels").at(rows_seen++);
    parity_bad += l.at("name") != name || l.at("decision").get<bool>() != (decision == 1);
    worst = std::max(worst, std::abs(l.at("mean_probability").get<double>() - mean));
  }
  const bool parity = rows_seen == 9 && parity_bad == 0 && worst <= kProbTol;

  return {nine && mismatches == 0 && clean && parity,
          "9 decisions " + std::string(nine && mismatches == 0 ? "match stub vote" : "MISMATCH") + ", stored image " +
              (clean ? "has no EXIF" : "KEEPS EXIF") + ", CLI/service parity " + (parity ? "ok" : "BROKEN") +
              " (max |dp| " + fmt(worst, 3) + ")"};
}

}  // namespace

int main() {
  report(1, "per-label F1 reproduces reported rows", reported_f1_rows);
  report(2, "prior predictor F1", prior_f1);
  report(3, "ROC AUC vs pairwise oracle", auc_oracle);
  report(4, "CLAHE identity and reference agreement", clahe);
  report(5, "majority vote", majority);
  report(6, "loss closed forms and head gradient", loss_and_gradient);
  report(7, "freeze policy", freeze_policy);
  report(8, "memorization of 8 images", memorization);
  report(9, "augmentation invariants", augmentation);
  report(10, "80/20 split of 1,335", split);
  report(11, "service round trip", service_round_trip);
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
