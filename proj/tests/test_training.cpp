#include <gtest/gtest.h>

#include <cmath>
#include <json.hpp>
#include <limits>

#include "deepwound/error.hpp"
#include "deepwound/training.hpp"
#include "training_support.hpp"

using namespace deepwound;
using namespace deepwound::training;
using testing_support::TempDir;

namespace {

Probabilities filled(double p) {
  Probabilities out;
  out.fill(p);
  return out;
}

LabelVector all(bool v) {
  LabelVector t;
  t.fill(v);
  return t;
}

struct TinyData {
  dataset::DatasetSplit split;
  std::map<std::string, imaging::RawImage> images;
  ImageLoader loader() const {
    return [this](const dataset::ManifestEntry& e) { return images.at(e.image_path); };
  }
};

TinyData tiny_data(int n_train, int n_val, int side = 32) {
  TinyData d;
  for (int i = 0; i < n_train + n_val; ++i) {
    dataset::ManifestEntry e;
    e.image_path = "t/" + std::to_string(i);
    for (std::size_t k = 0; k < kNumLabels; ++k) e.labels[k] = (i + k) % 3 == 0;
    d.images[e.image_path] = imaging::preprocess(testing_support::wound_image(40, 40, 10 + i), side);
    (i < n_train ? d.split.train : d.split.validation).push_back(e);
  }
  return d;
}

TrainConfig quick_config(int epochs1, int epochs2) {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.phase1.epochs = epochs1;
  cfg.phase1.learning_rate = 3e-4;
  cfg.phase2.epochs = epochs2;
  cfg.seed = 9;
  return cfg;
}

woundnet::ModelHandle tiny_model(std::uint64_t seed = 1) {
  return woundnet::build_woundnet(woundnet::ModelVariant::a(), woundnet::BackboneSource::seeded_random(seed), 32,
                                  seed);
}

}  // namespace

TEST(Loss, ClosedForms) {
  EXPECT_NEAR(bce_loss(filled(0.5), all(true)), std::log(2.0), 1e-6);
  EXPECT_NEAR(bce_loss(filled(0.5), all(false)), std::log(2.0), 1e-6);
  EXPECT_NEAR(bce_loss(filled(1.0), all(true)), 0.0, 1e-6);
  EXPECT_LE(bce_loss(filled(1.0), all(true)), 1.2e-7);
  EXPECT_NEAR(bce_loss(filled(0.0), all(false)), 0.0, 1e-6);
  EXPECT_NEAR(bce_loss(filled(0.1), all(false)), -std::log(0.9), 1e-6);
  EXPECT_NEAR(bce_loss(filled(0.9), all(true)), -std::log(0.9), 1e-6);
}

TEST(Loss, MixedLabelsAverageOverNine) {
  Probabilities p = filled(0.5);
  p[0] = 0.8;
  LabelVector t{};
  t[0] = true;
  const double expected = (-std::log(0.8) + 8 * std::log(2.0)) / 9.0;
  EXPECT_NEAR(bce_loss(p, t), expected, 1e-12);
}

TEST(Loss, ClampKeepsExtremesFinite) {
  EXPECT_TRUE(std::isfinite(bce_loss(filled(0.0), all(true))));
  EXPECT_TRUE(std::isfinite(bce_loss(filled(1.0), all(false))));
  EXPECT_NEAR(bce_loss(filled(0.0), all(true)), -std::log(kLossEpsilon), 1e-6);
}

TEST(Loss, LogitGradientMatchesDerivative) {
  const std::vector<double> z = {-3.0, -0.5, 0.0, 0.2, 1.0, 2.5, -1.2, 0.7, 4.0};
  LabelVector t{};
  t[1] = t[3] = t[8] = true;
  const auto g = bce_logit_gradient<double>(z, t);
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    auto zp = z, zm = z;
    zp[k] += 1e-6;
    zm[k] -= 1e-6;
    const double numeric =
        (bce_loss_from_logits<double>(zp, t) - bce_loss_from_logits<double>(zm, t)) / 2e-6;
    EXPECT_NEAR(g[k], numeric, 1e-7) << k;
  }
}

TEST(Freeze, EveryVariantKeepsFrozenLayers) {
  for (const auto& v : {woundnet::ModelVariant::a(), woundnet::ModelVariant::b(), woundnet::ModelVariant::c()}) {
    const auto probe = testing_support::probe_freeze(v);
    EXPECT_TRUE(probe.frozen_unchanged) << v.freeze_through_index;
    EXPECT_TRUE(probe.frozen_layers_untouched) << v.freeze_through_index;
    EXPECT_TRUE(probe.trainable_changed) << v.freeze_through_index;
  }
}

TEST(Optimizers, SgdIsPlainGradientStep) {
  auto model = tiny_model();
  auto& net = model.network();
  auto grads = net.zero_gradients();
  for (std::size_t i = 0; i < grads.size(); ++i) std::fill(grads[i].weight.begin(), grads[i].weight.end(), 1.f);
  const auto before = net.params()[24].weight;
  const auto frozen = net.params()[1].weight;
  Sgd(0.5).step(net, grads);
  for (std::size_t k = 0; k < before.size(); ++k) ASSERT_FLOAT_EQ(net.params()[24].weight[k], before[k] - 0.5f);
  EXPECT_EQ(net.params()[1].weight, frozen);
}

TEST(Optimizers, AdamFirstStepIsLearningRateTimesSign) {
  auto model = tiny_model();
  auto& net = model.network();
  auto grads = net.zero_gradients();
  std::fill(grads[24].weight.begin(), grads[24].weight.end(), -0.25f);
  const auto before = net.params()[24].weight;
  Adam(1e-3).step(net, grads);
  for (std::size_t k = 0; k < before.size(); ++k) ASSERT_NEAR(net.params()[24].weight[k], before[k] + 1e-3f, 1e-6);
}

TEST(TrainStep, RejectsMismatchedBatch) {
  auto model = tiny_model();
  Adam adam(1e-3);
  std::mt19937_64 rng(1);
  std::vector<std::vector<float>> xs(2, std::vector<float>(3 * 32 * 32));
  std::vector<LabelVector> ts(1);
  EXPECT_THROW(train_step(model.network(), xs, ts, adam, rng), Error);
}

TEST(TrainStep, NonFiniteLossIsReported) {
  auto model = tiny_model();
  // ReLU and max-pool swallow NaN inputs, so poison the output layer.
  model.network().params()[24].bias[3] = std::numeric_limits<float>::quiet_NaN();
  Adam adam(1e-3);
  std::mt19937_64 rng(1);
  std::vector<std::vector<float>> xs(1, std::vector<float>(3 * 32 * 32, 1.f));
  std::vector<LabelVector> ts(1);
  try {
    train_step(model.network(), xs, ts, adam, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFiniteLoss);
  }
}

TEST(Train, ZeroEpochsLeavesModelUntouched) {
  const auto data = tiny_data(4, 2);
  auto model = tiny_model();
  const auto before = model.network().params();
  auto [out, report] = train(std::move(model), data.split, quick_config(0, 0), data.loader());
  EXPECT_TRUE(report.epochs.empty());
  for (std::size_t i = 0; i < before.size(); ++i) ASSERT_EQ(out.network().params()[i].weight, before[i].weight);
}

TEST(Train, LossDecreasesOnTinySet) {
  const auto data = tiny_data(4, 0);
  auto cfg = quick_config(15, 0);
  cfg.augment_enabled = false;
  auto [model, report] = train(tiny_model(), data.split, cfg, data.loader());
  ASSERT_EQ(report.epochs.size(), 15u);
  EXPECT_LT(report.epochs.back().train_loss, report.epochs.front().train_loss);
  EXPECT_FALSE(report.epochs.back().val_loss);
}

TEST(Train, DeterministicForSeed) {
  const auto data = tiny_data(5, 2);
  std::vector<EpochRecord> seen;
  auto run = [&](bool record) {
    return train(tiny_model(), data.split, quick_config(2, 1), data.loader(), [&](const EpochRecord& r) {
      if (record) seen.push_back(r);
    });
  };
  auto [m1, r1] = run(true);
  auto [m2, r2] = run(false);
  EXPECT_EQ(r1.digest(), r2.digest());
  EXPECT_EQ(m1.network().params()[24].weight, m2.network().params()[24].weight);
  EXPECT_EQ(m1.history_digest(), r1.digest());
  EXPECT_EQ(m1.provenance(), woundnet::Provenance::kFineTuned);

  ASSERT_EQ(seen.size(), 3u);
  EXPECT_EQ(seen[0].phase, 1);
  EXPECT_EQ(seen[2].phase, 2);
  EXPECT_EQ(seen[2].epoch, 3);
  EXPECT_TRUE(seen[2].val_loss);
}

TEST(Train, ReportAndCheckpoints) {
  TempDir dir;
  const auto data = tiny_data(3, 1);
  auto cfg = quick_config(1, 1);
  cfg.checkpoint_dir = dir.file("ckpt");
  auto [model, report] = train(tiny_model(), data.split, cfg, data.loader());

  const auto jsonl = report.to_jsonl();
  EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 2);
  const auto first = nlohmann::json::parse(jsonl.substr(0, jsonl.find('\n')));
  EXPECT_EQ(first.at("phase"), 1);
  EXPECT_TRUE(first.at("val_loss").is_number());

  EXPECT_TRUE(std::filesystem::exists(dir.file("ckpt/A.phase1.dwm")));
  const auto reloaded = woundnet::load_model(dir.file("ckpt/A.phase2.dwm"));
  EXPECT_EQ(reloaded.network().params()[24].weight, model.network().params()[24].weight);
}

TEST(Train, InvalidConfigAndEmptySplit) {
  const auto data = tiny_data(2, 0);
  auto cfg = quick_config(1, 0);
  cfg.batch_size = 0;
  EXPECT_THROW(train(tiny_model(), data.split, cfg, data.loader()), Error);
  EXPECT_THROW(train(tiny_model(), dataset::DatasetSplit{}, quick_config(1, 0), data.loader()), Error);
}

TEST(Loader, CachesAndChecksPreprocessedSide) {
  TempDir dir;
  const auto img = testing_support::wound_image(60, 50);
  imaging::write_png(img, dir.file("a.png"));
  dataset::ManifestEntry e;
  e.image_path = dir.file("a.png");
  const auto loader = caching_disk_loader(32);
  const auto first = loader(e);
  EXPECT_EQ(first.width, 32);
  std::filesystem::remove(dir.file("a.png"));
  EXPECT_EQ(loader(e).pixels, first.pixels);  // served from cache

  imaging::write_png(img, dir.file("b.png"));
  e.image_path = dir.file("b.png");
  EXPECT_THROW(caching_disk_loader(32, {}, true)(e), Error);
}
