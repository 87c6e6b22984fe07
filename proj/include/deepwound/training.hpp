#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deepwound/augment.hpp"
#include "deepwound/dataset.hpp"
#include "deepwound/imaging.hpp"
#include "deepwound/labels.hpp"
#include "deepwound/woundnet.hpp"

namespace deepwound::training {

inline constexpr double kLossEpsilon = 1e-7;

/// Mean over the nine labels of -[t ln p + (1-t) ln(1-p)], with p clamped
/// to [eps, 1-eps].
double bce_loss(const Probabilities& predicted, const LabelVector& target);

/// Same loss evaluated from logits; used on the training path.
template <typename T>
double bce_loss_from_logits(std::span<const T> logits, const LabelVector& target) {
  Probabilities p{};
  for (std::size_t k = 0; k < kNumLabels; ++k) p[k] = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[k])));
  return bce_loss(p, target);
}

/// scale * d(bce)/d(logit_k) = scale * (sigmoid(z_k) - t_k) / 9. This is the
/// gradient of the unclamped loss; it agrees with the clamped one wherever
/// the clamp is inactive and keeps saturated outputs trainable.
template <typename T>
std::vector<T> bce_logit_gradient(std::span<const T> logits, const LabelVector& target, T scale = T(1)) {
  std::vector<T> g(kNumLabels);
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[k])));
    g[k] = static_cast<T>(scale * (p - (target[k] ? 1.0 : 0.0)) / static_cast<double>(kNumLabels));
  }
  return g;
}

enum class OptimizerKind { kAdam, kSgd };

struct PhaseConfig {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  int epochs = 30;
};

struct TrainConfig {
  int batch_size = 64;
  PhaseConfig phase1{OptimizerKind::kAdam, 1e-3, 30};
  PhaseConfig phase2{OptimizerKind::kSgd, 1e-4, 50};
  augment::AugmentConfig augment;
  bool augment_enabled = true;
  std::uint64_t seed = 0;
  /// If non-empty, a model bundle is written here at the end of each phase.
  std::string checkpoint_dir;

  void validate() const;
};

struct EpochRecord {
  int phase = 1;
  int epoch = 1;  // counted across both phases
  double train_loss = 0.0;
  std::optional<double> val_loss;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;

  /// One JSON object per line: phase, epoch, train_loss, val_loss, seconds.
  std::string to_jsonl() const;
  /// Digest of the loss history (timings excluded), stored in bundles.
  std::string digest() const;
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  /// Applies one update to every trainable layer of `net`.
  virtual void step(nn::Network<float>& net, const std::vector<nn::LayerParams<float>>& grads) = 0;
};

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-7).
class Adam : public Optimizer {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-7)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}
  void step(nn::Network<float>& net, const std::vector<nn::LayerParams<float>>& grads) override;

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<nn::LayerParams<float>> m_, v_;
};

/// Plain stochastic gradient descent, no momentum.
class Sgd : public Optimizer {
 public:
  explicit Sgd(double learning_rate) : lr_(learning_rate) {}
  void step(nn::Network<float>& net, const std::vector<nn::LayerParams<float>>& grads) override;

 private:
  double lr_;
};

std::unique_ptr<Optimizer> make_optimizer(const PhaseConfig& phase);

/// One optimizer step on a batch of CHW inputs. Returns the mean batch loss
/// (training mode, dropout active). Throws NonFiniteLoss.
double train_step(nn::Network<float>& net, std::span<const std::vector<float>> inputs,
                  std::span<const LabelVector> targets, Optimizer& optimizer, std::mt19937_64& dropout_rng);

/// Mean clean (inference-mode) loss of a model over preprocessed images.
double evaluate_loss(const woundnet::ModelHandle& model, std::span<const imaging::RawImage> images,
                     std::span<const LabelVector> targets);

/// Returns the preprocessed (resized + CLAHE) image for a manifest entry.
using ImageLoader = std::function<imaging::RawImage(const dataset::ManifestEntry&)>;

/// Reads from disk and preprocesses to `side`, caching results in memory.
/// With `already_preprocessed` the files are taken as-is (they must be
/// side x side).
ImageLoader caching_disk_loader(int side, const imaging::ClaheConfig& clahe = {}, bool already_preprocessed = false);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Phase 1 then phase 2 over the training split, online augmentation per
/// batch, clean validation loss after every epoch. Frozen layers are never
/// updated.
std::pair<woundnet::ModelHandle, TrainReport> train(woundnet::ModelHandle model, const dataset::DatasetSplit& split,
                                                    const TrainConfig& cfg, const ImageLoader& loader,
                                                    const EpochCallback& on_epoch = {});

}  // namespace deepwound::training
