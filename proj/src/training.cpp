#include "deepwound/training.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <mutex>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "deepwound/archive.hpp"
#include "deepwound/error.hpp"

namespace deepwound::training {

double bce_loss(const Probabilities& predicted, const LabelVector& target) {
  double sum = 0.0;
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    const double p = std::clamp(predicted[k], kLossEpsilon, 1.0 - kLossEpsilon);
    sum -= target[k] ? std::log(p) : std::log1p(-p);
  }
  return sum / static_cast<double>(kNumLabels);
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error(ErrorCode::kInvalidConfig, "batch_size must be >= 1");
  for (const PhaseConfig* p : {&phase1, &phase2}) {
    if (!(p->learning_rate > 0)) throw Error(ErrorCode::kInvalidConfig, "learning rates must be > 0");
    if (p->epochs < 0) throw Error(ErrorCode::kInvalidConfig, "epochs must be >= 0");
  }
  augment.validate();
}

std::string TrainReport::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::json j = {{"phase", e.phase},
                        {"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"val_loss", e.val_loss ? nlohmann::json(*e.val_loss) : nlohmann::json(nullptr)},
                        {"seconds", e.seconds}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string TrainReport::digest() const {
  std::string losses;
  for (const auto& e : epochs) {
    nlohmann::json j = {e.phase, e.epoch, e.train_loss,
                        e.val_loss ? nlohmann::json(*e.val_loss) : nlohmann::json(nullptr)};
    losses += j.dump();
    losses += '\n';
  }
  return hex64(fnv1a64(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(losses.data()),
                                                     losses.size())));
}

void Adam::step(nn::Network<float>& net, const std::vector<nn::LayerParams<float>>& grads) {
  auto& params = net.params();
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!net.is_trainable(i)) continue;
      m_[i].weight.assign(params[i].weight.size(), 0.f);
      m_[i].bias.assign(params[i].bias.size(), 0.f);
      v_[i] = m_[i];
    }
  }
  ++t_;
  const double lr_t = lr_ * std::sqrt(1.0 - std::pow(beta2_, t_)) / (1.0 - std::pow(beta1_, t_));
  const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const float lr = static_cast<float>(lr_t), eps = static_cast<float>(eps_);
  auto update = [&](std::vector<float>& w, const std::vector<float>& g, std::vector<float>& m,
                    std::vector<float>& v) {
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (1.f - b1) * g[k];
      v[k] = b2 * v[k] + (1.f - b2) * g[k] * g[k];
      w[k] -= lr * m[k] / (std::sqrt(v[k]) + eps);
    }
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!net.is_trainable(i)) continue;
    update(params[i].weight, grads[i].weight, m_[i].weight, v_[i].weight);
    update(params[i].bias, grads[i].bias, m_[i].bias, v_[i].bias);
  }
}

void Sgd::step(nn::Network<float>& net, const std::vector<nn::LayerParams<float>>& grads) {
  auto& params = net.params();
  const float lr = static_cast<float>(lr_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!net.is_trainable(i)) continue;
    for (std::size_t k = 0; k < params[i].weight.size(); ++k) params[i].weight[k] -= lr * grads[i].weight[k];
    for (std::size_t k = 0; k < params[i].bias.size(); ++k) params[i].bias[k] -= lr * grads[i].bias[k];
  }
}

std::unique_ptr<Optimizer> make_optimizer(const PhaseConfig& phase) {
  if (phase.optimizer == OptimizerKind::kAdam) return std::make_unique<Adam>(phase.learning_rate);
  return std::make_unique<Sgd>(phase.learning_rate);
}

double train_step(nn::Network<float>& net, std::span<const std::vector<float>> inputs,
                  std::span<const LabelVector> targets, Optimizer& optimizer, std::mt19937_64& dropout_rng) {
  if (inputs.size() != targets.size() || inputs.empty()) {
    throw Error(ErrorCode::kLengthMismatch, "batch inputs and targets must be non-empty and equal in size");
  }
  auto grads = net.zero_gradients();
  const float scale = 1.f / static_cast<float>(inputs.size());
  double loss_sum = 0.0;
  nn::Trace<float> trace;
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    const auto z = net.forward_logits(std::span<const float>(inputs[s]), nn::Mode::kTraining, &trace, &dropout_rng);
    const double loss = bce_loss_from_logits<float>(z, targets[s]);
    if (!std::isfinite(loss) ||
        std::any_of(z.begin(), z.end(), [](float v) { return !std::isfinite(v); })) {
      throw Error(ErrorCode::kNonFiniteLoss, "sample " + std::to_string(s) + " of the batch");
    }
    loss_sum += loss;
    const auto g = bce_logit_gradient<float>(z, targets[s], scale);
    net.backward(trace, g, &grads);
  }
  optimizer.step(net, grads);
  return loss_sum / static_cast<double>(inputs.size());
}

double evaluate_loss(const woundnet::ModelHandle& model, std::span<const imaging::RawImage> images,
                     std::span<const LabelVector> targets) {
  if (images.size() != targets.size()) throw Error(ErrorCode::kLengthMismatch, "images vs targets");
  if (images.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto in = imaging::to_model_input(images[i], model.preprocessing_tag(), model.input_side());
    sum += bce_loss(model.predict(std::span(&in, 1)).front(), targets[i]);
  }
  return sum / static_cast<double>(images.size());
}

ImageLoader caching_disk_loader(int side, const imaging::ClaheConfig& clahe, bool already_preprocessed) {
  struct Cache {
    std::mutex mu;
    std::unordered_map<std::string, imaging::RawImage> images;
  };
  auto cache = std::make_shared<Cache>();
  return [cache, side, clahe, already_preprocessed](const dataset::ManifestEntry& e) {
    {
      std::lock_guard lock(cache->mu);
      if (auto it = cache->images.find(e.image_path); it != cache->images.end()) return it->second;
    }
    auto img = imaging::read_image(e.image_path);
    if (!already_preprocessed) {
      img = imaging::preprocess(img, side, clahe);
    } else if (img.width != side || img.height != side) {
      throw Error(ErrorCode::kShapeMismatch, e.image_path + " is not a " + std::to_string(side) + "px preprocessed image");
    }
    std::lock_guard lock(cache->mu);
    return cache->images.emplace(e.image_path, std::move(img)).first->second;
  };
}

std::pair<woundnet::ModelHandle, TrainReport> train(woundnet::ModelHandle model, const dataset::DatasetSplit& split,
                                                    const TrainConfig& cfg, const ImageLoader& loader,
                                                    const EpochCallback& on_epoch) {
  cfg.validate();
  if (split.train.empty()) throw Error(ErrorCode::kEmptySample, "training split is empty");
  const int side = model.input_side();
  const std::string tag = model.preprocessing_tag();

  // Independent streams: batch order, augmentation, dropout.
  std::mt19937_64 order_rng(cfg.seed);
  augment::Rng augment_rng(cfg.seed ^ 0xA5A5A5A5A5A5A5A5ULL);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x5DEECE66DULL);

  std::vector<LabelVector> val_targets;
  std::vector<imaging::RawImage> val_images;
  for (const auto& e : split.validation) {
    val_images.push_back(loader(e));
    val_targets.push_back(e.labels);
  }

  TrainReport report;
  int global_epoch = 0;
  const PhaseConfig* phases[2] = {&cfg.phase1, &cfg.phase2};
  for (int phase = 1; phase <= 2; ++phase) {
    const PhaseConfig& pc = *phases[phase - 1];
    if (pc.epochs == 0) continue;
    auto optimizer = make_optimizer(pc);
    for (int epoch = 0; epoch < pc.epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      ++global_epoch;
      std::vector<std::size_t> order(split.train.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), order_rng);

      double weighted = 0.0;
      std::size_t batch_index = 0;
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        std::vector<std::vector<float>> inputs;
        std::vector<LabelVector> targets;
        for (std::size_t k = start; k < end; ++k) {
          const auto& entry = split.train[order[k]];
          imaging::RawImage img = loader(entry);
          if (cfg.augment_enabled) {
            const auto params = augment::sample_params(cfg.augment, augment_rng);
            img = augment::apply_transform(img, entry.labels, params).first;
          }
          inputs.push_back(model.network_input(imaging::to_model_input(img, tag, side)));
          targets.push_back(entry.labels);
        }
        double loss = 0.0;
        try {
          loss = train_step(model.network(), inputs, targets, *optimizer, dropout_rng);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kNonFiniteLoss) throw;
          std::string paths;
          for (std::size_t k = start; k < end; ++k) paths += " " + split.train[order[k]].image_path;
          throw Error(ErrorCode::kNonFiniteLoss, "phase " + std::to_string(phase) + ", epoch " +
                                                     std::to_string(global_epoch) + ", batch " +
                                                     std::to_string(batch_index) + ":" + paths);
        }
        weighted += loss * static_cast<double>(end - start);
      }

      EpochRecord rec;
      rec.phase = phase;
      rec.epoch = global_epoch;
      rec.train_loss = weighted / static_cast<double>(order.size());
      if (!val_images.empty()) rec.val_loss = evaluate_loss(model, val_images, val_targets);
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      report.epochs.push_back(rec);
      if (on_epoch) on_epoch(rec);
    }
    model.set_provenance(woundnet::Provenance::kFineTuned);
    model.set_history_digest(report.digest());
    if (!cfg.checkpoint_dir.empty()) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
      const auto name = woundnet::to_string(model.variant().id) + ".phase" + std::to_string(phase) + ".dwm";
      woundnet::save_model(model, (std::filesystem::path(cfg.checkpoint_dir) / name).string());
    }
  }
  return {std::move(model), std::move(report)};
}

}  // namespace deepwound::training
