#include "deepwound/woundnet.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "deepwound/error.hpp"

namespace deepwound::woundnet {

using nn::Activation;
using nn::LayerKind;
using nn::LayerSpec;

namespace {

// Sigmoid outputs are kept strictly inside (0, 1); same epsilon as the loss.
constexpr double kProbabilityFloor = 1e-7;

std::string kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kInput: return "input";
    case LayerKind::kConv2D: return "conv2d";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kDense: return "dense";
    case LayerKind::kDropout: return "dropout";
  }
  return "?";
}

LayerKind kind_from_name(const std::string& s) {
  if (s == "input") return LayerKind::kInput;
  if (s == "conv2d") return LayerKind::kConv2D;
  if (s == "maxpool") return LayerKind::kMaxPool;
  if (s == "flatten") return LayerKind::kFlatten;
  if (s == "dense") return LayerKind::kDense;
  if (s == "dropout") return LayerKind::kDropout;
  throw Error(ErrorCode::kCorruptBundle, "unknown layer kind '" + s + "'");
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "?";
}

Activation activation_from_name(const std::string& s) {
  if (s == "linear") return Activation::kLinear;
  if (s == "relu") return Activation::kRelu;
  if (s == "sigmoid") return Activation::kSigmoid;
  throw Error(ErrorCode::kCorruptBundle, "unknown activation '" + s + "'");
}

std::vector<std::int64_t> weight_shape(const nn::Network<float>& net, std::size_t i) {
  const auto& l = net.layers()[i];
  const auto& in = net.output_shape(i - 1);
  if (l.kind == LayerKind::kConv2D) return {l.units, in.c, 3, 3};
  return {l.units, in.c};
}

std::uint64_t variant_seed(std::uint64_t base, VariantId id) {
  return base * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(id) + 1;
}

}  // namespace

std::string to_string(VariantId id) {
  switch (id) {
    case VariantId::kA: return "A";
    case VariantId::kB: return "B";
    case VariantId::kC: return "C";
  }
  return "?";
}

std::optional<ModelVariant> variant_from_name(std::string_view name) {
  if (name == "A" || name == "a") return ModelVariant::a();
  if (name == "B" || name == "b") return ModelVariant::b();
  if (name == "C" || name == "c") return ModelVariant::c();
  return std::nullopt;
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::kPretrainedBackbone: return "pretrained-backbone";
    case Provenance::kSeededRandomBackbone: return "seeded-random-backbone";
    case Provenance::kFineTuned: return "fine-tuned";
  }
  return "?";
}

std::optional<Provenance> provenance_from_name(std::string_view name) {
  if (name == "pretrained-backbone") return Provenance::kPretrainedBackbone;
  if (name == "seeded-random-backbone") return Provenance::kSeededRandomBackbone;
  if (name == "fine-tuned") return Provenance::kFineTuned;
  return std::nullopt;
}

std::vector<LayerSpec> woundnet_architecture(int input_side) {
  std::vector<LayerSpec> layers;
  LayerSpec input;
  input.kind = LayerKind::kInput;
  input.name = "input";
  input.channels = 3;
  input.side = input_side;
  layers.push_back(input);

  const int blocks[5][2] = {{2, 64}, {2, 128}, {3, 256}, {3, 512}, {3, 512}};
  for (int b = 0; b < 5; ++b) {
    for (int c = 0; c < blocks[b][0]; ++c) {
      layers.push_back({.kind = LayerKind::kConv2D,
                        .name = "block" + std::to_string(b + 1) + "_conv" + std::to_string(c + 1),
                        .units = blocks[b][1],
                        .activation = Activation::kRelu});
    }
    layers.push_back({.kind = LayerKind::kMaxPool, .name = "block" + std::to_string(b + 1) + "_pool"});
  }
  layers.push_back({.kind = LayerKind::kFlatten, .name = "flatten"});
  layers.push_back({.kind = LayerKind::kDense, .name = "fc1", .units = 1024, .activation = Activation::kRelu});
  layers.push_back({.kind = LayerKind::kDropout, .name = "dropout1", .rate = 0.5});
  layers.push_back({.kind = LayerKind::kDense, .name = "fc2", .units = 1024, .activation = Activation::kRelu});
  layers.push_back({.kind = LayerKind::kDropout, .name = "dropout2", .rate = 0.5});
  layers.push_back({.kind = LayerKind::kDense,
                    .name = "predictions",
                    .units = static_cast<int>(kNumLabels),
                    .activation = Activation::kSigmoid});
  return layers;
}

std::vector<std::size_t> backbone_conv_indices() {
  std::vector<std::size_t> idx;
  const auto layers = woundnet_architecture(32);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::kConv2D) idx.push_back(i);
  }
  return idx;
}

ModelHandle::ModelHandle(nn::Network<float> net, ModelVariant variant, Provenance provenance, std::string tag)
    : net_(std::move(net)), variant_(variant), provenance_(provenance), tag_(std::move(tag)) {
  net_.set_freeze_through_index(variant_.freeze_through_index);
}

std::vector<float> ModelHandle::network_input(const imaging::ModelInput& in) const {
  const int side = input_side();
  if (in.side != side || in.data.size() != static_cast<std::size_t>(side) * side * 3) {
    throw Error(ErrorCode::kShapeMismatch,
                "model expects " + std::to_string(side) + "x" + std::to_string(side) + "x3 input");
  }
  if (in.preprocessing_tag != tag_) {
    throw Error(ErrorCode::kShapeMismatch,
                "input normalized as '" + in.preprocessing_tag + "' but model expects '" + tag_ + "'");
  }
  return nn::hwc_to_chw<float>(in.data, 3, side, side);
}

std::vector<Probabilities> ModelHandle::predict(std::span<const imaging::ModelInput> batch) const {
  if (net_.output_size() != static_cast<int>(kNumLabels)) {
    throw Error(ErrorCode::kShapeMismatch, "network does not produce nine outputs");
  }
  std::vector<Probabilities> out;
  out.reserve(batch.size());
  for (const auto& in : batch) {
    const auto x = network_input(in);
    const auto z = net_.forward_logits(std::span<const float>(x));
    Probabilities p{};
    for (std::size_t k = 0; k < kNumLabels; ++k) {
      const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(z[k])));
      p[k] = std::clamp(s, kProbabilityFloor, 1.0 - kProbabilityFloor);
    }
    out.push_back(p);
  }
  return out;
}

ModelHandle build_woundnet(const ModelVariant& variant, const BackboneSource& backbone, int input_side,
                           std::uint64_t head_seed) {
  nn::Network<float> net(woundnet_architecture(input_side), variant.freeze_through_index);
  auto& params = net.params();
  std::string tag(imaging::kCaffeBgrTag);
  Provenance provenance = Provenance::kPretrainedBackbone;

  if (backbone.random_seed) {
    provenance = Provenance::kSeededRandomBackbone;
    std::mt19937_64 rng(*backbone.random_seed);
    for (std::size_t i : backbone_conv_indices()) {
      const double fan_in = static_cast<double>(net.output_shape(i - 1).c) * 9;
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (auto& w : params[i].weight) w = static_cast<float>(dist(rng));
    }
  } else {
    if (backbone.weights_path.empty() || !std::filesystem::exists(backbone.weights_path)) {
      throw Error(ErrorCode::kWeightsUnavailable,
                  "pretrained backbone weights not found at '" + backbone.weights_path + "'");
    }
    TensorArchive archive;
    try {
      archive = read_archive(backbone.weights_path);
    } catch (const Error& e) {
      throw Error(ErrorCode::kWeightsUnavailable, e.what());
    }
    if (archive.meta.value("kind", "") != "vgg16-backbone") {
      throw Error(ErrorCode::kWeightsUnavailable, backbone.weights_path + " is not a vgg16-backbone archive");
    }
    tag = archive.meta.value("preprocessing_tag", std::string(imaging::kCaffeBgrTag));
    for (std::size_t i : backbone_conv_indices()) {
      const std::string& name = net.layers()[i].name;
      const TensorRecord* k = archive.find(name + "/kernel");
      const TensorRecord* b = archive.find(name + "/bias");
      if (!k || !b || k->shape != weight_shape(net, i) || b->data.size() != params[i].bias.size()) {
        throw Error(ErrorCode::kWeightsUnavailable, "backbone archive lacks a matching " + name);
      }
      params[i].weight = k->data;
      params[i].bias = b->data;
    }
  }

  // Head: uniform fan-in scaling, seeded per variant.
  std::mt19937_64 rng(variant_seed(head_seed, variant.id));
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    if (net.layers()[i].kind != LayerKind::kDense) continue;
    const double fan_in = net.output_shape(i - 1).c;
    const double gain = net.layers()[i].activation == Activation::kRelu ? 6.0 : 3.0;
    const double limit = std::sqrt(gain / fan_in);
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& w : params[i].weight) w = static_cast<float>(dist(rng));
    std::fill(params[i].bias.begin(), params[i].bias.end(), 0.f);
  }
  return ModelHandle(std::move(net), variant, provenance, tag);
}

std::size_t trainable_parameter_count(const ModelHandle& model) {
  return model.network().trainable_parameter_count();
}

std::uint64_t frozen_checksum(const nn::Network<float>& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto& params = net.params();
  for (std::size_t i = 0; i < params.size() && static_cast<int>(i) <= net.freeze_through_index(); ++i) {
    h = fnv1a64(params[i].weight, h);
    h = fnv1a64(params[i].bias, h);
  }
  return h;
}

nlohmann::json architecture_to_json(const std::vector<LayerSpec>& layers) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    nlohmann::json j = {{"index", i}, {"kind", kind_name(l.kind)}, {"name", l.name}};
    switch (l.kind) {
      case LayerKind::kInput:
        j["channels"] = l.channels;
        j["side"] = l.side;
        break;
      case LayerKind::kConv2D:
      case LayerKind::kDense:
        j["units"] = l.units;
        j["activation"] = activation_name(l.activation);
        break;
      case LayerKind::kDropout:
        j["rate"] = l.rate;
        break;
      default:
        break;
    }
    arr.push_back(j);
  }
  return arr;
}

std::vector<LayerSpec> architecture_from_json(const nlohmann::json& arr) {
  std::vector<LayerSpec> layers;
  try {
    for (const auto& j : arr) {
      LayerSpec l;
      l.kind = kind_from_name(j.at("kind").get<std::string>());
      l.name = j.at("name").get<std::string>();
      l.units = j.value("units", 0);
      l.activation = activation_from_name(j.value("activation", "linear"));
      l.rate = j.value("rate", 0.0);
      l.channels = j.value("channels", 3);
      l.side = j.value("side", 0);
      layers.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptBundle, std::string("malformed architecture: ") + e.what());
  }
  return layers;
}

void export_backbone(const ModelHandle& model, const std::string& path) {
  TensorArchive archive;
  archive.meta = {{"kind", "vgg16-backbone"}, {"preprocessing_tag", model.preprocessing_tag()}};
  const auto& net = model.network();
  for (std::size_t i : backbone_conv_indices()) {
    archive.tensors.push_back({net.layers()[i].name + "/kernel", weight_shape(net, i), net.params()[i].weight});
    archive.tensors.push_back({net.layers()[i].name + "/bias",
                               {static_cast<std::int64_t>(net.params()[i].bias.size())},
                               net.params()[i].bias});
  }
  write_archive(archive, path);
}

void save_model(const ModelHandle& model, const std::string& path) {
  const auto& net = model.network();
  TensorArchive archive;
  archive.meta = {{"kind", "woundnet-model"},
                  {"variant", to_string(model.variant().id)},
                  {"freeze_through_index", model.variant().freeze_through_index},
                  {"layer_numbering", kLayerNumbering},
                  {"preprocessing_tag", model.preprocessing_tag()},
                  {"input_side", model.input_side()},
                  {"weights_provenance", to_string(model.provenance())},
                  {"training_history_digest", model.history_digest()},
                  {"architecture", architecture_to_json(net.layers())}};
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    if (net.params()[i].count() == 0) continue;
    archive.tensors.push_back({net.layers()[i].name + "/kernel", weight_shape(net, i), net.params()[i].weight});
    archive.tensors.push_back({net.layers()[i].name + "/bias",
                               {static_cast<std::int64_t>(net.params()[i].bias.size())},
                               net.params()[i].bias});
  }
  write_archive(archive, path);
}

ModelHandle load_model(const std::string& path) {
  const TensorArchive archive = read_archive(path);
  const auto& meta = archive.meta;
  try {
    if (meta.at("kind").get<std::string>() != "woundnet-model") {
      throw Error(ErrorCode::kCorruptBundle, path + " is not a woundnet model bundle");
    }
    auto variant = variant_from_name(meta.at("variant").get<std::string>());
    if (!variant) throw Error(ErrorCode::kCorruptBundle, path + ": unknown variant");
    variant->freeze_through_index = meta.at("freeze_through_index").get<int>();
    auto provenance = provenance_from_name(meta.at("weights_provenance").get<std::string>());
    if (!provenance) throw Error(ErrorCode::kCorruptBundle, path + ": unknown weights provenance");

    nn::Network<float> net;
    try {
      net = nn::Network<float>(architecture_from_json(meta.at("architecture")), variant->freeze_through_index);
    } catch (const std::invalid_argument& e) {
      throw Error(ErrorCode::kCorruptBundle, path + ": " + e.what());
    }
    std::size_t used = 0;
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
      auto& p = net.params()[i];
      if (p.count() == 0) continue;
      const std::string& name = net.layers()[i].name;
      const TensorRecord* k = archive.find(name + "/kernel");
      const TensorRecord* b = archive.find(name + "/bias");
      if (!k || !b || k->data.size() != p.weight.size() || b->data.size() != p.bias.size()) {
        throw Error(ErrorCode::kCorruptBundle, path + ": missing or mis-sized tensors for " + name);
      }
      p.weight = k->data;
      p.bias = b->data;
      used += 2;
    }
    if (used != archive.tensors.size()) throw Error(ErrorCode::kCorruptBundle, path + ": unexpected tensors");

    ModelHandle model(std::move(net), *variant, *provenance, meta.at("preprocessing_tag").get<std::string>());
    model.set_history_digest(meta.value("training_history_digest", ""));
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptBundle, path + ": malformed metadata: " + e.what());
  }
}

}  // namespace deepwound::woundnet
