#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "deepwound/archive.hpp"
#include "deepwound/classifier.hpp"
#include "deepwound/nn/network.hpp"

namespace deepwound::woundnet {

/// Layer numbering used by the freeze policy: input = 0, then every VGG-16
/// layer in order including pooling. 6, 10 and 14 are the pooling layers
/// closing blocks 2, 3 and 4.
inline constexpr std::string_view kLayerNumbering = "input=0; vgg16 conv+pool layers in order";

enum class VariantId { kA, kB, kC };

struct ModelVariant {
  VariantId id = VariantId::kA;
  int freeze_through_index = 6;

  static ModelVariant a() { return {VariantId::kA, 6}; }
  static ModelVariant b() { return {VariantId::kB, 10}; }
  static ModelVariant c() { return {VariantId::kC, 14}; }
  static std::vector<ModelVariant> all() { return {a(), b(), c()}; }

  friend bool operator==(const ModelVariant&, const ModelVariant&) = default;
};

std::string to_string(VariantId id);
std::optional<ModelVariant> variant_from_name(std::string_view name);

enum class Provenance { kPretrainedBackbone, kSeededRandomBackbone, kFineTuned };
std::string to_string(Provenance p);
std::optional<Provenance> provenance_from_name(std::string_view name);

/// Truncated VGG-16 (13 conv + 5 pool) with the multi-label head:
/// flatten, dense(1024, relu), dropout(0.5), dense(1024, relu), dropout(0.5),
/// dense(9, sigmoid).
std::vector<nn::LayerSpec> woundnet_architecture(int input_side = imaging::kInputSide);

/// Indices (into woundnet_architecture()) of the 13 convolutional layers.
std::vector<std::size_t> backbone_conv_indices();

/// Where backbone convolution weights come from.
struct BackboneSource {
  /// Tensor archive of kind "vgg16-backbone" (see tools/export_vgg16_backbone.py).
  std::string weights_path;
  /// When set, the backbone is He-initialised from this seed instead; for
  /// desk-scale runs where no pretrained weights are at hand.
  std::optional<std::uint64_t> random_seed;

  static BackboneSource pretrained(std::string path) { return {std::move(path), std::nullopt}; }
  static BackboneSource seeded_random(std::uint64_t seed) { return {{}, seed}; }
};

class ModelHandle : public Classifier {
 public:
  ModelHandle() = default;
  ModelHandle(nn::Network<float> net, ModelVariant variant, Provenance provenance, std::string tag);

  std::vector<Probabilities> predict(std::span<const imaging::ModelInput> batch) const override;
  int input_side() const override { return net_.input_shape().h; }
  std::string preprocessing_tag() const override { return tag_; }
  int freeze_through_index() const override { return variant_.freeze_through_index; }

  const ModelVariant& variant() const { return variant_; }
  Provenance provenance() const { return provenance_; }
  void set_provenance(Provenance p) { provenance_ = p; }
  const std::string& history_digest() const { return history_digest_; }
  void set_history_digest(std::string d) { history_digest_ = std::move(d); }

  const nn::Network<float>& network() const { return net_; }
  nn::Network<float>& network() { return net_; }

  /// CHW network input for a preprocessed image; checks side and tag.
  std::vector<float> network_input(const imaging::ModelInput& in) const;

 private:
  nn::Network<float> net_;
  ModelVariant variant_;
  Provenance provenance_ = Provenance::kPretrainedBackbone;
  std::string tag_;
  std::string history_digest_;
};

/// Loads (or seeds) the backbone, initialises the head from a per-variant
/// seed, and applies the variant's freeze index. Throws WeightsUnavailable if
/// the pretrained archive cannot be read or does not fit.
ModelHandle build_woundnet(const ModelVariant& variant, const BackboneSource& backbone,
                           int input_side = imaging::kInputSide, std::uint64_t head_seed = 0);

/// Parameters in layers with index > freeze_through_index.
std::size_t trainable_parameter_count(const ModelHandle& model);

/// Checksum over all parameters of layers at or below the freeze index.
std::uint64_t frozen_checksum(const nn::Network<float>& net);

/// Writes the 13 backbone conv layers as a "vgg16-backbone" archive.
void export_backbone(const ModelHandle& model, const std::string& path);

void save_model(const ModelHandle& model, const std::string& path);
/// Throws CorruptBundle on truncated, malformed or inconsistent files.
ModelHandle load_model(const std::string& path);

/// Serialization helpers shared with bundle manifests.
nlohmann::json architecture_to_json(const std::vector<nn::LayerSpec>& layers);
std::vector<nn::LayerSpec> architecture_from_json(const nlohmann::json& j);

}  // namespace deepwound::woundnet
