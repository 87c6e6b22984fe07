#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace deepwound::imaging {

inline constexpr int kInputSide = 224;

/// 8-bit interleaved image, row-major, `channels` samples per pixel.
struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  RawImage() = default;
  RawImage(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  bool empty() const { return width <= 0 || height <= 0 || channels <= 0; }

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const RawImage&, const RawImage&) = default;
};

struct ClaheConfig {
  int tile_grid = 8;
  double clip_factor = 1.0;
};

/// Normalization conventions of the pretrained backbones we know about.
/// "vgg16-caffe-bgr": RGB->BGR, subtract the ImageNet BGR means (Keras VGG16).
/// "vgg16-torch-rgb": scale to [0,1], subtract mean, divide by std (torchvision).
inline constexpr std::string_view kCaffeBgrTag = "vgg16-caffe-bgr";
inline constexpr std::string_view kTorchRgbTag = "vgg16-torch-rgb";

inline constexpr float kCaffeMeanBgr[3] = {103.939f, 116.779f, 123.68f};
inline constexpr float kTorchMeanRgb[3] = {0.485f, 0.456f, 0.406f};
inline constexpr float kTorchStdRgb[3] = {0.229f, 0.224f, 0.225f};

/// Network input: side x side x 3 floats, interleaved (HWC) like RawImage.
struct ModelInput {
  int side = 0;
  std::vector<float> data;
  std::string preprocessing_tag;

  friend bool operator==(const ModelInput&, const ModelInput&) = default;
};

/// Accepts JPEG and PNG. Grayscale is replicated to 3 channels, alpha dropped.
/// EXIF orientation is ignored.
RawImage decode_image(std::span<const std::uint8_t> bytes);
RawImage read_image(const std::string& path);

/// Lossless PNG encoding of the pixel data only; no metadata is written.
std::vector<std::uint8_t> encode_png(const RawImage& img);
void write_png(const RawImage& img, const std::string& path);

/// Bilinear resampling with pixel-center alignment (half-pixel offsets),
/// edge samples clamped.
RawImage resize_bilinear(const RawImage& img, int width, int height);
RawImage resize_to_input(const RawImage& img, int side = kInputSide);

/// Contrast-limited adaptive histogram equalization of the luminance channel.
/// Tiles form a tile_grid x tile_grid grid over the image; per-tile lookup
/// tables are blended bilinearly between tile centers.
RawImage apply_clahe(const RawImage& img, const ClaheConfig& cfg = {});

/// Single-channel CLAHE on an 8-bit plane (width*height bytes).
std::vector<std::uint8_t> clahe_plane(std::span<const std::uint8_t> plane, int width, int height,
                                      const ClaheConfig& cfg);

ModelInput to_model_input(const RawImage& img, std::string_view tag = kCaffeBgrTag,
                          int side = kInputSide);

/// decode -> resize -> CLAHE, the cached part of the pipeline.
RawImage preprocess(const RawImage& img, int side = kInputSide, const ClaheConfig& cfg = {});

}  // namespace deepwound::imaging
