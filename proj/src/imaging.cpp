#include "deepwound/imaging.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "deepwound/error.hpp"

namespace deepwound::imaging {

namespace {

enum class Format { kJpeg, kPng, kOtherKnown, kUnknown };

bool starts_with(std::span<const std::uint8_t> bytes, std::initializer_list<std::uint8_t> magic) {
  if (bytes.size() < magic.size()) return false;
  return std::equal(magic.begin(), magic.end(), bytes.begin());
}

Format sniff(std::span<const std::uint8_t> bytes) {
  if (starts_with(bytes, {0xFF, 0xD8, 0xFF})) return Format::kJpeg;
  if (starts_with(bytes, {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A})) return Format::kPng;
  if (starts_with(bytes, {'G', 'I', 'F', '8'}) || starts_with(bytes, {'B', 'M'}) ||
      starts_with(bytes, {'I', 'I', 0x2A, 0x00}) || starts_with(bytes, {'M', 'M', 0x00, 0x2A}) ||
      (starts_with(bytes, {'R', 'I', 'F', 'F'}) && bytes.size() >= 12 &&
       std::memcmp(bytes.data() + 8, "WEBP", 4) == 0)) {
    return Format::kOtherKnown;
  }
  return Format::kUnknown;
}

std::uint8_t saturate_round(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

// Maps a pixel coordinate to (lower tile, upper tile, weight of upper) given
// the tile centers along one axis.
struct AxisBlend {
  int lo;
  int hi;
  float w;
};

std::vector<AxisBlend> axis_blend(int extent, int grid) {
  std::vector<double> centers(grid);
  for (int i = 0; i < grid; ++i) {
    const int a = static_cast<int>(static_cast<long>(i) * extent / grid);
    const int b = static_cast<int>(static_cast<long>(i + 1) * extent / grid);
    centers[i] = 0.5 * (a + b);
  }
  std::vector<AxisBlend> out(extent);
  for (int x = 0; x < extent; ++x) {
    if (x <= centers.front()) {
      out[x] = {0, 0, 0.f};
    } else if (x >= centers.back()) {
      out[x] = {grid - 1, grid - 1, 0.f};
    } else {
      int i = 0;
      while (i + 1 < grid && centers[i + 1] <= x) ++i;
      const double t = (x - centers[i]) / (centers[i + 1] - centers[i]);
      out[x] = {i, i + 1, static_cast<float>(t)};
    }
  }
  return out;
}

using Lut = std::array<std::uint8_t, 256>;

Lut tile_lut(std::span<const std::uint8_t> plane, int width, int x0, int x1, int y0, int y1,
             double clip_factor) {
  std::array<int, 256> hist{};
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) ++hist[plane[static_cast<std::size_t>(y) * width + x]];
  }
  const int area = (x1 - x0) * (y1 - y0);

  Lut lut{};
  const auto occupied = std::count_if(hist.begin(), hist.end(), [](int h) { return h > 0; });
  if (occupied <= 1) {
    // Flat tile: nothing to equalize.
    for (int v = 0; v < 256; ++v) lut[v] = static_cast<std::uint8_t>(v);
    return lut;
  }

  // Integer clip limit; the excess goes back as an even batch per bin plus a
  // residual spread at a fixed stride from bin 0.
  const int clip = std::max(static_cast<int>(clip_factor * area / 256.0), 1);
  int excess = 0;
  for (int& h : hist) {
    if (h > clip) {
      excess += h - clip;
      h = clip;
    }
  }
  const int batch = excess / 256;
  int residual = excess - batch * 256;
  for (int& h : hist) h += batch;
  if (residual > 0) {
    const int step = std::max(256 / residual, 1);
    for (int v = 0; v < 256 && residual > 0; v += step, --residual) ++hist[v];
  }

  const float scale = 255.f / static_cast<float>(area);
  int cdf = 0;
  for (int v = 0; v < 256; ++v) {
    cdf += hist[v];
    lut[v] = saturate_round(static_cast<float>(cdf) * scale);
  }
  return lut;
}

}  // namespace

RawImage decode_image(std::span<const std::uint8_t> bytes) {
  switch (sniff(bytes)) {
    case Format::kJpeg:
    case Format::kPng:
      break;
    case Format::kOtherKnown:
      throw Error(ErrorCode::kUnsupportedFormat, "only JPEG and PNG payloads are accepted");
    case Format::kUnknown:
      throw Error(ErrorCode::kMalformedImage, "payload is not a recognizable image");
  }

  cv::Mat decoded;
  try {
    const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8U,
                      const_cast<std::uint8_t*>(bytes.data()));
    decoded = cv::imdecode(buf, cv::IMREAD_COLOR | cv::IMREAD_IGNORE_ORIENTATION);
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::kMalformedImage, e.what());
  }
  if (decoded.empty() || decoded.type() != CV_8UC3) {
    throw Error(ErrorCode::kMalformedImage, "image data could not be decoded");
  }

  RawImage img(decoded.cols, decoded.rows, 3);
  for (int y = 0; y < decoded.rows; ++y) {
    const auto* row = decoded.ptr<cv::Vec3b>(y);
    for (int x = 0; x < decoded.cols; ++x) {
      img.at(x, y, 0) = row[x][2];
      img.at(x, y, 1) = row[x][1];
      img.at(x, y, 2) = row[x][0];
    }
  }
  return img;
}

RawImage read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open image " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const RawImage& img) {
  if (img.empty()) throw Error(ErrorCode::kEmptyImage, "cannot encode an empty image");
  cv::Mat mat;
  if (img.channels == 3) {
    mat.create(img.height, img.width, CV_8UC3);
    for (int y = 0; y < img.height; ++y) {
      auto* row = mat.ptr<cv::Vec3b>(y);
      for (int x = 0; x < img.width; ++x) {
        row[x] = cv::Vec3b(img.at(x, y, 2), img.at(x, y, 1), img.at(x, y, 0));
      }
    }
  } else if (img.channels == 1) {
    mat = cv::Mat(img.height, img.width, CV_8U, const_cast<std::uint8_t*>(img.pixels.data())).clone();
  } else {
    throw Error(ErrorCode::kShapeMismatch, "PNG export supports 1 or 3 channels");
  }
  std::vector<std::uint8_t> out;
  cv::imencode(".png", mat, out);
  return out;
}

void write_png(const RawImage& img, const std::string& path) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

RawImage resize_bilinear(const RawImage& img, int width, int height) {
  if (img.empty()) throw Error(ErrorCode::kEmptyImage, "cannot resize an empty image");
  if (width <= 0 || height <= 0) throw Error(ErrorCode::kInvalidConfig, "target size must be positive");
  if (img.width == width && img.height == height) return img;

  struct Tap {
    int i0;
    int i1;
    double f;
  };
  auto taps = [](int src, int dst) {
    std::vector<Tap> t(dst);
    const double scale = static_cast<double>(src) / dst;
    for (int d = 0; d < dst; ++d) {
      const double s = std::clamp((d + 0.5) * scale - 0.5, 0.0, static_cast<double>(src - 1));
      const int i0 = static_cast<int>(std::floor(s));
      t[d] = {i0, std::min(i0 + 1, src - 1), s - i0};
    }
    return t;
  };
  const auto tx = taps(img.width, width);
  const auto ty = taps(img.height, height);

  RawImage out(width, height, img.channels);
  for (int y = 0; y < height; ++y) {
    const Tap& vy = ty[y];
    for (int x = 0; x < width; ++x) {
      const Tap& vx = tx[x];
      for (int c = 0; c < img.channels; ++c) {
        const double top = img.at(vx.i0, vy.i0, c) * (1 - vx.f) + img.at(vx.i1, vy.i0, c) * vx.f;
        const double bot = img.at(vx.i0, vy.i1, c) * (1 - vx.f) + img.at(vx.i1, vy.i1, c) * vx.f;
        out.at(x, y, c) = saturate_round(top * (1 - vy.f) + bot * vy.f);
      }
    }
  }
  return out;
}

RawImage resize_to_input(const RawImage& img, int side) { return resize_bilinear(img, side, side); }

std::vector<std::uint8_t> clahe_plane(std::span<const std::uint8_t> plane, int width, int height,
                                      const ClaheConfig& cfg) {
  if (cfg.tile_grid < 1 || !(cfg.clip_factor > 0)) {
    throw Error(ErrorCode::kInvalidConfig, "tile_grid must be >= 1 and clip_factor > 0");
  }
  if (width < cfg.tile_grid || height < cfg.tile_grid) {
    throw Error(ErrorCode::kImageTooSmall, "image is smaller than the CLAHE tile grid");
  }
  const int grid = cfg.tile_grid;
  std::vector<Lut> luts(static_cast<std::size_t>(grid) * grid);
  for (int ty = 0; ty < grid; ++ty) {
    const int y0 = static_cast<int>(static_cast<long>(ty) * height / grid);
    const int y1 = static_cast<int>(static_cast<long>(ty + 1) * height / grid);
    for (int tx = 0; tx < grid; ++tx) {
      const int x0 = static_cast<int>(static_cast<long>(tx) * width / grid);
      const int x1 = static_cast<int>(static_cast<long>(tx + 1) * width / grid);
      luts[ty * grid + tx] = tile_lut(plane, width, x0, x1, y0, y1, cfg.clip_factor);
    }
  }

  const auto bx = axis_blend(width, grid);
  const auto by = axis_blend(height, grid);
  std::vector<std::uint8_t> out(plane.size());
  for (int y = 0; y < height; ++y) {
    const AxisBlend& b = by[y];
    const Lut* upper = &luts[static_cast<std::size_t>(b.lo) * grid];
    const Lut* lower = &luts[static_cast<std::size_t>(b.hi) * grid];
    for (int x = 0; x < width; ++x) {
      const AxisBlend& a = bx[x];
      const std::uint8_t v = plane[static_cast<std::size_t>(y) * width + x];
      const float top = upper[a.lo][v] * (1.f - a.w) + upper[a.hi][v] * a.w;
      const float bot = lower[a.lo][v] * (1.f - a.w) + lower[a.hi][v] * a.w;
      out[static_cast<std::size_t>(y) * width + x] = saturate_round(top * (1.f - b.w) + bot * b.w);
    }
  }
  return out;
}

RawImage apply_clahe(const RawImage& img, const ClaheConfig& cfg) {
  if (img.empty()) throw Error(ErrorCode::kEmptyImage, "cannot equalize an empty image");
  if (img.channels == 1) {
    RawImage out = img;
    out.pixels = clahe_plane(img.pixels, img.width, img.height, cfg);
    return out;
  }
  if (img.channels != 3) throw Error(ErrorCode::kShapeMismatch, "CLAHE expects 1 or 3 channels");

  // BT.601 full-range luma. Shifting R, G and B by the same delta moves Y by
  // that delta and leaves Cb/Cr untouched, so the chroma is preserved exactly.
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  std::vector<std::uint8_t> luma(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = 0.299 * img.pixels[3 * i] + 0.587 * img.pixels[3 * i + 1] +
                     0.114 * img.pixels[3 * i + 2];
    luma[i] = saturate_round(y);
  }
  const auto equalized = clahe_plane(luma, img.width, img.height, cfg);

  RawImage out = img;
  for (std::size_t i = 0; i < n; ++i) {
    const int delta = static_cast<int>(equalized[i]) - static_cast<int>(luma[i]);
    if (delta == 0) continue;
    for (int c = 0; c < 3; ++c) {
      out.pixels[3 * i + c] =
          static_cast<std::uint8_t>(std::clamp(static_cast<int>(img.pixels[3 * i + c]) + delta, 0, 255));
    }
  }
  return out;
}

ModelInput to_model_input(const RawImage& img, std::string_view tag, int side) {
  if (img.width != side || img.height != side || img.channels != 3) {
    throw Error(ErrorCode::kShapeMismatch, "model input must be " + std::to_string(side) + "x" +
                                               std::to_string(side) + "x3, got " +
                                               std::to_string(img.width) + "x" +
                                               std::to_string(img.height) + "x" +
                                               std::to_string(img.channels));
  }
  ModelInput in;
  in.side = side;
  in.preprocessing_tag = std::string(tag);
  in.data.resize(img.pixels.size());
  const std::size_t n = static_cast<std::size_t>(side) * side;
  if (tag == kCaffeBgrTag) {
    for (std::size_t i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) {
        in.data[3 * i + c] = static_cast<float>(img.pixels[3 * i + (2 - c)]) - kCaffeMeanBgr[c];
      }
    }
  } else if (tag == kTorchRgbTag) {
    for (std::size_t i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) {
        in.data[3 * i + c] =
            (static_cast<float>(img.pixels[3 * i + c]) / 255.f - kTorchMeanRgb[c]) / kTorchStdRgb[c];
      }
    }
  } else {
    throw Error(ErrorCode::kInvalidConfig, "unknown preprocessing tag '" + std::string(tag) + "'");
  }
  return in;
}

RawImage preprocess(const RawImage& img, int side, const ClaheConfig& cfg) {
  return apply_clahe(resize_to_input(img, side), cfg);
}

}  // namespace deepwound::imaging
