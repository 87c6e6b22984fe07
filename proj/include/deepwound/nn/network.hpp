#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace deepwound::nn {

enum class LayerKind { kInput, kConv2D, kMaxPool, kFlatten, kDense, kDropout };
enum class Activation { kLinear, kRelu, kSigmoid };

/// One entry of an architecture description. Conv layers are 3x3, stride 1,
/// same padding; pooling is 2x2 with stride 2 (floor).
struct LayerSpec {
  LayerKind kind = LayerKind::kInput;
  std::string name;
  int units = 0;  // conv filters or dense units
  Activation activation = Activation::kLinear;
  double rate = 0.0;  // dropout rate
  int channels = 3;   // input layer only
  int side = 0;       // input layer only

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Shape {
  int c = 0;
  int h = 1;
  int w = 1;
  std::size_t size() const { return static_cast<std::size_t>(c) * h * w; }
};

template <typename T>
struct LayerParams {
  std::vector<T> weight;  // conv: K x C x 3 x 3, dense: out x in
  std::vector<T> bias;
  std::size_t count() const { return weight.size() + bias.size(); }
};

enum class Mode { kInference, kTraining };

template <typename T>
struct Trace {
  std::vector<std::vector<T>> outputs;  // outputs[i] is the output of layer i
  std::vector<std::vector<T>> dropout_scale;
};

template <typename T>
class Network {
 public:
  using Vec = std::vector<T>;
  using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapR = Eigen::Map<MatR>;
  using CMapR = Eigen::Map<const MatR>;
  using VecE = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  Network() = default;

  explicit Network(std::vector<LayerSpec> layers, int freeze_through_index = 0)
      : layers_(std::move(layers)), freeze_through_(freeze_through_index) {
    if (layers_.empty() || layers_.front().kind != LayerKind::kInput) {
      throw std::invalid_argument("architecture must start with an input layer");
    }
    shapes_.reserve(layers_.size());
    params_.resize(layers_.size());
    Shape s{layers_[0].channels, layers_[0].side, layers_[0].side};
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const LayerSpec& l = layers_[i];
      switch (l.kind) {
        case LayerKind::kInput:
          if (i != 0) throw std::invalid_argument("input layer must come first");
          break;
        case LayerKind::kConv2D:
          params_[i].weight.assign(static_cast<std::size_t>(l.units) * s.c * 9, T(0));
          params_[i].bias.assign(l.units, T(0));
          s = Shape{l.units, s.h, s.w};
          break;
        case LayerKind::kMaxPool:
          s = Shape{s.c, s.h / 2, s.w / 2};
          if (s.h == 0 || s.w == 0) throw std::invalid_argument("pooling below 1x1");
          break;
        case LayerKind::kFlatten:
          s = Shape{static_cast<int>(s.size()), 1, 1};
          break;
        case LayerKind::kDense:
          if (s.h != 1 || s.w != 1) throw std::invalid_argument("dense layer needs a flat input");
          params_[i].weight.assign(static_cast<std::size_t>(l.units) * s.c, T(0));
          params_[i].bias.assign(l.units, T(0));
          s = Shape{l.units, 1, 1};
          break;
        case LayerKind::kDropout:
          if (l.rate < 0 || l.rate >= 1) throw std::invalid_argument("dropout rate must be in [0,1)");
          break;
      }
      shapes_.push_back(s);
    }
    if (layers_.back().kind != LayerKind::kDense) {
      throw std::invalid_argument("architecture must end with a dense layer");
    }
  }

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const Shape& output_shape(std::size_t i) const { return shapes_[i]; }
  const Shape& input_shape() const { return shapes_.front(); }
  int output_size() const { return shapes_.back().c; }

  int freeze_through_index() const { return freeze_through_; }
  void set_freeze_through_index(int idx) { freeze_through_ = idx; }
  bool is_trainable(std::size_t i) const {
    return static_cast<int>(i) > freeze_through_ && params_[i].count() > 0;
  }

  std::vector<LayerParams<T>>& params() { return params_; }
  const std::vector<LayerParams<T>>& params() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.count();
    return n;
  }
  std::size_t trainable_parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (is_trainable(i)) n += params_[i].count();
    }
    return n;
  }

  /// Zeroed gradient buffers shaped like the parameters.
  std::vector<LayerParams<T>> zero_gradients() const {
    std::vector<LayerParams<T>> g(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      g[i].weight.assign(params_[i].weight.size(), T(0));
      g[i].bias.assign(params_[i].bias.size(), T(0));
    }
    return g;
  }

  /// Runs one sample (CHW layout) and returns the pre-activation output of
  /// the final layer. When `trace` is given, every layer output is kept for
  /// backward().
  template <typename Rng = std::mt19937_64>
  Vec forward_logits(std::span<const T> input, Mode mode = Mode::kInference, Trace<T>* trace = nullptr,
                     Rng* rng = nullptr) const {
    if (input.size() != shapes_.front().size()) {
      throw std::invalid_argument("input size " + std::to_string(input.size()) + " != expected " +
                                  std::to_string(shapes_.front().size()));
    }
    if (trace) {
      trace->outputs.assign(layers_.size(), {});
      trace->dropout_scale.assign(layers_.size(), {});
    }
    const std::size_t last = layers_.size() - 1;
    Vec cur(input.begin(), input.end());
    for (std::size_t i = 1; i <= last; ++i) {
      if (trace) trace->outputs[i - 1] = cur;
      cur = forward_layer(i, cur, mode, trace ? &trace->dropout_scale[i] : nullptr, rng, i != last);
    }
    if (trace) trace->outputs.back() = cur;
    return cur;
  }

  /// forward_logits() followed by the final layer's activation.
  template <typename Rng = std::mt19937_64>
  Vec forward(std::span<const T> input, Mode mode = Mode::kInference, Trace<T>* trace = nullptr,
              Rng* rng = nullptr) const {
    Vec out = forward_logits(input, mode, trace, rng);
    for (auto& v : out) v = activate(layers_.back().activation, v);
    return out;
  }

  /// Backpropagates `grad_logits` (gradient w.r.t. the pre-activation output
  /// of the final layer). Parameter gradients of trainable layers are added
  /// to `grads`. If `input_grad` is non-null, the gradient w.r.t. the input
  /// is written there and propagation runs through frozen layers too.
  void backward(const Trace<T>& trace, std::span<const T> grad_logits, std::vector<LayerParams<T>>* grads,
                Vec* input_grad = nullptr) const {
    const std::size_t last = layers_.size() - 1;
    std::size_t stop = 1;
    if (!input_grad) {
      // Nothing below the first trainable layer needs a gradient.
      stop = last;
      for (std::size_t i = 1; i <= last; ++i) {
        if (is_trainable(i)) {
          stop = i;
          break;
        }
      }
    }
    Vec grad(grad_logits.begin(), grad_logits.end());
    for (std::size_t i = last; i >= 1; --i) {
      const bool need_dx = i > stop || input_grad != nullptr;
      const bool pre_activation = (i == last);
      LayerParams<T>* g = (grads && is_trainable(i)) ? &(*grads)[i] : nullptr;
      Vec dx = backward_layer(i, trace, grad, pre_activation, g, need_dx);
      if (!need_dx) break;
      grad = std::move(dx);
      if (i == 1) break;
    }
    if (input_grad) *input_grad = std::move(grad);
  }

 private:
  static T activate(Activation a, T v) {
    switch (a) {
      case Activation::kRelu: return v > T(0) ? v : T(0);
      case Activation::kSigmoid: return T(1) / (T(1) + std::exp(-v));
      case Activation::kLinear: break;
    }
    return v;
  }

  // Multiplies the upstream gradient by the activation derivative, expressed
  // through the stored post-activation output.
  static void activation_backward(Activation a, std::span<const T> out, Vec& grad) {
    switch (a) {
      case Activation::kRelu:
        for (std::size_t k = 0; k < grad.size(); ++k) {
          if (!(out[k] > T(0))) grad[k] = T(0);
        }
        break;
      case Activation::kSigmoid:
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] *= out[k] * (T(1) - out[k]);
        break;
      case Activation::kLinear:
        break;
    }
  }

  static void im2col(std::span<const T> in, const Shape& s, MatR& col) {
    const int hw = s.h * s.w;
    col.resize(static_cast<Eigen::Index>(s.c) * 9, hw);
    for (int c = 0; c < s.c; ++c) {
      const T* plane = in.data() + static_cast<std::size_t>(c) * hw;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          T* row = col.row((c * 3 + ky) * 3 + kx).data();
          for (int y = 0; y < s.h; ++y) {
            const int iy = y + ky - 1;
            T* dst = row + static_cast<std::size_t>(y) * s.w;
            if (iy < 0 || iy >= s.h) {
              std::fill(dst, dst + s.w, T(0));
              continue;
            }
            const T* src = plane + static_cast<std::size_t>(iy) * s.w;
            for (int x = 0; x < s.w; ++x) {
              const int ix = x + kx - 1;
              dst[x] = (ix >= 0 && ix < s.w) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }

  static void col2im(const MatR& col, const Shape& s, Vec& out) {
    const int hw = s.h * s.w;
    out.assign(s.size(), T(0));
    for (int c = 0; c < s.c; ++c) {
      T* plane = out.data() + static_cast<std::size_t>(c) * hw;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const T* row = col.row((c * 3 + ky) * 3 + kx).data();
          for (int y = 0; y < s.h; ++y) {
            const int iy = y + ky - 1;
            if (iy < 0 || iy >= s.h) continue;
            T* dst = plane + static_cast<std::size_t>(iy) * s.w;
            const T* src = row + static_cast<std::size_t>(y) * s.w;
            for (int x = 0; x < s.w; ++x) {
              const int ix = x + kx - 1;
              if (ix >= 0 && ix < s.w) dst[ix] += src[x];
            }
          }
        }
      }
    }
  }

  template <typename Rng>
  Vec forward_layer(std::size_t i, const Vec& in, Mode mode, Vec* dropout_scale, Rng* rng,
                    bool apply_activation) const {
    const LayerSpec& l = layers_[i];
    const Shape& is = shapes_[i - 1];
    const Shape& os = shapes_[i];
    const LayerParams<T>& p = params_[i];
    Vec out(os.size());
    switch (l.kind) {
      case LayerKind::kConv2D: {
        MatR col;
        im2col(in, is, col);
        CMapR w(p.weight.data(), os.c, static_cast<Eigen::Index>(is.c) * 9);
        MapR o(out.data(), os.c, static_cast<Eigen::Index>(os.h) * os.w);
        o.noalias() = w * col;
        for (int k = 0; k < os.c; ++k) {
          o.row(k).array() += p.bias[k];
        }
        if (apply_activation) {
          for (auto& v : out) v = activate(l.activation, v);
        }
        break;
      }
      case LayerKind::kMaxPool: {
        for (int c = 0; c < os.c; ++c) {
          const T* plane = in.data() + static_cast<std::size_t>(c) * is.h * is.w;
          for (int y = 0; y < os.h; ++y) {
            for (int x = 0; x < os.w; ++x) {
              const T* a = plane + static_cast<std::size_t>(2 * y) * is.w + 2 * x;
              const T* b = a + is.w;
              out[(static_cast<std::size_t>(c) * os.h + y) * os.w + x] =
                  std::max(std::max(a[0], a[1]), std::max(b[0], b[1]));
            }
          }
        }
        break;
      }
      case LayerKind::kFlatten:
        out = in;
        break;
      case LayerKind::kDense: {
        CMapR w(p.weight.data(), os.c, is.c);
        Eigen::Map<const VecE> x(in.data(), is.c);
        Eigen::Map<VecE> y(out.data(), os.c);
        Eigen::Map<const VecE> b(p.bias.data(), os.c);
        y.noalias() = w * x;
        y += b;
        if (apply_activation) {
          for (auto& v : out) v = activate(l.activation, v);
        }
        break;
      }
      case LayerKind::kDropout: {
        out = in;
        if (mode == Mode::kTraining && l.rate > 0) {
          if (!rng) throw std::invalid_argument("training-mode dropout needs a random source");
          std::bernoulli_distribution keep(1.0 - l.rate);
          const T scale = T(1) / T(1.0 - l.rate);
          Vec mask(out.size());
          for (std::size_t k = 0; k < out.size(); ++k) {
            mask[k] = keep(*rng) ? scale : T(0);
            out[k] *= mask[k];
          }
          if (dropout_scale) *dropout_scale = std::move(mask);
        }
        break;
      }
      case LayerKind::kInput:
        break;
    }
    return out;
  }

  Vec backward_layer(std::size_t i, const Trace<T>& trace, Vec& grad, bool pre_activation,
                     LayerParams<T>* g, bool need_dx) const {
    const LayerSpec& l = layers_[i];
    const Shape& is = shapes_[i - 1];
    const Shape& os = shapes_[i];
    const Vec& in = trace.outputs[i - 1];
    Vec dx;
    switch (l.kind) {
      case LayerKind::kConv2D: {
        if (!pre_activation) activation_backward(l.activation, trace.outputs[i], grad);
        CMapR dz(grad.data(), os.c, static_cast<Eigen::Index>(os.h) * os.w);
        MatR col;
        if (g || need_dx) im2col(in, is, col);
        if (g) {
          MapR dw(g->weight.data(), os.c, static_cast<Eigen::Index>(is.c) * 9);
          dw.noalias() += dz * col.transpose();
          // Plain loop: Eigen's vectorised sum() peels by runtime alignment,
          // which made the bias gradient differ between identical runs.
          const std::size_t hw = static_cast<std::size_t>(os.h) * os.w;
          for (int k = 0; k < os.c; ++k) {
            const T* row = grad.data() + static_cast<std::size_t>(k) * hw;
            T acc = T(0);
            for (std::size_t j = 0; j < hw; ++j) acc += row[j];
            g->bias[k] += acc;
          }
        }
        if (need_dx) {
          CMapR w(params_[i].weight.data(), os.c, static_cast<Eigen::Index>(is.c) * 9);
          col.noalias() = w.transpose() * dz;
          col2im(col, is, dx);
        }
        break;
      }
      case LayerKind::kMaxPool: {
        if (!need_dx) break;
        dx.assign(is.size(), T(0));
        for (int c = 0; c < os.c; ++c) {
          const std::size_t base = static_cast<std::size_t>(c) * is.h * is.w;
          for (int y = 0; y < os.h; ++y) {
            for (int x = 0; x < os.w; ++x) {
              const std::size_t cand[4] = {base + static_cast<std::size_t>(2 * y) * is.w + 2 * x,
                                           base + static_cast<std::size_t>(2 * y) * is.w + 2 * x + 1,
                                           base + static_cast<std::size_t>(2 * y + 1) * is.w + 2 * x,
                                           base + static_cast<std::size_t>(2 * y + 1) * is.w + 2 * x + 1};
              std::size_t best = cand[0];
              for (int k = 1; k < 4; ++k) {
                if (in[cand[k]] > in[best]) best = cand[k];
              }
              dx[best] += grad[(static_cast<std::size_t>(c) * os.h + y) * os.w + x];
            }
          }
        }
        break;
      }
      case LayerKind::kFlatten:
        if (need_dx) dx = grad;
        break;
      case LayerKind::kDense: {
        if (!pre_activation) activation_backward(l.activation, trace.outputs[i], grad);
        Eigen::Map<const VecE> dz(grad.data(), os.c);
        if (g) {
          Eigen::Map<const VecE> x(in.data(), is.c);
          MapR dw(g->weight.data(), os.c, is.c);
          dw.noalias() += dz * x.transpose();
          Eigen::Map<VecE> db(g->bias.data(), os.c);
          db += dz;
        }
        if (need_dx) {
          dx.resize(is.c);
          CMapR w(params_[i].weight.data(), os.c, is.c);
          Eigen::Map<VecE> d(dx.data(), is.c);
          d.noalias() = w.transpose() * dz;
        }
        break;
      }
      case LayerKind::kDropout: {
        if (!need_dx) break;
        dx = grad;
        const Vec& mask = trace.dropout_scale[i];
        if (!mask.empty()) {
          for (std::size_t k = 0; k < dx.size(); ++k) dx[k] *= mask[k];
        }
        break;
      }
      case LayerKind::kInput:
        break;
    }
    return dx;
  }

  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;
  std::vector<LayerParams<T>> params_;
  int freeze_through_ = 0;
};

/// Interleaved HWC (image order) to planar CHW (network order).
template <typename T>
std::vector<T> hwc_to_chw(std::span<const float> hwc, int channels, int height, int width) {
  std::vector<T> out(hwc.size());
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < channels; ++c) out[c * plane + p] = static_cast<T>(hwc[p * channels + c]);
  }
  return out;
}

template <typename T>
std::vector<T> chw_to_hwc(std::span<const T> chw, int channels, int height, int width) {
  std::vector<T> out(chw.size());
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < channels; ++c) out[p * channels + c] = chw[c * plane + p];
  }
  return out;
}

}  // namespace deepwound::nn
