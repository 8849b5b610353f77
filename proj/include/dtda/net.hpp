// Small convolutional backbone with manual forward/backward passes.
//
// Topology: N conv blocks (3x3, stride 2, zero padding 1, ReLU) followed by
// global average pooling into a feature vector, then one or more linear heads
// off that shared feature. Parameters live in a single flat buffer in layer
// order (conv weights, conv bias, ... , head weights, head bias), which makes
// the optimizer, checkpoint blob, and parameter hashing trivial.
//
// The scalar type is a template parameter: training runs in float, gradient
// verification against finite differences runs the same code in double.
#pragma once

#include <span>
#include <vector>

#include "dtda/common.hpp"
#include "json.hpp"

namespace dtda {

struct ArchConfig {
  int image_size = 32;
  int in_channels = 3;
  std::vector<int> conv_channels{16, 32, 64};

  int feature_dim() const { return conv_channels.back(); }

  void validate() const {
    if (image_size < 8)
      throw ConfigError("arch image_size must be at least 8, got " + std::to_string(image_size));
    if (in_channels < 1)
      throw ConfigError("arch in_channels must be positive, got " + std::to_string(in_channels));
    if (conv_channels.empty()) throw ConfigError("arch conv_channels must not be empty");
    for (int c : conv_channels)
      if (c < 1) throw ConfigError("arch conv_channels entries must be positive");
  }

  bool operator==(const ArchConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ArchConfig& a) {
  j = nlohmann::json{{"image_size", a.image_size},
                     {"in_channels", a.in_channels},
                     {"conv_channels", a.conv_channels}};
}

inline void from_json(const nlohmann::json& j, ArchConfig& a) {
  ArchConfig d;
  a.image_size = j.value("image_size", d.image_size);
  a.in_channels = j.value("in_channels", d.in_channels);
  a.conv_channels = j.value("conv_channels", d.conv_channels);
}

namespace detail {

inline int conv_out_dim(int in) { return (in - 1) / 2 + 1; }  // k=3, s=2, p=1

struct ConvGeom {
  int cin, hin, win;
  int cout, hout, wout;
  size_t w_off, b_off;
};

struct HeadGeom {
  int width;
  size_t w_off, b_off;
};

}  // namespace detail

template <typename T>
class Net {
 public:
  Net(const ArchConfig& arch, std::vector<int> head_widths)
      : arch_(arch), head_widths_(std::move(head_widths)) {
    arch_.validate();
    if (head_widths_.empty()) throw ConfigError("net needs at least one head");
    for (int w : head_widths_)
      if (w < 1) throw ConfigError("head widths must be positive");

    size_t off = 0;
    int c = arch_.in_channels, h = arch_.image_size, w = arch_.image_size;
    for (int cout : arch_.conv_channels) {
      detail::ConvGeom g;
      g.cin = c;
      g.hin = h;
      g.win = w;
      g.cout = cout;
      g.hout = detail::conv_out_dim(h);
      g.wout = detail::conv_out_dim(w);
      g.w_off = off;
      off += size_t(cout) * c * 9;
      g.b_off = off;
      off += size_t(cout);
      convs_.push_back(g);
      c = cout;
      h = g.hout;
      w = g.wout;
    }
    for (int width : head_widths_) {
      detail::HeadGeom g;
      g.width = width;
      g.w_off = off;
      off += size_t(width) * arch_.feature_dim();
      g.b_off = off;
      off += size_t(width);
      heads_.push_back(g);
    }
    params_.assign(off, T(0));
  }

  const ArchConfig& arch() const { return arch_; }
  const std::vector<int>& head_widths() const { return head_widths_; }
  size_t param_count() const { return params_.size(); }
  std::vector<T>& params() { return params_; }
  const std::vector<T>& params() const { return params_; }
  size_t input_size() const {
    return size_t(arch_.in_channels) * arch_.image_size * arch_.image_size;
  }

  // He initialization for the conv stack, fan-in scaling for the heads.
  void init_params(Rng& rng) {
    for (const auto& g : convs_) {
      double scale = std::sqrt(2.0 / double(g.cin * 9));
      for (size_t i = 0; i < size_t(g.cout) * g.cin * 9; ++i)
        params_[g.w_off + i] = T(scale * rng.normal());
      for (int i = 0; i < g.cout; ++i) params_[g.b_off + size_t(i)] = T(0);
    }
    for (const auto& g : heads_) {
      double scale = std::sqrt(1.0 / double(arch_.feature_dim()));
      for (size_t i = 0; i < size_t(g.width) * arch_.feature_dim(); ++i)
        params_[g.w_off + i] = T(scale * rng.normal());
      for (int i = 0; i < g.width; ++i) params_[g.b_off + size_t(i)] = T(0);
    }
  }

  struct Cache {
    std::vector<T> input;
    std::vector<std::vector<T>> pre;  // pre-activation per conv layer
    std::vector<std::vector<T>> act;  // post-ReLU per conv layer
    std::vector<T> feature;
  };

  // Forward one sample. logits gets one row per head. A null cache skips
  // bookkeeping not needed for inference.
  void forward(std::span<const T> image, std::vector<std::vector<T>>& logits,
               std::vector<T>* feature_out = nullptr, Cache* cache = nullptr) const {
    if (image.size() != input_size())
      throw InputError("input image has " + std::to_string(image.size()) +
                       " values, expected " + std::to_string(input_size()));
    std::vector<T> cur(image.begin(), image.end());
    if (cache) {
      cache->input.assign(image.begin(), image.end());
      cache->pre.clear();
      cache->act.clear();
    }
    for (const auto& g : convs_) {
      std::vector<T> pre(size_t(g.cout) * g.hout * g.wout);
      conv_forward(g, cur.data(), pre.data());
      std::vector<T> act(pre.size());
      for (size_t i = 0; i < pre.size(); ++i) act[i] = pre[i] > T(0) ? pre[i] : T(0);
      if (cache) {
        cache->pre.push_back(pre);
        cache->act.push_back(act);
      }
      cur = std::move(act);
    }
    const auto& last = convs_.back();
    const T inv_area = T(1) / T(last.hout * last.wout);
    std::vector<T> feature(size_t(arch_.feature_dim()));
    for (int c = 0; c < last.cout; ++c) {
      T sum = T(0);
      const T* plane = cur.data() + size_t(c) * last.hout * last.wout;
      for (int i = 0; i < last.hout * last.wout; ++i) sum += plane[i];
      feature[size_t(c)] = sum * inv_area;
    }
    logits.resize(heads_.size());
    for (size_t hi = 0; hi < heads_.size(); ++hi) {
      const auto& g = heads_[hi];
      logits[hi].assign(size_t(g.width), T(0));
      for (int o = 0; o < g.width; ++o) {
        const T* wrow = params_.data() + g.w_off + size_t(o) * arch_.feature_dim();
        T z = params_[g.b_off + size_t(o)];
        for (int f = 0; f < arch_.feature_dim(); ++f) z += wrow[f] * feature[size_t(f)];
        logits[hi][size_t(o)] = z;
      }
    }
    if (feature_out) *feature_out = feature;
    if (cache) cache->feature = std::move(feature);
  }

  // Backward one sample from per-head logit gradients. Heads with an empty
  // gradient row contribute nothing. param_grads (when non-empty) accumulates
  // the parameter gradient; dimage (when non-empty) accumulates the input
  // gradient. Both may be used independently.
  void backward(const Cache& cache, const std::vector<std::vector<T>>& dlogits,
                std::span<T> param_grads, std::span<T> dimage = {}) const {
    if (dlogits.size() != heads_.size())
      throw InputError("backward expects one gradient row per head");
    const bool want_params = !param_grads.empty();
    if (want_params && param_grads.size() != params_.size())
      throw InputError("param gradient buffer has wrong size");
    if (!dimage.empty() && dimage.size() != input_size())
      throw InputError("input gradient buffer has wrong size");

    std::vector<T> dfeature(size_t(arch_.feature_dim()), T(0));
    for (size_t hi = 0; hi < heads_.size(); ++hi) {
      if (dlogits[hi].empty()) continue;
      const auto& g = heads_[hi];
      if (dlogits[hi].size() != size_t(g.width))
        throw InputError("head gradient row has wrong width");
      for (int o = 0; o < g.width; ++o) {
        T dz = dlogits[hi][size_t(o)];
        const T* wrow = params_.data() + g.w_off + size_t(o) * arch_.feature_dim();
        if (want_params) {
          T* gw = param_grads.data() + g.w_off + size_t(o) * arch_.feature_dim();
          for (int f = 0; f < arch_.feature_dim(); ++f)
            gw[f] += dz * cache.feature[size_t(f)];
          param_grads[g.b_off + size_t(o)] += dz;
        }
        for (int f = 0; f < arch_.feature_dim(); ++f) dfeature[size_t(f)] += wrow[f] * dz;
      }
    }

    const auto& last = convs_.back();
    const T inv_area = T(1) / T(last.hout * last.wout);
    std::vector<T> dact(size_t(last.cout) * last.hout * last.wout);
    for (int c = 0; c < last.cout; ++c) {
      T v = dfeature[size_t(c)] * inv_area;
      T* plane = dact.data() + size_t(c) * last.hout * last.wout;
      for (int i = 0; i < last.hout * last.wout; ++i) plane[i] = v;
    }

    for (size_t li = convs_.size(); li-- > 0;) {
      const auto& g = convs_[li];
      const auto& pre = cache.pre[li];
      std::vector<T> dpre(dact.size());
      for (size_t i = 0; i < dact.size(); ++i)
        dpre[i] = pre[i] > T(0) ? dact[i] : T(0);
      const T* input = li == 0 ? cache.input.data() : cache.act[li - 1].data();
      size_t in_size = size_t(g.cin) * g.hin * g.win;
      std::vector<T> dinput;
      T* din = nullptr;
      if (li > 0) {
        dinput.assign(in_size, T(0));
        din = dinput.data();
      } else if (!dimage.empty()) {
        din = dimage.data();  // accumulate into caller buffer
      }
      conv_backward(g, input, dpre.data(),
                    want_params ? param_grads.data() : nullptr, din);
      if (li > 0) dact = std::move(dinput);
    }
  }

  std::vector<std::pair<size_t, size_t>> head_param_ranges() const {
    std::vector<std::pair<size_t, size_t>> out;
    for (const auto& g : heads_)
      out.push_back({g.w_off, g.b_off + size_t(g.width)});
    return out;
  }

 private:
  void conv_forward(const detail::ConvGeom& g, const T* in, T* pre) const {
    const T* w = params_.data() + g.w_off;
    const T* b = params_.data() + g.b_off;
    for (int co = 0; co < g.cout; ++co) {
      T* out_c = pre + size_t(co) * g.hout * g.wout;
      for (int i = 0; i < g.hout * g.wout; ++i) out_c[i] = b[co];
      for (int ci = 0; ci < g.cin; ++ci) {
        const T* in_c = in + size_t(ci) * g.hin * g.win;
        const T* wk = w + (size_t(co) * g.cin + ci) * 9;
        for (int oy = 0; oy < g.hout; ++oy) {
          T* out_row = out_c + size_t(oy) * g.wout;
          for (int ky = 0; ky < 3; ++ky) {
            int iy = oy * 2 + ky - 1;
            if (iy < 0 || iy >= g.hin) continue;
            const T* in_row = in_c + size_t(iy) * g.win;
            for (int kx = 0; kx < 3; ++kx) {
              T wv = wk[ky * 3 + kx];
              int ox_lo = kx == 0 ? 1 : 0;
              int ox_hi = std::min(g.wout - 1, (g.win - kx) / 2);
              const T* base = in_row + (kx - 1);
              for (int ox = ox_lo; ox <= ox_hi; ++ox) out_row[ox] += wv * base[2 * ox];
            }
          }
        }
      }
    }
  }

  // dW/db accumulation (when dw_params non-null) and input gradient
  // accumulation (when din non-null) for one layer.
  void conv_backward(const detail::ConvGeom& g, const T* in, const T* dpre,
                     T* dw_params, T* din) const {
    const T* w = params_.data() + g.w_off;
    for (int co = 0; co < g.cout; ++co) {
      const T* dout_c = dpre + size_t(co) * g.hout * g.wout;
      if (dw_params) {
        T* db = dw_params + g.b_off + size_t(co);
        for (int i = 0; i < g.hout * g.wout; ++i) *db += dout_c[i];
      }
      for (int ci = 0; ci < g.cin; ++ci) {
        const T* in_c = in + size_t(ci) * g.hin * g.win;
        T* din_c = din ? din + size_t(ci) * g.hin * g.win : nullptr;
        const size_t wk_rel = (size_t(co) * g.cin + ci) * 9;
        for (int oy = 0; oy < g.hout; ++oy) {
          const T* dout_row = dout_c + size_t(oy) * g.wout;
          for (int ky = 0; ky < 3; ++ky) {
            int iy = oy * 2 + ky - 1;
            if (iy < 0 || iy >= g.hin) continue;
            const T* in_row = in_c + size_t(iy) * g.win;
            T* din_row = din_c ? din_c + size_t(iy) * g.win : nullptr;
            for (int kx = 0; kx < 3; ++kx) {
              int ox_lo = kx == 0 ? 1 : 0;
              int ox_hi = std::min(g.wout - 1, (g.win - kx) / 2);
              if (dw_params) {
                T acc = T(0);
                const T* base = in_row + (kx - 1);
                for (int ox = ox_lo; ox <= ox_hi; ++ox) acc += dout_row[ox] * base[2 * ox];
                dw_params[g.w_off + wk_rel + size_t(ky * 3 + kx)] += acc;
              }
              if (din_row) {
                T wv = w[wk_rel + size_t(ky * 3 + kx)];
                T* base = din_row + (kx - 1);
                for (int ox = ox_lo; ox <= ox_hi; ++ox) base[2 * ox] += wv * dout_row[ox];
              }
            }
          }
        }
      }
    }
  }

  ArchConfig arch_;
  std::vector<int> head_widths_;
  std::vector<detail::ConvGeom> convs_;
  std::vector<detail::HeadGeom> heads_;
  std::vector<T> params_;
};

}  // namespace dtda
