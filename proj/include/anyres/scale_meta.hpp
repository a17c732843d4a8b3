#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "anyres/backbone.hpp"
#include "anyres/errors.hpp"
#include "anyres/rng.hpp"
#include "anyres/tensor.hpp"

namespace anyres {

// Maps a square input resolution S to the scalar fed to every meta learner:
// eps = coefficient * S / downsample_rate. Strictly increasing in S.
struct ScaleEncoder {
  double coefficient = 0.1;
  int downsample_rate = 32;

  double encode(int s) const {
    if (s <= 0) throw std::invalid_argument("resolution must be positive");
    if (coefficient <= 0.0 || downsample_rate <= 0)
      throw std::invalid_argument("encoder needs positive coefficient and downsample rate");
    return coefficient * static_cast<double>(s) / static_cast<double>(downsample_rate);
  }
};

// Per-conv-layer learner mapping the encoding scalar to a flattened kernel.
// Linear mode: kernel = eps*w + b, both of length D (the layer's kernel
// element count). With hidden_units > 0 the learner is a two-layer MLP
// (relu(eps*w1 + b1) * w2 + b2) and the linear-mode vectors stay empty.
template <typename T>
struct MetaLearnerParams {
  int layer_id = 0;
  int hidden_units = 0;
  std::vector<T> w, b;        // linear mode, length D
  std::vector<T> w1, b1;      // hidden mode, length H
  std::vector<T> w2;          // hidden mode, H x D row-major
  std::vector<T> b2;          // hidden mode, length D

  std::size_t kernel_elems() const { return hidden_units > 0 ? b2.size() : b.size(); }
};

template <typename T>
struct MetaGrads {
  std::vector<T> w, b;
  std::vector<T> w1, b1, w2, b2;

  static MetaGrads zeros_like(const MetaLearnerParams<T>& p) {
    MetaGrads g;
    g.w.assign(p.w.size(), T(0));
    g.b.assign(p.b.size(), T(0));
    g.w1.assign(p.w1.size(), T(0));
    g.b1.assign(p.b1.size(), T(0));
    g.w2.assign(p.w2.size(), T(0));
    g.b2.assign(p.b2.size(), T(0));
    return g;
  }
};

// Flattened kernel reshaped to (C_out, C_in/groups, K, K).
template <typename T>
Tensor<T> generate_kernel(const MetaLearnerParams<T>& params, double encoding,
                          const ConvLayerSpec& layer) {
  const std::size_t d = layer.kernel_elems();
  if (params.kernel_elems() != d)
    throw ConfigError("meta params for layer " + layer.name + " produce " +
                      std::to_string(params.kernel_elems()) + " elements, layer needs " +
                      std::to_string(d));
  Tensor<T> out({static_cast<std::size_t>(layer.c_out),
                 static_cast<std::size_t>(layer.c_in_per_group()),
                 static_cast<std::size_t>(layer.kernel),
                 static_cast<std::size_t>(layer.kernel)});
  const T eps = static_cast<T>(encoding);
  if (params.hidden_units == 0) {
    for (std::size_t i = 0; i < d; ++i) out.data[i] = eps * params.w[i] + params.b[i];
    return out;
  }
  const std::size_t h = params.w1.size();
  std::vector<T> hidden(h);
  for (std::size_t u = 0; u < h; ++u) {
    const T pre = eps * params.w1[u] + params.b1[u];
    hidden[u] = pre > T(0) ? pre : T(0);
  }
  for (std::size_t i = 0; i < d; ++i) out.data[i] = params.b2[i];
  for (std::size_t u = 0; u < h; ++u) {
    const T hu = hidden[u];
    if (hu == T(0)) continue;
    const T* row = params.w2.data() + u * d;
    for (std::size_t i = 0; i < d; ++i) out.data[i] += hu * row[i];
  }
  return out;
}

// Chain rule from a generated-kernel gradient back into the learner params.
template <typename T>
void accumulate_meta_grads(const MetaLearnerParams<T>& params, double encoding,
                           const Tensor<T>& dkernel, MetaGrads<T>& grads) {
  const std::size_t d = params.kernel_elems();
  const T eps = static_cast<T>(encoding);
  if (params.hidden_units == 0) {
    for (std::size_t i = 0; i < d; ++i) {
      const T g = dkernel.data[i];
      grads.w[i] += eps * g;
      grads.b[i] += g;
    }
    return;
  }
  const std::size_t h = params.w1.size();
  for (std::size_t i = 0; i < d; ++i) grads.b2[i] += dkernel.data[i];
  for (std::size_t u = 0; u < h; ++u) {
    const T pre = eps * params.w1[u] + params.b1[u];
    const T hu = pre > T(0) ? pre : T(0);
    const T* w2row = params.w2.data() + u * d;
    T* g2row = grads.w2.data() + u * d;
    T dh = T(0);
    for (std::size_t i = 0; i < d; ++i) {
      const T g = dkernel.data[i];
      g2row[i] += hu * g;
      dh += w2row[i] * g;
    }
    if (pre > T(0)) {
      grads.w1[u] += eps * dh;
      grads.b1[u] += dh;
    }
  }
}

// One learner per conv layer (stem and skip-connection convs included).
// Both vectors of the linear map draw from a fan-in-scaled normal with
// variance 2/(C_in_per_group * K^2) so generated kernels start near a
// standard He initialization over the working encoding range.
template <typename T>
std::vector<MetaLearnerParams<T>> init_meta_params(const BackboneSpec& backbone,
                                                   int hidden_units, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<MetaLearnerParams<T>> all;
  all.reserve(backbone.convs.size());
  for (const auto& layer : backbone.convs) {
    const std::size_t d = layer.kernel_elems();
    const double sigma =
        std::sqrt(2.0 / (static_cast<double>(layer.c_in_per_group()) * layer.kernel * layer.kernel));
    MetaLearnerParams<T> p;
    p.layer_id = layer.layer_id;
    p.hidden_units = hidden_units;
    if (hidden_units == 0) {
      p.w.resize(d);
      p.b.resize(d);
      for (auto& v : p.w) v = static_cast<T>(rng.normal(0.0, sigma));
      for (auto& v : p.b) v = static_cast<T>(rng.normal(0.0, sigma));
    } else {
      const std::size_t h = static_cast<std::size_t>(hidden_units);
      p.w1.resize(h);
      p.b1.resize(h);
      p.w2.resize(h * d);
      p.b2.resize(d);
      for (auto& v : p.w1) v = static_cast<T>(rng.normal(0.0, 1.0));
      for (auto& v : p.b1) v = static_cast<T>(rng.normal(0.0, 1.0));
      const double sigma2 = sigma / std::sqrt(static_cast<double>(h));
      for (auto& v : p.w2) v = static_cast<T>(rng.normal(0.0, sigma2));
      for (auto& v : p.b2) v = static_cast<T>(rng.normal(0.0, sigma));
    }
    all.push_back(std::move(p));
  }
  return all;
}

struct LayerRatio {
  int layer_id = 0;
  std::string name;
  double ratio = 0.0;  // mean|w| / mean|b|; +inf when mean|b| is zero
};

// mean(|W_l|)/mean(|b_l|) per layer; in hidden mode the output layer (w2, b2)
// is the kernel-producing map, so its vectors are used.
template <typename T>
std::vector<LayerRatio> weight_bias_ratios(const std::vector<MetaLearnerParams<T>>& params,
                                           const BackboneSpec& backbone) {
  auto mean_abs = [](const std::vector<T>& v) {
    double s = 0.0;
    for (const T x : v) s += std::abs(static_cast<double>(x));
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  std::vector<LayerRatio> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    const double mw = mean_abs(p.hidden_units > 0 ? p.w2 : p.w);
    const double mb = mean_abs(p.hidden_units > 0 ? p.b2 : p.b);
    LayerRatio r;
    r.layer_id = p.layer_id;
    r.name = backbone.convs.at(p.layer_id).name;
    r.ratio = mb == 0.0 ? std::numeric_limits<double>::infinity() : mw / mb;
    out.push_back(r);
  }
  return out;
}

}  // namespace anyres
