#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "anyres/backbone.hpp"
#include "anyres/tensor.hpp"

namespace anyres {

enum class RunMode { Train, Eval };

// One BatchNorm site: trainable scale/shift plus running statistics.
template <typename T>
struct BnSite {
  std::vector<T> gamma, beta;  // trainable
  std::vector<T> mean, var;    // running statistics (population variance)
  T eps = static_cast<T>(1e-5);
  T momentum = static_cast<T>(0.1);

  static BnSite identity(std::size_t channels) {
    BnSite s;
    s.gamma.assign(channels, T(1));
    s.beta.assign(channels, T(0));
    s.mean.assign(channels, T(0));
    s.var.assign(channels, T(1));
    return s;
  }
  std::size_t channels() const { return gamma.size(); }
};

// All BN sites of one main network (one per conv layer, same order).
template <typename T>
struct BnSet {
  std::vector<BnSite<T>> sites;

  static BnSet for_backbone(const BackboneSpec& spec) {
    BnSet s;
    s.sites.reserve(spec.convs.size());
    for (const auto& c : spec.convs)
      s.sites.push_back(BnSite<T>::identity(static_cast<std::size_t>(c.c_out)));
    return s;
  }
};

// Per-training-resolution BN sets. With share_bn=true (ablation) every
// resolution key aliases a single set.
template <typename T>
struct BnBank {
  std::vector<int> scales;  // descending
  std::vector<std::shared_ptr<BnSet<T>>> sets;
  bool shared = false;

  static BnBank create(const BackboneSpec& spec, std::vector<int> resolutions, bool share_bn) {
    std::sort(resolutions.begin(), resolutions.end(), std::greater<int>());
    BnBank bank;
    bank.scales = std::move(resolutions);
    bank.shared = share_bn;
    if (share_bn) {
      auto one = std::make_shared<BnSet<T>>(BnSet<T>::for_backbone(spec));
      bank.sets.assign(bank.scales.size(), one);
    } else {
      for (std::size_t i = 0; i < bank.scales.size(); ++i)
        bank.sets.push_back(std::make_shared<BnSet<T>>(BnSet<T>::for_backbone(spec)));
    }
    return bank;
  }

  std::size_t index_of(int scale) const {
    for (std::size_t i = 0; i < scales.size(); ++i)
      if (scales[i] == scale) return i;
    throw std::out_of_range("no BN set for resolution " + std::to_string(scale));
  }

  BnSet<T>& set_for(int scale) { return *sets[index_of(scale)]; }
  const BnSet<T>& set_for(int scale) const { return *sets[index_of(scale)]; }
  std::shared_ptr<const BnSet<T>> set_ptr(int scale) const { return sets[index_of(scale)]; }

  int min_scale() const { return scales.back(); }
  int max_scale() const { return scales.front(); }
};

// Batch statistics cached by a train-mode forward for the backward pass.
template <typename T>
struct BnBatchStats {
  std::vector<T> mean, invstd;
};

// Train mode normalizes by batch statistics (and, when `running` is given,
// folds them into the running mean/variance with the site's momentum).
// Eval mode normalizes by the stored statistics.
template <typename T>
Tensor<T> bn_forward(const BnSite<T>& site, const Tensor<T>& x, RunMode mode,
                     BnSite<T>* running = nullptr, BnBatchStats<T>* cache = nullptr) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c != site.channels()) throw std::invalid_argument("BN channel mismatch");
  Tensor<T> y(x.shape);
  const std::size_t plane = h * w;
  const std::size_t m = n * plane;

  std::vector<T> use_mean(c), use_invstd(c);
  if (mode == RunMode::Train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0, s2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = x.ptr() + (i * c + ch) * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          const double v = static_cast<double>(p[k]);
          s += v;
          s2 += v * v;
        }
      }
      const double mean = s / static_cast<double>(m);
      double var = s2 / static_cast<double>(m) - mean * mean;
      if (var < 0.0) var = 0.0;
      use_mean[ch] = static_cast<T>(mean);
      use_invstd[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(site.eps)));
      if (running != nullptr) {
        running->mean[ch] = (T(1) - site.momentum) * running->mean[ch] +
                            site.momentum * static_cast<T>(mean);
        running->var[ch] = (T(1) - site.momentum) * running->var[ch] +
                           site.momentum * static_cast<T>(var);
      }
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      use_mean[ch] = site.mean[ch];
      use_invstd[ch] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(site.var[ch]) + static_cast<double>(site.eps)));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T g = site.gamma[ch], bta = site.beta[ch];
      const T mu = use_mean[ch], is = use_invstd[ch];
      const T* px = x.ptr() + (i * c + ch) * plane;
      T* py = y.ptr() + (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) py[k] = g * (px[k] - mu) * is + bta;
    }
  }
  if (cache != nullptr) {
    cache->mean = std::move(use_mean);
    cache->invstd = std::move(use_invstd);
  }
  return y;
}

template <typename T>
struct BnSiteGrads {
  std::vector<T> gamma, beta;
};

// Backward through a train-mode BN (gradients flow through the batch
// statistics). Returns dL/dx and fills dL/dgamma, dL/dbeta.
template <typename T>
Tensor<T> bn_backward(const BnSite<T>& site, const Tensor<T>& x, const BnBatchStats<T>& cache,
                      const Tensor<T>& dy, BnSiteGrads<T>& grads) {
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const double m = static_cast<double>(n * plane);
  Tensor<T> dx(x.shape);
  if (grads.gamma.size() != c) grads.gamma.assign(c, T(0));
  if (grads.beta.size() != c) grads.beta.assign(c, T(0));
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T mu = cache.mean[ch], is = cache.invstd[ch];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* px = x.ptr() + (i * c + ch) * plane;
      const T* pd = dy.ptr() + (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const double xhat = static_cast<double>((px[k] - mu) * is);
        sum_dy += static_cast<double>(pd[k]);
        sum_dy_xhat += static_cast<double>(pd[k]) * xhat;
      }
    }
    grads.gamma[ch] += static_cast<T>(sum_dy_xhat);
    grads.beta[ch] += static_cast<T>(sum_dy);
    const double g_is = static_cast<double>(site.gamma[ch]) * static_cast<double>(is);
    const double mean_dy = sum_dy / m;
    const double mean_dy_xhat = sum_dy_xhat / m;
    for (std::size_t i = 0; i < n; ++i) {
      const T* px = x.ptr() + (i * c + ch) * plane;
      const T* pd = dy.ptr() + (i * c + ch) * plane;
      T* pdx = dx.ptr() + (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const double xhat = static_cast<double>((px[k] - mu) * is);
        pdx[k] = static_cast<T>(g_is * (static_cast<double>(pd[k]) - mean_dy - xhat * mean_dy_xhat));
      }
    }
  }
  return dx;
}

// Linear interpolation of gamma, beta, mean and variance between the two
// training resolutions flanking T. T equal to a stored scale returns that
// set; T outside [min, max] is a range error (callers clamp explicitly).
template <typename T>
BnSet<T> interpolate_bn(const BnBank<T>& bank, int t) {
  for (std::size_t i = 0; i < bank.scales.size(); ++i)
    if (bank.scales[i] == t) return *bank.sets[i];
  if (t < bank.min_scale() || t > bank.max_scale())
    throw std::range_error("resolution " + std::to_string(t) +
                           " outside the trained range [" + std::to_string(bank.min_scale()) +
                           ", " + std::to_string(bank.max_scale()) + "]");
  int s_floor = bank.min_scale(), s_ceil = bank.max_scale();
  for (const int s : bank.scales) {
    if (s < t && s > s_floor) s_floor = s;
    if (s > t && s < s_ceil) s_ceil = s;
  }
  const T w = static_cast<T>(t - s_floor) / static_cast<T>(s_ceil - s_floor);
  const BnSet<T>& lo = bank.set_for(s_floor);
  const BnSet<T>& hi = bank.set_for(s_ceil);
  BnSet<T> out = lo;
  for (std::size_t s = 0; s < out.sites.size(); ++s) {
    auto blend = [&](std::vector<T>& dst, const std::vector<T>& a, const std::vector<T>& b) {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = w * b[i] + (T(1) - w) * a[i];
    };
    blend(out.sites[s].gamma, lo.sites[s].gamma, hi.sites[s].gamma);
    blend(out.sites[s].beta, lo.sites[s].beta, hi.sites[s].beta);
    blend(out.sites[s].mean, lo.sites[s].mean, hi.sites[s].mean);
    blend(out.sites[s].var, lo.sites[s].var, hi.sites[s].var);
  }
  return out;
}

}  // namespace anyres
