#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "anyres/data.hpp"
#include "anyres/losses.hpp"
#include "anyres/model.hpp"

namespace anyres {

// Closest training resolution to T; ties break toward the smaller one.
inline int nearest_resolution(int t, const std::vector<int>& scales) {
  if (scales.empty()) throw std::invalid_argument("empty resolution set");
  int best = scales.front();
  int best_dist = std::abs(t - best);
  for (const int s : scales) {
    const int d = std::abs(t - s);
    if (d < best_dist || (d == best_dist && s < best)) {
      best = s;
      best_dist = d;
    }
  }
  return best;
}

// The two training resolutions flanking an interior T not in the set.
inline std::pair<int, int> neighbors(int t, const std::vector<int>& scales) {
  if (scales.empty()) throw std::invalid_argument("empty resolution set");
  int lo = 0, hi = 0;
  bool has_lo = false, has_hi = false;
  for (const int s : scales) {
    if (s == t) throw std::range_error(std::to_string(t) + " is a training resolution");
    if (s < t && (!has_lo || s > lo)) {
      lo = s;
      has_lo = true;
    }
    if (s > t && (!has_hi || s < hi)) {
      hi = s;
      has_hi = true;
    }
  }
  if (!has_lo || !has_hi)
    throw std::range_error(std::to_string(t) + " outside the training range");
  return {lo, hi};
}

// Streaming (count, sum, sum-of-squares) accumulator; exact dataset-wide
// mean and population variance, independent of how the data is batched.
struct StreamingMoments {
  double count = 0.0;
  std::vector<double> sum, sumsq;

  void resize(std::size_t channels) {
    sum.assign(channels, 0.0);
    sumsq.assign(channels, 0.0);
    count = 0.0;
  }
  template <typename T>
  void add_plane(const T* data, std::size_t channels, std::size_t batch, std::size_t plane) {
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t c = 0; c < channels; ++c) {
        const T* p = data + (i * channels + c) * plane;
        double s = 0.0, s2 = 0.0;
        for (std::size_t k = 0; k < plane; ++k) {
          const double v = static_cast<double>(p[k]);
          s += v;
          s2 += v * v;
        }
        sum[c] += s;
        sumsq[c] += s2;
      }
    count += static_cast<double>(batch * plane);
  }
  double mean(std::size_t c) const { return sum[c] / count; }
  double variance(std::size_t c) const {
    const double m = mean(c);
    const double v = sumsq[c] / count - m * m;
    return v < 0.0 ? 0.0 : v;
  }
};

// Replaces each site's running statistics with the exact mean/population
// variance of its pre-normalization inputs over the calibration batches.
// The collection pass runs in eval mode with the source set's statistics, so
// the result does not depend on the batch partitioning. Trainable gamma/beta
// carry over unchanged.
template <typename T>
BnSet<T> calibrate_bn(const BackboneSpec& spec, const std::vector<Tensor<T>>& kernels,
                      const BnSet<T>& source, const FcParams<T>& fc,
                      const std::vector<Tensor<T>>& calibration_batches) {
  if (calibration_batches.empty())
    throw std::invalid_argument("calibration needs a non-empty dataset");
  std::vector<StreamingMoments> moments(spec.convs.size());
  for (std::size_t s = 0; s < spec.convs.size(); ++s)
    moments[s].resize(static_cast<std::size_t>(spec.convs[s].c_out));

  for (const auto& batch : calibration_batches) {
    ForwardStash<T> stash;
    net_forward(spec, kernels, source, fc, batch, RunMode::Eval,
                static_cast<BnSet<T>*>(nullptr), &stash);
    // stash stores pre-BN outputs per block: main-path convs, then skip conv
    std::size_t bi = 0;
    for (const auto& blk : spec.blocks) {
      const BlockStash<T>& bs = stash.blocks[bi++];
      std::vector<int> ids = blk.convs;
      if (blk.skip_conv >= 0) ids.push_back(blk.skip_conv);
      for (std::size_t j = 0; j < ids.size(); ++j) {
        const Tensor<T>& pre = bs.pre[j];
        moments[ids[j]].add_plane(pre.ptr(), pre.dim(1), pre.dim(0), pre.dim(2) * pre.dim(3));
      }
    }
  }

  BnSet<T> out = source;
  for (std::size_t s = 0; s < out.sites.size(); ++s)
    for (std::size_t c = 0; c < out.sites[s].channels(); ++c) {
      out.sites[s].mean[c] = static_cast<T>(moments[s].mean(c));
      out.sites[s].var[c] = static_cast<T>(moments[s].variance(c));
    }
  return out;
}

template <typename T>
struct CalibrationCache {
  std::uint64_t model_version = 0;
  std::map<int, std::shared_ptr<const BnSet<T>>> by_resolution;

  void reset(std::uint64_t version) {
    if (version != model_version) {
      by_resolution.clear();
      model_version = version;
    }
  }
};

// Proxy inference: kernels and BN both from the nearest training resolution;
// the input stays at its native resolution T.
template <typename T>
Tensor<T> proxy_infer(const Model<T>& model, const Tensor<T>& input_at_t, int t) {
  const int s = nearest_resolution(t, model.resolutions);
  const MainNetworkParams<T> params = model.parameterize_for(s);
  return softmax_rows(forward_eval(model.backbone, params, input_at_t));
}

// Data-free ideal parameterization: kernels at the test encoding, BN
// linearly interpolated between the flanking training resolutions (clamped
// to the nearest endpoint outside the trained range). No dataset access.
template <typename T>
MainNetworkParams<T> datafree_parameterize(const Model<T>& model, int t) {
  MainNetworkParams<T> params;
  params.encoding = model.encoder.encode(t);
  params.kernels = model.generate_kernels(params.encoding);
  params.fc = model.fc;
  params.bn_key = t;
  for (const int s : model.resolutions)
    if (s == t) params.bn = model.bank.set_ptr(s);
  if (!params.bn) {
    if (t <= model.bank.min_scale()) {
      params.bn = model.bank.set_ptr(model.bank.min_scale());
      params.bn_key = model.bank.min_scale();
    } else if (t >= model.bank.max_scale()) {
      params.bn = model.bank.set_ptr(model.bank.max_scale());
      params.bn_key = model.bank.max_scale();
    } else {
      params.bn = std::make_shared<const BnSet<T>>(interpolate_bn(model.bank, t));
    }
  }
  return params;
}

template <typename T>
Tensor<T> datafree_infer(const Model<T>& model, const Tensor<T>& input_at_t, int t) {
  const MainNetworkParams<T> params = datafree_parameterize(model, t);
  return softmax_rows(forward_eval(model.backbone, params, input_at_t));
}

// Builds eval-protocol batches of the calibration images at resolution T.
template <typename T>
std::vector<Tensor<T>> calibration_batches_at(const Dataset& data, int t,
                                              std::size_t batch_size = 64) {
  std::vector<Tensor<T>> batches;
  std::vector<Image> views;
  views.reserve(batch_size);
  for (std::size_t i = 0; i < data.size(); ++i) {
    views.push_back(eval_view(data.images[i], t));
    if (views.size() == batch_size || i + 1 == data.size()) {
      batches.push_back(tensor_cast<T>(assemble_batch(views)));
      views.clear();
    }
  }
  return batches;
}

// Builds the ideal-inference parameterization for T: kernels at the test
// encoding, gamma/beta from the nearest training resolution, statistics
// recalibrated at T (skipped when T is a training resolution, where the
// ideal and proxy parameterizations coincide).
template <typename T>
MainNetworkParams<T> ideal_parameterize(const Model<T>& model, int t,
                                        const Dataset* calibration_data,
                                        CalibrationCache<T>* cache = nullptr,
                                        std::size_t batch_size = 64) {
  const int s = nearest_resolution(t, model.resolutions);
  MainNetworkParams<T> params;
  params.encoding = model.encoder.encode(t);
  params.kernels = model.generate_kernels(params.encoding);
  params.fc = model.fc;
  params.bn_key = s;
  if (t == s) {
    params.bn = model.bank.set_ptr(s);
    return params;
  }
  if (cache != nullptr) {
    auto it = cache->by_resolution.find(t);
    if (it != cache->by_resolution.end()) {
      params.bn = it->second;
      return params;
    }
  }
  if (calibration_data == nullptr || calibration_data->size() == 0)
    throw ConfigError("ideal inference at resolution " + std::to_string(t) +
                      " needs calibration data (not a training resolution)");
  auto batches = calibration_batches_at<T>(*calibration_data, t, batch_size);
  auto calibrated = std::make_shared<const BnSet<T>>(calibrate_bn(
      model.backbone, params.kernels, model.bank.set_for(s), *model.fc, batches));
  if (cache != nullptr) cache->by_resolution[t] = calibrated;
  params.bn = calibrated;
  return params;
}

template <typename T>
Tensor<T> ideal_infer(const Model<T>& model, const Tensor<T>& input_at_t, int t,
                      const Dataset* calibration_data, CalibrationCache<T>* cache = nullptr) {
  const MainNetworkParams<T> params = ideal_parameterize(model, t, calibration_data, cache);
  return softmax_rows(forward_eval(model.backbone, params, input_at_t));
}

}  // namespace anyres
