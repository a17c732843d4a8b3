#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "anyres/backbone.hpp"
#include "anyres/bn_bank.hpp"
#include "anyres/net.hpp"
#include "anyres/scale_meta.hpp"

namespace anyres {

// A fully parameterized main network: generated conv kernels, one
// resolution's BN set and the FC shared by every assembly. `bn` and `fc`
// alias model state (or a private calibrated/interpolated copy), so an FC
// update during training is visible through every assembled network.
template <typename T>
struct MainNetworkParams {
  std::vector<Tensor<T>> kernels;
  std::shared_ptr<const BnSet<T>> bn;
  std::shared_ptr<const FcParams<T>> fc;
  double encoding = 0.0;
  int bn_key = 0;
};

template <typename T>
struct Model {
  BackboneSpec backbone;
  ScaleEncoder encoder;
  std::vector<int> resolutions;  // descending
  std::vector<MetaLearnerParams<T>> meta;
  BnBank<T> bank;
  std::shared_ptr<FcParams<T>> fc;
  int hidden_units = 0;
  bool share_bn = false;
  bool frozen_w = false;  // baseline mode: w pinned at zero, kernels live in b

  std::vector<Tensor<T>> generate_kernels(double encoding) const {
    std::vector<Tensor<T>> ks;
    ks.reserve(meta.size());
    for (std::size_t l = 0; l < meta.size(); ++l)
      ks.push_back(generate_kernel(meta[l], encoding, backbone.convs[l]));
    return ks;
  }

  MainNetworkParams<T> parameterize(double encoding, int bn_key) const {
    MainNetworkParams<T> p;
    p.kernels = generate_kernels(encoding);
    p.bn = bank.set_ptr(bn_key);  // throws std::out_of_range on unknown key
    p.fc = fc;
    p.encoding = encoding;
    p.bn_key = bn_key;
    return p;
  }

  MainNetworkParams<T> parameterize_for(int resolution) const {
    return parameterize(encoder.encode(resolution), resolution);
  }
};

template <typename T>
Model<T> make_model(const BackboneSpec& backbone, std::vector<int> resolutions,
                    int hidden_units, bool share_bn, std::uint64_t seed,
                    bool baseline_frozen_w = false) {
  backbone.validate();
  Model<T> m;
  m.backbone = backbone;
  m.encoder.downsample_rate = backbone.downsample_rate;
  std::sort(resolutions.begin(), resolutions.end(), std::greater<int>());
  m.resolutions = resolutions;
  m.hidden_units = hidden_units;
  m.share_bn = share_bn;
  m.frozen_w = baseline_frozen_w;
  m.meta = init_meta_params<T>(backbone, hidden_units, seed);
  if (baseline_frozen_w)
    for (auto& p : m.meta) std::fill(p.w.begin(), p.w.end(), T(0));
  m.bank = BnBank<T>::create(backbone, resolutions, share_bn);
  m.fc = std::make_shared<FcParams<T>>();
  m.fc->weight = Tensor<T>({static_cast<std::size_t>(backbone.num_classes),
                            static_cast<std::size_t>(backbone.feature_dim)});
  m.fc->bias = Tensor<T>({static_cast<std::size_t>(backbone.num_classes)});
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  const double bound = 1.0 / std::sqrt(static_cast<double>(backbone.feature_dim));
  for (auto& v : m.fc->weight.data) v = static_cast<T>(rng.uniform(-bound, bound));
  return m;
}

// Eval-mode forward of an assembled network; pure in (params, input).
template <typename T>
Tensor<T> forward_eval(const BackboneSpec& spec, const MainNetworkParams<T>& params,
                       const Tensor<T>& input) {
  return net_forward(spec, params.kernels, *params.bn, *params.fc, input, RunMode::Eval);
}

}  // namespace anyres
