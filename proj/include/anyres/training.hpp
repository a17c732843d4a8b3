#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "anyres/data.hpp"
#include "anyres/losses.hpp"
#include "anyres/model.hpp"
#include "anyres/optimizer.hpp"
#include "anyres/parallel.hpp"

namespace anyres {

struct TrainingConfig {
  std::vector<int> resolutions;  // kept sorted descending
  double alpha = 1.0;
  double beta = 1.0;
  double lr0 = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 10;
  int batch_size = 64;
  std::uint64_t seed = 1;
  bool distill = true;
  int hidden_units = 0;
  bool share_bn = false;
  bool baseline = false;  // plain per-kernel parameterization (w frozen at zero)
  double temperature = 1.0;
  int threads = 0;  // 0 = auto
  int checkpoint_every = 0;

  void validate() const {
    if (resolutions.empty()) throw std::invalid_argument("need at least one resolution");
    std::set<int> uniq(resolutions.begin(), resolutions.end());
    if (uniq.size() != resolutions.size())
      throw std::invalid_argument("training resolutions must be distinct");
    for (const int s : resolutions)
      if (s <= 0) throw std::invalid_argument("training resolutions must be positive");
    if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("loss weights must be >= 0");
    if (hidden_units != 0 && hidden_units != 8 && hidden_units != 16)
      throw std::invalid_argument("hidden_units must be 0, 8 or 16");
    if (epochs < 1 || batch_size < 1) throw std::invalid_argument("bad epoch/batch config");
    if (baseline && resolutions.size() != 1)
      throw std::invalid_argument("baseline mode trains a single resolution");
  }
};

struct LossBreakdown {
  std::vector<std::pair<int, double>> ce_by_scale;
  std::vector<std::tuple<int, int, double>> kl_by_pair;  // (teacher, student, value)
  double ce = 0.0;
  double sd = 0.0;
  double total = 0.0;
};

template <typename T>
struct ScaleBatch {
  int scale = 0;
  Tensor<T> input;
};

template <typename T>
struct ModelGrads {
  std::vector<MetaGrads<T>> meta;               // per conv layer
  std::vector<std::vector<BnSiteGrads<T>>> bn;  // per BN-set index, per site
  std::vector<bool> bn_touched;                 // which BN sets received gradients
  FcGrads<T> fc;

  static ModelGrads zeros_like(const Model<T>& m) {
    ModelGrads g;
    g.meta.reserve(m.meta.size());
    for (const auto& p : m.meta) g.meta.push_back(MetaGrads<T>::zeros_like(p));
    g.bn.resize(m.bank.sets.size());
    g.bn_touched.assign(m.bank.sets.size(), false);
    g.fc = FcGrads<T>::zeros_like(*m.fc);
    return g;
  }
};

// Mixed-scale objective: per-scale mean cross-entropy summed over scales plus
// top-down distillation, combined as alpha*L_CE + beta*L_SD. With grads
// non-null the train-mode forwards are kept and backpropagated; with
// update_running_stats=false the call leaves the model bitwise untouched
// (used by the finite-difference oracles).
template <typename T>
LossBreakdown mixed_scale_loss(Model<T>& model, const std::vector<ScaleBatch<T>>& batches,
                               const std::vector<int>& labels, const TrainingConfig& cfg,
                               bool update_running_stats, ModelGrads<T>* grads = nullptr) {
  LossBreakdown out;
  const std::size_t k = batches.size();
  const bool want_sd = cfg.distill && k > 1 && cfg.beta > 0.0;

  // process scales largest-first regardless of caller order, so the summed
  // losses and accumulated gradients are invariant under permutations of
  // the resolution set
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return batches[a].scale > batches[b].scale; });

  std::vector<ForwardStash<T>> stashes(grads ? k : 0);
  std::vector<Tensor<T>> logits(k);
  std::vector<Tensor<T>> probs(k);     // softmax(logits), CE gradient
  std::vector<Tensor<T>> sd_probs(k);  // softened by temperature for distillation
  std::vector<double> encodings(k);
  std::vector<int> scales(k);

  for (const std::size_t i : order) {
    const int s = batches[i].scale;
    scales[i] = s;
    encodings[i] = model.encoder.encode(s);
    auto kernels = model.generate_kernels(encodings[i]);
    BnSet<T>& bn = model.bank.set_for(s);
    logits[i] = net_forward(model.backbone, kernels, bn, *model.fc, batches[i].input,
                            RunMode::Train, update_running_stats ? &bn : nullptr,
                            grads ? &stashes[i] : nullptr);
    const double ce_i = ce_loss(logits[i], labels);
    out.ce_by_scale.emplace_back(s, ce_i);
    out.ce += ce_i;
    probs[i] = softmax_rows(logits[i]);
    if (want_sd) {
      if (cfg.temperature == 1.0) {
        sd_probs[i] = probs[i];
      } else {
        Tensor<T> scaled = logits[i];
        for (auto& v : scaled.data) v = static_cast<T>(v / cfg.temperature);
        sd_probs[i] = softmax_rows(scaled);
      }
    }
  }

  if (want_sd) {
    for (const std::size_t a : order)
      for (const std::size_t b : order) {
        if (scales[b] >= scales[a]) continue;
        const double kl = kl_divergence(sd_probs[a], sd_probs[b]);
        out.kl_by_pair.emplace_back(scales[a], scales[b], kl);
        out.sd += kl;
      }
  }
  out.total = cfg.alpha * out.ce + cfg.beta * out.sd;
  if (grads == nullptr) return out;

  const std::size_t n = labels.size();
  for (const std::size_t i : order) {
    Tensor<T> dlogits(logits[i].shape);
    ce_loss_grad(probs[i], labels, cfg.alpha, dlogits);
    if (want_sd) {
      // student side only; teacher distributions are fixed soft labels
      const T s = static_cast<T>(cfg.beta / (static_cast<double>(n) * cfg.temperature));
      for (std::size_t t = 0; t < k; ++t) {
        if (scales[t] <= scales[i]) continue;
        for (std::size_t e = 0; e < dlogits.size(); ++e)
          dlogits.data[e] += s * (sd_probs[i].data[e] - sd_probs[t].data[e]);
      }
    }
    auto kernels = model.generate_kernels(encodings[i]);
    const std::size_t set_idx =
        model.share_bn ? 0 : model.bank.index_of(scales[i]);
    auto& bn_acc = grads->bn[set_idx];
    if (bn_acc.empty()) bn_acc.resize(model.backbone.convs.size());
    grads->bn_touched[set_idx] = true;
    BackwardResult<T> back =
        net_backward(model.backbone, kernels, model.bank.set_for(scales[i]), *model.fc,
                     stashes[i], dlogits, grads->fc);
    for (std::size_t l = 0; l < model.meta.size(); ++l)
      accumulate_meta_grads(model.meta[l], encodings[i], back.dkernels[l], grads->meta[l]);
    for (std::size_t site = 0; site < back.dbn.size(); ++site) {
      auto& dst = bn_acc[site];
      auto& src = back.dbn[site];
      if (dst.gamma.empty()) {
        dst = std::move(src);
      } else {
        for (std::size_t c = 0; c < dst.gamma.size(); ++c) {
          dst.gamma[c] += src.gamma[c];
          dst.beta[c] += src.beta[c];
        }
      }
    }
  }
  return out;
}

template <typename T>
struct OptState {
  std::vector<MetaGrads<T>> meta_vel;  // same field layout as the gradients
  std::vector<std::vector<BnSiteGrads<T>>> bn_vel;
  FcGrads<T> fc_vel;

  static OptState zeros_like(const Model<T>& m) {
    OptState s;
    for (const auto& p : m.meta) s.meta_vel.push_back(MetaGrads<T>::zeros_like(p));
    s.bn_vel.resize(m.bank.sets.size());
    s.fc_vel = FcGrads<T>::zeros_like(*m.fc);
    return s;
  }
};

// One SGD step from accumulated gradients. Weight decay applies to meta
// params and the FC, not to BN gamma/beta. BN sets that received no gradient
// are left bitwise untouched.
template <typename T>
void apply_sgd(Model<T>& model, OptState<T>& opt, const ModelGrads<T>& grads, double lr,
               const TrainingConfig& cfg) {
  for (std::size_t l = 0; l < model.meta.size(); ++l) {
    auto& p = model.meta[l];
    auto& g = grads.meta[l];
    auto& v = opt.meta_vel[l];
    if (!model.frozen_w)
      sgd_update(p.w, g.w, v.w, lr, cfg.momentum, cfg.weight_decay);
    sgd_update(p.b, g.b, v.b, lr, cfg.momentum, cfg.weight_decay);
    sgd_update(p.w1, g.w1, v.w1, lr, cfg.momentum, cfg.weight_decay);
    sgd_update(p.b1, g.b1, v.b1, lr, cfg.momentum, cfg.weight_decay);
    sgd_update(p.w2, g.w2, v.w2, lr, cfg.momentum, cfg.weight_decay);
    sgd_update(p.b2, g.b2, v.b2, lr, cfg.momentum, cfg.weight_decay);
  }
  for (std::size_t si = 0; si < grads.bn.size(); ++si) {
    if (!grads.bn_touched[si]) continue;
    BnSet<T>& set = *model.bank.sets[si];
    auto& vel = opt.bn_vel[si];
    if (vel.empty()) vel.resize(set.sites.size());
    for (std::size_t site = 0; site < set.sites.size(); ++site) {
      sgd_update(set.sites[site].gamma, grads.bn[si][site].gamma, vel[site].gamma, lr,
                 cfg.momentum, 0.0);
      sgd_update(set.sites[site].beta, grads.bn[si][site].beta, vel[site].beta, lr,
                 cfg.momentum, 0.0);
    }
  }
  sgd_update(model.fc->weight.data, grads.fc.weight.data, opt.fc_vel.weight.data, lr,
             cfg.momentum, cfg.weight_decay);
  sgd_update(model.fc->bias.data, grads.fc.bias.data, opt.fc_vel.bias.data, lr, cfg.momentum,
             cfg.weight_decay);
}

// Builds the per-scale views of one raw batch (independent random crop per
// scale, index-aligned to the same underlying samples).
template <typename T>
std::vector<ScaleBatch<T>> make_scale_batches(const std::vector<const Image*>& images,
                                              const std::vector<int>& scales, Rng& aug_rng) {
  std::vector<ScaleBatch<T>> batches;
  batches.reserve(scales.size());
  for (const int s : scales) {
    std::vector<Image> views;
    views.reserve(images.size());
    for (const Image* img : images) views.push_back(train_view(*img, s, aug_rng));
    ScaleBatch<T> sb;
    sb.scale = s;
    sb.input = tensor_cast<T>(assemble_batch(views));
    batches.push_back(std::move(sb));
  }
  return batches;
}

// One optimizer step on one drawn batch: forward every scale, sum the
// losses, backprop, single SGD update. `active_scales` restricts the step to
// a subset of the training resolutions (default: all).
template <typename T>
LossBreakdown train_step(Model<T>& model, OptState<T>& opt, const std::vector<const Image*>& images,
                         const std::vector<int>& labels, const TrainingConfig& cfg, double lr,
                         Rng& aug_rng, const std::vector<int>* active_scales = nullptr) {
  const std::vector<int>& scales = active_scales ? *active_scales : model.resolutions;
  auto batches = make_scale_batches<T>(images, scales, aug_rng);
  ModelGrads<T> grads = ModelGrads<T>::zeros_like(model);
  LossBreakdown losses = mixed_scale_loss(model, batches, labels, cfg, true, &grads);
  apply_sgd(model, opt, grads, lr, cfg);
  return losses;
}

using CheckpointHook = std::function<void(int epoch, bool final)>;

// Epoch/batch loop: shuffles, cosine-annealed SGD, CSV training log, and a
// checkpoint hook every `checkpoint_every` epochs plus at the end.
template <typename T>
Model<T> fit(const Dataset& train, const TrainingConfig& cfg, const BackboneSpec& backbone,
             const std::string& log_csv_path = "", Model<T>* resume = nullptr,
             const std::function<void(const Model<T>&, int, bool)>& on_checkpoint = nullptr,
             std::ostream* progress = nullptr) {
  cfg.validate();
  if (train.size() == 0) throw std::invalid_argument("dataset is empty");
  if (cfg.threads > 0) set_num_threads(cfg.threads);

  Model<T> model = resume ? *resume
                          : make_model<T>(backbone, cfg.resolutions, cfg.hidden_units,
                                          cfg.share_bn, cfg.seed, cfg.baseline);
  OptState<T> opt = OptState<T>::zeros_like(model);

  const std::size_t n = train.size();
  const std::size_t batch = std::min<std::size_t>(cfg.batch_size, n);
  const long steps_per_epoch = static_cast<long>(n / batch);
  const long total_steps = steps_per_epoch * cfg.epochs;

  Rng shuffle_rng(cfg.seed * 0x9e3779b97f4a7c15ull + 13);
  Rng aug_rng(cfg.seed * 0xbf58476d1ce4e5b9ull + 7);

  std::ofstream log;
  if (!log_csv_path.empty()) {
    log.open(log_csv_path);
    if (!log) throw std::runtime_error("cannot open training log " + log_csv_path);
    log << "step,lr,loss_ce,loss_sd,loss_total\n";
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double ep_ce = 0.0, ep_sd = 0.0, ep_total = 0.0;
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, static_cast<int>(i) - 1)]);
    for (long b = 0; b < steps_per_epoch; ++b, ++step) {
      std::vector<const Image*> images(batch);
      std::vector<int> labels(batch);
      for (std::size_t j = 0; j < batch; ++j) {
        const std::size_t idx = order[b * batch + j];
        images[j] = &train.images[idx];
        labels[j] = train.labels[idx];
      }
      const double lr = cosine_lr(step, total_steps, cfg.lr0);
      const LossBreakdown loss = train_step(model, opt, images, labels, cfg, lr, aug_rng);
      ep_ce += loss.ce;
      ep_sd += loss.sd;
      ep_total += loss.total;
      if (log)
        log << step << ',' << lr << ',' << loss.ce << ',' << loss.sd << ',' << loss.total
            << '\n';
    }
    if (progress != nullptr)
      *progress << "epoch " << epoch + 1 << '/' << cfg.epochs << "  ce "
                << ep_ce / steps_per_epoch << "  sd " << ep_sd / steps_per_epoch << "  total "
                << ep_total / steps_per_epoch << std::endl;
    if (on_checkpoint && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
        epoch + 1 < cfg.epochs)
      on_checkpoint(model, epoch + 1, false);
  }
  if (on_checkpoint) on_checkpoint(model, cfg.epochs, true);
  return model;
}

}  // namespace anyres
