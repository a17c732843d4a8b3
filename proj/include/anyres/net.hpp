#pragma once

#include <stdexcept>
#include <vector>

#include "anyres/backbone.hpp"
#include "anyres/bn_bank.hpp"
#include "anyres/nn_ops.hpp"
#include "anyres/tensor.hpp"

namespace anyres {

template <typename T>
struct BlockStash {
  std::vector<Tensor<T>> pre;          // pre-BN conv outputs (main path, then skip)
  std::vector<BnBatchStats<T>> stats;  // aligned with pre
  std::vector<Tensor<T>> mid;          // post-activation intermediates
  Tensor<T> out;                       // block output
};

template <typename T>
struct ForwardStash {
  const Tensor<T>* input = nullptr;  // borrowed; caller keeps the batch alive
  std::vector<BlockStash<T>> blocks;
  Tensor<T> feat;  // GAP output
  RunMode mode = RunMode::Eval;

  const Tensor<T>& block_in(std::size_t i) const {
    return i == 0 ? *input : blocks[i - 1].out;
  }
};

// Runs the backbone on a square batch of any spatial size (GAP absorbs the
// variation). Train mode normalizes by batch statistics; running statistics
// are folded into `running_update` when it is non-null. Eval mode is a pure
// function of (parameters, input).
template <typename T>
Tensor<T> net_forward(const BackboneSpec& spec, const std::vector<Tensor<T>>& kernels,
                      const BnSet<T>& bn, const FcParams<T>& fc, const Tensor<T>& input,
                      RunMode mode, BnSet<T>* running_update = nullptr,
                      ForwardStash<T>* stash = nullptr) {
  if (input.rank() != 4 || input.dim(1) != static_cast<std::size_t>(spec.input_channels))
    throw std::invalid_argument("input must be (N, " + std::to_string(spec.input_channels) +
                                ", H, W)");
  if (input.dim(2) != input.dim(3))
    throw std::invalid_argument("input must be square");
  if (kernels.size() != spec.convs.size())
    throw ConfigError("kernel list does not cover every conv layer");

  if (stash != nullptr) {
    stash->input = &input;
    stash->blocks.assign(spec.blocks.size(), BlockStash<T>{});
    stash->mode = mode;
  }

  auto run_conv_bn = [&](int conv_id, const Tensor<T>& x, BlockStash<T>* bs) {
    const auto& layer = spec.convs[conv_id];
    Tensor<T> z = conv_forward(x, kernels[conv_id], layer);
    BnBatchStats<T> cache;
    BnSite<T>* upd = running_update ? &running_update->sites[conv_id] : nullptr;
    Tensor<T> y = bn_forward(bn.sites[conv_id], z, mode, upd, bs ? &cache : nullptr);
    if (bs != nullptr) {
      bs->pre.push_back(std::move(z));
      bs->stats.push_back(std::move(cache));
    }
    return y;
  };

  const Tensor<T>* cur = &input;
  Tensor<T> carry;
  for (std::size_t bi = 0; bi < spec.blocks.size(); ++bi) {
    const BlockSpec& blk = spec.blocks[bi];
    BlockStash<T>* bs = stash ? &stash->blocks[bi] : nullptr;
    Tensor<T> out;
    switch (blk.kind) {
      case BlockKind::Stem: {
        out = relu_forward(run_conv_bn(blk.convs[0], *cur, bs));
        break;
      }
      case BlockKind::Basic: {
        Tensor<T> m1 = relu_forward(run_conv_bn(blk.convs[0], *cur, bs));
        Tensor<T> m2 = run_conv_bn(blk.convs[1], m1, bs);
        if (bs != nullptr) bs->mid.push_back(std::move(m1));
        if (blk.skip_conv >= 0) {
          Tensor<T> s = run_conv_bn(blk.skip_conv, *cur, bs);
          for (std::size_t i = 0; i < m2.size(); ++i) m2.data[i] += s.data[i];
        } else {
          for (std::size_t i = 0; i < m2.size(); ++i) m2.data[i] += cur->data[i];
        }
        out = relu_forward(m2);
        break;
      }
      case BlockKind::InvertedResidual: {
        Tensor<T> m1 = relu_forward(run_conv_bn(blk.convs[0], *cur, bs));
        Tensor<T> m2 = relu_forward(run_conv_bn(blk.convs[1], m1, bs));
        if (bs != nullptr) bs->mid.push_back(std::move(m1));
        out = run_conv_bn(blk.convs[2], m2, bs);
        if (bs != nullptr) bs->mid.push_back(std::move(m2));
        if (blk.residual)
          for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += cur->data[i];
        break;
      }
    }
    if (bs != nullptr) {
      bs->out = std::move(out);
      cur = &bs->out;
    } else {
      carry = std::move(out);
      cur = &carry;
    }
  }

  Tensor<T> feat = gap_forward(*cur);
  Tensor<T> logits = fc_forward(feat, fc);
  if (stash != nullptr) stash->feat = std::move(feat);
  return logits;
}

template <typename T>
struct BackwardResult {
  std::vector<Tensor<T>> dkernels;     // per conv layer
  std::vector<BnSiteGrads<T>> dbn;     // per BN site
};

// Backward through a train-mode forward. FC gradients accumulate into
// `fc_grads` (the FC is shared across scales); kernel and BN gradients are
// returned fresh for the caller to route.
template <typename T>
BackwardResult<T> net_backward(const BackboneSpec& spec, const std::vector<Tensor<T>>& kernels,
                               const BnSet<T>& bn, const FcParams<T>& fc,
                               const ForwardStash<T>& stash, const Tensor<T>& dlogits,
                               FcGrads<T>& fc_grads) {
  if (stash.mode != RunMode::Train)
    throw ConfigError("backward needs a train-mode forward stash");
  BackwardResult<T> res;
  res.dkernels.resize(spec.convs.size());
  res.dbn.resize(spec.convs.size());

  Tensor<T> dfeat = fc_backward(stash.feat, fc, dlogits, fc_grads);
  const Tensor<T>& gap_in = stash.blocks.back().out;
  Tensor<T> dcur = gap_backward(gap_in.shape, dfeat);

  // need_dx=false skips the data gradient for convs that consume the images.
  auto back_conv_bn = [&](int conv_id, const Tensor<T>& x, const BlockStash<T>& bs,
                          std::size_t slot, const Tensor<T>& dy, bool need_dx) {
    const auto& layer = spec.convs[conv_id];
    Tensor<T> dz = bn_backward(bn.sites[conv_id], bs.pre[slot], bs.stats[slot], dy,
                               res.dbn[conv_id]);
    res.dkernels[conv_id] = conv_backward_kernel(dz, x, layer);
    if (!need_dx) return Tensor<T>();
    return conv_backward_data(dz, kernels[conv_id], layer, x.shape);
  };

  for (std::size_t bi = spec.blocks.size(); bi-- > 0;) {
    const BlockSpec& blk = spec.blocks[bi];
    const BlockStash<T>& bs = stash.blocks[bi];
    const Tensor<T>& x = stash.block_in(bi);
    const bool need_dx = bi > 0;
    Tensor<T> dnext;
    switch (blk.kind) {
      case BlockKind::Stem: {
        Tensor<T> dy = relu_backward(bs.out, dcur);
        dnext = back_conv_bn(blk.convs[0], x, bs, 0, dy, need_dx);
        break;
      }
      case BlockKind::Basic: {
        Tensor<T> dsum = relu_backward(bs.out, dcur);
        Tensor<T> dx_skip;
        if (blk.skip_conv >= 0) {
          dx_skip = back_conv_bn(blk.skip_conv, x, bs, 2, dsum, need_dx);
        } else if (need_dx) {
          dx_skip = dsum;
        }
        Tensor<T> dm1 = back_conv_bn(blk.convs[1], bs.mid[0], bs, 1, dsum, true);
        Tensor<T> dz1 = relu_backward(bs.mid[0], dm1);
        dnext = back_conv_bn(blk.convs[0], x, bs, 0, dz1, need_dx);
        if (need_dx)
          for (std::size_t i = 0; i < dnext.size(); ++i) dnext.data[i] += dx_skip.data[i];
        break;
      }
      case BlockKind::InvertedResidual: {
        Tensor<T> dm2 = back_conv_bn(blk.convs[2], bs.mid[1], bs, 2, dcur, true);
        Tensor<T> dz2 = relu_backward(bs.mid[1], dm2);
        Tensor<T> dm1 = back_conv_bn(blk.convs[1], bs.mid[0], bs, 1, dz2, true);
        Tensor<T> dz1 = relu_backward(bs.mid[0], dm1);
        dnext = back_conv_bn(blk.convs[0], x, bs, 0, dz1, need_dx);
        if (blk.residual && need_dx)
          for (std::size_t i = 0; i < dnext.size(); ++i) dnext.data[i] += dcur.data[i];
        break;
      }
    }
    dcur = std::move(dnext);
  }
  return res;
}

}  // namespace anyres
