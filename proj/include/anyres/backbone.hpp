#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "anyres/errors.hpp"

namespace anyres {

struct ConvLayerSpec {
  int layer_id = 0;
  std::string name;
  int c_in = 0;
  int c_out = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  int groups = 1;

  int c_in_per_group() const { return c_in / groups; }
  std::size_t kernel_elems() const {
    return static_cast<std::size_t>(c_out) * c_in_per_group() * kernel * kernel;
  }
};

enum class BlockKind { Stem, Basic, InvertedResidual };

// One structural unit of the backbone. `convs` are the main-path conv layer
// ids in execution order; `skip_conv` is a projection conv id (-1 when the
// residual uses the identity or the block has no residual).
struct BlockSpec {
  BlockKind kind = BlockKind::Stem;
  std::vector<int> convs;
  int skip_conv = -1;
  bool residual = false;
};

// Computation graph description: convs + one BN site per conv + block wiring
// + GAP + a final FC. downsample_rate is the product of main-path strides.
struct BackboneSpec {
  std::string name;
  std::vector<ConvLayerSpec> convs;
  std::vector<BlockSpec> blocks;
  int input_channels = 3;
  int num_classes = 0;
  int feature_dim = 0;
  int downsample_rate = 1;

  std::size_t num_convs() const { return convs.size(); }

  void validate() const {
    if (convs.empty()) throw ConfigError("backbone has no conv layers");
    if (num_classes < 2) throw ConfigError("backbone needs >= 2 classes");
    int r = 1;
    for (const auto& b : blocks)
      for (const int id : b.convs) r *= convs.at(id).stride;
    if (r != downsample_rate)
      throw ConfigError("downsample_rate does not match main-path strides");
    for (const auto& c : convs) {
      if (c.kernel < 1 || c.stride < 1 || c.padding < 0)
        throw ConfigError("bad conv geometry in layer " + c.name);
      if (c.c_in % c.groups != 0 || c.c_out % c.groups != 0)
        throw ConfigError("channels not divisible by groups in layer " + c.name);
    }
  }
};

namespace detail {
inline int add_conv(BackboneSpec& s, const std::string& name, int c_in, int c_out,
                    int k, int stride, int padding, int groups = 1) {
  ConvLayerSpec c;
  c.layer_id = static_cast<int>(s.convs.size());
  c.name = name;
  c.c_in = c_in;
  c.c_out = c_out;
  c.kernel = k;
  c.stride = stride;
  c.padding = padding;
  c.groups = groups;
  s.convs.push_back(c);
  return c.layer_id;
}
}  // namespace detail

// Residual CNN: 3x3 stem + stages of basic blocks (two 3x3 convs, projection
// shortcut on shape change). Stage i>0 downsamples by 2, so R = 2^(stages-1).
inline BackboneSpec tiny_resnet(const std::vector<int>& widths, int blocks_per_stage,
                                int num_classes, int input_channels = 3) {
  BackboneSpec s;
  s.name = "tiny_resnet";
  s.input_channels = input_channels;
  s.num_classes = num_classes;

  int c_prev = widths.at(0);
  {
    BlockSpec stem;
    stem.kind = BlockKind::Stem;
    stem.convs.push_back(detail::add_conv(s, "stem", input_channels, c_prev, 3, 1, 1));
    s.blocks.push_back(stem);
  }
  int r = 1;
  for (std::size_t st = 0; st < widths.size(); ++st) {
    const int c_out = widths[st];
    for (int b = 0; b < blocks_per_stage; ++b) {
      const int stride = (st > 0 && b == 0) ? 2 : 1;
      const std::string base = "stage" + std::to_string(st) + "_block" + std::to_string(b);
      BlockSpec blk;
      blk.kind = BlockKind::Basic;
      blk.residual = true;
      blk.convs.push_back(detail::add_conv(s, base + "_conv1", c_prev, c_out, 3, stride, 1));
      blk.convs.push_back(detail::add_conv(s, base + "_conv2", c_out, c_out, 3, 1, 1));
      if (stride != 1 || c_prev != c_out)
        blk.skip_conv = detail::add_conv(s, base + "_skip", c_prev, c_out, 1, stride, 0);
      s.blocks.push_back(blk);
      c_prev = c_out;
      r *= stride;
    }
  }
  s.feature_dim = c_prev;
  s.downsample_rate = r;
  s.validate();
  return s;
}

// Depthwise-separable variant: stem + stages of inverted residual blocks
// (1x1 expand, 3x3 depthwise, 1x1 project; identity shortcut when shapes match).
inline BackboneSpec tiny_mobile(const std::vector<int>& widths, int blocks_per_stage,
                                int expansion, int num_classes, int input_channels = 3) {
  BackboneSpec s;
  s.name = "tiny_mobile";
  s.input_channels = input_channels;
  s.num_classes = num_classes;

  int c_prev = widths.at(0);
  {
    BlockSpec stem;
    stem.kind = BlockKind::Stem;
    stem.convs.push_back(detail::add_conv(s, "stem", input_channels, c_prev, 3, 1, 1));
    s.blocks.push_back(stem);
  }
  int r = 1;
  for (std::size_t st = 0; st < widths.size(); ++st) {
    const int c_out = widths[st];
    for (int b = 0; b < blocks_per_stage; ++b) {
      const int stride = (st > 0 && b == 0) ? 2 : 1;
      const int c_mid = c_prev * expansion;
      const std::string base = "stage" + std::to_string(st) + "_block" + std::to_string(b);
      BlockSpec blk;
      blk.kind = BlockKind::InvertedResidual;
      blk.residual = (stride == 1 && c_prev == c_out);
      blk.convs.push_back(detail::add_conv(s, base + "_expand", c_prev, c_mid, 1, 1, 0));
      blk.convs.push_back(detail::add_conv(s, base + "_dw", c_mid, c_mid, 3, stride, 1, c_mid));
      blk.convs.push_back(detail::add_conv(s, base + "_project", c_mid, c_out, 1, 1, 0));
      s.blocks.push_back(blk);
      c_prev = c_out;
      r *= stride;
    }
  }
  s.feature_dim = c_prev;
  s.downsample_rate = r;
  s.validate();
  return s;
}

// Two plain convs + BN + ReLU + GAP + FC; used by the gradient-check suites.
inline BackboneSpec toy_backbone(int num_classes, int width = 4, int input_channels = 3,
                                 int stride2 = 2, int padding = 1) {
  BackboneSpec s;
  s.name = "toy";
  s.input_channels = input_channels;
  s.num_classes = num_classes;
  BlockSpec b1;
  b1.kind = BlockKind::Stem;
  b1.convs.push_back(detail::add_conv(s, "conv1", input_channels, width, 3, 1, padding));
  s.blocks.push_back(b1);
  BlockSpec b2;
  b2.kind = BlockKind::Stem;
  b2.convs.push_back(detail::add_conv(s, "conv2", width, width, 3, stride2, padding));
  s.blocks.push_back(b2);
  s.feature_dim = width;
  s.downsample_rate = stride2;
  s.validate();
  return s;
}

}  // namespace anyres
