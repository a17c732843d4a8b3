#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "anyres/rng.hpp"
#include "anyres/tensor.hpp"

namespace anyres {

// CHW float image, pixel values nominally in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<float> pix;

  Image() = default;
  Image(int w, int h, int c = 3)
      : width(w), height(h), channels(c),
        pix(static_cast<std::size_t>(w) * h * c, 0.0f) {}

  float& at(int c, int y, int x) {
    return pix[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return pix[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

// Bilinear sample with edge clamping; coordinates in source pixel space.
inline float bilinear_sample(const Image& img, int c, double y, double x) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  auto clampx = [&](int v) { return std::clamp(v, 0, img.width - 1); };
  auto clampy = [&](int v) { return std::clamp(v, 0, img.height - 1); };
  const float v00 = img.at(c, clampy(y0), clampx(x0));
  const float v01 = img.at(c, clampy(y0), clampx(x0 + 1));
  const float v10 = img.at(c, clampy(y0 + 1), clampx(x0));
  const float v11 = img.at(c, clampy(y0 + 1), clampx(x0 + 1));
  const double top = v00 + fx * (v01 - v00);
  const double bot = v10 + fx * (v11 - v10);
  return static_cast<float>(top + fy * (bot - top));
}

// Bilinear resize of a source window to out_w x out_h. A unit-scale resize
// of the full window samples exactly at pixel centers (identity).
inline Image resize_window(const Image& src, double wx, double wy, double ww, double wh,
                           int out_w, int out_h) {
  Image out(out_w, out_h, src.channels);
  const double sx = ww / out_w;
  const double sy = wh / out_h;
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < out_h; ++y) {
      const double src_y = wy + (y + 0.5) * sy - 0.5;
      for (int x = 0; x < out_w; ++x) {
        const double src_x = wx + (x + 0.5) * sx - 0.5;
        out.at(c, y, x) = bilinear_sample(src, c, src_y, src_x);
      }
    }
  return out;
}

inline Image resize(const Image& src, int out_w, int out_h) {
  return resize_window(src, 0.0, 0.0, src.width, src.height, out_w, out_h);
}

inline Image center_crop(const Image& src, int size) {
  if (src.width < size || src.height < size)
    throw std::invalid_argument("center crop larger than image");
  const int x0 = (src.width - size) / 2;
  const int y0 = (src.height - size) / 2;
  Image out(size, size, src.channels);
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) out.at(c, y, x) = src.at(c, y0 + y, x0 + x);
  return out;
}

inline Image hflip(const Image& src) {
  Image out(src.width, src.height, src.channels);
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x) out.at(c, y, x) = src.at(c, y, src.width - 1 - x);
  return out;
}

// Evaluation protocol: resize the shorter side to round(T / 0.875), then
// center-crop T x T.
inline int eval_resize_target(int t) {
  return static_cast<int>(std::lround(static_cast<double>(t) / 0.875));
}

inline Image eval_view(const Image& src, int t) {
  if (t < 1) throw std::invalid_argument("eval resolution must be >= 1");
  const int shorter = eval_resize_target(t);
  int rw, rh;
  if (src.width <= src.height) {
    rw = shorter;
    rh = static_cast<int>(std::lround(static_cast<double>(src.height) * shorter / src.width));
  } else {
    rh = shorter;
    rw = static_cast<int>(std::lround(static_cast<double>(src.width) * shorter / src.height));
  }
  Image resized = (rw == src.width && rh == src.height) ? src : resize(src, rw, rh);
  return center_crop(resized, t);
}

// Random-resized-crop parameters (area fraction, aspect jitter, flip).
struct CropParams {
  double x = 0.0, y = 0.0;  // window origin in source pixels
  double w = 0.0, h = 0.0;  // window extent
  bool flip = false;
};

inline CropParams identity_crop(const Image& src) {
  CropParams p;
  p.w = src.width;
  p.h = src.height;
  return p;
}

inline CropParams sample_crop(Rng& rng, int width, int height, double area_lo = 0.35,
                              double area_hi = 1.0, double flip_prob = 0.5) {
  const double area = static_cast<double>(width) * height;
  CropParams p;
  bool found = false;
  for (int attempt = 0; attempt < 10 && !found; ++attempt) {
    const double target = area * rng.uniform(area_lo, area_hi);
    const double log_ratio = rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
    const double ratio = std::exp(log_ratio);
    const double cw = std::sqrt(target * ratio);
    const double ch = std::sqrt(target / ratio);
    if (cw <= width && ch <= height && cw >= 1.0 && ch >= 1.0) {
      p.w = cw;
      p.h = ch;
      p.x = rng.uniform(0.0, width - cw);
      p.y = rng.uniform(0.0, height - ch);
      found = true;
    }
  }
  if (!found) {
    const double side = std::min(width, height);
    p.w = p.h = side;
    p.x = (width - side) / 2.0;
    p.y = (height - side) / 2.0;
  }
  p.flip = rng.bernoulli(flip_prob);
  return p;
}

inline Image apply_train_view(const Image& src, const CropParams& crop, int s) {
  Image out = resize_window(src, crop.x, crop.y, crop.w, crop.h, s, s);
  return crop.flip ? hflip(out) : out;
}

// Training augmentation: random-resized-crop to s x s plus horizontal flip.
inline Image train_view(const Image& src, int s, Rng& rng) {
  return apply_train_view(src, sample_crop(rng, src.width, src.height), s);
}

// Stacks images into a (N,3,S,S) batch, normalizing pixels to zero mean and
// unit-ish range: (p - 0.5) / 0.5.
inline Tensor<float> assemble_batch(const std::vector<Image>& views) {
  const std::size_t n = views.size();
  const std::size_t c = static_cast<std::size_t>(views.at(0).channels);
  const std::size_t h = static_cast<std::size_t>(views[0].height);
  const std::size_t w = static_cast<std::size_t>(views[0].width);
  Tensor<float> batch({n, c, h, w});
  for (std::size_t i = 0; i < n; ++i) {
    const Image& img = views[i];
    for (std::size_t k = 0; k < img.pix.size(); ++k)
      batch.data[i * c * h * w + k] = (img.pix[k] - 0.5f) / 0.5f;
  }
  return batch;
}

}  // namespace anyres
