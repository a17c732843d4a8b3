#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "anyres/tensor.hpp"

namespace anyres {

// Row-wise softmax, stabilized by max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor<T> probs({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.ptr() + i * c;
    T* p = probs.ptr() + i * c;
    T zmax = z[0];
    for (std::size_t k = 1; k < c; ++k) zmax = std::max(zmax, z[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double e = std::exp(static_cast<double>(z[k] - zmax));
      p[k] = static_cast<T>(e);
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (std::size_t k = 0; k < c; ++k) p[k] = static_cast<T>(static_cast<double>(p[k]) * inv);
  }
  return probs;
}

// Mean cross-entropy over the batch.
template <typename T>
double ce_loss(const Tensor<T>& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw std::invalid_argument("label count does not match batch");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw std::invalid_argument("label " + std::to_string(y) + " out of range");
    const T* z = logits.ptr() + i * c;
    T zmax = z[0];
    for (std::size_t k = 1; k < c; ++k) zmax = std::max(zmax, z[k]);
    double lse = 0.0;
    for (std::size_t k = 0; k < c; ++k) lse += std::exp(static_cast<double>(z[k] - zmax));
    total += std::log(lse) - static_cast<double>(z[y] - zmax);
  }
  return total / static_cast<double>(n);
}

// Adds scale * d(mean CE)/d(logits) = scale * (softmax - onehot)/N into dlogits.
template <typename T>
void ce_loss_grad(const Tensor<T>& probs, const std::vector<int>& labels, double scale,
                  Tensor<T>& dlogits) {
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  const T s = static_cast<T>(scale / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const T* p = probs.ptr() + i * c;
    T* d = dlogits.ptr() + i * c;
    for (std::size_t k = 0; k < c; ++k) d[k] += s * p[k];
    d[labels[i]] -= s;
  }
}

// Batch-mean KL(p || q) with the 0*log(0) = 0 convention on the teacher side.
template <typename T>
double kl_divergence(const Tensor<T>& p, const Tensor<T>& q) {
  if (!p.same_shape(q)) throw std::invalid_argument("KL operands differ in shape");
  const std::size_t n = p.dim(0), c = p.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* pi = p.ptr() + i * c;
    const T* qi = q.ptr() + i * c;
    for (std::size_t k = 0; k < c; ++k) {
      const double pv = static_cast<double>(pi[k]);
      if (pv <= 0.0) continue;
      total += pv * (std::log(pv) - std::log(static_cast<double>(qi[k])));
    }
  }
  return total / static_cast<double>(n);
}

// Top-down distillation loss: the sum of batch-mean KL(p_teacher || p_student)
// over every ordered resolution pair with S_student < S_teacher. Teacher
// distributions enter as fixed soft labels -- no gradient flows into a
// network through the pairs where it teaches. Pairs are accumulated in a
// canonical (descending teacher, descending student) order so the value does
// not depend on the order the caller lists the scales in.
template <typename T>
double sd_loss(const std::vector<int>& scales, const std::vector<Tensor<T>>& teacher_probs,
               const std::vector<Tensor<T>>& student_probs) {
  const std::size_t k = scales.size();
  if (teacher_probs.size() != k || student_probs.size() != k)
    throw std::invalid_argument("distillation needs one distribution batch per scale");
  for (std::size_t i = 1; i < k; ++i)
    if (teacher_probs[i].dim(0) != teacher_probs[0].dim(0) ||
        student_probs[i].dim(0) != student_probs[0].dim(0))
      throw std::invalid_argument("distillation batches must be aligned across scales");

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scales[a] > scales[b]; });

  double total = 0.0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) {
      const std::size_t ti = order[a], si = order[b];
      if (scales[si] >= scales[ti]) continue;  // duplicate scale: no pair
      total += kl_divergence(teacher_probs[ti], student_probs[si]);
    }
  return total;
}

template <typename T>
double sd_loss(const std::vector<int>& scales, const std::vector<Tensor<T>>& probs) {
  return sd_loss(scales, probs, probs);
}

inline std::size_t sd_pair_count(std::vector<int> scales) {
  std::sort(scales.begin(), scales.end());
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scales.size(); ++i)
    for (std::size_t j = i + 1; j < scales.size(); ++j)
      if (scales[i] < scales[j]) ++pairs;
  return pairs;
}

// Adds scale * dL_SD/d(student logits) into dlogits[i] for every scale i.
// d(mean KL(p||softmax(z)))/dz = (softmax(z) - p)/N per teacher pair; the
// teacher side receives nothing.
template <typename T>
void sd_loss_grad(const std::vector<int>& scales, const std::vector<Tensor<T>>& probs,
                  double scale, std::vector<Tensor<T>>& dlogits) {
  const std::size_t k = scales.size();
  for (std::size_t si = 0; si < k; ++si) {
    const std::size_t n = probs[si].dim(0), c = probs[si].dim(1);
    std::size_t teachers = 0;
    for (std::size_t ti = 0; ti < k; ++ti)
      if (scales[ti] > scales[si]) ++teachers;
    if (teachers == 0) continue;
    const T s = static_cast<T>(scale / static_cast<double>(n));
    for (std::size_t ti = 0; ti < k; ++ti) {
      if (scales[ti] <= scales[si]) continue;
      const Tensor<T>& pt = probs[ti];
      const Tensor<T>& ps = probs[si];
      Tensor<T>& d = dlogits[si];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t cc = 0; cc < c; ++cc)
          d.at2(i, cc) += s * (ps.at2(i, cc) - pt.at2(i, cc));
    }
  }
}

}  // namespace anyres
