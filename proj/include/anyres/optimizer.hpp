#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace anyres {

// Half-cosine annealing: lr0 * 0.5 * (1 + cos(pi * t / total)); decays to zero.
inline double cosine_lr(long step, long total_steps, double lr0) {
  if (total_steps <= 0) throw std::invalid_argument("total_steps must be positive");
  if (step < 0 || step > total_steps) throw std::invalid_argument("step outside schedule");
  return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(step) /
                                     static_cast<double>(total_steps)));
}

// SGD with classical momentum; weight decay is added to the gradient before
// the velocity update (decoupled per parameter group by passing wd=0).
template <typename T>
void sgd_update(std::vector<T>& param, const std::vector<T>& grad, std::vector<T>& velocity,
                double lr, double momentum, double weight_decay) {
  if (velocity.size() != param.size()) velocity.assign(param.size(), T(0));
  const T mu = static_cast<T>(momentum);
  const T wd = static_cast<T>(weight_decay);
  const T step = static_cast<T>(lr);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i] + wd * param[i];
    velocity[i] = mu * velocity[i] + g;
    param[i] -= step * velocity[i];
  }
}

}  // namespace anyres
