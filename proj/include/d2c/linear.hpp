#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "d2c/error.hpp"

namespace d2c {

/// y = w . x + b
struct LinearModel {
  std::vector<double> weights;
  double bias = 0.0;

  std::size_t dims() const noexcept { return weights.size(); }
};

inline double predict_linear(const LinearModel& m, std::span<const double> x) {
  detail::require(x.size() == m.weights.size(), "predict_linear: input length does not match weights");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += m.weights[i] * x[i];
  return acc + m.bias;
}

/// Coordinate-wise weighted average of weights and biases, accumulated in model order.
inline LinearModel average_linear(std::span<const LinearModel> models, std::span<const double> alpha) {
  detail::require(!models.empty(), "average_linear: no models");
  detail::require(models.size() == alpha.size(), "average_linear: weight count does not match model count");
  LinearModel out{std::vector<double>(models[0].dims(), 0.0), 0.0};
  for (std::size_t k = 0; k < models.size(); ++k) {
    detail::require(models[k].dims() == out.dims(), "average_linear: models differ in dimension");
    for (std::size_t i = 0; i < out.dims(); ++i) out.weights[i] += alpha[k] * models[k].weights[i];
    out.bias += alpha[k] * models[k].bias;
  }
  return out;
}

}  // namespace d2c
