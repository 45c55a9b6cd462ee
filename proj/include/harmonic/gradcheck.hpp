#pragma once

#include <harmonic/tensor.hpp>

#include <cmath>
#include <functional>

namespace harmonic {

/// Central-difference gradient of a scalar function, one coordinate at a time.
template <Real T, typename F>
  requires std::invocable<F&, const Tensor<T>&>
Tensor<T> finite_diff_grad(F&& f, const Tensor<T>& x, double eps) {
  if (!(eps > 0.0)) throw InvalidArgument("finite_diff_grad: eps must be positive");
  Tensor<T> grad(x.shape());
  Tensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = static_cast<T>(orig + eps);
    const double fp = static_cast<double>(f(static_cast<const Tensor<T>&>(probe)));
    probe[i] = static_cast<T>(orig - eps);
    const double fm = static_cast<double>(f(static_cast<const Tensor<T>&>(probe)));
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericalError("finite_diff_grad: non-finite function value at index " +
                           std::to_string(i));
    }
    grad[i] = static_cast<T>((fp - fm) / (2.0 * eps));
  }
  return grad;
}

/// ||a - b|| / max(||a|| + ||b||, floor); the usual gradient-check metric.
template <Real T>
double relative_error(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-12) {
  a.require_same_shape(b, "relative_error");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    diff += d * d;
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nb), floor);
}

}  // namespace harmonic
