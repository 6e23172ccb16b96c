#pragma once

#include <cmath>
#include <functional>

#include "modas/errors.hpp"
#include "modas/tensor.hpp"

namespace modas {

/// Central-difference gradient of a scalar function, used as an independent
/// check on analytic gradients. O(2n) function evaluations.
inline Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& point,
                          double h = 1e-6) {
    Tensor grad = Tensor::zeros(point.shape());
    Tensor x = point;
    for (long i = 0; i < point.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        const double d = (fp - fm) / (2.0 * h);
        if (!std::isfinite(d)) throw NumericError("finite-difference gradient is not finite");
        grad[i] = d;
    }
    return grad;
}

}  // namespace modas
