#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nightshift/tensor.hpp"

namespace nightshift {

/// Relative error between an analytic and a numeric derivative.
inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

/// Compares the tape gradient of a scalar closure `f()` with respect to `param`
/// against central differences, perturbing `param` in place (restored afterwards).
/// Checks the listed coordinates, or every coordinate when `coords` is empty.
/// Returns the maximum relative error.
inline double grad_check_param(const std::function<Tensor()>& f, Tensor param, double h,
                               std::span<const std::size_t> coords = {}) {
    if (!(h > 0)) throw ContractError("grad_check: step h must be positive");
    const bool was_trainable = param.requires_grad();
    param.set_requires_grad(true);
    param.zero_grad();
    {
        Tape tape;
        TapeScope scope(tape);
        const Tensor y = f();
        backward(y, tape);
    }
    std::vector<double> analytic(param.numel(), 0.0);
    if (param.has_grad()) std::copy(param.grad().begin(), param.grad().end(), analytic.begin());
    param.zero_grad();
    param.set_requires_grad(was_trainable);

    std::vector<std::size_t> all;
    if (coords.empty()) {
        all.resize(param.numel());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        coords = all;
    }
    auto values = param.mutable_data();
    auto probe = [&](std::size_t i, double x) {
        values[i] = x;
        NoGradScope no_grad;
        const double v = f().item();
        if (!std::isfinite(v)) {
            throw NumericalError("grad_check: non-finite value at coordinate " + std::to_string(i), i);
        }
        return v;
    };
    double worst = 0.0;
    for (std::size_t i : coords) {
        const double x0 = values[i];
        const double up = probe(i, x0 + h);
        const double down = probe(i, x0 - h);
        values[i] = x0;
        const double numeric = (up - down) / (2.0 * h);
        worst = std::max(worst, relative_error(analytic[i], numeric));
    }
    return worst;
}

/// grad_check(f, x, h): f maps a tensor to a scalar tensor.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    Tensor leaf = x.clone();
    return grad_check_param([&] { return f(leaf); }, leaf, h);
}

}  // namespace nightshift
