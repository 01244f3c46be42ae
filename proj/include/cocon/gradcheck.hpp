#pragma once

// Finite-difference gradient verification. The numeric side is a central
// difference; the reported error is the max over all parameter entries of
// |analytic − numeric| / max(1e-12, |analytic| + |numeric|).

#include <functional>

#include "cocon/tensor.hpp"

namespace cocon {

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max(1e-12, std::abs(a) + std::abs(b));
}

// f must be deterministic and re-evaluate the loss from the current
// parameter values on every call.
inline double grad_check(const std::function<Tensor()>& f, ParameterSet& params,
                         double eps = 1e-5) {
    params.zero_grads();
    backward(f());
    // snapshot analytic grads before perturbing anything
    std::map<std::string, std::vector<double>> analytic;
    for (auto& [name, t] : params) analytic[name] = t.grad();

    double worst = 0.0;
    NoGradGuard no_grad;
    for (auto& [name, t] : params) {
        auto& vals = t.data_mut();
        const auto& an = analytic[name];
        for (size_t i = 0; i < vals.size(); ++i) {
            double saved = vals[i];
            vals[i] = saved + eps;
            double up = f().value();
            vals[i] = saved - eps;
            double down = f().value();
            vals[i] = saved;
            double numeric = (up - down) / (2.0 * eps);
            worst = std::max(worst, rel_err(an[i], numeric));
        }
    }
    return worst;
}

}  // namespace cocon
