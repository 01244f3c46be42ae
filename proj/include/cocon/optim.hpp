#pragma once

// AdamW with decoupled weight decay, plus the linear learning-rate decay
// schedule. Moments live beside the parameters, keyed by path, and can be
// exported into a checkpoint for bitwise-reproducible resumes.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cocon/tensor.hpp"

namespace cocon {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

inline double linear_decay(size_t step, size_t total_steps, double base_lr) {
    if (total_steps == 0) throw std::invalid_argument("linear_decay: total_steps must be > 0");
    if (step >= total_steps) return 0.0;
    return base_lr * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

class AdamW {
public:
    AdamW(ParameterSet& params, AdamWConfig cfg = {}) : params_(&params), cfg_(cfg) {
        for (auto& [name, t] : params) {
            m_[name].assign(t.numel(), 0.0);
            v_[name].assign(t.numel(), 0.0);
        }
    }

    // One update from the current grads:
    //   θ ← θ − lr·( m̂/(√v̂ + eps) + wd·θ )
    // Non-finite gradients abort the step before any weight is touched.
    void step(double lr) {
        size_t t = step_count_ + 1;
        for (auto& [name, p] : *params_) {
            const auto& g = p.grad();
            for (size_t i = 0; i < g.size(); ++i) {
                if (!std::isfinite(g[i])) {
                    throw std::runtime_error("adamw: non-finite gradient in '" + name +
                                             "' entry " + std::to_string(i) + " at step " +
                                             std::to_string(t));
                }
            }
        }
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
        for (auto& [name, p] : *params_) {
            const auto& g = p.grad();
            auto& m = m_[name];
            auto& v = v_[name];
            auto& w = p.data_mut();
            for (size_t i = 0; i < g.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
            }
        }
        step_count_ = t;
    }

    size_t step_count() const { return step_count_; }
    const AdamWConfig& config() const { return cfg_; }

    // Optimizer state rides in the same checkpoint format under an "opt."
    // prefix that model loaders ignore.
    void export_state(ParameterSet& out) const {
        for (const auto& [name, m] : m_) {
            out.add("opt.m." + name, Tensor::param({m.size()}, std::vector<double>(m)));
        }
        for (const auto& [name, v] : v_) {
            out.add("opt.v." + name, Tensor::param({v.size()}, std::vector<double>(v)));
        }
        out.add("opt.step", Tensor::param({}, {static_cast<double>(step_count_)}));
    }

    void import_state(const ParameterSet& in) {
        for (auto& [name, m] : m_) {
            const Tensor& t = in.get("opt.m." + name);
            if (t.numel() != m.size()) {
                throw std::runtime_error("adamw: state size mismatch for '" + name + "'");
            }
            m = t.data();
            v_[name] = in.get("opt.v." + name).data();
        }
        step_count_ = static_cast<size_t>(in.get("opt.step").value());
    }

private:
    ParameterSet* params_;
    AdamWConfig cfg_;
    std::map<std::string, std::vector<double>> m_;
    std::map<std::string, std::vector<double>> v_;
    size_t step_count_ = 0;
};

}  // namespace cocon
