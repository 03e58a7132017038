#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "logitgc/tensor.hpp"

namespace logitgc {

// Per-parameter adaptive-moment state.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_hat = 1e-8;
};

// One adaptive-moment update with bias correction. `step` is 1-based and
// must be the count of updates applied to this state including this one.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      std::size_t step, const AdamConfig& cfg = {}) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("adam_step: parameter/gradient size mismatch: " +
                                    std::to_string(params.size()) + " vs " + std::to_string(grads.size()));
    }
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw std::invalid_argument("adam_step: moment arrays do not match parameter shape");
    }
    if (step == 0) throw std::invalid_argument("adam_step: step must be >= 1");

    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps_hat);
    }
}

// Bundles the state for a fixed parameter list. Deterministic given inputs.
class AdamOptimizer {
  public:
    AdamOptimizer(std::vector<Tensor> params, AdamConfig cfg)
        : params_(std::move(params)), states_(params_.size()), cfg_(cfg) {}

    void step() {
        ++t_;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (!params_[i].has_grad()) continue;  // no gradient flowed, parameter untouched
            adam_step(params_[i].values_mut(), params_[i].grad(), states_[i], t_, cfg_);
        }
    }

    void zero_grad() {
        for (auto& p : params_) {
            if (p.has_grad()) p.zero_grad();
        }
    }

    std::size_t steps_taken() const { return t_; }

  private:
    std::vector<Tensor> params_;
    std::vector<AdamState> states_;
    AdamConfig cfg_;
    std::size_t t_ = 0;
};

}  // namespace logitgc
