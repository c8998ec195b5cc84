#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "nightshift/tensor.hpp"

namespace nightshift {

struct AdamConfig {
    double base_lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t total_steps = 1;
};

/// Per-parameter moments plus the linearly decaying step-size schedule.
struct AdamState {
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::size_t step_count = 0;
    double base_lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t total_steps = 1;

    AdamState() = default;

    AdamState(std::span<const NamedTensor> params, const AdamConfig& config)
        : base_lr(config.base_lr),
          beta1(config.beta1),
          beta2(config.beta2),
          eps(config.eps),
          total_steps(config.total_steps) {
        if (!(base_lr > 0)) throw ContractError("adam: base_lr must be positive");
        if (total_steps == 0) throw ContractError("adam: total_steps must be positive");
        for (const auto& p : params) {
            first_moment.emplace_back(p.tensor.numel(), 0.0);
            second_moment.emplace_back(p.tensor.numel(), 0.0);
        }
    }

    /// base_lr * max(0, 1 - step / total_steps)
    double effective_lr(std::size_t step) const {
        const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
        return base_lr * std::max(0.0, 1.0 - frac);
    }
};

/// One bias-corrected Adam update at effective_lr(step_count). Parameters without
/// an accumulated gradient are treated as having a zero gradient.
inline void adam_step(std::span<NamedTensor> params, AdamState& state) {
    if (params.size() != state.first_moment.size()) {
        throw ContractError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                            " parameters, got " + std::to_string(params.size()));
    }
    if (state.step_count >= state.total_steps) {
        throw ContractError("adam_step: step " + std::to_string(state.step_count) + " exceeds schedule of " +
                            std::to_string(state.total_steps) + " steps");
    }
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) {
            if (!std::isfinite(g)) throw TrainingError("adam_step: non-finite gradient in parameter '" + p.name + "'");
        }
    }
    const double lr = state.effective_lr(state.step_count);
    const double t = static_cast<double>(state.step_count + 1);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k].tensor;
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        if (m.size() != p.numel()) {
            throw ContractError("adam_step: moment size mismatch for parameter '" + params[k].name + "'");
        }
        auto values = p.mutable_data();
        const bool has = p.has_grad();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = has ? p.grad()[i] : 0.0;
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            values[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
        }
    }
    ++state.step_count;
}

/// Parameter list bundled with its optimizer state.
class Adam {
   public:
    Adam(std::vector<NamedTensor> params, const AdamConfig& config)
        : params_(std::move(params)), state_(params_, config) {}

    void step() { adam_step(params_, state_); }
    void zero_grad() { zero_grads(params_); }

    /// Step if the schedule still has room; returns false once exhausted.
    bool try_step() {
        if (state_.step_count >= state_.total_steps) return false;
        step();
        return true;
    }

    std::span<NamedTensor> params() { return params_; }
    const AdamState& state() const { return state_; }

   private:
    std::vector<NamedTensor> params_;
    AdamState state_;
};

}  // namespace nightshift
