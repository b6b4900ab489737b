#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fsl/params.hpp"
#include "fsl/tensor.hpp"

namespace fsl {

// Step-decay schedule: base learning rate halved at start_at,
// start_at + decay_every, ... (decay_every == 0 disables decay).
struct LrSchedule {
    double base = 1e-3;
    std::int64_t decay_every = 2000;
    std::int64_t start_at = 2000;
};

inline double lr_at(std::int64_t step, const LrSchedule& s) {
    if (step < 0)
        throw ContractError("lr_at: negative step");
    std::int64_t k = 0;
    if (s.decay_every > 0 && step >= s.start_at)
        k = 1 + (step - s.start_at) / s.decay_every;
    return s.base * std::pow(0.5, static_cast<double>(k));
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam with bias correction. Moment buffers are index-aligned with the
// ParamSet the state was created for.
class AdamState {
public:
    AdamState() = default;
    AdamState(const ParamSet& params, AdamConfig cfg) : cfg_(cfg) {
        for (const auto& e : params.entries()) {
            m_.push_back(Tensor::zeros(e.tensor.shape));
            v_.push_back(Tensor::zeros(e.tensor.shape));
        }
    }

    std::int64_t step() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

    // grads index-aligned with params. NaN gradients leave params untouched.
    void apply(ParamSet& params, const std::vector<Tensor>& grads, double lr) {
        if (grads.size() != params.size() || grads.size() != m_.size())
            throw ContractError("adam_step: gradient/parameter count mismatch");
        if (lr < 0.0)
            throw ContractError("adam_step: negative learning rate");
        for (const auto& g : grads)
            if (!g.all_finite())
                throw NumericError("adam_step: non-finite gradient");
        step_ += 1;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t p = 0; p < grads.size(); ++p) {
            auto& theta = params.entries()[p].tensor;
            if (!same_shape(theta, grads[p]))
                throw ContractError("adam_step: gradient shape mismatch at '" + params.entries()[p].name + "'");
            for (std::size_t i = 0; i < theta.data.size(); ++i) {
                const double g = grads[p].data[i];
                double& m = m_[p].data[i];
                double& v = v_[p].data[i];
                m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
                v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                theta.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
            }
        }
    }

private:
    AdamConfig cfg_;
    std::int64_t step_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

}  // namespace fsl
