#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace promptforge {

struct AdamOptions {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;  // decoupled (AdamW)
};

/// AdamW over a flat parameter vector.
class Adam {
public:
    Adam(std::size_t n, AdamOptions opts) : opts_(opts), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::span<double> params, std::span<const double> grad) {
        ++t_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, t_);
        const double bc2 = 1.0 - std::pow(opts_.beta2, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = opts_.beta1 * m_[i] + (1 - opts_.beta1) * grad[i];
            v_[i] = opts_.beta2 * v_[i] + (1 - opts_.beta2) * grad[i] * grad[i];
            const double mhat = m_[i] / bc1, vhat = v_[i] / bc2;
            params[i] -= opts_.learning_rate * (mhat / (std::sqrt(vhat) + opts_.epsilon) + opts_.weight_decay * params[i]);
        }
    }

    int steps() const noexcept { return t_; }

private:
    AdamOptions opts_;
    std::vector<double> m_, v_;
    int t_ = 0;
};

}  // namespace promptforge
