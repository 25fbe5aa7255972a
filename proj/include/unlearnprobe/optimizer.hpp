#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace unlearnprobe {

// AdamW with decoupled weight decay over a flat parameter vector.
class AdamW {
public:
    AdamW(std::size_t size, double lr, double weight_decay = 0.0, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps), m_(size, 0.0),
          v_(size, 0.0) {
        if (lr <= 0.0) throw std::runtime_error("adamw: lr must be positive");
    }

    void step(std::vector<double>& params, const std::vector<double>& grads) {
        if (params.size() != m_.size() || grads.size() != m_.size()) {
            throw std::runtime_error("adamw: size mismatch");
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = b1_ * m_[i] + (1.0 - b1_) * grads[i];
            v_[i] = b2_ * v_[i] + (1.0 - b2_) * grads[i] * grads[i];
            const double mhat = m_[i] / bc1;
            const double vhat = v_[i] / bc2;
            params[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * params[i]);
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    double lr_, wd_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::vector<double> m_, v_;
};

}  // namespace unlearnprobe
