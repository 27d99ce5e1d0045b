#pragma once

#include <cmath>
#include <vector>

#include "adaprop/common.hpp"
#include "adaprop/tape.hpp"

namespace adaprop {

// Adam with decoupled weight decay. One optimizer owns a fixed list of
// parameters; step() consumes the accumulated gradients and clears them.
class Adam {
public:
    Adam(std::vector<Param*> params, double lr, double weight_decay, double beta1 = 0.9,
         double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)),
          lr_(lr),
          wd_(weight_decay),
          beta1_(beta1),
          beta2_(beta2),
          eps_(eps) {
        for (Param* p : params_) {
            m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
            v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Param& p = *params_[i];
            if (!p.grad.allFinite()) throw NumericError("non-finite gradient for " + p.name);
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
            Mat mhat = m_[i] / bc1;
            Mat vhat = v_[i] / bc2;
            if (wd_ != 0.0) p.value -= lr_ * wd_ * p.value;
            p.value -= lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
            p.zero_grad();
        }
    }

    void zero_grad() {
        for (Param* p : params_) p->zero_grad();
    }

private:
    std::vector<Param*> params_;
    double lr_, wd_, beta1_, beta2_, eps_;
    long long t_ = 0;
    std::vector<Mat> m_, v_;
};

}  // namespace adaprop
