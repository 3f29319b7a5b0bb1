#include "fairflow/nn/optim.hpp"

#include <cmath>

namespace fairflow::nn {

Adam::Adam(std::vector<Parameter*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    for (const Parameter* p : params_) {
        m_.emplace_back(p->value.rows(), p->value.cols());
        v_.emplace_back(p->value.rows(), p->value.cols());
    }
}

void Adam::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

double Adam::grad_norm() const {
    double s = 0.0;
    for (const Parameter* p : params_) {
        for (double g : p->grad.data()) s += g * g;
    }
    return std::sqrt(s);
}

void Adam::step() {
    ++step_count_;
    double clip = 1.0;
    if (config_.clip_norm > 0.0) {
        const double n = grad_norm();
        if (n > config_.clip_norm) clip = config_.clip_norm / n;
    }
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& w = params_[i]->value.data();
        const auto& g = params_[i]->grad.data();
        auto& m = m_[i].data();
        auto& v = v_[i].data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g[j] * clip;
            m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
            v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= config_.learning_rate *
                    (mhat / (std::sqrt(vhat) + config_.epsilon) + config_.weight_decay * w[j]);
        }
    }
}

}  // namespace fairflow::nn
