#pragma once

#include "fairflow/nn/graph.hpp"

#include <vector>

namespace fairflow::nn {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;  // decoupled (AdamW style)
    double clip_norm = 0.0;     // global gradient-norm clip, 0 disables
};

class Adam {
public:
    Adam(std::vector<Parameter*> params, AdamConfig config);

    void zero_grad();
    // Applies one update from the accumulated gradients.
    void step();
    double grad_norm() const;

    AdamConfig& config() { return config_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    AdamConfig config_;
    long step_count_ = 0;
};

}  // namespace fairflow::nn
