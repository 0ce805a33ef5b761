#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "vmus/param.hpp"

namespace vmus {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.1;
    double eps = 1e-8;
};

// Linear warmup to peak_lr over warmup_steps, constant afterwards.
double lr_schedule(long step, double peak_lr, long warmup_steps);

// AdamW with bias correction and decoupled weight decay. Moments are kept
// per parameter name; frozen parameters are never touched.
class AdamW {
public:
    explicit AdamW(AdamWConfig config = {}) : config_(config) {}

    const AdamWConfig& config() const noexcept { return config_; }

    // step_index is 1-based. Gradients are validated before any parameter is
    // modified, so a rejected step leaves every parameter unchanged.
    void step(const std::vector<Param*>& params, double lr, long step_index);

    void reset() { state_.clear(); }

private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };

    AdamWConfig config_;
    std::unordered_map<std::string, Moments> state_;
};

}  // namespace vmus
