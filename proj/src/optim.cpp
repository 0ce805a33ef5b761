#include "vmus/optim.hpp"

#include <algorithm>
#include <cmath>

#include "vmus/error.hpp"

namespace vmus {

double lr_schedule(long step, double peak_lr, long warmup_steps) {
    if (warmup_steps < 1) throw InvalidArgument("lr_schedule: warmup_steps must be >= 1");
    if (step < 0) throw InvalidArgument("lr_schedule: negative step " + std::to_string(step));
    if (step >= warmup_steps) return peak_lr;
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

void AdamW::step(const std::vector<Param*>& params, double lr, long step_index) {
    if (step_index < 1) throw InvalidArgument("AdamW step_index must be >= 1");
    for (const Param* p : params) {
        if (p->trainable && !p->grad.all_finite()) {
            throw NumericError("non-finite gradient in parameter '" + p->name + "'; step rejected");
        }
    }
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double t = static_cast<double>(step_index);
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);
    const double decay = 1.0 - lr * config_.weight_decay;
    for (Param* p : params) {
        if (!p->trainable) continue;
        Moments& s = state_[p->name];
        if (s.m.size() != p->value.size()) {
            s.m.assign(p->value.size(), 0.0);
            s.v.assign(p->value.size(), 0.0);
        }
        double* w = p->value.data();
        const double* g = p->grad.data();
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            s.m[i] = b1 * s.m[i] + (1.0 - b1) * g[i];
            s.v[i] = b2 * s.v[i] + (1.0 - b2) * g[i] * g[i];
            const double m_hat = s.m[i] / c1;
            const double v_hat = s.v[i] / c2;
            w[i] = w[i] * decay - lr * m_hat / (std::sqrt(v_hat) + config_.eps);
        }
        if (!p->value.all_finite()) throw NumericError("parameter '" + p->name + "' became non-finite after step");
    }
}

}  // namespace vmus
