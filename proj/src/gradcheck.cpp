#include "vmus/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "vmus/error.hpp"

namespace vmus {

namespace {

double evaluate(const LossBuilder& loss, const std::string& param_name) {
    Graph g(false);
    const double v = loss(g).value()[0];
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite loss while perturbing '" + param_name + "'");
    return v;
}

}  // namespace

GradCheckReport finite_diff_check(const LossBuilder& loss, const std::vector<Param*>& params, double eps,
                                  double rel_tol, double abs_floor) {
    if (!(eps > 0.0)) throw InvalidArgument("finite_diff_check: eps must be positive");
    for (Param* p : params) p->zero_grad();
    {
        Graph g(true);
        Var l = loss(g);
        if (!std::isfinite(l.value()[0])) throw NumericError("finite_diff_check: non-finite loss at base point");
        g.backward(l);
    }
    GradCheckReport report;
    for (Param* p : params) {
        if (!p->trainable) continue;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double orig = p->value[i];
            p->value[i] = orig + eps;
            const double up = evaluate(loss, p->name);
            p->value[i] = orig - eps;
            const double down = evaluate(loss, p->name);
            p->value[i] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = p->grad[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
            const double rel = std::abs(analytic - numeric) / denom;
            ++report.checked;
            if (rel > report.max_rel_error || report.worst_param.empty()) {
                if (rel >= report.max_rel_error) {
                    report.max_rel_error = rel;
                    report.worst_param = p->name;
                    report.worst_index = i;
                }
            }
        }
    }
    report.passed = report.max_rel_error < rel_tol;
    return report;
}

}  // namespace vmus
