#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vmus/graph.hpp"
#include "vmus/param.hpp"

namespace vmus {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t checked = 0;  // number of trainable elements compared
    bool passed = false;
};

// Builds the scalar loss on the supplied graph.
using LossBuilder = std::function<Var(Graph&)>;

// Compares analytic gradients with central differences for every element of
// every trainable parameter in params. The relative error of an element is
// |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
GradCheckReport finite_diff_check(const LossBuilder& loss, const std::vector<Param*>& params, double eps,
                                  double rel_tol, double abs_floor = 1e-6);

}  // namespace vmus
