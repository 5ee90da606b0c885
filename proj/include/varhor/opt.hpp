#ifndef VARHOR_OPT_HPP
#define VARHOR_OPT_HPP

#include "varhor/smp.hpp"

namespace varhor {

// Piecewise-constant representer of the cost's directional derivative: for
// any direction v, sum_c dt * gradient[c] . v[c] equals the directional
// derivative. Cells at or beyond the stopping time carry zeros.
std::vector<Vec> cost_gradient(const Pipeline& pipe);

struct OptimizerOptions {
    double step0 = 1.0;    // initial trial step of the backtracking search
    int max_iters = 200;
    double armijo_c = 1e-4;
    double shrink = 0.5;
    double grad_tol = 1e-4; // stop when the projected-gradient sup norm falls below this
};

struct OptimizerTraceRow {
    int iter = 0;
    double J = 0.0;
    double tau_hat = 0.0;
    double step = 0.0;      // accepted step length
    double grad_norm = 0.0; // projected-gradient sup norm at this iterate
};

struct OptimizerResult {
    ControlPath control;
    double J = 0.0;
    double tau_hat = 0.0;
    CaseTag case_tag = CaseTag::Never;
    int iters = 0;
    bool converged = false;
    std::vector<OptimizerTraceRow> trace;
};

// Projected gradient descent with Armijo backtracking. All cost evaluations
// share one seed so the search works on a fixed sample-average objective.
OptimizerResult optimize(const ProblemSpec& spec, ControlPath u0, int M, uint64_t seed,
                         const OptimizerOptions& opts = {}, int basis_degree = 2);

} // namespace varhor

#endif
