#ifndef VARHOR_PIPELINE_HPP
#define VARHOR_PIPELINE_HPP

#include "varhor/adjoint.hpp"
#include "varhor/stopping.hpp"

namespace varhor {

// One full solve at a fixed control: forward ensemble, terminal time,
// backward pair, cost, costates and the terminal-time constant.
struct Pipeline {
    const ProblemSpec* spec = nullptr;
    ControlPath control;
    int M = 1;
    std::uint64_t seed = 0;
    int basis_degree = 2;

    PathEnsemble ensemble;
    StoppingResult stop;
    TauInfo tau;
    BackwardSolution backward;
    AdjointSolution adjoints;
    double J = 0.0;
    double scriptL = 0.0; // meaningful unless case Never
    double h_tau = 0.0;   // guarded h at tau_hat, unless case Never
};

Pipeline run_pipeline(const ProblemSpec& spec, const ControlPath& control, int M,
                      std::uint64_t seed, int basis_degree = 2, int at_T_band_cells = 2);

// u + rho v, verified against the control box (DirectionLeavesBox otherwise)
ControlPath perturb_control(const ProblemSpec& spec, const ControlPath& u, const ControlPath& v,
                            double rho);

} // namespace varhor

#endif
