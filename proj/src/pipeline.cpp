#include "varhor/pipeline.hpp"

namespace varhor {

Pipeline run_pipeline(const ProblemSpec& spec, const ControlPath& control, int M,
                      std::uint64_t seed, int basis_degree, int at_T_band_cells) {
    Pipeline pipe;
    pipe.spec = &spec;
    pipe.control = control;
    pipe.M = M;
    pipe.seed = seed;
    pipe.basis_degree = basis_degree;
    pipe.ensemble = simulate_forward(spec, control, control.grid, M, seed);
    pipe.M = pipe.ensemble.M; // deterministic mode collapses to one path
    pipe.stop = stopping_time(spec, pipe.ensemble, at_T_band_cells);
    pipe.tau = split_at(control.grid, pipe.stop.tau_hat);
    pipe.backward = solve_backward(spec, pipe.ensemble, control, pipe.stop.tau_hat, basis_degree);
    pipe.J = cost(spec, pipe.ensemble, pipe.backward, pipe.stop.tau_hat);
    pipe.adjoints = solve_adjoints(spec, pipe.ensemble, pipe.backward, control);
    if (pipe.stop.case_tag != CaseTag::Never) {
        pipe.h_tau = h_at_tau(pipe.stop.h_curve, pipe.stop.tau_hat);
        pipe.scriptL = script_L(spec, pipe.ensemble, pipe.backward, pipe.adjoints, control);
    }
    return pipe;
}

ControlPath perturb_control(const ProblemSpec& spec, const ControlPath& u, const ControlPath& v,
                            double rho) {
    ControlPath out = u;
    for (size_t i = 0; i < out.values.size(); ++i)
        out.values[i] += rho * v.values[i];
    for (int c = 0; c < out.grid.N; ++c) {
        auto cell = out.cell(c);
        for (int a = 0; a < out.k; ++a) {
            if (cell[static_cast<size_t>(a)] < spec.U_lo[static_cast<size_t>(a)] - 1e-12 ||
                cell[static_cast<size_t>(a)] > spec.U_hi[static_cast<size_t>(a)] + 1e-12)
                throw Error(ErrorCode::DirectionLeavesBox,
                            "perturbed control leaves the admissible box at cell " +
                                std::to_string(c));
        }
    }
    return out;
}

} // namespace varhor
