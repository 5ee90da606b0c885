#ifndef VARHOR_SMP_HPP
#define VARHOR_SMP_HPP

#include "varhor/pipeline.hpp"

namespace varhor {

// Forward sensitivity paths (same layout as the state block of PathEnsemble).
struct ForwardPaths {
    TimeGrid grid;
    int M = 0;
    int n = 0;
    Vec X; // M x (N+1) x n

    std::span<const double> state(int path, int node) const {
        return {X.data() + (static_cast<size_t>(path) * (grid.N + 1) + static_cast<size_t>(node)) *
                               static_cast<size_t>(n),
                static_cast<size_t>(n)};
    }
    void interp(int path, double t, std::span<double> out) const;
};

// First-order sensitivity of the state to a control direction: linearized
// dynamics driven by the ensemble's own Brownian increments, zero start.
ForwardPaths variational_forward(const ProblemSpec& spec, const PathEnsemble& ensemble,
                                 const ControlPath& control, const ControlPath& v);

struct VariationalSolution {
    ForwardPaths xi;
    Curve hbar;            // direction's h-bar curve (cases with horizon motion)
    double ratio = 0.0;    // integral of hbar over [0, tau_hat] divided by h(tau_hat)
    BackwardSolution eta;  // primary branch
    Vec kappa;             // ensemble-mean terminal value of eta
    bool has_alt = false;  // AtT: the dichotomy's plain branch as well
    BackwardSolution eta_alt;
    Vec kappa_alt;
};

VariationalSolution variational_solve(const Pipeline& pipe, const ControlPath& v);

// Directional derivative of the cost in direction v (the case-appropriate
// first-order expansion; AtT uses the horizon-motion branch).
double gateaux_cost(const Pipeline& pipe, const ControlPath& v);

struct SMPReport {
    CaseTag case_tag = CaseTag::Never;
    double tau_hat = 0.0;
    double script_L = 0.0;
    struct Entry {
        double t = 0.0;
        int probe = 0;        // index into the probe list
        double margin = 0.0;  // left-hand side of the first-order inequality
        char branch = 'h';    // 'h' = with horizon motion, 'p' = plain H_u branch
    };
    std::vector<Entry> margins;
    double min_margin = 0.0;
    double argmin_t = 0.0;
    int argmin_probe = 0;
    char argmin_branch = 'h';
};

// Necessary-condition margins over (time node, probe control value). Probes
// are constant control vectors; the direction entering the h-bar term is the
// constant extension of u_probe - u(t_i).
SMPReport check_smp(const Pipeline& pipe, const std::vector<Vec>& u_probes, int t_stride,
                    bool force_plain = false);

struct RhoRow {
    double rho = 0.0;
    double d_tau = 0.0;   // |tau(u_rho) - tau(u)|
    double err_eta = 0.0; // sup_t E|eta_rho - eta|^2
    double err_Y = 0.0;   // sup_t E|(Y_rho - Y)/rho - eta_rho|^2
    double err_p = 0.0;   // sup_t E|p_rho - p|^2
};

// Convergence table of the rho-moving variational/adjoint family toward the
// limiting systems, with common random numbers across legs.
std::vector<RhoRow> rho_convergence(const Pipeline& pipe, const ControlPath& v,
                                    const std::vector<double>& rho_list);

} // namespace varhor

#endif
