#ifndef VARHOR_ADJOINT_HPP
#define VARHOR_ADJOINT_HPP

#include "varhor/bsde.hpp"

namespace varhor {

// Costates on [0, tau_hat]: q runs forward from -gamma_y(Y(0)), (p, k) run
// backward from beta_x - Psi_x' q at the terminal time.
struct AdjointSolution {
    TauInfo tau;
    int M = 0;
    int m = 0;
    Vec q;          // M x (I+1) x m, node values
    Vec q_terminal; // M x m, value at tau_hat (partial-cell extension)
    BackwardSolution pk; // V = p (dim n), Zv = k (dim n*d)

    std::span<const double> q_node(int path, int node) const {
        return {q.data() + (static_cast<size_t>(path) * (tau.I + 1) + static_cast<size_t>(node)) *
                               static_cast<size_t>(m),
                static_cast<size_t>(m)};
    }
    // linear interpolation of q along the path at time t in [0, tau_hat]
    void q_at(int path, double t, std::span<double> out) const;
};

// q by forward Euler-Maruyama: dq = -(g_y' q + l_y)dt - (g_z' q + l_z)dW
void solve_q(const ProblemSpec& spec, const PathEnsemble& ensemble,
             const BackwardSolution& backward, const ControlPath& control,
             AdjointSolution& adj);

// (p, k) by the generic backward solver with drift -H_x
void solve_p(const ProblemSpec& spec, const PathEnsemble& ensemble,
             const BackwardSolution& backward, const ControlPath& control,
             AdjointSolution& adj);

// same system with an arbitrary terminal time (used by the convergence
// harness, which re-anchors the terminal at the earlier of two horizons)
BackwardSolution solve_pk(const ProblemSpec& spec, const PathEnsemble& ensemble,
                          const BackwardSolution& backward, const ControlPath& control,
                          const AdjointSolution& adj, const TauInfo& tau);

AdjointSolution solve_adjoints(const ProblemSpec& spec, const PathEnsemble& ensemble,
                               const BackwardSolution& backward, const ControlPath& control);

// H = p.f + k.sigma + q.g + l and its gradient in u
void hamiltonian(const ProblemSpec& spec, const Vec& slots, std::span<const double> p,
                 std::span<const double> k, std::span<const double> q, double& H,
                 std::span<double> H_u);

// the scalar terminal-time constant: E[q'Psi~ - q'g - beta~ - l] at tau_hat
double script_L(const ProblemSpec& spec, const PathEnsemble& ensemble,
                const BackwardSolution& backward, const AdjointSolution& adj,
                const ControlPath& control);

// drift of E[Psi(X(t))] / E[beta(X(t))]: first-derivative term plus the
// half-trace diffusion term (m-vector / scalar)
void psi_tilde(const ProblemSpec& spec, const Vec& slots, std::span<double> out);
double beta_tilde(const ProblemSpec& spec, const Vec& slots);

} // namespace varhor

#endif
