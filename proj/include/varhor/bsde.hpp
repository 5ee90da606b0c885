#ifndef VARHOR_BSDE_HPP
#define VARHOR_BSDE_HPP

#include <functional>

#include "varhor/sim.hpp"

namespace varhor {

enum class BsdeMode { Deterministic, Regression };

// Split of the grid at the terminal time: nodes 0..I are fully covered,
// delta = tau_hat - t_I is the partial last cell (0 when tau_hat hits a node).
struct TauInfo {
    double tau_hat = 0.0;
    int I = 0;
    double delta = 0.0;
};

TauInfo split_at(const TimeGrid& grid, double tau_hat);

// linear interpolation of path p's state at time t (clamped to [0, tau])
void interp_state(const PathEnsemble& ensemble, int path, double t, std::span<double> out);

// Backward solution on [0, tau_hat]: V on nodes 0..I plus the implicit
// terminal at tau_hat; Zv entry i covers cell i (entry I covers the partial cell).
struct BackwardSolution {
    TimeGrid grid;
    TauInfo tau;
    int M = 0;
    int r = 0;    // backward state dimension
    int zdim = 0; // r * d
    BsdeMode mode = BsdeMode::Deterministic;
    int basis_degree = 0;
    Vec V;  // M x (I+1) x r
    Vec Zv; // M x (I+1) x zdim
    Vec terminal; // M x r, value at tau_hat

    std::span<const double> v(int path, int node) const {
        return {V.data() + (static_cast<size_t>(path) * (tau.I + 1) + static_cast<size_t>(node)) *
                               static_cast<size_t>(r),
                static_cast<size_t>(r)};
    }
    std::span<const double> z(int path, int cell) const {
        return {Zv.data() + (static_cast<size_t>(path) * (tau.I + 1) + static_cast<size_t>(cell)) *
                                static_cast<size_t>(zdim),
                static_cast<size_t>(zdim)};
    }
    Vec mean_v(int node) const;
};

// Drift callback for a backward equation dV = drift dt + Zv dW: fill `out`
// (r entries) with the drift at (t, x, V, Zv) for the given path.
using BackwardDriver =
    std::function<void(int path, double t, std::span<const double> x, std::span<const double> V,
                       std::span<const double> Zv, std::span<double> out)>;

// Generic linear backward solver: RK4 time stepping in deterministic mode,
// least-squares Monte Carlo induction otherwise. `terminal` holds M x r values
// at tau_hat.
BackwardSolution solve_linear_backward(const ProblemSpec& spec, const PathEnsemble& ensemble,
                                       const TauInfo& tau, const Vec& terminal, int r,
                                       const BackwardDriver& driver, BsdeMode mode,
                                       int basis_degree);

BsdeMode select_mode(const ProblemSpec& spec);

// The Y equation: terminal Psi(X(tau_hat)), driver g.
BackwardSolution solve_backward(const ProblemSpec& spec, const PathEnsemble& ensemble,
                                const ControlPath& control, double tau_hat,
                                int basis_degree = 2);

// J = E[ integral of l over [0, tau_hat] + beta(X(tau_hat)) ] + gamma(mean Y(0))
double cost(const ProblemSpec& spec, const PathEnsemble& ensemble,
            const BackwardSolution& backward, double tau_hat);

} // namespace varhor

#endif
