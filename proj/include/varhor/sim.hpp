#ifndef VARHOR_SIM_HPP
#define VARHOR_SIM_HPP

#include <cstdint>
#include <functional>
#include <span>

#include "varhor/model.hpp"

namespace varhor {

// Ensemble of forward Euler-Maruyama paths plus the Brownian increments that
// generated them. Layouts: X is M x (N+1) x n, dW is M x N x d, row-major.
struct PathEnsemble {
    TimeGrid grid;
    int M = 0;
    int n = 0;
    int d = 0;
    Vec X;
    Vec dW;
    std::uint64_t seed = 0;
    ControlPath control;

    std::span<const double> state(int path, int node) const {
        return {X.data() + (static_cast<size_t>(path) * (grid.N + 1) + static_cast<size_t>(node)) *
                               static_cast<size_t>(n),
                static_cast<size_t>(n)};
    }
    std::span<const double> incr(int path, int step) const {
        return {dW.data() + (static_cast<size_t>(path) * grid.N + static_cast<size_t>(step)) *
                                static_cast<size_t>(d),
                static_cast<size_t>(d)};
    }
};

// Scalar statistic per grid node with its Monte Carlo standard error.
struct Curve {
    TimeGrid grid;
    Vec values;  // N+1
    Vec stderrs; // N+1, zero in deterministic mode

    double at(double t) const; // linear interpolation between nodes
};

// integral of the piecewise-linear curve from 0 to t_hi (partial last cell)
double integrate_curve(const Curve& c, double t_hi);

PathEnsemble simulate_forward(const ProblemSpec& spec, const ControlPath& control,
                              const TimeGrid& grid, int M, std::uint64_t seed);

Curve mean_functional(const PathEnsemble& ensemble,
                      const std::function<double(std::span<const double>)>& phi);

} // namespace varhor

#endif
