#include "varhor/sim.hpp"

#include <algorithm>
#include <cmath>

#include "varhor/rng.hpp"
#include "varhor/threads.hpp"

namespace varhor {

double Curve::at(double t) const {
    if (t <= 0.0)
        return values.front();
    if (t >= grid.T)
        return values.back();
    double s = t / grid.dt;
    int i = std::min(static_cast<int>(s), grid.N - 1);
    double w = s - i;
    return (1.0 - w) * values[static_cast<size_t>(i)] + w * values[static_cast<size_t>(i) + 1];
}

double integrate_curve(const Curve& c, double t_hi) {
    t_hi = std::clamp(t_hi, 0.0, c.grid.T);
    double acc = 0.0;
    double dt = c.grid.dt;
    for (int i = 0; i < c.grid.N; ++i) {
        double t1 = c.grid.node(i + 1);
        if (t1 <= t_hi) {
            acc += 0.5 * dt * (c.values[static_cast<size_t>(i)] + c.values[static_cast<size_t>(i) + 1]);
        } else {
            double delta = t_hi - c.grid.node(i);
            if (delta > 0.0)
                acc += 0.5 * delta * (c.values[static_cast<size_t>(i)] + c.at(t_hi));
            break;
        }
    }
    return acc;
}

PathEnsemble simulate_forward(const ProblemSpec& spec, const ControlPath& control,
                              const TimeGrid& grid, int M, std::uint64_t seed) {
    if (!control.grid.same_as(grid))
        throw Error(ErrorCode::DimensionMismatch, "control grid does not match simulation grid");
    if (M < 1)
        throw Error(ErrorCode::SchemaError, "path count must be >= 1");
    if (spec.sigma_zero)
        M = 1; // deterministic dynamics: one path carries everything

    PathEnsemble out;
    out.grid = grid;
    out.M = M;
    out.n = spec.dims.n;
    out.d = spec.dims.d;
    out.seed = seed;
    out.control = control;
    out.X.assign(static_cast<size_t>(M) * (grid.N + 1) * spec.dims.n, 0.0);
    out.dW.assign(static_cast<size_t>(M) * grid.N * spec.dims.d, 0.0);

    const int n = spec.dims.n, d = spec.dims.d;
    const double dt = grid.dt;
    const double sqdt = std::sqrt(dt);

    parallel_for(M, [&](int pb, int pe) {
        Vec slots, fv(static_cast<size_t>(n)), sv(static_cast<size_t>(n) * d);
        for (int p = pb; p < pe; ++p) {
            double* xp = out.X.data() + static_cast<size_t>(p) * (grid.N + 1) * n;
            double* wp = out.dW.data() + static_cast<size_t>(p) * grid.N * d;
            std::copy(spec.x0.begin(), spec.x0.end(), xp);
            for (int i = 0; i < grid.N; ++i) {
                const double* xi = xp + static_cast<size_t>(i) * n;
                double* xn = xp + static_cast<size_t>(i + 1) * n;
                double* dw = wp + static_cast<size_t>(i) * d;
                if (!spec.sigma_zero)
                    for (int j = 0; j < d; ++j)
                        dw[j] = sqdt * rng::normal(seed, static_cast<std::uint64_t>(p),
                                                   static_cast<std::uint64_t>(i),
                                                   static_cast<std::uint64_t>(j));
                spec.point_xu(slots, grid.node(i), {xi, static_cast<size_t>(n)}, control.cell(i));
                spec.f_val(slots, fv.data());
                for (int a = 0; a < n; ++a)
                    xn[a] = xi[a] + fv[static_cast<size_t>(a)] * dt;
                if (!spec.sigma_zero) {
                    spec.sigma_val(slots, sv.data());
                    for (int a = 0; a < n; ++a)
                        for (int j = 0; j < d; ++j)
                            xn[a] += sv[static_cast<size_t>(a) * d + j] * dw[j];
                }
                for (int a = 0; a < n; ++a)
                    if (!std::isfinite(xn[a]))
                        throw Error(ErrorCode::NonFiniteState,
                                    "state left the finite range at path " + std::to_string(p) +
                                        ", step " + std::to_string(i + 1));
            }
        }
    });
    return out;
}

Curve mean_functional(const PathEnsemble& ensemble,
                      const std::function<double(std::span<const double>)>& phi) {
    Curve curve;
    curve.grid = ensemble.grid;
    curve.values.assign(static_cast<size_t>(ensemble.grid.N) + 1, 0.0);
    curve.stderrs.assign(static_cast<size_t>(ensemble.grid.N) + 1, 0.0);
    const int M = ensemble.M;
    // sequential reduction per node keeps results thread-count independent
    for (int i = 0; i <= ensemble.grid.N; ++i) {
        double sum = 0.0, sumsq = 0.0;
        for (int p = 0; p < M; ++p) {
            double v = phi(ensemble.state(p, i));
            if (!std::isfinite(v))
                throw Error(ErrorCode::NonFiniteState,
                            "non-finite functional value at path " + std::to_string(p) + ", node " +
                                std::to_string(i));
            sum += v;
            sumsq += v * v;
        }
        double mean = sum / M;
        curve.values[static_cast<size_t>(i)] = mean;
        if (M > 1) {
            double var = std::max(0.0, (sumsq - M * mean * mean) / (M - 1));
            curve.stderrs[static_cast<size_t>(i)] = std::sqrt(var / M);
        }
    }
    return curve;
}

} // namespace varhor
