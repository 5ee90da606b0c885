#include "varhor/bsde.hpp"

#include <algorithm>
#include <cmath>

#include "varhor/linalg.hpp"

namespace varhor {

TauInfo split_at(const TimeGrid& grid, double tau_hat) {
    TauInfo info;
    info.tau_hat = std::clamp(tau_hat, 0.0, grid.T);
    info.I = std::min(static_cast<int>(info.tau_hat / grid.dt + 1e-9), grid.N);
    info.delta = info.tau_hat - grid.node(info.I);
    if (info.delta < 1e-12 * grid.T)
        info.delta = 0.0;
    return info;
}

void interp_state(const PathEnsemble& ensemble, int path, double t, std::span<double> out) {
    const TimeGrid& grid = ensemble.grid;
    t = std::clamp(t, 0.0, grid.T);
    double s = t / grid.dt;
    int i = std::min(static_cast<int>(s), grid.N - 1);
    double w = s - i;
    auto a = ensemble.state(path, i);
    auto b = ensemble.state(path, i + 1);
    for (size_t c = 0; c < out.size(); ++c)
        out[c] = (1.0 - w) * a[c] + w * b[c];
}

Vec BackwardSolution::mean_v(int node) const {
    Vec out(static_cast<size_t>(r), 0.0);
    for (int p = 0; p < M; ++p) {
        auto row = v(p, node);
        for (int c = 0; c < r; ++c)
            out[static_cast<size_t>(c)] += row[static_cast<size_t>(c)];
    }
    for (double& x : out)
        x /= M;
    return out;
}

BsdeMode select_mode(const ProblemSpec& spec) {
    return spec.sigma_zero ? BsdeMode::Deterministic : BsdeMode::Regression;
}

namespace {

void check_finite_slice(std::span<const double> v, int step, const char* what) {
    for (double x : v)
        if (!std::isfinite(x))
            throw Error(ErrorCode::NonFiniteBackward,
                        std::string(what) + " became non-finite at step " + std::to_string(step));
}

// monomial exponent tuples over n variables with total degree <= deg
std::vector<std::vector<int>> monomials(int n, int deg) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur(static_cast<size_t>(n), 0);
    std::function<void(int, int)> rec = [&](int var, int remaining) {
        if (var == n) {
            out.push_back(cur);
            return;
        }
        for (int e = 0; e <= remaining; ++e) {
            cur[static_cast<size_t>(var)] = e;
            rec(var + 1, remaining - e);
        }
        cur[static_cast<size_t>(var)] = 0;
    };
    rec(0, deg);
    return out;
}

// least-squares fit of several targets on a shared basis matrix, returning
// in-sample predictions (the conditional-expectation estimates)
class Regressor {
public:
    Regressor(const PathEnsemble& ensemble, int node, int degree)
        : M_(ensemble.M), powers_(monomials(ensemble.n, degree)),
          K_(static_cast<int>(powers_.size())) {
        B_.resize(static_cast<size_t>(M_) * K_);
        for (int p = 0; p < M_; ++p) {
            auto x = ensemble.state(p, node);
            for (int c = 0; c < K_; ++c) {
                double term = 1.0;
                for (int a = 0; a < ensemble.n; ++a)
                    for (int e = 0; e < powers_[static_cast<size_t>(c)][static_cast<size_t>(a)]; ++e)
                        term *= x[static_cast<size_t>(a)];
                B_[static_cast<size_t>(p) * K_ + c] = term;
            }
        }
        G_.assign(static_cast<size_t>(K_) * K_, 0.0);
        for (int p = 0; p < M_; ++p)
            for (int a = 0; a < K_; ++a)
                for (int b = 0; b <= a; ++b)
                    G_[static_cast<size_t>(a) * K_ + b] +=
                        B_[static_cast<size_t>(p) * K_ + a] * B_[static_cast<size_t>(p) * K_ + b];
        for (int a = 0; a < K_; ++a)
            for (int b = a + 1; b < K_; ++b)
                G_[static_cast<size_t>(a) * K_ + b] = G_[static_cast<size_t>(b) * K_ + a];
    }

    // target[p] -> prediction[p]
    void fit(const std::function<double(int)>& target, Vec& prediction, int step) const {
        Vec rhs(static_cast<size_t>(K_), 0.0);
        for (int p = 0; p < M_; ++p) {
            double y = target(p);
            for (int c = 0; c < K_; ++c)
                rhs[static_cast<size_t>(c)] += B_[static_cast<size_t>(p) * K_ + c] * y;
        }
        Vec coef;
        try {
            coef = cholesky_solve(G_, rhs, K_, 1e-10);
        } catch (const Error&) {
            throw Error(ErrorCode::SingularRegression,
                        "regression normal equations are rank-deficient at step " +
                            std::to_string(step));
        }
        prediction.assign(static_cast<size_t>(M_), 0.0);
        for (int p = 0; p < M_; ++p)
            for (int c = 0; c < K_; ++c)
                prediction[static_cast<size_t>(p)] +=
                    B_[static_cast<size_t>(p) * K_ + c] * coef[static_cast<size_t>(c)];
    }

private:
    int M_;
    std::vector<std::vector<int>> powers_;
    int K_;
    Vec B_;
    Vec G_;
};

} // namespace

BackwardSolution solve_linear_backward(const ProblemSpec& spec, const PathEnsemble& ensemble,
                                       const TauInfo& tau, const Vec& terminal, int r,
                                       const BackwardDriver& driver, BsdeMode mode,
                                       int basis_degree) {
    (void)spec;
    BackwardSolution sol;
    sol.grid = ensemble.grid;
    sol.tau = tau;
    sol.M = ensemble.M;
    sol.r = r;
    sol.zdim = r * ensemble.d;
    sol.mode = mode;
    sol.basis_degree = basis_degree;
    sol.terminal = terminal;
    sol.V.assign(static_cast<size_t>(sol.M) * (tau.I + 1) * r, 0.0);
    sol.Zv.assign(static_cast<size_t>(sol.M) * (tau.I + 1) * sol.zdim, 0.0);

    const TimeGrid& grid = ensemble.grid;
    const int n = ensemble.n;

    if (mode == BsdeMode::Deterministic) {
        // one path, Zv identically zero: classical 4-stage Runge-Kutta in
        // reverse time with the state linearly interpolated inside cells
        Vec x(static_cast<size_t>(n));
        Vec zero(static_cast<size_t>(sol.zdim), 0.0);
        Vec k1(static_cast<size_t>(r)), k2(k1), k3(k1), k4(k1), tmp(k1);
        auto drift = [&](double t, const Vec& V, Vec& out) {
            interp_state(ensemble, 0, t, x);
            driver(0, t, x, V, zero, out);
        };
        auto rk4 = [&](double t1, double h, const Vec& V1, Vec& V0) {
            drift(t1, V1, k1);
            for (int c = 0; c < r; ++c)
                tmp[static_cast<size_t>(c)] = V1[static_cast<size_t>(c)] + 0.5 * h * k1[static_cast<size_t>(c)];
            drift(t1 + 0.5 * h, tmp, k2);
            for (int c = 0; c < r; ++c)
                tmp[static_cast<size_t>(c)] = V1[static_cast<size_t>(c)] + 0.5 * h * k2[static_cast<size_t>(c)];
            drift(t1 + 0.5 * h, tmp, k3);
            for (int c = 0; c < r; ++c)
                tmp[static_cast<size_t>(c)] = V1[static_cast<size_t>(c)] + h * k3[static_cast<size_t>(c)];
            drift(t1 + h, tmp, k4);
            for (int c = 0; c < r; ++c)
                V0[static_cast<size_t>(c)] = V1[static_cast<size_t>(c)] +
                                             h / 6.0 *
                                                 (k1[static_cast<size_t>(c)] + 2 * k2[static_cast<size_t>(c)] +
                                                  2 * k3[static_cast<size_t>(c)] + k4[static_cast<size_t>(c)]);
        };
        Vec cur(terminal.begin(), terminal.begin() + r), next(static_cast<size_t>(r));
        if (tau.delta > 0.0) {
            rk4(tau.tau_hat, -tau.delta, cur, next);
            cur = next;
        }
        std::copy(cur.begin(), cur.end(),
                  sol.V.begin() + static_cast<size_t>(tau.I) * r);
        for (int i = tau.I - 1; i >= 0; --i) {
            rk4(grid.node(i + 1), -grid.dt, cur, next);
            cur = next;
            check_finite_slice(cur, i, "backward solution");
            std::copy(cur.begin(), cur.end(), sol.V.begin() + static_cast<size_t>(i) * r);
        }
        return sol;
    }

    // least-squares Monte Carlo backward induction
    const int M = sol.M, d = ensemble.d, zdim = sol.zdim;
    Vec Vnext = terminal; // M x r, values at the cell's right endpoint
    Vec drift_buf(static_cast<size_t>(r));

    auto induct = [&](int node, double t_right, double h, bool partial) {
        Regressor reg(ensemble, node, basis_degree);
        // Z over the cell: regress V_right * dW' / cell-length onto the basis.
        // For the partial cell the stored full-step increment is rescaled by
        // delta/dt (conditional mean of the bridge increment), which cancels
        // to the same dW/dt estimator.
        double* Zrow = sol.Zv.data() + static_cast<size_t>(node) * zdim;
        Vec pred;
        for (int c = 0; c < r; ++c)
            for (int j = 0; j < d; ++j) {
                reg.fit(
                    [&](int p) {
                        return Vnext[static_cast<size_t>(p) * r + c] *
                               ensemble.incr(p, node)[static_cast<size_t>(j)] / grid.dt;
                    },
                    pred, node);
                for (int p = 0; p < M; ++p)
                    sol.Zv[(static_cast<size_t>(p) * (tau.I + 1) + static_cast<size_t>(node)) * zdim +
                           static_cast<size_t>(c) * d + j] = pred[static_cast<size_t>(p)];
            }
        (void)Zrow;
        (void)partial;
        (void)t_right;
        // conditional expectation of V_right, then one implicit sweep on V
        Vec vhat(static_cast<size_t>(M) * r);
        for (int c = 0; c < r; ++c) {
            reg.fit([&](int p) { return Vnext[static_cast<size_t>(p) * r + c]; }, pred, node);
            for (int p = 0; p < M; ++p)
                vhat[static_cast<size_t>(p) * r + c] = pred[static_cast<size_t>(p)];
        }
        double t_left = grid.node(node);
        for (int p = 0; p < M; ++p) {
            double* vp = sol.V.data() + (static_cast<size_t>(p) * (tau.I + 1) + static_cast<size_t>(node)) * r;
            auto x = ensemble.state(p, node);
            auto zrow = sol.z(p, node);
            const double* vh = vhat.data() + static_cast<size_t>(p) * r;
            // predictor at vhat, one fixed-point correction on the implicit V
            Vec vcand(vh, vh + r);
            for (int sweep = 0; sweep < 2; ++sweep) {
                driver(p, t_left, x, vcand, zrow, drift_buf);
                for (int c = 0; c < r; ++c)
                    vcand[static_cast<size_t>(c)] = vh[c] - h * drift_buf[static_cast<size_t>(c)];
            }
            std::copy(vcand.begin(), vcand.end(), vp);
            check_finite_slice({vp, static_cast<size_t>(r)}, node, "backward solution");
        }
        for (int p = 0; p < M; ++p)
            std::copy(sol.V.begin() + (static_cast<size_t>(p) * (tau.I + 1) + static_cast<size_t>(node)) * r,
                      sol.V.begin() + (static_cast<size_t>(p) * (tau.I + 1) + static_cast<size_t>(node)) * r + r,
                      Vnext.begin() + static_cast<size_t>(p) * r);
    };

    if (tau.delta > 0.0) {
        induct(tau.I, tau.tau_hat, tau.delta, true);
    } else {
        for (int p = 0; p < M; ++p)
            std::copy(terminal.begin() + static_cast<size_t>(p) * r,
                      terminal.begin() + static_cast<size_t>(p) * r + r,
                      sol.V.begin() + (static_cast<size_t>(p) * (tau.I + 1) + static_cast<size_t>(tau.I)) * r);
    }
    for (int i = tau.I - 1; i >= 0; --i)
        induct(i, grid.node(i + 1), grid.dt, false);
    return sol;
}

BackwardSolution solve_backward(const ProblemSpec& spec, const PathEnsemble& ensemble,
                                const ControlPath& control, double tau_hat, int basis_degree) {
    const Dims& dims = spec.dims;
    TauInfo tau = split_at(ensemble.grid, tau_hat);

    Vec terminal(static_cast<size_t>(ensemble.M) * dims.m);
    {
        Vec x(static_cast<size_t>(dims.n)), slots;
        for (int p = 0; p < ensemble.M; ++p) {
            interp_state(ensemble, p, tau.tau_hat, x);
            spec.point(slots, tau.tau_hat, x, {}, {}, {});
            spec.Psi_val(slots, terminal.data() + static_cast<size_t>(p) * dims.m);
        }
    }
    BackwardDriver driver = [&spec, &control](int, double t, std::span<const double> x,
                                              std::span<const double> y, std::span<const double> z,
                                              std::span<double> out) {
        Vec slots;
        spec.point(slots, t, x, y, z, control.at_time(t));
        spec.g_val(slots, out.data());
    };
    return solve_linear_backward(spec, ensemble, tau, terminal, dims.m, driver,
                                 select_mode(spec), basis_degree);
}

double cost(const ProblemSpec& spec, const PathEnsemble& ensemble,
            const BackwardSolution& backward, double tau_hat) {
    (void)tau_hat; // the split carried by `backward` is authoritative
    const Dims& dims = spec.dims;
    const TauInfo& tau = backward.tau;
    const TimeGrid& grid = ensemble.grid;
    const ControlPath& control = ensemble.control;

    // per-cell trapezoid: both endpoints of a cell use that cell's control, so
    // the integral varies continuously as the stopping time slides across nodes
    Vec slots;
    auto mean_l = [&](int node, int cell) {
        double t = grid.node(node);
        double sum = 0.0;
        for (int p = 0; p < ensemble.M; ++p) {
            int zcell = std::min(node, tau.I);
            spec.point(slots, t, ensemble.state(p, node), backward.v(p, node),
                       backward.z(p, zcell), control.cell(cell));
            sum += spec.l_val(slots);
        }
        return sum / ensemble.M;
    };

    double integral = 0.0;
    for (int c = 0; c < tau.I; ++c)
        integral += 0.5 * grid.dt * (mean_l(c, c) + mean_l(c + 1, c));
    if (tau.delta > 0.0) {
        // value at tau_hat uses the interpolated state and the terminal Y
        Vec x(static_cast<size_t>(dims.n));
        double sum = 0.0;
        for (int p = 0; p < ensemble.M; ++p) {
            interp_state(ensemble, p, tau.tau_hat, x);
            spec.point(slots, tau.tau_hat, x,
                       {backward.terminal.data() + static_cast<size_t>(p) * dims.m,
                        static_cast<size_t>(dims.m)},
                       backward.z(p, tau.I), control.cell(tau.I));
            sum += spec.l_val(slots);
        }
        integral += 0.5 * tau.delta * (mean_l(tau.I, tau.I) + sum / ensemble.M);
    }

    double beta_term = 0.0;
    {
        Vec x(static_cast<size_t>(dims.n));
        for (int p = 0; p < ensemble.M; ++p) {
            interp_state(ensemble, p, tau.tau_hat, x);
            spec.point(slots, tau.tau_hat, x, {}, {}, {});
            beta_term += spec.beta_val(slots);
        }
        beta_term /= ensemble.M;
    }

    Vec y0 = backward.mean_v(0);
    spec.point(slots, 0.0, {}, y0, {}, {});
    return integral + beta_term + spec.gamma_val(slots);
}

} // namespace varhor
