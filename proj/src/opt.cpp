#include "varhor/opt.hpp"

#include <algorithm>
#include <cmath>

#include "varhor/linalg.hpp"

namespace varhor {

namespace {

// Auxiliary backward pair (lambda, mu) carrying the horizon sensitivity:
// terminal zero at tau_hat, drift -(f_x' lambda + sigma_x' mu + A) where A
// collects the state derivatives of the crossing functional's drift.
BackwardSolution solve_lambda(const ProblemSpec& spec, const Pipeline& pipe) {
    const Dims& dims = spec.dims;
    const int n = dims.n, d = dims.d, nd = dims.n * dims.d;
    BackwardDriver driver = [&spec, &pipe, n, d, nd](int path, double t, std::span<const double> x,
                                                     std::span<const double> lam,
                                                     std::span<const double> mu,
                                                     std::span<double> out) {
        (void)path;
        Vec slots;
        spec.point_xu(slots, t, x, pipe.control.at_time(t));
        Vec fx(static_cast<size_t>(n) * n), fv(static_cast<size_t>(n)),
            phx(static_cast<size_t>(n)), phxx(static_cast<size_t>(n) * n);
        spec.f_x(slots, fx.data());
        spec.f_val(slots, fv.data());
        spec.Phi_x(slots, phx.data());
        spec.Phi_xx(slots, phxx.data());
        Vec sx, sv;
        if (!spec.sigma_zero) {
            sx.resize(static_cast<size_t>(nd) * n);
            sv.resize(static_cast<size_t>(nd));
            spec.sigma_x(slots, sx.data());
            spec.sigma_val(slots, sv.data());
        }
        for (int a = 0; a < n; ++a) {
            double A = 0.0;
            for (int i = 0; i < n; ++i)
                A += phxx[static_cast<size_t>(i) * n + a] * fv[static_cast<size_t>(i)] +
                     phx[static_cast<size_t>(i)] * fx[static_cast<size_t>(i) * n + a];
            double drift = A;
            for (int i = 0; i < n; ++i)
                drift += fx[static_cast<size_t>(i) * n + a] * lam[static_cast<size_t>(i)];
            if (!spec.sigma_zero) {
                for (int j = 0; j < d; ++j) {
                    for (int i = 0; i < n; ++i) {
                        drift += sx[(static_cast<size_t>(i) * d + j) * n + a] *
                                 mu[static_cast<size_t>(i) * d + j];
                        for (int b = 0; b < n; ++b)
                            drift += sx[(static_cast<size_t>(i) * d + j) * n + a] *
                                     phxx[static_cast<size_t>(i) * n + b] *
                                     sv[static_cast<size_t>(b) * d + j];
                    }
                    Vec col(static_cast<size_t>(n));
                    for (int b = 0; b < n; ++b)
                        col[static_cast<size_t>(b)] = sv[static_cast<size_t>(b) * d + j];
                    drift += 0.5 * spec.Phi_xxx_dir(slots, a, col, col);
                }
            }
            out[static_cast<size_t>(a)] = -drift;
        }
    };
    Vec terminal(static_cast<size_t>(pipe.ensemble.M) * n, 0.0);
    return solve_linear_backward(spec, pipe.ensemble, pipe.tau, terminal, n, driver,
                                 select_mode(spec), pipe.basis_degree);
}

} // namespace

std::vector<Vec> cost_gradient(const Pipeline& pipe) {
    const ProblemSpec& spec = *pipe.spec;
    const Dims& dims = spec.dims;
    const int n = dims.n, d = dims.d, kk = dims.k, nd = dims.n * dims.d;
    const TimeGrid& grid = pipe.control.grid;
    const TauInfo& tau = pipe.tau;
    bool horizon = pipe.stop.case_tag != CaseTag::Never;

    BackwardSolution lambda;
    if (horizon)
        lambda = solve_lambda(spec, pipe);

    // pointwise gradient density at a grid node
    Vec slots, Hu(static_cast<size_t>(kk)), fu(static_cast<size_t>(n) * kk);
    Vec su, phx(static_cast<size_t>(n)), phxx(static_cast<size_t>(n) * n),
        sv(static_cast<size_t>(nd));
    if (!spec.sigma_zero)
        su.resize(static_cast<size_t>(nd) * kk);
    auto density_at = [&](int node, int cell, Vec& out) {
        std::fill(out.begin(), out.end(), 0.0);
        double t = grid.node(node);
        double H = 0.0;
        for (int p = 0; p < pipe.ensemble.M; ++p) {
            spec.point(slots, t, pipe.ensemble.state(p, node), pipe.backward.v(p, node),
                       pipe.backward.z(p, std::min(node, tau.I)), pipe.control.cell(cell));
            hamiltonian(spec, slots, pipe.adjoints.pk.v(p, node),
                        pipe.adjoints.pk.z(p, std::min(node, tau.I)),
                        pipe.adjoints.q_node(p, node), H, Hu);
            for (int a = 0; a < kk; ++a)
                out[static_cast<size_t>(a)] += Hu[static_cast<size_t>(a)];
            if (horizon) {
                spec.f_u(slots, fu.data());
                spec.Phi_x(slots, phx.data());
                auto lam = lambda.v(p, node);
                double w = pipe.scriptL / pipe.h_tau;
                for (int a = 0; a < kk; ++a) {
                    double corr = 0.0;
                    for (int i = 0; i < n; ++i)
                        corr += fu[static_cast<size_t>(i) * kk + a] *
                                (lam[static_cast<size_t>(i)] + phx[static_cast<size_t>(i)]);
                    if (!spec.sigma_zero) {
                        spec.sigma_u(slots, su.data());
                        spec.Phi_xx(slots, phxx.data());
                        spec.sigma_val(slots, sv.data());
                        auto mu = lambda.z(p, std::min(node, tau.I));
                        for (int j = 0; j < d; ++j)
                            for (int i = 0; i < n; ++i) {
                                corr += su[(static_cast<size_t>(i) * d + j) * kk + a] *
                                        mu[static_cast<size_t>(i) * d + j];
                                for (int b = 0; b < n; ++b)
                                    corr += su[(static_cast<size_t>(i) * d + j) * kk + a] *
                                            phxx[static_cast<size_t>(i) * n + b] *
                                            sv[static_cast<size_t>(b) * d + j];
                            }
                    }
                    out[static_cast<size_t>(a)] += w * corr;
                }
            }
        }
        for (double& x : out)
            x /= pipe.ensemble.M;
    };

    // cell value = average of the density over cell ∩ [0, tau_hat], so the
    // weighted sum over cells reproduces the directional derivative exactly
    std::vector<Vec> grad(static_cast<size_t>(grid.N), Vec(static_cast<size_t>(kk), 0.0));
    Vec cur(static_cast<size_t>(kk)), nxt(static_cast<size_t>(kk));
    for (int c = 0; c < tau.I; ++c) {
        density_at(c, c, cur);
        density_at(c + 1, c, nxt);
        for (int a = 0; a < kk; ++a)
            grad[static_cast<size_t>(c)][static_cast<size_t>(a)] =
                0.5 * (cur[static_cast<size_t>(a)] + nxt[static_cast<size_t>(a)]);
    }
    if (tau.delta > 0.0 && tau.I < grid.N) {
        density_at(tau.I, tau.I, cur);
        for (int a = 0; a < kk; ++a)
            grad[static_cast<size_t>(tau.I)][static_cast<size_t>(a)] =
                cur[static_cast<size_t>(a)] * tau.delta / grid.dt;
    }
    return grad;
}

OptimizerResult optimize(const ProblemSpec& spec, ControlPath u0, int M, uint64_t seed,
                         const OptimizerOptions& opts, int basis_degree) {
    const int kk = spec.dims.k;
    const TimeGrid& grid = u0.grid;
    for (int c = 0; c < grid.N; ++c) {
        auto cell = u0.cell(c);
        for (int a = 0; a < kk; ++a)
            cell[static_cast<size_t>(a)] = std::clamp(
                cell[static_cast<size_t>(a)], spec.U_lo[static_cast<size_t>(a)],
                spec.U_hi[static_cast<size_t>(a)]);
    }

    // Cells past the stopping time never enter the cost, but a value jump at
    // the moving frontier creates spurious one-sided kinks; carrying the last
    // active value across the tail keeps the objective smooth as the frontier
    // advances.
    auto flatten_tail = [&](ControlPath& u, const TauInfo& tau) {
        if (tau.I >= grid.N)
            return;
        auto last = u.cell(tau.I);
        for (int c = tau.I + 1; c < grid.N; ++c) {
            auto cell = u.cell(c);
            std::copy(last.begin(), last.end(), cell.begin());
        }
    };

    OptimizerResult res;
    res.control = u0;
    Pipeline pipe = run_pipeline(spec, res.control, M, seed, basis_degree);
    flatten_tail(res.control, pipe.tau);

    // Curvature varies enormously across cells (it shrinks like dt near the
    // fixed end of the horizon), so stationarity is measured with a large
    // probe step: how far any coordinate can still move inside the box when
    // pushed hard along the descent direction.
    const double probe = 1.0 / grid.dt;
    double s_trial = opts.step0;
    for (int it = 0; it < opts.max_iters; ++it) {
        std::vector<Vec> grad = cost_gradient(pipe);

        double pg_norm = 0.0;
        for (int c = 0; c < grid.N; ++c) {
            auto cell = res.control.cell(c);
            for (int a = 0; a < kk; ++a) {
                double moved = std::clamp(
                    cell[static_cast<size_t>(a)] -
                        probe * grad[static_cast<size_t>(c)][static_cast<size_t>(a)],
                    spec.U_lo[static_cast<size_t>(a)], spec.U_hi[static_cast<size_t>(a)]);
                pg_norm = std::max(pg_norm, std::abs(moved - cell[static_cast<size_t>(a)]));
            }
        }
        res.trace.push_back({it, pipe.J, pipe.stop.tau_hat, 0.0, pg_norm});
        res.iters = it;
        if (pg_norm <= opts.grad_tol) {
            res.converged = true;
            break;
        }

        // Armijo backtracking; the trial step doubles after clean accepts so
        // the search can reach the stiff, nearly-flat coordinates
        double s = s_trial;
        bool accepted = false;
        for (int tries = 0; tries < 40; ++tries) {
            ControlPath cand = res.control;
            double decrease = 0.0; // sum_c dt * grad_c . (u_c - cand_c)
            for (int c = 0; c < grid.N; ++c) {
                auto cc = cand.cell(c);
                auto uc = res.control.cell(c);
                for (int a = 0; a < kk; ++a) {
                    double g = grad[static_cast<size_t>(c)][static_cast<size_t>(a)];
                    cc[static_cast<size_t>(a)] =
                        std::clamp(uc[static_cast<size_t>(a)] - s * g,
                                   spec.U_lo[static_cast<size_t>(a)],
                                   spec.U_hi[static_cast<size_t>(a)]);
                    decrease +=
                        grid.dt * g * (uc[static_cast<size_t>(a)] - cc[static_cast<size_t>(a)]);
                }
            }
            Pipeline trial = run_pipeline(spec, cand, M, seed, basis_degree);
            if (trial.J <= pipe.J - opts.armijo_c * decrease) {
                res.control = std::move(cand);
                pipe = std::move(trial);
                flatten_tail(res.control, pipe.tau);
                res.trace.back().step = s;
                s_trial = (tries == 0) ? std::min(s * 2.0, 4.0 * probe) : s;
                accepted = true;
                break;
            }
            s *= opts.shrink;
        }
        if (!accepted)
            throw Error(ErrorCode::LineSearchStalled,
                        "line search made no progress after 40 halvings");
    }

    res.J = pipe.J;
    res.tau_hat = pipe.stop.tau_hat;
    res.case_tag = pipe.stop.case_tag;
    return res;
}

} // namespace varhor
