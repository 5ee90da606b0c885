#include "varhor/adjoint.hpp"

#include <algorithm>
#include <cmath>

#include "varhor/linalg.hpp"

namespace varhor {

void AdjointSolution::q_at(int path, double t, std::span<double> out) const {
    double t_I = tau.tau_hat - tau.delta;
    if (t >= t_I && tau.delta > 0.0) {
        double w = std::min((t - t_I) / tau.delta, 1.0);
        auto a = q_node(path, tau.I);
        const double* b = q_terminal.data() + static_cast<size_t>(path) * m;
        for (int c = 0; c < m; ++c)
            out[static_cast<size_t>(c)] = (1.0 - w) * a[static_cast<size_t>(c)] + w * b[c];
        return;
    }
    double dt = (tau.I > 0) ? t_I / tau.I : 1.0;
    double s = std::clamp(t, 0.0, t_I) / dt;
    int i = std::min(static_cast<int>(s), std::max(tau.I - 1, 0));
    double w = s - i;
    auto a = q_node(path, i);
    auto b = q_node(path, std::min(i + 1, tau.I));
    for (int c = 0; c < m; ++c)
        out[static_cast<size_t>(c)] =
            (1.0 - w) * a[static_cast<size_t>(c)] + w * b[static_cast<size_t>(c)];
}

void solve_q(const ProblemSpec& spec, const PathEnsemble& ensemble,
             const BackwardSolution& backward, const ControlPath& control,
             AdjointSolution& adj) {
    const Dims& dims = spec.dims;
    const int m = dims.m, d = dims.d, md = m * d, M = ensemble.M;
    const TauInfo& tau = backward.tau;
    const TimeGrid& grid = ensemble.grid;
    adj.tau = tau;
    adj.M = M;
    adj.m = m;
    adj.q.assign(static_cast<size_t>(M) * (tau.I + 1) * m, 0.0);
    adj.q_terminal.assign(static_cast<size_t>(M) * m, 0.0);

    // q(0) = -gamma_y(Y(0))
    Vec slots, gy(static_cast<size_t>(m));
    Vec gyy(static_cast<size_t>(m) * m), ly(static_cast<size_t>(m));
    Vec gz(static_cast<size_t>(m) * md), lz(static_cast<size_t>(md));

    for (int p = 0; p < M; ++p) {
        spec.point(slots, 0.0, {}, backward.v(p, 0), {}, {});
        spec.gamma_y(slots, gy.data());
        double* qp = adj.q.data() + static_cast<size_t>(p) * (tau.I + 1) * m;
        for (int c = 0; c < m; ++c)
            qp[c] = -gy[static_cast<size_t>(c)];

        auto em_step = [&](int node, double h, std::span<const double> dw, double dw_scale,
                           const double* qin, double* qout) {
            double t = grid.node(node);
            spec.point(slots, t, ensemble.state(p, node), backward.v(p, node),
                       backward.z(p, std::min(node, tau.I)), control.at_time(t));
            spec.g_y(slots, gyy.data());
            spec.l_y(slots, ly.data());
            // drift: -(g_y' q + l_y)
            for (int c = 0; c < m; ++c) {
                double acc = ly[static_cast<size_t>(c)];
                for (int a = 0; a < m; ++a)
                    acc += gyy[static_cast<size_t>(a) * m + c] * qin[a];
                qout[c] = qin[c] - h * acc;
            }
            if (!spec.sigma_zero && !dw.empty()) {
                spec.g_z(slots, gz.data());
                spec.l_z(slots, lz.data());
                // diffusion row j: -(g_z^{(j)'} q + l_z^{(j)})
                for (int j = 0; j < d; ++j) {
                    double w = dw[static_cast<size_t>(j)] * dw_scale;
                    for (int c = 0; c < m; ++c) {
                        double acc = lz[static_cast<size_t>(c) * d + j];
                        for (int a = 0; a < m; ++a)
                            acc += gz[static_cast<size_t>(a) * md + c * d + j] * qin[a];
                        qout[c] -= acc * w;
                    }
                }
            }
            for (int c = 0; c < m; ++c)
                if (!std::isfinite(qout[c]))
                    throw Error(ErrorCode::NonFiniteAdjoint,
                                "q became non-finite at step " + std::to_string(node + 1));
        };

        for (int i = 0; i < tau.I; ++i)
            em_step(i, grid.dt, ensemble.incr(p, i), 1.0,
                    qp + static_cast<size_t>(i) * m, qp + static_cast<size_t>(i + 1) * m);
        if (tau.delta > 0.0) {
            // partial cell: scale the stored full-step increment by delta/dt
            em_step(tau.I, tau.delta,
                    (tau.I < grid.N) ? ensemble.incr(p, tau.I) : std::span<const double>{},
                    tau.delta / grid.dt, qp + static_cast<size_t>(tau.I) * m,
                    adj.q_terminal.data() + static_cast<size_t>(p) * m);
        } else {
            std::copy(qp + static_cast<size_t>(tau.I) * m, qp + static_cast<size_t>(tau.I + 1) * m,
                      adj.q_terminal.data() + static_cast<size_t>(p) * m);
        }
    }
}

void solve_p(const ProblemSpec& spec, const PathEnsemble& ensemble,
             const BackwardSolution& backward, const ControlPath& control,
             AdjointSolution& adj) {
    adj.pk = solve_pk(spec, ensemble, backward, control, adj, backward.tau);
}

BackwardSolution solve_pk(const ProblemSpec& spec, const PathEnsemble& ensemble,
                          const BackwardSolution& backward, const ControlPath& control,
                          const AdjointSolution& adj, const TauInfo& tau) {
    const Dims& dims = spec.dims;
    const int n = dims.n, m = dims.m, d = dims.d, nd = n * d, md = m * d;

    // terminal: p(tau) = beta_x(X(tau)) - Psi_x(X(tau))' q(tau)
    Vec terminal(static_cast<size_t>(ensemble.M) * n);
    {
        Vec x(static_cast<size_t>(n)), slots, bx(static_cast<size_t>(n));
        Vec px(static_cast<size_t>(m) * n), qt(static_cast<size_t>(m));
        for (int p = 0; p < ensemble.M; ++p) {
            interp_state(ensemble, p, tau.tau_hat, x);
            spec.point(slots, tau.tau_hat, x, {}, {}, {});
            spec.beta_x(slots, bx.data());
            spec.Psi_x(slots, px.data());
            adj.q_at(p, tau.tau_hat, qt);
            double* row = terminal.data() + static_cast<size_t>(p) * n;
            for (int a = 0; a < n; ++a) {
                row[a] = bx[static_cast<size_t>(a)];
                for (int i = 0; i < m; ++i)
                    row[a] -= qt[static_cast<size_t>(i)] * px[static_cast<size_t>(i) * n + a];
            }
        }
    }

    // drift of dp: -H_x = -(f_x' p + sum_j (sigma_x^j)' k^j + g_x' q + l_x)
    BackwardDriver driver = [&spec, &ensemble, &control, &adj, n, m, d, nd, md](
                                int path, double t, std::span<const double> x,
                                std::span<const double> p, std::span<const double> k,
                                std::span<double> out) {
        Vec slots;
        Vec y(static_cast<size_t>(m), 0.0), q(static_cast<size_t>(m));
        adj.q_at(path, t, q);
        // the backward pair (Y, Z) enters H only through g's arguments; use
        // node-interpolated Y with Z from the covering cell when available
        spec.point(slots, t, x, {}, {}, control.at_time(t));
        Vec fx(static_cast<size_t>(n) * n), lx(static_cast<size_t>(n));
        Vec gx(static_cast<size_t>(m) * n);
        spec.f_x(slots, fx.data());
        spec.l_x(slots, lx.data());
        spec.g_x(slots, gx.data());
        for (int a = 0; a < n; ++a) {
            double acc = lx[static_cast<size_t>(a)];
            for (int i = 0; i < n; ++i)
                acc += fx[static_cast<size_t>(i) * n + a] * p[static_cast<size_t>(i)];
            for (int i = 0; i < m; ++i)
                acc += gx[static_cast<size_t>(i) * n + a] * q[static_cast<size_t>(i)];
            out[static_cast<size_t>(a)] = -acc;
        }
        if (!spec.sigma_zero) {
            Vec sx(static_cast<size_t>(nd) * n);
            spec.sigma_x(slots, sx.data());
            for (int a = 0; a < n; ++a) {
                double acc = 0.0;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j)
                        acc += sx[(static_cast<size_t>(i) * d + j) * n + a] *
                               k[static_cast<size_t>(i) * d + j];
                out[static_cast<size_t>(a)] -= acc;
            }
        }
        (void)md;
        (void)ensemble;
    };
    return solve_linear_backward(spec, ensemble, tau, terminal, n, driver, select_mode(spec),
                                  backward.basis_degree);
}

AdjointSolution solve_adjoints(const ProblemSpec& spec, const PathEnsemble& ensemble,
                               const BackwardSolution& backward, const ControlPath& control) {
    AdjointSolution adj;
    solve_q(spec, ensemble, backward, control, adj);
    solve_p(spec, ensemble, backward, control, adj);
    return adj;
}

void hamiltonian(const ProblemSpec& spec, const Vec& slots, std::span<const double> p,
                 std::span<const double> k, std::span<const double> q, double& H,
                 std::span<double> H_u) {
    const Dims& dims = spec.dims;
    const int n = dims.n, m = dims.m, d = dims.d, kk = dims.k;
    Vec fv(static_cast<size_t>(n)), gv(static_cast<size_t>(m));
    spec.f_val(slots, fv.data());
    spec.g_val(slots, gv.data());
    H = spec.l_val(slots) + dot(p, fv) + dot(q, gv);
    Vec fu(static_cast<size_t>(n) * kk), gu(static_cast<size_t>(m) * kk),
        lu(static_cast<size_t>(kk));
    spec.f_u(slots, fu.data());
    spec.g_u(slots, gu.data());
    spec.l_u(slots, lu.data());
    for (int a = 0; a < kk; ++a) {
        double acc = lu[static_cast<size_t>(a)];
        for (int i = 0; i < n; ++i)
            acc += p[static_cast<size_t>(i)] * fu[static_cast<size_t>(i) * kk + a];
        for (int i = 0; i < m; ++i)
            acc += q[static_cast<size_t>(i)] * gu[static_cast<size_t>(i) * kk + a];
        H_u[static_cast<size_t>(a)] = acc;
    }
    if (!spec.sigma_zero) {
        Vec sv(static_cast<size_t>(n) * d), su(static_cast<size_t>(n) * d * kk);
        spec.sigma_val(slots, sv.data());
        spec.sigma_u(slots, su.data());
        H += dot(k, sv);
        for (int a = 0; a < kk; ++a) {
            double acc = 0.0;
            for (int i = 0; i < n * d; ++i)
                acc += k[static_cast<size_t>(i)] * su[static_cast<size_t>(i) * kk + a];
            H_u[static_cast<size_t>(a)] += acc;
        }
    }
}

void psi_tilde(const ProblemSpec& spec, const Vec& slots, std::span<double> out) {
    const Dims& dims = spec.dims;
    const int n = dims.n, m = dims.m, d = dims.d;
    Vec fv(static_cast<size_t>(n)), px(static_cast<size_t>(m) * n);
    spec.f_val(slots, fv.data());
    spec.Psi_x(slots, px.data());
    for (int i = 0; i < m; ++i) {
        out[static_cast<size_t>(i)] = 0.0;
        for (int a = 0; a < n; ++a)
            out[static_cast<size_t>(i)] += px[static_cast<size_t>(i) * n + a] * fv[static_cast<size_t>(a)];
    }
    if (!spec.sigma_zero) {
        Vec sv(static_cast<size_t>(n) * d), pxx(static_cast<size_t>(m) * n * n);
        spec.sigma_val(slots, sv.data());
        spec.Psi_xx(slots, pxx.data());
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < d; ++j)
                for (int a = 0; a < n; ++a)
                    for (int b = 0; b < n; ++b)
                        out[static_cast<size_t>(i)] += 0.5 * sv[static_cast<size_t>(a) * d + j] *
                                                       pxx[(static_cast<size_t>(i) * n + a) * n + b] *
                                                       sv[static_cast<size_t>(b) * d + j];
    }
}

double beta_tilde(const ProblemSpec& spec, const Vec& slots) {
    const Dims& dims = spec.dims;
    const int n = dims.n, d = dims.d;
    Vec fv(static_cast<size_t>(n)), bx(static_cast<size_t>(n));
    spec.f_val(slots, fv.data());
    spec.beta_x(slots, bx.data());
    double out = dot(bx, fv);
    if (!spec.sigma_zero) {
        Vec sv(static_cast<size_t>(n) * d), bxx(static_cast<size_t>(n) * n);
        spec.sigma_val(slots, sv.data());
        spec.beta_xx(slots, bxx.data());
        for (int j = 0; j < d; ++j)
            for (int a = 0; a < n; ++a)
                for (int b = 0; b < n; ++b)
                    out += 0.5 * sv[static_cast<size_t>(a) * d + j] *
                           bxx[static_cast<size_t>(a) * n + b] * sv[static_cast<size_t>(b) * d + j];
    }
    return out;
}

double script_L(const ProblemSpec& spec, const PathEnsemble& ensemble,
                const BackwardSolution& backward, const AdjointSolution& adj,
                const ControlPath& control) {
    const Dims& dims = spec.dims;
    const int n = dims.n, m = dims.m;
    const TauInfo& tau = backward.tau;
    Vec x(static_cast<size_t>(n)), slots;
    Vec pt(static_cast<size_t>(m)), gv(static_cast<size_t>(m));
    double acc = 0.0;
    for (int p = 0; p < ensemble.M; ++p) {
        interp_state(ensemble, p, tau.tau_hat, x);
        spec.point(slots, tau.tau_hat, x,
                   {backward.terminal.data() + static_cast<size_t>(p) * m, static_cast<size_t>(m)},
                   backward.z(p, tau.I), control.at_time(tau.tau_hat));
        psi_tilde(spec, slots, pt);
        spec.g_val(slots, gv.data());
        const double* qt = adj.q_terminal.data() + static_cast<size_t>(p) * m;
        double term = -beta_tilde(spec, slots) - spec.l_val(slots);
        for (int i = 0; i < m; ++i)
            term += qt[i] * (pt[static_cast<size_t>(i)] - gv[static_cast<size_t>(i)]);
        acc += term;
    }
    return acc / ensemble.M;
}

} // namespace varhor
