#include "varhor/smp.hpp"

#include <algorithm>
#include <cmath>

#include "varhor/linalg.hpp"

namespace varhor {

void ForwardPaths::interp(int path, double t, std::span<double> out) const {
    t = std::clamp(t, 0.0, grid.T);
    double s = t / grid.dt;
    int i = std::min(static_cast<int>(s), grid.N - 1);
    double w = s - i;
    auto a = state(path, i);
    auto b = state(path, i + 1);
    for (size_t c = 0; c < out.size(); ++c)
        out[c] = (1.0 - w) * a[c] + w * b[c];
}

ForwardPaths variational_forward(const ProblemSpec& spec, const PathEnsemble& ensemble,
                                 const ControlPath& control, const ControlPath& v) {
    const Dims& dims = spec.dims;
    const int n = dims.n, d = dims.d, kk = dims.k;
    const TimeGrid& grid = ensemble.grid;
    ForwardPaths xi;
    xi.grid = grid;
    xi.M = ensemble.M;
    xi.n = n;
    xi.X.assign(static_cast<size_t>(ensemble.M) * (grid.N + 1) * n, 0.0);

    Vec slots, fx(static_cast<size_t>(n) * n), fu(static_cast<size_t>(n) * kk);
    Vec sx, su;
    if (!spec.sigma_zero) {
        sx.resize(static_cast<size_t>(n) * d * n);
        su.resize(static_cast<size_t>(n) * d * kk);
    }
    for (int p = 0; p < ensemble.M; ++p) {
        double* row = xi.X.data() + static_cast<size_t>(p) * (grid.N + 1) * n;
        for (int i = 0; i < grid.N; ++i) {
            const double* cur = row + static_cast<size_t>(i) * n;
            double* nxt = row + static_cast<size_t>(i + 1) * n;
            spec.point_xu(slots, grid.node(i), ensemble.state(p, i), control.cell(i));
            spec.f_x(slots, fx.data());
            spec.f_u(slots, fu.data());
            auto vi = v.cell(i);
            for (int a = 0; a < n; ++a) {
                double drift = 0.0;
                for (int b = 0; b < n; ++b)
                    drift += fx[static_cast<size_t>(a) * n + b] * cur[b];
                for (int b = 0; b < kk; ++b)
                    drift += fu[static_cast<size_t>(a) * kk + b] * vi[static_cast<size_t>(b)];
                nxt[a] = cur[a] + drift * grid.dt;
            }
            if (!spec.sigma_zero) {
                spec.sigma_x(slots, sx.data());
                spec.sigma_u(slots, su.data());
                auto dw = ensemble.incr(p, i);
                for (int a = 0; a < n; ++a)
                    for (int j = 0; j < d; ++j) {
                        double diff = 0.0;
                        for (int b = 0; b < n; ++b)
                            diff += sx[(static_cast<size_t>(a) * d + j) * n + b] * cur[b];
                        for (int b = 0; b < kk; ++b)
                            diff += su[(static_cast<size_t>(a) * d + j) * kk + b] *
                                    vi[static_cast<size_t>(b)];
                        nxt[a] += diff * dw[static_cast<size_t>(j)];
                    }
            }
            for (int a = 0; a < n; ++a)
                if (!std::isfinite(nxt[a]))
                    throw Error(ErrorCode::NonFiniteState,
                                "state sensitivity became non-finite at step " +
                                    std::to_string(i + 1));
        }
    }
    return xi;
}

namespace {

// linear interpolation of the backward pair along a path
void backward_y_at(const BackwardSolution& backward, int path, double t, std::span<double> out) {
    const TimeGrid& grid = backward.grid;
    double t_hi = backward.tau.tau_hat;
    if (t >= t_hi) {
        auto term = std::span<const double>(
            backward.terminal.data() + static_cast<size_t>(path) * backward.r,
            static_cast<size_t>(backward.r));
        std::copy(term.begin(), term.end(), out.begin());
        return;
    }
    double s = std::max(t, 0.0) / grid.dt;
    int i = std::min(static_cast<int>(s), backward.tau.I);
    if (i >= backward.tau.I) {
        auto a = backward.v(path, backward.tau.I);
        std::copy(a.begin(), a.end(), out.begin());
        return;
    }
    double w = s - i;
    auto a = backward.v(path, i);
    auto b = backward.v(path, i + 1);
    for (size_t c = 0; c < out.size(); ++c)
        out[c] = (1.0 - w) * a[c] + w * b[c];
}

int covering_cell(const BackwardSolution& backward, double t) {
    int i = static_cast<int>(t / backward.grid.dt);
    return std::clamp(i, 0, backward.tau.I);
}

// driver of the linearized backward equation:
// g_x xi + g_y eta + g_z zeta + g_v v, coefficients at the base solution
BackwardDriver make_eta_driver(const Pipeline& pipe, const ForwardPaths& xi,
                               const ControlPath& v) {
    const ProblemSpec& spec = *pipe.spec;
    return [&spec, &pipe, &xi, &v](int path, double t, std::span<const double> x,
                                   std::span<const double> eta, std::span<const double> zeta,
                                   std::span<double> out) {
        const Dims& dims = spec.dims;
        const int n = dims.n, m = dims.m, md = dims.m * dims.d, kk = dims.k;
        Vec y(static_cast<size_t>(m)), xiv(static_cast<size_t>(n)), slots;
        backward_y_at(pipe.backward, path, t, y);
        xi.interp(path, t, xiv);
        spec.point(slots, t, x, y, pipe.backward.z(path, covering_cell(pipe.backward, t)),
                   pipe.control.at_time(t));
        Vec gx(static_cast<size_t>(m) * n), gy(static_cast<size_t>(m) * m),
            gz(static_cast<size_t>(m) * md), gu(static_cast<size_t>(m) * kk);
        spec.g_x(slots, gx.data());
        spec.g_y(slots, gy.data());
        spec.g_z(slots, gz.data());
        spec.g_u(slots, gu.data());
        auto vt = v.at_time(t);
        for (int i = 0; i < m; ++i) {
            double acc = 0.0;
            for (int a = 0; a < n; ++a)
                acc += gx[static_cast<size_t>(i) * n + a] * xiv[static_cast<size_t>(a)];
            for (int a = 0; a < m; ++a)
                acc += gy[static_cast<size_t>(i) * m + a] * eta[static_cast<size_t>(a)];
            for (int a = 0; a < md; ++a)
                acc += gz[static_cast<size_t>(i) * md + a] * zeta[static_cast<size_t>(a)];
            for (int a = 0; a < kk; ++a)
                acc += gu[static_cast<size_t>(i) * kk + a] * vt[static_cast<size_t>(a)];
            out[static_cast<size_t>(i)] = acc;
        }
    };
}

// kappa assembled at time t_star along base paths. `horizon_a` multiplies the
// Psi-drift term, `horizon_b` the g term (the two horizon-motion weights).
Vec assemble_kappa(const Pipeline& pipe, const ForwardPaths& xi, double t_star, double horizon_a,
                   double horizon_b) {
    const ProblemSpec& spec = *pipe.spec;
    const Dims& dims = spec.dims;
    const int n = dims.n, m = dims.m;
    Vec out(static_cast<size_t>(pipe.ensemble.M) * m, 0.0);
    Vec x(static_cast<size_t>(n)), y(static_cast<size_t>(m)), xiv(static_cast<size_t>(n));
    Vec slots, pt(static_cast<size_t>(m)), gv(static_cast<size_t>(m)),
        px(static_cast<size_t>(m) * n);
    for (int p = 0; p < pipe.ensemble.M; ++p) {
        interp_state(pipe.ensemble, p, t_star, x);
        backward_y_at(pipe.backward, p, t_star, y);
        xi.interp(p, t_star, xiv);
        spec.point(slots, t_star, x, y,
                   pipe.backward.z(p, covering_cell(pipe.backward, t_star)),
                   pipe.control.at_time(t_star));
        spec.Psi_x(slots, px.data());
        double* row = out.data() + static_cast<size_t>(p) * m;
        for (int i = 0; i < m; ++i)
            for (int a = 0; a < n; ++a)
                row[i] += px[static_cast<size_t>(i) * n + a] * xiv[static_cast<size_t>(a)];
        if (horizon_a != 0.0 || horizon_b != 0.0) {
            psi_tilde(spec, slots, pt);
            spec.g_val(slots, gv.data());
            for (int i = 0; i < m; ++i)
                row[i] += horizon_a * pt[static_cast<size_t>(i)] +
                          horizon_b * gv[static_cast<size_t>(i)];
        }
    }
    return out;
}

Vec mean_rows(const Vec& data, int M, int r) {
    Vec out(static_cast<size_t>(r), 0.0);
    for (int p = 0; p < M; ++p)
        for (int c = 0; c < r; ++c)
            out[static_cast<size_t>(c)] += data[static_cast<size_t>(p) * r + c];
    for (double& x : out)
        x /= M;
    return out;
}

} // namespace

VariationalSolution variational_solve(const Pipeline& pipe, const ControlPath& v) {
    const ProblemSpec& spec = *pipe.spec;
    VariationalSolution vs;
    vs.xi = variational_forward(spec, pipe.ensemble, pipe.control, v);

    bool horizon = pipe.stop.case_tag != CaseTag::Never;
    if (horizon) {
        vs.hbar = h_bar(spec, pipe.control, v, pipe.control.grid, pipe.M, pipe.seed);
        vs.ratio = integrate_curve(vs.hbar, pipe.stop.tau_hat) / pipe.h_tau;
    }

    BackwardDriver driver = make_eta_driver(pipe, vs.xi, v);
    BsdeMode mode = select_mode(spec);
    double tau_hat = pipe.stop.tau_hat;

    // primary branch: horizon-motion kappa when the constraint binds
    Vec kappa_full = assemble_kappa(pipe, vs.xi, tau_hat, horizon ? -vs.ratio : 0.0,
                                    horizon ? vs.ratio : 0.0);
    vs.eta = solve_linear_backward(spec, pipe.ensemble, pipe.tau, kappa_full, spec.dims.m, driver,
                                   mode, pipe.basis_degree);
    vs.kappa = mean_rows(kappa_full, pipe.ensemble.M, spec.dims.m);

    if (pipe.stop.case_tag == CaseTag::AtT) {
        // the dichotomy's plain branch, reported alongside
        Vec kappa_plain = assemble_kappa(pipe, vs.xi, tau_hat, 0.0, 0.0);
        vs.eta_alt = solve_linear_backward(spec, pipe.ensemble, pipe.tau, kappa_plain, spec.dims.m,
                                           driver, mode, pipe.basis_degree);
        vs.kappa_alt = mean_rows(kappa_plain, pipe.ensemble.M, spec.dims.m);
        vs.has_alt = true;
    }
    return vs;
}

double gateaux_cost(const Pipeline& pipe, const ControlPath& v) {
    const ProblemSpec& spec = *pipe.spec;
    const Dims& dims = spec.dims;
    const int n = dims.n, m = dims.m, md = dims.m * dims.d, kk = dims.k;
    VariationalSolution vs = variational_solve(pipe, v);
    const TimeGrid& grid = pipe.control.grid;
    const TauInfo& tau = pipe.tau;
    bool horizon = pipe.stop.case_tag != CaseTag::Never;

    // horizon-motion constant: mean of beta-drift + running cost at tau_hat
    double c0 = 0.0;
    if (horizon) {
        Vec x(static_cast<size_t>(n)), slots;
        for (int p = 0; p < pipe.ensemble.M; ++p) {
            interp_state(pipe.ensemble, p, tau.tau_hat, x);
            spec.point(slots, tau.tau_hat, x,
                       {pipe.backward.terminal.data() + static_cast<size_t>(p) * m,
                        static_cast<size_t>(m)},
                       pipe.backward.z(p, tau.I), pipe.control.at_time(tau.tau_hat));
            c0 += beta_tilde(spec, slots) + spec.l_val(slots);
        }
        c0 /= pipe.ensemble.M;
    }

    Vec slots, lx(static_cast<size_t>(n)), ly(static_cast<size_t>(m)), lz(static_cast<size_t>(md)),
        lu(static_cast<size_t>(kk));
    auto integrand_at = [&](int node, int cell) {
        double t = grid.node(node);
        auto vt = v.cell(cell);
        double sum = 0.0;
        for (int p = 0; p < pipe.ensemble.M; ++p) {
            int zc = std::min(node, tau.I);
            spec.point(slots, t, pipe.ensemble.state(p, node), pipe.backward.v(p, node),
                       pipe.backward.z(p, zc), pipe.control.cell(cell));
            spec.l_x(slots, lx.data());
            spec.l_y(slots, ly.data());
            spec.l_z(slots, lz.data());
            spec.l_u(slots, lu.data());
            sum += dot(lx, vs.xi.state(p, node)) + dot(ly, vs.eta.v(p, node)) +
                   dot(lz, vs.eta.z(p, std::min(node, vs.eta.tau.I))) + dot(lu, vt);
        }
        double val = sum / pipe.ensemble.M;
        if (horizon)
            val -= c0 * vs.hbar.values[static_cast<size_t>(node)] / pipe.h_tau;
        return val;
    };

    // per-cell trapezoid, matching the cost quadrature
    double integral = 0.0;
    for (int c = 0; c < tau.I; ++c)
        integral += 0.5 * grid.dt * (integrand_at(c, c) + integrand_at(c + 1, c));
    if (tau.delta > 0.0)
        integral += tau.delta * integrand_at(tau.I, tau.I);

    // terminal and initial boundary terms
    double beta_term = 0.0;
    {
        Vec x(static_cast<size_t>(n)), xiv(static_cast<size_t>(n)), bx(static_cast<size_t>(n));
        for (int p = 0; p < pipe.ensemble.M; ++p) {
            interp_state(pipe.ensemble, p, tau.tau_hat, x);
            vs.xi.interp(p, tau.tau_hat, xiv);
            spec.point(slots, tau.tau_hat, x, {}, {}, {});
            spec.beta_x(slots, bx.data());
            beta_term += dot(bx, xiv);
        }
        beta_term /= pipe.ensemble.M;
    }
    double gamma_term = 0.0;
    {
        Vec y0 = pipe.backward.mean_v(0);
        Vec eta0 = vs.eta.mean_v(0);
        Vec gy(static_cast<size_t>(m));
        spec.point(slots, 0.0, {}, y0, {}, {});
        spec.gamma_y(slots, gy.data());
        gamma_term = dot(gy, eta0);
    }
    return integral + beta_term + gamma_term;
}

SMPReport check_smp(const Pipeline& pipe, const std::vector<Vec>& u_probes, int t_stride,
                    bool force_plain) {
    const ProblemSpec& spec = *pipe.spec;
    const Dims& dims = spec.dims;
    const int kk = dims.k, m = dims.m;
    const TimeGrid& grid = pipe.control.grid;
    const TauInfo& tau = pipe.tau;
    if (t_stride < 1)
        t_stride = 1;

    SMPReport report;
    report.case_tag = pipe.stop.case_tag;
    report.tau_hat = pipe.stop.tau_hat;
    bool horizon = pipe.stop.case_tag != CaseTag::Never && !force_plain;
    report.script_L = horizon ? pipe.scriptL : 0.0;

    // per-component basis h-bar curves (the margin's direction term is linear
    // in the direction, so k curves cover every probe at every node)
    std::vector<Curve> basis(static_cast<size_t>(kk));
    Vec basis_sign(static_cast<size_t>(kk), 1.0);
    if (horizon) {
        for (int a = 0; a < kk; ++a) {
            ControlPath dir(grid, kk, 0.0);
            for (int c = 0; c < grid.N; ++c)
                dir.cell(c)[static_cast<size_t>(a)] = 1.0;
            try {
                basis[static_cast<size_t>(a)] =
                    h_bar(spec, pipe.control, dir, grid, pipe.M, pipe.seed);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::DirectionLeavesBox)
                    throw;
                for (int c = 0; c < grid.N; ++c)
                    dir.cell(c)[static_cast<size_t>(a)] = -1.0;
                basis[static_cast<size_t>(a)] =
                    h_bar(spec, pipe.control, dir, grid, pipe.M, pipe.seed);
                basis_sign[static_cast<size_t>(a)] = -1.0;
            }
        }
    }

    Vec slots, Hu(static_cast<size_t>(kk)), du(static_cast<size_t>(kk));
    bool first = true;
    for (int i = 0; i <= tau.I; i += t_stride) {
        double t = grid.node(i);
        // ensemble mean of H_u at this node
        Vec mean_Hu(static_cast<size_t>(kk), 0.0);
        for (int p = 0; p < pipe.ensemble.M; ++p) {
            spec.point(slots, t, pipe.ensemble.state(p, i), pipe.backward.v(p, i),
                       pipe.backward.z(p, std::min(i, tau.I)), pipe.control.at_time(t));
            double H = 0.0;
            hamiltonian(spec, slots, pipe.adjoints.pk.v(p, i),
                        pipe.adjoints.pk.z(p, std::min(i, tau.I)), pipe.adjoints.q_node(p, i), H,
                        Hu);
            for (int a = 0; a < kk; ++a)
                mean_Hu[static_cast<size_t>(a)] += Hu[static_cast<size_t>(a)];
        }
        for (int a = 0; a < kk; ++a)
            mean_Hu[static_cast<size_t>(a)] /= pipe.ensemble.M;

        auto u_here = pipe.control.at_time(t);
        for (size_t j = 0; j < u_probes.size(); ++j) {
            for (int a = 0; a < kk; ++a)
                du[static_cast<size_t>(a)] =
                    u_probes[j][static_cast<size_t>(a)] - u_here[static_cast<size_t>(a)];
            double base = dot(mean_Hu, du);
            auto push = [&](double margin, char branch) {
                report.margins.push_back({t, static_cast<int>(j), margin, branch});
                if (first || margin < report.min_margin) {
                    report.min_margin = margin;
                    report.argmin_t = t;
                    report.argmin_probe = static_cast<int>(j);
                    report.argmin_branch = branch;
                    first = false;
                }
            };
            if (horizon) {
                double corr = 0.0;
                for (int a = 0; a < kk; ++a)
                    corr += du[static_cast<size_t>(a)] * basis_sign[static_cast<size_t>(a)] *
                            basis[static_cast<size_t>(a)].values[static_cast<size_t>(i)];
                push(base + pipe.scriptL * corr / pipe.h_tau, 'h');
                if (pipe.stop.case_tag == CaseTag::AtT)
                    push(base, 'p'); // the dichotomy's plain branch
            } else {
                push(base, 'p');
            }
        }
    }
    (void)m;
    return report;
}

std::vector<RhoRow> rho_convergence(const Pipeline& pipe, const ControlPath& v,
                                    const std::vector<double>& rho_list) {
    const ProblemSpec& spec = *pipe.spec;
    const Dims& dims = spec.dims;
    const int m = dims.m, n = dims.n;
    const TimeGrid& grid = pipe.control.grid;
    BsdeMode mode = select_mode(spec);

    // limiting systems at the base control
    VariationalSolution vs = variational_solve(pipe, v);
    BackwardDriver eta_driver = make_eta_driver(pipe, vs.xi, v);

    std::vector<RhoRow> table;
    for (double rho : rho_list) {
        RhoRow row;
        row.rho = rho;
        ControlPath u_rho = perturb_control(spec, pipe.control, v, rho);
        PathEnsemble ens_rho = simulate_forward(spec, u_rho, grid, pipe.M, pipe.seed);
        StoppingResult stop_rho = stopping_time(spec, ens_rho);
        double t_star = std::min(pipe.stop.tau_hat, stop_rho.tau_hat);
        TauInfo ts = split_at(grid, t_star);
        row.d_tau = std::abs(stop_rho.tau_hat - pipe.stop.tau_hat);

        BackwardSolution bw_rho =
            solve_backward(spec, ens_rho, u_rho, stop_rho.tau_hat, pipe.basis_degree);

        // rho-moving variational pair: kappa anchored at the earlier horizon,
        // difference quotients of the terminal times as weights
        double wa = (stop_rho.tau_hat - pipe.stop.tau_hat) / rho;
        bool horizon = pipe.stop.case_tag != CaseTag::Never;
        Vec kappa_rho =
            assemble_kappa(pipe, vs.xi, t_star, horizon ? wa : 0.0, horizon ? -wa : 0.0);
        BackwardSolution eta_rho = solve_linear_backward(spec, pipe.ensemble, ts, kappa_rho, m,
                                                         eta_driver, mode, pipe.basis_degree);

        // rho-moving adjoint with the same re-anchored terminal
        BackwardSolution pk_rho =
            solve_pk(spec, pipe.ensemble, pipe.backward, pipe.control, pipe.adjoints, ts);

        for (int i = 0; i <= ts.I; ++i) {
            double acc_eta = 0.0, acc_y = 0.0, acc_p = 0.0;
            for (int p = 0; p < pipe.ensemble.M; ++p) {
                auto er = eta_rho.v(p, i);
                auto el = vs.eta.v(p, i);
                for (int c = 0; c < m; ++c) {
                    double de = er[static_cast<size_t>(c)] - el[static_cast<size_t>(c)];
                    acc_eta += de * de;
                    double dy = (bw_rho.v(p, i)[static_cast<size_t>(c)] -
                                 pipe.backward.v(p, i)[static_cast<size_t>(c)]) /
                                    rho -
                                er[static_cast<size_t>(c)];
                    acc_y += dy * dy;
                }
                auto pr = pk_rho.v(p, i);
                auto pl = pipe.adjoints.pk.v(p, i);
                for (int c = 0; c < n; ++c) {
                    double dp = pr[static_cast<size_t>(c)] - pl[static_cast<size_t>(c)];
                    acc_p += dp * dp;
                }
            }
            row.err_eta = std::max(row.err_eta, acc_eta / pipe.ensemble.M);
            row.err_Y = std::max(row.err_Y, acc_y / pipe.ensemble.M);
            row.err_p = std::max(row.err_p, acc_p / pipe.ensemble.M);
        }
        table.push_back(row);
    }
    return table;
}

} // namespace varhor
