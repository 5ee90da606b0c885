#include "varhor/stopping.hpp"

#include "varhor/pipeline.hpp"
#include "varhor/linalg.hpp"

#include <cmath>

namespace varhor {

std::string case_name(CaseTag c) {
    switch (c) {
    case CaseTag::BeforeT: return "BeforeT";
    case CaseTag::AtT: return "AtT";
    case CaseTag::Never: return "Never";
    }
    return "?";
}

double h_at_tau(const Curve& h_curve, double tau_hat) {
    double h = h_curve.at(tau_hat);
    if (std::abs(h) <= 1e-8)
        throw Error(ErrorCode::DegenerateH,
                    "drift of the mean-constraint curve vanishes at the terminal time");
    return h;
}

StoppingResult stopping_time(const ProblemSpec& spec, const PathEnsemble& ensemble,
                             int at_T_band_cells) {
    StoppingResult res;
    res.m_curve = mean_functional(ensemble, [&](std::span<const double> x) {
        Vec slots;
        spec.point(slots, 0.0, x, {}, {}, {});
        return spec.Phi_val(slots);
    });
    res.h_curve = h_process(spec, ensemble, ensemble.control);

    const TimeGrid& grid = ensemble.grid;
    res.tau_hat = grid.T;
    res.case_tag = CaseTag::Never;
    if (!spec.stopping_enabled())
        return res;

    for (int i = 0; i <= grid.N; ++i) {
        if (res.m_curve.values[static_cast<size_t>(i)] >= spec.alpha) {
            res.cross_index = i;
            if (i == 0) {
                res.tau_hat = 0.0;
            } else {
                double m0 = res.m_curve.values[static_cast<size_t>(i) - 1];
                double m1 = res.m_curve.values[static_cast<size_t>(i)];
                double w = (m1 > m0) ? (spec.alpha - m0) / (m1 - m0) : 1.0;
                res.tau_hat = grid.node(i - 1) + w * grid.dt;
            }
            res.case_tag =
                (res.tau_hat >= grid.T - at_T_band_cells * grid.dt) ? CaseTag::AtT : CaseTag::BeforeT;
            return res;
        }
    }
    return res; // no crossing: Never, tau_hat = T
}

Curve h_process(const ProblemSpec& spec, const PathEnsemble& ensemble,
                const ControlPath& control) {
    const Dims& dims = spec.dims;
    const int n = dims.n, d = dims.d;
    Curve curve;
    curve.grid = ensemble.grid;
    curve.values.assign(static_cast<size_t>(ensemble.grid.N) + 1, 0.0);
    curve.stderrs.assign(static_cast<size_t>(ensemble.grid.N) + 1, 0.0);

    Vec slots, fv(static_cast<size_t>(n)), phix(static_cast<size_t>(n));
    Vec sv, phixx;
    if (!spec.sigma_zero) {
        sv.resize(static_cast<size_t>(n) * d);
        phixx.resize(static_cast<size_t>(n) * n);
    }
    for (int i = 0; i <= ensemble.grid.N; ++i) {
        double t = ensemble.grid.node(i);
        std::span<const double> u = control.at_time(t);
        double sum = 0.0, sumsq = 0.0;
        for (int p = 0; p < ensemble.M; ++p) {
            spec.point_xu(slots, t, ensemble.state(p, i), u);
            spec.f_val(slots, fv.data());
            spec.Phi_x(slots, phix.data());
            double v = dot(phix, fv);
            if (!spec.sigma_zero) {
                spec.sigma_val(slots, sv.data());
                spec.Phi_xx(slots, phixx.data());
                // + 1/2 sum_j sigma^j' Phi_xx sigma^j
                for (int j = 0; j < d; ++j)
                    for (int a = 0; a < n; ++a)
                        for (int b = 0; b < n; ++b)
                            v += 0.5 * sv[static_cast<size_t>(a) * d + j] *
                                 phixx[static_cast<size_t>(a) * n + b] *
                                 sv[static_cast<size_t>(b) * d + j];
            }
            sum += v;
            sumsq += v * v;
        }
        double mean = sum / ensemble.M;
        curve.values[static_cast<size_t>(i)] = mean;
        if (ensemble.M > 1) {
            double var = std::max(0.0, (sumsq - ensemble.M * mean * mean) / (ensemble.M - 1));
            curve.stderrs[static_cast<size_t>(i)] = std::sqrt(var / ensemble.M);
        }
    }
    return curve;
}


Curve h_bar(const ProblemSpec& spec, const ControlPath& control, const ControlPath& v,
            const TimeGrid& grid, int M, std::uint64_t seed) {
    // common random numbers: every leg reuses the same (seed, path, step) draws
    PathEnsemble base = simulate_forward(spec, control, grid, M, seed);
    Curve h0 = h_process(spec, base, control);

    const double rhos[3] = {1e-2, 5e-3, 2.5e-3};
    Curve diff[3];
    for (int r = 0; r < 3; ++r) {
        ControlPath u_rho = perturb_control(spec, control, v, rhos[r]);
        PathEnsemble ens = simulate_forward(spec, u_rho, grid, M, seed);
        diff[r] = h_process(spec, ens, u_rho);
        for (size_t i = 0; i < diff[r].values.size(); ++i)
            diff[r].values[i] = (diff[r].values[i] - h0.values[i]) / rhos[r];
    }
    // Richardson for rho-halving: cancels the O(rho) and O(rho^2) error terms
    Curve out = h0;
    out.stderrs.assign(out.stderrs.size(), 0.0);
    for (size_t i = 0; i < out.values.size(); ++i)
        out.values[i] =
            (diff[0].values[i] - 6.0 * diff[1].values[i] + 8.0 * diff[2].values[i]) / 3.0;
    return out;
}

TauDerivative tau_derivative(const ProblemSpec& spec, const ControlPath& control,
                             const ControlPath& v, const TimeGrid& grid, int M,
                             std::uint64_t seed) {
    PathEnsemble ens = simulate_forward(spec, control, grid, M, seed);
    StoppingResult stop = stopping_time(spec, ens);
    TauDerivative out;
    out.case_tag = stop.case_tag;
    if (stop.case_tag == CaseTag::Never)
        return out; // derivative is 0: the horizon is pinned at T

    double h_tau = h_at_tau(stop.h_curve, stop.tau_hat);
    Curve hb = h_bar(spec, control, v, grid, M, seed);
    out.value = integrate_curve(hb, stop.tau_hat) / h_tau;
    if (stop.case_tag == CaseTag::AtT) {
        out.has_alt = true;
        out.value_alt = 0.0; // the dichotomy's second branch
    }
    return out;
}

} // namespace varhor
