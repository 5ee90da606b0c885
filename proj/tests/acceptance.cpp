// End-to-end acceptance battery: one pass/fail line per criterion, exit code
// equals the number of failures.
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <random>
#include <string>

#include "varhor/opt.hpp"
#include "varhor/smp.hpp"
#include "varhor/threads.hpp"

using namespace varhor;
using nlohmann::json;

namespace {

int failures = 0;

void report(int idx, const char* title, bool ok, const std::string& detail) {
    std::printf("%s  %2d: %-28s %s\n", ok ? "PASS" : "FAIL", idx, title, detail.c_str());
    if (!ok)
        ++failures;
}

std::string fmt(const char* f, ...) {
    va_list ap;
    va_start(ap, f);
    char buf[512];
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

double fd_gateaux(const Pipeline& pipe, const ControlPath& v, double rho) {
    const ProblemSpec& spec = *pipe.spec;
    Pipeline p1 = run_pipeline(spec, perturb_control(spec, pipe.control, v, rho), pipe.M,
                               pipe.seed, pipe.basis_degree);
    Pipeline p2 = run_pipeline(spec, perturb_control(spec, pipe.control, v, rho / 2), pipe.M,
                               pipe.seed, pipe.basis_degree);
    return 2.0 * (p2.J - pipe.J) / (rho / 2) - (p1.J - pipe.J) / rho;
}

} // namespace

int main() {
    const double ln2 = std::log(2.0);
    ProblemSpec example = builtin("paper-example");

    // --- 1: terminal time at dt = 1e-4, deterministic, under a second ------
    auto t0 = std::chrono::steady_clock::now();
    TimeGrid fine(10000, example.T);
    Pipeline pf = run_pipeline(example, ControlPath(fine, 1, 1.0), 1, 1);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(1, "terminal time", std::abs(pf.stop.tau_hat - ln2) <= 1e-3 && secs < 1.0,
           fmt("tau_hat=%.6f target=%.6f runtime=%.3fs", pf.stop.tau_hat, ln2, secs));

    // --- 2: cost, fixed-horizon cost, and the improvement -------------------
    ProblemSpec classical = builtin("classical-example");
    Pipeline pc = run_pipeline(classical, ControlPath(fine, 1, 1.0), 1, 1);
    report(2, "cost and improvement",
           std::abs(pf.J - ln2) <= 1e-3 && std::abs(pc.J - 1.0) <= 1e-6 && pf.J < pc.J,
           fmt("J=%.6f fixed-horizon J=%.9f improvement=%.6f", pf.J, pc.J, pc.J - pf.J));

    // --- 3: backward solution against the closed form -----------------------
    double y_err = std::abs(pf.backward.mean_v(0)[0] + ln2);
    double y_max = 0.0;
    for (int i = 0; i <= pf.tau.I; ++i) {
        double t = fine.node(i);
        double exact = -std::exp(t) * (pf.stop.tau_hat - t);
        y_max = std::max(y_max, std::abs(pf.backward.v(0, i)[0] - exact));
    }
    report(3, "backward solution", y_err <= 1e-3 && y_max <= 1e-3,
           fmt("|Y(0)+ln2|=%.2e max closed-form error=%.2e", y_err, y_max));

    // --- 4: vanishing costates ----------------------------------------------
    double adj_max = 0.0;
    for (int i = 0; i <= pf.tau.I; ++i) {
        adj_max = std::max(adj_max, std::abs(pf.adjoints.pk.v(0, i)[0]));
        adj_max = std::max(adj_max, std::abs(pf.adjoints.pk.z(0, i)[0]));
        adj_max = std::max(adj_max, std::abs(pf.adjoints.q_node(0, i)[0]));
    }
    report(4, "vanishing costates", adj_max <= 1e-12, fmt("max |p,k,q|=%.2e", adj_max));

    // --- 5: terminal-time derivative ----------------------------------------
    TimeGrid grid(2000, example.T);
    ControlPath ubar(grid, 1, 1.0), ones(grid, 1, 1.0);
    Pipeline pipe = run_pipeline(example, ubar, 1, 5);
    TauDerivative td = tau_derivative(example, ubar, ones, grid, 1, 5);
    double rho = 1e-3;
    Pipeline ppert = run_pipeline(example, perturb_control(example, ubar, ones, rho), 1, 5);
    double fd_tau = (pipe.stop.tau_hat - ppert.stop.tau_hat) / rho;
    report(5, "terminal-time derivative",
           std::abs(td.value - 0.5) <= 0.01 && std::abs(fd_tau - 0.5) <= 0.01,
           fmt("analytic=%.4f finite-difference=%.4f target=0.5", td.value, fd_tau));

    // --- 6: directional cost derivative -------------------------------------
    double g1 = gateaux_cost(pipe, ones);
    double fd1 = fd_gateaux(pipe, ones, 1e-2);
    bool ok6 = std::abs(g1 - (ln2 - 0.5)) <= 0.01 * std::abs(ln2 - 0.5) &&
               std::abs(g1 - fd1) <= 0.01 * std::abs(fd1);
    json cfg = builtin_config("lq-noise-1d");
    cfg["sigma"] = json::array({json::array({"0"})});
    cfg["l"] = "x1*x1 + u1*u1";
    ProblemSpec lq = load_problem(cfg);
    ControlPath ulq(grid, 1, 0.7);
    Pipeline plq = run_pipeline(lq, ulq, 1, 5);
    std::mt19937_64 rng(99);
    double worst_rel = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
        ControlPath v(grid, 1, 0.0);
        for (int c = 0; c < grid.N; ++c)
            v.cell(c)[0] = std::uniform_real_distribution<>(-0.5, 0.5)(rng);
        double g = gateaux_cost(plq, v);
        double fd = fd_gateaux(plq, v, 1e-2);
        worst_rel = std::max(worst_rel, std::abs(g - fd) / std::max(1e-12, std::abs(fd)));
        ok6 = ok6 && std::abs(g - fd) <= 0.01 * std::abs(fd);
    }
    report(6, "directional derivative", ok6,
           fmt("value=%.6f target=%.6f fd=%.6f lq worst rel gap=%.2e", g1, ln2 - 0.5, fd1,
               worst_rel));

    // --- 7: first-order optimality margins -----------------------------------
    std::vector<Vec> probes = {{1.0}, {1.25}, {1.5}, {1.75}, {2.0}};
    SMPReport rep_opt = check_smp(pipe, probes, grid.N / 50);
    Pipeline pipe2 = run_pipeline(example, ControlPath(grid, 1, 2.0), 1, 5);
    SMPReport rep_bad = check_smp(pipe2, {{1.0}}, grid.N / 50);
    // probe u = 1 equals the control, so its margins are identically zero;
    // locate the argmin among the probes that actually move the control
    double moved_min = 1e300, moved_t = 0.0;
    for (const auto& e : rep_opt.margins)
        if (e.probe != 0 && e.margin < moved_min) {
            moved_min = e.margin;
            moved_t = e.t;
        }
    bool argmin_near = std::abs(moved_t - pipe.stop.tau_hat) <= 0.05;
    report(7, "optimality margins",
           rep_opt.min_margin >= -1e-6 && argmin_near && rep_bad.min_margin <= -0.1,
           fmt("min=%.2e at t=%.4f (tau=%.4f); suboptimal min=%.3f", rep_opt.min_margin,
               rep_opt.argmin_t, pipe.stop.tau_hat, rep_bad.min_margin));

    // --- 8: rho-family convergence -------------------------------------------
    auto table = rho_convergence(pipe, ones, {1e-1, 5e-2, 2.5e-2, 1.25e-2});
    bool mono = table.size() == 4;
    for (size_t i = 1; mono && i < table.size(); ++i)
        mono = table[i].d_tau < table[i - 1].d_tau && table[i].err_eta < table[i - 1].err_eta &&
               table[i].err_Y < table[i - 1].err_Y && table[i].err_p <= table[i - 1].err_p;
    report(8, "rho-family convergence", mono,
           fmt("d_tau %.2e->%.2e err_eta %.2e->%.2e err_Y %.2e->%.2e err_p %.2e->%.2e",
               table.front().d_tau, table.back().d_tau, table.front().err_eta,
               table.back().err_eta, table.front().err_Y, table.back().err_Y,
               table.front().err_p, table.back().err_p));

    // --- 9: optimizer vs brute force -----------------------------------------
    t0 = std::chrono::steady_clock::now();
    OptimizerResult res = optimize(example, ControlPath(grid, 1, 2.0), 1, 5);
    double opt_secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Pipeline pres = run_pipeline(example, res.control, 1, 5);
    double u_err = 0.0;
    for (int c = 0; c <= pres.tau.I; ++c)
        u_err = std::max(u_err, std::abs(res.control.cell(c)[0] - 1.0));
    double best_c = 0.0, best_J = 1e300;
    for (double c = example.U_lo[0]; c <= example.U_hi[0] + 1e-12; c += 1e-3) {
        Pipeline ps = run_pipeline(example, ControlPath(grid, 1, c), 1, 5);
        if (ps.J < best_J) {
            best_J = ps.J;
            best_c = c;
        }
    }
    bool ok9 = res.converged && res.iters <= 200 && opt_secs < 30.0 && u_err <= 1e-2 &&
               std::abs(res.J - ln2) <= 5e-3 && std::abs(res.J - best_J) <= 5e-3 &&
               std::abs(best_c - 1.0) <= 1e-2;
    report(9, "optimizer", ok9,
           fmt("|u-1|=%.2e J=%.6f iters=%d %.2fs; scan best c=%.3f J=%.6f", u_err, res.J,
               res.iters, opt_secs, best_c, best_J));

    // --- 10: numerics hygiene --------------------------------------------------
    // first derivatives must land within 1e-6, second derivatives within 1e-4
    bool ad_ok = true;
    double ad_gap1 = 0.0, ad_gap2 = 0.0;
    for (const char* name : {"paper-example", "classical-example", "lq-noise-1d"}) {
        DerivativeReport dr = check_derivatives(builtin(name), 24, 1e-4);
        for (const auto& row : dr.rows) {
            bool second = row.function.find("_xx") != std::string::npos;
            double tol = second ? 1e-4 : 1e-6;
            (second ? ad_gap2 : ad_gap1) = std::max(second ? ad_gap2 : ad_gap1, row.max_gap);
            ad_ok = ad_ok && row.max_gap <= tol;
        }
    }
    ProblemSpec lqn = builtin("lq-noise-1d");
    TimeGrid mg(200, lqn.T);
    ControlPath umc(mg, 1, 0.7);
    const int M = 200000;
    PathEnsemble ens = simulate_forward(lqn, umc, mg, M, 2024);
    double mean = 0.0, var = 0.0;
    for (int p = 0; p < M; ++p)
        mean += ens.state(p, mg.N)[0];
    mean /= M;
    for (int p = 0; p < M; ++p) {
        double dlt = ens.state(p, mg.N)[0] - mean;
        var += dlt * dlt;
    }
    var /= (M - 1);
    // X(T) ~ N(0.7, 1); 3-sigma bands for the sample mean and variance
    bool mc_ok = std::abs(mean - 0.7) <= 3.0 * std::sqrt(1.0 / M) &&
                 std::abs(var - 1.0) <= 3.0 * std::sqrt(2.0 / (M - 1));
    set_thread_count(1);
    PathEnsemble e1 = simulate_forward(lqn, umc, mg, 512, 7);
    set_thread_count(8);
    PathEnsemble e8 = simulate_forward(lqn, umc, mg, 512, 7);
    set_thread_count(0);
    bool threads_ok = e1.X == e8.X && e1.dW == e8.dW;
    report(10, "numerics hygiene", ad_ok && mc_ok && threads_ok,
           fmt("derivative gaps %.1e/%.1e mean=%.4f var=%.4f thread-reproducible=%s", ad_gap1,
               ad_gap2, mean, var, threads_ok ? "yes" : "no"));

    return failures;
}
