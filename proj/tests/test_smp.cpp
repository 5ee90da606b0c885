#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "varhor/smp.hpp"

using namespace varhor;
using nlohmann::json;

namespace {

Pipeline example_pipeline(double level, int steps = 2000) {
    static ProblemSpec spec = builtin("paper-example");
    TimeGrid grid(steps, spec.T);
    ControlPath u(grid, 1, level);
    return run_pipeline(spec, u, 1, 5);
}

// Richardson-extrapolated forward difference of J in direction v
double fd_gateaux(const Pipeline& pipe, const ControlPath& v, double rho = 1e-2) {
    const ProblemSpec& spec = *pipe.spec;
    Pipeline p1 = run_pipeline(spec, perturb_control(spec, pipe.control, v, rho), pipe.M,
                               pipe.seed, pipe.basis_degree);
    Pipeline p2 = run_pipeline(spec, perturb_control(spec, pipe.control, v, rho / 2), pipe.M,
                               pipe.seed, pipe.basis_degree);
    double d1 = (p1.J - pipe.J) / rho;
    double d2 = (p2.J - pipe.J) / (rho / 2);
    return 2.0 * d2 - d1;
}

ControlPath random_inward_direction(const ProblemSpec& spec, const ControlPath& u,
                                    std::mt19937_64& rng) {
    ControlPath v(u.grid, u.k, 0.0);
    for (int c = 0; c < u.grid.N; ++c) {
        auto uc = u.cell(c);
        auto vc = v.cell(c);
        for (int a = 0; a < u.k; ++a) {
            double lo = spec.U_lo[static_cast<size_t>(a)] - uc[static_cast<size_t>(a)];
            double hi = spec.U_hi[static_cast<size_t>(a)] - uc[static_cast<size_t>(a)];
            vc[static_cast<size_t>(a)] = std::uniform_real_distribution<>(lo, hi)(rng);
        }
    }
    return v;
}

} // namespace

TEST_CASE("directional cost derivative matches the closed form at the optimum") {
    Pipeline pipe = example_pipeline(1.0, 4000);
    ControlPath v(pipe.control.grid, 1, 1.0);
    double g = gateaux_cost(pipe, v);
    CHECK(g == doctest::Approx(std::log(2.0) - 0.5).epsilon(0.01));
    CHECK(g == doctest::Approx(fd_gateaux(pipe, v)).epsilon(0.01));
    // zero direction gives exactly zero
    ControlPath v0(pipe.control.grid, 1, 0.0);
    CHECK(gateaux_cost(pipe, v0) == 0.0);
}

TEST_CASE("directional derivative matches finite differences in random directions") {
    std::mt19937_64 rng(31);
    Pipeline pipe = example_pipeline(1.4, 2000);
    for (int trial = 0; trial < 3; ++trial) {
        ControlPath v = random_inward_direction(*pipe.spec, pipe.control, rng);
        double g = gateaux_cost(pipe, v);
        double fd = fd_gateaux(pipe, v);
        CHECK(g == doctest::Approx(fd).epsilon(0.01));
    }
}

TEST_CASE("directional derivative on a drift-free quadratic problem") {
    // sigma-free LQ: dX = u dt, J = int (x^2 + u^2) over the fixed horizon
    json cfg = builtin_config("lq-noise-1d");
    cfg["sigma"] = json::array({json::array({"0"})});
    cfg["l"] = "x1*x1 + u1*u1";
    ProblemSpec spec = load_problem(cfg);
    TimeGrid grid(1000, spec.T);
    ControlPath u(grid, 1, 0.7);
    Pipeline pipe = run_pipeline(spec, u, 1, 5);
    CHECK(pipe.stop.case_tag == CaseTag::Never);
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 3; ++trial) {
        ControlPath v = random_inward_direction(spec, u, rng);
        CHECK(gateaux_cost(pipe, v) == doctest::Approx(fd_gateaux(pipe, v)).epsilon(0.01));
    }
}

TEST_CASE("the derivative is linear in the direction") {
    Pipeline pipe = example_pipeline(1.5);
    std::mt19937_64 rng(13);
    ControlPath v1 = random_inward_direction(*pipe.spec, pipe.control, rng);
    ControlPath v2 = random_inward_direction(*pipe.spec, pipe.control, rng);
    ControlPath sum(pipe.control.grid, 1, 0.0);
    for (size_t i = 0; i < sum.values.size(); ++i)
        sum.values[i] = 0.5 * (v1.values[i] + v2.values[i]);
    double lhs = gateaux_cost(pipe, sum);
    double rhs = 0.5 * (gateaux_cost(pipe, v1) + gateaux_cost(pipe, v2));
    CHECK(lhs == doctest::Approx(rhs).epsilon(0.01));
}

TEST_CASE("optimality margins match the worked example at the optimum") {
    Pipeline pipe = example_pipeline(1.0, 4000);
    std::vector<Vec> probes = {{1.0}, {1.25}, {1.5}, {1.75}, {2.0}};
    SMPReport rep = check_smp(pipe, probes, 20);
    CHECK(rep.case_tag == CaseTag::BeforeT);
    CHECK(rep.min_margin >= -1e-6);
    for (const auto& e : rep.margins) {
        double du = probes[static_cast<size_t>(e.probe)][0] - 1.0;
        double expected = du * (1.0 - std::exp(e.t) / 2.0);
        CHECK(std::abs(e.margin - expected) <= 2e-3);
    }
}

TEST_CASE("a suboptimal control violates the necessary condition") {
    Pipeline pipe = example_pipeline(2.0, 4000);
    std::vector<Vec> probes = {{1.0}};
    SMPReport rep = check_smp(pipe, probes, 20);
    CHECK(rep.min_margin <= -0.1);
}

TEST_CASE("case Never margins reduce to the plain branch bit-for-bit") {
    ProblemSpec spec = builtin("classical-example");
    TimeGrid grid(1000, spec.T);
    ControlPath u(grid, 1, 1.3);
    Pipeline pipe = run_pipeline(spec, u, 1, 5);
    CHECK(pipe.stop.case_tag == CaseTag::Never);
    std::vector<Vec> probes = {{1.0}, {1.6}, {2.0}};
    SMPReport a = check_smp(pipe, probes, 10);
    SMPReport b = check_smp(pipe, probes, 10, /*force_plain=*/true);
    REQUIRE(a.margins.size() == b.margins.size());
    for (size_t i = 0; i < a.margins.size(); ++i) {
        CHECK(a.margins[i].margin == b.margins[i].margin);
        CHECK(a.margins[i].branch == 'p');
    }
    CHECK(a.min_margin == b.min_margin);
}

TEST_CASE("rho-family converges to the limiting systems") {
    Pipeline pipe = example_pipeline(1.0, 2000);
    ControlPath v(pipe.control.grid, 1, 1.0);
    auto table = rho_convergence(pipe, v, {1e-1, 5e-2, 2.5e-2, 1.25e-2});
    REQUIRE(table.size() == 4);
    for (size_t i = 1; i < table.size(); ++i) {
        CHECK(table[i].d_tau < table[i - 1].d_tau);
        CHECK(table[i].err_eta < table[i - 1].err_eta);
        CHECK(table[i].err_Y < table[i - 1].err_Y);
        CHECK(table[i].err_p <= table[i - 1].err_p); // identically 0 on this example
    }
    // zero direction: every column vanishes
    ControlPath v0(pipe.control.grid, 1, 0.0);
    for (const auto& row : rho_convergence(pipe, v0, {1e-1, 5e-2})) {
        CHECK(row.d_tau == 0.0);
        CHECK(row.err_eta == 0.0);
        CHECK(row.err_Y == 0.0);
        CHECK(row.err_p == 0.0);
    }
}

TEST_CASE("state sensitivity solves the linearized dynamics") {
    // f = x + u: xi' = xi + v, xi(0) = 0, v = 1  =>  xi(t) = e^t - 1
    Pipeline pipe = example_pipeline(1.0, 2000);
    ControlPath v(pipe.control.grid, 1, 1.0);
    ForwardPaths xi = variational_forward(*pipe.spec, pipe.ensemble, pipe.control, v);
    double worst = 0.0;
    for (int i = 0; i <= pipe.control.grid.N; ++i) {
        double t = pipe.control.grid.node(i);
        worst = std::max(worst, std::abs(xi.state(0, i)[0] - (std::exp(t) - 1.0)));
    }
    CHECK(worst < 2e-3);
}
