#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "varhor/opt.hpp"
#include "varhor/smp.hpp"

using namespace varhor;
using nlohmann::json;

namespace {

double inner_product(const TimeGrid& grid, const std::vector<Vec>& g, const ControlPath& v) {
    double s = 0.0;
    for (int c = 0; c < grid.N; ++c)
        for (size_t a = 0; a < g[static_cast<size_t>(c)].size(); ++a)
            s += grid.dt * g[static_cast<size_t>(c)][a] * v.cell(c)[a];
    return s;
}

} // namespace

TEST_CASE("the gradient represents the directional derivative") {
    ProblemSpec spec = builtin("paper-example");
    TimeGrid grid(1000, spec.T);
    ControlPath u(grid, 1, 1.4);
    Pipeline pipe = run_pipeline(spec, u, 1, 5);
    std::vector<Vec> g = cost_gradient(pipe);
    REQUIRE(static_cast<int>(g.size()) == grid.N);

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 3; ++trial) {
        ControlPath v(grid, 1, 0.0);
        for (int c = 0; c < grid.N; ++c)
            v.cell(c)[0] = std::uniform_real_distribution<>(-0.3, 0.3)(rng);
        double lhs = inner_product(grid, g, v);

        // tight agreement with a Richardson finite difference of J itself
        auto fd = [&](double rho) {
            Pipeline pp = run_pipeline(spec, perturb_control(spec, u, v, rho), 1, 5);
            return (pp.J - pipe.J) / rho;
        };
        double rich = 2.0 * fd(5e-3) - fd(1e-2);
        CHECK(std::abs(lhs - rich) <= 5e-6);

        // the variational-process route agrees up to its own O(dt) quadrature
        CHECK(std::abs(lhs - gateaux_cost(pipe, v)) <= 0.3 * grid.dt);
    }
}

TEST_CASE("gradient of a pure running cost with no state coupling") {
    // f = u, l = u, everything else zero, no early stop: dJ/du(t) = 1
    json cfg = builtin_config("lq-noise-1d");
    cfg["sigma"] = json::array({json::array({"0"})});
    cfg["l"] = "u1";
    ProblemSpec spec = load_problem(cfg);
    TimeGrid grid(500, spec.T);
    ControlPath u(grid, 1, 0.3);
    Pipeline pipe = run_pipeline(spec, u, 1, 5);
    REQUIRE(pipe.stop.case_tag == CaseTag::Never);
    for (const Vec& gc : cost_gradient(pipe))
        CHECK(gc[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("projected gradient descent recovers the known optimal control") {
    ProblemSpec spec = builtin("paper-example");
    TimeGrid grid(2000, spec.T);
    ControlPath u0(grid, 1, 2.0);
    OptimizerOptions opts;
    OptimizerResult res = optimize(spec, u0, 1, 5, opts);

    CHECK(res.converged);
    CHECK(res.iters <= opts.max_iters);

    // optimal control is u == 1 up to the terminal time
    Pipeline final = run_pipeline(spec, res.control, 1, 5);
    double worst = 0.0;
    for (int c = 0; c <= final.tau.I; ++c)
        worst = std::max(worst, std::abs(res.control.cell(c)[0] - 1.0));
    CHECK(worst <= 1e-2);
    CHECK(std::abs(res.J - std::log(2.0)) <= 5e-3);

    // every iterate improved and stayed feasible
    for (size_t i = 1; i < res.trace.size(); ++i)
        CHECK(res.trace[i].J <= res.trace[i - 1].J + 1e-15);
    for (int c = 0; c < grid.N; ++c) {
        CHECK(res.control.cell(c)[0] >= spec.U_lo[0] - 1e-15);
        CHECK(res.control.cell(c)[0] <= spec.U_hi[0] + 1e-15);
    }

    // the returned point satisfies the first-order condition
    std::vector<Vec> probes = {{1.0}, {1.5}, {2.0}};
    SMPReport rep = check_smp(final, probes, 20);
    CHECK(rep.min_margin >= -10 * opts.grad_tol);
}

TEST_CASE("a stationary start converges immediately") {
    ProblemSpec spec = builtin("paper-example");
    TimeGrid grid(2000, spec.T);
    ControlPath u0(grid, 1, 1.0);
    OptimizerResult res = optimize(spec, u0, 1, 5);
    CHECK(res.converged);
    CHECK(res.iters <= 1);
    for (int c = 0; c < grid.N; ++c)
        CHECK(res.control.cell(c)[0] == 1.0);
}

TEST_CASE("the fixed-horizon variant optimizes to the same control") {
    ProblemSpec spec = builtin("classical-example");
    TimeGrid grid(2000, spec.T);
    ControlPath u0(grid, 1, 2.0);
    OptimizerResult res = optimize(spec, u0, 1, 5);
    CHECK(res.converged);
    double worst = 0.0;
    for (int c = 0; c < grid.N; ++c)
        worst = std::max(worst, std::abs(res.control.cell(c)[0] - 1.0));
    CHECK(worst <= 1e-2);
    CHECK(std::abs(res.J - 1.0) <= 1e-3);
}

TEST_CASE("the varying-horizon optimum beats the fixed-horizon cost") {
    ProblemSpec spec = builtin("paper-example");
    TimeGrid grid(2000, spec.T);
    ControlPath u0(grid, 1, 2.0);
    OptimizerResult res = optimize(spec, u0, 1, 5);
    CHECK(res.J < 1.0); // log 2 < classical value 1
}
