#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "varhor/sim.hpp"
#include "varhor/threads.hpp"

using namespace varhor;

TEST_CASE("path generation is bit-identical across worker counts") {
    ProblemSpec spec = builtin("lq-noise-1d");
    TimeGrid grid(64, spec.T);
    ControlPath u(grid, 1, 0.5);
    set_thread_count(1);
    PathEnsemble one = simulate_forward(spec, u, grid, 512, 42);
    set_thread_count(7);
    PathEnsemble many = simulate_forward(spec, u, grid, 512, 42);
    set_thread_count(0);
    REQUIRE(one.X.size() == many.X.size());
    CHECK(one.X == many.X);
    CHECK(one.dW == many.dW);
    // and the sequential reduction gives identical functionals
    Curve c1 = mean_functional(one, [](std::span<const double> x) { return x[0]; });
    Curve c2 = mean_functional(many, [](std::span<const double> x) { return x[0]; });
    CHECK(c1.values == c2.values);
    CHECK(c1.stderrs == c2.stderrs);
}

TEST_CASE("seed changes the draws, same seed reproduces them") {
    ProblemSpec spec = builtin("lq-noise-1d");
    TimeGrid grid(32, spec.T);
    ControlPath u(grid, 1, 0.0);
    PathEnsemble a = simulate_forward(spec, u, grid, 64, 7);
    PathEnsemble b = simulate_forward(spec, u, grid, 64, 7);
    PathEnsemble c = simulate_forward(spec, u, grid, 64, 8);
    CHECK(a.X == b.X);
    CHECK(a.X != c.X);
}

TEST_CASE("drift-plus-noise terminal mean and variance pass a 3-sigma check") {
    // dX = u dt + dW, X(0) = 0  =>  X(T) ~ N(u*T, T)
    ProblemSpec spec = builtin("lq-noise-1d");
    TimeGrid grid(100, spec.T);
    const double ubar = 0.7;
    ControlPath u(grid, 1, ubar);
    const int M = 200000;
    PathEnsemble ens = simulate_forward(spec, u, grid, M, 2024);

    double mean = 0.0;
    for (int p = 0; p < M; ++p)
        mean += ens.state(p, grid.N)[0];
    mean /= M;
    double var = 0.0;
    for (int p = 0; p < M; ++p) {
        double d = ens.state(p, grid.N)[0] - mean;
        var += d * d;
    }
    var /= (M - 1);

    double mean_tol = 3.0 * std::sqrt(1.0 / M);          // Var X(T) = T = 1
    double var_tol = 3.0 * std::sqrt(2.0 / (M - 1.0));   // Var of sample variance ~ 2 sigma^4 / M
    CHECK(std::abs(mean - ubar * spec.T) <= mean_tol);
    CHECK(std::abs(var - spec.T) <= var_tol);
}

TEST_CASE("deterministic drift collapses to one path and converges in dt") {
    // dX = (x + u) dt, x0 = 0, u = 1  =>  X(t) = e^t - 1
    ProblemSpec spec = builtin("paper-example");
    auto err_at = [&](int steps) {
        TimeGrid grid(steps, spec.T);
        ControlPath u(grid, 1, 1.0);
        PathEnsemble ens = simulate_forward(spec, u, grid, 64, 1);
        CHECK(ens.M == 1); // sigma == 0 collapses the ensemble
        double worst = 0.0;
        for (int i = 0; i <= grid.N; ++i)
            worst = std::max(worst,
                             std::abs(ens.state(0, i)[0] - (std::exp(grid.node(i)) - 1.0)));
        return worst;
    };
    double e1 = err_at(250);
    double e2 = err_at(500);
    double e3 = err_at(1000);
    CHECK(e2 < e1);
    CHECK(e3 < e2);
    CHECK(e1 / e2 == doctest::Approx(2.0).epsilon(0.1)); // first order in dt
    CHECK(e3 < 2e-3);
}

TEST_CASE("curve interpolation and integration") {
    TimeGrid grid(4, 1.0);
    Curve c;
    c.grid = grid;
    c.values = {0.0, 1.0, 2.0, 3.0, 4.0}; // f(t) = 4t
    CHECK(c.at(0.125) == doctest::Approx(0.5));
    CHECK(c.at(1.0) == doctest::Approx(4.0));
    CHECK(integrate_curve(c, 1.0) == doctest::Approx(2.0));   // iint 4t = 2t^2
    CHECK(integrate_curve(c, 0.625) == doctest::Approx(2.0 * 0.625 * 0.625));
}

TEST_CASE("non-finite drift is reported as a numerical error") {
    nlohmann::json cfg = builtin_config("paper-example");
    cfg["f"] = {"exp(exp(x1))"}; // finite at x0, overflows within a few steps
    ProblemSpec spec = load_problem(cfg);
    TimeGrid grid(100, spec.T);
    ControlPath u(grid, 1, 1.0);
    try {
        simulate_forward(spec, u, grid, 1, 3);
        FAIL_CHECK("expected a numerical error");
    } catch (const Error& e) {
        CHECK_FALSE(e.is_validation());
    }
}
