#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "varhor/pipeline.hpp"

using namespace varhor;

namespace {

StoppingResult stop_at(double level, int steps = 4000) {
    ProblemSpec spec = builtin("paper-example");
    TimeGrid grid(steps, spec.T);
    ControlPath u(grid, 1, level);
    PathEnsemble ens = simulate_forward(spec, u, grid, 1, 5);
    return stopping_time(spec, ens);
}

} // namespace

TEST_CASE("closed-form crossing times at constant controls") {
    // x(t) = c (e^t - 1) crosses 1 at t = ln(1 + 1/c)
    CHECK(stop_at(1.0).tau_hat == doctest::Approx(std::log(2.0)).epsilon(1e-3));
    CHECK(stop_at(2.0).tau_hat == doctest::Approx(std::log(1.5)).epsilon(1e-3));
    CHECK(stop_at(1.0).case_tag == CaseTag::BeforeT);
}

TEST_CASE("crossing time is monotone in the drive level") {
    double prev = 1e9;
    for (double c : {1.0, 1.2, 1.5, 1.8, 2.0}) {
        double tau = stop_at(c).tau_hat;
        CHECK(tau < prev);
        prev = tau;
    }
}

TEST_CASE("disabled threshold yields case Never over the full horizon") {
    ProblemSpec spec = builtin("classical-example");
    TimeGrid grid(500, spec.T);
    ControlPath u(grid, 1, 1.5);
    PathEnsemble ens = simulate_forward(spec, u, grid, 1, 5);
    StoppingResult stop = stopping_time(spec, ens);
    CHECK(stop.case_tag == CaseTag::Never);
    CHECK(stop.tau_hat == grid.T);
}

TEST_CASE("crossing inside the terminal band is tagged AtT") {
    // threshold sits exactly at the reachable boundary: alpha = x(T) - eps
    nlohmann::json cfg = builtin_config("paper-example");
    ProblemSpec probe = builtin("paper-example");
    TimeGrid grid(1000, probe.T);
    ControlPath u(grid, 1, 1.0);
    PathEnsemble ens = simulate_forward(probe, u, grid, 1, 5);
    double xT = ens.state(0, grid.N)[0];
    cfg["alpha"] = xT * (1.0 - 1e-4);
    ProblemSpec spec = load_problem(cfg);
    StoppingResult stop = stopping_time(spec, ens);
    CHECK(stop.case_tag == CaseTag::AtT);
    CHECK(stop.tau_hat <= grid.T);
    CHECK(stop.tau_hat >= grid.T - 2 * grid.dt);
    // wider band configured explicitly
    cfg["alpha"] = 1.0;
    ProblemSpec spec2 = load_problem(cfg);
    StoppingResult stop2 = stopping_time(spec2, ens, 1000);
    CHECK(stop2.case_tag == CaseTag::AtT); // every crossing is inside a full-width band
}

TEST_CASE("h process matches the closed form e^t at the optimal control") {
    // h = Phi_x f = x + u = e^t along x = e^t - 1, u = 1
    StoppingResult stop = stop_at(1.0);
    for (double t : {0.0, 0.2, 0.4, 0.6}) {
        CHECK(stop.h_curve.at(t) == doctest::Approx(std::exp(t)).epsilon(1e-3));
    }
    CHECK(h_at_tau(stop.h_curve, stop.tau_hat) == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("directional crossing derivative and its linearity") {
    ProblemSpec spec = builtin("paper-example");
    TimeGrid grid(4000, spec.T);
    ControlPath u(grid, 1, 1.0);

    ControlPath v1(grid, 1, 1.0);
    TauDerivative d1 = tau_derivative(spec, u, v1, grid, 1, 5);
    CHECK(d1.value == doctest::Approx(0.5).epsilon(0.02));

    // direct finite difference oracle at rho = 1e-3
    ControlPath u_rho = perturb_control(spec, u, v1, 1e-3);
    PathEnsemble base = simulate_forward(spec, u, grid, 1, 5);
    PathEnsemble bumped = simulate_forward(spec, u_rho, grid, 1, 5);
    double fd = (stopping_time(spec, base).tau_hat - stopping_time(spec, bumped).tau_hat) / 1e-3;
    CHECK(d1.value == doctest::Approx(fd).epsilon(0.02));

    // linearity in the direction: v and v/2
    ControlPath vhalf(grid, 1, 0.5);
    TauDerivative dh = tau_derivative(spec, u, vhalf, grid, 1, 5);
    CHECK(dh.value == doctest::Approx(0.5 * d1.value).epsilon(1e-6));

    // zero direction, zero derivative
    ControlPath v0(grid, 1, 0.0);
    CHECK(tau_derivative(spec, u, v0, grid, 1, 5).value == doctest::Approx(0.0));
}

TEST_CASE("h-bar curve matches the worked example") {
    // at u = 1, v = 1 the crossing-drift sensitivity is e^t
    ProblemSpec spec = builtin("paper-example");
    TimeGrid grid(4000, spec.T);
    ControlPath u(grid, 1, 1.0);
    ControlPath v(grid, 1, 1.0);
    Curve hb = h_bar(spec, u, v, grid, 1, 5);
    for (double t : {0.0, 0.25, 0.5}) {
        CHECK(hb.at(t) == doctest::Approx(std::exp(t)).epsilon(1e-3));
    }
}

TEST_CASE("degenerate crossing slope is a numerical error") {
    Curve flat;
    flat.grid = TimeGrid(4, 1.0);
    flat.values = {0.0, 0.0, 0.0, 0.0, 0.0};
    try {
        h_at_tau(flat, 0.5);
        FAIL_CHECK("expected DegenerateH");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DegenerateH);
        CHECK_FALSE(e.is_validation());
    }
}
