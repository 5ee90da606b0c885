#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "varhor/pipeline.hpp"

using namespace varhor;
using nlohmann::json;

TEST_CASE("all three costates vanish identically on the worked example") {
    ProblemSpec spec = builtin("paper-example");
    TimeGrid grid(2000, spec.T);
    ControlPath u(grid, 1, 1.0);
    Pipeline pipe = run_pipeline(spec, u, 1, 5);
    double worst = 0.0;
    for (int i = 0; i <= pipe.tau.I; ++i) {
        worst = std::max(worst, std::abs(pipe.adjoints.pk.v(0, i)[0]));
        worst = std::max(worst, std::abs(pipe.adjoints.pk.z(0, i)[0]));
        worst = std::max(worst, std::abs(pipe.adjoints.q_node(0, i)[0]));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("q solves its forward equation in closed form") {
    // g = y, gamma = y, l = 0: q(0) = -1, dq = -q dt  =>  q(t) = -e^{-t}
    json cfg = builtin_config("classical-example");
    cfg["g"] = {"y1"};
    cfg["gamma"] = "y1";
    cfg["l"] = "0";
    ProblemSpec spec = load_problem(cfg);
    TimeGrid grid(2000, spec.T);
    ControlPath u(grid, 1, 1.0);
    Pipeline pipe = run_pipeline(spec, u, 1, 5);
    double worst = 0.0;
    for (int i = 0; i <= pipe.tau.I; ++i) {
        double t = grid.node(i);
        worst = std::max(worst, std::abs(pipe.adjoints.q_node(0, i)[0] + std::exp(-t)));
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("p picks up the terminal cost gradient") {
    // beta = x, f = u (state-free drift): p(t) = beta_x = 1 constant,
    // q = 0 (gamma = 0), H_u = l_u + p f_u = 2u + 1
    json cfg = builtin_config("lq-noise-1d");
    cfg["sigma"] = {{"0"}};
    cfg["beta"] = "x1";
    ProblemSpec spec = load_problem(cfg);
    TimeGrid grid(1000, spec.T);
    ControlPath u(grid, 1, 0.5);
    Pipeline pipe = run_pipeline(spec, u, 1, 5);
    double worst = 0.0;
    for (int i = 0; i <= pipe.tau.I; ++i)
        worst = std::max(worst, std::abs(pipe.adjoints.pk.v(0, i)[0] - 1.0));
    CHECK(worst < 1e-9);

    Vec slots, Hu(1);
    double H = 0.0;
    spec.point(slots, 0.5, pipe.ensemble.state(0, 500), pipe.backward.v(0, 500),
               pipe.backward.z(0, 500), u.cell(500));
    hamiltonian(spec, slots, pipe.adjoints.pk.v(0, 500), pipe.adjoints.pk.z(0, 500),
                pipe.adjoints.q_node(0, 500), H, Hu);
    CHECK(Hu[0] == doctest::Approx(2.0 * 0.5 + 1.0).epsilon(1e-9));
}

TEST_CASE("terminal-time constant matches the worked example") {
    // at constant control c the constant equals -c and h(tau) = 1 + c
    for (double c : {1.0, 1.5, 2.0}) {
        CAPTURE(c);
        ProblemSpec spec = builtin("paper-example");
        TimeGrid grid(4000, spec.T);
        ControlPath u(grid, 1, c);
        Pipeline pipe = run_pipeline(spec, u, 1, 5);
        CHECK(pipe.scriptL == doctest::Approx(-c).epsilon(1e-6));
        CHECK(pipe.h_tau == doctest::Approx(1.0 + c).epsilon(1e-3));
    }
}

TEST_CASE("drift of the crossing and terminal-cost functionals") {
    ProblemSpec spec = builtin("paper-example");
    Vec slots;
    spec.point(slots, 0.3, Vec{0.4}, Vec{0.0}, Vec{0.0}, Vec{1.2});
    Vec pt(1);
    psi_tilde(spec, slots, pt); // Psi = 0
    CHECK(pt[0] == 0.0);
    CHECK(beta_tilde(spec, slots) == 0.0); // beta = 0

    nlohmann::json cfg = builtin_config("lq-noise-1d");
    cfg["Psi"] = {"x1*x1"};
    ProblemSpec lq = load_problem(cfg);
    Vec s2;
    lq.point(s2, 0.3, Vec{0.4}, Vec{0.0}, Vec{0.0}, Vec{1.2});
    Vec pt2(1);
    psi_tilde(lq, s2, pt2);
    // d/dt E[X^2] = 2 x f + sigma^2 = 2*0.4*1.2 + 1
    CHECK(pt2[0] == doctest::Approx(2.0 * 0.4 * 1.2 + 1.0).epsilon(1e-12));
}
