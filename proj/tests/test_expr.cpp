#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "varhor/expr.hpp"

using namespace varhor;

namespace {

Dims dims_for_test() {
    Dims d;
    d.n = 2;
    d.m = 2;
    d.d = 2;
    d.k = 1;
    return d;
}

// central finite differences of eval at a point along a unit slot direction
double fd1(const Expr& e, std::vector<double> pt, int slot, double h = 1e-6) {
    pt[static_cast<size_t>(slot)] += h;
    double up = e.eval(std::span<const double>(pt));
    pt[static_cast<size_t>(slot)] -= 2 * h;
    double dn = e.eval(std::span<const double>(pt));
    return (up - dn) / (2 * h);
}

double fd2(const Expr& e, std::vector<double> pt, int sa, int sb, double h = 1e-4) {
    auto at = [&](double da, double db) {
        std::vector<double> q = pt;
        q[static_cast<size_t>(sa)] += da;
        q[static_cast<size_t>(sb)] += db;
        return e.eval(std::span<const double>(q));
    };
    return (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4 * h * h);
}

std::vector<double> unit(int size, int slot) {
    std::vector<double> v(static_cast<size_t>(size), 0.0);
    v[static_cast<size_t>(slot)] = 1.0;
    return v;
}

} // namespace

TEST_CASE("derivatives match finite differences on a corpus") {
    Dims dims = dims_for_test();
    const std::vector<std::string> corpus = {
        "x1 + u1",
        "x1*x2 - y1/(2 + y2*y2)",
        "exp(x1) * sin(x2) + cos(z11)",
        "sqrt(1 + x1*x1 + z22*z22)",
        "log(2 + x2*x2) + t*u1",
        "(x1 + y1)^3 - u1^2",
        "x1*exp(-x2) + z12*z21",
    };
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<> unif(-0.8, 0.8);
    for (const auto& text : corpus) {
        CAPTURE(text);
        Expr e = Expr::parse(text, dims);
        for (int rep = 0; rep < 4; ++rep) {
            std::vector<double> pt(static_cast<size_t>(dims.slot_count()));
            for (double& v : pt)
                v = unif(rng);
            for (int s = 0; s < dims.slot_count(); ++s) {
                double ad = e.eval_d1(pt, unit(dims.slot_count(), s));
                double fd = fd1(e, pt, s);
                CHECK(std::abs(ad - fd) <= 1e-6 * std::max(1.0, std::abs(ad)));
            }
            for (int sa = 0; sa < dims.slot_count(); ++sa)
                for (int sb = sa; sb < dims.slot_count(); ++sb) {
                    double ad = e.eval_d2(pt, unit(dims.slot_count(), sa),
                                          unit(dims.slot_count(), sb));
                    double fd = fd2(e, pt, sa, sb);
                    CHECK(std::abs(ad - fd) <= 1e-4 * std::max(1.0, std::abs(ad)));
                }
        }
    }
}

TEST_CASE("parse-print round trip is semantically stable") {
    Dims dims = dims_for_test();
    const std::vector<std::string> corpus = {
        "x1 + u1",
        "-x1*(x2 - y1)",
        "exp(x1)*sin(x2)/(1 + z11*z11)",
        "(x1 + y1)^2",
        "x1 - x2 - y1", // left associativity must survive
        "x1/(x2/y1)",
        "abs(x1) + sqrt(1 + x2*x2)",
    };
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<> unif(0.1, 0.9);
    for (const auto& text : corpus) {
        CAPTURE(text);
        Expr e = Expr::parse(text, dims);
        Expr r = Expr::parse(e.print(), dims);
        for (int rep = 0; rep < 8; ++rep) {
            std::vector<double> pt(static_cast<size_t>(dims.slot_count()));
            for (double& v : pt)
                v = unif(rng);
            CHECK(e.eval(std::span<const double>(pt)) ==
                  doctest::Approx(r.eval(std::span<const double>(pt))).epsilon(1e-14));
        }
        // printing the reparse is a fixed point
        CHECK(r.print() == Expr::parse(r.print(), dims).print());
    }
}

TEST_CASE("third directional derivative matches finite differences") {
    Dims dims = dims_for_test();
    Expr e = Expr::parse("exp(x1)*x2*x2*x2 + x1^3", dims);
    std::vector<double> pt(static_cast<size_t>(dims.slot_count()), 0.3);
    auto ex = unit(dims.slot_count(), dims.x_slot(0));
    auto ey = unit(dims.slot_count(), dims.x_slot(1));
    // d^3/dx1 dx2 dx2 of exp(x1) x2^3 = 6 x2 exp(x1)
    double ad = e.eval_d3(pt, ex, ey, ey);
    CHECK(ad == doctest::Approx(6.0 * 0.3 * std::exp(0.3)).epsilon(1e-9));
    // d^3/dx1^3 = exp(x1) x2^3 + 6
    double ad2 = e.eval_d3(pt, ex, ex, ex);
    CHECK(ad2 == doctest::Approx(std::exp(0.3) * 0.027 + 6.0).epsilon(1e-9));
}

TEST_CASE("parse errors carry the validation code") {
    Dims dims = dims_for_test();
    CHECK_THROWS_AS(Expr::parse("x1 +", dims), Error);
    CHECK_THROWS_AS(Expr::parse("w3 + 1", dims), Error);
    try {
        Expr::parse("x9 + x1", dims);
        FAIL("expected throw");
    } catch (const Error& e) {
        CHECK(e.is_validation());
    }
}
