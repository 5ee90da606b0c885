#ifndef VARHOR_MODEL_HPP
#define VARHOR_MODEL_HPP

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "varhor/expr.hpp"
#include "varhor/linalg.hpp"

namespace varhor {

struct TimeGrid {
    int N = 0;     // steps
    double T = 0.0;
    double dt = 0.0;

    TimeGrid() = default;
    TimeGrid(int steps, double horizon) : N(steps), T(horizon), dt(horizon / steps) {}

    double node(int i) const { return i * dt; }
    bool same_as(const TimeGrid& o) const { return N == o.N && T == o.T; }
};

// Deterministic piecewise-constant control: row i (k entries) active on [t_i, t_{i+1}).
struct ControlPath {
    TimeGrid grid;
    int k = 1;
    Vec values; // N * k

    ControlPath() = default;
    ControlPath(const TimeGrid& g, int kdim, double fill = 0.0)
        : grid(g), k(kdim), values(static_cast<size_t>(g.N * kdim), fill) {}

    std::span<const double> cell(int i) const {
        return {values.data() + static_cast<size_t>(i) * static_cast<size_t>(k),
                static_cast<size_t>(k)};
    }
    std::span<double> cell(int i) {
        return {values.data() + static_cast<size_t>(i) * static_cast<size_t>(k),
                static_cast<size_t>(k)};
    }
    // Control value at time t (cell containing t; last cell at t = T).
    std::span<const double> at_time(double t) const {
        int i = static_cast<int>(std::floor(t / grid.dt));
        if (i < 0)
            i = 0;
        if (i >= grid.N)
            i = grid.N - 1;
        return cell(i);
    }
};

// componentwise clamp onto [lo, hi]
Vec project_box(Vec v, std::span<const double> lo, std::span<const double> hi);

// The coefficient septet with AD-backed derivative bundles. Immutable after
// load; all methods are const and reentrant.
class ProblemSpec {
  public:
    Dims dims;
    double T = 1.0;
    double alpha = 1.0; // +inf disables stopping
    Vec x0;
    Vec U_lo, U_hi;
    std::string name; // builtin name or "custom"

    std::vector<Expr> f;     // n entries, vars (t, x, u)
    std::vector<Expr> sigma; // n*d entries row-major, vars (t, x, u)
    std::vector<Expr> g;     // m entries, vars (t, x, y, z, u)
    std::vector<Expr> Psi;   // m entries, vars (x)
    Expr l;                  // vars (t, x, y, z, u)
    Expr beta;               // vars (x)
    Expr gamma;              // vars (y)
    Expr Phi;                // vars (x)

    bool sigma_zero = false; // structural: every sigma entry is the literal 0

    bool stopping_enabled() const { return std::isfinite(alpha); }
    int n() const { return dims.n; }
    int m() const { return dims.m; }
    int d() const { return dims.d; }
    int k() const { return dims.k; }

    // --- evaluation ------------------------------------------------------
    // All methods take a filled slot vector (see point()) and write row-major
    // outputs into caller buffers sized as documented.

    void point(Vec& slots, double t, std::span<const double> x, std::span<const double> y,
               std::span<const double> z, std::span<const double> u) const;
    void point_xu(Vec& slots, double t, std::span<const double> x,
                  std::span<const double> u) const;

    void f_val(const Vec& slots, double* out) const;          // n
    void sigma_val(const Vec& slots, double* out) const;      // n*d
    void g_val(const Vec& slots, double* out) const;          // m
    double l_val(const Vec& slots) const;
    void Psi_val(const Vec& slots, double* out) const;        // m
    double beta_val(const Vec& slots) const;
    double gamma_val(const Vec& slots) const;
    double Phi_val(const Vec& slots) const;

    void f_x(const Vec& slots, double* out) const;     // n*n, [i*n+a] = df_i/dx_a
    void f_u(const Vec& slots, double* out) const;     // n*k
    void sigma_x(const Vec& slots, double* out) const; // n*d*n, [(i*d+j)*n+a]
    void sigma_u(const Vec& slots, double* out) const; // n*d*k
    void g_x(const Vec& slots, double* out) const;     // m*n
    void g_y(const Vec& slots, double* out) const;     // m*m
    void g_z(const Vec& slots, double* out) const;     // m*(m*d)
    void g_u(const Vec& slots, double* out) const;     // m*k
    void l_x(const Vec& slots, double* out) const;     // n
    void l_y(const Vec& slots, double* out) const;     // m
    void l_z(const Vec& slots, double* out) const;     // m*d
    void l_u(const Vec& slots, double* out) const;     // k
    void Psi_x(const Vec& slots, double* out) const;   // m*n
    void Psi_xx(const Vec& slots, double* out) const;  // m*n*n
    void beta_x(const Vec& slots, double* out) const;  // n
    void beta_xx(const Vec& slots, double* out) const; // n*n
    void gamma_y(const Vec& slots, double* out) const; // m
    void Phi_x(const Vec& slots, double* out) const;   // n
    void Phi_xx(const Vec& slots, double* out) const;  // n*n

    // Third directional derivative of Phi along (e_i, a, b), used by the
    // analytic h-bar kernel when sigma != 0.
    double Phi_xxx_dir(const Vec& slots, int i, std::span<const double> a,
                       std::span<const double> b) const;
};

struct DerivativeReport {
    struct Row {
        std::string function;
        double max_gap = 0.0; // max relative gap vs. central finite difference
        bool pass = true;
    };
    std::vector<Row> rows;
    bool pass = true;
    double max_gap = 0.0;
};

ProblemSpec load_problem(const nlohmann::json& config);
ProblemSpec builtin(const std::string& name);
nlohmann::json builtin_config(const std::string& name);
std::vector<std::string> builtin_names();

DerivativeReport check_derivatives(const ProblemSpec& spec, int samples, double tol);

} // namespace varhor

#endif
