#include "varhor/model.hpp"

#include <algorithm>

#include "varhor/rng.hpp"

namespace varhor {

Vec project_box(Vec v, std::span<const double> lo, std::span<const double> hi) {
    for (size_t i = 0; i < v.size(); ++i)
        v[i] = std::clamp(v[i], lo[i % lo.size()], hi[i % hi.size()]);
    return v;
}

void ProblemSpec::point(Vec& slots, double t, std::span<const double> x,
                        std::span<const double> y, std::span<const double> z,
                        std::span<const double> u) const {
    slots.assign(static_cast<size_t>(dims.slot_count()), 0.0);
    slots[0] = t;
    for (int i = 0; i < dims.n; ++i)
        slots[static_cast<size_t>(dims.x_slot(i))] = x.empty() ? 0.0 : x[static_cast<size_t>(i)];
    for (int i = 0; i < dims.m; ++i)
        slots[static_cast<size_t>(dims.y_slot(i))] = y.empty() ? 0.0 : y[static_cast<size_t>(i)];
    for (int i = 0; i < dims.m * dims.d; ++i)
        slots[static_cast<size_t>(1 + dims.n + dims.m + i)] =
            z.empty() ? 0.0 : z[static_cast<size_t>(i)];
    for (int i = 0; i < dims.k; ++i)
        slots[static_cast<size_t>(dims.u_slot(i))] = u.empty() ? 0.0 : u[static_cast<size_t>(i)];
}

void ProblemSpec::point_xu(Vec& slots, double t, std::span<const double> x,
                           std::span<const double> u) const {
    point(slots, t, x, {}, {}, u);
}

namespace {

double deriv1(const Expr& e, const Vec& slots, int slot) {
    Vec seed(slots.size(), 0.0);
    seed[static_cast<size_t>(slot)] = 1.0;
    return e.eval_d1(slots, seed);
}

double deriv2(const Expr& e, const Vec& slots, int slot_a, int slot_b) {
    Vec sa(slots.size(), 0.0), sb(slots.size(), 0.0);
    sa[static_cast<size_t>(slot_a)] = 1.0;
    sb[static_cast<size_t>(slot_b)] = 1.0;
    return e.eval_d2(slots, sa, sb);
}

} // namespace

void ProblemSpec::f_val(const Vec& slots, double* out) const {
    for (int i = 0; i < dims.n; ++i)
        out[i] = f[static_cast<size_t>(i)].eval(std::span<const double>(slots));
}
void ProblemSpec::sigma_val(const Vec& slots, double* out) const {
    for (int i = 0; i < dims.n * dims.d; ++i)
        out[i] = sigma[static_cast<size_t>(i)].eval(std::span<const double>(slots));
}
void ProblemSpec::g_val(const Vec& slots, double* out) const {
    for (int i = 0; i < dims.m; ++i)
        out[i] = g[static_cast<size_t>(i)].eval(std::span<const double>(slots));
}
double ProblemSpec::l_val(const Vec& slots) const { return l.eval(std::span<const double>(slots)); }
void ProblemSpec::Psi_val(const Vec& slots, double* out) const {
    for (int i = 0; i < dims.m; ++i)
        out[i] = Psi[static_cast<size_t>(i)].eval(std::span<const double>(slots));
}
double ProblemSpec::beta_val(const Vec& slots) const { return beta.eval(std::span<const double>(slots)); }
double ProblemSpec::gamma_val(const Vec& slots) const { return gamma.eval(std::span<const double>(slots)); }
double ProblemSpec::Phi_val(const Vec& slots) const { return Phi.eval(std::span<const double>(slots)); }

void ProblemSpec::f_x(const Vec& slots, double* out) const {
    for (int i = 0; i < dims.n; ++i)
        for (int a = 0; a < dims.n; ++a)
            out[i * dims.n + a] = deriv1(f[static_cast<size_t>(i)], slots, dims.x_slot(a));
}
void ProblemSpec::f_u(const Vec& slots, double* out) const {
    for (int i = 0; i < dims.n; ++i)
        for (int a = 0; a < dims.k; ++a)
            out[i * dims.k + a] = deriv1(f[static_cast<size_t>(i)], slots, dims.u_slot(a));
}
void ProblemSpec::sigma_x(const Vec& slots, double* out) const {
    for (int i = 0; i < dims.n * dims.d; ++i)
        for (int a = 0; a < dims.n; ++a)
            out[i * dims.n + a] = deriv1(sigma[static_cast<size_t>(i)], slots, dims.x_slot(a));
}
void ProblemSpec::sigma_u(const Vec& slots, double* out) const {
    for (int i = 0; i < dims.n * dims.d; ++i)
        for (int a = 0; a < dims.k; ++a)
            out[i * dims.k + a] = deriv1(sigma[static_cast<size_t>(i)], slots, dims.u_slot(a));
}
void ProblemSpec::g_x(const Vec& slots, double* out) const {
    for (int i = 0; i < dims.m; ++i)
        for (int a = 0; a < dims.n; ++a)
            out[i * dims.n + a] = deriv1(g[static_cast<size_t>(i)], slots, dims.x_slot(a));
}
void ProblemSpec::g_y(const Vec& slots, double* out) const {
    for (int i = 0; i < dims.m; ++i)
        for (int a = 0; a < dims.m; ++a)
            out[i * dims.m + a] = deriv1(g[static_cast<size_t>(i)], slots, dims.y_slot(a));
}
void ProblemSpec::g_z(const Vec& slots, double* out) const {
    int md = dims.m * dims.d;
    for (int i = 0; i < dims.m; ++i)
        for (int a = 0; a < md; ++a)
            out[i * md + a] = deriv1(g[static_cast<size_t>(i)], slots, 1 + dims.n + dims.m + a);
}
void ProblemSpec::g_u(const Vec& slots, double* out) const {
    for (int i = 0; i < dims.m; ++i)
        for (int a = 0; a < dims.k; ++a)
            out[i * dims.k + a] = deriv1(g[static_cast<size_t>(i)], slots, dims.u_slot(a));
}
void ProblemSpec::l_x(const Vec& slots, double* out) const {
    for (int a = 0; a < dims.n; ++a)
        out[a] = deriv1(l, slots, dims.x_slot(a));
}
void ProblemSpec::l_y(const Vec& slots, double* out) const {
    for (int a = 0; a < dims.m; ++a)
        out[a] = deriv1(l, slots, dims.y_slot(a));
}
void ProblemSpec::l_z(const Vec& slots, double* out) const {
    for (int a = 0; a < dims.m * dims.d; ++a)
        out[a] = deriv1(l, slots, 1 + dims.n + dims.m + a);
}
void ProblemSpec::l_u(const Vec& slots, double* out) const {
    for (int a = 0; a < dims.k; ++a)
        out[a] = deriv1(l, slots, dims.u_slot(a));
}
void ProblemSpec::Psi_x(const Vec& slots, double* out) const {
    for (int i = 0; i < dims.m; ++i)
        for (int a = 0; a < dims.n; ++a)
            out[i * dims.n + a] = deriv1(Psi[static_cast<size_t>(i)], slots, dims.x_slot(a));
}
void ProblemSpec::Psi_xx(const Vec& slots, double* out) const {
    for (int i = 0; i < dims.m; ++i)
        for (int a = 0; a < dims.n; ++a)
            for (int b = 0; b < dims.n; ++b)
                out[(i * dims.n + a) * dims.n + b] =
                    deriv2(Psi[static_cast<size_t>(i)], slots, dims.x_slot(a), dims.x_slot(b));
}
void ProblemSpec::beta_x(const Vec& slots, double* out) const {
    for (int a = 0; a < dims.n; ++a)
        out[a] = deriv1(beta, slots, dims.x_slot(a));
}
void ProblemSpec::beta_xx(const Vec& slots, double* out) const {
    for (int a = 0; a < dims.n; ++a)
        for (int b = 0; b < dims.n; ++b)
            out[a * dims.n + b] = deriv2(beta, slots, dims.x_slot(a), dims.x_slot(b));
}
void ProblemSpec::gamma_y(const Vec& slots, double* out) const {
    for (int a = 0; a < dims.m; ++a)
        out[a] = deriv1(gamma, slots, dims.y_slot(a));
}
void ProblemSpec::Phi_x(const Vec& slots, double* out) const {
    for (int a = 0; a < dims.n; ++a)
        out[a] = deriv1(Phi, slots, dims.x_slot(a));
}
void ProblemSpec::Phi_xx(const Vec& slots, double* out) const {
    for (int a = 0; a < dims.n; ++a)
        for (int b = 0; b < dims.n; ++b)
            out[a * dims.n + b] = deriv2(Phi, slots, dims.x_slot(a), dims.x_slot(b));
}
double ProblemSpec::Phi_xxx_dir(const Vec& slots, int i, std::span<const double> a,
                                std::span<const double> b) const {
    Vec s1(slots.size(), 0.0), s2(slots.size(), 0.0), s3(slots.size(), 0.0);
    s1[static_cast<size_t>(dims.x_slot(i))] = 1.0;
    for (int j = 0; j < dims.n; ++j) {
        s2[static_cast<size_t>(dims.x_slot(j))] = a[static_cast<size_t>(j)];
        s3[static_cast<size_t>(dims.x_slot(j))] = b[static_cast<size_t>(j)];
    }
    return Phi.eval_d3(slots, s1, s2, s3);
}

// ---------------------------------------------------------------------------
// loading

namespace {

[[noreturn]] void schema_fail(const std::string& path, const std::string& what) {
    throw Error(ErrorCode::SchemaError, "config." + path + ": " + what);
}

double read_alpha(const nlohmann::json& j) {
    if (j.is_string()) {
        if (j.get<std::string>() == "inf")
            return std::numeric_limits<double>::infinity();
        schema_fail("alpha", "expected number or \"inf\"");
    }
    if (!j.is_number())
        schema_fail("alpha", "expected number or \"inf\"");
    return j.get<double>();
}

Vec read_vec(const nlohmann::json& j, size_t len, const std::string& path) {
    if (!j.is_array() || j.size() != len)
        schema_fail(path, "expected array of length " + std::to_string(len));
    Vec out;
    for (const auto& e : j) {
        if (!e.is_number())
            schema_fail(path, "expected numeric entries");
        out.push_back(e.get<double>());
    }
    return out;
}

Expr read_expr(const nlohmann::json& j, const Dims& dims, const std::string& path) {
    if (!j.is_string())
        schema_fail(path, "expected expression string");
    try {
        return Expr::parse(j.get<std::string>(), dims);
    } catch (const Error& e) {
        schema_fail(path, e.what());
    }
}

std::vector<Expr> read_expr_array(const nlohmann::json& j, const Dims& dims, size_t len,
                                  const std::string& path) {
    if (!j.is_array() || j.size() != len)
        schema_fail(path, "expected array of " + std::to_string(len) + " expression strings");
    std::vector<Expr> out;
    for (size_t i = 0; i < j.size(); ++i)
        out.push_back(read_expr(j[i], dims, path + "[" + std::to_string(i) + "]"));
    return out;
}

// sigma arrives as n rows of d expression strings
std::vector<Expr> read_sigma(const nlohmann::json& j, const Dims& dims, const std::string& path) {
    if (!j.is_array() || j.size() != static_cast<size_t>(dims.n))
        schema_fail(path, "expected " + std::to_string(dims.n) + " rows");
    std::vector<Expr> out;
    for (size_t i = 0; i < j.size(); ++i) {
        const auto& row = j[i];
        if (!row.is_array() || row.size() != static_cast<size_t>(dims.d))
            schema_fail(path, "row " + std::to_string(i) + ": expected " + std::to_string(dims.d) +
                                  " expression strings");
        for (size_t c = 0; c < row.size(); ++c)
            out.push_back(read_expr(row[c], dims,
                                    path + "[" + std::to_string(i) + "][" + std::to_string(c) + "]"));
    }
    return out;
}

} // namespace

ProblemSpec load_problem(const nlohmann::json& config) {
    const nlohmann::json* prob = &config;
    std::string name = "custom";
    if (config.contains("problem")) {
        const auto& p = config["problem"];
        if (p.is_string())
            return builtin(p.get<std::string>());
        prob = &p;
    }
    const nlohmann::json& j = *prob;
    if (j.is_string())
        return builtin(j.get<std::string>());
    if (!j.is_object())
        schema_fail("problem", "expected builtin name or problem object");

    ProblemSpec spec;
    spec.name = j.value("name", name);
    if (!j.contains("dims") || !j["dims"].is_object())
        schema_fail("problem.dims", "missing dims object");
    const auto& dj = j["dims"];
    spec.dims.n = dj.value("n", 0);
    spec.dims.m = dj.value("m", 0);
    spec.dims.d = dj.value("d", 0);
    spec.dims.k = dj.value("k", 0);
    if (spec.dims.n < 1 || spec.dims.m < 1 || spec.dims.d < 1 || spec.dims.k < 1)
        schema_fail("problem.dims", "all of n, m, d, k must be positive");
    if (spec.dims.m > 9 || spec.dims.d > 9)
        schema_fail("problem.dims", "m and d are limited to 9 (z-variable naming)");

    if (!j.contains("T") || !j["T"].is_number() || !(j["T"].get<double>() > 0.0))
        schema_fail("problem.T", "expected positive number");
    spec.T = j["T"].get<double>();
    if (!j.contains("alpha"))
        schema_fail("problem.alpha", "missing (use \"inf\" to disable stopping)");
    spec.alpha = read_alpha(j["alpha"]);

    spec.x0 = read_vec(j.at("x0"), static_cast<size_t>(spec.dims.n), "problem.x0");
    for (double v : spec.x0)
        if (!std::isfinite(v))
            schema_fail("problem.x0", "entries must be finite");
    spec.U_lo = read_vec(j.at("U_lo"), static_cast<size_t>(spec.dims.k), "problem.U_lo");
    spec.U_hi = read_vec(j.at("U_hi"), static_cast<size_t>(spec.dims.k), "problem.U_hi");
    for (int i = 0; i < spec.dims.k; ++i)
        if (!(spec.U_lo[static_cast<size_t>(i)] <= spec.U_hi[static_cast<size_t>(i)]))
            schema_fail("problem.U_lo", "U_lo must be <= U_hi componentwise");

    spec.f = read_expr_array(j.at("f"), spec.dims, static_cast<size_t>(spec.dims.n), "problem.f");
    spec.sigma = read_sigma(j.at("sigma"), spec.dims, "problem.sigma");
    spec.g = read_expr_array(j.at("g"), spec.dims, static_cast<size_t>(spec.dims.m), "problem.g");
    spec.Psi = read_expr_array(j.at("Psi"), spec.dims, static_cast<size_t>(spec.dims.m), "problem.Psi");
    spec.l = read_expr(j.at("l"), spec.dims, "problem.l");
    spec.beta = read_expr(j.at("beta"), spec.dims, "problem.beta");
    spec.gamma = read_expr(j.at("gamma"), spec.dims, "problem.gamma");
    spec.Phi = read_expr(j.at("Phi"), spec.dims, "problem.Phi");

    spec.sigma_zero = true;
    for (const Expr& e : spec.sigma)
        if (!e.is_constant(0.0))
            spec.sigma_zero = false;

    // smoke test: coefficients must evaluate finitely near the initial state
    {
        Vec u_mid(static_cast<size_t>(spec.dims.k));
        for (int i = 0; i < spec.dims.k; ++i)
            u_mid[static_cast<size_t>(i)] =
                0.5 * (spec.U_lo[static_cast<size_t>(i)] + spec.U_hi[static_cast<size_t>(i)]);
        Vec y0(static_cast<size_t>(spec.dims.m), 0.0);
        Vec z0(static_cast<size_t>(spec.dims.m * spec.dims.d), 0.0);
        Vec slots;
        spec.point(slots, 0.0, spec.x0, y0, z0, u_mid);
        Vec buf(static_cast<size_t>(spec.dims.n * spec.dims.d));
        try {
            spec.f_val(slots, buf.data());
            spec.sigma_val(slots, buf.data());
            spec.g_val(slots, buf.data());
            spec.Psi_val(slots, buf.data());
            spec.l_val(slots);
            spec.beta_val(slots);
            spec.gamma_val(slots);
            spec.Phi_val(slots);
        } catch (const Error& e) {
            schema_fail("problem", std::string("coefficient evaluation failed at x0: ") + e.what());
        }
    }

    DerivativeReport report = check_derivatives(spec, 32, 1e-4);
    if (!report.pass) {
        std::string worst;
        for (const auto& row : report.rows)
            if (!row.pass)
                worst += (worst.empty() ? "" : ", ") + row.function;
        throw Error(ErrorCode::DerivativeCheckFailed,
                    "derivative bundle disagrees with finite differences: " + worst);
    }
    return spec;
}

nlohmann::json builtin_config(const std::string& name) {
    using nlohmann::json;
    json dims = {{"n", 1}, {"m", 1}, {"d", 1}, {"k", 1}};
    if (name == "paper-example") {
        return json{{"name", name},   {"dims", dims},        {"T", 1.0},
                    {"alpha", 1.0},   {"x0", {0.0}},         {"U_lo", {1.0}},
                    {"U_hi", {2.0}},  {"f", {"x1+u1"}},      {"sigma", {{"0"}}},
                    {"g", {"x1+y1+u1"}}, {"Psi", {"0"}},     {"l", "u1"},
                    {"beta", "0"},    {"gamma", "0"},        {"Phi", "x1"}};
    }
    if (name == "classical-example") {
        json c = builtin_config("paper-example");
        c["name"] = name;
        c["alpha"] = "inf"; // stopping disabled: fixed-horizon cost over [0, T]
        return c;
    }
    if (name == "lq-noise-1d") {
        return json{{"name", name},   {"dims", dims},        {"T", 1.0},
                    {"alpha", "inf"}, {"x0", {0.0}},         {"U_lo", {-5.0}},
                    {"U_hi", {5.0}},  {"f", {"u1"}},         {"sigma", {{"1"}}},
                    {"g", {"0"}},     {"Psi", {"0"}},        {"l", "u1*u1"},
                    {"beta", "0"},    {"gamma", "0"},        {"Phi", "x1"}};
    }
    throw Error(ErrorCode::UnknownProblem, "unknown builtin problem '" + name + "'");
}

std::vector<std::string> builtin_names() {
    return {"paper-example", "classical-example", "lq-noise-1d"};
}

ProblemSpec builtin(const std::string& name) { return load_problem(builtin_config(name)); }

// ---------------------------------------------------------------------------
// derivative verification

namespace {

struct SampleGen {
    std::uint64_t state = 0x5eed5eed5eedULL;
    double uniform(double lo, double hi) {
        state = rng::splitmix64(state);
        return lo + (hi - lo) * rng::uniform01(state);
    }
};

// central finite difference of e along slot
double fd1(const Expr& e, Vec slots, int slot, double h) {
    slots[static_cast<size_t>(slot)] += h;
    double up = e.eval(std::span<const double>(slots));
    slots[static_cast<size_t>(slot)] -= 2 * h;
    double dn = e.eval(std::span<const double>(slots));
    return (up - dn) / (2 * h);
}

double fd2(const Expr& e, Vec slots, int slot, double h) {
    double mid = e.eval(std::span<const double>(slots));
    slots[static_cast<size_t>(slot)] += h;
    double up = e.eval(std::span<const double>(slots));
    slots[static_cast<size_t>(slot)] -= 2 * h;
    double dn = e.eval(std::span<const double>(slots));
    return (up - 2 * mid + dn) / (h * h);
}

double rel_gap(double ad, double fd) {
    return std::abs(ad - fd) / std::max(1.0, std::abs(ad));
}

} // namespace

DerivativeReport check_derivatives(const ProblemSpec& spec, int samples, double tol) {
    DerivativeReport report;
    SampleGen gen;
    const Dims& dims = spec.dims;

    struct Entry {
        std::string label;
        const Expr* expr;
        std::vector<int> slots;  // slots to differentiate against
        bool second = false;
    };
    std::vector<Entry> entries;
    auto x_slots = [&] {
        std::vector<int> s;
        for (int a = 0; a < dims.n; ++a)
            s.push_back(dims.x_slot(a));
        return s;
    }();
    auto all_slots = [&] {
        std::vector<int> s;
        for (int a = 0; a < dims.slot_count(); ++a)
            s.push_back(a);
        return s;
    }();
    auto y_slots = [&] {
        std::vector<int> s;
        for (int a = 0; a < dims.m; ++a)
            s.push_back(dims.y_slot(a));
        return s;
    }();

    for (int i = 0; i < dims.n; ++i)
        entries.push_back({"f[" + std::to_string(i) + "]", &spec.f[static_cast<size_t>(i)], all_slots});
    for (int i = 0; i < dims.n * dims.d; ++i)
        entries.push_back({"sigma[" + std::to_string(i) + "]", &spec.sigma[static_cast<size_t>(i)], all_slots});
    for (int i = 0; i < dims.m; ++i)
        entries.push_back({"g[" + std::to_string(i) + "]", &spec.g[static_cast<size_t>(i)], all_slots});
    for (int i = 0; i < dims.m; ++i) {
        entries.push_back({"Psi[" + std::to_string(i) + "]", &spec.Psi[static_cast<size_t>(i)], x_slots});
        entries.push_back({"Psi_xx[" + std::to_string(i) + "]", &spec.Psi[static_cast<size_t>(i)], x_slots, true});
    }
    entries.push_back({"l", &spec.l, all_slots});
    entries.push_back({"beta", &spec.beta, x_slots});
    entries.push_back({"beta_xx", &spec.beta, x_slots, true});
    entries.push_back({"gamma", &spec.gamma, y_slots});
    entries.push_back({"Phi", &spec.Phi, x_slots});
    entries.push_back({"Phi_xx", &spec.Phi, x_slots, true});

    for (const Entry& entry : entries) {
        DerivativeReport::Row row;
        row.function = entry.label;
        int done = 0, attempts = 0;
        while (done < samples && attempts < samples * 16) {
            ++attempts;
            Vec slots(static_cast<size_t>(dims.slot_count()), 0.0);
            slots[0] = gen.uniform(0.05 * spec.T, 0.95 * spec.T);
            for (int a = 0; a < dims.n; ++a)
                slots[static_cast<size_t>(dims.x_slot(a))] =
                    spec.x0[static_cast<size_t>(a)] + gen.uniform(-0.5, 0.5);
            for (int a = 0; a < dims.m; ++a)
                slots[static_cast<size_t>(dims.y_slot(a))] = gen.uniform(-0.5, 0.5);
            for (int a = 0; a < dims.m * dims.d; ++a)
                slots[static_cast<size_t>(1 + dims.n + dims.m + a)] = gen.uniform(-0.5, 0.5);
            for (int a = 0; a < dims.k; ++a) {
                double lo = spec.U_lo[static_cast<size_t>(a)];
                double hi = spec.U_hi[static_cast<size_t>(a)];
                slots[static_cast<size_t>(dims.u_slot(a))] = gen.uniform(lo + 0.25 * (hi - lo),
                                                                         hi - 0.25 * (hi - lo));
            }
            try {
                for (int slot : entry.slots) {
                    Vec seed(slots.size(), 0.0);
                    seed[static_cast<size_t>(slot)] = 1.0;
                    double gap;
                    if (entry.second) {
                        double ad = entry.expr->eval_d2(slots, seed, seed);
                        gap = rel_gap(ad, fd2(*entry.expr, slots, slot, 1e-4));
                    } else {
                        double ad = entry.expr->eval_d1(slots, seed);
                        gap = rel_gap(ad, fd1(*entry.expr, slots, slot, 1e-6));
                    }
                    row.max_gap = std::max(row.max_gap, gap);
                }
                ++done;
            } catch (const Error&) {
                // point outside the expression's domain; resample
            }
        }
        row.pass = done > 0 && row.max_gap <= tol;
        report.max_gap = std::max(report.max_gap, row.max_gap);
        report.pass = report.pass && row.pass;
        report.rows.push_back(row);
    }
    return report;
}

} // namespace varhor
