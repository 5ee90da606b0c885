// Command-line surface: loads a JSON run configuration, executes one pipeline
// stage, and writes CSV artifacts plus a meta.json echoing the configuration,
// its hash, and the master seed.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "varhor/io.hpp"
#include "varhor/opt.hpp"

using nlohmann::json;
using namespace varhor;

namespace {

struct RunConfig {
    json raw;
    ProblemSpec spec;
    TimeGrid grid;
    int paths = 1000;
    std::uint64_t seed = 12345;
    std::string bsde_mode = "auto";
    int basis_degree = 2;
    int at_T_band_cells = 2;
    ControlPath control{TimeGrid(1, 1.0), 1, 0.0};
    std::vector<Vec> u_probes;
    ControlPath direction{TimeGrid(1, 1.0), 1, 0.0};
    int t_stride = 1;
    std::vector<double> rho_list;
    OptimizerOptions opt;
    std::string out_dir = "out";
};

[[noreturn]] void config_fail(const std::string& path, const std::string& what) {
    throw Error(ErrorCode::SchemaError, "config." + path + ": " + what);
}

Vec read_control_values(const json& j, int k, const std::string& path) {
    Vec v(static_cast<size_t>(k));
    if (j.is_number()) {
        std::fill(v.begin(), v.end(), j.get<double>());
        return v;
    }
    if (j.is_array() && j.size() == static_cast<size_t>(k)) {
        for (int a = 0; a < k; ++a) {
            if (!j[static_cast<size_t>(a)].is_number())
                config_fail(path, "entries must be numbers");
            v[static_cast<size_t>(a)] = j[static_cast<size_t>(a)].get<double>();
        }
        return v;
    }
    config_fail(path, "expected a number or an array of k numbers");
}

// Applies one `--set key.path=value` override; the value is parsed as JSON
// when possible and kept as a string otherwise.
void apply_set(json& cfg, const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
        config_fail("--set", "expected key.path=value, got '" + kv + "'");
    std::string key = kv.substr(0, eq);
    std::string val = kv.substr(eq + 1);
    json parsed = json::parse(val, nullptr, false);
    if (parsed.is_discarded())
        parsed = val;
    json* node = &cfg;
    size_t pos = 0;
    while (true) {
        size_t dot = key.find('.', pos);
        std::string part = key.substr(pos, dot - pos);
        if (part.empty())
            config_fail("--set", "empty path segment in '" + key + "'");
        if (dot == std::string::npos) {
            (*node)[part] = parsed;
            return;
        }
        node = &(*node)[part];
        pos = dot + 1;
    }
}

RunConfig build_config(json raw) {
    RunConfig rc;
    rc.raw = raw;
    rc.spec = load_problem(raw);
    const Dims& dims = rc.spec.dims;

    int steps = 2000;
    if (raw.contains("grid")) {
        if (!raw["grid"].is_object())
            config_fail("grid", "expected object");
        steps = raw["grid"].value("steps", 2000);
    }
    if (steps < 1)
        config_fail("grid.steps", "must be positive");
    rc.grid = TimeGrid(steps, rc.spec.T);

    if (raw.contains("mc")) {
        rc.paths = raw["mc"].value("paths", rc.paths);
        if (rc.paths < 1)
            config_fail("mc.paths", "must be positive");
        if (raw["mc"].contains("seed"))
            rc.seed = raw["mc"]["seed"].get<std::uint64_t>();
    }

    if (raw.contains("bsde")) {
        rc.bsde_mode = raw["bsde"].value("mode", rc.bsde_mode);
        rc.basis_degree = raw["bsde"].value("basis_degree", rc.basis_degree);
        if (rc.basis_degree < 0)
            config_fail("bsde.basis_degree", "must be nonnegative");
    }
    if (rc.bsde_mode == "deterministic") {
        if (!rc.spec.sigma_zero)
            config_fail("bsde.mode", "deterministic mode requires sigma identically 0");
    } else if (rc.bsde_mode == "regression") {
        if (rc.spec.sigma_zero)
            config_fail("bsde.mode", "regression mode requires a nonzero sigma");
    } else if (rc.bsde_mode != "auto") {
        config_fail("bsde.mode", "expected auto, deterministic, or regression");
    }

    if (raw.contains("stopping"))
        rc.at_T_band_cells = raw["stopping"].value("at_T_band_cells", rc.at_T_band_cells);
    if (rc.at_T_band_cells < 0)
        config_fail("stopping.at_T_band_cells", "must be nonnegative");

    Vec init(static_cast<size_t>(dims.k));
    for (int a = 0; a < dims.k; ++a)
        init[static_cast<size_t>(a)] = std::clamp(0.0, rc.spec.U_lo[static_cast<size_t>(a)],
                                                  rc.spec.U_hi[static_cast<size_t>(a)]);
    if (raw.contains("control") && raw["control"].contains("init"))
        init = read_control_values(raw["control"]["init"], dims.k, "control.init");
    for (int a = 0; a < dims.k; ++a)
        if (init[static_cast<size_t>(a)] < rc.spec.U_lo[static_cast<size_t>(a)] ||
            init[static_cast<size_t>(a)] > rc.spec.U_hi[static_cast<size_t>(a)])
            config_fail("control.init", "outside the control box");
    rc.control = ControlPath(rc.grid, dims.k, 0.0);
    for (int c = 0; c < rc.grid.N; ++c)
        std::copy(init.begin(), init.end(), rc.control.cell(c).begin());

    // probes default to five evenly spaced points of the box diagonal
    rc.t_stride = std::max(1, rc.grid.N / 50);
    rc.rho_list = {1e-1, 5e-2, 2.5e-2, 1.25e-2};
    rc.direction = ControlPath(rc.grid, dims.k, 1.0);
    const json smp = raw.value("smp", json::object());
    if (smp.contains("u_probes")) {
        if (!smp["u_probes"].is_array())
            config_fail("smp.u_probes", "expected array");
        for (const auto& pj : smp["u_probes"])
            rc.u_probes.push_back(read_control_values(pj, dims.k, "smp.u_probes[]"));
    } else {
        for (int i = 0; i < 5; ++i) {
            Vec p(static_cast<size_t>(dims.k));
            for (int a = 0; a < dims.k; ++a)
                p[static_cast<size_t>(a)] =
                    rc.spec.U_lo[static_cast<size_t>(a)] +
                    (rc.spec.U_hi[static_cast<size_t>(a)] - rc.spec.U_lo[static_cast<size_t>(a)]) *
                        i / 4.0;
            rc.u_probes.push_back(std::move(p));
        }
    }
    for (const Vec& p : rc.u_probes)
        for (int a = 0; a < dims.k; ++a)
            if (p[static_cast<size_t>(a)] < rc.spec.U_lo[static_cast<size_t>(a)] ||
                p[static_cast<size_t>(a)] > rc.spec.U_hi[static_cast<size_t>(a)])
                config_fail("smp.u_probes", "probe outside the control box");
    if (smp.contains("t_stride"))
        rc.t_stride = smp["t_stride"].get<int>();
    if (rc.t_stride < 1)
        config_fail("smp.t_stride", "must be positive");
    if (smp.contains("rho_list")) {
        rc.rho_list.clear();
        for (const auto& r : smp["rho_list"]) {
            double v = r.get<double>();
            if (!(v > 0.0))
                config_fail("smp.rho_list", "entries must be positive");
            rc.rho_list.push_back(v);
        }
    }
    if (smp.contains("direction")) {
        Vec dv = read_control_values(smp["direction"], dims.k, "smp.direction");
        for (int c = 0; c < rc.grid.N; ++c)
            std::copy(dv.begin(), dv.end(), rc.direction.cell(c).begin());
    }

    const json oj = raw.value("optimizer", json::object());
    rc.opt.step0 = oj.value("step0", rc.opt.step0);
    rc.opt.max_iters = oj.value("max_iters", rc.opt.max_iters);
    rc.opt.armijo_c = oj.value("armijo_c", rc.opt.armijo_c);
    rc.opt.shrink = oj.value("shrink", rc.opt.shrink);
    rc.opt.grad_tol = oj.value("grad_tol", rc.opt.grad_tol);
    if (!(rc.opt.step0 > 0.0) || rc.opt.max_iters < 1 || !(rc.opt.armijo_c > 0.0) ||
        !(rc.opt.armijo_c < 1.0) || !(rc.opt.shrink > 0.0) || !(rc.opt.shrink < 1.0))
        config_fail("optimizer", "step0 > 0, 0 < armijo_c < 1, 0 < shrink < 1, max_iters >= 1");

    rc.out_dir = raw.value("output", std::string("out"));
    return rc;
}

std::string probe_label(const Vec& p) {
    std::string s;
    for (size_t a = 0; a < p.size(); ++a) {
        if (a)
            s += ';';
        s += sig17(p[a]);
    }
    return s;
}

void write_meta(const RunConfig& rc, const std::string& sub, const json& results) {
    json meta;
    meta["subcommand"] = sub;
    meta["config"] = rc.raw;
    meta["config_hash"] = fnv1a_hex(rc.raw.dump());
    meta["seed"] = rc.seed;
    meta["grid"] = {{"steps", rc.grid.N}, {"T", rc.grid.T}, {"dt", rc.grid.dt}};
    meta["results"] = results;
    std::ofstream out(rc.out_dir + "/meta.json");
    out << meta.dump(2) << "\n";
}

int cmd_simulate(const RunConfig& rc) {
    PathEnsemble ens = simulate_forward(rc.spec, rc.control, rc.grid, rc.paths, rc.seed);
    const int n = rc.spec.dims.n;
    std::vector<std::string> header = {"t"};
    for (int a = 0; a < n; ++a)
        header.push_back("mean_x" + std::to_string(a));
    for (int a = 0; a < n; ++a)
        header.push_back("stderr_x" + std::to_string(a));
    CsvWriter csv(rc.out_dir + "/simulate.csv", header);
    for (int i = 0; i <= rc.grid.N; ++i) {
        std::vector<std::string> row = {sig17(rc.grid.node(i))};
        Vec mean(static_cast<size_t>(n), 0.0), var(static_cast<size_t>(n), 0.0);
        for (int p = 0; p < ens.M; ++p) {
            auto x = ens.state(p, i);
            for (int a = 0; a < n; ++a)
                mean[static_cast<size_t>(a)] += x[static_cast<size_t>(a)];
        }
        for (double& v : mean)
            v /= ens.M;
        for (int p = 0; p < ens.M; ++p) {
            auto x = ens.state(p, i);
            for (int a = 0; a < n; ++a) {
                double dxa = x[static_cast<size_t>(a)] - mean[static_cast<size_t>(a)];
                var[static_cast<size_t>(a)] += dxa * dxa;
            }
        }
        for (int a = 0; a < n; ++a)
            row.push_back(sig17(mean[static_cast<size_t>(a)]));
        for (int a = 0; a < n; ++a)
            row.push_back(sig17(ens.M > 1 ? std::sqrt(var[static_cast<size_t>(a)] /
                                                      (ens.M * (ens.M - 1.0)))
                                          : 0.0));
        csv.row(row);
    }
    write_meta(rc, "simulate", {{"paths", ens.M}});
    return 0;
}

int cmd_stopping(const RunConfig& rc) {
    PathEnsemble ens = simulate_forward(rc.spec, rc.control, rc.grid, rc.paths, rc.seed);
    StoppingResult stop = stopping_time(rc.spec, ens, rc.at_T_band_cells);
    CsvWriter csv(rc.out_dir + "/stopping.csv", {"t", "m", "h"});
    for (int i = 0; i <= rc.grid.N; ++i)
        csv.row({sig17(rc.grid.node(i)), sig17(stop.m_curve.values[static_cast<size_t>(i)]),
                 sig17(stop.h_curve.values[static_cast<size_t>(i)])});
    std::printf("tau_hat = %.6f  case = %s\n", stop.tau_hat, case_name(stop.case_tag).c_str());
    write_meta(rc, "stopping",
               {{"tau_hat", stop.tau_hat}, {"case", case_name(stop.case_tag)}});
    return 0;
}

int cmd_cost(const RunConfig& rc) {
    Pipeline pipe =
        run_pipeline(rc.spec, rc.control, rc.paths, rc.seed, rc.basis_degree, rc.at_T_band_cells);
    Vec y0 = pipe.backward.mean_v(0);
    std::vector<std::string> header = {"J", "tau_hat", "case"};
    for (int a = 0; a < rc.spec.dims.m; ++a)
        header.push_back("Y0_" + std::to_string(a));
    CsvWriter csv(rc.out_dir + "/cost.csv", header);
    std::vector<std::string> row = {sig17(pipe.J), sig17(pipe.stop.tau_hat),
                                    case_name(pipe.stop.case_tag)};
    for (double v : y0)
        row.push_back(sig17(v));
    csv.row(row);
    std::printf("J = %.6f  tau_hat = %.6f  case = %s\n", pipe.J, pipe.stop.tau_hat,
                case_name(pipe.stop.case_tag).c_str());
    write_meta(rc, "cost",
               {{"J", pipe.J}, {"tau_hat", pipe.stop.tau_hat},
                {"case", case_name(pipe.stop.case_tag)}});
    return 0;
}

int cmd_adjoint(const RunConfig& rc) {
    Pipeline pipe =
        run_pipeline(rc.spec, rc.control, rc.paths, rc.seed, rc.basis_degree, rc.at_T_band_cells);
    const Dims& dims = rc.spec.dims;
    std::vector<std::string> header = {"t"};
    for (int a = 0; a < dims.n; ++a)
        header.push_back("p" + std::to_string(a));
    for (int a = 0; a < dims.n * dims.d; ++a)
        header.push_back("k" + std::to_string(a));
    for (int a = 0; a < dims.m; ++a)
        header.push_back("q" + std::to_string(a));
    CsvWriter csv(rc.out_dir + "/adjoint.csv", header);
    for (int i = 0; i <= pipe.tau.I; ++i) {
        std::vector<std::string> row = {sig17(rc.grid.node(i))};
        Vec pm(static_cast<size_t>(dims.n), 0.0), km(static_cast<size_t>(dims.n * dims.d), 0.0),
            qm(static_cast<size_t>(dims.m), 0.0);
        for (int p = 0; p < pipe.ensemble.M; ++p) {
            auto pv = pipe.adjoints.pk.v(p, i);
            auto kv = pipe.adjoints.pk.z(p, std::min(i, pipe.tau.I));
            auto qv = pipe.adjoints.q_node(p, i);
            for (size_t a = 0; a < pm.size(); ++a)
                pm[a] += pv[a];
            for (size_t a = 0; a < km.size(); ++a)
                km[a] += kv[a];
            for (size_t a = 0; a < qm.size(); ++a)
                qm[a] += qv[a];
        }
        for (double v : pm)
            row.push_back(sig17(v / pipe.ensemble.M));
        for (double v : km)
            row.push_back(sig17(v / pipe.ensemble.M));
        for (double v : qm)
            row.push_back(sig17(v / pipe.ensemble.M));
        csv.row(row);
    }
    write_meta(rc, "adjoint", {{"tau_hat", pipe.stop.tau_hat}, {"script_L", pipe.scriptL}});
    return 0;
}

int cmd_check_smp(const RunConfig& rc) {
    Pipeline pipe =
        run_pipeline(rc.spec, rc.control, rc.paths, rc.seed, rc.basis_degree, rc.at_T_band_cells);
    SMPReport rep = check_smp(pipe, rc.u_probes, rc.t_stride);
    CsvWriter csv(rc.out_dir + "/check-smp.csv", {"t", "u_probe", "margin", "branch"});
    for (const auto& e : rep.margins)
        csv.row({sig17(e.t), probe_label(rc.u_probes[static_cast<size_t>(e.probe)]),
                 sig17(e.margin), std::string(1, e.branch)});
    std::printf("case = %s  min_margin = %.6g at t = %.6f (probe %d, branch %c)\n",
                case_name(rep.case_tag).c_str(), rep.min_margin, rep.argmin_t, rep.argmin_probe,
                rep.argmin_branch);
    write_meta(rc, "check-smp",
               {{"case", case_name(rep.case_tag)},
                {"min_margin", rep.min_margin},
                {"argmin_t", rep.argmin_t},
                {"argmin_probe", rep.argmin_probe}});
    return 0;
}

int cmd_grad_check(const RunConfig& rc) {
    Pipeline pipe =
        run_pipeline(rc.spec, rc.control, rc.paths, rc.seed, rc.basis_degree, rc.at_T_band_cells);
    std::vector<Vec> grad = cost_gradient(pipe);
    const int kk = rc.spec.dims.k;

    CsvWriter csv(rc.out_dir + "/grad-check.csv",
                  {"direction", "inner_product", "fd_richardson", "rel_gap"});
    std::mt19937_64 rng(rc.seed ^ 0x5eedf00dULL);
    json dirs = json::array();
    double worst = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
        // random direction pointing into the box from the current control
        ControlPath v(rc.grid, kk, 0.0);
        for (int c = 0; c < rc.grid.N; ++c) {
            auto uc = rc.control.cell(c);
            auto vc = v.cell(c);
            for (int a = 0; a < kk; ++a) {
                double lo = rc.spec.U_lo[static_cast<size_t>(a)] - uc[static_cast<size_t>(a)];
                double hi = rc.spec.U_hi[static_cast<size_t>(a)] - uc[static_cast<size_t>(a)];
                vc[static_cast<size_t>(a)] =
                    std::uniform_real_distribution<>(lo, hi)(rng);
            }
        }
        double ip = 0.0;
        for (int c = 0; c < rc.grid.N; ++c)
            for (int a = 0; a < kk; ++a)
                ip += rc.grid.dt * grad[static_cast<size_t>(c)][static_cast<size_t>(a)] *
                      v.cell(c)[static_cast<size_t>(a)];
        double rho = 1e-3;
        Pipeline p1 = run_pipeline(rc.spec, perturb_control(rc.spec, rc.control, v, rho),
                                   rc.paths, rc.seed, rc.basis_degree, rc.at_T_band_cells);
        Pipeline p2 = run_pipeline(rc.spec, perturb_control(rc.spec, rc.control, v, rho / 2),
                                   rc.paths, rc.seed, rc.basis_degree, rc.at_T_band_cells);
        double d1 = (p1.J - pipe.J) / rho;
        double d2 = (p2.J - pipe.J) / (rho / 2);
        double fd = 2.0 * d2 - d1;
        double gap = std::abs(ip - fd) / std::max(1e-12, std::abs(fd));
        worst = std::max(worst, gap);
        csv.row({std::to_string(trial), sig17(ip), sig17(fd), sig17(gap)});
        dirs.push_back({{"inner_product", ip}, {"fd", fd}, {"rel_gap", gap}});
    }
    std::printf("gradient vs finite differences: worst relative gap %.3e\n", worst);
    write_meta(rc, "grad-check", {{"directions", dirs}, {"worst_rel_gap", worst}});
    return 0;
}

int cmd_rho_table(const RunConfig& rc) {
    Pipeline pipe =
        run_pipeline(rc.spec, rc.control, rc.paths, rc.seed, rc.basis_degree, rc.at_T_band_cells);
    std::vector<RhoRow> table = rho_convergence(pipe, rc.direction, rc.rho_list);
    CsvWriter csv(rc.out_dir + "/rho-table.csv", {"rho", "d_tau", "err_eta", "err_Y", "err_p"});
    for (const auto& r : table)
        csv.row({sig17(r.rho), sig17(r.d_tau), sig17(r.err_eta), sig17(r.err_Y),
                 sig17(r.err_p)});
    write_meta(rc, "rho-table", {{"rows", table.size()}});
    return 0;
}

int cmd_optimize(const RunConfig& rc) {
    OptimizerResult res =
        optimize(rc.spec, rc.control, rc.paths, rc.seed, rc.opt, rc.basis_degree);
    CsvWriter csv(rc.out_dir + "/optimize.csv", {"iter", "J", "tau_hat", "step", "grad_norm"});
    for (const auto& r : res.trace)
        csv.row({std::to_string(r.iter), sig17(r.J), sig17(r.tau_hat), sig17(r.step),
                 sig17(r.grad_norm)});
    std::printf("optimize: J = %.6f  tau_hat = %.6f  iters = %d  converged = %s\n", res.J,
                res.tau_hat, res.iters, res.converged ? "yes" : "no");
    json ctrl = json::array();
    for (int c = 0; c < rc.grid.N; ++c) {
        json cell = json::array();
        for (int a = 0; a < rc.spec.dims.k; ++a)
            cell.push_back(res.control.cell(c)[static_cast<size_t>(a)]);
        ctrl.push_back(cell);
    }
    write_meta(rc, "optimize",
               {{"J", res.J},
                {"tau_hat", res.tau_hat},
                {"iters", res.iters},
                {"converged", res.converged},
                {"control", ctrl}});
    return 0;
}

int cmd_example_verify(const RunConfig& rc) {
    // battery on the closed-form single-dimensional reference problem
    ProblemSpec spec = builtin("paper-example");
    int steps = rc.raw.contains("grid") ? rc.grid.N : 10000;
    TimeGrid grid(steps, spec.T);
    ControlPath u(grid, 1, 1.0);
    Pipeline pipe = run_pipeline(spec, u, 1, rc.seed, rc.basis_degree);

    struct Check {
        std::string name;
        double value, expected, tol;
        bool pass;
    };
    std::vector<Check> checks;
    auto add = [&](const std::string& name, double value, double expected, double tol) {
        checks.push_back({name, value, expected, tol, std::abs(value - expected) <= tol});
    };
    const double ln2 = std::log(2.0);

    add("tau_hat", pipe.stop.tau_hat, ln2, 1e-3);
    add("J", pipe.J, ln2, 1e-3);

    ProblemSpec classical = builtin("classical-example");
    ControlPath uc(TimeGrid(steps, classical.T), 1, 1.0);
    Pipeline cpipe = run_pipeline(classical, uc, 1, rc.seed, rc.basis_degree);
    add("J_classical", cpipe.J, 1.0, 1e-6);

    add("Y0", pipe.backward.mean_v(0)[0], -ln2, 1e-3);
    double ymax = 0.0;
    for (int i = 0; i <= pipe.tau.I; ++i) {
        double t = grid.node(i);
        ymax = std::max(ymax, std::abs(pipe.backward.v(0, i)[0] +
                                       std::exp(t) * (pipe.stop.tau_hat - t)));
    }
    add("max|Y - closed form|", ymax, 0.0, 1e-3);

    double adj = 0.0;
    for (int i = 0; i <= pipe.tau.I; ++i) {
        adj = std::max(adj, std::abs(pipe.adjoints.pk.v(0, i)[0]));
        adj = std::max(adj, std::abs(pipe.adjoints.pk.z(0, i)[0]));
        adj = std::max(adj, std::abs(pipe.adjoints.q_node(0, i)[0]));
    }
    add("max|p,k,q|", adj, 0.0, 1e-12);

    ControlPath v(grid, 1, 1.0);
    TauDerivative td = tau_derivative(spec, pipe.control, v, grid, 1, rc.seed);
    add("tau_derivative", td.value, 0.5, 0.01);
    add("gateaux", gateaux_cost(pipe, v), ln2 - 0.5, 0.01 * (ln2 - 0.5));

    SMPReport rep = check_smp(pipe, rc.u_probes, std::max(1, grid.N / 200));
    checks.push_back({"smp_min_margin", rep.min_margin, 0.0, 1e-6, rep.min_margin >= -1e-6});
    checks.push_back({"improvement J < J_classical", pipe.J, cpipe.J, 0.0, pipe.J < cpipe.J});

    CsvWriter csv(rc.out_dir + "/example-verify.csv",
                  {"check", "value", "expected", "tol", "pass"});
    bool all = true;
    for (const auto& c : checks) {
        csv.row({c.name, sig17(c.value), sig17(c.expected), sig17(c.tol),
                 c.pass ? "pass" : "FAIL"});
        std::printf("%-28s value=%-22.15g expected=%-12g %s\n", c.name.c_str(), c.value,
                    c.expected, c.pass ? "pass" : "FAIL");
        all = all && c.pass;
    }
    write_meta(rc, "example-verify", {{"all_pass", all}});
    if (!all)
        throw Error(ErrorCode::NonFiniteState, "example verification battery failed");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"varying-horizon recursive stochastic control toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    std::string out_override;

    const std::vector<std::string> names = {"simulate",  "stopping",   "cost",
                                            "adjoint",   "check-smp",  "grad-check",
                                            "rho-table", "optimize",   "example-verify"};
    for (const auto& name : names) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON run configuration file");
        sub->add_option("--set", sets, "override config entries as key.path=value");
        sub->add_option("--out", out_override, "output directory (overrides config)");
    }

    CLI11_PARSE(app, argc, argv);
    std::string sub = app.get_subcommands().front()->get_name();

    try {
        json cfg;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in)
                throw Error(ErrorCode::SchemaError, "cannot open config file: " + config_path);
            cfg = json::parse(in, nullptr, false);
            if (cfg.is_discarded())
                throw Error(ErrorCode::SchemaError, "config is not valid JSON: " + config_path);
        } else {
            cfg = {{"problem", "paper-example"}};
        }
        for (const auto& kv : sets)
            apply_set(cfg, kv);
        if (!out_override.empty())
            cfg["output"] = out_override;

        RunConfig rc = build_config(cfg);
        std::filesystem::create_directories(rc.out_dir);

        if (sub == "simulate")
            return cmd_simulate(rc);
        if (sub == "stopping")
            return cmd_stopping(rc);
        if (sub == "cost")
            return cmd_cost(rc);
        if (sub == "adjoint")
            return cmd_adjoint(rc);
        if (sub == "check-smp")
            return cmd_check_smp(rc);
        if (sub == "grad-check")
            return cmd_grad_check(rc);
        if (sub == "rho-table")
            return cmd_rho_table(rc);
        if (sub == "optimize")
            return cmd_optimize(rc);
        if (sub == "example-verify")
            return cmd_example_verify(rc);
        std::fprintf(stderr, "unknown subcommand: %s\n", sub.c_str());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "%s: %s\n", error_code_name(e.code()), e.what());
        return e.is_validation() ? 2 : 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
