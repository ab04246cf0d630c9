#include "runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "mfg/dynamics.hpp"
#include "mfg/error.hpp"
#include "mfg/longtime.hpp"
#include "mfg/solvers.hpp"

#ifndef MFG_CODE_VERSION
#define MFG_CODE_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace mfg::cli {

namespace {

double max_of(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, x);
    return m;
}

class Csv {
public:
    Csv(const fs::path& path, int precision, const std::string& header) : out_(path) {
        if (!out_) throw Error(ErrorCode::config, "cannot write " + path.string());
        out_ << std::setprecision(precision) << header << '\n';
    }
    template <class... Ts>
    void row(const Ts&... vs) {
        bool first = true;
        ((out_ << (first ? "" : ",") << vs, first = false), ...);
        out_ << '\n';
    }
    std::ostream& raw() { return out_; }

private:
    std::ofstream out_;
};

struct Context {
    Context(const ExperimentConfig& c, fs::path d) : cfg(c), dir(std::move(d)) {}

    const ExperimentConfig& cfg;
    fs::path dir;
    json stages = json::object();
    std::vector<Certificate> certs;
    std::vector<std::string> outputs;
    std::vector<std::string> report;

    fs::path file(const std::string& name) {
        outputs.push_back(name);
        return dir / name;
    }
    void certify(const std::string& name, bool ok, double lhs, double rhs, const std::string& detail) {
        certs.push_back({name, ok, lhs, rhs, detail});
    }
    void line(const std::string& s) { report.push_back(s); }
};

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v + 0.0;
    return os.str();
}

void write_flow(Context& ctx, const std::string& name, const FlowPath& f) {
    Csv csv(ctx.file(name), ctx.cfg.precision, "k,t,i,x,m,momentum,flux");
    const std::size_t n = f.cells();
    const int K = f.steps();
    for (int k = 0; k <= K; ++k) {
        if (k % ctx.cfg.flow_stride != 0 && k != K) continue;
        auto m = f.density(k);
        for (std::size_t i = 0; i < n; ++i) {
            if (k < K) {
                csv.row(k, f.time.time(k), i, f.grid.coordinate(i), m[i],
                        f.right_at(k)[i] - f.left_at(k)[i], f.flux_at(k)[i]);
            } else {
                csv.row(k, f.time.time(k), i, f.grid.coordinate(i), m[i], "", "");
            }
        }
    }
}

void write_value(Context& ctx, const ValuePath& v) {
    Csv csv(ctx.file("value.csv"), ctx.cfg.precision, "k,t,i,x,u");
    const std::size_t n = v.grid.cells();
    const int K = v.time.k();
    for (int k = 0; k <= K; ++k) {
        if (k % ctx.cfg.flow_stride != 0 && k != K) continue;
        auto u = v.value(k);
        for (std::size_t i = 0; i < n; ++i) csv.row(k, v.time.time(k), i, v.grid.coordinate(i), u[i]);
    }
}

void write_descent(Context& ctx, const std::string& name, const MfgSolution& s) {
    Csv csv(ctx.file(name), ctx.cfg.precision, "iteration,belief_energy,best_response_energy,gap");
    const std::size_t rows =
        std::max({s.descent_log.size(), s.best_response_log.size(), s.gap_log.size()});
    for (std::size_t r = 0; r < rows; ++r) {
        auto& o = csv.raw();
        o << r << ',';
        if (r < s.descent_log.size()) o << s.descent_log[r];
        o << ',';
        if (r < s.best_response_log.size()) o << s.best_response_log[r];
        o << ',';
        if (r < s.gap_log.size()) o << s.gap_log[r];
        o << '\n';
    }
}

void write_lambda(Context& ctx, const std::string& name, const char* param, const LambdaEstimate& e) {
    Csv csv(ctx.file(name), ctx.cfg.precision, std::string(param) + ",lambda,energy");
    for (std::size_t i = 0; i < e.table.size(); ++i)
        csv.row(e.table[i].first, e.table[i].second, e.energies[i]);
}

void write_minima(Context& ctx, const std::vector<StationaryMinimum>& minima) {
    Csv csv(ctx.file("minima.csv"), ctx.cfg.precision,
            "index,energy,kinetic,transport,coupling,distance_to_uniform,flux_constant,gradient_norm,hits");
    for (std::size_t i = 0; i < minima.size(); ++i) {
        const auto& m = minima[i];
        csv.row(i, m.energy, m.kinetic, m.transport, m.coupling, m.distance_to_uniform,
                m.flux_constant, m.gradient_norm, m.hits);
    }
}

void write_recurrence(Context& ctx, const RecurrenceReport& r) {
    const int S = static_cast<int>(r.times.size());
    const int step = std::max(1, (S + 199) / 200);
    Csv csv(ctx.file("recurrence.csv"), ctx.cfg.precision, "i,j,t_i,t_j,d1");
    for (int i = 0; i < S; i += step)
        for (int j = 0; j < S; j += step)
            csv.row(i, j, r.times[i], r.times[j], r.matrix[static_cast<std::size_t>(i) * S + j]);
    Csv lag(ctx.file("lag.csv"), ctx.cfg.precision, "lag,time,max_d1");
    for (int L = 0; L < S; ++L) lag.row(L, L * r.dt_sample, r.lag_profile[L]);
}

void write_rate(Context& ctx, const CalibratedWindow& w) {
    Csv csv(ctx.file("rate.csv"), ctx.cfg.precision, "k,t,rate");
    for (std::size_t k = 0; k < w.rate.size(); ++k)
        csv.row(k, w.full.time.time(static_cast<int>(k)), w.rate[k]);
}

json solution_stage(const MfgSolution& s) {
    return {{"energy", s.energy},
            {"kinetic", s.kinetic},
            {"coupling", s.coupling},
            {"iterations", s.iterations},
            {"converged", s.converged},
            {"gap", s.gap},
            {"fixed_point_gap", s.fixed_point_gap},
            {"cap_active", s.cap_active},
            {"restarts", s.restarts},
            {"fp_residual_max", max_of(fp_residuals(s.flow))},
            {"du_sup_max", max_of(s.value.du_sup)}};
}

json lambda_stage(const LambdaEstimate& e) {
    json t = json::array();
    for (const auto& [p, v] : e.table) t.push_back({p, v});
    return {{"value", e.value},
            {"uncertainty", e.uncertainty},
            {"method", to_string(e.method)},
            {"converged", e.converged},
            {"table", t}};
}

json recurrence_stage(const RecurrenceReport& r) {
    json j = {{"classification", to_string(r.classification)},
              {"eps_stationary", r.eps_stationary},
              {"eps_periodic", r.eps_periodic},
              {"dt_sample", r.dt_sample},
              {"samples", r.times.size()},
              {"max_offdiagonal", r.max_offdiagonal},
              {"distance_to_mean", r.distance_to_mean},
              {"period_candidates", r.period_candidates}};
    j["period"] = r.period ? json(*r.period) : json(nullptr);
    return j;
}

json window_stage(const CalibratedWindow& w) {
    return {{"energy", w.energy},
            {"converged", w.converged},
            {"mean_rate", w.mean_rate},
            {"rate_spread", w.rate_spread},
            {"boundary_layer_start", w.boundary_layer_start},
            {"boundary_layer_end", w.boundary_layer_end},
            {"fp_residual_max", max_of(fp_residuals(w.full))}};
}

void certify_ordering(Context& ctx, double lam, double bar, double unc) {
    ctx.certify("ordering", lam >= bar - unc, lam, bar - unc, "lambda_hat >= lambda_bar - uncertainty");
}

void certify_solution(Context& ctx, const MfgSolution& s) {
    const double res = max_of(fp_residuals(s.flow));
    ctx.certify("fp_residual", res <= 1e-8, res, 1e-8, "max Fokker-Planck residual");
    ctx.certify("solver_converged", s.converged, s.gap, ctx.cfg.solver.tol,
                "linearization gap and fixed-point gap within tolerance");
}

void run_finite(Context& ctx, const Model& md) {
    const auto& c = ctx.cfg;
    const MfgSolution s = solve_finite_horizon(md.m0, c.T, md.H, *md.F, md.sigma, c.solver);
    ctx.stages["finite"] = solution_stage(s);
    write_flow(ctx, "flow.csv", s.flow);
    write_value(ctx, s.value);
    write_descent(ctx, "descent.csv", s);
    ctx.line("U(T) = " + num(s.energy) + "  (T = " + num(c.T) + ")");
    ctx.line("kinetic = " + num(s.kinetic) + ", coupling = " + num(s.coupling));
    ctx.line("-U(T)/T = " + num(-s.energy / c.T));
    certify_solution(ctx, s);
}

void run_discounted(Context& ctx, const Model& md) {
    const auto& c = ctx.cfg;
    const MfgSolution s = solve_discounted(md.m0, c.delta, md.H, *md.F, md.sigma, c.solver);
    json st = solution_stage(s);
    st["truncated"] = s.truncated;
    st["tail_lower"] = s.tail_lower;
    st["tail_upper"] = s.tail_upper;
    st["tail_estimate"] = s.tail_estimate;
    ctx.stages["discounted"] = st;
    write_flow(ctx, "flow.csv", s.flow);
    write_value(ctx, s.value);
    write_descent(ctx, "descent.csv", s);
    ctx.line("V_delta = " + num(s.energy) + "  (delta = " + num(c.delta) + ")");
    ctx.line("tail in [" + num(s.tail_lower) + ", " + num(s.tail_upper) + "], estimate " +
             num(s.tail_estimate));
    ctx.line("-delta V_delta = " + num(-c.delta * s.energy));
    certify_solution(ctx, s);
    const bool in = s.tail_lower <= s.tail_estimate && s.tail_estimate <= s.tail_upper;
    ctx.certify("tail_bracket", in, s.tail_estimate, s.tail_upper, "tail estimate inside its bracket");
}

StationarySolution run_stationary_stage(Context& ctx, const Model& md) {
    StationarySolution st = solve_stationary(md.grid, md.H, *md.F, md.sigma, ctx.cfg.stationary);
    ctx.stages["stationary"] = {{"lambda_bar", st.lambda_bar},
                                {"energy", st.energy},
                                {"flux_constant", st.flux_constant},
                                {"gradient_norm", st.energy_gradient_norm},
                                {"failed_starts", st.failed_starts},
                                {"minima", st.minima.size()}};
    write_minima(ctx, st.minima);
    ctx.line("lambda_bar = " + num(st.lambda_bar) + " (multistart estimate, " +
             std::to_string(st.minima.size()) + " distinct minima)");
    return st;
}

void run_stationary(Context& ctx, const Model& md) {
    const StationarySolution st = run_stationary_stage(ctx, md);
    Csv csv(ctx.file("stationary.csv"), ctx.cfg.precision, "i,x,m");
    for (std::size_t i = 0; i < st.density.size(); ++i)
        csv.row(i, md.grid.coordinate(i), st.density[i]);
    ctx.certify("stationary_gradient", st.energy_gradient_norm <= 1e-6, st.energy_gradient_norm, 1e-6,
                "gradient norm at the best minimum");
}

SolverOptions with_stationary_start(SolverOptions o, const StationarySolution& st, double sigma) {
    o.warm_drifts.push_back(stationary_drift(st.density, st.flux_constant, sigma));
    return o;
}

void run_tauberian(Context& ctx, const Model& md) {
    const auto& c = ctx.cfg;
    const StationarySolution st = run_stationary_stage(ctx, md);
    const SolverOptions so = with_stationary_start(c.solver, st, md.sigma);
    const LambdaEstimate ce = lambda_from_finite(md.m0, c.T_list, md.H, *md.F, md.sigma, so);
    const LambdaEstimate ab = lambda_from_discounted(md.m0, c.delta_list, md.H, *md.F, md.sigma, so);
    ctx.stages["cesaro"] = lambda_stage(ce);
    ctx.stages["abel"] = lambda_stage(ab);
    write_lambda(ctx, "lambda_T.csv", "T", ce);
    write_lambda(ctx, "lambda_delta.csv", "delta", ab);
    ctx.line("lambda_cesaro = " + num(ce.value) + " +- " + num(ce.uncertainty));
    ctx.line("lambda_abel = " + num(ab.value) + " +- " + num(ab.uncertainty));
    const double diff = std::abs(ce.value - ab.value);
    const double tol = c.tol_tauberian * std::max(std::abs(ce.value), 0.01);
    ctx.certify("tauberian", diff <= tol, diff, tol, "|cesaro - abel| <= tol * max(|lambda|, 0.01)");
    certify_ordering(ctx, ce.value, st.lambda_bar, ce.uncertainty + ab.uncertainty);
    ctx.stages["tauberian_uncertainty_sum"] = {{"difference", diff},
                                               {"uncertainty_sum", ce.uncertainty + ab.uncertainty}};
}

void run_gap(Context& ctx, const Model& md) {
    const auto& c = ctx.cfg;
    GapOptions g;
    g.horizons = c.T_list;
    g.deltas = c.delta_list;
    g.solver = c.solver;
    g.stationary = c.stationary;
    g.window_T = c.window_T;
    g.tol_equality = c.tol_equality;
    g.tol_tauberian = c.tol_tauberian;
    g.tol_upper = c.tol_upper;
    g.margin = c.margin;
    const CouplingKind kind = c.coupling.kind == "sec2" ? CouplingKind::sec2 : CouplingKind::convolution;
    const GapReport r = gap_experiment(md.m0, md.H, *md.F, md.sigma, kind, g);
    ctx.stages["cesaro"] = lambda_stage(r.cesaro);
    ctx.stages["abel"] = lambda_stage(r.abel);
    ctx.stages["gap"] = {{"lambda_hat", r.lambda_hat},
                         {"lambda_bar", r.lambda_bar},
                         {"k_hat", r.k_hat},
                         {"combined_uncertainty", r.combined_uncertainty},
                         {"fisher", r.fisher},
                         {"sigma2_fisher", md.sigma * md.sigma * r.fisher},
                         {"wave_rate", r.wave_rate},
                         {"wave_residual", r.wave_residual},
                         {"wave_coupling_sup", r.wave_coupling_sup}};
    write_lambda(ctx, "lambda_T.csv", "T", r.cesaro);
    write_lambda(ctx, "lambda_delta.csv", "delta", r.abel);
    write_minima(ctx, r.stationary_minima);
    if (r.window) {
        ctx.stages["window"] = window_stage(*r.window);
        write_flow(ctx, "window_flow.csv", r.window->window);
        write_rate(ctx, *r.window);
    }
    if (r.recurrence) {
        ctx.stages["recurrence"] = recurrence_stage(*r.recurrence);
        write_recurrence(ctx, *r.recurrence);
    }
    ctx.line("coupling " + r.coupling + ", sigma = " + num(r.sigma));
    ctx.line("lambda_hat = " + num(r.lambda_hat) + " +- " + num(r.combined_uncertainty));
    ctx.line("lambda_abel = " + num(r.abel.value));
    ctx.line("lambda_bar = " + num(r.lambda_bar) + " (multistart estimate, not a bound)");
    if (kind == CouplingKind::sec2) {
        ctx.line("sigma^2 I = " + num(md.sigma * md.sigma * r.fisher) + ", wave rate = " + num(r.wave_rate));
        ctx.line("transport/coupling trade-off of the stationary minima in minima.csv");
    }
    for (const auto& ch : r.checks) ctx.certify(ch.name, ch.passed, ch.lhs, ch.rhs, ch.detail);
}

void run_mather(Context& ctx, const Model& md) {
    const auto& c = ctx.cfg;
    const CalibratedWindow w = calibrated_window(md.m0, c.window_T, md.H, *md.F, md.sigma, c.solver);
    const RecurrenceReport r = recurrence_analysis(w.window);
    const StationarySolution st = run_stationary_stage(ctx, md);
    const LambdaEstimate ce = lambda_from_finite(md.m0, c.T_list, md.H, *md.F, md.sigma,
                                                 with_stationary_start(c.solver, st, md.sigma));
    ctx.stages["window"] = window_stage(w);
    ctx.stages["recurrence"] = recurrence_stage(r);
    ctx.stages["cesaro"] = lambda_stage(ce);
    write_flow(ctx, "window_flow.csv", w.window);
    write_rate(ctx, w);
    write_recurrence(ctx, r);
    write_lambda(ctx, "lambda_T.csv", "T", ce);
    ctx.line("window rate = " + num(w.mean_rate) + ", -lambda_hat = " + num(-ce.value));
    ctx.line(std::string("window classification: ") + to_string(r.classification));
    if (r.period) ctx.line("period = " + num(*r.period));
    const double diff = std::abs(w.mean_rate + ce.value);
    const double tol = std::max(ce.uncertainty, c.tol_tauberian * std::max(std::abs(ce.value), 0.01));
    ctx.certify("window_rate", diff <= tol, diff, tol, "|window energy rate + lambda_hat|");
    certify_ordering(ctx, ce.value, st.lambda_bar, ce.uncertainty);
    if (c.expect_window == "stationary")
        ctx.certify("window_stationary", r.classification == RecurrenceClass::stationary,
                    r.max_offdiagonal, r.eps_stationary, to_string(r.classification));
    if (c.expect_window == "non_stationary")
        ctx.certify("window_non_stationary", r.classification != RecurrenceClass::stationary,
                    r.max_offdiagonal, r.eps_stationary, to_string(r.classification));
}

void run_connect(Context& ctx, const Model& md) {
    const auto& c = ctx.cfg;
    const GridDensity m1 = make_density(md.grid, c.target);
    const double dt0 = c.solver.dt > 0 ? c.solver.dt : cfl_time_step(md.grid, c.solver.drift_cap);
    const int ktau = std::max(1, static_cast<int>(std::ceil(c.tau / dt0 - 1e-9)));
    const double dt = c.tau / ktau;
    const int K = std::max(ktau + 1, static_cast<int>(std::lround(c.T / dt)));
    const TimeGrid tg(0.0, K * dt, K);
    Controls base(md.grid, tg);
    const double rc = rate_cap(md.grid, dt, c.solver.drift_cap);
    std::fill(base.right.begin(), base.right.end(), std::min(std::max(c.b, 0.0), rc));
    std::fill(base.left.begin(), base.left.end(), std::min(std::max(-c.b, 0.0), rc));
    const double h_len = tg.time(K - ktau);
    const FlowPath path = connect_measures(md.m0, m1, base, h_len, c.tau, md.sigma);
    double l1 = 0.0;
    auto end = path.density(path.steps());
    for (std::size_t i = 0; i < m1.size(); ++i) l1 += md.grid.h() * std::abs(end[i] - m1[i]);
    const double res = max_of(fp_residuals(path));
    write_flow(ctx, "connect_flow.csv", path);
    ctx.stages["connect"] = {{"terminal_l1", l1}, {"fp_residual_max", res}, {"T", tg.t1()}};
    ctx.certify("connect_terminal", l1 <= 1e-8, l1, 1e-8, "L1 distance of m(T) to the target");
    ctx.certify("connect_residual", res <= 1e-8, res, 1e-8, "max Fokker-Planck residual");

    const MfgSolution fixed = solve_fixed_endpoint(md.m0, m1, c.T, md.H, *md.F, md.sigma, c.solver);
    const MfgSolution free = solve_finite_horizon(md.m0, c.T, md.H, *md.F, md.sigma, c.solver);
    json fs = solution_stage(fixed);
    fs["terminal_mismatch"] = fixed.terminal_mismatch;
    fs["penalty"] = fixed.penalty;
    fs["repaired"] = fixed.repaired;
    ctx.stages["fixed_endpoint"] = fs;
    ctx.stages["free_endpoint"] = solution_stage(free);
    write_flow(ctx, "fixed_flow.csv", fixed.flow);
    write_descent(ctx, "descent.csv", fixed);
    const double lf = -fixed.energy / c.T, lw = -free.energy / c.T;
    ctx.line("lambda fixed = " + num(lf) + ", free = " + num(lw));
    const double diff = std::abs(lf - lw), tol = c.tol_fixed * std::max(std::abs(lw), 0.01);
    ctx.certify("fixed_vs_free", diff <= tol, diff, tol, "|lambda_fixed - lambda_free|");
    ctx.certify("fixed_restriction", fixed.energy >= free.energy - 1e-8, fixed.energy, free.energy,
                "fixed-endpoint value >= free value");
    const double fres = max_of(fp_residuals(fixed.flow));
    ctx.certify("fixed_residual", fres <= 1e-8, fres, 1e-8, "max Fokker-Planck residual");
}

void write_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw Error(ErrorCode::config, "cannot write " + tmp.string());
        out << text;
    }
    fs::rename(tmp, path);
}

}  // namespace

std::string resolve_output_directory(const ExperimentConfig& cfg, const std::string& config_path,
                                     const std::string& override_dir) {
    fs::path dir = !override_dir.empty() ? fs::path(override_dir)
                   : !cfg.directory.empty()
                       ? fs::path(cfg.directory)
                       : fs::path("runs") / fs::path(config_path).stem();
    if (dir.is_relative()) {
        if (const char* root = std::getenv("MFG_OUTPUT_ROOT"); root && *root) dir = fs::path(root) / dir;
    }
    return dir.string();
}

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& directory) {
    RunResult result;
    result.directory = directory;
    fs::create_directories(directory);
    Context ctx(cfg, fs::path(directory));
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const Model md = build_model(cfg);
        const auto& k = cfg.experiment;
        if (k == "finite") run_finite(ctx, md);
        else if (k == "discounted") run_discounted(ctx, md);
        else if (k == "stationary") run_stationary(ctx, md);
        else if (k == "tauberian") run_tauberian(ctx, md);
        else if (k == "gap") run_gap(ctx, md);
        else if (k == "mather") run_mather(ctx, md);
        else run_connect(ctx, md);
    } catch (const Error& e) {
        result.error = std::string(to_string(e.code())) + ": " + e.what();
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    bool ok = result.error.empty();
    for (const auto& c : ctx.certs) ok = ok && c.passed;
    result.status = ok ? kExitOk : kExitCertificate;
    result.certificates = ctx.certs;

    json certs = json::array();
    for (const auto& c : ctx.certs)
        certs.push_back({{"name", c.name}, {"passed", c.passed}, {"lhs", c.lhs}, {"rhs", c.rhs},
                         {"detail", c.detail}});
    json manifest = {{"experiment", cfg.experiment},
                     {"config", cfg.raw},
                     {"code_version", MFG_CODE_VERSION},
                     {"master_seed", cfg.solver.seed},
                     {"wall_clock_seconds", wall},
                     {"stages", ctx.stages},
                     {"certificates", certs},
                     {"outputs", ctx.outputs},
                     {"status", result.status}};
    if (!result.error.empty()) manifest["error"] = result.error;

    std::ostringstream rep;
    rep << "experiment: " << cfg.experiment << '\n';
    for (const auto& l : ctx.report) rep << l << '\n';
    if (!result.error.empty()) rep << "ERROR " << result.error << '\n';
    for (const auto& c : ctx.certs)
        rep << (c.passed ? "PASS " : "FAIL ") << c.name << "  lhs=" << num(c.lhs)
            << " rhs=" << num(c.rhs) << "  " << c.detail << '\n';
    rep << "status: " << (result.status == kExitOk ? "PASSED" : "FAILED") << '\n';
    write_atomic(ctx.dir / "report.txt", rep.str());
    write_atomic(ctx.dir / "manifest.json", manifest.dump(2) + "\n");
    return result;
}

namespace {

bool parse_and_validate(const RawConfig& raw, ExperimentConfig& cfg, std::ostream& err) {
    ParseResult p = parse_config(raw);
    for (const auto& e : p.errors) err << "config error: " << e << '\n';
    if (!p.errors.empty()) return false;
    const ValidationReport v = validate_config(p.config);
    for (const auto& e : v.errors) err << "config error: " << e << '\n';
    if (!v.ok()) return false;
    cfg = std::move(p.config);
    return true;
}

}  // namespace

int command_run(const std::string& config_path, const std::string& output, std::ostream& out,
                std::ostream& err) {
    ExperimentConfig cfg;
    try {
        if (!parse_and_validate(read_raw_config(config_path), cfg, err)) return kExitConfig;
    } catch (const Error& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    }
    const std::string dir = resolve_output_directory(cfg, config_path, output);
    const RunResult r = run_experiment(cfg, dir);
    std::ifstream rep(fs::path(dir) / "report.txt");
    out << rep.rdbuf();
    out << "run directory: " << dir << '\n';
    if (!r.error.empty()) err << "error: " << r.error << '\n';
    return r.status;
}

int command_validate(const std::string& config_path, std::ostream& out, std::ostream& err) {
    ParseResult p;
    try {
        p = load_config(config_path);
    } catch (const Error& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    }
    std::vector<std::string> errors = p.errors;
    ValidationReport v;
    if (errors.empty()) {
        v = validate_config(p.config);
        errors = v.errors;
    }
    for (const auto& e : errors) out << "error: " << e << '\n';
    for (const auto& [k, val] : v.derived) out << "derived: " << k << " = " << val << '\n';
    out << (errors.empty() ? "valid" : "invalid") << '\n';
    return errors.empty() ? kExitOk : kExitConfig;
}

int command_sweep(const std::string& config_path, const std::string& output, std::ostream& out,
                  std::ostream& err) {
    ExperimentConfig base;
    std::vector<ExperimentConfig> points;
    try {
        ParseResult p = load_config(config_path);
        for (const auto& e : p.errors) err << "config error: " << e << '\n';
        if (!p.errors.empty()) return kExitConfig;
        base = p.config;
        if (base.sweep.empty()) {
            err << "config error: sweep: no sweep.* keys\n";
            return kExitConfig;
        }
        const bool seed_swept = base.sweep.count("solver.seed") > 0;
        const auto raws = sweep_points(base);
        for (std::size_t i = 0; i < raws.size(); ++i) {
            ExperimentConfig cfg;
            std::ostringstream perr;
            if (!parse_and_validate(raws[i], cfg, perr)) {
                err << "point " << i << ":\n" << perr.str();
                return kExitConfig;
            }
            if (!seed_swept) cfg.solver.seed = derive_seed(base.solver.seed, i);
            points.push_back(std::move(cfg));
        }
    } catch (const Error& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    }
    const fs::path dir = resolve_output_directory(base, config_path, output);
    fs::create_directories(dir);
    int status = kExitOk;
    json index = json::array();
    for (std::size_t i = 0; i < points.size(); ++i) {
        std::ostringstream name;
        name << "point_" << std::setw(3) << std::setfill('0') << i;
        const RunResult r = run_experiment(points[i], (dir / name.str()).string());
        json overrides = json::object();
        for (const auto& [key, _] : base.sweep) overrides[key] = points[i].raw.at(key);
        index.push_back({{"point", name.str()},
                         {"overrides", overrides},
                         {"seed", points[i].solver.seed},
                         {"status", r.status}});
        out << name.str() << ' ' << (r.status == kExitOk ? "PASSED" : "FAILED") << '\n';
        status = std::max(status, r.status);
    }
    write_atomic(dir / "sweep.json", index.dump(2) + "\n");
    out << "sweep directory: " << dir.string() << '\n';
    return status;
}

}  // namespace mfg::cli
