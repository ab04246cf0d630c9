#include "mfg/longtime.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mfg/error.hpp"

namespace mfg {

const char* to_string(LambdaMethod method) {
    switch (method) {
        case LambdaMethod::cesaro: return "cesaro";
        case LambdaMethod::abel: return "abel";
        case LambdaMethod::stationary: return "stationary";
    }
    return "unknown";
}

const char* to_string(RecurrenceClass c) {
    switch (c) {
        case RecurrenceClass::stationary: return "stationary";
        case RecurrenceClass::periodic: return "periodic";
        case RecurrenceClass::wandering: return "wandering";
    }
    return "unknown";
}

const char* to_string(CouplingKind kind) {
    switch (kind) {
        case CouplingKind::convolution: return "convolution";
        case CouplingKind::sec2: return "sec2";
    }
    return "unknown";
}

namespace {

// Round-off floor added to every uncertainty.
double round_off(double v) { return 1e-9 * std::max(1.0, std::abs(v)); }

GridDensity node_density(const FlowPath& path, int k) {
    auto m = path.density(k);
    std::vector<double> w(m.begin(), m.end());
    for (double& x : w) x = std::max(x, 0.0);
    return GridDensity::normalized(path.grid, std::move(w));
}

FlowPath sub_path(const FlowPath& full, int k0, int k1, double t0) {
    const int len = k1 - k0;
    const double dt = full.time.dt();
    FlowPath out(full.grid, TimeGrid(t0, t0 + dt * len, len), full.sigma);
    const std::size_t n = full.cells();
    std::copy(full.m.begin() + k0 * n, full.m.begin() + (k1 + 1) * n, out.m.begin());
    std::copy(full.right.begin() + k0 * n, full.right.begin() + k1 * n, out.right.begin());
    std::copy(full.left.begin() + k0 * n, full.left.begin() + k1 * n, out.left.begin());
    std::copy(full.flux.begin() + k0 * n, full.flux.begin() + k1 * n, out.flux.begin());
    return out;
}

// Cost of intervals [0, k) without discount.
double segment_cost(const FlowPath& path, const QuadraticHamiltonian& H,
                    const CouplingFunctional& F, int k) {
    const EnergyReport e = energy_finite(path, H, F);
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += e.rate[j] * path.time.dt();
    return s;
}

}  // namespace

LambdaEstimate lambda_from_finite(const GridDensity& m0, std::span<const double> horizons,
                                  const QuadraticHamiltonian& H, const CouplingFunctional& F,
                                  double sigma, const SolverOptions& opts) {
    if (horizons.size() < 2)
        throw Error(ErrorCode::invalid_argument, "lambda_from_finite: need at least two horizons");
    for (std::size_t i = 0; i < horizons.size(); ++i) {
        if (!(horizons[i] > 0) || (i > 0 && !(horizons[i] > horizons[i - 1])))
            throw Error(ErrorCode::invalid_argument,
                        "lambda_from_finite: horizons must be positive and increasing");
    }
    LambdaEstimate est;
    est.method = LambdaMethod::cesaro;
    std::vector<double> gaps;
    for (double T : horizons) {
        const MfgSolution sol = solve_finite_horizon(m0, T, H, F, sigma, opts);
        est.table.emplace_back(T, -sol.energy / T);
        est.energies.push_back(sol.energy);
        gaps.push_back(std::max(sol.gap, 0.0));
        est.converged = est.converged && sol.converged;
    }
    const std::size_t n = horizons.size();
    auto slope = [&](std::size_t i) {
        return -(est.energies[i + 1] - est.energies[i]) / (horizons[i + 1] - horizons[i]);
    };
    est.value = slope(n - 2);
    double u = n >= 3 ? std::abs(est.value - slope(n - 3))
                      : std::abs(est.value - est.table.back().second);
    u += (gaps[n - 1] + gaps[n - 2]) / (horizons[n - 1] - horizons[n - 2]);
    est.uncertainty = u + round_off(est.value);
    return est;
}

LambdaEstimate lambda_from_discounted(const GridDensity& m0, std::span<const double> deltas,
                                      const QuadraticHamiltonian& H, const CouplingFunctional& F,
                                      double sigma, const SolverOptions& opts) {
    if (deltas.size() < 2)
        throw Error(ErrorCode::invalid_argument, "lambda_from_discounted: need at least two deltas");
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        if (!(deltas[i] > 0) || (i > 0 && !(deltas[i] < deltas[i - 1])))
            throw Error(ErrorCode::invalid_argument,
                        "lambda_from_discounted: deltas must be positive and decreasing");
    }
    LambdaEstimate est;
    est.method = LambdaMethod::abel;
    std::vector<double> gaps;
    for (double d : deltas) {
        const MfgSolution sol = solve_discounted(m0, d, H, F, sigma, opts);
        est.table.emplace_back(d, -d * sol.energy);
        est.energies.push_back(sol.energy);
        gaps.push_back(d * std::max(sol.gap, 0.0));
        est.converged = est.converged && sol.converged;
    }
    const std::size_t n = deltas.size();
    auto richardson = [&](std::size_t i) {
        const double d1 = deltas[i], d2 = deltas[i + 1];
        const double l1 = est.table[i].second, l2 = est.table[i + 1].second;
        const double c = (l1 - l2) / (d1 - d2);
        return l2 - c * d2;
    };
    est.value = richardson(n - 2);
    double u = n >= 3 ? std::abs(est.value - richardson(n - 3))
                      : std::abs(est.value - est.table.back().second);
    // Extrapolation amplifies the solver error of each entry.
    const double d1 = deltas[n - 2], d2 = deltas[n - 1];
    u += (gaps[n - 2] * d2 + gaps[n - 1] * d1) / (d1 - d2);
    est.uncertainty = u + round_off(est.value);
    return est;
}

LambdaEstimate lambda_from_stationary(const StationarySolution& st) {
    LambdaEstimate est;
    est.method = LambdaMethod::stationary;
    est.value = st.lambda_bar;
    for (const auto& m : st.minima) {
        est.table.emplace_back(m.distance_to_uniform, -m.energy);
        est.energies.push_back(m.energy);
    }
    if (est.table.empty()) est.table.emplace_back(0.0, st.lambda_bar);
    est.uncertainty = round_off(st.lambda_bar);
    est.converged = st.failed_starts == 0;
    return est;
}

CorrectorEstimate corrector_estimate(double delta, const GridDensity& eta,
                                     std::span<const GridDensity> sample,
                                     const QuadraticHamiltonian& H, const CouplingFunctional& F,
                                     double sigma, const SolverOptions& opts, double t) {
    if (!(delta > 0)) throw Error(ErrorCode::invalid_argument, "corrector_estimate: delta must be > 0");
    if (!(t > 0)) throw Error(ErrorCode::invalid_argument, "corrector_estimate: t must be > 0");
    const MfgSolution ref = solve_discounted(eta, delta, H, F, sigma, opts);
    CorrectorEstimate out{delta, t, eta, ref.energy, -delta * ref.energy, {}, {}};
    for (const GridDensity& m : sample) {
        require_same_grid(m.grid(), eta.grid(), "corrector_estimate");
        const MfgSolution sol = solve_discounted(m, delta, H, F, sigma, opts);
        const TimeGrid& tg = sol.flow.time;
        const int kt = static_cast<int>(std::lround(t / tg.dt()));
        if (kt < 1 || kt > tg.k())
            throw Error(ErrorCode::invalid_argument, "corrector_estimate: t outside the horizon");
        const double cost = segment_cost(sol.flow, H, F, kt);
        const MfgSolution later = solve_discounted(node_density(sol.flow, kt), delta, H, F, sigma, opts);
        const double chi = sol.energy - ref.energy;
        const double chi_t = later.energy - ref.energy;
        const double res = chi - (cost + chi_t + out.lambda_hat * tg.time(kt));
        out.samples.push_back({m, sol.energy, chi, chi_t, cost, res});
        out.dpp_residuals.push_back(res);
    }
    return out;
}

CalibratedWindow calibrated_window(const GridDensity& m0, double T_big,
                                   const QuadraticHamiltonian& H, const CouplingFunctional& F,
                                   double sigma, const SolverOptions& opts) {
    if (!(T_big > 0)) throw Error(ErrorCode::invalid_argument, "calibrated_window: T_big must be > 0");
    MfgSolution sol = solve_finite_horizon(m0, 2.0 * T_big, H, F, sigma, opts);
    const FlowPath& full = sol.flow;
    const int K = full.steps();
    const double dt = full.time.dt();
    const int k0 = static_cast<int>(std::lround(0.25 * K));
    const int k1 = static_cast<int>(std::lround(0.75 * K));
    if (k1 - k0 < 1) throw Error(ErrorCode::invalid_argument, "calibrated_window: window too short");

    CalibratedWindow out{sub_path(full, k0, k1, -0.5 * dt * (k1 - k0)), full, {}};
    out.energy = sol.energy;
    out.converged = sol.converged;
    out.rate = energy_finite(full, H, F).rate;

    double mean = 0.0;
    for (int k = k0; k < k1; ++k) mean += out.rate[k];
    mean /= (k1 - k0);
    out.mean_rate = mean;

    // Unit-time moving average, ma[k] over intervals [k, k + w).
    const int w = std::clamp(static_cast<int>(std::lround(1.0 / dt)), 1, K);
    std::vector<double> ma(K - w + 1, 0.0);
    double run = 0.0;
    for (int k = 0; k < w; ++k) run += out.rate[k];
    ma[0] = run / w;
    for (int k = 1; k + w <= K; ++k) {
        run += out.rate[k + w - 1] - out.rate[k - 1];
        ma[k] = run / w;
    }
    const double tol = std::max(0.05 * std::abs(mean), 1e-4);
    const int last = static_cast<int>(ma.size()) - 1;
    const int lo = std::min(k0, last), hi = std::clamp(k1 - w, lo, last);
    for (int k = lo; k <= hi; ++k) out.rate_spread = std::max(out.rate_spread, std::abs(ma[k] - mean));
    int start = lo;
    while (start > 0 && std::abs(ma[start - 1] - mean) <= tol) --start;
    int end = hi;
    while (end < last && std::abs(ma[end + 1] - mean) <= tol) ++end;
    out.boundary_layer_start = dt * start;
    out.boundary_layer_end = dt * (K - (end + w));
    return out;
}

RecurrenceReport recurrence_analysis(const FlowPath& path, const RecurrenceThresholds& th) {
    require_dim1(path.grid, "recurrence_analysis");
    const int K = path.steps();
    const double dt = path.time.dt();
    const double h = path.grid.h();
    int stride;
    if (th.dt_sample > 0) {
        stride = std::max(1, static_cast<int>(std::lround(th.dt_sample / dt)));
    } else {
        stride = std::max(1, static_cast<int>(std::lround(h / dt)));
        const int cap = std::max(th.max_samples, 20);
        while (K / stride + 1 > cap) ++stride;
    }
    const int S = K / stride + 1;
    if (S < 20)
        throw Error(ErrorCode::invalid_argument,
                    "recurrence_analysis: fewer than 20 samples (" + std::to_string(S) + ")");

    RecurrenceReport rep;
    rep.window = path;
    rep.dt_sample = stride * dt;
    rep.eps_stationary = th.stationary > 0 ? th.stationary : 2.0 * (h + rep.dt_sample);
    rep.eps_periodic = th.periodic > 0 ? th.periodic : 2.0 * (h + rep.dt_sample);

    std::vector<GridDensity> dens;
    dens.reserve(S);
    for (int i = 0; i < S; ++i) {
        dens.push_back(node_density(path, i * stride));
        rep.times.push_back(path.time.time(i * stride));
    }
    rep.matrix.assign(static_cast<std::size_t>(S) * S, 0.0);
    rep.lag_profile.assign(S, 0.0);
    for (int i = 0; i < S; ++i) {
        for (int j = i + 1; j < S; ++j) {
            const double d = wasserstein1_circle(dens[i], dens[j]);
            rep.matrix[static_cast<std::size_t>(i) * S + j] = d;
            rep.matrix[static_cast<std::size_t>(j) * S + i] = d;
            rep.max_offdiagonal = std::max(rep.max_offdiagonal, d);
            rep.lag_profile[j - i] = std::max(rep.lag_profile[j - i], d);
        }
    }
    std::vector<double> avg(path.cells(), 0.0);
    for (const auto& d : dens)
        for (std::size_t c = 0; c < avg.size(); ++c) avg[c] += d[c] / S;
    const GridDensity mean = GridDensity::normalized(path.grid, avg);
    for (const auto& d : dens)
        rep.distance_to_mean = std::max(rep.distance_to_mean, wasserstein1_circle(d, mean));

    const auto& r = rep.lag_profile;
    const double eps = rep.eps_periodic;
    bool left = false;
    for (int L = 1; L + 1 < S; ++L) {
        if (r[L] > eps) left = true;
        if (left && r[L] <= eps && r[L] <= r[L - 1] && r[L] <= r[L + 1])
            rep.period_candidates.push_back(L * rep.dt_sample);
    }

    if (rep.max_offdiagonal <= rep.eps_stationary) {
        rep.classification = RecurrenceClass::stationary;
        return rep;
    }
    rep.classification = RecurrenceClass::wandering;
    const int half = (S - 1) / 2;
    left = false;
    for (int L = 1; L <= half; ++L) {
        if (r[L] > eps) {
            left = true;
            continue;
        }
        if (!left) continue;
        int best = L;
        for (int j = L + 1; j < S && r[j] <= eps; ++j)
            if (r[j] < r[best]) best = j;
        rep.classification = RecurrenceClass::periodic;
        rep.period = best * rep.dt_sample;
        break;
    }
    return rep;
}

double fisher_information_grid(const GridDensity& m0, int refine) {
    require_dim1(m0.grid(), "fisher_information_grid");
    if (refine < 1) throw Error(ErrorCode::invalid_argument, "fisher_information_grid: refine < 1");
    const int n = m0.grid().n();
    const double pi2 = 2.0 * std::numbers::pi;
    const int kmax = n / 2;
    std::vector<double> a(kmax + 1, 0.0), b(kmax + 1, 0.0);
    for (int k = 0; k <= kmax; ++k) {
        for (int i = 0; i < n; ++i) {
            const double x = static_cast<double>(i) / n;
            a[k] += m0[i] * std::cos(pi2 * k * x);
            b[k] += m0[i] * std::sin(pi2 * k * x);
        }
        const double scale = (k == 0 || 2 * k == n) ? 1.0 / n : 2.0 / n;
        a[k] *= scale;
        b[k] *= scale;
    }
    if (n % 2 == 0) b[kmax] = 0.0;
    const int points = n * refine;
    double sum = 0.0;
    for (int j = 0; j < points; ++j) {
        const double x = (j + 0.5) / points;
        double m = a[0], dm = 0.0;
        for (int k = 1; k <= kmax; ++k) {
            const double c = std::cos(pi2 * k * x), s = std::sin(pi2 * k * x);
            m += a[k] * c + b[k] * s;
            dm += pi2 * k * (b[k] * c - a[k] * s);
        }
        if (!(m > 0))
            throw Error(ErrorCode::invalid_argument,
                        "fisher_information_grid: interpolant is not positive");
        sum += dm * dm / m;
    }
    return 0.5 * sum / points;
}

GapReport gap_experiment(const GridDensity& m0, const QuadraticHamiltonian& H,
                         const CouplingFunctional& F, double sigma, CouplingKind kind,
                         const GapOptions& opts) {
    require_dim1(m0.grid(), "gap_experiment");
    const TorusGrid& grid = m0.grid();
    GapReport rep;
    rep.coupling = to_string(kind);
    rep.sigma = sigma;

    StationaryOptions sopts = opts.stationary;
    if (kind == CouplingKind::sec2 && sopts.starts.empty()) {
        for (int q = 0; q < 4; ++q) sopts.starts.push_back(shift(m0, q * grid.n() / 4));
    }
    const StationarySolution st = solve_stationary(grid, H, F, sigma, sopts);
    rep.lambda_bar = st.lambda_bar;
    rep.k_hat = -st.lambda_bar;
    rep.stationary_minima = st.minima;

    // Holding the best stationary density is always an admissible competitor.
    SolverOptions sol = opts.solver;
    sol.warm_drifts.push_back(stationary_drift(st.density, st.flux_constant, sigma));
    rep.cesaro = lambda_from_finite(m0, opts.horizons, H, F, sigma, sol);
    rep.abel = lambda_from_discounted(m0, opts.deltas, H, F, sigma, sol);
    rep.lambda_hat = rep.cesaro.value;
    rep.combined_uncertainty = rep.cesaro.uncertainty + rep.abel.uncertainty;
    rep.fisher = fisher_information_grid(m0);

    const double dt = solver_time_grid(grid, 1.0, opts.solver).dt();
    const double disc = grid.h() * grid.h() + dt;
    if (kind == CouplingKind::sec2) {
        const int kw = std::max(1, static_cast<int>(std::lround(1.0 / dt)));
        const FlowPath wave = traveling_wave_path(m0, H.b0(), sigma, TimeGrid(0.0, 1.0, kw));
        rep.wave_rate = energy_finite(wave, H, F).total;
        for (double r : fp_residuals(wave)) rep.wave_residual = std::max(rep.wave_residual, r);
        for (int k = 0; k <= wave.steps(); ++k)
            rep.wave_coupling_sup = std::max(rep.wave_coupling_sup, F.value(wave.density(k)));
    }
    if (opts.run_window) {
        rep.window = calibrated_window(m0, opts.window_T, H, F, sigma, opts.solver);
        rep.recurrence = recurrence_analysis(rep.window->window, opts.recurrence);
    }

    auto check = [&](std::string name, bool ok, double lhs, double rhs, std::string detail) {
        rep.checks.push_back({std::move(name), ok, lhs, rhs, std::move(detail)});
        rep.passed = rep.passed && ok;
    };
    const double lam = rep.lambda_hat, bar = rep.lambda_bar, unc = rep.combined_uncertainty;
    check("ordering", lam >= bar - unc, lam, bar - unc, "lambda_hat >= lambda_bar - uncertainty");
    const double dtau = std::abs(rep.cesaro.value - rep.abel.value);
    const double ttol = opts.tol_tauberian * std::max(std::abs(lam), 0.01);
    check("tauberian", dtau <= ttol, dtau, ttol, "|cesaro - abel| <= tol * max(|lambda|, 0.01)");
    if (kind == CouplingKind::convolution) {
        const double diff = std::abs(lam - bar);
        const double etol = opts.tol_equality * std::max(std::abs(bar), 0.01);
        check("monotone_equality", diff <= etol, diff, etol, "|lambda_hat - lambda_bar|");
        if (rep.recurrence)
            check("window_stationary",
                  rep.recurrence->classification == RecurrenceClass::stationary,
                  rep.recurrence->max_offdiagonal, rep.recurrence->eps_stationary,
                  std::string("classification ") + to_string(rep.recurrence->classification));
    } else {
        const double s2i = sigma * sigma * rep.fisher;
        check("wave_residual", rep.wave_residual <= disc, rep.wave_residual, disc,
              "max FP residual of the traveling wave <= h^2 + dt");
        check("wave_energy", std::abs(rep.wave_rate - s2i) <= disc, rep.wave_rate, s2i,
              "wave energy per unit time vs sigma^2 I");
        check("wave_in_B", rep.wave_coupling_sup <= 1e-12, rep.wave_coupling_sup, 1e-12,
              "sup F along the wave");
        check("upper_bound", -lam <= s2i + opts.tol_upper, -lam, s2i + opts.tol_upper,
              "-lambda_hat <= sigma^2 I + tol");
        check("margin", rep.k_hat >= opts.margin * s2i, rep.k_hat, opts.margin * s2i,
              "-lambda_bar >= margin * sigma^2 I (multistart estimate)");
        check("gap", lam - bar > unc, lam - bar, unc, "lambda_hat - lambda_bar > uncertainty");
        if (rep.recurrence)
            check("window_non_stationary",
                  rep.recurrence->classification != RecurrenceClass::stationary,
                  rep.recurrence->max_offdiagonal, rep.recurrence->eps_stationary,
                  std::string("classification ") + to_string(rep.recurrence->classification) +
                      ", distance to time average " +
                      std::to_string(rep.recurrence->distance_to_mean));
    }
    return rep;
}

}  // namespace mfg
