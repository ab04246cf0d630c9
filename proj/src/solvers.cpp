#include "mfg/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>

#include "mfg/error.hpp"

namespace mfg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kChargedCell = 1e-8;

void require(bool ok, const std::string& message) {
    if (!ok) throw Error(ErrorCode::invalid_argument, message);
}

std::span<const double> slice(const std::vector<double>& v, std::size_t n, int k) {
    return std::span<const double>(v).subspan(static_cast<std::size_t>(k) * n, n);
}

std::span<double> slice(std::vector<double>& v, std::size_t n, int k) {
    return std::span<double>(v).subspan(static_cast<std::size_t>(k) * n, n);
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

struct Problem {
    const GridDensity& m0;
    TimeGrid tg;
    const QuadraticHamiltonian& H;
    const CouplingFunctional& F;
    double sigma;
    double delta;
    double cap;
    const GridDensity* target = nullptr;
    double mu = 0.0;
};

double terminal_distance(const Problem& pb, const FlowPath& path) {
    if (pb.target == nullptr) return 0.0;
    return wasserstein1_circle(path.density_at(path.steps()), *pb.target);
}

// sum_k gamma^k dt [kinetic(m^k) + F(m^{k+1})] + gamma^K mu d1(m^K, target)^2
double objective(const Problem& pb, const FlowPath& path) {
    const double dt = pb.tg.dt();
    const double gamma = std::exp(-pb.delta * dt);
    double total = 0.0;
    double weight = 1.0;
    for (int k = 0; k < path.steps(); ++k) {
        const double kin = kinetic_cost(path.grid, path.density(k), path.right_at(k),
                                        path.left_at(k), pb.H.b0());
        if (!std::isfinite(kin)) return kInf;
        total += weight * dt * (kin + pb.F.value(path.density(k + 1)));
        weight *= gamma;
    }
    if (pb.target != nullptr) {
        const double d = terminal_distance(pb, path);
        total += weight * pb.mu * d * d;
    }
    return total;
}

double drift_gap(const FlowPath& belief, const Controls& c) {
    const std::size_t n = belief.cells();
    double gap = 0.0;
    for (int k = 0; k < belief.steps(); ++k) {
        auto m = belief.density(k);
        auto P = belief.right_at(k);
        auto N = belief.left_at(k);
        auto p = slice(c.right, n, k);
        auto q = slice(c.left, n, k);
        for (std::size_t i = 0; i < n; ++i) {
            if (m[i] < kChargedCell) continue;
            gap = std::max(gap, std::abs((P[i] - N[i]) / m[i] - (p[i] - q[i])));
        }
    }
    return gap;
}

struct FwOutcome {
    FwOutcome(FlowPath b, ValuePath v) : best(std::move(b)), value(std::move(v)) {}

    FlowPath best;
    ValuePath value;
    double energy = kInf;
    std::vector<double> descent;
    std::vector<double> responses;
    std::vector<double> gaps;
    bool converged = false;
    double gap = kInf;
    double fixed_point_gap = kInf;
    int iterations = 0;
};

// Fictitious play on the potential game: best response by dynamic programming
// against the belief's flat derivatives, then averaging of flows.
FwOutcome fictitious_play(const Problem& pb, FlowPath belief, const SolverOptions& opts) {
    const TorusGrid& grid = pb.m0.grid();
    const std::size_t n = grid.cells();
    const int K = pb.tg.k();
    const double dt = pb.tg.dt();
    const double gamma = std::exp(-pb.delta * dt);
    std::vector<double> f(n * static_cast<std::size_t>(K));
    std::vector<double> terminal(n, 0.0);

    double energy = objective(pb, belief);
    FwOutcome out(belief, ValuePath(grid, pb.tg, pb.delta));
    out.energy = energy;
    for (int it = 0; it < opts.max_iter; ++it) {
        for (int k = 0; k < K; ++k) pb.F.derivative(belief.density(k + 1), slice(f, n, k));
        if (pb.target != nullptr) {
            auto kant = kantorovich_circle(belief.density_at(K), *pb.target);
            for (std::size_t i = 0; i < n; ++i)
                terminal[i] = 2.0 * pb.mu * kant.distance * kant.potential[i];
        }
        ValuePath v = hjb_backward(grid, terminal, f, pb.H, pb.sigma, pb.delta, pb.tg, pb.cap);
        FlowPath br = fp_forward(pb.m0, v.controls, pb.sigma);

        // Linearized energy of the belief minus its exact minimum <m0, u^0>.
        double lin = 0.0;
        double weight = 1.0;
        for (int k = 0; k < K; ++k) {
            const double kin = kinetic_cost(grid, belief.density(k), belief.right_at(k),
                                            belief.left_at(k), pb.H.b0());
            lin += weight * dt * (kin + inner(grid, slice(f, n, k), belief.density(k + 1)));
            weight *= gamma;
        }
        lin += weight * inner(grid, terminal, belief.density(K));
        const double gap = std::max(0.0, lin - inner(grid, pb.m0.values(), v.value(0)));
        const double fp_gap = drift_gap(belief, v.controls);
        const double br_energy = objective(pb, br);

        out.descent.push_back(energy);
        out.responses.push_back(br_energy);
        out.gaps.push_back(gap);
        out.iterations = it + 1;
        out.gap = gap;
        out.fixed_point_gap = fp_gap;
        if (energy <= out.energy) {
            out.energy = energy;
            out.best = belief;
        }
        if (br_energy < out.energy) {
            out.energy = br_energy;
            out.best = br;
        }
        out.value = std::move(v);
        if (gap <= opts.tol * std::max(1.0, std::abs(energy)) && fp_gap <= opts.fixed_point_tol) {
            out.converged = true;
            break;
        }

        double rho = 0.0;
        double next = energy;
        if (opts.averaging == Averaging::uniform) {
            rho = 1.0 / (it + 2.0);
            FlowPath cand = belief;
            cand.mix(br, rho);
            next = objective(pb, cand);
            belief = std::move(cand);
            energy = next;
            continue;
        }
        // Quadratic model phi(r) = E - gap*r + A r^2 with Armijo backtracking.
        double A = br_energy - energy + gap;
        rho = (A > 0.0 && std::isfinite(A)) ? std::min(1.0, gap / (2.0 * A)) : 1.0;
        bool accepted = false;
        for (int tries = 0; tries < 30 && rho > 1e-14; ++tries) {
            if (rho == 1.0) {
                next = br_energy;
            } else {
                FlowPath cand = belief;
                cand.mix(br, rho);
                next = objective(pb, cand);
                if (next <= energy - 1e-4 * rho * gap) {
                    belief = std::move(cand);
                    accepted = true;
                    break;
                }
            }
            if (rho == 1.0 && next <= energy - 1e-4 * gap) {
                belief = br;
                accepted = true;
                break;
            }
            const double A2 = (next - energy + gap * rho) / (rho * rho);
            const double model = (A2 > 0.0 && std::isfinite(A2)) ? gap / (2.0 * A2) : 0.5 * rho;
            rho = std::clamp(model, 0.1 * rho, 0.5 * rho);
        }
        if (!accepted) break;
        energy = next;
    }
    return out;
}

// Drifts alpha (K*n) to the rates of fp_forward.
Controls drift_controls(const TorusGrid& grid, const TimeGrid& tg, std::span<const double> alpha) {
    Controls c(grid, tg);
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        c.right[i] = alpha[i] < 0.0 ? -alpha[i] : 0.0;
        c.left[i] = alpha[i] > 0.0 ? alpha[i] : 0.0;
    }
    return c;
}

struct DirectEval {
    double energy = kInf;
    std::vector<double> grad;
    std::optional<FlowPath> path;
};

// Energy of the flow driven by alpha and its exact gradient by the adjoint of
// fp_forward (policy evaluation: the HJB step with the controls frozen).
DirectEval direct_eval(const Problem& pb, std::span<const double> alpha, const ImplicitDiffusion& S) {
    const TorusGrid& grid = pb.m0.grid();
    const std::size_t n = grid.cells();
    const int K = pb.tg.k();
    const double dt = pb.tg.dt();
    const double h = grid.h();
    const double b = pb.H.b0();
    const double gamma = std::exp(-pb.delta * dt);
    DirectEval ev;
    ev.path.emplace(fp_forward(pb.m0, drift_controls(grid, pb.tg, alpha), pb.sigma));
    const FlowPath& path = *ev.path;
    ev.energy = objective(pb, path);
    ev.grad.assign(alpha.size(), 0.0);
    std::vector<double> a(n, 0.0), rhs(n), r(n), f(n);
    if (pb.target != nullptr) {
        auto kant = kantorovich_circle(path.density_at(K), *pb.target);
        for (std::size_t i = 0; i < n; ++i) a[i] = 2.0 * pb.mu * kant.distance * kant.potential[i];
    }
    double weight = std::pow(gamma, K - 1);
    for (int k = K - 1; k >= 0; --k) {
        pb.F.derivative(path.density(k + 1), f);
        for (std::size_t i = 0; i < n; ++i) rhs[i] = gamma * a[i] + dt * f[i];
        S.apply(rhs, r);
        auto m = path.density(k);
        auto al = alpha.subspan(static_cast<std::size_t>(k) * n, n);
        auto g = std::span<double>(ev.grad).subspan(static_cast<std::size_t>(k) * n, n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ip = i + 1 == n ? 0 : i + 1;
            const std::size_t im = i == 0 ? n - 1 : i - 1;
            const double dplus = (r[ip] - r[i]) / h;
            const double dminus = (r[im] - r[i]) / h;
            const double p = al[i] < 0.0 ? -al[i] : 0.0;
            const double q = al[i] > 0.0 ? al[i] : 0.0;
            g[i] = weight * h * m[i] * dt * ((al[i] + b) + (al[i] <= 0.0 ? -dplus : dminus));
            a[i] = dt * 0.5 * (al[i] + b) * (al[i] + b) + r[i] + dt * (p * dplus + q * dminus);
        }
        weight /= gamma;
    }
    return ev;
}

struct RefineResult {
    FlowPath path;
    double energy;
    std::vector<double> log;
};

// Projected quasi-Newton descent on the per-step drifts, |alpha| <= rate cap.
RefineResult refine_controls(const Problem& pb, const FlowPath& start, int iters, int memory) {
    const TorusGrid& grid = pb.m0.grid();
    const std::size_t n = grid.cells();
    const int K = pb.tg.k();
    const double hi = rate_cap(grid, pb.tg.dt(), pb.cap);
    const ImplicitDiffusion S(grid, pb.sigma, pb.tg.dt());
    std::vector<double> x(static_cast<std::size_t>(K) * n);
    for (int k = 0; k < K; ++k) {
        auto m = start.density(k);
        for (std::size_t i = 0; i < n; ++i) {
            const double v = m[i] > 0.0 ? (start.left_at(k)[i] - start.right_at(k)[i]) / m[i] : 0.0;
            x[k * n + i] = std::clamp(v, -hi, hi);
        }
    }
    DirectEval ev = direct_eval(pb, x, S);
    RefineResult out{*ev.path, ev.energy, {}};
    const std::size_t dim = x.size();
    // Diagonal initial inverse Hessian undoing the discount weight of each step.
    std::vector<double> w(dim);
    for (int k = 0; k < K; ++k)
        std::fill_n(w.begin() + k * n, n, std::exp(pb.delta * (pb.tg.time(k) - pb.tg.t0())));
    std::deque<std::pair<std::vector<double>, std::vector<double>>> mem;
    auto free_grad = [&](const std::vector<double>& g) {
        std::vector<double> pg(g);
        for (std::size_t i = 0; i < dim; ++i) {
            if ((x[i] <= -hi && g[i] > 0.0) || (x[i] >= hi && g[i] < 0.0)) pg[i] = 0.0;
        }
        return pg;
    };
    int stalls = 0;
    for (int it = 0; it < iters; ++it) {
        auto pg = free_grad(ev.grad);
        double gmax = 0.0;
        for (double v : pg) gmax = std::max(gmax, std::abs(v));
        if (gmax == 0.0) break;
        std::vector<double> d(pg);
        std::vector<double> alphas(mem.size());
        for (std::size_t j = mem.size(); j-- > 0;) {
            const auto& [s, y] = mem[j];
            alphas[j] = dot(s, d) / dot(y, s);
            for (std::size_t i = 0; i < dim; ++i) d[i] -= alphas[j] * y[i];
        }
        double scale = 1.0;
        if (!mem.empty()) {
            const auto& [s, y] = mem.back();
            double wyy = 0.0;
            for (std::size_t i = 0; i < dim; ++i) wyy += w[i] * y[i] * y[i];
            scale = dot(s, y) / wyy;
        }
        for (std::size_t i = 0; i < dim; ++i) d[i] *= scale * w[i];
        for (std::size_t j = 0; j < mem.size(); ++j) {
            const auto& [s, y] = mem[j];
            const double beta = dot(y, d) / dot(y, s);
            for (std::size_t i = 0; i < dim; ++i) d[i] += s[i] * (alphas[j] - beta);
        }
        for (std::size_t i = 0; i < dim; ++i) d[i] = pg[i] == 0.0 ? 0.0 : -d[i];
        if (!(dot(d, pg) < 0.0)) {
            mem.clear();
            for (std::size_t i = 0; i < dim; ++i) d[i] = -w[i] * pg[i];
        }
        double dmax = 0.0;
        for (double v : d) dmax = std::max(dmax, std::abs(v));
        double step = mem.empty() ? 0.05 / dmax : 1.0;
        bool ok = false;
        std::vector<double> xn(dim);
        DirectEval en;
        for (int ls = 0; ls < 40; ++ls) {
            for (std::size_t i = 0; i < dim; ++i) xn[i] = std::clamp(x[i] + step * d[i], -hi, hi);
            en = direct_eval(pb, xn, S);
            double pred = 0.0;
            for (std::size_t i = 0; i < dim; ++i) pred += ev.grad[i] * (xn[i] - x[i]);
            if (std::isfinite(en.energy) && en.energy <= ev.energy + 1e-4 * pred) {
                ok = true;
                break;
            }
            step *= 0.5;
        }
        if (!ok) {
            if (mem.empty()) break;
            mem.clear();
            continue;
        }
        std::vector<double> s(dim), y(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            s[i] = xn[i] - x[i];
            y[i] = en.grad[i] - ev.grad[i];
        }
        const double decrease = ev.energy - en.energy;
        x.swap(xn);
        ev = std::move(en);
        out.log.push_back(ev.energy);
        if (dot(s, y) > 1e-16 * std::sqrt(dot(s, s) * dot(y, y))) {
            mem.emplace_back(std::move(s), std::move(y));
            if (static_cast<int>(mem.size()) > memory) mem.pop_front();
        }
        stalls = decrease <= 1e-12 * std::max(1.0, std::abs(ev.energy)) ? stalls + 1 : 0;
        if (stalls >= 10) break;
    }
    out.path = *ev.path;
    out.energy = ev.energy;
    return out;
}

Controls random_controls(const TorusGrid& grid, const TimeGrid& tg, double b, double cap,
                         std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t n = grid.cells();
    const double amp = 0.5 * std::min(cap, 1.0 + std::abs(b));
    double ca[3], sa[3];
    for (int j = 0; j < 3; ++j) {
        ca[j] = normal(rng) / (j + 1);
        sa[j] = normal(rng) / (j + 1);
    }
    std::vector<double> alpha(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = grid.coordinate(i);
        double v = 0.0;
        for (int j = 0; j < 3; ++j) {
            v += ca[j] * std::cos(2.0 * std::numbers::pi * (j + 1) * x) +
                 sa[j] * std::sin(2.0 * std::numbers::pi * (j + 1) * x);
        }
        alpha[i] = std::clamp(-b + amp * v / 3.0, -cap, cap);
    }
    Controls c(grid, tg);
    for (int k = 0; k < tg.k(); ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            c.right[k * n + i] = std::max(-alpha[i], 0.0);
            c.left[k * n + i] = std::max(alpha[i], 0.0);
        }
    }
    return c;
}

// Best response to the constant belief m0.
FlowPath static_response(const Problem& pb) {
    const std::size_t n = pb.m0.grid().cells();
    const int K = pb.tg.k();
    std::vector<double> f(n * static_cast<std::size_t>(K));
    pb.F.derivative(pb.m0.values(), slice(f, n, 0));
    for (int k = 1; k < K; ++k) std::copy_n(f.begin(), n, f.begin() + k * n);
    std::vector<double> terminal(n, 0.0);
    ValuePath v = hjb_backward(pb.m0.grid(), terminal, f, pb.H, pb.sigma, pb.delta, pb.tg, pb.cap);
    return fp_forward(pb.m0, v.controls, pb.sigma);
}

MfgSolution run_restarts(const Problem& pb, const SolverOptions& opts) {
    require(opts.restarts >= 0 && opts.max_iter >= 1, "solver needs max_iter >= 1, restarts >= 0");
    std::vector<double> energies;
    std::optional<FwOutcome> best;
    const double rcap = rate_cap(pb.m0.grid(), pb.tg.dt(), pb.cap);
    auto improve = [&](FwOutcome& o) {
        if (!o.converged && opts.refine_iter > 0) {
            auto ref = refine_controls(pb, o.best, opts.refine_iter, 10);
            if (ref.energy < o.energy) {
                SolverOptions polish = opts;
                polish.max_iter = std::max(1, opts.polish_iter);
                FwOutcome p = fictitious_play(pb, std::move(ref.path), polish);
                o.descent.insert(o.descent.end(), ref.log.begin(), ref.log.end());
                o.descent.insert(o.descent.end(), p.descent.begin(), p.descent.end());
                o.responses.insert(o.responses.end(), p.responses.begin(), p.responses.end());
                o.gaps.insert(o.gaps.end(), p.gaps.begin(), p.gaps.end());
                o.iterations += static_cast<int>(ref.log.size()) + p.iterations;
                o.best = std::move(p.best);
                o.value = std::move(p.value);
                o.energy = p.energy;
                o.converged = p.converged;
                o.gap = p.gap;
                o.fixed_point_gap = p.fixed_point_gap;
            }
        }
    };
    for (int r = 0; r <= opts.restarts; ++r) {
        FlowPath init = r == 0 ? static_response(pb)
                               : fp_forward(pb.m0,
                                            random_controls(pb.m0.grid(), pb.tg, pb.H.b0(), rcap,
                                                            derive_seed(opts.seed, r)),
                                            pb.sigma);
        FwOutcome o = fictitious_play(pb, std::move(init), opts);
        improve(o);
        energies.push_back(o.energy);
        if (!best || o.energy < best->energy) best.emplace(std::move(o));
    }
    for (const auto& drift : opts.warm_drifts) {
        require(drift.size() == pb.m0.grid().cells(), "warm drift needs one value per cell");
        std::vector<double> alpha(drift.size() * static_cast<std::size_t>(pb.tg.k()));
        for (std::size_t j = 0; j < alpha.size(); ++j)
            alpha[j] = std::clamp(drift[j % drift.size()], -rcap, rcap);
        FwOutcome o = fictitious_play(
            pb, fp_forward(pb.m0, drift_controls(pb.m0.grid(), pb.tg, alpha), pb.sigma), opts);
        improve(o);
        energies.push_back(o.energy);
        if (!best || o.energy < best->energy) best.emplace(std::move(o));
    }
    MfgSolution sol(std::move(best->best), std::move(best->value));
    sol.energy = best->energy;
    sol.iterations = best->iterations;
    sol.descent_log = std::move(best->descent);
    sol.best_response_log = std::move(best->responses);
    sol.gap_log = std::move(best->gaps);
    sol.converged = best->converged;
    sol.gap = best->gap;
    sol.fixed_point_gap = best->fixed_point_gap;
    sol.restarts = opts.restarts;
    sol.restart_energies = std::move(energies);
    sol.cap_active = sol.value.cap_active;
    return sol;
}

void fill_finite(MfgSolution& sol, const QuadraticHamiltonian& H, const CouplingFunctional& F) {
    auto rep = energy_finite(sol.flow, H, F);
    sol.kinetic = rep.kinetic;
    sol.coupling = rep.coupling;
    sol.energy = rep.total;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

ControlGradient control_energy_gradient(const GridDensity& m0, std::span<const double> alpha,
                                        const QuadraticHamiltonian& H,
                                        const CouplingFunctional& F, double sigma, double delta,
                                        const TimeGrid& tg) {
    require_same_grid(m0.grid(), F.grid(), "control_energy_gradient");
    require(alpha.size() == m0.size() * static_cast<std::size_t>(tg.k()),
            "control_energy_gradient needs one drift per cell and step");
    Problem pb{m0, tg, H, F, sigma, delta, kDriftCap};
    const ImplicitDiffusion S(m0.grid(), sigma, tg.dt());
    auto ev = direct_eval(pb, alpha, S);
    return {ev.energy, std::move(ev.grad)};
}

TimeGrid solver_time_grid(const TorusGrid& grid, double T, const SolverOptions& opts) {
    require(T > 0.0 && std::isfinite(T), "horizon must be positive");
    require(opts.drift_cap > 0.0, "drift cap must be positive");
    const double dt = opts.dt > 0.0 ? opts.dt : cfl_time_step(grid, opts.drift_cap);
    return TimeGrid::with_max_step(0.0, T, dt * (1.0 + 1e-12));
}

MfgSolution solve_finite_horizon(const GridDensity& m0, double T, const QuadraticHamiltonian& H,
                                 const CouplingFunctional& F, double sigma,
                                 const SolverOptions& opts) {
    require_same_grid(m0.grid(), F.grid(), "solve_finite_horizon");
    Problem pb{m0, solver_time_grid(m0.grid(), T, opts), H, F, sigma, 0.0, opts.drift_cap};
    MfgSolution sol = run_restarts(pb, opts);
    fill_finite(sol, H, F);
    return sol;
}

MfgSolution solve_discounted(const GridDensity& m0, double delta, const QuadraticHamiltonian& H,
                             const CouplingFunctional& F, double sigma,
                             const SolverOptions& opts) {
    require(delta > 0.0, "solve_discounted needs delta > 0");
    require_same_grid(m0.grid(), F.grid(), "solve_discounted");
    Problem pb{m0, solver_time_grid(m0.grid(), discounted_horizon(delta), opts), H, F, sigma,
               delta, opts.drift_cap};
    MfgSolution sol = run_restarts(pb, opts);
    auto rep = energy_discounted(sol.flow, H, F, delta);
    sol.truncated = rep.truncated;
    sol.tail_lower = rep.tail_lower;
    sol.tail_upper = rep.tail_upper;
    sol.tail_estimate = rep.tail_estimate;
    sol.energy = rep.value;
    auto fin = energy_finite(sol.flow, H, F);
    sol.kinetic = fin.kinetic;
    sol.coupling = fin.coupling;
    return sol;
}

// ---------------------------------------------------------------------------
// Stationary problem.

namespace {

struct StationaryEval {
    double energy;
    double kinetic;
    double coupling;
    std::vector<double> grad;  // n entries for theta, one for c
};

std::vector<double> softmax_density(std::span<const double> theta, double h) {
    const double top = *std::max_element(theta.begin(), theta.end());
    std::vector<double> m(theta.size());
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = std::exp(theta[i] - top);
        s += m[i];
    }
    for (double& v : m) v /= s * h;
    return m;
}

// Kinetic cost of the constant path holding m under the relaxed upwind scheme:
// face momenta w_f = sigma D+m + c, carried unsplit (P_i = w+ on the right
// face, N_i = w- on the left face).
double upwind_kinetic(std::span<const double> m, double c, double b, double sigma, double h,
                      std::vector<double>* gm, double* gc) {
    const std::size_t n = m.size();
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = sigma * (m[i + 1 == n ? 0 : i + 1] - m[i]) / h + c;
    std::vector<double> dw(gm != nullptr ? n : 0, 0.0);
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double P = w[i] > 0.0 ? w[i] : 0.0;
        const double wl = w[i == 0 ? n - 1 : i - 1];
        const double N = wl < 0.0 ? -wl : 0.0;
        const double r = b * m[i] - P;
        const double l = b * m[i] + N;
        e += (r * r + l * l) / (2.0 * m[i]) - 0.5 * b * b * m[i];
        if (gm != nullptr) {
            (*gm)[i] += h * ((r + l) * b / m[i] - (r * r + l * l) / (2.0 * m[i] * m[i]) - 0.5 * b * b);
            if (w[i] > 0.0) dw[i] += -r / m[i];
            if (wl < 0.0) dw[i == 0 ? n - 1 : i - 1] += -l / m[i];
        }
    }
    if (gm != nullptr) {
        for (std::size_t f = 0; f < n; ++f) {
            const std::size_t j = f + 1 == n ? 0 : f + 1;
            (*gm)[f] -= h * dw[f] * sigma / h;
            (*gm)[j] += h * dw[f] * sigma / h;
            *gc += h * dw[f];
        }
    }
    return h * e;
}

StationaryEval stationary_eval(std::span<const double> x, const TorusGrid& grid, double b,
                               double sigma, const CouplingFunctional& F) {
    const std::size_t n = grid.cells();
    const double h = grid.h();
    auto m = softmax_density(x.first(n), h);
    StationaryEval ev;
    std::vector<double> gm(n, 0.0);
    double gc = 0.0;
    ev.kinetic = upwind_kinetic(m, x[n], b, sigma, h, &gm, &gc);
    ev.coupling = F.value(m);
    ev.energy = ev.kinetic + ev.coupling;
    std::vector<double> df(n);
    F.derivative(m, df);
    for (std::size_t i = 0; i < n; ++i) gm[i] += h * df[i];
    double avg = 0.0;
    for (std::size_t i = 0; i < n; ++i) avg += h * gm[i] * m[i];
    ev.grad.resize(n + 1);
    for (std::size_t i = 0; i < n; ++i) ev.grad[i] = m[i] * (gm[i] - avg);
    ev.grad[n] = gc;
    return ev;
}

double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

struct LbfgsResult {
    std::vector<double> x;
    StationaryEval eval;
    bool failed;
};

LbfgsResult lbfgs(std::vector<double> x, const TorusGrid& grid, double b, double sigma,
                  const CouplingFunctional& F, const StationaryOptions& opts) {
    auto ev = stationary_eval(x, grid, b, sigma, F);
    std::deque<std::pair<std::vector<double>, std::vector<double>>> mem;
    int stalls = 0;
    bool first = true;
    const std::size_t dim = x.size();
    for (int it = 0; it < opts.max_iter; ++it) {
        if (norm2(ev.grad) <= opts.grad_tol) break;
        // Two-loop recursion.
        std::vector<double> d(ev.grad);
        std::vector<double> alphas(mem.size());
        for (std::size_t j = mem.size(); j-- > 0;) {
            const auto& [s, y] = mem[j];
            alphas[j] = dot(s, d) / dot(y, s);
            for (std::size_t i = 0; i < dim; ++i) d[i] -= alphas[j] * y[i];
        }
        if (!mem.empty()) {
            const auto& [s, y] = mem.back();
            const double scale = dot(s, y) / dot(y, y);
            for (double& v : d) v *= scale;
        }
        for (std::size_t j = 0; j < mem.size(); ++j) {
            const auto& [s, y] = mem[j];
            const double beta = dot(y, d) / dot(y, s);
            for (std::size_t i = 0; i < dim; ++i) d[i] += s[i] * (alphas[j] - beta);
        }
        for (double& v : d) v = -v;
        double slope = dot(ev.grad, d);
        if (!(slope < 0.0)) {
            mem.clear();
            d = ev.grad;
            for (double& v : d) v = -v;
            slope = dot(ev.grad, d);
        }
        double step = mem.empty() ? 1.0 / std::max(1.0, norm2(d)) : 1.0;
        bool ok = false;
        std::vector<double> xn(dim);
        StationaryEval en;
        for (int ls = 0; ls < 60; ++ls) {
            for (std::size_t i = 0; i < dim; ++i) xn[i] = x[i] + step * d[i];
            en = stationary_eval(xn, grid, b, sigma, F);
            if (std::isfinite(en.energy) && en.energy <= ev.energy + 1e-4 * step * slope) {
                ok = true;
                break;
            }
            step *= 0.5;
        }
        if (!ok) {
            if (!mem.empty()) {
                mem.clear();
                continue;
            }
            return {std::move(x), std::move(ev), first && norm2(ev.grad) > opts.grad_tol * 1e3};
        }
        first = false;
        std::vector<double> s(dim), y(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            s[i] = xn[i] - x[i];
            y[i] = en.grad[i] - ev.grad[i];
        }
        const double decrease = ev.energy - en.energy;
        x = std::move(xn);
        ev = std::move(en);
        if (dot(s, y) > 1e-16 * norm2(s) * norm2(y)) {
            mem.emplace_back(std::move(s), std::move(y));
            if (static_cast<int>(mem.size()) > opts.memory) mem.pop_front();
        }
        stalls = decrease <= 1e-15 * std::max(1.0, std::abs(ev.energy)) ? stalls + 1 : 0;
        if (stalls >= 20) break;
    }
    return {std::move(x), std::move(ev), false};
}

}  // namespace

double stationary_energy(const GridDensity& m, double c, const QuadraticHamiltonian& H,
                         const CouplingFunctional& F, double sigma) {
    require_dim1(m.grid(), "stationary_energy");
    return upwind_kinetic(m.values(), c, H.b0(), sigma, m.grid().h(), nullptr, nullptr) +
           F.value(m.values());
}

std::vector<double> stationary_drift(const GridDensity& m, double c, double sigma) {
    const TorusGrid& grid = m.grid();
    require_dim1(grid, "stationary_drift");
    const std::size_t n = grid.cells();
    std::vector<double> w(n), alpha(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = sigma * (m[(i + 1) % n] - m[i]) / grid.h() + c;
    for (std::size_t i = 0; i < n; ++i) {
        const double P = std::max(w[i], 0.0);
        const double N = std::max(-w[(i + n - 1) % n], 0.0);
        alpha[i] = (N - P) / m[i];
    }
    return alpha;
}

StationarySolution solve_stationary(const TorusGrid& grid, const QuadraticHamiltonian& H,
                                    const CouplingFunctional& F, double sigma,
                                    const StationaryOptions& opts) {
    require_dim1(grid, "solve_stationary");
    require_same_grid(grid, F.grid(), "solve_stationary");
    require(sigma > 0.0, "solve_stationary needs sigma > 0");
    require(opts.multistarts >= 1, "need at least one start");
    const std::size_t n = grid.cells();
    const double h = grid.h();
    const double b = H.b0();

    std::vector<std::vector<double>> starts;
    auto from_density = [&](std::span<const double> m, double c) {
        std::vector<double> x(n + 1);
        for (std::size_t i = 0; i < n; ++i) x[i] = std::log(std::max(m[i], 1e-300));
        x[n] = c;
        return x;
    };
    starts.push_back(from_density(GridDensity::uniform(grid).values(), b));
    for (const auto& s : opts.starts) {
        require_same_grid(grid, s.grid(), "stationary start");
        starts.push_back(from_density(s.values(), b));
    }
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    while (starts.size() < static_cast<std::size_t>(opts.multistarts) + opts.starts.size()) {
        std::vector<double> x(n + 1, 0.0);
        for (int j = 1; j <= 4; ++j) {
            const double a = opts.start_amplitude * normal(rng) / j;
            const double c = opts.start_amplitude * normal(rng) / j;
            for (std::size_t i = 0; i < n; ++i) {
                const double t = 2.0 * std::numbers::pi * j * grid.coordinate(i);
                x[i] += a * std::cos(t) + c * std::sin(t);
            }
        }
        x[n] = b * (0.5 + unif(rng)) + 0.1 * normal(rng);
        starts.push_back(std::move(x));
    }

    StationarySolution sol(GridDensity::uniform(grid));
    std::vector<StationaryMinimum> minima;
    int failed = 0;
    for (auto& x0 : starts) {
        auto res = lbfgs(std::move(x0), grid, b, sigma, F, opts);
        if (res.failed || !std::isfinite(res.eval.energy)) {
            ++failed;
            continue;
        }
        auto m = softmax_density(std::span<const double>(res.x).first(n), h);
        const double c = res.x[n];
        const double transport = upwind_kinetic(m, c, b, 0.0, grid.h(), nullptr, nullptr);
        GridDensity md(grid, m);
        const double gnorm = norm2(res.eval.grad);
        const double e = res.eval.energy;
        auto same = std::find_if(minima.begin(), minima.end(), [&](const StationaryMinimum& q) {
            return std::abs(q.energy - e) <= 1e-7 * std::max(1.0, std::abs(e));
        });
        if (same != minima.end()) {
            ++same->hits;
            if (gnorm < same->gradient_norm) same->gradient_norm = gnorm;
            continue;
        }
        minima.push_back({md, c, e, res.eval.kinetic, h * transport, res.eval.coupling,
                          wasserstein1_circle(md, GridDensity::uniform(grid)), gnorm, 1});
    }
    if (minima.empty()) {
        std::ostringstream os;
        os << "solve_stationary: all " << starts.size() << " starts failed the line search";
        throw Error(ErrorCode::solver_failure, os.str());
    }
    std::sort(minima.begin(), minima.end(),
              [](const auto& a, const auto& q) { return a.energy < q.energy; });
    sol.density = minima.front().density;
    sol.flux_constant = minima.front().flux_constant;
    sol.energy = minima.front().energy;
    sol.lambda_bar = -sol.energy;
    sol.energy_gradient_norm = minima.front().gradient_norm;
    sol.failed_starts = failed;
    sol.minima = std::move(minima);
    return sol;
}

// ---------------------------------------------------------------------------
// Connecting paths and fixed endpoints.

FlowPath connect_measures(const GridDensity& m0, const GridDensity& m1, const Controls& base,
                          double h_len, double tau, double sigma) {
    const TorusGrid& grid = base.grid;
    require_same_grid(grid, m0.grid(), "connect_measures");
    require_same_grid(grid, m1.grid(), "connect_measures");
    require_dim1(grid, "connect_measures");
    require(h_len > 0.0 && tau > 0.0, "connect_measures needs h_len, tau > 0");
    if (m1.min() <= 0.0) {
        throw Error(ErrorCode::infeasible_construction,
                    "connect_measures: target density must be strictly positive");
    }
    const TimeGrid& tg = base.time;
    const double dt = tg.dt();
    const int Kh = static_cast<int>(std::lround((h_len - tg.t0()) / dt));
    const int K = tg.k();
    require(std::abs(tg.time(Kh) - h_len) <= 1e-9 * std::max(1.0, h_len) && Kh >= 1 && Kh < K,
            "connect_measures: h_len must be an interior node of the time grid");
    require(std::abs(tg.t1() - (h_len + tau)) <= 1e-9 * std::max(1.0, h_len + tau),
            "connect_measures: the time grid must end at h_len + tau");
    const std::size_t n = grid.cells();
    const double h = grid.h();
    const double span_tau = tg.time(K) - tg.time(Kh);

    FlowPath free = fp_forward(m0, base, sigma);
    FlowPath path = free;
    std::vector<double> rhs(n);
    for (int k = Kh; k < K; ++k) {
        const double theta1 = (tg.time(k + 1) - tg.time(Kh)) / span_tau;
        const double theta0 = (tg.time(k) - tg.time(Kh)) / span_tau;
        auto mt = free.density(k);
        for (std::size_t i = 0; i < n; ++i) rhs[i] = -(m1[i] - mt[i]) / span_tau;
        auto zeta = poisson_solve(grid, rhs);
        for (std::size_t i = 0; i < n; ++i) zeta[i] += sigma * theta1 * m1[i];
        auto P = slice(path.right, n, k);
        auto N = slice(path.left, n, k);
        auto F = slice(path.flux, n, k);
        auto Pf = free.right_at(k);
        auto Nf = free.left_at(k);
        auto Ff = free.flux_at(k);
        for (std::size_t i = 0; i < n; ++i) {
            P[i] = (1.0 - theta1) * Pf[i];
            N[i] = (1.0 - theta1) * Nf[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = i + 1 == n ? 0 : i + 1;
            const double g = (zeta[j] - zeta[i]) / h;
            F[i] = (1.0 - theta1) * Ff[i] + g;
            if (g > 0.0) P[i] += g;
            else N[j] -= g;
        }
        if (k > Kh) {
            auto m = path.density(k);
            for (std::size_t i = 0; i < n; ++i) m[i] = (1.0 - theta0) * mt[i] + theta0 * m1[i];
        }
    }
    std::copy(m1.values().begin(), m1.values().end(), path.density(K).begin());
    return path;
}

FlowPath connect_measures(const GridDensity& m0, const GridDensity& m1,
                          std::span<const GridField> base_drift, double h_len, double tau,
                          double sigma, const TimeGrid& tg) {
    const TorusGrid& grid = m0.grid();
    require(base_drift.size() == static_cast<std::size_t>(tg.k()),
            "connect_measures needs one drift field per step");
    Controls c(grid, tg);
    const std::size_t n = grid.cells();
    for (int k = 0; k < tg.k(); ++k) {
        require_same_grid(grid, base_drift[k].grid(), "connect_measures drift");
        auto a = base_drift[k].component(0);
        for (std::size_t i = 0; i < n; ++i) {
            c.right[k * n + i] = std::max(-a[i], 0.0);
            c.left[k * n + i] = std::max(a[i], 0.0);
        }
    }
    return connect_measures(m0, m1, c, h_len, tau, sigma);
}

namespace {

// Rates reproducing a flow on its first steps, continued by the free drift -b.
Controls rates_of(const FlowPath& flow, const TimeGrid& tg, double b, double rcap) {
    const std::size_t n = flow.cells();
    Controls c(flow.grid, tg);
    for (int k = 0; k < tg.k(); ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            double p = std::min(std::max(b, 0.0), rcap);
            double q = std::min(std::max(-b, 0.0), rcap);
            if (k < flow.steps()) {
                const double m = flow.density(k)[i];
                p = m > 0.0 ? flow.right_at(k)[i] / m : 0.0;
                q = m > 0.0 ? flow.left_at(k)[i] / m : 0.0;
            }
            c.right[k * n + i] = p;
            c.left[k * n + i] = q;
        }
    }
    return c;
}

// The first k steps of a flow.
FlowPath head_of(const FlowPath& flow, int k) {
    const std::size_t n = flow.cells();
    FlowPath head(flow.grid, TimeGrid(flow.time.t0(), flow.time.time(k), k), flow.sigma);
    std::copy_n(flow.m.begin(), (k + 1) * n, head.m.begin());
    std::copy_n(flow.right.begin(), k * n, head.right.begin());
    std::copy_n(flow.left.begin(), k * n, head.left.begin());
    std::copy_n(flow.flux.begin(), k * n, head.flux.begin());
    return head;
}

}  // namespace

MfgSolution solve_fixed_endpoint(const GridDensity& m0, const GridDensity& m1, double T,
                                 const QuadraticHamiltonian& H, const CouplingFunctional& F,
                                 double sigma, const SolverOptions& opts) {
    require_same_grid(m0.grid(), F.grid(), "solve_fixed_endpoint");
    require_same_grid(m1.grid(), F.grid(), "solve_fixed_endpoint");
    if (m1.min() <= 0.0) {
        throw Error(ErrorCode::infeasible_construction,
                    "solve_fixed_endpoint: target density must be strictly positive");
    }
    const TorusGrid& grid = m0.grid();
    TimeGrid tg = solver_time_grid(grid, T, opts);
    const double dt = tg.dt();
    const int Ktau = static_cast<int>(std::ceil(1.0 / dt - 1e-9));
    const int Kh = tg.k() - Ktau;
    require(Kh >= 1, "solve_fixed_endpoint needs T > 1 + dt");
    const double h_len = tg.time(Kh);
    const double rcap = rate_cap(grid, dt, opts.drift_cap);

    Problem free_pb{m0, TimeGrid(0.0, h_len, Kh), H, F, sigma, 0.0, opts.drift_cap};
    MfgSolution free = run_restarts(free_pb, opts);
    FlowPath init = connect_measures(m0, m1, rates_of(free.flow, tg, H.b0(), rcap), h_len,
                                     T - h_len, sigma);

    Problem pb{m0, tg, H, F, sigma, 0.0, opts.drift_cap, &m1, opts.penalty_start};
    SolverOptions inner = opts;
    inner.max_iter = opts.penalty_iter;
    inner.restarts = 0;
    FlowPath belief = init;
    double mismatch = 0.0;
    std::vector<double> descent, responses, gaps;
    int iterations = 0;
    std::optional<FwOutcome> last;
    while (true) {
        FwOutcome o = fictitious_play(pb, belief, inner);
        iterations += o.iterations;
        descent.insert(descent.end(), o.descent.begin(), o.descent.end());
        responses.insert(responses.end(), o.responses.begin(), o.responses.end());
        gaps.insert(gaps.end(), o.gaps.begin(), o.gaps.end());
        belief = o.best;
        mismatch = terminal_distance(pb, belief);
        last.emplace(std::move(o));
        if (mismatch <= opts.endpoint_tol || pb.mu * 2.0 > opts.penalty_max) break;
        pb.mu *= 2.0;
    }
    bool repaired = false;
    if (mismatch > opts.endpoint_tol) {
        belief = connect_measures(m0, m1, rates_of(head_of(belief, Kh), tg, H.b0(), rcap),
                                  h_len, T - h_len, sigma);
        mismatch = 0.0;
        repaired = true;
    }
    MfgSolution sol(std::move(belief), std::move(last->value));
    fill_finite(sol, H, F);
    sol.iterations = iterations;
    sol.descent_log = std::move(descent);
    sol.best_response_log = std::move(responses);
    sol.gap_log = std::move(gaps);
    sol.converged = last->converged && !repaired;
    sol.gap = last->gap;
    sol.fixed_point_gap = last->fixed_point_gap;
    sol.restarts = opts.restarts;
    sol.cap_active = sol.value.cap_active;
    sol.terminal_mismatch = mismatch;
    sol.penalty = pb.mu;
    sol.repaired = repaired;
    return sol;
}

}  // namespace mfg
