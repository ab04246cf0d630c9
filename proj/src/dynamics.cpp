#include "mfg/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "mfg/error.hpp"
#include "mfg/kernels.hpp"

namespace mfg {

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw Error(ErrorCode::invalid_argument, message);
}

std::span<const double> slice(const std::vector<double>& v, std::size_t n, int k) {
    return std::span<const double>(v).subspan(static_cast<std::size_t>(k) * n, n);
}

std::span<double> slice(std::vector<double>& v, std::size_t n, int k) {
    return std::span<double>(v).subspan(static_cast<std::size_t>(k) * n, n);
}

void derivative_diagnostics(std::span<const double> u, double h, double& du, double& d2u) {
    const std::size_t n = u.size();
    du = 0.0;
    d2u = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double up = u[i + 1 == n ? 0 : i + 1];
        const double um = u[i == 0 ? n - 1 : i - 1];
        du = std::max(du, std::abs(up - u[i]) / h);
        d2u = std::max(d2u, std::abs(up - 2.0 * u[i] + um) / (h * h));
    }
}

// Solves the periodic tridiagonal system diag[i] x_i - off (x_{i-1} + x_{i+1}) = rhs_i
// by Sherman-Morrison on the Thomas algorithm.
void solve_cyclic(std::span<const double> diag, double off, std::span<const double> rhs,
                  std::span<double> x) {
    const std::size_t n = diag.size();
    const double a = -off;  // sub/super diagonal and the two corners
    const double gamma = -diag[0];
    std::vector<double> bb(diag.begin(), diag.end());
    bb[0] -= gamma;
    bb[n - 1] -= a * a / gamma;
    auto thomas = [&](std::span<const double> d, std::vector<double>& out) {
        std::vector<double> c(n), dd(n);
        c[0] = a / bb[0];
        dd[0] = d[0] / bb[0];
        for (std::size_t i = 1; i < n; ++i) {
            const double m = bb[i] - a * c[i - 1];
            c[i] = a / m;
            dd[i] = (d[i] - a * dd[i - 1]) / m;
        }
        out.assign(n, 0.0);
        out[n - 1] = dd[n - 1];
        for (std::size_t i = n - 1; i-- > 0;) out[i] = dd[i] - c[i] * out[i + 1];
    };
    std::vector<double> y, z;
    thomas(rhs, y);
    std::vector<double> uvec(n, 0.0);
    uvec[0] = gamma;
    uvec[n - 1] = a;
    thomas(uvec, z);
    const double vy = y[0] + a / gamma * y[n - 1];
    const double vz = z[0] + a / gamma * z[n - 1];
    const double f = vy / (1.0 + vz);
    for (std::size_t i = 0; i < n; ++i) x[i] = y[i] - f * z[i];
}

// Trigonometric interpolant of periodic samples: value and x-derivative.
class TrigInterpolant {
public:
    explicit TrigInterpolant(std::span<const double> samples) : n_(samples.size()) {
        const int n = static_cast<int>(n_);
        const int kmax = n / 2;
        a_.assign(kmax + 1, 0.0);
        b_.assign(kmax + 1, 0.0);
        for (int k = 0; k <= kmax; ++k) {
            double sa = 0.0;
            double sb = 0.0;
            for (int j = 0; j < n; ++j) {
                const double th = 2.0 * std::numbers::pi * k * j / n;
                sa += samples[j] * std::cos(th);
                sb += samples[j] * std::sin(th);
            }
            const double w = (k == 0 || 2 * k == n) ? 1.0 / n : 2.0 / n;
            a_[k] = w * sa;
            b_[k] = (2 * k == n) ? 0.0 : w * sb;
        }
    }

    void eval(double x, double& value, double& deriv) const {
        value = a_[0];
        deriv = 0.0;
        for (std::size_t k = 1; k < a_.size(); ++k) {
            const double w = 2.0 * std::numbers::pi * static_cast<double>(k);
            const double c = std::cos(w * x);
            const double s = std::sin(w * x);
            value += a_[k] * c + b_[k] * s;
            deriv += w * (b_[k] * c - a_[k] * s);
        }
    }

    // Mean of p(x - s) over s in [s0, s1].
    double average(double x, double s0, double s1) const {
        if (s1 == s0) {
            double v = 0.0, d = 0.0;
            eval(x - s0, v, d);
            return v;
        }
        double acc = 0.0;
        for (std::size_t k = 1; k < a_.size(); ++k) {
            const double w = 2.0 * std::numbers::pi * static_cast<double>(k);
            const double t0 = w * (x - s0);
            const double t1 = w * (x - s1);
            acc += a_[k] * (std::sin(t0) - std::sin(t1)) / w + b_[k] * (std::cos(t1) - std::cos(t0)) / w;
        }
        return a_[0] + acc / (s1 - s0);
    }

private:
    std::size_t n_;
    std::vector<double> a_;
    std::vector<double> b_;
};

}  // namespace

double discounted_horizon(double delta) {
    require(delta > 0.0, "discount must be positive");
    return std::max(5.0 / delta, 20.0);
}

double cfl_time_step(const TorusGrid& grid, double drift_cap) {
    require(drift_cap > 0.0, "drift cap must be positive");
    return grid.h() / drift_cap;
}

double rate_cap(const TorusGrid& grid, double dt, double drift_cap) {
    return std::min(drift_cap, (1.0 - 1e-12) * grid.h() / dt);
}

ImplicitDiffusion::ImplicitDiffusion(const TorusGrid& grid, double sigma, double dt)
    : n_(grid.cells()) {
    require_dim1(grid, "implicit diffusion");
    require(sigma >= 0.0 && dt > 0.0, "implicit diffusion needs sigma >= 0 and dt > 0");
    const int n = grid.n();
    const double r = sigma * dt / (grid.h() * grid.h());
    column_.assign(n_, 0.0);
    for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int k = 0; k < n; ++k) {
            const double sn = std::sin(std::numbers::pi * k / n);
            s += std::cos(2.0 * std::numbers::pi * k * j / n) / (1.0 + 4.0 * r * sn * sn);
        }
        column_[j] = std::max(s / n, 0.0);
    }
    double total = 0.0;
    for (double c : column_) total += c;
    for (double& c : column_) c /= total;
    matrix_.assign(n_ * n_, 0.0);
    for (std::size_t j = 0; j < n_; ++j) {
        for (std::size_t i = 0; i < n_; ++i) matrix_[j * n_ + i] = column_[(i + n_ - j) % n_];
    }
}

void ImplicitDiffusion::apply(std::span<const double> in, std::span<double> out) const {
    kernels::active().combine_columns(matrix_.data(), n_, n_, in.data(), out.data());
}

Controls::Controls(const TorusGrid& g, const TimeGrid& t)
    : grid(g),
      time(t),
      right(static_cast<std::size_t>(t.k()) * g.cells(), 0.0),
      left(static_cast<std::size_t>(t.k()) * g.cells(), 0.0) {}

FlowPath::FlowPath(const TorusGrid& g, const TimeGrid& t, double s)
    : grid(g),
      time(t),
      sigma(s),
      m(static_cast<std::size_t>(t.k() + 1) * g.cells(), 0.0),
      right(static_cast<std::size_t>(t.k()) * g.cells(), 0.0),
      left(static_cast<std::size_t>(t.k()) * g.cells(), 0.0),
      flux(static_cast<std::size_t>(t.k()) * g.cells(), 0.0) {}

std::span<const double> FlowPath::density(int k) const { return slice(m, cells(), k); }
std::span<double> FlowPath::density(int k) { return slice(m, cells(), k); }
std::span<const double> FlowPath::right_at(int k) const { return slice(right, cells(), k); }
std::span<const double> FlowPath::left_at(int k) const { return slice(left, cells(), k); }
std::span<const double> FlowPath::flux_at(int k) const { return slice(flux, cells(), k); }

GridDensity FlowPath::density_at(int k) const {
    auto d = density(k);
    return GridDensity(grid, std::vector<double>(d.begin(), d.end()));
}

GridField FlowPath::momentum(int k) const {
    GridField w(grid);
    auto P = right_at(k);
    auto N = left_at(k);
    auto out = w.component(0);
    for (std::size_t i = 0; i < cells(); ++i) out[i] = P[i] - N[i];
    return w;
}

void FlowPath::mix(const FlowPath& other, double rho) {
    require_same_grid(grid, other.grid, "flow mixing");
    require(other.steps() == steps(), "flow mixing needs equal time grids");
    auto blend = [rho](std::vector<double>& a, const std::vector<double>& b) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = (1.0 - rho) * a[i] + rho * b[i];
    };
    blend(m, other.m);
    blend(right, other.right);
    blend(left, other.left);
    blend(flux, other.flux);
}

FlowPath fp_forward(const GridDensity& m0, const Controls& controls, double sigma) {
    const TorusGrid& grid = controls.grid;
    require_same_grid(grid, m0.grid(), "fp_forward");
    require_dim1(grid, "fp_forward");
    require(sigma > 0.0, "fp_forward needs sigma > 0");
    const TimeGrid& tg = controls.time;
    const std::size_t n = grid.cells();
    const double dt = tg.dt();
    const double h = grid.h();
    double max_rate = 0.0;
    for (std::size_t i = 0; i < controls.right.size(); ++i) {
        require(controls.right[i] >= 0.0 && controls.left[i] >= 0.0, "jump rates must be nonnegative");
        max_rate = std::max(max_rate, controls.right[i] + controls.left[i]);
    }
    if (dt * max_rate > h * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "CFL violation: dt=" << dt << " with max outflow rate " << max_rate
           << " needs dt <= " << h / max_rate;
        throw CflError(os.str(), h / max_rate);
    }
    FlowPath path(grid, tg, sigma);
    std::copy(m0.values().begin(), m0.values().end(), path.m.begin());
    const ImplicitDiffusion S(grid, sigma, dt);
    const auto& kern = kernels::active();
    std::vector<double> moved(n);
    for (int k = 0; k < tg.k(); ++k) {
        auto mk = slice(path.m, n, k);
        auto p = slice(controls.right, n, k);
        auto q = slice(controls.left, n, k);
        kern.upwind_transport(mk.data(), p.data(), q.data(), n, dt / h, moved.data());
        S.apply(moved, slice(path.m, n, k + 1));
        auto P = slice(path.right, n, k);
        auto N = slice(path.left, n, k);
        auto F = slice(path.flux, n, k);
        for (std::size_t i = 0; i < n; ++i) {
            P[i] = mk[i] * p[i];
            N[i] = mk[i] * q[i];
        }
        for (std::size_t i = 0; i < n; ++i) F[i] = P[i] - N[i + 1 == n ? 0 : i + 1];
    }
    return path;
}

FlowPath fp_forward(const GridDensity& m0, std::span<const GridField> alpha, double sigma,
                    const TimeGrid& tg, double drift_cap) {
    const TorusGrid& grid = m0.grid();
    require(alpha.size() == static_cast<std::size_t>(tg.k()), "need one drift field per step");
    Controls c(grid, tg);
    const std::size_t n = grid.cells();
    for (int k = 0; k < tg.k(); ++k) {
        require_same_grid(grid, alpha[k].grid(), "fp_forward drift");
        auto a = alpha[k].component(0);
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(a[i]) || std::abs(a[i]) > drift_cap) {
                throw Error(ErrorCode::invalid_argument, "drift exceeds the cap or is not finite");
            }
            c.right[k * n + i] = a[i] < 0.0 ? -a[i] : 0.0;
            c.left[k * n + i] = a[i] > 0.0 ? a[i] : 0.0;
        }
    }
    return fp_forward(m0, c, sigma);
}

std::vector<double> fp_residuals(const FlowPath& path) {
    require_dim1(path.grid, "fp_residuals");
    const std::size_t n = path.cells();
    const double dt = path.time.dt();
    const double h = path.grid.h();
    std::vector<double> out(path.steps());
    for (int k = 0; k < path.steps(); ++k) {
        auto m0 = path.density(k);
        auto m1 = path.density(k + 1);
        auto F = path.flux_at(k);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ip = i + 1 == n ? 0 : i + 1;
            const std::size_t im = i == 0 ? n - 1 : i - 1;
            const double lap = (m1[ip] - 2.0 * m1[i] + m1[im]) / (h * h);
            const double div = (F[i] - F[im]) / h;
            s += std::abs((m1[i] - m0[i]) / dt - path.sigma * lap + div);
        }
        out[k] = h * s;
    }
    return out;
}

ValuePath::ValuePath(const TorusGrid& g, const TimeGrid& t, double d)
    : grid(g),
      time(t),
      delta(d),
      u(static_cast<std::size_t>(t.k() + 1) * g.cells(), 0.0),
      controls(g, t),
      du_sup(t.k() + 1, 0.0),
      d2u_sup(t.k() + 1, 0.0) {}

std::span<const double> ValuePath::value(int k) const { return slice(u, grid.cells(), k); }

ValuePath hjb_backward(const TorusGrid& grid, std::span<const double> terminal,
                       std::span<const double> f_path, const QuadraticHamiltonian& H, double sigma,
                       double delta, const TimeGrid& tg, double drift_cap) {
    require_dim1(grid, "hjb_backward");
    require(sigma > 0.0 && delta >= 0.0, "hjb_backward needs sigma > 0 and delta >= 0");
    const std::size_t n = grid.cells();
    const int K = tg.k();
    require(terminal.size() == n, "terminal size mismatch");
    require(f_path.size() == n * static_cast<std::size_t>(K), "f_path must hold one function per step");
    const double dt = tg.dt();
    const double gamma = std::exp(-delta * dt);
    const kernels::GodunovParams prm{1.0 / grid.h(), dt, H.b0(), rate_cap(grid, dt, drift_cap)};
    const ImplicitDiffusion S(grid, sigma, dt);
    const auto& kern = kernels::active();

    ValuePath out(grid, tg, delta);
    std::copy(terminal.begin(), terminal.end(), out.u.begin() + static_cast<std::ptrdiff_t>(K * n));
    derivative_diagnostics(out.value(K), grid.h(), out.du_sup[K], out.d2u_sup[K]);
    std::vector<double> rhs(n), ut(n);
    for (int k = K - 1; k >= 0; --k) {
        auto next = slice(out.u, n, k + 1);
        auto f = f_path.subspan(static_cast<std::size_t>(k) * n, n);
        for (std::size_t i = 0; i < n; ++i) rhs[i] = gamma * next[i] + dt * f[i];
        S.apply(rhs, ut);
        auto p = slice(out.controls.right, n, k);
        auto q = slice(out.controls.left, n, k);
        kern.godunov_step(ut.data(), n, prm, slice(out.u, n, k).data(), p.data(), q.data());
        for (std::size_t i = 0; i < n; ++i) {
            if (p[i] + q[i] >= prm.cap * (1.0 - 1e-9)) ++out.cap_active;
        }
        derivative_diagnostics(out.value(k), grid.h(), out.du_sup[k], out.d2u_sup[k]);
    }
    return out;
}

ValuePath hopf_cole_oracle(const TorusGrid& grid, std::span<const double> terminal,
                           std::span<const double> f, const QuadraticHamiltonian& H, double sigma,
                           double delta, const TimeGrid& tg) {
    require_dim1(grid, "hopf_cole_oracle");
    if (H.drift_norm2() != 0.0 || delta != 0.0) {
        throw Error(ErrorCode::unsupported_model, "Hopf-Cole oracle needs b = 0 and delta = 0");
    }
    require(sigma > 0.0, "Hopf-Cole oracle needs sigma > 0");
    const std::size_t n = grid.cells();
    require(terminal.size() == n && f.size() == n, "Hopf-Cole input size mismatch");
    const int K = tg.k();
    const double dt = tg.dt();
    const double r = sigma * dt / (grid.h() * grid.h());
    std::vector<double> diag(n);
    for (std::size_t i = 0; i < n; ++i) diag[i] = 1.0 + 2.0 * r + dt * f[i] / (2.0 * sigma);

    ValuePath out(grid, tg, 0.0);
    const double two_sigma = 2.0 * sigma;
    // phi = exp(-(u - shift)/(2 sigma)); shift keeps phi of order one.
    double shift = *std::min_element(terminal.begin(), terminal.end());
    std::vector<double> phi(n), next(n);
    for (std::size_t i = 0; i < n; ++i) phi[i] = std::exp(-(terminal[i] - shift) / two_sigma);
    auto store = [&](int k) {
        auto u = slice(out.u, n, k);
        for (std::size_t i = 0; i < n; ++i) u[i] = shift - two_sigma * std::log(phi[i]);
        derivative_diagnostics(out.value(k), grid.h(), out.du_sup[k], out.d2u_sup[k]);
    };
    store(K);
    for (int k = K - 1; k >= 0; --k) {
        solve_cyclic(diag, r, phi, next);
        const double top = *std::max_element(next.begin(), next.end());
        for (std::size_t i = 0; i < n; ++i) phi[i] = next[i] / top;
        shift -= two_sigma * std::log(top);
        store(k);
    }
    return out;
}

double kinetic_cost(const TorusGrid& grid, std::span<const double> m, std::span<const double> P,
                    std::span<const double> N, double b) {
    const std::size_t n = m.size();
    std::vector<double> cell(n);
    kernels::active().kinetic_cells(m.data(), P.data(), N.data(), n, b, cell.data());
    return integrate(grid, cell);
}

EnergyReport energy_finite(const FlowPath& path, const QuadraticHamiltonian& H,
                           const CouplingFunctional& F) {
    require_same_grid(path.grid, F.grid(), "energy_finite");
    EnergyReport rep;
    const double dt = path.time.dt();
    rep.rate.resize(path.steps());
    for (int k = 0; k < path.steps(); ++k) {
        const double kin = kinetic_cost(path.grid, path.density(k), path.right_at(k),
                                        path.left_at(k), H.b0());
        const double cpl = F.value(path.density(k + 1));
        if (!std::isfinite(kin)) rep.infinite = true;
        rep.kinetic += dt * kin;
        rep.coupling += dt * cpl;
        rep.rate[k] = kin + cpl;
    }
    rep.total = rep.infinite ? std::numeric_limits<double>::infinity() : rep.kinetic + rep.coupling;
    return rep;
}

DiscountedEnergy energy_discounted(const FlowPath& path, const QuadraticHamiltonian& H,
                                   const CouplingFunctional& F, double delta) {
    require(delta > 0.0, "energy_discounted needs delta > 0");
    require_same_grid(path.grid, F.grid(), "energy_discounted");
    DiscountedEnergy rep;
    const int K = path.steps();
    const double dt = path.time.dt();
    const double gamma = std::exp(-delta * dt);
    rep.rate.resize(K);
    double weight = 1.0;
    double sup_f = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) {
        const double kin = kinetic_cost(path.grid, path.density(k), path.right_at(k),
                                        path.left_at(k), H.b0());
        const double cpl = F.value(path.density(k + 1));
        sup_f = std::max(sup_f, cpl);
        if (!std::isfinite(kin)) rep.infinite = true;
        rep.truncated += weight * dt * (kin + cpl);
        rep.rate[k] = kin + cpl;
        weight *= gamma;
    }
    // weight == gamma^K here; sum_{j >= K} gamma^j dt = weight * dt / (1 - gamma).
    const double scale = weight * dt / (1.0 - gamma);
    rep.tail_lower = scale * F.lower_bound();
    rep.tail_upper = scale * (0.5 * H.drift_norm2() + sup_f);
    const int start = K - std::max(1, K / 4);
    double mean = 0.0;
    for (int k = start; k < K; ++k) mean += rep.rate[k];
    mean /= static_cast<double>(K - start);
    rep.tail_estimate = std::clamp(scale * mean, rep.tail_lower, std::max(rep.tail_lower, rep.tail_upper));
    if (rep.infinite) {
        rep.truncated = std::numeric_limits<double>::infinity();
        rep.value = rep.truncated;
    } else {
        rep.value = rep.truncated + rep.tail_estimate;
    }
    return rep;
}

FlowPath traveling_wave_path(const GridDensity& profile, double speed, double sigma,
                             const TimeGrid& tg) {
    const TorusGrid& grid = profile.grid();
    require_dim1(grid, "traveling_wave_path");
    require(sigma > 0.0, "traveling wave needs sigma > 0");
    const std::size_t n = grid.cells();
    const double h = grid.h();
    const TrigInterpolant trig(profile.values());
    FlowPath path(grid, tg, sigma);
    double v = 0.0;
    double d = 0.0;
    for (int k = 0; k <= tg.k(); ++k) {
        const double t = tg.time(k) - tg.t0();
        auto mk = path.density(k);
        for (std::size_t i = 0; i < n; ++i) {
            trig.eval(static_cast<double>(i) * h - speed * t, v, d);
            mk[i] = v;
        }
        if (k == tg.k()) break;
        auto P = slice(path.right, n, k);
        auto N = slice(path.left, n, k);
        auto F = slice(path.flux, n, k);
        for (std::size_t i = 0; i < n; ++i) {
            trig.eval(static_cast<double>(i) * h - speed * t, v, d);
            const double w = speed * v + sigma * d;
            P[i] = w > 0.0 ? w : 0.0;
            N[i] = w < 0.0 ? -w : 0.0;
        }
        // Advective flux averaged exactly over the step, diffusive flux at its end.
        const double t1 = tg.time(k + 1) - tg.t0();
        for (std::size_t i = 0; i < n; ++i) {
            const double x = (static_cast<double>(i) + 0.5) * h;
            trig.eval(x - speed * t1, v, d);
            F[i] = speed * trig.average(x, speed * t, speed * t1) + sigma * d;
        }
    }
    return path;
}

}  // namespace mfg
