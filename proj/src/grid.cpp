#include "mfg/grid.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>

#include "fftw_lock.hpp"
#include "mfg/error.hpp"

namespace mfg {

namespace detail {

std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace detail

namespace {

constexpr double kMassTol = 1e-10;

}  // namespace

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_argument: return "invalid_argument";
        case ErrorCode::mass_imbalance: return "mass_imbalance";
        case ErrorCode::unsupported_dimension: return "unsupported_dimension";
        case ErrorCode::unsupported_model: return "unsupported_model";
        case ErrorCode::oracle_too_large: return "oracle_too_large";
        case ErrorCode::cfl_violation: return "cfl_violation";
        case ErrorCode::grid_mismatch: return "grid_mismatch";
        case ErrorCode::infeasible_construction: return "infeasible_construction";
        case ErrorCode::solver_failure: return "solver_failure";
        case ErrorCode::config: return "config";
    }
    return "unknown";
}

TorusGrid::TorusGrid(int dim, int n) : dim_(dim), n_(n), h_(0.0), cells_(0) {
    if (dim != 1 && dim != 2) {
        throw Error(ErrorCode::unsupported_dimension,
                    "torus dimension must be 1 or 2, got " + std::to_string(dim));
    }
    if (n < 4) {
        throw Error(ErrorCode::invalid_argument,
                    "grid needs at least 4 cells per axis, got " + std::to_string(n));
    }
    h_ = 1.0 / n;
    cells_ = dim == 1 ? static_cast<std::size_t>(n) : static_cast<std::size_t>(n) * n;
}

double TorusGrid::cell_volume() const noexcept { return dim_ == 1 ? h_ : h_ * h_; }

std::size_t TorusGrid::index(int i, int j) const noexcept {
    int ii = ((i % n_) + n_) % n_;
    if (dim_ == 1) return static_cast<std::size_t>(ii);
    int jj = ((j % n_) + n_) % n_;
    return static_cast<std::size_t>(ii) + static_cast<std::size_t>(n_) * jj;
}

int TorusGrid::coordinate_index(std::size_t cell, int axis) const noexcept {
    if (axis == 0) return static_cast<int>(cell % n_);
    return static_cast<int>(cell / n_);
}

std::size_t TorusGrid::neighbor(std::size_t cell, int axis, int step) const noexcept {
    int i = coordinate_index(cell, 0);
    int j = dim_ == 2 ? coordinate_index(cell, 1) : 0;
    if (axis == 0) i += step; else j += step;
    return index(i, j);
}

double TorusGrid::coordinate(std::size_t cell, int axis) const noexcept {
    return coordinate_index(cell, axis) * h_;
}

void require_same_grid(const TorusGrid& a, const TorusGrid& b, const char* what) {
    if (!(a == b)) {
        std::ostringstream os;
        os << what << ": grid mismatch (dim " << a.dim() << ", n " << a.n() << " vs dim "
           << b.dim() << ", n " << b.n() << ")";
        throw Error(ErrorCode::grid_mismatch, os.str());
    }
}

void require_dim1(const TorusGrid& grid, const char* what) {
    if (grid.dim() != 1) {
        throw Error(ErrorCode::unsupported_dimension,
                    std::string(what) + " supports dim = 1 only, got dim = " +
                        std::to_string(grid.dim()));
    }
}

GridDensity::GridDensity(const TorusGrid& grid, std::vector<double> values)
    : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.cells()) {
        throw Error(ErrorCode::grid_mismatch, "density has " + std::to_string(values_.size()) +
                                                  " values for " + std::to_string(grid_.cells()) +
                                                  " cells");
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!(values_[i] >= 0.0) || !std::isfinite(values_[i])) {
            std::ostringstream os;
            os << "density value at cell " << i << " is " << values_[i];
            throw Error(ErrorCode::invalid_argument, os.str());
        }
    }
    double mass = integrate(grid_, values_);
    if (std::abs(mass - 1.0) > kMassTol) {
        std::ostringstream os;
        os << std::setprecision(17) << "density mass " << mass << " differs from 1";
        throw Error(ErrorCode::mass_imbalance, os.str());
    }
}

GridDensity GridDensity::uniform(const TorusGrid& grid) {
    return GridDensity(grid, std::vector<double>(grid.cells(), 1.0));
}

GridDensity GridDensity::normalized(const TorusGrid& grid, std::vector<double> weights) {
    if (weights.size() != grid.cells()) {
        throw Error(ErrorCode::grid_mismatch, "weights do not match the grid");
    }
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw Error(ErrorCode::invalid_argument, "weights must be finite and nonnegative");
        }
    }
    double mass = integrate(grid, weights);
    if (!(mass > 0.0)) throw Error(ErrorCode::invalid_argument, "weights have zero mass");
    for (double& w : weights) w /= mass;
    return GridDensity(grid, std::move(weights));
}

double GridDensity::mass() const noexcept { return integrate(grid_, values_); }

double GridDensity::min() const noexcept {
    return *std::min_element(values_.begin(), values_.end());
}

GridField::GridField(const TorusGrid& grid)
    : grid_(grid), values_(grid.cells() * grid.dim(), 0.0) {}

GridField::GridField(const TorusGrid& grid, std::vector<double> values)
    : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.cells() * grid_.dim()) {
        throw Error(ErrorCode::grid_mismatch, "field size does not match grid");
    }
    for (double v : values_) {
        if (!std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "field entry not finite");
    }
}

std::span<const double> GridField::component(int axis) const noexcept {
    return std::span<const double>(values_).subspan(axis * grid_.cells(), grid_.cells());
}

std::span<double> GridField::component(int axis) noexcept {
    return std::span<double>(values_).subspan(axis * grid_.cells(), grid_.cells());
}

TimeGrid::TimeGrid(double t0, double t1, int k) : t0_(t0), t1_(t1), k_(k), dt_(0.0) {
    if (k < 1) throw Error(ErrorCode::invalid_argument, "time grid needs k >= 1");
    if (!(t1 > t0)) throw Error(ErrorCode::invalid_argument, "time grid needs t1 > t0");
    dt_ = (t1 - t0) / k;
}

TimeGrid TimeGrid::with_max_step(double t0, double t1, double dt_max) {
    if (!(dt_max > 0.0)) throw Error(ErrorCode::invalid_argument, "dt_max must be positive");
    double steps = std::ceil((t1 - t0) / dt_max - 1e-9);
    return TimeGrid(t0, t1, std::max(1, static_cast<int>(steps)));
}

double integrate(const TorusGrid& grid, std::span<const double> f) {
    double s = 0.0;
    for (double v : f) s += v;
    return s * grid.cell_volume();
}

double inner(const TorusGrid& grid, std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s * grid.cell_volume();
}

GridField gradient(const TorusGrid& grid, std::span<const double> f) {
    GridField g(grid);
    const double inv_h = 1.0 / grid.h();
    for (int axis = 0; axis < grid.dim(); ++axis) {
        auto out = g.component(axis);
        for (std::size_t c = 0; c < grid.cells(); ++c) {
            out[c] = (f[grid.neighbor(c, axis, 1)] - f[c]) * inv_h;
        }
    }
    return g;
}

GridFunction divergence(const GridField& v) {
    const TorusGrid& grid = v.grid();
    const double inv_h = 1.0 / grid.h();
    GridFunction out(grid.cells(), 0.0);
    for (int axis = 0; axis < grid.dim(); ++axis) {
        auto comp = v.component(axis);
        for (std::size_t c = 0; c < grid.cells(); ++c) {
            out[c] += (comp[c] - comp[grid.neighbor(c, axis, -1)]) * inv_h;
        }
    }
    return out;
}

GridFunction laplacian(const TorusGrid& grid, std::span<const double> f) {
    return divergence(gradient(grid, f));
}

GridFunction poisson_solve(const TorusGrid& grid, std::span<const double> rhs) {
    if (rhs.size() != grid.cells()) throw Error(ErrorCode::grid_mismatch, "rhs size mismatch");
    double mean = integrate(grid, rhs);
    if (std::abs(mean) > 1e-8) {
        std::ostringstream os;
        os << std::setprecision(6) << "poisson rhs has net mass " << mean;
        throw Error(ErrorCode::mass_imbalance, os.str());
    }
    const int n = grid.n();
    const int nc = n / 2 + 1;
    const std::size_t spectral = grid.dim() == 1 ? nc : static_cast<std::size_t>(n) * nc;
    std::vector<double> real(rhs.begin(), rhs.end());
    std::vector<std::complex<double>> spec(spectral);
    auto* cspec = reinterpret_cast<fftw_complex*>(spec.data());

    fftw_plan forward;
    fftw_plan backward;
    {
        std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
        if (grid.dim() == 1) {
            forward = fftw_plan_dft_r2c_1d(n, real.data(), cspec, FFTW_ESTIMATE);
            backward = fftw_plan_dft_c2r_1d(n, cspec, real.data(), FFTW_ESTIMATE);
        } else {
            // FFTW is row-major with the last index fastest; axis 0 is fastest here.
            forward = fftw_plan_dft_r2c_2d(n, n, real.data(), cspec, FFTW_ESTIMATE);
            backward = fftw_plan_dft_c2r_2d(n, n, cspec, real.data(), FFTW_ESTIMATE);
        }
    }
    fftw_execute(forward);

    const double inv_h2 = 1.0 / (grid.h() * grid.h());
    auto symbol = [&](int k) {
        double s = std::sin(M_PI * k / n);
        return -4.0 * inv_h2 * s * s;
    };
    if (grid.dim() == 1) {
        spec[0] = 0.0;
        for (int k = 1; k < nc; ++k) spec[k] /= symbol(k);
    } else {
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < nc; ++i) {
                std::size_t idx = static_cast<std::size_t>(j) * nc + i;
                if (i == 0 && j == 0) {
                    spec[idx] = 0.0;
                    continue;
                }
                spec[idx] /= symbol(i) + symbol(j);
            }
        }
    }
    fftw_execute(backward);
    {
        std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
        fftw_destroy_plan(forward);
        fftw_destroy_plan(backward);
    }
    const double scale = 1.0 / static_cast<double>(grid.cells());
    for (double& v : real) v *= scale;
    double m = integrate(grid, real);
    for (double& v : real) v -= m;
    return real;
}

namespace {

std::vector<double> cumulative_difference(const GridDensity& a, const GridDensity& b) {
    const double h = a.grid().h();
    std::vector<double> c(a.size());
    double run = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        run += (a[i] - b[i]) * h;
        c[i] = run;
    }
    return c;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double wasserstein1_circle(const GridDensity& a, const GridDensity& b) {
    require_same_grid(a.grid(), b.grid(), "wasserstein1_circle");
    if (a.grid().dim() != 1) {
        throw Error(ErrorCode::unsupported_dimension,
                    "wasserstein1_circle is 1-D only; use wasserstein1_lp_oracle in 2-D");
    }
    auto c = cumulative_difference(a, b);
    double t = median_of(c);
    double s = 0.0;
    for (double v : c) s += std::abs(v - t);
    return s * a.grid().h();
}

KantorovichResult kantorovich_circle(const GridDensity& a, const GridDensity& b) {
    require_same_grid(a.grid(), b.grid(), "kantorovich_circle");
    require_dim1(a.grid(), "kantorovich_circle");
    const std::size_t n = a.size();
    const double h = a.grid().h();
    auto c = cumulative_difference(a, b);
    double t = median_of(c);

    // Slope signs must sum to zero so the potential closes around the circle.
    std::vector<int> sign(n, 0);
    int balance = 0;
    std::vector<std::size_t> ties;
    for (std::size_t i = 0; i < n; ++i) {
        if (c[i] > t) sign[i] = 1;
        else if (c[i] < t) sign[i] = -1;
        else ties.push_back(i);
        balance += sign[i];
    }
    for (std::size_t i : ties) {
        if (balance > 0) { sign[i] = -1; --balance; }
        else if (balance < 0) { sign[i] = 1; ++balance; }
    }
    KantorovichResult r;
    r.potential.assign(n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) r.potential[i + 1] = r.potential[i] - h * sign[i];
    double mean = integrate(a.grid(), r.potential);
    for (double& v : r.potential) v -= mean;
    double s = 0.0;
    for (double v : c) s += std::abs(v - t);
    r.distance = s * h;
    return r;
}

namespace {

double torus_distance(const TorusGrid& grid, std::size_t c1, std::size_t c2) {
    double d2 = 0.0;
    for (int axis = 0; axis < grid.dim(); ++axis) {
        int di = std::abs(grid.coordinate_index(c1, axis) - grid.coordinate_index(c2, axis));
        di = std::min(di, grid.n() - di);
        double d = di * grid.h();
        d2 += d * d;
    }
    return std::sqrt(d2);
}

}  // namespace

double wasserstein1_lp_oracle(const GridDensity& a, const GridDensity& b) {
    require_same_grid(a.grid(), b.grid(), "wasserstein1_lp_oracle");
    const TorusGrid& grid = a.grid();
    const std::size_t n = grid.cells();
    if (n > 256) {
        throw Error(ErrorCode::oracle_too_large,
                    "LP oracle refuses " + std::to_string(n) + " cells (limit 256)");
    }
    const double vol = grid.cell_volume();
    // Successive shortest paths on the transportation network
    // source -> supply i -> demand j -> sink with Dijkstra and node potentials.
    std::vector<double> supply(n), demand(n);
    double total_supply = 0.0, total_demand = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        supply[i] = a[i] * vol;
        demand[i] = b[i] * vol;
        total_supply += supply[i];
        total_demand += demand[i];
    }
    // Both masses are 1 to 1e-10; equalize them so the network is balanced.
    for (double& d : demand) d *= total_supply / total_demand;
    std::vector<double> cost(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = torus_distance(grid, i, j);
    std::vector<double> flow(n * n, 0.0);
    std::vector<double> pot_s(n, 0.0), pot_d(n, 0.0);

    const double eps = 1e-15;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist_s(n), dist_d(n);
    std::vector<long> prev_d(n), prev_s(n);
    std::vector<char> done_s(n), done_d(n);

    for (int iter = 0; iter < 100000; ++iter) {
        double remaining = 0.0;
        for (double s : supply) remaining += s;
        if (remaining <= eps * static_cast<double>(n)) break;

        // Distances from the super source, entering each supply node with unused supply.
        std::fill(dist_s.begin(), dist_s.end(), inf);
        std::fill(dist_d.begin(), dist_d.end(), inf);
        std::fill(done_s.begin(), done_s.end(), 0);
        std::fill(done_d.begin(), done_d.end(), 0);
        std::fill(prev_d.begin(), prev_d.end(), -1);
        std::fill(prev_s.begin(), prev_s.end(), -1);
        for (std::size_t i = 0; i < n; ++i)
            if (supply[i] > eps) dist_s[i] = 0.0;

        for (;;) {
            double best = inf;
            long node = -1;
            bool is_supply = true;
            for (std::size_t i = 0; i < n; ++i) {
                if (!done_s[i] && dist_s[i] < best) { best = dist_s[i]; node = static_cast<long>(i); is_supply = true; }
                if (!done_d[i] && dist_d[i] < best) { best = dist_d[i]; node = static_cast<long>(i); is_supply = false; }
            }
            if (node < 0) break;
            if (is_supply) {
                done_s[node] = 1;
                for (std::size_t j = 0; j < n; ++j) {
                    if (done_d[j]) continue;
                    double rc = cost[node * n + j] + pot_s[node] - pot_d[j];
                    if (rc < 0.0) rc = 0.0;
                    double nd = best + rc;
                    if (nd < dist_d[j]) { dist_d[j] = nd; prev_d[j] = node; }
                }
            } else {
                done_d[node] = 1;
                // Residual back-edges demand j -> supply i carry existing flow.
                for (std::size_t i = 0; i < n; ++i) {
                    if (done_s[i] || flow[i * n + node] <= eps) continue;
                    double rc = -cost[i * n + node] - pot_s[i] + pot_d[node];
                    if (rc < 0.0) rc = 0.0;
                    double nd = best + rc;
                    if (nd < dist_s[i]) { dist_s[i] = nd; prev_s[i] = node; }
                }
            }
        }
        long target = -1;
        double best = inf;
        for (std::size_t j = 0; j < n; ++j) {
            if (demand[j] > eps && dist_d[j] < best) { best = dist_d[j]; target = static_cast<long>(j); }
        }
        if (target < 0) {
            if (remaining <= 1e-12) break;
            throw Error(ErrorCode::solver_failure, "LP oracle found no augmenting path");
        }
        for (std::size_t i = 0; i < n; ++i) pot_s[i] += std::min(dist_s[i], best);
        for (std::size_t j = 0; j < n; ++j) pot_d[j] += std::min(dist_d[j], best);

        // Bottleneck along the alternating path back to a supply root.
        double push = demand[target];
        long j = target;
        for (;;) {
            long i = prev_d[j];
            if (prev_s[i] < 0) { push = std::min(push, supply[i]); break; }
            long jp = prev_s[i];
            push = std::min(push, flow[i * n + jp]);
            j = jp;
        }
        j = target;
        demand[target] -= push;
        for (;;) {
            long i = prev_d[j];
            flow[i * n + j] += push;
            if (prev_s[i] < 0) { supply[i] -= push; break; }
            long jp = prev_s[i];
            flow[i * n + jp] -= push;
            j = jp;
        }
    }
    double total = 0.0;
    for (std::size_t k = 0; k < n * n; ++k) total += flow[k] * cost[k];
    return total;
}

GridDensity shift(const GridDensity& a, int cells, int axis) {
    const TorusGrid& grid = a.grid();
    std::vector<double> out(a.size());
    for (std::size_t c = 0; c < a.size(); ++c) out[grid.neighbor(c, axis, cells)] = a[c];
    return GridDensity(grid, std::move(out));
}

void write_grid_csv(const std::string& path, const TorusGrid& grid,
                    const std::vector<std::string>& names,
                    const std::vector<std::span<const double>>& columns, int precision) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::invalid_argument, "cannot open " + path);
    out << std::setprecision(precision);
    out << "i";
    if (grid.dim() == 2) out << ",j";
    for (const auto& name : names) out << ',' << name;
    out << '\n';
    for (std::size_t c = 0; c < grid.cells(); ++c) {
        out << grid.coordinate_index(c, 0);
        if (grid.dim() == 2) out << ',' << grid.coordinate_index(c, 1);
        for (const auto& col : columns) out << ',' << col[c];
        out << '\n';
    }
}

void write_density_csv(const std::string& path, const GridDensity& m, int precision) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::invalid_argument, "cannot open " + path);
    const TorusGrid& grid = m.grid();
    out << std::setprecision(precision);
    out << "# h=" << grid.h() << '\n';
    out << "# mass=" << m.mass() << '\n';
    out << "i";
    if (grid.dim() == 2) out << ",j";
    out << ",m\n";
    for (std::size_t c = 0; c < grid.cells(); ++c) {
        out << grid.coordinate_index(c, 0);
        if (grid.dim() == 2) out << ',' << grid.coordinate_index(c, 1);
        out << ',' << m[c] << '\n';
    }
}

}  // namespace mfg
