#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mfg {

using GridFunction = std::vector<double>;

// Uniform periodic grid on the unit torus [0,1)^dim. Cell i sits at x = i*h.
class TorusGrid {
public:
    TorusGrid(int dim, int n);

    int dim() const noexcept { return dim_; }
    int n() const noexcept { return n_; }
    double h() const noexcept { return h_; }
    std::size_t cells() const noexcept { return cells_; }
    double cell_volume() const noexcept;

    // Row-major with axis 0 fastest; indices wrap periodically.
    std::size_t index(int i, int j = 0) const noexcept;
    std::size_t neighbor(std::size_t cell, int axis, int step) const noexcept;
    int coordinate_index(std::size_t cell, int axis) const noexcept;
    double coordinate(std::size_t cell, int axis = 0) const noexcept;

    friend bool operator==(const TorusGrid& a, const TorusGrid& b) noexcept {
        return a.dim_ == b.dim_ && a.n_ == b.n_;
    }

private:
    int dim_;
    int n_;
    double h_;
    std::size_t cells_;
};

void require_same_grid(const TorusGrid& a, const TorusGrid& b, const char* what);
void require_dim1(const TorusGrid& grid, const char* what);

class GridDensity {
public:
    // Validates nonnegativity and unit mass (10^-10).
    GridDensity(const TorusGrid& grid, std::vector<double> values);

    static GridDensity uniform(const TorusGrid& grid);
    // Rescales nonnegative weights to unit mass.
    static GridDensity normalized(const TorusGrid& grid, std::vector<double> weights);

    const TorusGrid& grid() const noexcept { return grid_; }
    std::span<const double> values() const noexcept { return values_; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }
    std::size_t size() const noexcept { return values_.size(); }
    double mass() const noexcept;
    double min() const noexcept;

private:
    TorusGrid grid_;
    std::vector<double> values_;
};

// One component per axis and cell. Component a of cell c lives on the face
// between c and c + e_a, which makes gradient and divergence exact adjoints
// and their composition the compact (2*dim+1)-point Laplacian.
class GridField {
public:
    explicit GridField(const TorusGrid& grid);
    GridField(const TorusGrid& grid, std::vector<double> values);

    const TorusGrid& grid() const noexcept { return grid_; }
    std::span<const double> component(int axis) const noexcept;
    std::span<double> component(int axis) noexcept;
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }

private:
    TorusGrid grid_;
    std::vector<double> values_;
};

class TimeGrid {
public:
    TimeGrid(double t0, double t1, int k);
    // Smallest k with (t1 - t0)/k <= dt_max.
    static TimeGrid with_max_step(double t0, double t1, double dt_max);

    double t0() const noexcept { return t0_; }
    double t1() const noexcept { return t1_; }
    int k() const noexcept { return k_; }
    double dt() const noexcept { return dt_; }
    double time(int j) const noexcept { return t0_ + dt_ * j; }

private:
    double t0_;
    double t1_;
    int k_;
    double dt_;
};

// h^dim * sum, left to right.
double integrate(const TorusGrid& grid, std::span<const double> f);
double inner(const TorusGrid& grid, std::span<const double> a, std::span<const double> b);

GridField gradient(const TorusGrid& grid, std::span<const double> f);
GridFunction divergence(const GridField& v);
GridFunction laplacian(const TorusGrid& grid, std::span<const double> f);

// Zero-mean solution of laplacian(zeta) = rhs by FFT diagonalization.
GridFunction poisson_solve(const TorusGrid& grid, std::span<const double> rhs);

double wasserstein1_circle(const GridDensity& a, const GridDensity& b);

struct KantorovichResult {
    double distance;
    // 1-Lipschitz (|phi_{i+1} - phi_i| <= h) optimal dual potential with
    // integral of phi against (a - b) equal to the distance.
    GridFunction potential;
};
KantorovichResult kantorovich_circle(const GridDensity& a, const GridDensity& b);

// Exact transport cost with periodic ground distance by min-cost flow.
// Refuses grids with more than 256 cells.
double wasserstein1_lp_oracle(const GridDensity& a, const GridDensity& b);

GridDensity shift(const GridDensity& a, int cells, int axis = 0);

// CSV: one row per cell with per-axis indices and value(s).
void write_grid_csv(const std::string& path, const TorusGrid& grid,
                    const std::vector<std::string>& names,
                    const std::vector<std::span<const double>>& columns, int precision = 17);
void write_density_csv(const std::string& path, const GridDensity& m, int precision = 17);

}  // namespace mfg
