#pragma once

#include <span>
#include <vector>

#include "mfg/grid.hpp"
#include "mfg/model.hpp"

namespace mfg {

inline constexpr double kDriftCap = 20.0;

// max(5/delta, 20)
double discounted_horizon(double delta);
// Largest dt keeping dt * drift_cap / h <= 1.
double cfl_time_step(const TorusGrid& grid, double drift_cap);
// Effective bound on p + q used by the HJB step for a given dt.
double rate_cap(const TorusGrid& grid, double dt, double drift_cap);

// (I - sigma*dt*Lap)^{-1} on the periodic 1-D grid as a dense circulant
// with nonnegative entries summing to one per column.
class ImplicitDiffusion {
public:
    ImplicitDiffusion(const TorusGrid& grid, double sigma, double dt);
    void apply(std::span<const double> in, std::span<double> out) const;
    std::span<const double> first_column() const noexcept { return column_; }

private:
    std::size_t n_;
    std::vector<double> column_;
    std::vector<double> matrix_;
};

// Per-interval jump rates of the controlled walk: mass in cell i moves right
// at rate right[k*n+i] and left at rate left[k*n+i] during step k. The drift
// alpha = -(right - left), so the momentum is w = m*(right - left).
struct Controls {
    Controls(const TorusGrid& grid, const TimeGrid& time);
    TorusGrid grid;
    TimeGrid time;
    std::vector<double> right;
    std::vector<double> left;
};

// Discrete flow: densities at the K+1 nodes and, per interval, the split cell
// momenta (right = P >= 0, left = N >= 0, w = P - N) used by the energy and
// the face fluxes used by the Fokker-Planck residual. Every field is linear
// in the path, so convex combinations of flows are flows.
struct FlowPath {
    FlowPath(const TorusGrid& grid, const TimeGrid& time, double sigma);

    TorusGrid grid;
    TimeGrid time;
    double sigma;
    std::vector<double> m;      // (K+1) * cells
    std::vector<double> right;  // K * cells
    std::vector<double> left;   // K * cells
    std::vector<double> flux;   // K * cells, face i+1/2 of cell i

    int steps() const noexcept { return time.k(); }
    std::size_t cells() const noexcept { return grid.cells(); }
    std::span<const double> density(int k) const;
    std::span<double> density(int k);
    std::span<const double> right_at(int k) const;
    std::span<const double> left_at(int k) const;
    std::span<const double> flux_at(int k) const;
    GridDensity density_at(int k) const;
    GridField momentum(int k) const;

    // this <- (1 - rho) * this + rho * other
    void mix(const FlowPath& other, double rho);
};

FlowPath fp_forward(const GridDensity& m0, const Controls& controls, double sigma);
// alpha: one GridField per interval; uses rates right = max(-alpha, 0),
// left = max(alpha, 0). Rejects |alpha| > drift_cap.
FlowPath fp_forward(const GridDensity& m0, std::span<const GridField> alpha, double sigma,
                    const TimeGrid& tg, double drift_cap = kDriftCap);

// h * sum |(m^{k+1} - m^k)/dt - sigma Lap m^{k+1} + div flux^k| per step.
std::vector<double> fp_residuals(const FlowPath& path);

struct ValuePath {
    ValuePath(const TorusGrid& grid, const TimeGrid& time, double delta);

    TorusGrid grid;
    TimeGrid time;
    double delta;
    std::vector<double> u;  // (K+1) * cells
    Controls controls;      // optimal rates per interval
    std::vector<double> du_sup;   // max |D+ u^k|
    std::vector<double> d2u_sup;  // max |Lap u^k|
    std::size_t cap_active = 0;   // cells where the rate cap bound

    std::span<const double> value(int k) const;
};

// Backward dynamic programming step exactly adjoint to fp_forward:
//   ut = S(gamma*u^{k+1} + dt*f^k),  u^k = ut - dt*g(D+ut, D-ut),
// with gamma = exp(-delta*dt) and g the Godunov (upwind) Hamiltonian of the
// right/left rates. f_path holds K functions; f^k acts on interval k and is
// evaluated at its right node.
ValuePath hjb_backward(const TorusGrid& grid, std::span<const double> terminal,
                       std::span<const double> f_path, const QuadraticHamiltonian& H, double sigma,
                       double delta, const TimeGrid& tg, double drift_cap = kDriftCap);

// u = -2 sigma log(phi) with (I - dt sigma Lap + dt f/(2 sigma)) phi^k = phi^{k+1}.
ValuePath hopf_cole_oracle(const TorusGrid& grid, std::span<const double> terminal,
                           std::span<const double> f, const QuadraticHamiltonian& H, double sigma,
                           double delta, const TimeGrid& tg);

struct EnergyReport {
    double kinetic = 0.0;
    double coupling = 0.0;
    double total = 0.0;
    bool infinite = false;
    std::vector<double> rate;  // per-interval running cost per unit time
};

// Interval k costs dt*[kinetic(m^k, P^k, N^k) + F(m^{k+1})].
EnergyReport energy_finite(const FlowPath& path, const QuadraticHamiltonian& H,
                           const CouplingFunctional& F);

struct DiscountedEnergy {
    double truncated = 0.0;
    double tail_lower = 0.0;
    double tail_upper = 0.0;
    double tail_estimate = 0.0;
    double value = 0.0;  // truncated + tail_estimate
    bool infinite = false;
    std::vector<double> rate;
};

// Interval k weighted by exp(-delta*t_k). The tail beyond the horizon is
// bracketed by [inf F, |b|^2/2 + sup_path F] per unit time and estimated from
// the mean rate over the last quarter, clipped into the bracket.
DiscountedEnergy energy_discounted(const FlowPath& path, const QuadraticHamiltonian& H,
                                   const CouplingFunctional& F, double delta);

// Kinetic cost h*sum of the split-momentum cell costs.
double kinetic_cost(const TorusGrid& grid, std::span<const double> m, std::span<const double> P,
                    std::span<const double> N, double b);

// m(t, x) = profile(x - speed*t) by trigonometric interpolation of the grid
// profile, cell momentum w = speed*m + sigma*dm/dx at the left node. The face
// flux uses the step-averaged advective part, which leaves the discrete
// Fokker-Planck residual at O(h^2).
FlowPath traveling_wave_path(const GridDensity& profile, double speed, double sigma,
                             const TimeGrid& tg);

}  // namespace mfg
