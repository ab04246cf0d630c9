#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mfg/dynamics.hpp"
#include "mfg/grid.hpp"
#include "mfg/model.hpp"

namespace mfg {

enum class Averaging {
    line_search,  // Frank-Wolfe step minimizing the energy along the segment
    uniform,      // classical fictitious play weight 1/(k+1)
};

struct SolverOptions {
    int max_iter = 200;
    int restarts = 0;             // random initial belief paths beyond the first
    double tol = 1e-6;            // relative linearization gap
    double fixed_point_tol = 1e-6;
    double dt = 0.0;              // <= 0 selects the CFL step h / drift_cap
    double drift_cap = kDriftCap;
    Averaging averaging = Averaging::line_search;
    int burn_in = 5;
    // When fictitious play stops unconverged: projected quasi-Newton steps on
    // the per-step drifts with adjoint gradients, then a short polish.
    int refine_iter = 400;
    int polish_iter = 30;
    std::uint64_t seed = 1;
    // Time-constant drifts (one value per cell), each tried as an extra initial belief.
    std::vector<std::vector<double>> warm_drifts;
    // Fixed-endpoint penalty continuation.
    double penalty_start = 10.0;
    double penalty_max = 1e7;
    double endpoint_tol = 1e-6;
    int penalty_iter = 25;
};

// splitmix64 of master + index; the per-task seed rule for restarts and sweeps.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

TimeGrid solver_time_grid(const TorusGrid& grid, double T, const SolverOptions& opts);

struct MfgSolution {
    MfgSolution(FlowPath f, ValuePath v) : flow(std::move(f)), value(std::move(v)) {}

    FlowPath flow;
    ValuePath value;
    double energy = 0.0;  // U(T, m0), V_delta(m0) or the fixed-endpoint value
    double kinetic = 0.0;
    double coupling = 0.0;
    int iterations = 0;
    std::vector<double> descent_log;        // belief energy per iteration
    std::vector<double> best_response_log;  // best-response energy per iteration
    std::vector<double> gap_log;            // linearization gap per iteration
    bool converged = false;
    int restarts = 0;
    std::vector<double> restart_energies;
    double gap = 0.0;
    double fixed_point_gap = 0.0;  // sup |belief drift - D_pH(Du)| on charged cells
    std::size_t cap_active = 0;
    // Discounted runs.
    double truncated = 0.0;
    double tail_lower = 0.0;
    double tail_upper = 0.0;
    double tail_estimate = 0.0;
    // Fixed-endpoint runs.
    double terminal_mismatch = 0.0;
    double penalty = 0.0;
    bool repaired = false;
};

struct ControlGradient {
    double energy;
    std::vector<double> gradient;  // K * cells, d energy / d alpha^k_i
};

// Energy (discount delta) of the flow driven by the drifts alpha (one row of
// cells per step) and its exact gradient by the adjoint of fp_forward.
ControlGradient control_energy_gradient(const GridDensity& m0, std::span<const double> alpha,
                                        const QuadraticHamiltonian& H,
                                        const CouplingFunctional& F, double sigma, double delta,
                                        const TimeGrid& tg);

MfgSolution solve_finite_horizon(const GridDensity& m0, double T, const QuadraticHamiltonian& H,
                                 const CouplingFunctional& F, double sigma,
                                 const SolverOptions& opts = {});

// Horizon T_cut = discounted_horizon(delta); energy = truncated + tail estimate.
MfgSolution solve_discounted(const GridDensity& m0, double delta, const QuadraticHamiltonian& H,
                             const CouplingFunctional& F, double sigma,
                             const SolverOptions& opts = {});

struct StationaryOptions {
    int multistarts = 8;
    int max_iter = 3000;
    double grad_tol = 1e-8;
    int memory = 10;
    std::uint64_t seed = 1;
    // Amplitude of the random log-density perturbation per start.
    double start_amplitude = 1.0;
    // Extra deterministic starts (for example translates of a reference).
    std::vector<GridDensity> starts;
};

struct StationaryMinimum {
    GridDensity density;
    double flux_constant;
    double energy;
    double kinetic;
    double transport;  // kinetic cost of the constant momentum c alone (divergence-free part)
    double coupling;
    double distance_to_uniform;
    double gradient_norm;
    int hits;  // starts that converged to this minimum
};

struct StationarySolution {
    explicit StationarySolution(GridDensity d) : density(std::move(d)) {}

    GridDensity density;
    double flux_constant = 0.0;
    double lambda_bar = 0.0;
    double energy = 0.0;
    double energy_gradient_norm = 0.0;
    int failed_starts = 0;
    // Distinct local minima, sorted by energy (the last column of the
    // transport-versus-coupling trade-off table).
    std::vector<StationaryMinimum> minima;
};

// Energy per unit time of the constant path m: face momenta
// w_i = sigma (m_{i+1} - m_i)/h + c carried by the upwind cell cost
// ((b m_i - P_i)^2 + (b m_i + N_i)^2 - (b m_i)^2) / (2 m_i), P_i = w_i+, N_i = w_{i-1}-,
// plus F(m). This is exactly the running cost fp_forward assigns to holding m.
double stationary_energy(const GridDensity& m, double c, const QuadraticHamiltonian& H,
                         const CouplingFunctional& F, double sigma);

// Cell drift alpha (velocity -alpha) carrying the face momenta of (m, c).
std::vector<double> stationary_drift(const GridDensity& m, double c, double sigma);

StationarySolution solve_stationary(const TorusGrid& grid, const QuadraticHamiltonian& H,
                                    const CouplingFunctional& F, double sigma,
                                    const StationaryOptions& opts = {});

// Runs the base controls on [0, h_len], then blends linearly to m1 over
// [h_len, h_len + tau] with the corrective flux D zeta + sigma*theta*D m1,
// Lap zeta = (m_free - m1)/tau. tg must put nodes at h_len and h_len + tau.
FlowPath connect_measures(const GridDensity& m0, const GridDensity& m1, const Controls& base,
                          double h_len, double tau, double sigma);
FlowPath connect_measures(const GridDensity& m0, const GridDensity& m1,
                          std::span<const GridField> base_drift, double h_len, double tau,
                          double sigma, const TimeGrid& tg);

// Free solution on [0, T-1] joined to m1 by connect_measures on [T-1, T], then
// penalized descent on mu*d1(m(T), m1)^2 with mu doubling. If the mismatch
// stays above the tolerance the last unit of time is rebuilt with
// connect_measures so the returned flow ends exactly at m1.
MfgSolution solve_fixed_endpoint(const GridDensity& m0, const GridDensity& m1, double T,
                                 const QuadraticHamiltonian& H, const CouplingFunctional& F,
                                 double sigma, const SolverOptions& opts = {});

}  // namespace mfg
