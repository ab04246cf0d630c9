#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfg/dynamics.hpp"
#include "mfg/grid.hpp"
#include "mfg/model.hpp"
#include "mfg/solvers.hpp"

namespace mfg {

enum class LambdaMethod { cesaro, abel, stationary };
const char* to_string(LambdaMethod method);

struct LambdaEstimate {
    double value = 0.0;  // estimate of lambda (so -value is the energy rate)
    LambdaMethod method = LambdaMethod::cesaro;
    // (T or delta, raw estimate -U/T or -delta V).
    std::vector<std::pair<double, double>> table;
    std::vector<double> energies;
    double uncertainty = 0.0;
    bool converged = true;
};

// Headline from the slope of U over the two largest horizons: U(T) ~ chi - lambda T.
LambdaEstimate lambda_from_finite(const GridDensity& m0, std::span<const double> horizons,
                                  const QuadraticHamiltonian& H, const CouplingFunctional& F,
                                  double sigma, const SolverOptions& opts = {});

// Headline by linear Richardson extrapolation to delta = 0 of the last two entries.
LambdaEstimate lambda_from_discounted(const GridDensity& m0, std::span<const double> deltas,
                                      const QuadraticHamiltonian& H, const CouplingFunctional& F,
                                      double sigma, const SolverOptions& opts = {});

LambdaEstimate lambda_from_stationary(const StationarySolution& st);

struct CorrectorSample {
    GridDensity density;
    double value;          // V_delta(m)
    double chi;            // V_delta(m) - V_delta(eta)
    double chi_at_t;       // chi at the optimal path's density at time t
    double segment_cost;   // undiscounted cost of that path on [0, t]
    double residual;       // chi - (segment_cost + chi_at_t + lambda t)
};

struct CorrectorEstimate {
    double delta;
    double t;
    GridDensity reference;
    double reference_value;
    double lambda_hat;  // -delta V_delta(eta)
    std::vector<CorrectorSample> samples;
    std::vector<double> dpp_residuals;
};

CorrectorEstimate corrector_estimate(double delta, const GridDensity& eta,
                                     std::span<const GridDensity> sample,
                                     const QuadraticHamiltonian& H, const CouplingFunctional& F,
                                     double sigma, const SolverOptions& opts = {}, double t = 1.0);

struct CalibratedWindow {
    FlowPath window;       // central part of the long solve, centred at time 0
    FlowPath full;         // the solve on [0, 2 T_big]
    std::vector<double> rate;  // running cost per unit time along the full path
    double mean_rate = 0.0;    // over the window
    double rate_spread = 0.0;  // max |unit-time moving average - mean_rate| in the window
    // Time spent near each end of the full path before the moving average
    // settles within 5% of mean_rate (absolute floor 1e-4).
    double boundary_layer_start = 0.0;
    double boundary_layer_end = 0.0;
    double energy = 0.0;
    bool converged = false;
};

CalibratedWindow calibrated_window(const GridDensity& m0, double T_big,
                                   const QuadraticHamiltonian& H, const CouplingFunctional& F,
                                   double sigma, const SolverOptions& opts = {});

enum class RecurrenceClass { stationary, periodic, wandering };
const char* to_string(RecurrenceClass c);

struct RecurrenceThresholds {
    double stationary = 0.0;  // <= 0 selects 2 (h + dt_sample)
    double periodic = 0.0;    // <= 0 selects 2 (h + dt_sample)
    double dt_sample = 0.0;   // <= 0 picks a stride with at most max_samples samples
    int max_samples = 1000;
};

struct RecurrenceReport {
    std::optional<FlowPath> window;
    RecurrenceClass classification = RecurrenceClass::wandering;
    std::optional<double> period;
    std::vector<double> times;
    std::vector<double> matrix;       // samples x samples, d1 between sampled densities
    std::vector<double> lag_profile;  // max_i d1(m(t_i), m(t_{i+L})), index L
    double eps_stationary = 0.0;
    double eps_periodic = 0.0;
    double dt_sample = 0.0;
    double max_offdiagonal = 0.0;
    double distance_to_mean = 0.0;  // max_t d1(m(t), time-averaged density)
    std::vector<double> period_candidates;  // local minima of the lag profile below eps_periodic
};

// Stationary iff every sampled pair is within eps_stationary. Periodic if the
// lag profile leaves eps_periodic and comes back below it at some lag no
// larger than half the window; the period is the lag of the profile's minimum
// in that first return, times dt_sample.
RecurrenceReport recurrence_analysis(const FlowPath& path, const RecurrenceThresholds& th = {});

// 1/2 int |m'|^2 / m with m the trigonometric interpolant of the grid values,
// by the midpoint rule on `refine` points per cell.
double fisher_information_grid(const GridDensity& m0, int refine = 8);

enum class CouplingKind { convolution, sec2 };
const char* to_string(CouplingKind kind);

struct GapOptions {
    std::vector<double> horizons{10.0, 20.0, 40.0};
    std::vector<double> deltas{0.2, 0.1, 0.05};
    SolverOptions solver;
    StationaryOptions stationary;
    double window_T = 20.0;
    RecurrenceThresholds recurrence;
    double tol_equality = 0.05;   // monotone |lambda - lambda_bar| relative
    double tol_tauberian = 0.05;  // relative to max(|lambda|, 0.01)
    double tol_upper = 1e-3;      // -lambda <= sigma^2 I + tol_upper
    double margin = 10.0;         // -lambda_bar >= margin sigma^2 I
    bool run_window = true;
};

struct CertificateCheck {
    std::string name;
    bool passed;
    double lhs;
    double rhs;
    std::string detail;
};

struct GapReport {
    std::string coupling;
    double sigma = 0.0;
    LambdaEstimate cesaro;
    LambdaEstimate abel;
    double lambda_hat = 0.0;
    double lambda_bar = 0.0;
    double k_hat = 0.0;  // -lambda_bar from the multistart minimum
    double combined_uncertainty = 0.0;
    std::vector<StationaryMinimum> stationary_minima;
    double fisher = 0.0;           // I of m0
    double wave_rate = 0.0;        // energy per unit time of the traveling wave
    double wave_residual = 0.0;    // max FP residual along it
    double wave_coupling_sup = 0.0;
    std::optional<CalibratedWindow> window;
    std::optional<RecurrenceReport> recurrence;
    std::vector<CertificateCheck> checks;
    bool passed = true;
};

GapReport gap_experiment(const GridDensity& m0, const QuadraticHamiltonian& H,
                         const CouplingFunctional& F, double sigma, CouplingKind kind,
                         const GapOptions& opts = {});

}  // namespace mfg
