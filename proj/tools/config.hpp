#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mfg/grid.hpp"
#include "mfg/longtime.hpp"
#include "mfg/model.hpp"
#include "mfg/solvers.hpp"

namespace mfg::cli {

// Flat "section.key" -> raw value, in key order.
using RawConfig = std::map<std::string, std::string>;

struct DensitySpec {
    std::string kind = "uniform";  // uniform | cosine | bump
    double amplitude = 0.5;        // cosine: 1 + a cos(2 pi (x - phase))
    double phase = 0.0;
    double width = 0.1;            // bump: floor + exp(-d^2 / (2 width^2))
    double floor = 0.1;
};

struct CouplingSpec {
    std::string kind = "zero";  // zero | convolution | bump | sec2 | separator
    std::vector<double> coefficients{1.0};
    double epsilon = 0.0;
    double amplitude = 1.0;
    double delta_s = 0.0;
    int dictionary_fourier = 64;
    int dictionary_random = 192;
    std::uint64_t seed = 1;
    DensitySpec centre;  // bump centre
    // separator: cosine densities with these phases and centre.amplitude
    std::vector<double> a_phases{0.0};
    std::vector<double> b_phases{0.5};
};

struct ExperimentConfig {
    std::string experiment = "finite";  // finite | discounted | stationary | tauberian | gap | mather | connect
    int dim = 1;
    int n = 64;
    double T = 10.0;
    std::vector<double> T_list;
    double delta = 0.1;
    std::vector<double> delta_list;
    double window_T = 20.0;
    double tau = 1.0;
    double b = 0.0;
    double sigma = 0.05;
    DensitySpec initial;
    DensitySpec target;
    CouplingSpec coupling;
    SolverOptions solver;
    StationaryOptions stationary;
    double tol_equality = 0.05;
    double tol_tauberian = 0.05;
    double tol_upper = 1e-3;
    double margin = 10.0;
    double tol_fixed = 0.05;
    std::string expect_window = "any";  // any | stationary | non_stationary
    std::string directory;
    int precision = 17;
    int flow_stride = 1;
    std::map<std::string, std::vector<std::string>> sweep;
    RawConfig raw;
};

struct ParseResult {
    ExperimentConfig config;
    std::vector<std::string> errors;
};

struct ValidationReport {
    std::vector<std::string> errors;
    std::vector<std::pair<std::string, std::string>> derived;
    bool ok() const { return errors.empty(); }
};

RawConfig read_raw_config(const std::string& path);
RawConfig parse_raw_config(const std::string& text);
// Typed parse with field-level errors; unknown sections or keys are errors.
ParseResult parse_config(const RawConfig& raw);
ParseResult load_config(const std::string& path);

// Semantic checks and derived quantities; no solves.
ValidationReport validate_config(const ExperimentConfig& cfg);

std::vector<std::string> known_keys();

// Model objects built from a validated config.
struct Model {
    TorusGrid grid;
    GridDensity m0;
    QuadraticHamiltonian H;
    CouplingPtr F;
    double sigma;
};

GridDensity make_density(const TorusGrid& grid, const DensitySpec& spec);
Model build_model(const ExperimentConfig& cfg);

// Cartesian product of the sweep lists, keys in sorted order, last key fastest.
std::vector<RawConfig> sweep_points(const ExperimentConfig& cfg);

}  // namespace mfg::cli
