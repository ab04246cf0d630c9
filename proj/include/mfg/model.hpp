#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mfg/grid.hpp"

namespace mfg {

// H(x,p) = |p|^2/2 - p.b,  H*(x,a) = |a+b|^2/2,  D_pH = p - b.
class QuadraticHamiltonian {
public:
    QuadraticHamiltonian() = default;
    explicit QuadraticHamiltonian(std::vector<double> b) : b_(std::move(b)) {}
    static QuadraticHamiltonian one_d(double b) { return QuadraticHamiltonian({b}); }

    std::span<const double> b() const noexcept { return b_; }
    // First drift component; 0 when no drift was given.
    double b0() const noexcept { return b_.empty() ? 0.0 : b_[0]; }
    double drift_norm2() const noexcept;

    double H(std::span<const double> p) const;
    double Hstar(std::span<const double> a) const;
    std::vector<double> DpH(std::span<const double> p) const;
    std::vector<double> DaHstar(std::span<const double> a) const;

private:
    std::vector<double> b_;
};

// F : densities -> R together with its flat derivative. The span-based
// methods skip density validation and are what the solvers call.
class CouplingFunctional {
public:
    explicit CouplingFunctional(const TorusGrid& grid) : grid_(grid) {}
    virtual ~CouplingFunctional() = default;

    const TorusGrid& grid() const noexcept { return grid_; }

    double value(const GridDensity& m) const;
    GridFunction derivative(const GridDensity& m) const;

    virtual double value(std::span<const double> m) const = 0;
    // Normalized: h^dim * sum(out * m) = 0.
    virtual void derivative(std::span<const double> m, std::span<double> out) const = 0;
    virtual std::string kind() const = 0;
    // A lower bound on F over all densities (used for discounted tail brackets).
    virtual double lower_bound() const = 0;

protected:
    void normalize(std::span<const double> m, std::span<double> out) const;

    TorusGrid grid_;
};

using CouplingPtr = std::shared_ptr<const CouplingFunctional>;

class ZeroCoupling final : public CouplingFunctional {
public:
    explicit ZeroCoupling(const TorusGrid& grid) : CouplingFunctional(grid) {}
    double value(std::span<const double>) const override { return 0.0; }
    void derivative(std::span<const double>, std::span<double> out) const override;
    std::string kind() const override { return "zero"; }
    double lower_bound() const override { return 0.0; }
    using CouplingFunctional::derivative;
    using CouplingFunctional::value;
};

// F(m) = 1/2 h^2 sum_ij k(x_i - x_j) m_i m_j with an even kernel whose Fourier
// coefficients are nonnegative (hence monotone).
class ConvolutionCoupling final : public CouplingFunctional {
public:
    // k(x) = sum_k c_k cos(2 pi k x), every c_k >= 0.
    ConvolutionCoupling(const TorusGrid& grid, std::vector<double> cosine_coefficients);

    double value(std::span<const double> m) const override;
    void derivative(std::span<const double> m, std::span<double> out) const override;
    std::string kind() const override { return "convolution"; }
    double lower_bound() const override;
    using CouplingFunctional::derivative;
    using CouplingFunctional::value;

    std::span<const double> kernel() const noexcept { return kernel_; }
    std::span<const double> cosine_coefficients() const noexcept { return coeffs_; }
    // h * sum_j k(x_i - x_j) m_j.
    void convolve(std::span<const double> m, std::span<double> out) const;

private:
    std::vector<double> coeffs_;
    std::vector<double> kernel_;   // k at offsets i*h
    std::vector<double> columns_;  // h*k(x_i - x_j), column-major
};

struct DictionaryFeature {
    std::string label;
    std::vector<double> values;  // phi at the cell points
    double lipschitz;            // sup|phi'| measured on a fine grid
    double second_derivative;    // sup|phi''| measured on a fine grid
};

class Dictionary {
public:
    Dictionary(const TorusGrid& grid, std::vector<DictionaryFeature> features);

    const TorusGrid& grid() const noexcept { return grid_; }
    std::size_t size() const noexcept { return features_.size(); }
    const std::vector<DictionaryFeature>& features() const noexcept { return features_; }
    double max_second_derivative() const noexcept;

    // s_n = h * sum_i phi_n(x_i) (m_i - c_i)
    void project(std::span<const double> m, std::span<const double> centre,
                 std::span<double> out) const;
    // out_i = sum_n w_n phi_n(x_i)
    void combine(std::span<const double> w, std::span<double> out) const;
    // max_n s_n
    double psi(std::span<const double> m, std::span<const double> centre) const;

private:
    TorusGrid grid_;
    std::vector<DictionaryFeature> features_;
    std::vector<double> by_cell_;     // cell-major, cells x features
    std::vector<double> by_feature_;  // feature-major, features x cells
};

struct DictionaryOptions {
    // Fourier features for k = 1..fourier_features/2 (sine and cosine each).
    std::size_t fourier_features = 64;
    // Fejer-smoothed triangle waves with random phase and frequency.
    std::size_t random_features = 192;
    bool include_negations = true;
    int max_random_frequency = 3;
    int fejer_order = 31;
    std::uint64_t seed = 1;
};

Dictionary build_dictionary(const TorusGrid& grid, const DictionaryOptions& opts);
Dictionary build_dictionary(const TorusGrid& grid, std::size_t n_features);

// max over the sample of |Psi_N(m) - d1(m, reference)|.
double dictionary_quality(const Dictionary& dict, const GridDensity& reference,
                          std::span<const GridDensity> sample);

double smooth_max(std::span<const double> values, double delta_s);
// Softmax weights matching smooth_max.
std::vector<double> smooth_max_weights(std::span<const double> values, double delta_s);

// Nonincreasing C2 quintic cutoff: 1 below 2eps/5, 0 above 3eps/5.
double cutoff(double s, double eps);
double cutoff_derivative(double s, double eps);
// The same shape from 0 to 1 on [lo, hi] (nondecreasing).
double smoothstep(double s, double lo, double hi);
double smoothstep_derivative(double s, double lo, double hi);

class BumpCoupling final : public CouplingFunctional {
public:
    // delta_s <= 0 selects eps / (5 ln N).
    BumpCoupling(GridDensity centre, double epsilon, std::shared_ptr<const Dictionary> dict,
                 double amplitude = 1.0, double delta_s = 0.0);

    double value(std::span<const double> m) const override;
    void derivative(std::span<const double> m, std::span<double> out) const override;
    std::string kind() const override { return "bump"; }
    double lower_bound() const override { return amplitude_ < 0 ? amplitude_ : 0.0; }
    using CouplingFunctional::derivative;
    using CouplingFunctional::value;

    // Smoothed Psi_N^delta(m) before the cutoff.
    double smoothed_psi(std::span<const double> m) const;
    double max_psi(std::span<const double> m) const;

    const GridDensity& centre() const noexcept { return centre_; }
    double epsilon() const noexcept { return epsilon_; }
    double amplitude() const noexcept { return amplitude_; }
    double delta_s() const noexcept { return delta_s_; }
    const Dictionary& dictionary() const noexcept { return *dict_; }

    // Unnormalized chain-rule gradient A*zeta'(Psi)*sum_n w_n phi_n.
    void raw_derivative(std::span<const double> m, std::span<double> out) const;

private:
    GridDensity centre_;
    double epsilon_;
    std::shared_ptr<const Dictionary> dict_;
    double amplitude_;
    double delta_s_;
};

// Equal to 1 on A_points and 0 on B_points: threshold(smooth_max_n Phi_n)
// with Phi_n a unit bump of radius eps at each A point.
class SeparatorCoupling final : public CouplingFunctional {
public:
    // epsilon <= 0 selects the minimal A/B distance.
    SeparatorCoupling(std::vector<GridDensity> a_points, std::vector<GridDensity> b_points,
                      std::shared_ptr<const Dictionary> dict, double epsilon = 0.0);

    double value(std::span<const double> m) const override;
    void derivative(std::span<const double> m, std::span<double> out) const override;
    std::string kind() const override { return "separator"; }
    double lower_bound() const override { return 0.0; }
    using CouplingFunctional::derivative;
    using CouplingFunctional::value;

    // Value before the 1/3..2/3 threshold.
    double pre_threshold(std::span<const double> m) const;
    double epsilon() const noexcept { return epsilon_; }
    double min_separation() const noexcept { return min_separation_; }

private:
    std::vector<BumpCoupling> bumps_;
    double epsilon_;
    double min_separation_;
    double delta_sep_;
};

double separator_value(std::span<const GridDensity> a_points, std::span<const GridDensity> b_points,
                       const GridDensity& m, std::shared_ptr<const Dictionary> dict);

// Amplitude-2 bump at the uniform density whose radius stays below half the
// distance from uniform to every translate of the reference.
class Sec2Coupling final : public CouplingFunctional {
public:
    // epsilon <= 0 selects the largest admissible radius.
    Sec2Coupling(GridDensity reference, std::shared_ptr<const Dictionary> dict,
                 double epsilon = 0.0);

    double value(std::span<const double> m) const override { return inner_.value(m); }
    void derivative(std::span<const double> m, std::span<double> out) const override {
        inner_.derivative(m, out);
    }
    std::string kind() const override { return "sec2"; }
    double lower_bound() const override { return 0.0; }
    using CouplingFunctional::derivative;
    using CouplingFunctional::value;

    const GridDensity& reference() const noexcept { return reference_; }
    double epsilon() const noexcept { return inner_.epsilon(); }
    // min over cell shifts s of d1(uniform, shift(reference, s)).
    double separation_distance() const noexcept { return separation_; }
    const BumpCoupling& inner() const noexcept { return inner_; }

    static double uniform_to_translates(const GridDensity& reference);

private:
    GridDensity reference_;
    double separation_;
    BumpCoupling inner_;
};

// Fisher-type integral 1/2 int |m'|^2 / m for a smooth positive profile given
// as a periodic function; evaluated by composite quadrature on `points` nodes.
double fisher_information(const std::function<double(double)>& profile,
                          const std::function<double(double)>& profile_derivative, int points);

}  // namespace mfg
