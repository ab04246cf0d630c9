#include "mfg/model.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <iomanip>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>

#include "fftw_lock.hpp"
#include "mfg/error.hpp"
#include "mfg/kernels.hpp"

namespace mfg {

double QuadraticHamiltonian::drift_norm2() const noexcept {
    double s = 0.0;
    for (double v : b_) s += v * v;
    return s;
}

namespace {

double drift_component(std::span<const double> b, std::size_t i) {
    return i < b.size() ? b[i] : 0.0;
}

}  // namespace

double QuadraticHamiltonian::H(std::span<const double> p) const {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += 0.5 * p[i] * p[i] - p[i] * drift_component(b_, i);
    return s;
}

double QuadraticHamiltonian::Hstar(std::span<const double> a) const {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double v = a[i] + drift_component(b_, i);
        s += 0.5 * v * v;
    }
    return s;
}

std::vector<double> QuadraticHamiltonian::DpH(std::span<const double> p) const {
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] - drift_component(b_, i);
    return out;
}

std::vector<double> QuadraticHamiltonian::DaHstar(std::span<const double> a) const {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + drift_component(b_, i);
    return out;
}

double CouplingFunctional::value(const GridDensity& m) const {
    require_same_grid(grid_, m.grid(), kind().c_str());
    return value(m.values());
}

GridFunction CouplingFunctional::derivative(const GridDensity& m) const {
    require_same_grid(grid_, m.grid(), kind().c_str());
    GridFunction out(m.size());
    derivative(m.values(), out);
    return out;
}

void CouplingFunctional::normalize(std::span<const double> m, std::span<double> out) const {
    double mean = inner(grid_, out, m);
    for (double& v : out) v -= mean;
}

void ZeroCoupling::derivative(std::span<const double>, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
}

ConvolutionCoupling::ConvolutionCoupling(const TorusGrid& grid, std::vector<double> coeffs)
    : CouplingFunctional(grid), coeffs_(std::move(coeffs)) {
    require_dim1(grid, "ConvolutionCoupling");
    if (coeffs_.empty()) throw Error(ErrorCode::invalid_argument, "kernel needs coefficients");
    for (double c : coeffs_) {
        if (!(c >= 0.0)) {
            throw Error(ErrorCode::invalid_argument,
                        "kernel cosine coefficients must be nonnegative for monotonicity");
        }
    }
    const std::size_t n = grid.cells();
    kernel_.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double x = grid.coordinate(i);
        double s = 0.0;
        for (std::size_t k = 0; k < coeffs_.size(); ++k) s += coeffs_[k] * std::cos(2.0 * M_PI * k * x);
        kernel_[i] = s;
    }
    columns_.assign(n * n, 0.0);
    const double h = grid.h();
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) columns_[j * n + i] = h * kernel_[(i + n - j) % n];
}

void ConvolutionCoupling::convolve(std::span<const double> m, std::span<double> out) const {
    const std::size_t n = grid_.cells();
    kernels::active().combine_columns(columns_.data(), n, n, m.data(), out.data());
}

double ConvolutionCoupling::value(std::span<const double> m) const {
    std::vector<double> conv(m.size());
    convolve(m, conv);
    return 0.5 * inner(grid_, conv, m);
}

void ConvolutionCoupling::derivative(std::span<const double> m, std::span<double> out) const {
    convolve(m, out);
    normalize(m, out);
}

double ConvolutionCoupling::lower_bound() const { return 0.5 * coeffs_[0]; }

Dictionary::Dictionary(const TorusGrid& grid, std::vector<DictionaryFeature> features)
    : grid_(grid), features_(std::move(features)) {
    if (features_.empty()) throw Error(ErrorCode::invalid_argument, "dictionary is empty");
    const std::size_t n = grid_.cells();
    const std::size_t nf = features_.size();
    by_cell_.assign(n * nf, 0.0);
    by_feature_.assign(n * nf, 0.0);
    for (std::size_t f = 0; f < nf; ++f) {
        if (features_[f].values.size() != n) {
            throw Error(ErrorCode::grid_mismatch, "dictionary feature size mismatch");
        }
        for (std::size_t i = 0; i < n; ++i) {
            by_cell_[i * nf + f] = features_[f].values[i];
            by_feature_[f * n + i] = features_[f].values[i];
        }
    }
}

double Dictionary::max_second_derivative() const noexcept {
    double m = 0.0;
    for (const auto& f : features_) m = std::max(m, f.second_derivative);
    return m;
}

void Dictionary::project(std::span<const double> m, std::span<const double> centre,
                         std::span<double> out) const {
    const std::size_t n = grid_.cells();
    std::vector<double> diff(n);
    const double h = grid_.cell_volume();
    for (std::size_t i = 0; i < n; ++i) diff[i] = (m[i] - centre[i]) * h;
    kernels::active().combine_columns(by_cell_.data(), features_.size(), n, diff.data(), out.data());
}

void Dictionary::combine(std::span<const double> w, std::span<double> out) const {
    kernels::active().combine_columns(by_feature_.data(), grid_.cells(), features_.size(), w.data(),
                                      out.data());
}

double Dictionary::psi(std::span<const double> m, std::span<const double> centre) const {
    std::vector<double> s(features_.size());
    project(m, centre, s);
    return *std::max_element(s.begin(), s.end());
}

namespace {

// Trigonometric polynomial sum_k a_k cos(2 pi k x) + b_k sin(2 pi k x).
struct TrigPoly {
    std::vector<double> a, b;

    double value(double x) const {
        double s = 0.0;
        for (std::size_t k = 1; k < a.size(); ++k) {
            double w = 2.0 * M_PI * k;
            s += a[k] * std::cos(w * x) + b[k] * std::sin(w * x);
        }
        return s;
    }
    void scale(double c) {
        for (auto& v : a) v *= c;
        for (auto& v : b) v *= c;
    }
};

// Samples of the order-th derivative of poly on a uniform grid of `points`.
std::vector<double> fine_derivative(const TrigPoly& poly, int order, std::size_t points) {
    const std::size_t half = points / 2 + 1;
    std::vector<std::complex<double>> spec(half, 0.0);
    std::vector<double> out(points);
    for (std::size_t k = 1; k < poly.a.size() && k < half; ++k) {
        std::complex<double> c(0.5 * poly.a[k], -0.5 * poly.b[k]);
        std::complex<double> iw(0.0, 2.0 * M_PI * k);
        for (int o = 0; o < order; ++o) c *= iw;
        spec[k] = c;
    }
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
        plan = fftw_plan_dft_c2r_1d(static_cast<int>(points),
                                    reinterpret_cast<fftw_complex*>(spec.data()), out.data(),
                                    FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
        std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
        fftw_destroy_plan(plan);
    }
    // c2r returns c_0 + 2 Re sum c_k e^{ikx} = sum a_k cos + b_k sin.
    return out;
}

// sup|phi^(order)| from fine samples, polished with Newton steps on the next
// derivative around the sampled maximiser.
double sup_derivative(const TrigPoly& poly, int order, std::size_t points) {
    auto samples = fine_derivative(poly, order, points);
    std::size_t arg = 0;
    double best = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (std::abs(samples[i]) > best) { best = std::abs(samples[i]); arg = i; }
    }
    auto eval = [&](int o, double x) {
        double s = 0.0;
        for (std::size_t k = 1; k < poly.a.size(); ++k) {
            double w = 2.0 * M_PI * k;
            double c = std::cos(w * x), sn = std::sin(w * x);
            // d^o/dx^o of a cos + b sin cycles through four phases.
            double val;
            switch (o % 4) {
                case 0: val = poly.a[k] * c + poly.b[k] * sn; break;
                case 1: val = -poly.a[k] * sn + poly.b[k] * c; break;
                case 2: val = -poly.a[k] * c - poly.b[k] * sn; break;
                default: val = poly.a[k] * sn - poly.b[k] * c; break;
            }
            s += std::pow(w, o) * val;
        }
        return s;
    };
    double x = static_cast<double>(arg) / points;
    for (int it = 0; it < 4; ++it) {
        double d1 = eval(order + 1, x);
        double d2 = eval(order + 2, x);
        if (d2 == 0.0) break;
        double nx = x - d1 / d2;
        if (std::abs(nx - static_cast<double>(arg) / points) > 2.0 / points) break;
        x = nx;
    }
    return std::max(best, std::abs(eval(order, x)));
}

DictionaryFeature make_feature(const TorusGrid& grid, TrigPoly poly, std::string label,
                               bool normalize_lipschitz) {
    const std::size_t fine = 1u << 16;
    if (normalize_lipschitz) poly.scale(1.0 / sup_derivative(poly, 1, fine));
    DictionaryFeature f;
    f.label = std::move(label);
    f.lipschitz = sup_derivative(poly, 1, fine);
    f.second_derivative = sup_derivative(poly, 2, fine);
    const double at_zero = poly.value(0.0);
    f.values.resize(grid.cells());
    for (std::size_t i = 0; i < grid.cells(); ++i) f.values[i] = poly.value(grid.coordinate(i)) - at_zero;
    return f;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

Dictionary build_dictionary(const TorusGrid& grid, const DictionaryOptions& opts) {
    require_dim1(grid, "build_dictionary");
    std::vector<DictionaryFeature> features;
    const std::size_t kmax = opts.fourier_features / 2;
    for (std::size_t k = 1; k <= kmax; ++k) {
        const double w = 2.0 * M_PI * k;
        for (int sign : {1, -1}) {
            if (sign < 0 && !opts.include_negations) continue;
            TrigPoly s{std::vector<double>(k + 1, 0.0), std::vector<double>(k + 1, 0.0)};
            s.b[k] = sign / w;
            features.push_back(make_feature(grid, s, (sign > 0 ? "sin" : "-sin") + std::to_string(k), false));
            TrigPoly c{std::vector<double>(k + 1, 0.0), std::vector<double>(k + 1, 0.0)};
            c.a[k] = sign / w;
            features.push_back(make_feature(grid, c, (sign > 0 ? "cos" : "-cos") + std::to_string(k), false));
        }
    }
    std::mt19937_64 rng(opts.seed);
    for (std::size_t r = 0; r < opts.random_features; ++r) {
        int freq = 1 + static_cast<int>(uniform01(rng) * opts.max_random_frequency);
        freq = std::min(freq, opts.max_random_frequency);
        double phase = uniform01(rng);
        const int top = freq * opts.fejer_order;
        TrigPoly t{std::vector<double>(top + 1, 0.0), std::vector<double>(top + 1, 0.0)};
        // Triangle wave of slope +-1 and period 1/freq, Fejer-weighted.
        for (int j = 1; j <= opts.fejer_order; j += 2) {
            double weight = 1.0 - static_cast<double>(j) / (opts.fejer_order + 1);
            double amp = -2.0 / (M_PI * M_PI * j * j * freq) * weight;
            int k = j * freq;
            double w = 2.0 * M_PI * k;
            t.a[k] += amp * std::cos(w * phase);
            t.b[k] += amp * std::sin(w * phase);
        }
        std::ostringstream label;
        label << "tri" << freq << "@" << phase;
        features.push_back(make_feature(grid, t, label.str(), true));
    }
    return Dictionary(grid, std::move(features));
}

Dictionary build_dictionary(const TorusGrid& grid, std::size_t n_features) {
    DictionaryOptions opts;
    opts.fourier_features = n_features;
    return build_dictionary(grid, opts);
}

double dictionary_quality(const Dictionary& dict, const GridDensity& reference,
                          std::span<const GridDensity> sample) {
    double worst = 0.0;
    for (const auto& m : sample) {
        double psi = dict.psi(m.values(), reference.values());
        double d1 = wasserstein1_circle(m, reference);
        worst = std::max(worst, std::abs(psi - d1));
    }
    return worst;
}

double smooth_max(std::span<const double> values, double delta_s) {
    if (values.empty()) throw Error(ErrorCode::invalid_argument, "smooth_max of an empty list");
    if (!(delta_s > 0.0)) throw Error(ErrorCode::invalid_argument, "smooth_max needs delta_s > 0");
    double top = *std::max_element(values.begin(), values.end());
    double s = 0.0;
    for (double v : values) s += std::exp((v - top) / delta_s);
    return top + delta_s * std::log(s);
}

std::vector<double> smooth_max_weights(std::span<const double> values, double delta_s) {
    if (values.empty()) throw Error(ErrorCode::invalid_argument, "smooth_max of an empty list");
    double top = *std::max_element(values.begin(), values.end());
    std::vector<double> w(values.size());
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        w[i] = std::exp((values[i] - top) / delta_s);
        s += w[i];
    }
    for (double& v : w) v /= s;
    return w;
}

double smoothstep(double s, double lo, double hi) {
    if (s <= lo) return 0.0;
    if (s >= hi) return 1.0;
    double t = (s - lo) / (hi - lo);
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
}

double smoothstep_derivative(double s, double lo, double hi) {
    if (s <= lo || s >= hi) return 0.0;
    double t = (s - lo) / (hi - lo);
    double u = 1.0 - t;
    return 30.0 * t * t * u * u / (hi - lo);
}

double cutoff(double s, double eps) { return 1.0 - smoothstep(s, 0.4 * eps, 0.6 * eps); }

double cutoff_derivative(double s, double eps) {
    return -smoothstep_derivative(s, 0.4 * eps, 0.6 * eps);
}

BumpCoupling::BumpCoupling(GridDensity centre, double epsilon,
                           std::shared_ptr<const Dictionary> dict, double amplitude, double delta_s)
    : CouplingFunctional(centre.grid()),
      centre_(std::move(centre)),
      epsilon_(epsilon),
      dict_(std::move(dict)),
      amplitude_(amplitude),
      delta_s_(delta_s) {
    if (!dict_) throw Error(ErrorCode::invalid_argument, "bump needs a dictionary");
    require_same_grid(grid_, dict_->grid(), "BumpCoupling");
    if (!(epsilon_ > 0.0)) throw Error(ErrorCode::invalid_argument, "bump radius must be positive");
    const double log_n = std::log(static_cast<double>(std::max<std::size_t>(dict_->size(), 2)));
    if (!(delta_s_ > 0.0)) delta_s_ = epsilon_ / (5.0 * log_n);
    // Sampled check of the cutoff slope bound |zeta'| <= 10/eps.
    double slope = 0.0;
    for (int i = 0; i <= 1000; ++i) {
        double s = epsilon_ * (0.4 + 0.2 * i / 1000.0);
        slope = std::max(slope, std::abs(cutoff_derivative(s, epsilon_)));
    }
    if (slope > 10.0 / epsilon_) {
        throw Error(ErrorCode::infeasible_construction, "cutoff slope exceeds 10/eps");
    }
}

double BumpCoupling::smoothed_psi(std::span<const double> m) const {
    std::vector<double> s(dict_->size());
    dict_->project(m, centre_.values(), s);
    return smooth_max(s, delta_s_);
}

double BumpCoupling::max_psi(std::span<const double> m) const {
    return dict_->psi(m, centre_.values());
}

double BumpCoupling::value(std::span<const double> m) const {
    return amplitude_ * cutoff(smoothed_psi(m), epsilon_);
}

void BumpCoupling::raw_derivative(std::span<const double> m, std::span<double> out) const {
    std::vector<double> s(dict_->size());
    dict_->project(m, centre_.values(), s);
    const double psi = smooth_max(s, delta_s_);
    const double slope = cutoff_derivative(psi, epsilon_);
    if (slope == 0.0) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
    }
    auto w = smooth_max_weights(s, delta_s_);
    dict_->combine(w, out);
    const double scale = amplitude_ * slope;
    for (double& v : out) v *= scale;
}

void BumpCoupling::derivative(std::span<const double> m, std::span<double> out) const {
    raw_derivative(m, out);
    normalize(m, out);
}

SeparatorCoupling::SeparatorCoupling(std::vector<GridDensity> a_points,
                                     std::vector<GridDensity> b_points,
                                     std::shared_ptr<const Dictionary> dict, double epsilon)
    : CouplingFunctional(dict ? dict->grid() : TorusGrid(1, 4)),
      epsilon_(epsilon),
      min_separation_(std::numeric_limits<double>::infinity()),
      delta_sep_(0.0) {
    if (!dict) throw Error(ErrorCode::invalid_argument, "separator needs a dictionary");
    if (a_points.empty() || b_points.empty()) {
        throw Error(ErrorCode::invalid_argument, "separator needs nonempty A and B sets");
    }
    for (const auto& a : a_points) {
        require_same_grid(grid_, a.grid(), "SeparatorCoupling");
        for (const auto& b : b_points) {
            require_same_grid(grid_, b.grid(), "SeparatorCoupling");
            min_separation_ = std::min(min_separation_, wasserstein1_circle(a, b));
        }
    }
    if (!(min_separation_ > 0.0)) {
        throw Error(ErrorCode::infeasible_construction, "A and B sets intersect");
    }
    if (epsilon_ <= 0.0) epsilon_ = min_separation_;
    if (epsilon_ > min_separation_) {
        std::ostringstream os;
        os << "A/B sets are " << min_separation_ << " apart, closer than eps = " << epsilon_;
        throw Error(ErrorCode::infeasible_construction, os.str());
    }
    for (auto& a : a_points) bumps_.emplace_back(std::move(a), epsilon_, dict, 1.0);
    const double log_n = std::log(static_cast<double>(bumps_.size()));
    delta_sep_ = bumps_.size() > 1 ? 1.0 / (6.0 * log_n) : 1.0;
}

double SeparatorCoupling::pre_threshold(std::span<const double> m) const {
    std::vector<double> phi(bumps_.size());
    for (std::size_t i = 0; i < bumps_.size(); ++i) phi[i] = bumps_[i].value(m);
    return smooth_max(phi, delta_sep_);
}

double SeparatorCoupling::value(std::span<const double> m) const {
    return smoothstep(pre_threshold(m), 1.0 / 3.0, 2.0 / 3.0);
}

void SeparatorCoupling::derivative(std::span<const double> m, std::span<double> out) const {
    std::vector<double> phi(bumps_.size());
    for (std::size_t i = 0; i < bumps_.size(); ++i) phi[i] = bumps_[i].value(m);
    const double psi = smooth_max(phi, delta_sep_);
    const double slope = smoothstep_derivative(psi, 1.0 / 3.0, 2.0 / 3.0);
    std::fill(out.begin(), out.end(), 0.0);
    if (slope == 0.0) return;
    auto w = smooth_max_weights(phi, delta_sep_);
    std::vector<double> g(out.size());
    for (std::size_t i = 0; i < bumps_.size(); ++i) {
        if (w[i] == 0.0) continue;
        bumps_[i].raw_derivative(m, g);
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += slope * w[i] * g[c];
    }
    normalize(m, out);
}

double separator_value(std::span<const GridDensity> a_points, std::span<const GridDensity> b_points,
                       const GridDensity& m, std::shared_ptr<const Dictionary> dict) {
    SeparatorCoupling sep(std::vector<GridDensity>(a_points.begin(), a_points.end()),
                          std::vector<GridDensity>(b_points.begin(), b_points.end()), std::move(dict));
    return sep.value(m);
}

double Sec2Coupling::uniform_to_translates(const GridDensity& reference) {
    require_dim1(reference.grid(), "Sec2Coupling");
    const GridDensity u = GridDensity::uniform(reference.grid());
    double best = std::numeric_limits<double>::infinity();
    for (int s = 0; s < reference.grid().n(); ++s) {
        best = std::min(best, wasserstein1_circle(u, shift(reference, s)));
    }
    return best;
}

namespace {

double checked_radius(const GridDensity& reference, double epsilon, double separation) {
    if (reference.min() <= 0.0) {
        throw Error(ErrorCode::invalid_argument, "sec2 reference density must be strictly positive");
    }
    if (!(separation > 0.0)) {
        throw Error(ErrorCode::infeasible_construction, "sec2 reference density is uniform");
    }
    if (epsilon <= 0.0) return 0.5 * separation;
    if (epsilon > 0.5 * separation * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << std::setprecision(10) << "sec2 epsilon " << epsilon
           << " exceeds half the uniform-to-translate distance " << separation;
        throw Error(ErrorCode::infeasible_construction, os.str());
    }
    return epsilon;
}

}  // namespace

Sec2Coupling::Sec2Coupling(GridDensity reference, std::shared_ptr<const Dictionary> dict,
                           double epsilon)
    : CouplingFunctional(reference.grid()),
      reference_(std::move(reference)),
      separation_(uniform_to_translates(reference_)),
      inner_(GridDensity::uniform(reference_.grid()),
             checked_radius(reference_, epsilon, separation_), std::move(dict), 2.0) {}

double fisher_information(const std::function<double(double)>& profile,
                          const std::function<double(double)>& profile_derivative, int points) {
    double s = 0.0;
    for (int i = 0; i < points; ++i) {
        double x = (i + 0.5) / points;
        double d = profile_derivative(x);
        s += d * d / profile(x);
    }
    return 0.5 * s / points;
}

}  // namespace mfg
