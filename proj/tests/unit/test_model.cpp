#include <doctest.h>

#include <cmath>
#include <memory>
#include <numbers>
#include <random>

#include "mfg/error.hpp"
#include "mfg/model.hpp"
#include "support.hpp"

using namespace mfg;

namespace {

std::shared_ptr<const Dictionary> dict64() {
    static auto d = std::make_shared<const Dictionary>(build_dictionary(TorusGrid(1, 64), DictionaryOptions{}));
    return d;
}

GridDensity mixture(const GridDensity& a, const GridDensity& b, double t) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (1.0 - t) * a[i] + t * b[i];
    return GridDensity::normalized(a.grid(), std::move(v));
}

// |F(m2) - F(m1) - int_0^1 <F'((1-t)m1 + t m2), m2 - m1> dt| with 16-point
// Gauss on each of `panels` equal subintervals.
double flat_derivative_defect(const CouplingFunctional& F, const GridDensity& m1, const GridDensity& m2,
                              int panels = 1) {
    std::vector<double> x, w;
    test::gauss_legendre(16, x, w);
    const auto& g = m1.grid();
    std::vector<double> d(g.cells()), diff(g.cells());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = m2[i] - m1[i];
    double integral = 0.0;
    for (int p = 0; p < panels; ++p) {
        for (int q = 0; q < 16; ++q) {
            auto mt = mixture(m1, m2, (p + x[q]) / panels);
            F.derivative(mt.values(), d);
            integral += w[q] / panels * inner(g, d, diff);
        }
    }
    return std::abs(F.value(m2) - F.value(m1) - integral);
}

double max_slope(const GridFunction& f, double h) {
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) s = std::max(s, std::abs(f[(i + 1) % f.size()] - f[i]) / h);
    return s;
}

}  // namespace

TEST_CASE("quadratic Hamiltonian identities") {
    QuadraticHamiltonian H({0.7, -0.2});
    std::mt19937_64 rng(1);
    for (int t = 0; t < 100; ++t) {
        auto a = test::random_vector(2, rng, -3.0, 3.0);
        auto p = H.DaHstar(a);
        const double lhs = H.H(p) + H.Hstar(a);
        const double rhs = a[0] * p[0] + a[1] * p[1];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-13));
        auto dp = H.DpH(p);
        CHECK(dp[0] == doctest::Approx(a[0]));
    }
    const std::vector<double> minus_b{-0.7, 0.2};
    CHECK(H.Hstar(minus_b) == 0.0);
    CHECK(H.Hstar(std::vector<double>{0.0, 0.0}) == doctest::Approx(0.5 * H.drift_norm2()));
}

TEST_CASE("smooth max") {
    const std::vector<double> one{3.25};
    CHECK(smooth_max(one, 0.1) == doctest::Approx(3.25));
    const std::vector<double> two{0.0, 0.0};
    CHECK(smooth_max(two, 1.0) == doctest::Approx(std::log(2.0)));
    std::mt19937_64 rng(9);
    auto v = test::random_vector(10, rng);
    const double mx = *std::max_element(v.begin(), v.end());
    const double s = smooth_max(v, 1e-3);
    CHECK(s >= mx);
    CHECK(s <= mx + 1e-3 * std::log(10.0));
    const std::vector<double> big{1e4, 1e4 - 1.0};
    CHECK(std::isfinite(smooth_max(big, 1e-3)));
    auto w = smooth_max_weights(v, 0.3);
    double sum = 0.0;
    for (double x : w) sum += x;
    CHECK(sum == doctest::Approx(1.0));
    CHECK_THROWS_AS(smooth_max(std::vector<double>{}, 1.0), Error);
    CHECK_THROWS_AS(smooth_max(one, 0.0), Error);
}

TEST_CASE("cutoff shape") {
    const double eps = 0.2;
    CHECK(cutoff(0.0, eps) == 1.0);
    CHECK(cutoff(0.4 * eps, eps) == 1.0);
    CHECK(cutoff(0.6 * eps, eps) == 0.0);
    CHECK(cutoff(0.5 * eps, eps) == doctest::Approx(0.5));
    double worst = 0.0;
    for (int i = 0; i <= 2000; ++i) {
        const double s = eps * i / 2000.0;
        worst = std::max(worst, std::abs(cutoff_derivative(s, eps)));
        CHECK(cutoff(s, eps) <= cutoff(s - 1e-6, eps) + 1e-15);
    }
    CHECK(worst <= 10.0 / eps);
}

TEST_CASE("convolution coupling") {
    TorusGrid g(1, 64);
    ConvolutionCoupling F(g, {1.0, 1.0, 0.5});
    auto u = GridDensity::uniform(g);
    CHECK(F.value(u) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK_THROWS_AS(ConvolutionCoupling(g, {1.0, -0.1}), Error);

    std::mt19937_64 rng(4);
    for (int t = 0; t < 100; ++t) {
        auto a = test::random_smooth_density(g, rng);
        auto b = test::random_density(g, rng);
        // Direct double sum.
        double direct = 0.0;
        for (int i = 0; i < 64; ++i) {
            for (int j = 0; j < 64; ++j) {
                const double x = (i - j) * g.h();
                const double k = 1.0 + std::cos(2 * std::numbers::pi * x) + 0.5 * std::cos(4 * std::numbers::pi * x);
                direct += 0.5 * g.h() * g.h() * k * a[i] * a[j];
            }
        }
        CHECK(F.value(a) == doctest::Approx(direct).epsilon(1e-12));
        auto da = F.derivative(a);
        auto db = F.derivative(b);
        CHECK(std::abs(inner(g, da, a.values())) <= 1e-8);
        std::vector<double> dd(64), dm(64);
        for (int i = 0; i < 64; ++i) {
            dd[i] = da[i] - db[i];
            dm[i] = a[i] - b[i];
        }
        CHECK(inner(g, dd, dm) >= -1e-10);
        if (t < 50) CHECK(flat_derivative_defect(F, a, b) <= 1e-5);
    }
    CHECK(F.lower_bound() <= F.value(u) + 1e-15);
}

TEST_CASE("dictionary construction") {
    TorusGrid g(1, 64);
    auto d = dict64();
    bool found_sin1 = false;
    for (const auto& f : d->features()) {
        CHECK(f.lipschitz <= 1.0 + 1e-9);
        CHECK(std::abs(f.values[0]) <= 1e-15);
        if (f.label == "sin1") {
            found_sin1 = true;
            CHECK(f.lipschitz == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    CHECK(found_sin1);

    DictionaryOptions fourier_only;
    fourier_only.random_features = 0;
    auto df = build_dictionary(g, fourier_only);
    auto m0 = test::cosine_density(g, 0.5);
    CHECK(df.psi(m0.values(), m0.values()) == 0.0);

    auto again = build_dictionary(g, DictionaryOptions{});
    REQUIRE(again.size() == d->size());
    for (std::size_t n = 0; n < again.size(); ++n) CHECK(again.features()[n].values == d->features()[n].values);
}

TEST_CASE("dictionary quality on the sec2 validation sample") {
    TorusGrid g(1, 64);
    auto d = dict64();
    auto m0 = test::cosine_density(g, 0.5);
    Sec2Coupling F(m0, d);
    auto u = GridDensity::uniform(g);
    std::vector<GridDensity> sample;
    for (int s = 0; s < 64; s += 3) {
        auto tr = shift(m0, s);
        for (double t : {0.1, 0.3, 0.5, 0.7, 1.0}) sample.push_back(mixture(u, tr, t));
    }
    const double eta = dictionary_quality(*d, u, sample);
    MESSAGE("eta_hat = " << eta << ", eps/5 = " << F.epsilon() / 5.0);
    CHECK(eta <= F.epsilon() / 5.0);
}

TEST_CASE("bump coupling (Lemma 199 suite)") {
    TorusGrid g(1, 64);
    auto d = dict64();
    std::mt19937_64 rng(17);
    auto centre = test::random_smooth_density(g, rng, 0.3);
    const double eps = 0.1;
    const double A = 1.5;
    BumpCoupling F(centre, eps, d, A);

    CHECK(F.value(centre) == A);
    CHECK(F.smoothed_psi(centre.values()) <= 0.4 * eps);
    auto dc = F.derivative(centre);
    for (double x : dc) CHECK(x == 0.0);

    // Sandwich bound.
    for (int t = 0; t < 20; ++t) {
        auto m = test::random_smooth_density(g, rng, 0.5);
        const double mx = F.max_psi(m.values());
        const double sm = F.smoothed_psi(m.values());
        CHECK(mx <= sm + 1e-15);
        CHECK(sm <= mx + F.delta_s() * std::log(static_cast<double>(d->size())) + 1e-15);
    }

    int far = 0;
    for (int t = 0; t < 40; ++t) {
        auto m = test::bump_density(g, t / 40.0, 0.03 + 0.001 * t);
        if (wasserstein1_circle(m, centre) >= 2 * eps) {
            ++far;
            CHECK(F.value(m) == 0.0);
        }
    }
    CHECK(far > 20);
    std::vector<GridDensity> samples;
    while (samples.size() < 100) {
        auto m = test::random_smooth_density(g, rng, 0.05 + 0.01 * (samples.size() % 40));
        samples.push_back(mixture(centre, m, 0.02 * (samples.size() % 50)));
    }
    for (const auto& m : samples) {
        auto dm = F.derivative(m);
        CHECK(max_slope(dm, g.h()) <= A * 10.0 / eps + 1e-9);
        CHECK(std::abs(inner(g, dm, m.values())) <= 1e-8);
    }
    for (std::size_t i = 0; i + 1 < samples.size(); i += 2) {
        const double dv = std::abs(F.value(samples[i]) - F.value(samples[i + 1]));
        CHECK(dv <= A * (10.0 / eps) * wasserstein1_circle(samples[i], samples[i + 1]) + 1e-8);
    }

    // A density on the segment to a far point with smoothed Psi at eps/2.
    GridDensity target = test::bump_density(g, 0.5, 0.05);
    REQUIRE(F.smoothed_psi(target.values()) > 0.6 * eps);
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (F.smoothed_psi(mixture(centre, target, mid).values()) < 0.5 * eps ? lo : hi) = mid;
    }
    auto mid = mixture(centre, target, 0.5 * (lo + hi));
    CHECK(F.value(mid) > 0.0);
    CHECK(F.value(mid) < A);

    // Finite-difference directional derivative in the transition band.
    auto mu = test::random_smooth_density(g, rng);
    auto dmid = F.derivative(mid);
    std::vector<double> dir(64);
    for (int i = 0; i < 64; ++i) dir[i] = mu[i] - mid[i];
    const double analytic = inner(g, dmid, dir);
    for (double t : {1e-4, 1e-5, 1e-6}) {
        const double fd = (F.value(mixture(mid, mu, t)) - F.value(mid)) / t;
        CHECK(std::abs(fd - analytic) <= 50.0 * t * (1.0 + std::abs(analytic)) + 1e-6);
    }

    // Flat-derivative consistency. The transition band is 0.2 eps wide in d1,
    // so one 16-node rule is applied to pairs at most eps/5 apart and a
    // composite rule to pairs crossing the whole band.
    int local = 0;
    while (local < 50) {
        auto a = mixture(centre, test::random_smooth_density(g, rng, 0.5), 0.05 + 0.02 * (local % 40));
        auto b = mixture(a, test::random_smooth_density(g, rng, 0.5), 0.1);
        if (wasserstein1_circle(a, b) > eps / 5) continue;
        CHECK(flat_derivative_defect(F, a, b, 4) <= 1e-5);
        ++local;
    }
    for (int t = 0; t < 10; ++t) {
        auto a = mixture(centre, test::random_smooth_density(g, rng, 0.5), 0.05 * t);
        CHECK(flat_derivative_defect(F, a, test::bump_density(g, 0.1 * t, 0.05), 256) <= 1e-5);
    }
    CHECK_THROWS_AS(BumpCoupling(centre, 0.0, d), Error);
}

TEST_CASE("separator functional (Lemma 200 suite)") {
    TorusGrid g(1, 64);
    auto d = dict64();
    std::vector<GridDensity> A{test::bump_density(g, 0.1, 0.08), test::bump_density(g, 0.6, 0.08)};
    std::vector<GridDensity> B{GridDensity::uniform(g), test::bump_density(g, 0.35, 0.08),
                               test::bump_density(g, 0.85, 0.06)};
    SeparatorCoupling S(A, B, d);
    for (const auto& a : A) {
        CHECK(S.pre_threshold(a.values()) >= 2.0 / 3.0);
        CHECK(S.value(a) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(separator_value(A, B, a, d) == doctest::Approx(1.0).epsilon(1e-12));
    }
    for (const auto& b : B) {
        CHECK(S.pre_threshold(b.values()) <= 1.0 / 3.0);
        CHECK(S.pre_threshold(b.values()) <= 1.0 / 6.0 + 1e-12);
        CHECK(S.value(b) == doctest::Approx(0.0).epsilon(1e-12));
    }
    // Walk the segment A[0] -> B[1]; the value must pass strictly through (0, 1).
    bool interior = false;
    for (int i = 0; i <= 200 && !interior; ++i) {
        const double v = S.value(mixture(A[0], B[1], i / 200.0));
        interior = v > 0.0 && v < 1.0;
    }
    CHECK(interior);
    std::mt19937_64 rng(3);
    for (int t = 0; t < 10; ++t) {
        auto m1 = mixture(A[0], test::random_smooth_density(g, rng, 0.3), 0.1 * t);
        auto m2 = mixture(A[1], test::random_smooth_density(g, rng, 0.3), 0.05 * t);
        CHECK(flat_derivative_defect(S, m1, m2, 256) <= 1e-5);
        auto near = mixture(A[0], B[1], 0.2 + 0.01 * t);
        auto next = mixture(near, test::random_smooth_density(g, rng, 0.3), 0.05);
        CHECK(flat_derivative_defect(S, near, next, 4) <= 1e-5);
    }
    try {
        SeparatorCoupling bad(A, B, d, 10.0);
        FAIL("expected infeasible construction");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::infeasible_construction);
    }
    CHECK_THROWS_AS(SeparatorCoupling(A, std::vector<GridDensity>{A[0]}, d), Error);
}

TEST_CASE("sec2 coupling") {
    TorusGrid g(1, 64);
    auto d = dict64();
    auto m0 = test::cosine_density(g, 0.5);
    Sec2Coupling F(m0, d);
    const double sep = F.separation_distance();
    CHECK(sep == doctest::Approx(0.5 / std::numbers::pi / std::numbers::pi).epsilon(1e-2));
    CHECK(F.epsilon() <= 0.5 * sep * (1.0 + 1e-12));
    CHECK(F.value(GridDensity::uniform(g)) == 2.0);
    for (int s = 0; s < 64; ++s) CHECK(std::abs(F.value(shift(m0, s))) <= 1e-12);
    std::mt19937_64 rng(99);
    for (int t = 0; t < 1000; ++t) {
        auto m = t % 2 ? test::random_density(g, rng) : test::random_smooth_density(g, rng, 0.02 * (t % 25));
        CHECK(F.value(m) >= 0.0);
    }
    try {
        Sec2Coupling bad(m0, d, 0.6 * sep);
        FAIL("expected infeasible construction");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::infeasible_construction);
    }
    CHECK_THROWS_AS(Sec2Coupling(GridDensity::uniform(g), d), Error);
}

TEST_CASE("Fisher information of the cosine profile") {
    const double a = 0.5;
    auto m = [a](double x) { return 1.0 + a * std::cos(2 * std::numbers::pi * x); };
    auto dm = [a](double x) { return -2 * std::numbers::pi * a * std::sin(2 * std::numbers::pi * x); };
    const double closed = 2 * std::numbers::pi * std::numbers::pi * (1 - std::sqrt(1 - a * a));
    CHECK(fisher_information(m, dm, 4096) == doctest::Approx(closed).epsilon(1e-12));
}
