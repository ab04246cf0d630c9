#include <doctest.h>

#include <cmath>
#include <cstring>
#include <string>
#include <random>
#include <vector>

#include "mfg/kernels.hpp"
#include "support.hpp"

using namespace mfg;

namespace {

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

const std::size_t kSizes[] = {4, 5, 6, 7, 8, 9, 13, 16, 31, 64, 100, 128};

}  // namespace

TEST_CASE("kernel dispatch") {
    const auto& s = kernels::scalar_table();
    CHECK(s.isa == kernels::Isa::scalar);
    const auto* v = kernels::avx2_table();
    CHECK((v != nullptr) == kernels::cpu_has_avx2());
    const auto& a = kernels::active();
    CHECK((a.isa == kernels::Isa::scalar || a.isa == kernels::Isa::avx2));
    CHECK(std::string(kernels::to_string(a.isa)).size() > 0);
}

TEST_CASE("avx2 kernels are bit-identical to the scalar reference") {
    const auto* v = kernels::avx2_table();
    if (v == nullptr) {
        MESSAGE("AVX2 unavailable; equivalence test skipped");
        return;
    }
    const auto& s = kernels::scalar_table();
    std::mt19937_64 rng(2024);

    SUBCASE("combine_columns") {
        for (std::size_t rows : kSizes) {
            for (std::size_t ncols : {1u, 3u, 17u, 64u}) {
                auto cols = test::random_vector(rows * ncols, rng);
                auto w = test::random_vector(ncols, rng);
                std::vector<double> o1(rows), o2(rows);
                s.combine_columns(cols.data(), rows, ncols, w.data(), o1.data());
                v->combine_columns(cols.data(), rows, ncols, w.data(), o2.data());
                CHECK(same_bits(o1, o2));
            }
        }
    }

    SUBCASE("godunov_step") {
        for (std::size_t n : kSizes) {
            for (double cap : {0.5, 5.0, 20.0}) {
                for (double b : {0.0, 1.0, -0.7}) {
                    auto ut = test::random_vector(n, rng, -0.3, 0.3);
                    if (n % 3 == 0) ut[n / 2] = ut[n / 2 - 1];  // flat spot: signed zeros
                    const kernels::GodunovParams prm{static_cast<double>(n), 0.01, b, cap};
                    std::vector<double> u1(n), p1(n), q1(n), u2(n), p2(n), q2(n);
                    s.godunov_step(ut.data(), n, prm, u1.data(), p1.data(), q1.data());
                    v->godunov_step(ut.data(), n, prm, u2.data(), p2.data(), q2.data());
                    CHECK(same_bits(u1, u2));
                    CHECK(same_bits(p1, p2));
                    CHECK(same_bits(q1, q2));
                }
            }
        }
    }

    SUBCASE("upwind_transport") {
        for (std::size_t n : kSizes) {
            auto m = test::random_vector(n, rng, 0.0, 2.0);
            auto p = test::random_vector(n, rng, 0.0, 3.0);
            auto q = test::random_vector(n, rng, 0.0, 3.0);
            std::vector<double> o1(n), o2(n);
            s.upwind_transport(m.data(), p.data(), q.data(), n, 0.1, o1.data());
            v->upwind_transport(m.data(), p.data(), q.data(), n, 0.1, o2.data());
            CHECK(same_bits(o1, o2));
        }
    }

    SUBCASE("kinetic_cells") {
        for (std::size_t n : kSizes) {
            auto m = test::random_vector(n, rng, 0.0, 2.0);
            auto P = test::random_vector(n, rng, 0.0, 1.0);
            auto N = test::random_vector(n, rng, 0.0, 1.0);
            if (n > 5) {
                m[1] = 0.0;
                P[1] = 0.0;
                N[1] = 0.0;
                m[4] = 1e-14;
            }
            std::vector<double> o1(n), o2(n);
            s.kinetic_cells(m.data(), P.data(), N.data(), n, 0.8, o1.data());
            v->kinetic_cells(m.data(), P.data(), N.data(), n, 0.8, o2.data());
            CHECK(same_bits(o1, o2));
        }
    }
}

TEST_CASE("scalar kernels follow their closed forms") {
    const auto& s = kernels::scalar_table();
    // Uniform m, no motion: transport is the identity.
    std::vector<double> m(8, 1.0), z(8, 0.0), out(8);
    s.upwind_transport(m.data(), z.data(), z.data(), 8, 0.5, out.data());
    for (double x : out) CHECK(x == 1.0);
    // Kinetic cost of a uniform density at rest is |b|^2/2; moving with b is free.
    std::vector<double> cost(8), P(8, 0.3);
    s.kinetic_cells(m.data(), z.data(), z.data(), 8, 0.6, cost.data());
    for (double c : cost) CHECK(c == doctest::Approx(0.18));
    std::vector<double> Pb(8, 0.6);
    s.kinetic_cells(m.data(), Pb.data(), z.data(), 8, 0.6, cost.data());
    for (double c : cost) CHECK(c == doctest::Approx(0.0));
    // Empty moving cell is infinite.
    std::vector<double> e(8, 0.0);
    s.kinetic_cells(e.data(), P.data(), z.data(), 8, 0.0, cost.data());
    CHECK(std::isinf(cost[0]));
    // Constant value, b = 0: no motion, no running cost.
    std::vector<double> ut(8, 2.0), u(8), p(8), q(8);
    s.godunov_step(ut.data(), 8, {8.0, 0.1, 0.0, 10.0}, u.data(), p.data(), q.data());
    for (int i = 0; i < 8; ++i) {
        CHECK(u[i] == 2.0);
        CHECK(p[i] == 0.0);
        CHECK(q[i] == 0.0);
    }
}
