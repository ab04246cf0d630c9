#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "mfg/grid.hpp"
#include "mfg/model.hpp"

namespace mfg::test {

// Direct minimization of the relaxed discrete energy over every per-step jump
// rate pair (p, q) in [0, rate_bound]^2, with its own forward scheme (dense LU
// for the implicit diffusion) and central-difference gradients. Only meant for
// tiny grids.
struct BruteForceResult {
    double energy;
    double max_rate;  // largest rate at the optimum (bound check)
    int evaluations;
};

struct BruteForceOptions {
    int starts = 6;
    int max_iter = 400;
    double rate_bound = 1.0;
    std::uint64_t seed = 1;
};

BruteForceResult brute_force_finite(const GridDensity& m0, const TimeGrid& tg, double b, double sigma,
                                    const CouplingFunctional& F, const BruteForceOptions& opts = {});

// Energy of explicit rates under the oracle's own scheme.
double brute_force_energy(const GridDensity& m0, const TimeGrid& tg, double b, double sigma,
                          const CouplingFunctional& F, const std::vector<double>& p,
                          const std::vector<double>& q);


// Seeded (n, k) = (8, 5) instance with a bump coupling whose radius puts m0
// inside the transition band.
struct TinyInstance {
    GridDensity m0;
    TimeGrid tg;
    double b;
    double sigma;
    std::shared_ptr<const BumpCoupling> F;
};

TinyInstance tiny_bump_instance(std::uint64_t seed);

}  // namespace mfg::test
