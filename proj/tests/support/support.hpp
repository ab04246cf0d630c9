#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "mfg/grid.hpp"

namespace mfg::test {

// Strictly positive random density: exp of a random low-mode Fourier sum.
GridDensity random_smooth_density(const TorusGrid& grid, std::mt19937_64& rng, double amplitude = 1.0,
                                  int modes = 4);
// Random weights in [floor, 1), normalized.
GridDensity random_density(const TorusGrid& grid, std::mt19937_64& rng, double floor = 0.0);
// Normalized exp(-d^2 / (2 w^2)) with periodic distance to the centre.
GridDensity bump_density(const TorusGrid& grid, double centre, double width);
// 1 + a cos(2 pi x) on the grid.
GridDensity cosine_density(const TorusGrid& grid, double a);

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                  double hi = 1.0);

// Nodes and weights on [0, 1].
void gauss_legendre(int points, std::vector<double>& nodes, std::vector<double>& weights);

double sup_diff(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace mfg::test
