#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mfg::test {

GridDensity random_smooth_density(const TorusGrid& grid, std::mt19937_64& rng, double amplitude,
                                  int modes) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> a(modes), b(modes);
    for (int k = 0; k < modes; ++k) {
        a[k] = g(rng) * amplitude / (k + 1);
        b[k] = g(rng) * amplitude / (k + 1);
    }
    std::vector<double> w(grid.cells());
    for (std::size_t c = 0; c < grid.cells(); ++c) {
        double s = 0.0;
        for (int axis = 0; axis < grid.dim(); ++axis) {
            const double x = grid.coordinate(c, axis);
            for (int k = 0; k < modes; ++k) {
                const double th = 2.0 * std::numbers::pi * (k + 1) * x;
                s += a[k] * std::cos(th) + b[k] * std::sin(th);
            }
        }
        w[c] = std::exp(s);
    }
    return GridDensity::normalized(grid, std::move(w));
}

GridDensity random_density(const TorusGrid& grid, std::mt19937_64& rng, double floor) {
    std::uniform_real_distribution<double> u(floor, 1.0);
    std::vector<double> w(grid.cells());
    for (double& x : w) x = u(rng);
    return GridDensity::normalized(grid, std::move(w));
}

GridDensity bump_density(const TorusGrid& grid, double centre, double width) {
    std::vector<double> w(grid.cells());
    for (std::size_t c = 0; c < grid.cells(); ++c) {
        double d = std::abs(grid.coordinate(c) - centre);
        d = std::min(d, 1.0 - d);
        w[c] = std::exp(-d * d / (2.0 * width * width));
    }
    return GridDensity::normalized(grid, std::move(w));
}

GridDensity cosine_density(const TorusGrid& grid, double a) {
    std::vector<double> w(grid.cells());
    for (std::size_t c = 0; c < grid.cells(); ++c) {
        w[c] = 1.0 + a * std::cos(2.0 * std::numbers::pi * grid.coordinate(c));
    }
    return GridDensity::normalized(grid, std::move(w));
}

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

void gauss_legendre(int points, std::vector<double>& nodes, std::vector<double>& weights) {
    nodes.assign(points, 0.0);
    weights.assign(points, 0.0);
    for (int i = 0; i < points; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (points + 0.5));
        double dp = 1.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0;
            double p1 = x;
            for (int k = 2; k <= points; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = points * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
}

double sup_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s = std::max(s, std::abs(a[i] - b[i]));
    return s;
}

}  // namespace mfg::test
