#pragma once

#include <cstddef>
#include <limits>

#include "mfg/kernels.hpp"

// Per-element reference arithmetic shared by the scalar table and the SIMD
// edge handling. The operation order here is the contract the vector code
// reproduces lane by lane.
namespace mfg::kernels::detail {

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double at_most(double x, double cap) { return x < cap ? x : cap; }

inline void godunov_cell(double um, double u0, double up, const GodunovParams& prm,
                         double& u_out, double& p_out, double& q_out) {
    const double b = prm.b;
    const double qf = (up - u0) * prm.inv_h;
    const double qb = (u0 - um) * prm.inv_h;
    double p = relu(b - qf);
    double q = relu(qb - b);
    if (p + q > prm.cap) {
        double pl = ((2.0 * b + prm.cap) - (qf + qb)) * 0.5;
        pl = at_most(relu(pl), prm.cap);
        p = pl;
        q = prm.cap - pl;
    }
    const double d1 = b - p;
    const double d2 = b + q;
    double v = ((d1 * d1 + d2 * d2) - b * b) * 0.5;
    v = v + (p * qf - q * qb);
    u_out = u0 + prm.dt * v;
    p_out = p;
    q_out = q;
}

inline double transport_cell(double mm, double m0, double mp, double pm, double p0, double q0,
                             double qp, double lambda) {
    double a = 1.0 - lambda * (p0 + q0);
    double s = mm * pm + mp * qp;
    return m0 * a + lambda * s;
}

inline double kinetic_cell(double m, double P, double N, double b) {
    if (m < kEmptyCell) {
        if (P < kEmptyCell && N < kEmptyCell) return 0.0;
        return std::numeric_limits<double>::infinity();
    }
    const double bm = b * m;
    const double r = bm - P;
    const double l = bm + N;
    return (((r * r + l * l) - bm * bm) * 0.5) / m;
}

}  // namespace mfg::kernels::detail
