#pragma once

#include <cstddef>

// Hot inner loops with a scalar reference and an AVX2 variant. Every kernel
// keeps the per-output operation order of the scalar code, so both variants
// produce bit-identical results (the build disables FP contraction).
namespace mfg::kernels {

enum class Isa { scalar, avx2 };

const char* to_string(Isa isa);

struct GodunovParams {
    double inv_h;
    double dt;
    double b;
    double cap;  // bound on total outflow rate p + q
};

struct Table {
    Isa isa;

    // out[r] = sum_j w[j] * cols[j*rows + r], j ascending.
    void (*combine_columns)(const double* cols, std::size_t rows, std::size_t ncols,
                            const double* w, double* out);

    // One backward dynamic-programming step on the periodic 1-D grid given the
    // diffused value ut: per cell, optimal right/left jump rates (p, q) and
    // u_out = ut + dt * [running cost + p*D+ut - q*D-ut] at the optimum.
    void (*godunov_step)(const double* ut, std::size_t n, const GodunovParams& prm,
                         double* u_out, double* p_out, double* q_out);

    // Explicit upwind transport on the periodic 1-D grid with lambda = dt/h:
    // out[i] = m[i]*(1 - lambda*(p[i]+q[i])) + lambda*(m[i-1]*p[i-1] + m[i+1]*q[i+1]).
    void (*upwind_transport)(const double* m, const double* p, const double* q, std::size_t n,
                             double lambda, double* out);

    // Per-cell kinetic cost of the split momenta (P right, N left):
    // ((b*m - P)^2 + (b*m + N)^2 - (b*m)^2) / (2m); zero for an empty cell at
    // rest, +inf for a moving empty cell.
    void (*kinetic_cells)(const double* m, const double* P, const double* N, std::size_t n,
                          double b, double* out);
};

const Table& scalar_table();
// nullptr when the CPU or the build lacks AVX2.
const Table* avx2_table();
bool cpu_has_avx2();

// Selected once: MFG_KERNELS=scalar|avx2|auto (default auto).
const Table& active();

// Thresholds shared by both variants.
inline constexpr double kEmptyCell = 1e-12;

}  // namespace mfg::kernels
