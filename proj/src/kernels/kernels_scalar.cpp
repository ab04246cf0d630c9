#include "cell_ops.hpp"
#include "mfg/kernels.hpp"

namespace mfg::kernels {

namespace {

void combine_columns_scalar(const double* cols, std::size_t rows, std::size_t ncols,
                            const double* w, double* out) {
    for (std::size_t r = 0; r < rows; ++r) out[r] = 0.0;
    for (std::size_t j = 0; j < ncols; ++j) {
        const double wj = w[j];
        const double* col = cols + j * rows;
        for (std::size_t r = 0; r < rows; ++r) out[r] = out[r] + wj * col[r];
    }
}

void godunov_step_scalar(const double* ut, std::size_t n, const GodunovParams& prm,
                         double* u_out, double* p_out, double* q_out) {
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t im = i == 0 ? n - 1 : i - 1;
        std::size_t ip = i + 1 == n ? 0 : i + 1;
        detail::godunov_cell(ut[im], ut[i], ut[ip], prm, u_out[i], p_out[i], q_out[i]);
    }
}

void upwind_transport_scalar(const double* m, const double* p, const double* q, std::size_t n,
                             double lambda, double* out) {
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t im = i == 0 ? n - 1 : i - 1;
        std::size_t ip = i + 1 == n ? 0 : i + 1;
        out[i] = detail::transport_cell(m[im], m[i], m[ip], p[im], p[i], q[i], q[ip], lambda);
    }
}

void kinetic_cells_scalar(const double* m, const double* P, const double* N, std::size_t n,
                          double b, double* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = detail::kinetic_cell(m[i], P[i], N[i], b);
}

const Table kScalar{
    Isa::scalar, combine_columns_scalar, godunov_step_scalar, upwind_transport_scalar,
    kinetic_cells_scalar,
};

}  // namespace

const Table& scalar_table() { return kScalar; }

}  // namespace mfg::kernels
