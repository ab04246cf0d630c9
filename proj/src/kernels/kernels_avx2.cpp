#include <immintrin.h>

#include "cell_ops.hpp"
#include "mfg/kernels.hpp"

namespace mfg::kernels {

namespace {

void combine_columns_avx2(const double* cols, std::size_t rows, std::size_t ncols,
                          const double* w, double* out) {
    std::size_t r = 0;
    for (; r + 8 <= rows; r += 8) {
        __m256d acc0 = _mm256_setzero_pd();
        __m256d acc1 = _mm256_setzero_pd();
        for (std::size_t j = 0; j < ncols; ++j) {
            const __m256d wj = _mm256_set1_pd(w[j]);
            const double* col = cols + j * rows + r;
            acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(wj, _mm256_loadu_pd(col)));
            acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(wj, _mm256_loadu_pd(col + 4)));
        }
        _mm256_storeu_pd(out + r, acc0);
        _mm256_storeu_pd(out + r + 4, acc1);
    }
    for (; r + 4 <= rows; r += 4) {
        __m256d acc = _mm256_setzero_pd();
        for (std::size_t j = 0; j < ncols; ++j) {
            acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_set1_pd(w[j]),
                                                   _mm256_loadu_pd(cols + j * rows + r)));
        }
        _mm256_storeu_pd(out + r, acc);
    }
    for (; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < ncols; ++j) acc = acc + w[j] * cols[j * rows + r];
        out[r] = acc;
    }
}

inline __m256d relu4(__m256d x) { return _mm256_max_pd(x, _mm256_setzero_pd()); }

void godunov_step_avx2(const double* ut, std::size_t n, const GodunovParams& prm, double* u_out,
                       double* p_out, double* q_out) {
    if (n < 6) {
        scalar_table().godunov_step(ut, n, prm, u_out, p_out, q_out);
        return;
    }
    detail::godunov_cell(ut[n - 1], ut[0], ut[1], prm, u_out[0], p_out[0], q_out[0]);
    const __m256d inv_h = _mm256_set1_pd(prm.inv_h);
    const __m256d dt = _mm256_set1_pd(prm.dt);
    const __m256d b = _mm256_set1_pd(prm.b);
    const __m256d cap = _mm256_set1_pd(prm.cap);
    const __m256d half = _mm256_set1_pd(0.5);
    const __m256d two_b_cap = _mm256_set1_pd(2.0 * prm.b + prm.cap);
    const __m256d bb = _mm256_set1_pd(prm.b * prm.b);
    std::size_t i = 1;
    for (; i + 4 <= n - 1; i += 4) {
        const __m256d um = _mm256_loadu_pd(ut + i - 1);
        const __m256d u0 = _mm256_loadu_pd(ut + i);
        const __m256d up = _mm256_loadu_pd(ut + i + 1);
        const __m256d qf = _mm256_mul_pd(_mm256_sub_pd(up, u0), inv_h);
        const __m256d qb = _mm256_mul_pd(_mm256_sub_pd(u0, um), inv_h);
        __m256d p = relu4(_mm256_sub_pd(b, qf));
        __m256d q = relu4(_mm256_sub_pd(qb, b));
        const __m256d over = _mm256_cmp_pd(_mm256_add_pd(p, q), cap, _CMP_GT_OQ);
        if (_mm256_movemask_pd(over) != 0) {
            __m256d pl = _mm256_mul_pd(_mm256_sub_pd(two_b_cap, _mm256_add_pd(qf, qb)), half);
            pl = _mm256_min_pd(relu4(pl), cap);
            const __m256d ql = _mm256_sub_pd(cap, pl);
            p = _mm256_blendv_pd(p, pl, over);
            q = _mm256_blendv_pd(q, ql, over);
        }
        const __m256d d1 = _mm256_sub_pd(b, p);
        const __m256d d2 = _mm256_add_pd(b, q);
        __m256d v = _mm256_mul_pd(
            _mm256_sub_pd(_mm256_add_pd(_mm256_mul_pd(d1, d1), _mm256_mul_pd(d2, d2)), bb), half);
        v = _mm256_add_pd(v, _mm256_sub_pd(_mm256_mul_pd(p, qf), _mm256_mul_pd(q, qb)));
        _mm256_storeu_pd(u_out + i, _mm256_add_pd(u0, _mm256_mul_pd(dt, v)));
        _mm256_storeu_pd(p_out + i, p);
        _mm256_storeu_pd(q_out + i, q);
    }
    for (; i < n; ++i) {
        std::size_t ip = i + 1 == n ? 0 : i + 1;
        detail::godunov_cell(ut[i - 1], ut[i], ut[ip], prm, u_out[i], p_out[i], q_out[i]);
    }
}

void upwind_transport_avx2(const double* m, const double* p, const double* q, std::size_t n,
                           double lambda, double* out) {
    if (n < 6) {
        scalar_table().upwind_transport(m, p, q, n, lambda, out);
        return;
    }
    out[0] = detail::transport_cell(m[n - 1], m[0], m[1], p[n - 1], p[0], q[0], q[1], lambda);
    const __m256d lam = _mm256_set1_pd(lambda);
    const __m256d one = _mm256_set1_pd(1.0);
    std::size_t i = 1;
    for (; i + 4 <= n - 1; i += 4) {
        const __m256d mm = _mm256_loadu_pd(m + i - 1);
        const __m256d m0 = _mm256_loadu_pd(m + i);
        const __m256d mp = _mm256_loadu_pd(m + i + 1);
        const __m256d pm = _mm256_loadu_pd(p + i - 1);
        const __m256d p0 = _mm256_loadu_pd(p + i);
        const __m256d q0 = _mm256_loadu_pd(q + i);
        const __m256d qp = _mm256_loadu_pd(q + i + 1);
        const __m256d a = _mm256_sub_pd(one, _mm256_mul_pd(lam, _mm256_add_pd(p0, q0)));
        const __m256d s = _mm256_add_pd(_mm256_mul_pd(mm, pm), _mm256_mul_pd(mp, qp));
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_mul_pd(m0, a), _mm256_mul_pd(lam, s)));
    }
    for (; i < n; ++i) {
        std::size_t ip = i + 1 == n ? 0 : i + 1;
        out[i] = detail::transport_cell(m[i - 1], m[i], m[ip], p[i - 1], p[i], q[i], q[ip], lambda);
    }
}

void kinetic_cells_avx2(const double* m, const double* P, const double* N, std::size_t n,
                        double b, double* out) {
    const __m256d bv = _mm256_set1_pd(b);
    const __m256d half = _mm256_set1_pd(0.5);
    const __m256d empty = _mm256_set1_pd(kEmptyCell);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mv = _mm256_loadu_pd(m + i);
        const __m256d Pv = _mm256_loadu_pd(P + i);
        const __m256d Nv = _mm256_loadu_pd(N + i);
        const __m256d is_empty = _mm256_cmp_pd(mv, empty, _CMP_LT_OQ);
        if (_mm256_movemask_pd(is_empty) != 0) {
            for (std::size_t k = i; k < i + 4; ++k) out[k] = detail::kinetic_cell(m[k], P[k], N[k], b);
            continue;
        }
        const __m256d bm = _mm256_mul_pd(bv, mv);
        const __m256d r = _mm256_sub_pd(bm, Pv);
        const __m256d l = _mm256_add_pd(bm, Nv);
        const __m256d s = _mm256_sub_pd(_mm256_add_pd(_mm256_mul_pd(r, r), _mm256_mul_pd(l, l)),
                                        _mm256_mul_pd(bm, bm));
        _mm256_storeu_pd(out + i, _mm256_div_pd(_mm256_mul_pd(s, half), mv));
    }
    for (; i < n; ++i) out[i] = detail::kinetic_cell(m[i], P[i], N[i], b);
}

const Table kAvx2{
    Isa::avx2, combine_columns_avx2, godunov_step_avx2, upwind_transport_avx2, kinetic_cells_avx2,
};

}  // namespace

const Table* avx2_table_impl() { return &kAvx2; }

}  // namespace mfg::kernels
