// AVX2+FMA kernels. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after a runtime CPU feature check (see dispatch).
// Reductions use fixed lane ordering so results are reproducible run to run
// on the same machine.

#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)
#define PAIRRL_HAVE_AVX2_TU 1
#include <immintrin.h>
#endif

#include "pairrl/kernels.hpp"

namespace pairrl::kern {

#ifdef PAIRRL_HAVE_AVX2_TU

namespace {

double hsum4(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sw = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sw));
}

double v_dot(const double* x, const double* y, size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    }
    double acc = hsum4(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void v_axpy(double a, const double* x, double* y, size_t n) {
    __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void v_matvec_acc(const double* w, size_t rows, size_t cols, const double* x, double* y) {
    for (size_t r = 0; r < rows; ++r) {
        y[r] += v_dot(w + r * cols, x, cols);
    }
}

void v_matvec_t_acc(const double* w, size_t rows, size_t cols, const double* x, double* y) {
    for (size_t r = 0; r < rows; ++r) {
        v_axpy(x[r], w + r * cols, y, cols);
    }
}

void v_ger_acc(double* w, size_t rows, size_t cols, double a, const double* x, const double* y) {
    for (size_t r = 0; r < rows; ++r) {
        v_axpy(a * x[r], y, w + r * cols, cols);
    }
}

double v_max_val(const double* x, size_t n) {
    size_t i = 0;
    double m;
    if (n >= 4) {
        __m256d vm = _mm256_loadu_pd(x);
        for (i = 4; i + 4 <= n; i += 4) {
            vm = _mm256_max_pd(vm, _mm256_loadu_pd(x + i));
        }
        __m128d lo = _mm256_castpd256_pd128(vm);
        __m128d hi = _mm256_extractf128_pd(vm, 1);
        lo = _mm_max_pd(lo, hi);
        __m128d sw = _mm_unpackhi_pd(lo, lo);
        m = _mm_cvtsd_f64(_mm_max_sd(lo, sw));
    } else {
        m = x[0];
        i = 1;
    }
    for (; i < n; ++i) {
        if (x[i] > m) m = x[i];
    }
    return m;
}

double v_sum(const double* x, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    }
    double s = hsum4(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

}  // namespace

const Ops* avx2_ops_table() {
    static const Ops ops{v_dot, v_axpy, v_matvec_acc, v_matvec_t_acc,
                         v_ger_acc, v_max_val, v_sum};
    return &ops;
}

#else

const Ops* avx2_ops_table() { return nullptr; }

#endif

}  // namespace pairrl::kern
