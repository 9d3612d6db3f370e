// Scalar reference kernels. Plain loops, no tricks: this is the behavior the
// vector backends are tested against.

#include <cmath>

#include "pairrl/kernels.hpp"

namespace pairrl::kern {

namespace {

double s_dot(const double* x, const double* y, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void s_axpy(double a, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void s_matvec_acc(const double* w, size_t rows, size_t cols, const double* x, double* y) {
    for (size_t r = 0; r < rows; ++r) {
        y[r] += s_dot(w + r * cols, x, cols);
    }
}

void s_matvec_t_acc(const double* w, size_t rows, size_t cols, const double* x, double* y) {
    for (size_t r = 0; r < rows; ++r) {
        s_axpy(x[r], w + r * cols, y, cols);
    }
}

void s_ger_acc(double* w, size_t rows, size_t cols, double a, const double* x, const double* y) {
    for (size_t r = 0; r < rows; ++r) {
        s_axpy(a * x[r], y, w + r * cols, cols);
    }
}

double s_max_val(const double* x, size_t n) {
    double m = x[0];
    for (size_t i = 1; i < n; ++i) {
        if (x[i] > m) m = x[i];
    }
    return m;
}

double s_sum(const double* x, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

}  // namespace

const Ops& scalar_ops() {
    static const Ops ops{s_dot, s_axpy, s_matvec_acc, s_matvec_t_acc,
                         s_ger_acc, s_max_val, s_sum};
    return ops;
}

void sigmoid_inplace(double* x, size_t n) {
    for (size_t i = 0; i < n; ++i) x[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void tanh_inplace(double* x, size_t n) {
    for (size_t i = 0; i < n; ++i) x[i] = std::tanh(x[i]);
}

double logsumexp(const double* x, size_t n) {
    const Ops& k = active_ops();
    double m = k.max_val(x, n);
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += std::exp(x[i] - m);
    return m + std::log(acc);
}

}  // namespace pairrl::kern
