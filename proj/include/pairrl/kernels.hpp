#pragma once
// Low-level f64 vector kernels behind the policy math. Two implementations:
// a scalar reference and an AVX2+FMA variant, selected at runtime from CPU
// features (overridable). Both must agree to tight tolerance; the scalar
// path is the semantic ground truth and the equivalence tests enforce it.
//
// Transcendentals (exp, tanh, sigmoid) stay scalar in every backend so the
// numeric stream is independent of the vector unit.

#include <cstddef>
#include <string>

namespace pairrl::kern {

struct Ops {
    // sum_i x[i] * y[i]
    double (*dot)(const double* x, const double* y, size_t n);
    // y[i] += a * x[i]
    void (*axpy)(double a, const double* x, double* y, size_t n);
    // y[r] += sum_c W[r*cols+c] * x[c], for r in [0, rows)
    void (*matvec_acc)(const double* w, size_t rows, size_t cols, const double* x, double* y);
    // y[c] += sum_r W[r*cols+c] * x[r]  (transposed accumulate)
    void (*matvec_t_acc)(const double* w, size_t rows, size_t cols, const double* x, double* y);
    // W[r*cols+c] += a * x[r] * y[c]  (outer-product accumulate)
    void (*ger_acc)(double* w, size_t rows, size_t cols, double a, const double* x, const double* y);
    // max over x[0..n)
    double (*max_val)(const double* x, size_t n);
    // sum over x[0..n)
    double (*sum)(const double* x, size_t n);
};

enum class Backend { Scalar, Avx2 };

// Reference implementations, always available.
const Ops& scalar_ops();

// True when the running CPU supports the AVX2+FMA variant.
bool avx2_supported();

// Ops table for an explicit backend; throws ValidationError when the backend
// is not available on this machine.
const Ops& ops_for(Backend b);

// Active table used by all numeric code. Defaults to the best supported
// backend at startup.
const Ops& active_ops();
Backend active_backend();
void set_backend(Backend b);

// Parses "scalar" / "avx2" / "auto"; throws ValidationError otherwise.
Backend parse_backend(const std::string& name);
const char* backend_name(Backend b);

// Scalar elementwise nonlinearities shared by all backends.
void sigmoid_inplace(double* x, size_t n);
void tanh_inplace(double* x, size_t n);

// log(sum_i exp(x[i])) with max subtraction; uses active max/sum for the
// reductions, scalar exp for the transform.
double logsumexp(const double* x, size_t n);

}  // namespace pairrl::kern
