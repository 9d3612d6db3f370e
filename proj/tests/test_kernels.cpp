// Kernel equivalence: the scalar table is the reference; the AVX2 table must
// reproduce it to near machine precision on awkward sizes (tails, tiny n).
// Scalar itself is pinned against straightforward re-computation.

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "pairrl/kernels.hpp"
#include "pairrl/rng.hpp"

using namespace pairrl;

namespace {

std::vector<double> rand_vec(Rng& rng, size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

bool close(double a, double b, double tol) {
    double m = std::max({std::fabs(a), std::fabs(b), 1.0});
    return std::fabs(a - b) <= tol * m;
}

const std::vector<size_t> kSizes = {1, 2, 3, 4, 5, 7, 8, 11, 13, 16, 17, 31, 48, 50, 64, 257};

}  // namespace

TEST_CASE("scalar kernels match direct computation") {
    Rng rng(101);
    const auto& k = kern::scalar_ops();
    for (size_t n : kSizes) {
        auto x = rand_vec(rng, n), y = rand_vec(rng, n);

        double want = std::inner_product(x.begin(), x.end(), y.begin(), 0.0);
        CHECK(close(k.dot(x.data(), y.data(), n), want, 1e-12));

        auto y2 = y;
        k.axpy(2.5, x.data(), y2.data(), n);
        for (size_t i = 0; i < n; ++i) CHECK(y2[i] == doctest::Approx(y[i] + 2.5 * x[i]).epsilon(1e-12));

        CHECK(k.max_val(x.data(), n) == *std::max_element(x.begin(), x.end()));
        CHECK(close(k.sum(x.data(), n), std::accumulate(x.begin(), x.end(), 0.0), 1e-12));
    }

    // matvec family against index arithmetic done longhand
    size_t rows = 7, cols = 5;
    auto w = rand_vec(rng, rows * cols);
    auto x = rand_vec(rng, cols);
    auto xr = rand_vec(rng, rows);

    std::vector<double> y(rows, 0.5);
    k.matvec_acc(w.data(), rows, cols, x.data(), y.data());
    for (size_t r = 0; r < rows; ++r) {
        double want = 0.5;
        for (size_t c = 0; c < cols; ++c) want += w[r * cols + c] * x[c];
        CHECK(y[r] == doctest::Approx(want).epsilon(1e-12));
    }

    std::vector<double> yt(cols, -1.0);
    k.matvec_t_acc(w.data(), rows, cols, xr.data(), yt.data());
    for (size_t c = 0; c < cols; ++c) {
        double want = -1.0;
        for (size_t r = 0; r < rows; ++r) want += w[r * cols + c] * xr[r];
        CHECK(yt[c] == doctest::Approx(want).epsilon(1e-12));
    }

    auto w2 = w;
    k.ger_acc(w2.data(), rows, cols, 0.7, xr.data(), x.data());
    for (size_t r = 0; r < rows; ++r) {
        for (size_t c = 0; c < cols; ++c) {
            CHECK(w2[r * cols + c] ==
                  doctest::Approx(w[r * cols + c] + 0.7 * xr[r] * x[c]).epsilon(1e-12));
        }
    }
}

TEST_CASE("avx2 kernels agree with scalar") {
    if (!kern::avx2_supported()) {
        MESSAGE("avx2 not available on this machine; skipping");
        return;
    }
    const auto& s = kern::scalar_ops();
    const auto& v = kern::ops_for(kern::Backend::Avx2);
    Rng rng(202);
    const double tol = 1e-13;

    for (size_t n : kSizes) {
        for (int rep = 0; rep < 5; ++rep) {
            auto x = rand_vec(rng, n), y = rand_vec(rng, n);

            CHECK(close(s.dot(x.data(), y.data(), n), v.dot(x.data(), y.data(), n), tol));
            CHECK(s.max_val(x.data(), n) == v.max_val(x.data(), n));
            CHECK(close(s.sum(x.data(), n), v.sum(x.data(), n), tol));

            auto ys = y, yv = y;
            s.axpy(-1.3, x.data(), ys.data(), n);
            v.axpy(-1.3, x.data(), yv.data(), n);
            for (size_t i = 0; i < n; ++i) CHECK(close(ys[i], yv[i], tol));
        }
    }

    for (size_t rows : {1u, 3u, 48u, 50u}) {
        for (size_t cols : {1u, 5u, 48u, 64u}) {
            auto w = rand_vec(rng, rows * cols);
            auto x = rand_vec(rng, cols);
            auto xr = rand_vec(rng, rows);

            std::vector<double> a(rows, 0.1), b(rows, 0.1);
            s.matvec_acc(w.data(), rows, cols, x.data(), a.data());
            v.matvec_acc(w.data(), rows, cols, x.data(), b.data());
            for (size_t i = 0; i < rows; ++i) CHECK(close(a[i], b[i], tol));

            std::vector<double> at(cols, 0.2), bt(cols, 0.2);
            s.matvec_t_acc(w.data(), rows, cols, xr.data(), at.data());
            v.matvec_t_acc(w.data(), rows, cols, xr.data(), bt.data());
            for (size_t i = 0; i < cols; ++i) CHECK(close(at[i], bt[i], tol));

            auto ws = w, wv = w;
            s.ger_acc(ws.data(), rows, cols, 1.7, xr.data(), x.data());
            v.ger_acc(wv.data(), rows, cols, 1.7, xr.data(), x.data());
            for (size_t i = 0; i < rows * cols; ++i) CHECK(close(ws[i], wv[i], tol));
        }
    }
}

TEST_CASE("backend selection") {
    kern::Backend before = kern::active_backend();

    kern::set_backend(kern::Backend::Scalar);
    CHECK(kern::active_backend() == kern::Backend::Scalar);
    CHECK(kern::parse_backend("scalar") == kern::Backend::Scalar);
    CHECK_THROWS_AS(kern::parse_backend("mmx"), ValidationError);

    if (kern::avx2_supported()) {
        kern::set_backend(kern::Backend::Avx2);
        CHECK(kern::active_backend() == kern::Backend::Avx2);
        CHECK(kern::parse_backend("auto") == kern::Backend::Avx2);
    }

    kern::set_backend(before);
}

TEST_CASE("logsumexp is max-shifted and stable") {
    std::vector<double> x = {1000.0, 1000.0};
    CHECK(kern::logsumexp(x.data(), 2) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-12));

    std::vector<double> y = {-2000.0, -2000.0, -2000.0, -2000.0};
    CHECK(kern::logsumexp(y.data(), 4) ==
          doctest::Approx(-2000.0 + std::log(4.0)).epsilon(1e-12));

    std::vector<double> z = {0.1, -0.4, 2.0};
    double direct = std::log(std::exp(0.1) + std::exp(-0.4) + std::exp(2.0));
    CHECK(kern::logsumexp(z.data(), 3) == doctest::Approx(direct).epsilon(1e-12));
}
