// Determinism and distribution sanity for the seeded generator. Exact stream
// equality matters more here than statistical power; training reproducibility
// rides on it.

#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "pairrl/rng.hpp"

using namespace pairrl;

TEST_CASE("same seed gives identical streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        CHECK(a.uniform() == b.uniform());
        CHECK(a.normal() == b.normal());
        CHECK(a.uniform_int(17) == b.uniform_int(17));
    }
}

TEST_CASE("uniform stays in [0,1) and looks flat") {
    Rng rng(7);
    double sum = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::fabs(sum / n - 0.5) < 0.01);
}

TEST_CASE("normal has unit moments") {
    Rng rng(8);
    double s1 = 0.0, s2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double x = rng.normal();
        s1 += x;
        s2 += x * x;
    }
    CHECK(std::fabs(s1 / n) < 0.02);
    CHECK(std::fabs(s2 / n - 1.0) < 0.03);
}

TEST_CASE("uniform_int covers its range without bias") {
    Rng rng(9);
    const int k = 10;
    std::vector<int> counts(k, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        int v = rng.uniform_int(k);
        REQUIRE(v >= 0);
        REQUIRE(v < k);
        ++counts[v];
    }
    for (int c : counts) {
        CHECK(std::fabs(static_cast<double>(c) / n - 0.1) < 0.01);
    }
    CHECK_THROWS_AS(rng.uniform_int(0), ValidationError);
}

TEST_CASE("derived seeds separate by tag and index") {
    std::set<uint64_t> seen;
    for (uint64_t i = 0; i < 100; ++i) {
        seen.insert(derive_seed(123, "alpha", i));
        seen.insert(derive_seed(123, "beta", i));
    }
    CHECK(seen.size() == 200);
    CHECK(derive_seed(123, "alpha", 5) == derive_seed(123, "alpha", 5));
    CHECK(derive_seed(123, "alpha", 5) != derive_seed(124, "alpha", 5));
}

TEST_CASE("shuffle permutes and sampling without replacement is distinct") {
    Rng rng(11);
    std::vector<int> v = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    auto orig = v;
    rng.shuffle(v);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == orig);

    auto pick = rng.sample_without_replacement(20, 8);
    CHECK(pick.size() == 8);
    std::set<int> uniq(pick.begin(), pick.end());
    CHECK(uniq.size() == 8);
    for (int x : pick) {
        CHECK(x >= 0);
        CHECK(x < 20);
    }
    CHECK_THROWS_AS(rng.sample_without_replacement(3, 4), ValidationError);
}

TEST_CASE("categorical respects weights") {
    Rng rng(12);
    std::vector<double> w = {0.0, 3.0, 1.0};
    int c1 = 0, c2 = 0;
    for (int i = 0; i < 40000; ++i) {
        int v = rng.categorical(w);
        REQUIRE(v != 0);
        if (v == 1) ++c1;
        else ++c2;
    }
    CHECK(std::fabs(static_cast<double>(c1) / (c1 + c2) - 0.75) < 0.02);
}
