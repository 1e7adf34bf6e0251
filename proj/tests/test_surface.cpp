// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "volsurf/surface.hpp"

using namespace volsurf;
using namespace volsurf::surface;

TEST_CASE("standard grid values") {
    const SurfaceGrid g = make_grid();
    g.validate();
    CHECK(g.n_tenors() == 8);
    CHECK(g.n_strikes() == 25);
    CHECK(g.tenors.front() == 0.08);
    CHECK(g.tenors.back() == 2.0);
    CHECK(g.strikes[1] - g.strikes[0] == doctest::Approx(2.5).epsilon(1e-14));
    CHECK(g.log_moneyness[0] == doctest::Approx(std::log(0.70)).epsilon(1e-15));
    CHECK(g.log_moneyness[0] == doctest::Approx(-0.3567).epsilon(1e-3));
    CHECK(g.log_moneyness[12] == 0.0); // ATM center, strike 100 exactly
    CHECK(g.log_moneyness[24] == doctest::Approx(std::log(1.30)).epsilon(1e-15));
}

TEST_CASE("total variance") {
    const SurfaceGrid g = make_grid();
    VolSurface s(8, 25);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 25; ++j)
            s.iv(i, j) = 0.2;
    const Matrix w = total_variance(s, g);
    for (int j = 0; j < 25; ++j) {
        CHECK(w(5, j) == doctest::Approx(0.04).epsilon(1e-15));  // tau = 1.0
        CHECK(w(2, j) == doctest::Approx(0.01).epsilon(1e-15));  // tau = 0.25
    }
    VolSurface zero(8, 25);
    const Matrix wz = total_variance(zero, g);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 25; ++j)
            CHECK(wz(i, j) == 0.0);
}

TEST_CASE("random mask determinism and p = 0") {
    Rng a(42), b(42);
    const auto m1 = random_mask(8, 25, 0.3, a);
    const auto m2 = random_mask(8, 25, 0.3, b);
    CHECK(m1 == m2);

    Rng c(1);
    const auto full = random_mask(8, 25, 0.0, c);
    CHECK(full.count_ones() == 200);
}

TEST_CASE("random mask empirical missing rate") {
    Rng rng(123);
    long missing = 0;
    const int draws = 10000;
    for (int d = 0; d < draws; ++d)
        missing += 200 - random_mask(8, 25, 0.3, rng).count_ones();
    const double rate = static_cast<double>(missing) / (200.0 * draws);
    CHECK(rate > 0.28);
    CHECK(rate < 0.32);
}

TEST_CASE("random mask degenerate draw fails loudly") {
    Rng rng(5);
    CHECK_THROWS_AS(random_mask(8, 25, 0.9999999999999, rng), DegenerateMaskError);
    CHECK_THROWS_AS(random_mask(8, 25, 1.0, rng), InvalidInputError);
}

TEST_CASE("wing mask removes the two deepest OTM-put columns") {
    const SurfaceGrid g = make_grid();
    const auto m = wing_mask(g);
    for (int i = 0; i < 8; ++i) {
        CHECK(m(i, 0) == 0);   // log m = -0.3567
        CHECK(m(i, 1) == 0);   // log m = -0.3216
        CHECK(m(i, 2) == 1);
        CHECK(m(i, 24) == 1);  // log m = 0.2624 < 0.3
    }
    CHECK(200 - m.count_ones() == 16);
}

TEST_CASE("combine masks") {
    const SurfaceGrid g = make_grid();
    const auto wing = wing_mask(g);
    MaskMatrix ones(8, 25, 1);
    CHECK(combine_masks(ones, wing) == wing);
    CHECK(combine_masks(wing, wing) == wing);

    Rng rng(9);
    const auto rnd = random_mask(8, 25, 0.3, rng);
    const auto both = combine_masks(rnd, wing);
    CHECK(both.count_ones() <= std::min(rnd.count_ones(), wing.count_ones()));

    // ATM column is governed solely by the random component.
    for (int i = 0; i < 8; ++i)
        CHECK(both(i, 12) == rnd(i, 12));

    MaskMatrix zeros(8, 25, 0);
    CHECK_THROWS_AS(combine_masks(ones, zeros), DegenerateMaskError);
}

TEST_CASE("build_input") {
    const SurfaceGrid g = make_grid();
    VolSurface s(8, 25);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 25; ++j)
            s.iv(i, j) = 0.1 + 0.01 * i + 0.001 * j;

    MaskMatrix ones(8, 25, 1);
    const ModelInput full = build_input(s, ones);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 25; ++j) {
            CHECK(full.at(0, i, j) == s.iv(i, j));
            CHECK(full.at(1, i, j) == 1.0);
        }

    MaskMatrix one_obs(8, 25, 0);
    one_obs(3, 7) = 1;
    s.iv(3, 7) = 0.25;
    const ModelInput sparse = build_input(s, one_obs);
    int nonzero = 0;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 25; ++j)
            if (sparse.at(0, i, j) != 0.0)
                ++nonzero;
    CHECK(nonzero == 1);
    CHECK(sparse.at(0, 3, 7) == 0.25);

    // masked-out entry becomes zero in channel 0
    MaskMatrix drop = ones;
    drop(2, 4) = 0;
    s.iv(2, 4) = 0.25;
    const ModelInput in = build_input(s, drop);
    CHECK(in.at(0, 2, 4) == 0.0);
    CHECK(in.at(1, 2, 4) == 0.0);
}
