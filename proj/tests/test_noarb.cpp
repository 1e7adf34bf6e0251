// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "volsurf/noarb.hpp"
#include "volsurf/rng.hpp"
#include "volsurf/surface.hpp"

using namespace volsurf;
using namespace volsurf::noarb;

namespace {

Matrix monotone_w() {
    const auto g = surface::make_grid();
    Matrix w(8, 25);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 25; ++j)
            w(i, j) = g.tenors[i] * 0.04;
    return w;
}

} // namespace

TEST_CASE("calendar check on a monotone surface") {
    const auto st = calendar_check(monotone_w());
    CHECK(st.count_checked == 175);
    CHECK(st.rate == 0.0);
    CHECK(st.mean_magnitude == 0.0);
}

TEST_CASE("calendar check counts a constructed drop") {
    Matrix w = monotone_w();
    w(4, 10) = w(3, 10) - 0.01; // one violating pair
    const auto st = calendar_check(w);
    // the drop also makes the (4,5) pair a rise, so exactly one violation
    CHECK(st.count_violations == 1);
    CHECK(st.rate == doctest::Approx(1.0 / 175.0).epsilon(1e-12));
    CHECK(st.mean_magnitude == doctest::Approx(0.01).epsilon(1e-9));
}

TEST_CASE("calendar tolerance band") {
    Matrix w(8, 25);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 25; ++j)
            w(i, j) = 0.04 - 5e-11 * i; // inside the 1e-10 tolerance
    CHECK(calendar_check(w).rate == 0.0);
}

TEST_CASE("butterfly second difference is exact on quadratics") {
    // non-uniform spacing
    const std::vector<double> m{0.0, 1.0, 3.0};
    const std::vector<double> w{0.0, 1.0, 9.0}; // w = m^2
    const auto d2 = butterfly_second_diff(w, m);
    REQUIRE(d2.size() == 1);
    CHECK(d2[0] == doctest::Approx(2.0).epsilon(1e-15));

    // affine slice -> exactly zero
    const std::vector<double> wa{1.0, 3.0, 7.0}; // w = 1 + 2m
    CHECK(butterfly_second_diff(wa, m)[0] == 0.0);

    // random quadratics on random increasing grids
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> grid(9);
        double x = -0.4;
        for (auto& v : grid) {
            x += rng.uniform(0.01, 0.12);
            v = x;
        }
        const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2), c = rng.uniform(-2, 2);
        std::vector<double> row(9);
        for (int j = 0; j < 9; ++j)
            row[j] = a * grid[j] * grid[j] + b * grid[j] + c;
        for (double v : butterfly_second_diff(row, grid))
            CHECK(v == doctest::Approx(2.0 * a).epsilon(1e-10));
    }
}

TEST_CASE("butterfly second difference reduces to the uniform stencil") {
    const double h = 0.025;
    const std::vector<double> m{0.0, h, 2 * h};
    const std::vector<double> w{0.31, 0.07, 0.19};
    const double expect = (w[0] - 2 * w[1] + w[2]) / (h * h);
    CHECK(butterfly_second_diff(w, m)[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("butterfly check counts and tolerance") {
    const auto g = surface::make_grid();
    Matrix w(8, 25);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 25; ++j) {
            const double m = g.log_moneyness[j];
            w(i, j) = 0.04 * g.tenors[i] + 0.1 * m * m; // convex rows
        }
    auto st = butterfly_check(w, g.log_moneyness);
    CHECK(st.count_checked == 184);
    CHECK(st.rate == 0.0);

    // single concave kink in one row
    w(2, 10) += 0.05;
    st = butterfly_check(w, g.log_moneyness);
    // the bump makes the stencils at j=9 and j=11 more convex; only j=10 flips
    CHECK(st.count_violations == 1);
    CHECK(st.rate == doctest::Approx(1.0 / 184.0).epsilon(1e-12));
}

TEST_CASE("penalties vanish on satisfying surfaces") {
    const auto g = surface::make_grid();
    CHECK(calendar_penalty(monotone_w()) == 0.0);

    Matrix w(8, 25);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 25; ++j)
            w(i, j) = 0.02 + 0.3 * g.log_moneyness[j] * g.log_moneyness[j];
    CHECK(butterfly_penalty(w, g.log_moneyness) == 0.0);
}

TEST_CASE("calendar penalty of a single constructed drop") {
    Matrix w = monotone_w();
    w(4, 10) = w(3, 10) - 0.01;
    // one pair with dw = -0.01 (the following pair turns positive)
    CHECK(calendar_penalty(w) == doctest::Approx(1e-4 / 175.0).epsilon(1e-6));
}

TEST_CASE("butterfly penalty of uniformly concave rows") {
    const std::vector<double> m{-0.3, -0.1, 0.0, 0.2, 0.5};
    Matrix w(2, 5);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 5; ++j)
            w(i, j) = -m[j] * m[j]; // second derivative -2 everywhere
    CHECK(butterfly_penalty(w, m) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("expected severity") {
    ViolationStats v;
    v.rate = 0.45;
    v.mean_magnitude = 0.01;
    CHECK(expected_severity(v) == doctest::Approx(4.5e-3).epsilon(1e-15));
    ViolationStats zero;
    CHECK(expected_severity(zero) == 0.0);
    // reported transformer row: rate 0.450, severity 5.87e-3
    ViolationStats row;
    row.rate = 0.450;
    row.mean_magnitude = 1.304e-2;
    CHECK(expected_severity(row) == doctest::Approx(5.87e-3).epsilon(1e-3));
}

TEST_CASE("penalty monotonicity under a worsening violation") {
    const auto g = surface::make_grid();
    Matrix w = monotone_w();
    w(4, 10) = w(3, 10) - 0.01;
    const double p1 = calendar_penalty(w);
    w(4, 10) = w(3, 10) - 0.02;
    const double p2 = calendar_penalty(w);
    CHECK(p2 > p1);
    CHECK(p1 > 0.0);
    (void)g;
}

TEST_CASE("differentiable penalties match values and finite differences") {
    const auto g = surface::make_grid();
    Rng rng(71);

    // batched w tensor with a mix of violating and satisfying rows
    const int batch = 2;
    std::vector<double> data;
    for (int b = 0; b < batch; ++b)
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 25; ++j) {
                const double m = g.log_moneyness[j];
                double v = 0.03 * g.tenors[i] + 0.05 * m * m + 0.004 * rng.uniform(-1.0, 1.0);
                data.push_back(v);
            }

    ad::Tensor w = ad::Tensor::param({batch, 8, 25}, data);
    const ad::Tensor pcal = calendar_penalty_op(w);
    const ad::Tensor pbut = butterfly_penalty_op(w, g.log_moneyness);

    // values agree with the plain implementations (batch mean)
    double cal_plain = 0.0, but_plain = 0.0;
    for (int b = 0; b < batch; ++b) {
        Matrix wm(8, 25);
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 25; ++j)
                wm(i, j) = data[(static_cast<std::size_t>(b) * 8 + i) * 25 + j];
        cal_plain += calendar_penalty(wm);
        but_plain += butterfly_penalty(wm, g.log_moneyness);
    }
    CHECK(pcal.scalar_value() == doctest::Approx(cal_plain / batch).epsilon(1e-12));
    CHECK(pbut.scalar_value() == doctest::Approx(but_plain / batch).epsilon(1e-12));

    // gradients against central differences at sampled coordinates
    for (const bool butterfly : {false, true}) {
        ad::Tensor wt = ad::Tensor::param({batch, 8, 25}, data);
        ad::Tensor loss = butterfly ? butterfly_penalty_op(wt, g.log_moneyness)
                                    : calendar_penalty_op(wt);
        loss.backward();
        Rng pick(butterfly ? 5u : 6u);
        for (int rep = 0; rep < 40; ++rep) {
            const std::size_t idx = pick.next_u64() % wt.numel();
            auto eval = [&](double x) {
                std::vector<double> d2 = data;
                d2[idx] = x;
                ad::Tensor w2 = ad::Tensor::constant({batch, 8, 25}, d2);
                return butterfly ? butterfly_penalty_op(w2, g.log_moneyness).scalar_value()
                                 : calendar_penalty_op(w2).scalar_value();
            };
            const double fd = oracles::central_diff(eval, data[idx], 1e-7);
            const double an = wt.grad()[idx];
            if (std::abs(fd) > 1e-12)
                CHECK(std::abs(an - fd) / std::abs(fd) < 1e-5);
            else
                CHECK(std::abs(an - fd) < 1e-8);
        }
    }

    // zero gradient on satisfying surfaces
    std::vector<double> clean;
    for (int b = 0; b < batch; ++b)
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 25; ++j) {
                const double m = g.log_moneyness[j];
                clean.push_back(0.04 * g.tenors[i] + 0.2 * m * m);
            }
    ad::Tensor wc = ad::Tensor::param({batch, 8, 25}, clean);
    ad::Tensor total = ad::scaled_sum(
        {calendar_penalty_op(wc), butterfly_penalty_op(wc, g.log_moneyness)}, {1.0, 1.0});
    CHECK(total.scalar_value() == 0.0);
    total.backward();
    for (double gv : wc.grad())
        CHECK(gv == 0.0);
}
