// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "volsurf/noarb.hpp"
#include "volsurf/synthgen.hpp"

using namespace volsurf;
using namespace volsurf::synthgen;

namespace {

bool datasets_bitwise_equal(const Dataset& a, const Dataset& b) {
    if (a.size() != b.size())
        return false;
    for (int s = 0; s < a.size(); ++s) {
        const auto& x = a.surfaces[s].iv.values();
        const auto& y = b.surfaces[s].iv.values();
        if (x.size() != y.size())
            return false;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (std::memcmp(&x[i], &y[i], sizeof(double)) != 0)
                return false;
        if (!(a.surfaces[s].target_mask == b.surfaces[s].target_mask))
            return false;
    }
    for (int s = 0; s < a.size(); ++s) {
        if (a.params[s].v0 != b.params[s].v0 || a.params[s].rho != b.params[s].rho)
            return false;
    }
    return true;
}

} // namespace

TEST_CASE("sampled parameters satisfy the box and the Feller condition") {
    Rng rng(99);
    for (int i = 0; i < 500; ++i) {
        const auto p = sample_heston_params(rng);
        CHECK(p.v0 >= 0.01);
        CHECK(p.v0 <= 0.16);
        CHECK(p.kappa >= 0.5);
        CHECK(p.kappa <= 5.0);
        CHECK(p.theta >= 0.01);
        CHECK(p.theta <= 0.16);
        CHECK(p.xi >= 0.1);
        CHECK(p.xi <= 0.8);
        CHECK(p.rho >= -0.9);
        CHECK(p.rho < 0.0);
        CHECK(p.feller_ok());
    }
}

TEST_CASE("feller boundary algebra") {
    // kappa = 0.5, theta = 0.01 admits xi only at the bottom of its range
    const pricing::HestonParams p{0.04, 0.5, 0.01, 0.0999, -0.5};
    CHECK(p.feller_ok());
    const pricing::HestonParams q{0.04, 0.5, 0.01, 0.101, -0.5};
    CHECK(!q.feller_ok());
}

TEST_CASE("constant-variance degenerate limit reproduces a flat 20 percent surface") {
    const auto g = surface::make_grid();
    const pricing::HestonParams p{0.04, 1.0, 0.04, 1e-4, -0.5};
    const pricing::MarketContext ctx{100.0, 0.0, 0.0};
    const auto s = generate_surface(p, g, ctx);
    for (int i = 0; i < g.n_tenors(); ++i)
        for (int j = 0; j < g.n_strikes(); ++j)
            CHECK(std::abs(s.iv(i, j) - 0.2) < 1e-3);
}

TEST_CASE("negative correlation produces an equity skew at short tenor") {
    const auto g = surface::make_grid();
    const pricing::HestonParams p{0.04, 2.0, 0.05, 0.4, -0.7};
    const pricing::MarketContext ctx{100.0, 0.0, 0.0};
    const auto s = generate_surface(p, g, ctx);
    CHECK(s.iv(0, 0) > s.iv(0, 24));
    CHECK(s.iv(1, 0) > s.iv(1, 24));
    // short-tenor ATM vol near sqrt(v0) for a kappa = 1 draw
    const pricing::HestonParams q{0.09, 1.0, 0.05, 0.3, -0.5};
    const auto s2 = generate_surface(q, g, ctx);
    CHECK(std::abs(s2.iv(0, 12) - 0.3) / 0.3 < 0.10);
}

TEST_CASE("dataset generation is deterministic and order-independent") {
    const Dataset a = generate_dataset(6, 456, "test");
    const Dataset b = generate_dataset(6, 456, "test");
    CHECK(datasets_bitwise_equal(a, b));

    const Dataset serial = generate_dataset_serial(6, 456, "test");
    CHECK(datasets_bitwise_equal(a, serial));

    const Dataset other_seed = generate_dataset(6, 457, "test");
    CHECK(!datasets_bitwise_equal(a, other_seed));
}

TEST_CASE("dataset save/load round trip is bit-identical") {
    const Dataset d = generate_dataset(4, 42, "roundtrip");
    const std::string path = "test_roundtrip.vsd";
    save_dataset(d, path);
    const Dataset loaded = load_dataset(path);
    CHECK(datasets_bitwise_equal(d, loaded));
    CHECK(loaded.seed == 42);
    CHECK(loaded.split_name == "roundtrip");
    CHECK(loaded.params.size() == 4);

    // a second save of the loaded dataset produces an identical file
    const std::string path2 = "test_roundtrip2.vsd";
    save_dataset(loaded, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("dataset with missing ground truth round trips through NaN entries") {
    Dataset d = generate_dataset(2, 7, "masked");
    d.params.clear(); // ingested-style dataset
    d.surfaces[0].target_mask(3, 5) = 0;
    d.surfaces[1].target_mask(0, 0) = 0;
    const std::string path = "test_masked.vsd";
    save_dataset(d, path);
    const Dataset loaded = load_dataset(path);
    CHECK(loaded.surfaces[0].target_mask(3, 5) == 0);
    CHECK(loaded.surfaces[1].target_mask(0, 0) == 0);
    CHECK(loaded.surfaces[0].target_mask.count_ones() == 199);
    CHECK(loaded.surfaces[0].iv(2, 2) == d.surfaces[0].iv(2, 2));
    std::remove(path.c_str());
}

TEST_CASE("corrupted files are rejected") {
    const Dataset d = generate_dataset(2, 11, "corrupt");
    const std::string path = "test_corrupt.vsd";
    save_dataset(d, path);

    std::ifstream in(path, std::ios::binary);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    // flip a payload byte -> checksum error
    std::string flipped = blob;
    flipped[flipped.size() / 2] ^= 0x5a;
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(flipped.data(), flipped.size());
    CHECK_THROWS_AS(load_dataset(path), ChecksumError);

    // truncate payload -> format/size error
    std::ofstream(path, std::ios::binary | std::ios::trunc)
        .write(blob.data(), static_cast<std::streamsize>(blob.size() - 100));
    CHECK_THROWS_AS(load_dataset(path), FormatError);

    // header-only file -> format error
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(blob.data(), 24);
    CHECK_THROWS_AS(load_dataset(path), FormatError);

    // bad magic -> format error
    std::string bad = blob;
    bad[0] = 'X';
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(bad.data(), bad.size());
    CHECK_THROWS_AS(load_dataset(path), FormatError);

    std::remove(path.c_str());
}

TEST_CASE("csv export shape") {
    const Dataset d = generate_dataset(2, 3, "csv");
    const std::string path = "test_export.csv";
    export_csv(d, path);
    std::ifstream f(path);
    std::string line;
    int lines = 0;
    while (std::getline(f, line))
        ++lines;
    CHECK(lines == 1 + 2 * 200);
    std::remove(path.c_str());
}

TEST_CASE("ground-truth no-arbitrage statistics on a small dataset") {
    // Small-sample version of the dataset-level floor; the acceptance suite
    // runs the full 1,000-surface check.
    const Dataset d = generate_dataset(40, 20260810, "floor");
    noarb::ViolationStats but, cal;
    for (const auto& s : d.surfaces) {
        const Matrix w = surface::total_variance(s, d.grid);
        but = noarb::merge(but, noarb::butterfly_check(w, d.grid.log_moneyness));
        cal = noarb::merge(cal, noarb::calendar_check(w));
    }
    CHECK(but.rate > 0.01);
    CHECK(but.rate < 0.20);
    CHECK(cal.rate < 0.01);
}
