// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volsurf/pricing.hpp"
#include "volsurf/rng.hpp"
#include "volsurf/surface.hpp"

namespace volsurf::synthgen {

/// A set of surfaces on a common grid, with generator metadata.
struct Dataset {
    surface::SurfaceGrid grid;
    std::vector<surface::VolSurface> surfaces;
    std::vector<pricing::HestonParams> params; ///< per surface; empty for ingested data
    std::uint64_t seed = 0;
    std::string split_name;

    int size() const { return static_cast<int>(surfaces.size()); }
};

/// Uniform draw from the sampling box (v0, kappa, theta in [0.01, 0.16] /
/// [0.5, 5], xi in [0.1, 0.8], rho in [-0.9, -0.1]), rejection-resampled
/// until the Feller condition holds.
pricing::HestonParams sample_heston_params(Rng& rng);

/// Prices the whole grid under Heston and inverts to implied volatilities.
/// The OTM side (put for K < F) is priced and inverted; the implied vol is
/// identical by parity and the inversion stays well-conditioned in the wings.
surface::VolSurface generate_surface(const pricing::HestonParams& p, const surface::SurfaceGrid& g,
                                     const pricing::MarketContext& ctx);

/// n surfaces from independent per-index parameter substreams of `seed`;
/// identical output for any thread count or surface order.
Dataset generate_dataset(int n, std::uint64_t seed, const std::string& split_name = "",
                         bool parallel = true);

/// Serial reference path (same substreams, no OpenMP); kept for tests and
/// the generation benchmark.
Dataset generate_dataset_serial(int n, std::uint64_t seed, const std::string& split_name = "");

/// Binary archive: 8-byte magic, u32 format version, u64 header length,
/// UTF-8 JSON header (grid, seed, count, split, per-surface params), payload
/// of count*rows*cols little-endian doubles (NaN marks entries without
/// ground truth), u64 FNV-1a checksum of the payload.
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

/// One row per grid point: surface_id, tenor, strike, log_moneyness, iv
/// (empty for entries without ground truth).
void export_csv(const Dataset& d, const std::string& path);

} // namespace volsurf::synthgen
