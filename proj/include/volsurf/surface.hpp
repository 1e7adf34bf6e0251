// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "volsurf/matrix.hpp"
#include "volsurf/rng.hpp"

namespace volsurf::surface {

/// The fixed evaluation lattice: tenors x strikes with a single forward.
struct SurfaceGrid {
    std::vector<double> tenors;         ///< strictly increasing year fractions
    std::vector<double> strikes;        ///< strictly increasing
    std::vector<double> log_moneyness;  ///< log(K / forward), strictly increasing
    double forward = 100.0;

    int n_tenors() const { return static_cast<int>(tenors.size()); }
    int n_strikes() const { return static_cast<int>(strikes.size()); }
    int n_points() const { return n_tenors() * n_strikes(); }

    void validate() const;
};

/// The standard 8-tenor x 25-strike grid: tenors from one month to two
/// years, strikes equally spaced on [70, 130], forward 100.
SurfaceGrid make_grid();

/// An implied-volatility surface plus the mask of entries that carry valid
/// ground truth (all ones for synthetic surfaces).
struct VolSurface {
    Matrix iv;
    MaskMatrix target_mask;

    VolSurface() = default;
    VolSurface(int rows, int cols) : iv(rows, cols), target_mask(rows, cols, 1) {}
};

using ObservationMask = MaskMatrix; // 1 = observed

/// Total implied variance w = iv^2 * tenor, elementwise per row.
Matrix total_variance(const Matrix& iv, const SurfaceGrid& g);
Matrix total_variance(const VolSurface& s, const SurfaceGrid& g);

/// Bernoulli(1 - p) mask, independent per entry. An all-missing draw is
/// resampled once; a second all-missing draw throws DegenerateMaskError.
ObservationMask random_mask(int rows, int cols, double missing_fraction, Rng& rng);

/// Structural wing mask: columns with |log-moneyness| > 0.3 are missing
/// across all tenors (the two deepest OTM-put columns on the standard grid).
ObservationMask wing_mask(const SurfaceGrid& g);

/// Elementwise AND. Throws DegenerateMaskError if the result has no
/// observed entry.
ObservationMask combine_masks(const ObservationMask& a, const ObservationMask& b);

/// Two-channel model input: channel 0 = iv .* mask, channel 1 = mask.
struct ModelInput {
    int rows = 0, cols = 0;
    std::vector<double> data; // [2, rows, cols] row-major

    double& at(int channel, int i, int j) {
        return data[(static_cast<std::size_t>(channel) * rows + i) * cols + j];
    }
    double at(int channel, int i, int j) const {
        return data[(static_cast<std::size_t>(channel) * rows + i) * cols + j];
    }
};

ModelInput build_input(const VolSurface& s, const ObservationMask& m);

} // namespace volsurf::surface
