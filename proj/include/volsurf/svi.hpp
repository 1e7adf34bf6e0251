// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <utility>
#include <vector>

#include "volsurf/surface.hpp"

namespace volsurf::svi {

/// Raw-SVI slice parameters.
struct SviParams {
    double a;      ///< variance level
    double b;      ///< slope magnitude, >= 0
    double rho;    ///< asymmetry, |rho| <= 1
    double m;      ///< horizontal shift
    double sigma;  ///< curvature, > 0

    void validate() const;
    std::array<double, 5> as_array() const { return {a, b, rho, m, sigma}; }
    static SviParams from_array(const std::array<double, 5>& v) {
        return {v[0], v[1], v[2], v[3], v[4]};
    }
};

/// w(k) = a + b [rho (k - m) + sqrt((k - m)^2 + sigma^2)]
double svi_total_variance(const SviParams& p, double k);

/// dw/d(a, b, rho, m, sigma) at k.
std::array<double, 5> svi_param_gradient(const SviParams& p, double k);

/// (k, w) observation pairs of one maturity slice.
using SliceObservations = std::vector<std::pair<double, double>>;

struct FitResult {
    SviParams params;
    double objective = 0.0;                 ///< slice MSE in total-variance space
    std::vector<double> objective_history;  ///< accepted iterates, non-increasing
};

/// Box bounds used by the fitter.
struct FitBounds {
    std::array<double, 5> lo{-0.05, 0.0, -0.999, -1.0, 1e-4};
    std::array<double, 5> hi{1.0, 5.0, 0.999, 1.0, 2.0};
};

/// Bound-constrained quasi-Newton (projected L-BFGS with monotone
/// backtracking line search) on the slice MSE. The result's objective never
/// exceeds the initial one.
FitResult fit_slice(const SliceObservations& obs, const SviParams& init,
                    const FitBounds& bounds = {});

/// Multi-start fit over rho in {-0.9, -0.5, 0, 0.5, 0.9}; raw-SVI fitting is
/// multi-modal. Initialization: a = 0.9 * min observed w (floored at 1e-6),
/// b = 0.1, m = 0, sigma = 0.1.
FitResult fit_slice_multistart(const SliceObservations& obs, const FitBounds& bounds = {});

struct SurfaceFit {
    std::vector<SviParams> slices;   ///< one per tenor
    surface::VolSurface reconstruction;
};

/// Fits each maturity slice independently on observed (and valid) points and
/// reconstructs sigma = sqrt(max(w, 1e-8) / tenor) at all strikes.
SurfaceFit fit_surface(const surface::VolSurface& s, const surface::ObservationMask& mask,
                       const surface::SurfaceGrid& g);

} // namespace volsurf::svi
