// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "volsurf/matrix.hpp"
#include "volsurf/tensor.hpp"

namespace volsurf::noarb {

/// Numerical tolerance for violation checks (not applied to penalties).
inline constexpr double kCheckTolerance = 1e-10;

/// Violation statistics over a set of checked points or pairs.
struct ViolationStats {
    double rate = 0.0;            ///< violating fraction of checked stencils
    double mean_magnitude = 0.0;  ///< mean |violation| over violators, 0 if none
    long count_checked = 0;
    long count_violations = 0;
};

/// Merge pooled stats (sums counts and magnitude mass).
ViolationStats merge(const ViolationStats& a, const ViolationStats& b);

/// Calendar condition: total variance non-decreasing in tenor. Checks all
/// (rows-1) x cols adjacent-tenor differences; violation iff dw < -1e-10.
ViolationStats calendar_check(const Matrix& w);

/// Second-order finite difference of one slice with non-uniform spacing;
/// returns the (n-2) interior stencil values. Exact on quadratics.
std::vector<double> butterfly_second_diff(std::span<const double> w_row,
                                          std::span<const double> log_moneyness);

/// Butterfly condition: total variance convex in log-moneyness per row.
/// Checks rows x (cols-2) interior stencils; violation iff d2w < -1e-10.
ViolationStats butterfly_check(const Matrix& w, std::span<const double> log_moneyness);

/// Expected severity S = rate * mean_magnitude.
double expected_severity(const ViolationStats& v);

/// Mean over adjacent-tenor pairs of [max(0, -dw)]^2 (plain value).
double calendar_penalty(const Matrix& w);

/// Mean over interior stencils of [max(0, -d2w)]^2 (plain value).
double butterfly_penalty(const Matrix& w, std::span<const double> log_moneyness);

// Differentiable counterparts on batched total-variance tensors [B, R, C];
// each returns the scalar batch mean so the gradient matches the plain
// per-surface values averaged over the batch.

/// w = sigma^2 * tenor, broadcast over rows.
ad::Tensor total_variance_op(const ad::Tensor& sigma, const std::vector<double>& tenors);
ad::Tensor calendar_penalty_op(const ad::Tensor& w);
ad::Tensor butterfly_penalty_op(const ad::Tensor& w, const std::vector<double>& log_moneyness);

} // namespace volsurf::noarb
