// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <functional>

#include "volsurf/errors.hpp"

namespace volsurf::pricing {

/// Forward level and carry rates shared by all pricing calls.
struct MarketContext {
    double forward = 100.0;        ///< F
    double rate = 0.0;             ///< r, continuously compounded
    double dividend_yield = 0.0;   ///< q, continuously compounded

    void validate() const;
};

/// Heston model parameters (v0, kappa, theta, xi, rho).
struct HestonParams {
    double v0;     ///< initial variance
    double kappa;  ///< mean-reversion speed
    double theta;  ///< long-run variance
    double xi;     ///< vol-of-vol
    double rho;    ///< spot-vol correlation, in (-1, 1)

    bool feller_ok() const { return 2.0 * kappa * theta >= xi * xi; }
    void validate() const;
};

/// One European option: strike, year-fraction tenor, call/put flag.
struct OptionSpec {
    double strike;
    double tenor;
    bool is_call = true;

    void validate() const;
};

/// Standard normal CDF via the complementary error function.
double norm_cdf(double x);

/// Standard normal density.
double norm_pdf(double x);

/// Black-76 forward option price. sigma == 0 returns discounted intrinsic.
double black76_price(const MarketContext& ctx, const OptionSpec& opt, double sigma);

/// dPrice/dSigma; strictly positive for sigma > 0 (call and put identical).
double vega(const MarketContext& ctx, const OptionSpec& opt, double sigma);

/// Characteristic function of the log forward return ln(F_T / F) under
/// Heston, in the Albrecher et al. branch-stable form ("little Heston trap").
/// Satisfies cf(0) = 1 and cf(-i) = 1 (forward martingale).
std::complex<double> heston_cf(std::complex<double> u, const HestonParams& p, double forward,
                               double tenor);

/// Semi-analytical Heston price via Gil-Pelaez inversion,
/// C = e^{-r tau} (F P1 - K P2), each probability integral evaluated by
/// adaptive Gauss-Kronrod quadrature to absolute tolerance 1e-10.
double heston_price(const HestonParams& p, const MarketContext& ctx, const OptionSpec& opt);

/// Black-76 implied volatility by safeguarded Newton-Raphson: a bisection
/// bracket is maintained, steps leaving it become bisection steps, and after
/// 50 Newton iterations the solver falls back to pure bisection.
/// Tolerance 1e-12 in price and volatility space.
double implied_vol(double target_price, const MarketContext& ctx, const OptionSpec& opt);

namespace detail {
/// Adaptive Gauss-Kronrod 15(7) on [a, b]. Subdivides until the error
/// estimate reaches `refine_target` (or the budget runs out), then verifies
/// the `abs_tol` contract; ConvergenceError if the estimate still exceeds
/// it. refine_target < abs_tol trades extra panels for headroom, since
/// small option prices are differences of O(1) probabilities.
double adaptive_gk(const std::function<double(double)>& f, double a, double b, double abs_tol,
                   int max_intervals, double refine_target = -1.0);
} // namespace detail

} // namespace volsurf::pricing
