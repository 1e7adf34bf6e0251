// SPDX-License-Identifier: Apache-2.0
#include "volsurf/pricing.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace volsurf::pricing {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kSqrt2 = 1.414213562373095048801688724209698079;
constexpr double kInvSqrt2Pi = 0.398942280401432677939946059934381868;

using cd = std::complex<double>;

bool finite(double x) { return std::isfinite(x); }

} // namespace

void MarketContext::validate() const {
    if (!(forward > 0.0) || !finite(forward))
        throw InvalidInputError("MarketContext: forward must be finite and > 0");
    if (!finite(rate) || !finite(dividend_yield))
        throw InvalidInputError("MarketContext: rates must be finite");
}

void HestonParams::validate() const {
    if (!(v0 > 0.0) || !(kappa > 0.0) || !(theta > 0.0) || !(xi > 0.0))
        throw InvalidInputError("HestonParams: v0, kappa, theta, xi must be > 0");
    if (!(std::abs(rho) < 1.0))
        throw InvalidInputError("HestonParams: |rho| must be < 1");
    if (!feller_ok())
        throw InvalidInputError("HestonParams: Feller condition 2*kappa*theta >= xi^2 violated");
}

void OptionSpec::validate() const {
    if (!(strike > 0.0) || !finite(strike))
        throw InvalidInputError("OptionSpec: strike must be finite and > 0");
    if (!(tenor > 0.0) || !finite(tenor))
        throw InvalidInputError("OptionSpec: tenor must be finite and > 0");
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }

double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double black76_price(const MarketContext& ctx, const OptionSpec& opt, double sigma) {
    ctx.validate();
    opt.validate();
    if (!(sigma >= 0.0) || !finite(sigma))
        throw InvalidInputError("black76_price: sigma must be finite and >= 0");

    const double df = std::exp(-ctx.rate * opt.tenor);
    const double f = ctx.forward;
    const double k = opt.strike;

    const double sq = sigma * std::sqrt(opt.tenor);
    if (sq == 0.0) {
        const double intrinsic = opt.is_call ? std::max(f - k, 0.0) : std::max(k - f, 0.0);
        return df * intrinsic;
    }

    const double d1 = std::log(f / k) / sq + 0.5 * sq;
    const double d2 = d1 - sq;
    if (opt.is_call)
        return df * (f * norm_cdf(d1) - k * norm_cdf(d2));
    return df * (k * norm_cdf(-d2) - f * norm_cdf(-d1));
}

double vega(const MarketContext& ctx, const OptionSpec& opt, double sigma) {
    ctx.validate();
    opt.validate();
    if (!(sigma > 0.0) || !finite(sigma))
        throw InvalidInputError("vega: sigma must be finite and > 0");

    const double sq = sigma * std::sqrt(opt.tenor);
    const double d1 = std::log(ctx.forward / opt.strike) / sq + 0.5 * sq;
    return std::exp(-ctx.rate * opt.tenor) * ctx.forward * norm_pdf(d1) * std::sqrt(opt.tenor);
}

namespace {

// log(1 + z) without cancellation for small |z|.
cd clog1p(cd z) {
    if (std::abs(z) < 1e-2) {
        cd term = z, sum = z;
        for (int n = 2; n <= 12; ++n) {
            term *= -z;
            sum += term / static_cast<double>(n);
        }
        return sum;
    }
    return std::log(1.0 + z);
}

} // namespace

std::complex<double> heston_cf(cd u, const HestonParams& p, double forward, double tenor) {
    p.validate();
    if (!(forward > 0.0))
        throw InvalidInputError("heston_cf: forward must be > 0");
    if (!(tenor > 0.0))
        throw InvalidInputError("heston_cf: tenor must be > 0");

    const cd i(0.0, 1.0);
    const cd iu = i * u;
    const double xi2 = p.xi * p.xi;

    // Albrecher et al. sign convention: keep -d in the exponentials so the
    // complex log never crosses the branch cut for long tenors. beta - d is
    // evaluated as -xi^2 (iu + u^2) / (beta + d); the direct subtraction
    // cancels catastrophically for small xi.
    const cd beta = p.kappa - p.rho * p.xi * iu;
    const cd iu_u2 = iu + u * u;
    const cd d = std::sqrt(beta * beta + xi2 * iu_u2);
    const cd beta_plus_d = beta + d;
    const cd beta_minus_d = -xi2 * iu_u2 / beta_plus_d;
    const cd g = beta_minus_d / beta_plus_d;

    const cd edt = std::exp(-d * tenor);
    const cd one_minus_gedt = 1.0 - g * edt;

    const cd log_ratio = clog1p(-g * edt) - clog1p(-g);
    const cd big_c = (p.kappa * p.theta / xi2) * (beta_minus_d * tenor - 2.0 * log_ratio);
    const cd big_d = (-iu_u2 / beta_plus_d) * ((1.0 - edt) / one_minus_gedt);

    const cd expo = big_c + big_d * p.v0;
    if (expo.real() > 700.0)
        throw OverflowError("heston_cf: exponent exceeds representable range");
    return std::exp(expo);
}

namespace detail {

namespace {

// Gauss-Kronrod 15(7) nodes on [-1, 1] and weights.
constexpr double kXgk[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144838258730, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr double kWgk[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kWg[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct PanelResult {
    double integral;
    double error;
};

PanelResult gk15(const std::function<double(double)>& f, double a, double b) {
    const double c = 0.5 * (a + b);
    const double h = 0.5 * (b - a);

    double fv[15];
    for (int j = 0; j < 7; ++j) {
        fv[j] = f(c - h * kXgk[j]);
        fv[14 - j] = f(c + h * kXgk[j]);
    }
    fv[7] = f(c);

    double resk = kWgk[7] * fv[7];
    double resg = kWg[3] * fv[7];
    for (int j = 0; j < 7; ++j)
        resk += kWgk[j] * (fv[j] + fv[14 - j]);
    for (int j = 0; j < 3; ++j)
        resg += kWg[j] * (fv[2 * j + 1] + fv[13 - 2 * j]);

    const double integral = resk * h;
    const double error = std::abs((resk - resg) * h);
    return {integral, error};
}

} // namespace

double adaptive_gk(const std::function<double(double)>& f, double a, double b, double abs_tol,
                   int max_intervals) {
    struct Seg {
        double a, b, integral, error;
    };
    std::vector<Seg> segs;
    PanelResult r0 = gk15(f, a, b);
    segs.push_back({a, b, r0.integral, r0.error});

    double total_err = r0.error;
    int n_splits = 0;
    while (total_err > abs_tol) {
        if (n_splits >= max_intervals)
            throw ConvergenceError("adaptive_gk: subdivision budget exhausted");
        // Split the segment with the largest error estimate.
        std::size_t worst = 0;
        for (std::size_t s = 1; s < segs.size(); ++s)
            if (segs[s].error > segs[worst].error)
                worst = s;
        Seg seg = segs[worst];
        const double mid = 0.5 * (seg.a + seg.b);
        if (!(mid > seg.a && mid < seg.b))
            throw ConvergenceError("adaptive_gk: interval collapsed below machine resolution");
        PanelResult left = gk15(f, seg.a, mid);
        PanelResult right = gk15(f, mid, seg.b);
        total_err += left.error + right.error - seg.error;
        segs[worst] = {seg.a, mid, left.integral, left.error};
        segs.push_back({mid, seg.b, right.integral, right.error});
        ++n_splits;
    }

    // Fixed summation order (by left endpoint) for run-to-run determinism.
    std::sort(segs.begin(), segs.end(), [](const Seg& x, const Seg& y) { return x.a < y.a; });
    double total = 0.0;
    for (const Seg& s : segs)
        total += s.integral;
    return total;
}

} // namespace detail

namespace {

// Decay-based truncation of the Gil-Pelaez integrals: stop where |cf(u)| / u
// drops below 1e-14 for both integrands, hard cap u = 500.
double truncation_point(const HestonParams& p, double forward, double tenor) {
    const cd mi(0.0, -1.0);
    double u = 10.0;
    while (u < 500.0) {
        const double a1 = std::abs(heston_cf(cd(u, 0.0) + mi, p, forward, tenor)) / u;
        const double a2 = std::abs(heston_cf(cd(u, 0.0), p, forward, tenor)) / u;
        if (a1 < 1e-14 && a2 < 1e-14)
            return u;
        u += 10.0;
    }
    return 500.0;
}

} // namespace

double heston_price(const HestonParams& p, const MarketContext& ctx, const OptionSpec& opt) {
    p.validate();
    ctx.validate();
    opt.validate();

    const double f = ctx.forward;
    const double k = std::log(opt.strike / f);
    const double tau = opt.tenor;
    const cd mi(0.0, -1.0);

    const double u_max = truncation_point(p, f, tau);
    constexpr double kQuadTol = 1e-10;
    constexpr int kMaxIntervals = 4000;
    constexpr double kLowerEndpoint = 1e-8; // integrand has a removable singularity at u = 0

    // P_j = 1/2 + (1/pi) * Int_0^inf Im[e^{-iuk} cf_j(u)] / u du,
    // cf_1(u) = cf(u - i) (cf(-i) = 1), cf_2(u) = cf(u).
    auto integrand1 = [&](double u) {
        const cd v = std::exp(cd(0.0, -u * k)) * heston_cf(cd(u, 0.0) + mi, p, f, tau);
        return v.imag() / u;
    };
    auto integrand2 = [&](double u) {
        const cd v = std::exp(cd(0.0, -u * k)) * heston_cf(cd(u, 0.0), p, f, tau);
        return v.imag() / u;
    };

    const double i1 =
        detail::adaptive_gk(integrand1, kLowerEndpoint, u_max, kQuadTol, kMaxIntervals) / kPi;
    const double i2 =
        detail::adaptive_gk(integrand2, kLowerEndpoint, u_max, kQuadTol, kMaxIntervals) / kPi;

    const double df = std::exp(-ctx.rate * tau);
    if (opt.is_call)
        return df * (f * (0.5 + i1) - opt.strike * (0.5 + i2));
    return df * (opt.strike * (0.5 - i2) - f * (0.5 - i1));
}

double implied_vol(double target_price, const MarketContext& ctx, const OptionSpec& opt) {
    ctx.validate();
    opt.validate();
    if (!finite(target_price))
        throw InvalidInputError("implied_vol: target price must be finite");

    const double df = std::exp(-ctx.rate * opt.tenor);
    const double f = ctx.forward;
    const double k = opt.strike;
    const double intrinsic = df * (opt.is_call ? std::max(f - k, 0.0) : std::max(k - f, 0.0));
    const double cap = df * (opt.is_call ? f : k);
    if (!(target_price > intrinsic) || !(target_price < cap))
        throw OutOfBandError("implied_vol: target price outside the (intrinsic, bound) band");

    constexpr double kTol = 1e-12;
    double lo = 1e-6, hi = 5.0;

    auto price_at = [&](double s) { return black76_price(ctx, opt, s); };

    // Widen the bracket in the rare cases the default one does not contain
    // the root (targets within float noise of the band edges).
    for (int i = 0; i < 60 && price_at(lo) > target_price; ++i)
        lo *= 0.25;
    for (int i = 0; i < 12 && price_at(hi) < target_price; ++i)
        hi *= 2.0;

    // Brenner-Subrahmanyam starting point, clamped to [1e-4, 5].
    double sigma =
        std::clamp(target_price * std::sqrt(2.0 * kPi / opt.tenor) / f, 1e-4, 5.0);
    sigma = std::clamp(sigma, lo, hi);

    for (int iter = 0; iter < 50; ++iter) {
        const double diff = price_at(sigma) - target_price;
        if (diff < 0.0)
            lo = sigma;
        else
            hi = sigma;

        double v = 0.0;
        if (sigma > 0.0)
            v = vega(ctx, opt, sigma);
        // Price-space convergence is only trusted where vega is healthy;
        // in vega-dead corners it would accept wildly wrong vols.
        if (std::abs(diff) < kTol && v >= 1e-3)
            return sigma;

        double cand;
        if (v > 0.0 && finite(v)) {
            cand = sigma - diff / v;
            if (!finite(cand) || !(cand > lo) || !(cand < hi))
                cand = 0.5 * (lo + hi); // Newton left the bracket
        } else {
            cand = 0.5 * (lo + hi);
        }
        if (std::abs(cand - sigma) < kTol)
            return cand;
        sigma = cand;
    }

    // Hard fallback: pure bisection.
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        const double diff = price_at(mid) - target_price;
        if (diff < 0.0)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < kTol)
            return 0.5 * (lo + hi);
    }
    throw ConvergenceError("implied_vol: iteration budget exhausted");
}

} // namespace volsurf::pricing
