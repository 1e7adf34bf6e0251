// SPDX-License-Identifier: Apache-2.0
#include "volsurf/svi.hpp"

#include <algorithm>
#include <cmath>

namespace volsurf::svi {

namespace {

using Vec5 = std::array<double, 5>;

double dot(const Vec5& a, const Vec5& b) {
    double s = 0.0;
    for (int i = 0; i < 5; ++i)
        s += a[i] * b[i];
    return s;
}

Vec5 clip(const Vec5& x, const FitBounds& bounds) {
    Vec5 out;
    for (int i = 0; i < 5; ++i)
        out[i] = std::clamp(x[i], bounds.lo[i], bounds.hi[i]);
    return out;
}

double objective(const SliceObservations& obs, const Vec5& x) {
    const SviParams p = SviParams::from_array(x);
    double acc = 0.0;
    for (const auto& [k, w] : obs) {
        const double r = svi_total_variance(p, k) - w;
        acc += r * r;
    }
    return acc / static_cast<double>(obs.size());
}

Vec5 objective_gradient(const SliceObservations& obs, const Vec5& x) {
    const SviParams p = SviParams::from_array(x);
    Vec5 g{0, 0, 0, 0, 0};
    for (const auto& [k, w] : obs) {
        const double r = svi_total_variance(p, k) - w;
        const Vec5 dw = svi_param_gradient(p, k);
        for (int i = 0; i < 5; ++i)
            g[i] += 2.0 * r * dw[i];
    }
    for (int i = 0; i < 5; ++i)
        g[i] /= static_cast<double>(obs.size());
    return g;
}

} // namespace

void SviParams::validate() const {
    if (!(b >= 0.0))
        throw InvalidInputError("SviParams: b must be >= 0");
    if (!(std::abs(rho) <= 1.0))
        throw InvalidInputError("SviParams: |rho| must be <= 1");
    if (!(sigma > 0.0))
        throw InvalidInputError("SviParams: sigma must be > 0");
}

double svi_total_variance(const SviParams& p, double k) {
    const double d = k - p.m;
    return p.a + p.b * (p.rho * d + std::sqrt(d * d + p.sigma * p.sigma));
}

std::array<double, 5> svi_param_gradient(const SviParams& p, double k) {
    const double d = k - p.m;
    const double root = std::sqrt(d * d + p.sigma * p.sigma);
    return {
        1.0,                          // a
        p.rho * d + root,             // b
        p.b * d,                      // rho
        p.b * (-p.rho - d / root),    // m
        p.b * p.sigma / root,         // sigma
    };
}

FitResult fit_slice(const SliceObservations& obs, const SviParams& init, const FitBounds& bounds) {
    if (obs.empty())
        throw InvalidInputError("fit_slice: needs at least one observation");
    init.validate();
    for (const auto& [k, w] : obs)
        if (!std::isfinite(k) || !std::isfinite(w))
            throw InvalidInputError("fit_slice: non-finite observation");

    constexpr int kMaxIter = 200;
    constexpr int kMemory = 8;
    constexpr double kGradTol = 1e-12;

    Vec5 x = clip(init.as_array(), bounds);
    double f = objective(obs, x);
    Vec5 g = objective_gradient(obs, x);
    if (!std::isfinite(f))
        throw ConvergenceError("fit_slice: non-finite objective at the starting point");

    FitResult result;
    result.objective_history.push_back(f);

    std::vector<Vec5> mem_s, mem_y;
    std::vector<double> mem_rho;

    for (int iter = 0; iter < kMaxIter; ++iter) {
        // Projected gradient norm as the stationarity measure.
        double pg_norm = 0.0;
        for (int i = 0; i < 5; ++i) {
            const double step = std::clamp(x[i] - g[i], bounds.lo[i], bounds.hi[i]) - x[i];
            pg_norm += step * step;
        }
        if (std::sqrt(pg_norm) < kGradTol)
            break;

        // Two-loop L-BFGS recursion for d = -H g.
        Vec5 q = g;
        const int mlen = static_cast<int>(mem_s.size());
        std::vector<double> alpha(mlen);
        for (int i = mlen - 1; i >= 0; --i) {
            alpha[i] = mem_rho[i] * dot(mem_s[i], q);
            for (int j = 0; j < 5; ++j)
                q[j] -= alpha[i] * mem_y[i][j];
        }
        double gamma = 1.0;
        if (mlen > 0) {
            const double yy = dot(mem_y.back(), mem_y.back());
            if (yy > 0)
                gamma = dot(mem_s.back(), mem_y.back()) / yy;
        }
        for (int j = 0; j < 5; ++j)
            q[j] *= gamma;
        for (int i = 0; i < mlen; ++i) {
            const double beta = mem_rho[i] * dot(mem_y[i], q);
            for (int j = 0; j < 5; ++j)
                q[j] += mem_s[i][j] * (alpha[i] - beta);
        }
        Vec5 dir;
        for (int j = 0; j < 5; ++j)
            dir[j] = -q[j];
        if (dot(dir, g) >= 0.0) // not a descent direction, fall back
            for (int j = 0; j < 5; ++j)
                dir[j] = -g[j];

        // Projected backtracking line search (monotone).
        double step = 1.0;
        Vec5 x_new = x;
        double f_new = f;
        bool accepted = false;
        for (int ls = 0; ls < 50; ++ls) {
            Vec5 cand;
            for (int j = 0; j < 5; ++j)
                cand[j] = x[j] + step * dir[j];
            cand = clip(cand, bounds);
            const double fc = objective(obs, cand);
            if (std::isfinite(fc) && fc < f) {
                x_new = cand;
                f_new = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted)
            break; // line-search breakdown: keep the best iterate found

        const Vec5 g_new = objective_gradient(obs, x_new);
        Vec5 s, y;
        for (int j = 0; j < 5; ++j) {
            s[j] = x_new[j] - x[j];
            y[j] = g_new[j] - g[j];
        }
        const double sy = dot(s, y);
        if (sy > 1e-14) {
            mem_s.push_back(s);
            mem_y.push_back(y);
            mem_rho.push_back(1.0 / sy);
            if (static_cast<int>(mem_s.size()) > kMemory) {
                mem_s.erase(mem_s.begin());
                mem_y.erase(mem_y.begin());
                mem_rho.erase(mem_rho.begin());
            }
        }
        x = x_new;
        f = f_new;
        g = g_new;
        result.objective_history.push_back(f);
    }

    result.params = SviParams::from_array(x);
    result.objective = f;
    return result;
}

FitResult fit_slice_multistart(const SliceObservations& obs, const FitBounds& bounds) {
    if (obs.empty())
        throw InvalidInputError("fit_slice_multistart: needs at least one observation");
    double w_min = obs.front().second;
    for (const auto& [k, w] : obs)
        w_min = std::min(w_min, w);

    const double a0 = std::max(w_min * 0.9, 1e-6);
    FitResult best;
    bool first = true;
    for (double rho0 : {-0.9, -0.5, 0.0, 0.5, 0.9}) {
        const SviParams init{a0, 0.1, rho0, 0.0, 0.1};
        FitResult r = fit_slice(obs, init, bounds);
        if (first || r.objective < best.objective) {
            best = std::move(r);
            first = false;
        }
    }
    return best;
}

SurfaceFit fit_surface(const surface::VolSurface& s, const surface::ObservationMask& mask,
                       const surface::SurfaceGrid& g) {
    g.validate();
    if (s.iv.rows() != g.n_tenors() || s.iv.cols() != g.n_strikes())
        throw ShapeError("fit_surface: surface does not match grid");
    if (!mask.same_shape(s.target_mask))
        throw ShapeError("fit_surface: mask does not match surface");

    SurfaceFit out;
    out.reconstruction = surface::VolSurface(g.n_tenors(), g.n_strikes());
    out.slices.reserve(g.n_tenors());

    for (int i = 0; i < g.n_tenors(); ++i) {
        const double tau = g.tenors[i];
        SliceObservations obs;
        for (int j = 0; j < g.n_strikes(); ++j)
            if (mask(i, j) && s.target_mask(i, j))
                obs.emplace_back(g.log_moneyness[j], s.iv(i, j) * s.iv(i, j) * tau);

        SviParams fitted;
        if (obs.empty()) {
            // zero-observation slice: initialization fallback
            fitted = SviParams{1e-6, 0.1, -0.5, 0.0, 0.1};
        } else {
            try {
                fitted = fit_slice_multistart(obs).params;
            } catch (const Error& e) {
                throw ConvergenceError("fit_surface: slice " + std::to_string(i) + ": " + e.what());
            }
        }
        out.slices.push_back(fitted);

        for (int j = 0; j < g.n_strikes(); ++j) {
            const double w = std::max(svi_total_variance(fitted, g.log_moneyness[j]), 1e-8);
            out.reconstruction.iv(i, j) = std::sqrt(w / tau);
        }
    }
    return out;
}

} // namespace volsurf::svi
