// SPDX-License-Identifier: Apache-2.0
#include "volsurf/surface.hpp"

#include <cmath>

namespace volsurf::surface {

void SurfaceGrid::validate() const {
    if (tenors.empty() || strikes.empty())
        throw InvalidInputError("SurfaceGrid: empty axes");
    if (!(forward > 0.0))
        throw InvalidInputError("SurfaceGrid: forward must be > 0");
    for (std::size_t i = 1; i < tenors.size(); ++i)
        if (!(tenors[i] > tenors[i - 1]))
            throw InvalidInputError("SurfaceGrid: tenors must be strictly increasing");
    for (std::size_t j = 1; j < strikes.size(); ++j)
        if (!(strikes[j] > strikes[j - 1]))
            throw InvalidInputError("SurfaceGrid: strikes must be strictly increasing");
    if (log_moneyness.size() != strikes.size())
        throw InvalidInputError("SurfaceGrid: log_moneyness size mismatch");
    for (std::size_t j = 0; j < strikes.size(); ++j)
        if (std::abs(log_moneyness[j] - std::log(strikes[j] / forward)) > 1e-12)
            throw InvalidInputError("SurfaceGrid: log_moneyness inconsistent with strikes");
}

SurfaceGrid make_grid() {
    SurfaceGrid g;
    g.tenors = {0.08, 0.17, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0};
    g.forward = 100.0;
    const int n = 25;
    g.strikes.resize(n);
    g.log_moneyness.resize(n);
    for (int j = 0; j < n; ++j) {
        g.strikes[j] = 70.0 + (130.0 - 70.0) * j / (n - 1);
        g.log_moneyness[j] = std::log(g.strikes[j] / g.forward);
    }
    return g;
}

Matrix total_variance(const Matrix& iv, const SurfaceGrid& g) {
    if (iv.rows() != g.n_tenors() || iv.cols() != g.n_strikes())
        throw ShapeError("total_variance: surface does not match grid");
    Matrix w(iv.rows(), iv.cols());
    for (int i = 0; i < iv.rows(); ++i)
        for (int j = 0; j < iv.cols(); ++j)
            w(i, j) = iv(i, j) * iv(i, j) * g.tenors[i];
    return w;
}

Matrix total_variance(const VolSurface& s, const SurfaceGrid& g) {
    return total_variance(s.iv, g);
}

ObservationMask random_mask(int rows, int cols, double missing_fraction, Rng& rng) {
    if (!(missing_fraction >= 0.0 && missing_fraction < 1.0))
        throw InvalidInputError("random_mask: missing fraction must be in [0, 1)");
    auto draw = [&] {
        ObservationMask m(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                m(i, j) = rng.bernoulli(1.0 - missing_fraction) ? 1 : 0;
        return m;
    };
    ObservationMask m = draw();
    if (m.count_ones() == 0)
        m = draw(); // resample once
    if (m.count_ones() == 0)
        throw DegenerateMaskError("random_mask: all entries missing after resample");
    return m;
}

ObservationMask wing_mask(const SurfaceGrid& g) {
    ObservationMask m(g.n_tenors(), g.n_strikes(), 1);
    for (int j = 0; j < g.n_strikes(); ++j) {
        if (std::abs(g.log_moneyness[j]) > 0.3)
            for (int i = 0; i < g.n_tenors(); ++i)
                m(i, j) = 0;
    }
    return m;
}

ObservationMask combine_masks(const ObservationMask& a, const ObservationMask& b) {
    if (!a.same_shape(b))
        throw ShapeError("combine_masks: shape mismatch");
    ObservationMask out(a.rows(), a.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j)
            out(i, j) = static_cast<std::uint8_t>(a(i, j) & b(i, j));
    if (out.count_ones() == 0)
        throw DegenerateMaskError("combine_masks: combined mask has no observed entry");
    return out;
}

ModelInput build_input(const VolSurface& s, const ObservationMask& m) {
    if (s.iv.rows() != m.rows() || s.iv.cols() != m.cols())
        throw ShapeError("build_input: mask does not match surface");
    ModelInput in;
    in.rows = s.iv.rows();
    in.cols = s.iv.cols();
    in.data.assign(2 * static_cast<std::size_t>(in.rows) * in.cols, 0.0);
    for (int i = 0; i < in.rows; ++i)
        for (int j = 0; j < in.cols; ++j) {
            in.at(0, i, j) = m(i, j) ? s.iv(i, j) : 0.0;
            in.at(1, i, j) = m(i, j) ? 1.0 : 0.0;
        }
    return in;
}

} // namespace volsurf::surface
