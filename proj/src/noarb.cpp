// SPDX-License-Identifier: Apache-2.0
#include "volsurf/noarb.hpp"

#include <array>
#include <cmath>

namespace volsurf::noarb {

ViolationStats merge(const ViolationStats& a, const ViolationStats& b) {
    ViolationStats out;
    out.count_checked = a.count_checked + b.count_checked;
    out.count_violations = a.count_violations + b.count_violations;
    const double mass = a.mean_magnitude * a.count_violations + b.mean_magnitude * b.count_violations;
    out.mean_magnitude = out.count_violations > 0 ? mass / out.count_violations : 0.0;
    out.rate = out.count_checked > 0
                   ? static_cast<double>(out.count_violations) / out.count_checked
                   : 0.0;
    return out;
}

ViolationStats calendar_check(const Matrix& w) {
    ViolationStats st;
    st.count_checked = static_cast<long>(w.rows() - 1) * w.cols();
    double mass = 0.0;
    for (int i = 0; i + 1 < w.rows(); ++i)
        for (int j = 0; j < w.cols(); ++j) {
            const double dw = w(i + 1, j) - w(i, j);
            if (dw < -kCheckTolerance) {
                ++st.count_violations;
                mass += -dw;
            }
        }
    if (st.count_violations > 0)
        st.mean_magnitude = mass / st.count_violations;
    st.rate = st.count_checked > 0 ? static_cast<double>(st.count_violations) / st.count_checked
                                   : 0.0;
    return st;
}

std::vector<double> butterfly_second_diff(std::span<const double> w_row,
                                          std::span<const double> m) {
    if (w_row.size() != m.size() || m.size() < 3)
        throw InvalidInputError("butterfly_second_diff: need matching rows of length >= 3");
    std::vector<double> out(m.size() - 2);
    for (std::size_t j = 1; j + 1 < m.size(); ++j) {
        const double hm = m[j] - m[j - 1];
        const double hp = m[j + 1] - m[j];
        if (!(hm > 0.0) || !(hp > 0.0))
            throw InvalidInputError("butterfly_second_diff: log-moneyness not strictly increasing");
        out[j - 1] = 2.0 / (hm + hp) *
                     (w_row[j - 1] / hm - w_row[j] * (1.0 / hm + 1.0 / hp) + w_row[j + 1] / hp);
    }
    return out;
}

ViolationStats butterfly_check(const Matrix& w, std::span<const double> m) {
    if (w.cols() != static_cast<int>(m.size()))
        throw InvalidInputError("butterfly_check: log-moneyness length mismatch");
    ViolationStats st;
    st.count_checked = static_cast<long>(w.rows()) * (w.cols() - 2);
    double mass = 0.0;
    for (int i = 0; i < w.rows(); ++i) {
        const std::span<const double> row{w.data() + static_cast<std::size_t>(i) * w.cols(),
                                          static_cast<std::size_t>(w.cols())};
        const std::vector<double> d2 = butterfly_second_diff(row, m);
        for (double v : d2)
            if (v < -kCheckTolerance) {
                ++st.count_violations;
                mass += -v;
            }
    }
    if (st.count_violations > 0)
        st.mean_magnitude = mass / st.count_violations;
    st.rate = st.count_checked > 0 ? static_cast<double>(st.count_violations) / st.count_checked
                                   : 0.0;
    return st;
}

double expected_severity(const ViolationStats& v) { return v.rate * v.mean_magnitude; }

double calendar_penalty(const Matrix& w) {
    const long n = static_cast<long>(w.rows() - 1) * w.cols();
    double acc = 0.0;
    for (int i = 0; i + 1 < w.rows(); ++i)
        for (int j = 0; j < w.cols(); ++j) {
            const double neg = -(w(i + 1, j) - w(i, j));
            if (neg > 0.0)
                acc += neg * neg;
        }
    return acc / n;
}

double butterfly_penalty(const Matrix& w, std::span<const double> m) {
    const long n = static_cast<long>(w.rows()) * (w.cols() - 2);
    double acc = 0.0;
    for (int i = 0; i < w.rows(); ++i) {
        const std::span<const double> row{w.data() + static_cast<std::size_t>(i) * w.cols(),
                                          static_cast<std::size_t>(w.cols())};
        for (double v : butterfly_second_diff(row, m))
            if (v < 0.0)
                acc += v * v;
    }
    return acc / n;
}

ad::Tensor total_variance_op(const ad::Tensor& sigma, const std::vector<double>& tenors) {
    const auto& s = sigma.shape();
    if (s.size() != 3)
        throw ShapeError("total_variance_op: sigma must be [B, R, C]");
    const int batch = s[0], rows = s[1], cols = s[2];
    if (static_cast<int>(tenors.size()) != rows)
        throw ShapeError("total_variance_op: tenor count mismatch");

    auto parent = sigma.node();
    auto taus = std::make_shared<std::vector<double>>(tenors);
    ad::Tensor out =
        ad::make_op({batch, rows, cols}, {sigma}, [parent, taus, batch, rows, cols](ad::Node& self) {
            if (!parent->requires_grad)
                return;
            std::size_t idx = 0;
            for (int b = 0; b < batch; ++b)
                for (int i = 0; i < rows; ++i) {
                    const double tau = (*taus)[i];
                    for (int j = 0; j < cols; ++j, ++idx)
                        parent->grad[idx] += self.grad[idx] * 2.0 * parent->val[idx] * tau;
                }
        });
    std::size_t idx = 0;
    for (int b = 0; b < batch; ++b)
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j, ++idx)
                out.values()[idx] = sigma.values()[idx] * sigma.values()[idx] * tenors[i];
    return out;
}

ad::Tensor calendar_penalty_op(const ad::Tensor& w) {
    const auto& s = w.shape();
    if (s.size() != 3 || s[1] < 2)
        throw ShapeError("calendar_penalty_op: w must be [B, R>=2, C]");
    const int batch = s[0], rows = s[1], cols = s[2];
    const long n = static_cast<long>(rows - 1) * cols;

    auto parent = w.node();
    ad::Tensor out = ad::make_op({1}, {w}, [parent, batch, rows, cols, n](ad::Node& self) {
        if (!parent->requires_grad)
            return;
        const double g = self.grad[0] / (static_cast<double>(n) * batch);
        const std::size_t plane = static_cast<std::size_t>(rows) * cols;
        for (int b = 0; b < batch; ++b) {
            const double* wv = parent->val.data() + b * plane;
            double* wg = parent->grad.data() + b * plane;
            for (int i = 0; i + 1 < rows; ++i)
                for (int j = 0; j < cols; ++j) {
                    const std::size_t lo = static_cast<std::size_t>(i) * cols + j;
                    const std::size_t hi = lo + cols;
                    const double neg = -(wv[hi] - wv[lo]);
                    if (neg > 0.0) {
                        wg[hi] += g * (-2.0 * neg);
                        wg[lo] += g * (2.0 * neg);
                    }
                }
        }
    });
    double acc = 0.0;
    const std::size_t plane = static_cast<std::size_t>(rows) * cols;
    for (int b = 0; b < batch; ++b) {
        const double* wv = w.values().data() + b * plane;
        for (int i = 0; i + 1 < rows; ++i)
            for (int j = 0; j < cols; ++j) {
                const double neg =
                    -(wv[static_cast<std::size_t>(i + 1) * cols + j] -
                      wv[static_cast<std::size_t>(i) * cols + j]);
                if (neg > 0.0)
                    acc += neg * neg;
            }
    }
    out.values()[0] = acc / (static_cast<double>(n) * batch);
    return out;
}

ad::Tensor butterfly_penalty_op(const ad::Tensor& w, const std::vector<double>& m) {
    const auto& s = w.shape();
    if (s.size() != 3 || s[2] < 3)
        throw ShapeError("butterfly_penalty_op: w must be [B, R, C>=3]");
    const int batch = s[0], rows = s[1], cols = s[2];
    if (static_cast<int>(m.size()) != cols)
        throw ShapeError("butterfly_penalty_op: log-moneyness length mismatch");
    const long n = static_cast<long>(rows) * (cols - 2);

    // Stencil coefficients are fixed by the grid.
    auto coef = std::make_shared<std::vector<std::array<double, 3>>>(cols - 2);
    for (int j = 1; j + 1 < cols; ++j) {
        const double hm = m[j] - m[j - 1];
        const double hp = m[j + 1] - m[j];
        if (!(hm > 0.0) || !(hp > 0.0))
            throw InvalidInputError("butterfly_penalty_op: log-moneyness not strictly increasing");
        const double f = 2.0 / (hm + hp);
        (*coef)[j - 1] = {f / hm, -f * (1.0 / hm + 1.0 / hp), f / hp};
    }

    auto parent = w.node();
    ad::Tensor out = ad::make_op({1}, {w}, [parent, coef, batch, rows, cols, n](ad::Node& self) {
        if (!parent->requires_grad)
            return;
        const double g = self.grad[0] / (static_cast<double>(n) * batch);
        const std::size_t plane = static_cast<std::size_t>(rows) * cols;
        for (int b = 0; b < batch; ++b) {
            const double* wv = parent->val.data() + b * plane;
            double* wg = parent->grad.data() + b * plane;
            for (int i = 0; i < rows; ++i) {
                const std::size_t r0 = static_cast<std::size_t>(i) * cols;
                for (int j = 1; j + 1 < cols; ++j) {
                    const auto& c = (*coef)[j - 1];
                    const double d2 =
                        c[0] * wv[r0 + j - 1] + c[1] * wv[r0 + j] + c[2] * wv[r0 + j + 1];
                    if (d2 < 0.0) {
                        const double base = g * 2.0 * d2; // d/d(d2) of d2^2, with relu(-d2) active
                        wg[r0 + j - 1] += base * c[0];
                        wg[r0 + j] += base * c[1];
                        wg[r0 + j + 1] += base * c[2];
                    }
                }
            }
        }
    });

    double acc = 0.0;
    const std::size_t plane = static_cast<std::size_t>(rows) * cols;
    for (int b = 0; b < batch; ++b) {
        const double* wv = w.values().data() + b * plane;
        for (int i = 0; i < rows; ++i) {
            const std::size_t r0 = static_cast<std::size_t>(i) * cols;
            for (int j = 1; j + 1 < cols; ++j) {
                const auto& c = (*coef)[j - 1];
                const double d2 = c[0] * wv[r0 + j - 1] + c[1] * wv[r0 + j] + c[2] * wv[r0 + j + 1];
                if (d2 < 0.0)
                    acc += d2 * d2;
            }
        }
    }
    out.values()[0] = acc / (static_cast<double>(n) * batch);
    return out;
}

} // namespace volsurf::noarb
