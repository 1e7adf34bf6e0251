// SPDX-License-Identifier: Apache-2.0
#include "volsurf/kernels.hpp"

#include <algorithm>
#include <cstring>

// Both the OpenMP and the serial reference entry points funnel into the
// noinline workers below, so they execute the exact same machine code per
// output element and agree bitwise. The parallel loops assign whole output
// rows/planes to threads; no cross-thread accumulation exists.

namespace volsurf::kernels {

namespace {

#define VSR_NOINLINE __attribute__((noinline))

VSR_NOINLINE void linear_row(const double* xrow, const double* w, const double* b, double* yrow,
                             int in_dim, int out_dim) {
    for (int o = 0; o < out_dim; ++o) {
        const double* wrow = w + static_cast<std::size_t>(o) * in_dim;
        double acc = b ? b[o] : 0.0;
        for (int i = 0; i < in_dim; ++i)
            acc += xrow[i] * wrow[i];
        yrow[o] = acc;
    }
}

VSR_NOINLINE void linear_gi_row(const double* dyrow, const double* w, double* dxrow, int in_dim,
                                int out_dim) {
    for (int o = 0; o < out_dim; ++o) {
        const double g = dyrow[o];
        const double* wrow = w + static_cast<std::size_t>(o) * in_dim;
        for (int i = 0; i < in_dim; ++i)
            dxrow[i] += g * wrow[i];
    }
}

VSR_NOINLINE void linear_gp_block(const double* x, const double* dy, double* dwrow, double* db_o,
                                  int n, int in_dim, int out_dim, int o) {
    double dbacc = 0.0;
    for (int r = 0; r < n; ++r) {
        const double g = dy[static_cast<std::size_t>(r) * out_dim + o];
        dbacc += g;
        const double* xrow = x + static_cast<std::size_t>(r) * in_dim;
        for (int i = 0; i < in_dim; ++i)
            dwrow[i] += g * xrow[i];
    }
    *db_o += dbacc;
}

VSR_NOINLINE void conv_plane(const double* x, const double* w, double bias, double* yplane,
                             int cin, int h, int wd, int oc, int cin_stride) {
    const std::size_t plane = static_cast<std::size_t>(h) * wd;
    for (std::size_t e = 0; e < plane; ++e)
        yplane[e] = bias;
    for (int ic = 0; ic < cin; ++ic) {
        const double* xplane = x + static_cast<std::size_t>(ic) * plane;
        const double* wk = w + (static_cast<std::size_t>(oc) * cin_stride + ic) * 9;
        for (int kh = 0; kh < 3; ++kh) {
            const int di = kh - 1;
            const int i0 = std::max(0, -di), i1 = std::min(h, h - di);
            for (int kw = 0; kw < 3; ++kw) {
                const int dj = kw - 1;
                const double wv = wk[kh * 3 + kw];
                const int j0 = std::max(0, -dj), j1 = std::min(wd, wd - dj);
                for (int i = i0; i < i1; ++i) {
                    const double* xrow = xplane + static_cast<std::size_t>(i + di) * wd + dj;
                    double* yrow = yplane + static_cast<std::size_t>(i) * wd;
                    for (int j = j0; j < j1; ++j)
                        yrow[j] += wv * xrow[j];
                }
            }
        }
    }
}

VSR_NOINLINE void conv_gi_plane(const double* dy, const double* w, double* dxplane, int cout,
                                int h, int wd, int ic, int cin) {
    const std::size_t plane = static_cast<std::size_t>(h) * wd;
    // dx[i][j] += dy[i - di][j - dj] * w[kh][kw]
    for (int oc = 0; oc < cout; ++oc) {
        const double* dyplane = dy + static_cast<std::size_t>(oc) * plane;
        const double* wk = w + (static_cast<std::size_t>(oc) * cin + ic) * 9;
        for (int kh = 0; kh < 3; ++kh) {
            const int di = kh - 1;
            for (int kw = 0; kw < 3; ++kw) {
                const int dj = kw - 1;
                const double wv = wk[kh * 3 + kw];
                const int i0 = std::max(0, di), i1 = std::min(h, h + di);
                const int j0 = std::max(0, dj), j1 = std::min(wd, wd + dj);
                for (int i = i0; i < i1; ++i) {
                    const double* dyrow = dyplane + static_cast<std::size_t>(i - di) * wd - dj;
                    double* dxrow = dxplane + static_cast<std::size_t>(i) * wd;
                    for (int j = j0; j < j1; ++j)
                        dxrow[j] += wv * dyrow[j];
                }
            }
        }
    }
}

VSR_NOINLINE void conv_gp_block(const double* x, const double* dy, double* dw, double* db,
                                int batch, int cin, int cout, int h, int wd, int oc) {
    const std::size_t plane = static_cast<std::size_t>(h) * wd;
    double dbacc = 0.0;
    for (int b = 0; b < batch; ++b) {
        const double* dyplane = dy + (static_cast<std::size_t>(b) * cout + oc) * plane;
        for (std::size_t e = 0; e < plane; ++e)
            dbacc += dyplane[e];
        for (int ic = 0; ic < cin; ++ic) {
            const double* xplane = x + (static_cast<std::size_t>(b) * cin + ic) * plane;
            double* wk = dw + (static_cast<std::size_t>(oc) * cin + ic) * 9;
            for (int kh = 0; kh < 3; ++kh) {
                const int di = kh - 1;
                const int i0 = std::max(0, -di), i1 = std::min(h, h - di);
                for (int kw = 0; kw < 3; ++kw) {
                    const int dj = kw - 1;
                    const int j0 = std::max(0, -dj), j1 = std::min(wd, wd - dj);
                    double acc = 0.0;
                    for (int i = i0; i < i1; ++i) {
                        const double* xrow = xplane + static_cast<std::size_t>(i + di) * wd + dj;
                        const double* dyrow = dyplane + static_cast<std::size_t>(i) * wd;
                        for (int j = j0; j < j1; ++j)
                            acc += xrow[j] * dyrow[j];
                    }
                    wk[kh * 3 + kw] += acc;
                }
            }
        }
    }
    db[oc] += dbacc;
}

#undef VSR_NOINLINE

} // namespace

void linear_forward(const double* x, const double* w, const double* b, double* y, int n,
                    int in_dim, int out_dim) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < n; ++r)
        linear_row(x + static_cast<std::size_t>(r) * in_dim, w, b,
                   y + static_cast<std::size_t>(r) * out_dim, in_dim, out_dim);
}

void linear_grad_input(const double* dy, const double* w, double* dx, int n, int in_dim,
                       int out_dim) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < n; ++r)
        linear_gi_row(dy + static_cast<std::size_t>(r) * out_dim, w,
                      dx + static_cast<std::size_t>(r) * in_dim, in_dim, out_dim);
}

void linear_grad_params(const double* x, const double* dy, double* dw, double* db, int n,
                        int in_dim, int out_dim) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < out_dim; ++o)
        linear_gp_block(x, dy, dw + static_cast<std::size_t>(o) * in_dim, db + o, n, in_dim,
                        out_dim, o);
}

void conv3x3_forward(const double* x, const double* w, const double* b, double* y, int batch,
                     int cin, int cout, int h, int wd) {
    const std::size_t plane = static_cast<std::size_t>(h) * wd;
#pragma omp parallel for schedule(static)
    for (int bo = 0; bo < batch * cout; ++bo) {
        const int bi = bo / cout, oc = bo % cout;
        conv_plane(x + static_cast<std::size_t>(bi) * cin * plane, w, b ? b[oc] : 0.0,
                   y + static_cast<std::size_t>(bo) * plane, cin, h, wd, oc, cin);
    }
}

void conv3x3_grad_input(const double* dy, const double* w, double* dx, int batch, int cin,
                        int cout, int h, int wd) {
    const std::size_t plane = static_cast<std::size_t>(h) * wd;
#pragma omp parallel for schedule(static)
    for (int bc = 0; bc < batch * cin; ++bc) {
        const int bi = bc / cin, ic = bc % cin;
        conv_gi_plane(dy + static_cast<std::size_t>(bi) * cout * plane, w,
                      dx + static_cast<std::size_t>(bc) * plane, cout, h, wd, ic, cin);
    }
}

void conv3x3_grad_params(const double* x, const double* dy, double* dw, double* db, int batch,
                         int cin, int cout, int h, int wd) {
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < cout; ++oc)
        conv_gp_block(x, dy, dw, db, batch, cin, cout, h, wd, oc);
}

namespace ref {

void linear_forward(const double* x, const double* w, const double* b, double* y, int n,
                    int in_dim, int out_dim) {
    for (int r = 0; r < n; ++r)
        linear_row(x + static_cast<std::size_t>(r) * in_dim, w, b,
                   y + static_cast<std::size_t>(r) * out_dim, in_dim, out_dim);
}

void linear_grad_input(const double* dy, const double* w, double* dx, int n, int in_dim,
                       int out_dim) {
    for (int r = 0; r < n; ++r)
        linear_gi_row(dy + static_cast<std::size_t>(r) * out_dim, w,
                      dx + static_cast<std::size_t>(r) * in_dim, in_dim, out_dim);
}

void linear_grad_params(const double* x, const double* dy, double* dw, double* db, int n,
                        int in_dim, int out_dim) {
    for (int o = 0; o < out_dim; ++o)
        linear_gp_block(x, dy, dw + static_cast<std::size_t>(o) * in_dim, db + o, n, in_dim,
                        out_dim, o);
}

void conv3x3_forward(const double* x, const double* w, const double* b, double* y, int batch,
                     int cin, int cout, int h, int wd) {
    const std::size_t plane = static_cast<std::size_t>(h) * wd;
    for (int bo = 0; bo < batch * cout; ++bo) {
        const int bi = bo / cout, oc = bo % cout;
        conv_plane(x + static_cast<std::size_t>(bi) * cin * plane, w, b ? b[oc] : 0.0,
                   y + static_cast<std::size_t>(bo) * plane, cin, h, wd, oc, cin);
    }
}

void conv3x3_grad_input(const double* dy, const double* w, double* dx, int batch, int cin,
                        int cout, int h, int wd) {
    const std::size_t plane = static_cast<std::size_t>(h) * wd;
    for (int bc = 0; bc < batch * cin; ++bc) {
        const int bi = bc / cin, ic = bc % cin;
        conv_gi_plane(dy + static_cast<std::size_t>(bi) * cout * plane, w,
                      dx + static_cast<std::size_t>(bc) * plane, cout, h, wd, ic, cin);
    }
}

void conv3x3_grad_params(const double* x, const double* dy, double* dw, double* db, int batch,
                         int cin, int cout, int h, int wd) {
    for (int oc = 0; oc < cout; ++oc)
        conv_gp_block(x, dy, dw, db, batch, cin, cout, h, wd, oc);
}

} // namespace ref

} // namespace volsurf::kernels
