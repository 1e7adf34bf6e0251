// SPDX-License-Identifier: Apache-2.0
#pragma once

// Hot numeric kernels behind the autodiff ops. The primary versions are
// OpenMP-parallel; each output element is owned by exactly one thread and
// accumulated in a fixed order, so results are bitwise identical to the
// serial reference implementations in kernels::ref for any thread count.

namespace volsurf::kernels {

// Forward kernels overwrite their outputs; gradient kernels accumulate
// (callers zero the buffers once at the start of a reverse pass).

// y[n, out] = x[n, in] * w[out, in]^T + b[out]
void linear_forward(const double* x, const double* w, const double* b, double* y, int n,
                    int in_dim, int out_dim);
// dx[n, in] += dy[n, out] * w[out, in]
void linear_grad_input(const double* dy, const double* w, double* dx, int n, int in_dim,
                       int out_dim);
// dw[out, in] += sum_n dy[n, out] x[n, in];  db[out] += sum_n dy[n, out]
void linear_grad_params(const double* x, const double* dy, double* dw, double* db, int n,
                        int in_dim, int out_dim);

// x: [batch, cin, h, w]; kernel 3x3, same padding.
void conv3x3_forward(const double* x, const double* w, const double* b, double* y, int batch,
                     int cin, int cout, int h, int wd);
void conv3x3_grad_input(const double* dy, const double* w, double* dx, int batch, int cin,
                        int cout, int h, int wd);
void conv3x3_grad_params(const double* x, const double* dy, double* dw, double* db, int batch,
                         int cin, int cout, int h, int wd);

/// Serial reference implementations, kept for correctness tests and the
/// kernel benchmark.
namespace ref {
void linear_forward(const double* x, const double* w, const double* b, double* y, int n,
                    int in_dim, int out_dim);
void linear_grad_input(const double* dy, const double* w, double* dx, int n, int in_dim,
                       int out_dim);
void linear_grad_params(const double* x, const double* dy, double* dw, double* db, int n,
                        int in_dim, int out_dim);
void conv3x3_forward(const double* x, const double* w, const double* b, double* y, int batch,
                     int cin, int cout, int h, int wd);
void conv3x3_grad_input(const double* dy, const double* w, double* dx, int batch, int cin,
                        int cout, int h, int wd);
void conv3x3_grad_params(const double* x, const double* dy, double* dw, double* db, int batch,
                         int cin, int cout, int h, int wd);
} // namespace ref

} // namespace volsurf::kernels
