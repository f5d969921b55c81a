#pragma once

#include <cstdint>

namespace macnet::detail {

// Hot 3x3 stride-1 kernels, built in their own translation unit with
// reassociation enabled so the reductions vectorize. Results are still
// deterministic for a given build; only the fixed summation order differs
// from the naive loop.

// out[ox] += sum_{ky,kx} w9[3*ky+kx] * xrow_ky[ox+kx]
void corr3x3_row(const double* x0, const double* x1, const double* x2, const double* w9,
                 double* out, int64_t ow);

// acc9[3*ky+kx] += sum_{oy,ox} xplane[(oy+ky)*wp + ox+kx] * gplane[oy*ow + ox]
void grad_w3x3(const double* xplane, int64_t wp, const double* gplane, int64_t oh, int64_t ow,
               double* acc9);

}  // namespace macnet::detail
