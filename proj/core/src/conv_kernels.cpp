#include "conv_kernels.hpp"

namespace macnet::detail {

void corr3x3_row(const double* __restrict__ x0, const double* __restrict__ x1,
                 const double* __restrict__ x2, const double* __restrict__ w9,
                 double* __restrict__ out, int64_t ow) {
    const double w00 = w9[0], w01 = w9[1], w02 = w9[2];
    const double w10 = w9[3], w11 = w9[4], w12 = w9[5];
    const double w20 = w9[6], w21 = w9[7], w22 = w9[8];
    for (int64_t ox = 0; ox < ow; ++ox) {
        out[ox] += w00 * x0[ox] + w01 * x0[ox + 1] + w02 * x0[ox + 2] +
                   w10 * x1[ox] + w11 * x1[ox + 1] + w12 * x1[ox + 2] +
                   w20 * x2[ox] + w21 * x2[ox + 1] + w22 * x2[ox + 2];
    }
}

void grad_w3x3(const double* __restrict__ xplane, int64_t wp, const double* __restrict__ gplane,
               int64_t oh, int64_t ow, double* __restrict__ acc9) {
    double a00 = 0, a01 = 0, a02 = 0, a10 = 0, a11 = 0, a12 = 0, a20 = 0, a21 = 0, a22 = 0;
    for (int64_t oy = 0; oy < oh; ++oy) {
        const double* __restrict__ g = gplane + oy * ow;
        const double* __restrict__ x0 = xplane + oy * wp;
        const double* __restrict__ x1 = x0 + wp;
        const double* __restrict__ x2 = x1 + wp;
        for (int64_t ox = 0; ox < ow; ++ox) {
            const double gv = g[ox];
            a00 += x0[ox] * gv;
            a01 += x0[ox + 1] * gv;
            a02 += x0[ox + 2] * gv;
            a10 += x1[ox] * gv;
            a11 += x1[ox + 1] * gv;
            a12 += x1[ox + 2] * gv;
            a20 += x2[ox] * gv;
            a21 += x2[ox + 1] * gv;
            a22 += x2[ox + 2] * gv;
        }
    }
    acc9[0] += a00;
    acc9[1] += a01;
    acc9[2] += a02;
    acc9[3] += a10;
    acc9[4] += a11;
    acc9[5] += a12;
    acc9[6] += a20;
    acc9[7] += a21;
    acc9[8] += a22;
}

}  // namespace macnet::detail
