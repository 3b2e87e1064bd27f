// Scalar reference kernels. These define the semantics; SIMD backends must
// match them per the equivalence contract in kernels.hpp.

#include <algorithm>
#include <cmath>
#include <vector>

#include "backends.hpp"

namespace odrl::kernels {
namespace {

// ============================================================================
// convolution
// ============================================================================

void conv2d_forward_scalar(const double* in, const double* w, const double* bias,
                           double* out, const ConvShape& s) {
    const std::int64_t in_plane = static_cast<std::int64_t>(s.ih) * s.iw;
    const std::int64_t in_sample = in_plane * s.ci;
    const std::int64_t out_plane = static_cast<std::int64_t>(s.oh) * s.ow;
    const std::int64_t w_plane = static_cast<std::int64_t>(s.kh) * s.kw;
    const std::int64_t w_filter = w_plane * s.ci;

    for (int n = 0; n < s.n; ++n) {
        for (int co = 0; co < s.co; ++co) {
            double* o = out + (n * s.co + co) * out_plane;
            const double* wf = w + co * w_filter;
            for (int oy = 0; oy < s.oh; ++oy) {
                for (int ox = 0; ox < s.ow; ++ox) {
                    double acc = bias[co];
                    for (int ci = 0; ci < s.ci; ++ci) {
                        const double* ip = in + n * in_sample + ci * in_plane;
                        const double* wp = wf + ci * w_plane;
                        for (int ky = 0; ky < s.kh; ++ky) {
                            const double* irow = ip + (oy + ky) * s.iw + ox;
                            const double* wrow = wp + ky * s.kw;
                            for (int kx = 0; kx < s.kw; ++kx)
                                acc += irow[kx] * wrow[kx];
                        }
                    }
                    o[oy * s.ow + ox] = acc;
                }
            }
        }
    }
}

void conv2d_input_grad_scalar(const double* g, const double* w, double* gin,
                              const ConvShape& s) {
    const std::int64_t in_plane = static_cast<std::int64_t>(s.ih) * s.iw;
    const std::int64_t in_sample = in_plane * s.ci;
    const std::int64_t out_plane = static_cast<std::int64_t>(s.oh) * s.ow;
    const std::int64_t w_plane = static_cast<std::int64_t>(s.kh) * s.kw;
    const std::int64_t w_filter = w_plane * s.ci;

    for (int n = 0; n < s.n; ++n) {
        for (int ci = 0; ci < s.ci; ++ci) {
            double* gp = gin + n * in_sample + ci * in_plane;
            for (int iy = 0; iy < s.ih; ++iy) {
                for (int ix = 0; ix < s.iw; ++ix) {
                    double acc = 0.0;
                    for (int co = 0; co < s.co; ++co) {
                        const double* go = g + (n * s.co + co) * out_plane;
                        const double* wp = w + co * w_filter + ci * w_plane;
                        for (int ky = 0; ky < s.kh; ++ky) {
                            const int oy = iy - ky;
                            if (oy < 0 || oy >= s.oh) continue;
                            for (int kx = 0; kx < s.kw; ++kx) {
                                const int ox = ix - kx;
                                if (ox < 0 || ox >= s.ow) continue;
                                acc += go[oy * s.ow + ox] * wp[ky * s.kw + kx];
                            }
                        }
                    }
                    gp[iy * s.iw + ix] = acc;
                }
            }
        }
    }
}

void conv2d_param_grad_scalar(const double* g, const double* in, double* gw,
                              double* gbias, const ConvShape& s) {
    const std::int64_t in_plane = static_cast<std::int64_t>(s.ih) * s.iw;
    const std::int64_t in_sample = in_plane * s.ci;
    const std::int64_t out_plane = static_cast<std::int64_t>(s.oh) * s.ow;
    const std::int64_t w_plane = static_cast<std::int64_t>(s.kh) * s.kw;
    const std::int64_t w_filter = w_plane * s.ci;

    for (int co = 0; co < s.co; ++co) {
        double bacc = 0.0;
        for (int n = 0; n < s.n; ++n) {
            const double* go = g + (n * s.co + co) * out_plane;
            for (std::int64_t i = 0; i < out_plane; ++i) bacc += go[i];
        }
        gbias[co] = bacc;

        for (int ci = 0; ci < s.ci; ++ci) {
            for (int ky = 0; ky < s.kh; ++ky) {
                for (int kx = 0; kx < s.kw; ++kx) {
                    double acc = 0.0;
                    for (int n = 0; n < s.n; ++n) {
                        const double* go = g + (n * s.co + co) * out_plane;
                        const double* ip = in + n * in_sample + ci * in_plane;
                        for (int oy = 0; oy < s.oh; ++oy) {
                            const double* grow = go + oy * s.ow;
                            const double* irow = ip + (oy + ky) * s.iw + kx;
                            for (int ox = 0; ox < s.ow; ++ox)
                                acc += grow[ox] * irow[ox];
                        }
                    }
                    gw[co * w_filter + ci * w_plane + ky * s.kw + kx] = acc;
                }
            }
        }
    }
}

// ============================================================================
// dense
// ============================================================================

void dense_forward_scalar(const double* in, const double* w, const double* bias,
                          double* out, int n, int in_f, int out_f) {
    for (int i = 0; i < n; ++i) {
        const double* x = in + static_cast<std::int64_t>(i) * in_f;
        double* y = out + static_cast<std::int64_t>(i) * out_f;
        for (int o = 0; o < out_f; ++o) {
            const double* wr = w + static_cast<std::int64_t>(o) * in_f;
            double acc = bias[o];
            for (int j = 0; j < in_f; ++j) acc += x[j] * wr[j];
            y[o] = acc;
        }
    }
}

void dense_input_grad_scalar(const double* g, const double* w, double* gin,
                             int n, int in_f, int out_f) {
    for (int i = 0; i < n; ++i) {
        const double* gr = g + static_cast<std::int64_t>(i) * out_f;
        double* gi = gin + static_cast<std::int64_t>(i) * in_f;
        for (int j = 0; j < in_f; ++j) gi[j] = 0.0;
        for (int o = 0; o < out_f; ++o) {
            const double go = gr[o];
            const double* wr = w + static_cast<std::int64_t>(o) * in_f;
            for (int j = 0; j < in_f; ++j) gi[j] += go * wr[j];
        }
    }
}

void dense_param_grad_scalar(const double* g, const double* in, double* gw,
                             double* gbias, int n, int in_f, int out_f) {
    for (int o = 0; o < out_f; ++o) {
        double* gwr = gw + static_cast<std::int64_t>(o) * in_f;
        for (int j = 0; j < in_f; ++j) gwr[j] = 0.0;
        gbias[o] = 0.0;
    }
    for (int i = 0; i < n; ++i) {
        const double* gr = g + static_cast<std::int64_t>(i) * out_f;
        const double* x = in + static_cast<std::int64_t>(i) * in_f;
        for (int o = 0; o < out_f; ++o) {
            const double go = gr[o];
            gbias[o] += go;
            double* gwr = gw + static_cast<std::int64_t>(o) * in_f;
            for (int j = 0; j < in_f; ++j) gwr[j] += go * x[j];
        }
    }
}

// ============================================================================
// elementwise / pooling
// ============================================================================

void relu_forward_scalar(const double* in, double* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_backward_scalar(const double* g, const double* out, double* gin,
                          std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) gin[i] = out[i] > 0.0 ? g[i] : 0.0;
}

void maxpool_forward_scalar(const double* in, double* out, std::int32_t* argmax,
                            int planes, int ih, int iw, int oh, int ow,
                            int win) {
    for (int p = 0; p < planes; ++p) {
        const double* ip = in + static_cast<std::int64_t>(p) * ih * iw;
        double* op = out + static_cast<std::int64_t>(p) * oh * ow;
        std::int32_t* ap = argmax + static_cast<std::int64_t>(p) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const int iy = oy * win, ix = ox * win;
                int best = iy * iw + ix;
                double bv = ip[best];
                for (int ky = 0; ky < win; ++ky) {
                    for (int kx = 0; kx < win; ++kx) {
                        const int cand = (iy + ky) * iw + ix + kx;
                        if (ip[cand] > bv) {
                            bv = ip[cand];
                            best = cand;
                        }
                    }
                }
                op[oy * ow + ox] = bv;
                ap[oy * ow + ox] = best;
            }
        }
    }
}

void maxpool_backward_scalar(const double* g, const std::int32_t* argmax,
                             double* gin, int planes, int ih, int iw, int oh,
                             int ow) {
    const std::int64_t in_plane = static_cast<std::int64_t>(ih) * iw;
    const std::int64_t out_plane = static_cast<std::int64_t>(oh) * ow;
    for (std::int64_t i = 0; i < in_plane * planes; ++i) gin[i] = 0.0;
    for (int p = 0; p < planes; ++p) {
        const double* gp = g + p * out_plane;
        const std::int32_t* ap = argmax + p * out_plane;
        double* gi = gin + p * in_plane;
        for (std::int64_t i = 0; i < out_plane; ++i) gi[ap[i]] += gp[i];
    }
}

// ============================================================================
// optimizer / conversions / matching
// ============================================================================

void rmsprop_update_scalar(double* p, const double* g, double* acc,
                           std::int64_t n, double lr, double decay, double eps) {
    for (std::int64_t i = 0; i < n; ++i) {
        acc[i] = decay * acc[i] + (1.0 - decay) * g[i] * g[i];
        p[i] -= lr * g[i] / std::sqrt(acc[i] + eps);
    }
}

void u8_to_f64_scalar(const std::uint8_t* src, double* dst, std::int64_t n,
                      double scale) {
    for (std::int64_t i = 0; i < n; ++i)
        dst[i] = static_cast<double>(src[i]) * scale;
}

void u8_maxpool_scalar(const std::uint8_t* in, std::uint8_t* out, int planes,
                       int ih, int iw, int oh, int ow, int win) {
    for (int p = 0; p < planes; ++p) {
        const std::uint8_t* ip = in + static_cast<std::int64_t>(p) * ih * iw;
        std::uint8_t* op = out + static_cast<std::int64_t>(p) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const int iy = oy * win, ix = ox * win;
                std::uint8_t m = 0;
                for (int ky = 0; ky < win; ++ky)
                    for (int kx = 0; kx < win; ++kx)
                        m = std::max(m, ip[(iy + ky) * iw + ix + kx]);
                op[oy * ow + ox] = m;
            }
        }
    }
}

void u8_dot_map_scalar(const std::uint8_t* img, int ih, int iw,
                       const std::uint8_t* tpl, int th, int tw, double* out,
                       int oh, int ow) {
    (void)ih;
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            std::int64_t acc = 0;
            for (int ty = 0; ty < th; ++ty) {
                const std::uint8_t* irow = img + (y + ty) * iw + x;
                const std::uint8_t* trow = tpl + ty * tw;
                for (int tx = 0; tx < tw; ++tx)
                    acc += static_cast<std::int64_t>(irow[tx]) * trow[tx];
            }
            out[y * ow + x] += static_cast<double>(acc);
        }
    }
}

}  // namespace

const Ops& scalar_ops() {
    static const Ops table = {
        conv2d_forward_scalar,   conv2d_input_grad_scalar,
        conv2d_param_grad_scalar, dense_forward_scalar,
        dense_input_grad_scalar, dense_param_grad_scalar,
        relu_forward_scalar,     relu_backward_scalar,
        maxpool_forward_scalar,  maxpool_backward_scalar,
        rmsprop_update_scalar,   u8_to_f64_scalar,
        u8_dot_map_scalar,       u8_maxpool_scalar,
    };
    return table;
}

// Integral-image window sums. Exact in int64 for any image up to the sizes
// this library handles (255^2 * 2^24 pixels is far below 2^63).
void u8_window_sums(const std::uint8_t* img, int ih, int iw, int th, int tw,
                    std::int64_t* sum, std::int64_t* sumsq) {
    const int sw = iw + 1;
    std::vector<std::int64_t> integ(static_cast<std::size_t>(ih + 1) * sw, 0);
    std::vector<std::int64_t> integ2(static_cast<std::size_t>(ih + 1) * sw, 0);
    for (int y = 0; y < ih; ++y) {
        std::int64_t row = 0, row2 = 0;
        for (int x = 0; x < iw; ++x) {
            const std::int64_t v = img[y * iw + x];
            row += v;
            row2 += v * v;
            integ[(y + 1) * sw + (x + 1)] = integ[y * sw + (x + 1)] + row;
            integ2[(y + 1) * sw + (x + 1)] = integ2[y * sw + (x + 1)] + row2;
        }
    }
    const int oh = ih - th + 1, ow = iw - tw + 1;
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            const int y1 = y + th, x1 = x + tw;
            sum[y * ow + x] = integ[y1 * sw + x1] - integ[y * sw + x1] -
                              integ[y1 * sw + x] + integ[y * sw + x];
            sumsq[y * ow + x] = integ2[y1 * sw + x1] - integ2[y * sw + x1] -
                                integ2[y1 * sw + x] + integ2[y * sw + x];
        }
    }
}

}  // namespace odrl::kernels
