// AVX2+FMA kernels. This translation unit is compiled with -mavx2 -mfma;
// nothing here runs unless the dispatcher verified CPU support.
//
// Bit-exactness strategy: vectorize ACROSS independent output elements
// (lanes = adjacent outputs) so each lane accumulates in exactly the scalar
// reference order. FMA is avoided where the scalar code rounds after the
// multiply (a*b then +=), except in integer-valued paths where every
// intermediate is exact. Reductions that must reassociate (dense_forward,
// conv2d_param_grad) are documented as tolerance-checked in kernels.hpp.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "backends.hpp"

namespace odrl::kernels {
namespace {

// 4 bytes -> 4 packed doubles (unaligned, aliasing-safe)
inline __m256d load4_u8_as_pd(const std::uint8_t* p) {
    int raw;
    std::memcpy(&raw, p, 4);
    return _mm256_cvtepi32_pd(_mm_cvtepu8_epi32(_mm_cvtsi32_si128(raw)));
}

// ============================================================================
// convolution
// ============================================================================

void conv2d_forward_avx2(const double* in, const double* w, const double* bias,
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
            const __m256d vbias = _mm256_set1_pd(bias[co]);
            for (int oy = 0; oy < s.oh; ++oy) {
                int ox = 0;
                for (; ox + 4 <= s.ow; ox += 4) {
                    __m256d acc = vbias;
                    for (int ci = 0; ci < s.ci; ++ci) {
                        const double* ip = in + n * in_sample + ci * in_plane;
                        const double* wp = wf + ci * w_plane;
                        for (int ky = 0; ky < s.kh; ++ky) {
                            const double* irow = ip + (oy + ky) * s.iw + ox;
                            const double* wrow = wp + ky * s.kw;
                            for (int kx = 0; kx < s.kw; ++kx) {
                                // mul then add, matching scalar rounding
                                const __m256d iv = _mm256_loadu_pd(irow + kx);
                                const __m256d wv = _mm256_set1_pd(wrow[kx]);
                                acc = _mm256_add_pd(acc, _mm256_mul_pd(iv, wv));
                            }
                        }
                    }
                    _mm256_storeu_pd(o + oy * s.ow + ox, acc);
                }
                for (; ox < s.ow; ++ox) {
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

void conv2d_input_grad_avx2(const double* g, const double* w, double* gin,
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
                // Interior columns where every kx tap is in range vectorize
                // cleanly; edges fall back to the guarded scalar loop.
                const int x_lo = s.kw - 1;
                const int x_hi = s.ow;  // ix < x_hi has ix-kx valid for all kx
                auto scalar_one = [&](int ix) {
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
                };
                int ix = 0;
                for (; ix < x_lo && ix < s.iw; ++ix) scalar_one(ix);
                for (; ix + 4 <= x_hi; ix += 4) {
                    __m256d acc = _mm256_setzero_pd();
                    for (int co = 0; co < s.co; ++co) {
                        const double* go = g + (n * s.co + co) * out_plane;
                        const double* wp = w + co * w_filter + ci * w_plane;
                        for (int ky = 0; ky < s.kh; ++ky) {
                            const int oy = iy - ky;
                            if (oy < 0 || oy >= s.oh) continue;
                            for (int kx = 0; kx < s.kw; ++kx) {
                                const __m256d gv =
                                    _mm256_loadu_pd(go + oy * s.ow + (ix - kx));
                                const __m256d wv =
                                    _mm256_set1_pd(wp[ky * s.kw + kx]);
                                acc = _mm256_add_pd(acc, _mm256_mul_pd(gv, wv));
                            }
                        }
                    }
                    _mm256_storeu_pd(gp + iy * s.iw + ix, acc);
                }
                for (; ix < s.iw; ++ix) scalar_one(ix);
            }
        }
    }
}

void conv2d_param_grad_avx2(const double* g, const double* in, double* gw,
                            double* gbias, const ConvShape& s) {
    const std::int64_t in_plane = static_cast<std::int64_t>(s.ih) * s.iw;
    const std::int64_t in_sample = in_plane * s.ci;
    const std::int64_t out_plane = static_cast<std::int64_t>(s.oh) * s.ow;
    const std::int64_t w_plane = static_cast<std::int64_t>(s.kh) * s.kw;
    const std::int64_t w_filter = w_plane * s.ci;

    for (int co = 0; co < s.co; ++co) {
        // Reduction over the whole output plane; reassociated relative to
        // the scalar reference (tolerance-checked).
        __m256d bvec = _mm256_setzero_pd();
        double btail = 0.0;
        for (int n = 0; n < s.n; ++n) {
            const double* go = g + (n * s.co + co) * out_plane;
            std::int64_t i = 0;
            for (; i + 4 <= out_plane; i += 4)
                bvec = _mm256_add_pd(bvec, _mm256_loadu_pd(go + i));
            for (; i < out_plane; ++i) btail += go[i];
        }
        alignas(32) double lanes[4];
        _mm256_store_pd(lanes, bvec);
        gbias[co] = lanes[0] + lanes[1] + lanes[2] + lanes[3] + btail;

        for (int ci = 0; ci < s.ci; ++ci) {
            for (int ky = 0; ky < s.kh; ++ky) {
                for (int kx = 0; kx < s.kw; ++kx) {
                    __m256d vacc = _mm256_setzero_pd();
                    double tail = 0.0;
                    for (int n = 0; n < s.n; ++n) {
                        const double* go = g + (n * s.co + co) * out_plane;
                        const double* ip = in + n * in_sample + ci * in_plane;
                        for (int oy = 0; oy < s.oh; ++oy) {
                            const double* grow = go + oy * s.ow;
                            const double* irow = ip + (oy + ky) * s.iw + kx;
                            int ox = 0;
                            for (; ox + 4 <= s.ow; ox += 4)
                                vacc = _mm256_fmadd_pd(_mm256_loadu_pd(grow + ox),
                                                       _mm256_loadu_pd(irow + ox),
                                                       vacc);
                            for (; ox < s.ow; ++ox) tail += grow[ox] * irow[ox];
                        }
                    }
                    _mm256_store_pd(lanes, vacc);
                    gw[co * w_filter + ci * w_plane + ky * s.kw + kx] =
                        lanes[0] + lanes[1] + lanes[2] + lanes[3] + tail;
                }
            }
        }
    }
}

// ============================================================================
// dense
// ============================================================================

void dense_forward_avx2(const double* in, const double* w, const double* bias,
                        double* out, int n, int in_f, int out_f) {
    for (int i = 0; i < n; ++i) {
        const double* x = in + static_cast<std::int64_t>(i) * in_f;
        double* y = out + static_cast<std::int64_t>(i) * out_f;
        for (int o = 0; o < out_f; ++o) {
            const double* wr = w + static_cast<std::int64_t>(o) * in_f;
            // Reassociated dot product (tolerance-checked).
            __m256d vacc = _mm256_setzero_pd();
            double tail = bias[o];
            int j = 0;
            for (; j + 4 <= in_f; j += 4)
                vacc = _mm256_fmadd_pd(_mm256_loadu_pd(x + j),
                                       _mm256_loadu_pd(wr + j), vacc);
            for (; j < in_f; ++j) tail += x[j] * wr[j];
            alignas(32) double lanes[4];
            _mm256_store_pd(lanes, vacc);
            y[o] = lanes[0] + lanes[1] + lanes[2] + lanes[3] + tail;
        }
    }
}

void dense_input_grad_avx2(const double* g, const double* w, double* gin, int n,
                           int in_f, int out_f) {
    for (int i = 0; i < n; ++i) {
        const double* gr = g + static_cast<std::int64_t>(i) * out_f;
        double* gi = gin + static_cast<std::int64_t>(i) * in_f;
        int j = 0;
        for (; j + 4 <= in_f; j += 4) _mm256_storeu_pd(gi + j, _mm256_setzero_pd());
        for (; j < in_f; ++j) gi[j] = 0.0;
        for (int o = 0; o < out_f; ++o) {
            const __m256d go = _mm256_set1_pd(gr[o]);
            const double* wr = w + static_cast<std::int64_t>(o) * in_f;
            j = 0;
            for (; j + 4 <= in_f; j += 4) {
                const __m256d cur = _mm256_loadu_pd(gi + j);
                const __m256d prod = _mm256_mul_pd(go, _mm256_loadu_pd(wr + j));
                _mm256_storeu_pd(gi + j, _mm256_add_pd(cur, prod));
            }
            for (; j < in_f; ++j) gi[j] += gr[o] * wr[j];
        }
    }
}

void dense_param_grad_avx2(const double* g, const double* in, double* gw,
                           double* gbias, int n, int in_f, int out_f) {
    const std::int64_t total = static_cast<std::int64_t>(out_f) * in_f;
    std::int64_t t = 0;
    for (; t + 4 <= total; t += 4) _mm256_storeu_pd(gw + t, _mm256_setzero_pd());
    for (; t < total; ++t) gw[t] = 0.0;
    for (int o = 0; o < out_f; ++o) gbias[o] = 0.0;

    for (int i = 0; i < n; ++i) {
        const double* gr = g + static_cast<std::int64_t>(i) * out_f;
        const double* x = in + static_cast<std::int64_t>(i) * in_f;
        for (int o = 0; o < out_f; ++o) {
            const double go = gr[o];
            gbias[o] += go;
            double* gwr = gw + static_cast<std::int64_t>(o) * in_f;
            const __m256d gv = _mm256_set1_pd(go);
            int j = 0;
            for (; j + 4 <= in_f; j += 4) {
                const __m256d cur = _mm256_loadu_pd(gwr + j);
                const __m256d prod = _mm256_mul_pd(gv, _mm256_loadu_pd(x + j));
                _mm256_storeu_pd(gwr + j, _mm256_add_pd(cur, prod));
            }
            for (; j < in_f; ++j) gwr[j] += go * x[j];
        }
    }
}

// ============================================================================
// elementwise / pooling
// ============================================================================

void relu_forward_avx2(const double* in, double* out, std::int64_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(in + i), zero));
    for (; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_backward_avx2(const double* g, const double* out, double* gin,
                        std::int64_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(out + i), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(gin + i, _mm256_and_pd(_mm256_loadu_pd(g + i), mask));
    }
    for (; i < n; ++i) gin[i] = out[i] > 0.0 ? g[i] : 0.0;
}

// Max and equality compares are exact, so any scan order finds the same
// maximum; the argmax pass rediscovers the scalar choice (first maximal
// element in row-major window order) by equality. Windows holding a NaN are
// detected during the value pass (vmaxpd's NaN propagation is order-
// dependent, so its result can't be trusted there) and take the scalar scan,
// which reproduces the scalar backend's NaN behavior bit-for-bit.
void maxpool_forward_avx2(const double* in, double* out, std::int32_t* argmax,
                          int planes, int ih, int iw, int oh, int ow, int win) {
    if (win < 4) {
        scalar_ops().maxpool_forward(in, out, argmax, planes, ih, iw, oh, ow,
                                     win);
        return;
    }
    const int vwin = win & ~3;  // vectorized column span per window row
    for (int p = 0; p < planes; ++p) {
        const double* ip = in + static_cast<std::int64_t>(p) * ih * iw;
        double* op = out + static_cast<std::int64_t>(p) * oh * ow;
        std::int32_t* ap = argmax + static_cast<std::int64_t>(p) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const int iy = oy * win, ix = ox * win;
                __m256d vmax = _mm256_loadu_pd(ip + iy * iw + ix);
                __m256d unord = _mm256_setzero_pd();
                double m = ip[iy * iw + ix];
                bool tail_nan = false;
                for (int ky = 0; ky < win; ++ky) {
                    const double* row = ip + (iy + ky) * iw + ix;
                    for (int kx = 0; kx + 4 <= win; kx += 4) {
                        const __m256d v = _mm256_loadu_pd(row + kx);
                        unord = _mm256_or_pd(unord,
                                             _mm256_cmp_pd(v, v, _CMP_UNORD_Q));
                        vmax = _mm256_max_pd(vmax, v);
                    }
                    for (int kx = vwin; kx < win; ++kx) {
                        tail_nan |= row[kx] != row[kx];
                        if (row[kx] > m) m = row[kx];
                    }
                }
                int best = -1;
                if (!tail_nan && _mm256_movemask_pd(unord) == 0) {
                    alignas(32) double lanes[4];
                    _mm256_storeu_pd(lanes, vmax);
                    for (int l = 0; l < 4; ++l)
                        if (lanes[l] > m) m = lanes[l];
                    const __m256d vm = _mm256_set1_pd(m);
                    for (int ky = 0; ky < win && best < 0; ++ky) {
                        const double* row = ip + (iy + ky) * iw + ix;
                        for (int kx = 0; kx + 4 <= win; kx += 4) {
                            const int hit = _mm256_movemask_pd(_mm256_cmp_pd(
                                _mm256_loadu_pd(row + kx), vm, _CMP_EQ_OQ));
                            if (hit) {
                                best = (iy + ky) * iw + ix + kx +
                                       __builtin_ctz(static_cast<unsigned>(hit));
                                break;
                            }
                        }
                        if (best >= 0) break;
                        for (int kx = vwin; kx < win; ++kx)
                            if (row[kx] == m) {
                                best = (iy + ky) * iw + ix + kx;
                                break;
                            }
                    }
                }
                if (best < 0) {  // NaN window: exact scalar semantics
                    best = iy * iw + ix;
                    m = ip[best];
                    for (int ky = 0; ky < win; ++ky)
                        for (int kx = 0; kx < win; ++kx) {
                            const int cand = (iy + ky) * iw + ix + kx;
                            if (ip[cand] > m) {
                                m = ip[cand];
                                best = cand;
                            }
                        }
                }
                op[oy * ow + ox] = m;
                ap[oy * ow + ox] = best;
            }
        }
    }
}

// ============================================================================
// optimizer / conversions / matching
// ============================================================================

void rmsprop_update_avx2(double* p, const double* g, double* acc, std::int64_t n,
                         double lr, double decay, double eps) {
    const __m256d vdecay = _mm256_set1_pd(decay);
    const __m256d vkeep = _mm256_set1_pd(1.0 - decay);
    const __m256d vlr = _mm256_set1_pd(lr);
    const __m256d veps = _mm256_set1_pd(eps);
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d gv = _mm256_loadu_pd(g + i);
        // decay*acc + ((1-decay)*g)*g, association matching the scalar code
        const __m256d g2 = _mm256_mul_pd(_mm256_mul_pd(vkeep, gv), gv);
        const __m256d av = _mm256_add_pd(_mm256_mul_pd(vdecay, _mm256_loadu_pd(acc + i)),
                                         g2);
        _mm256_storeu_pd(acc + i, av);
        const __m256d denom = _mm256_sqrt_pd(_mm256_add_pd(av, veps));
        const __m256d step = _mm256_div_pd(_mm256_mul_pd(vlr, gv), denom);
        _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
    }
    for (; i < n; ++i) {
        acc[i] = decay * acc[i] + (1.0 - decay) * g[i] * g[i];
        p[i] -= lr * g[i] / std::sqrt(acc[i] + eps);
    }
}

void u8_to_f64_avx2(const std::uint8_t* src, double* dst, std::int64_t n,
                    double scale) {
    const __m256d vscale = _mm256_set1_pd(scale);
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(dst + i, _mm256_mul_pd(load4_u8_as_pd(src + i), vscale));
    for (; i < n; ++i) dst[i] = static_cast<double>(src[i]) * scale;
}

void u8_maxpool_avx2(const std::uint8_t* in, std::uint8_t* out, int planes,
                     int ih, int iw, int oh, int ow, int win) {
    // u8 max is an exact lattice operation — any evaluation order gives the
    // scalar result. Vertical max across the window's rows first (32 bytes
    // per op), then a short horizontal max per output cell.
    const int used = ow * win;  // ragged tail columns beyond this are dropped
    std::vector<std::uint8_t> rowmax(static_cast<std::size_t>(used));
    for (int p = 0; p < planes; ++p) {
        const std::uint8_t* ip = in + static_cast<std::int64_t>(p) * ih * iw;
        std::uint8_t* op = out + static_cast<std::int64_t>(p) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            const std::uint8_t* rows =
                ip + static_cast<std::int64_t>(oy) * win * iw;
            int x = 0;
            for (; x + 32 <= used; x += 32) {
                __m256i m = _mm256_loadu_si256(
                    reinterpret_cast<const __m256i*>(rows + x));
                for (int ky = 1; ky < win; ++ky)
                    m = _mm256_max_epu8(
                        m, _mm256_loadu_si256(reinterpret_cast<const __m256i*>(
                               rows + static_cast<std::int64_t>(ky) * iw + x)));
                _mm256_storeu_si256(reinterpret_cast<__m256i*>(rowmax.data() + x),
                                    m);
            }
            for (; x < used; ++x) {
                std::uint8_t m = rows[x];
                for (int ky = 1; ky < win; ++ky)
                    m = std::max(m,
                                 rows[static_cast<std::int64_t>(ky) * iw + x]);
                rowmax[x] = m;
            }
            for (int ox = 0; ox < ow; ++ox) {
                const std::uint8_t* w = rowmax.data() + ox * win;
                std::uint8_t m = w[0];
                for (int kx = 1; kx < win; ++kx) m = std::max(m, w[kx]);
                op[oy * ow + ox] = m;
            }
        }
    }
}

void u8_dot_map_avx2(const std::uint8_t* img, int ih, int iw,
                     const std::uint8_t* tpl, int th, int tw, double* out,
                     int oh, int ow) {
    (void)ih;
    // All lane values are exact integers < 2^53; FMA and reordering cannot
    // change the result, so this is bit-identical to the scalar kernel.
    for (int y = 0; y < oh; ++y) {
        int x = 0;
        for (; x + 4 <= ow; x += 4) {
            __m256d acc = _mm256_loadu_pd(out + y * ow + x);
            for (int ty = 0; ty < th; ++ty) {
                const std::uint8_t* irow = img + (y + ty) * iw + x;
                const std::uint8_t* trow = tpl + ty * tw;
                for (int tx = 0; tx < tw; ++tx) {
                    const __m256d iv = load4_u8_as_pd(irow + tx);
                    const __m256d tv = _mm256_set1_pd(static_cast<double>(trow[tx]));
                    acc = _mm256_fmadd_pd(iv, tv, acc);
                }
            }
            _mm256_storeu_pd(out + y * ow + x, acc);
        }
        for (; x < ow; ++x) {
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

const Ops& avx2_ops() {
    static const Ops table = {
        conv2d_forward_avx2,   conv2d_input_grad_avx2,
        conv2d_param_grad_avx2, dense_forward_avx2,
        dense_input_grad_avx2, dense_param_grad_avx2,
        relu_forward_avx2,     relu_backward_avx2,
        // pool backward is a scatter; only the forward scan is vectorized
        maxpool_forward_avx2,  scalar_ops().maxpool_backward,
        rmsprop_update_avx2,   u8_to_f64_avx2,
        u8_dot_map_avx2,       u8_maxpool_avx2,
    };
    return table;
}

}  // namespace odrl::kernels
