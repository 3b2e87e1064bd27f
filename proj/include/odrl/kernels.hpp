#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace odrl::kernels {

// ============================================================================
// Compute kernels: scalar reference implementations plus SIMD variants
// selected at runtime. Every hot inner loop in the library (convolution,
// dense layers, template-matching correlation, optimizer updates) goes
// through this table.
//
// Equivalence contract between backends, enforced by tests:
//   - bit-exact: conv2d_forward, conv2d_input_grad, dense_input_grad,
//     dense_param_grad, relu_*, maxpool_*, rmsprop_update, u8_to_f64,
//     u8_dot_map, u8_maxpool. SIMD variants keep each output element's
//     accumulation
//     order identical to the scalar reference (or the sums are exact
//     integers, where any order gives the same value).
//   - tolerance (reductions reassociate): conv2d_param_grad, dense_forward.
//     Equivalence tests bound the relative difference at 1e-12.
//
// Backend selection: AVX2 is used when the CPU supports it. The environment
// variable ODRL_KERNELS=scalar|avx2 forces a backend (useful for the
// portable-results path and for debugging).
// ============================================================================

// Valid-mode convolution, stride 1, no padding. oh = ih-kh+1, ow = iw-kw+1.
// in: (n, ci, ih, iw)  w: (co, ci, kh, kw)  bias: (co)  out: (n, co, oh, ow)
struct ConvShape {
    int n, ci, ih, iw;
    int co, kh, kw;
    int oh, ow;
};

using ConvForwardFn = void (*)(const double* in, const double* w,
                               const double* bias, double* out,
                               const ConvShape& s);
// gin[n][ci][iy][ix] = sum over (co, ky, kx) with oy=iy-ky, ox=ix-kx in
// range of g[n][co][oy][ox] * w[co][ci][ky][kx], taps in that loop order.
using ConvInputGradFn = void (*)(const double* g, const double* w, double* gin,
                                 const ConvShape& s);
using ConvParamGradFn = void (*)(const double* g, const double* in, double* gw,
                                 double* gbias, const ConvShape& s);

// in: (n, in_f)  w: (out_f, in_f)  bias: (out_f)  out: (n, out_f)
using DenseForwardFn = void (*)(const double* in, const double* w,
                                const double* bias, double* out, int n,
                                int in_f, int out_f);
using DenseInputGradFn = void (*)(const double* g, const double* w, double* gin,
                                  int n, int in_f, int out_f);
using DenseParamGradFn = void (*)(const double* g, const double* in, double* gw,
                                  double* gbias, int n, int in_f, int out_f);

using ReluForwardFn = void (*)(const double* in, double* out, std::int64_t n);
// Subgradient at 0 is 0: grad passes where the forward OUTPUT is > 0.
using ReluBackwardFn = void (*)(const double* g, const double* out, double* gin,
                                std::int64_t n);

// win x win window, stride win, floor on ragged extents (trailing rows/cols
// dropped). Ties take the first maximum in row-major window order. argmax
// stores the chosen element's flat (iy*iw+ix) plane index per output
// element; backward scatters by those absolute indices and needs no window.
using MaxpoolForwardFn = void (*)(const double* in, double* out,
                                  std::int32_t* argmax, int planes, int ih,
                                  int iw, int oh, int ow, int win);
using MaxpoolBackwardFn = void (*)(const double* g, const std::int32_t* argmax,
                                   double* gin, int planes, int ih, int iw,
                                   int oh, int ow);

// acc = decay*acc + (1-decay)*g^2;  p -= lr * g / sqrt(acc + eps)
using RmspropUpdateFn = void (*)(double* p, const double* g, double* acc,
                                 std::int64_t n, double lr, double decay,
                                 double eps);

// dst[i] = src[i] * scale
using U8ToF64Fn = void (*)(const std::uint8_t* src, double* dst, std::int64_t n,
                           double scale);

// win x win window max of 8-bit planes, stride win, floor on ragged extents
// (trailing rows/cols dropped) — the u8 twin of maxpool_forward's value
// pass. No argmax: u8 max needs no tie rule. Training pools states in u8
// space before the float conversion; that commutes bit-exactly with
// maxpool_forward on the converted plane because x -> x*scale is strictly
// monotone on [0, 255] for scale > 0.
using U8MaxpoolFn = void (*)(const std::uint8_t* in, std::uint8_t* out,
                             int planes, int ih, int iw, int oh, int ow,
                             int win);

// Sliding dot product of an 8-bit template over an 8-bit plane:
// out[y][x] += sum over (ty, tx) of tpl[ty][tx] * img[y+ty][x+tx].
// Accumulates (callers zero or stack channels). All products and sums are
// integers < 2^53, exactly representable in double, so any summation order
// yields the same bits.
using U8DotMapFn = void (*)(const std::uint8_t* img, int ih, int iw,
                            const std::uint8_t* tpl, int th, int tw,
                            double* out, int oh, int ow);

struct Ops {
    ConvForwardFn conv2d_forward;
    ConvInputGradFn conv2d_input_grad;
    ConvParamGradFn conv2d_param_grad;
    DenseForwardFn dense_forward;
    DenseInputGradFn dense_input_grad;
    DenseParamGradFn dense_param_grad;
    ReluForwardFn relu_forward;
    ReluBackwardFn relu_backward;
    MaxpoolForwardFn maxpool_forward;
    MaxpoolBackwardFn maxpool_backward;
    RmspropUpdateFn rmsprop_update;
    U8ToF64Fn u8_to_f64;
    U8DotMapFn u8_dot_map;
    U8MaxpoolFn u8_maxpool;
};

enum class Backend { scalar, avx2 };

std::string backend_name(Backend b);
bool backend_available(Backend b);
std::vector<Backend> available_backends();

// Active table. Chosen once: ODRL_KERNELS override if set, else the best
// available backend.
const Ops& ops();
Backend active_backend();

// Table for a specific backend (equivalence tests). Throws UsageError if
// the backend is not available on this machine.
const Ops& ops_for(Backend b);

// Force the active backend (tests). Throws UsageError if unavailable.
void set_backend(Backend b);

// Sliding window sums of an 8-bit plane: for every (th, tw) window position,
// sum[y][x] = sum of pixels and sumsq[y][x] = sum of squared pixels. Exact
// integer arithmetic (integral images); backend-independent.
void u8_window_sums(const std::uint8_t* img, int ih, int iw, int th, int tw,
                    std::int64_t* sum, std::int64_t* sumsq);

}  // namespace odrl::kernels
