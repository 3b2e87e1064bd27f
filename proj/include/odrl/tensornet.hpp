#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "odrl/tensor.hpp"

namespace odrl::tensornet {

// ============================================================================
// Small conv/dense network core with exact analytic backward passes (params
// AND input, the latter feeds pixel saliency), RMSProp, checkpoints, and a
// finite-difference gradient verifier.
//
// Layer menu: conv (stride 1, no padding), maxpool (win x win window,
// stride win, trailing ragged rows/cols dropped), relu, dense (flattens its
// input), dueling_head (input (1+A) units -> Q(a) = V + A_a - mean A).
// Fixed conventions: ReLU subgradient at 0 is 0; maxpool ties route the
// gradient to the first maximal element in row-major window order.
// ============================================================================

enum class LayerKind { conv, maxpool, relu, dense, dueling_head };

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    int filters = 0;  // conv: output channels; dense: units
    int kernel = 0;   // conv: square kernel side; maxpool: window (= stride)

    static LayerSpec make_conv(int filters, int kernel) {
        return {LayerKind::conv, filters, kernel};
    }
    static LayerSpec make_maxpool(int window = 2) {
        return {LayerKind::maxpool, 0, window};
    }
    static LayerSpec make_relu() { return {LayerKind::relu, 0, 0}; }
    static LayerSpec make_dense(int units) { return {LayerKind::dense, units, 0}; }
    static LayerSpec make_dueling_head() { return {LayerKind::dueling_head, 0, 0}; }

    bool operator==(const LayerSpec&) const = default;
};

// Per-sample (channels, height, width); dense outputs use (units, 1, 1).
struct Shape3 {
    int c = 0, h = 0, w = 0;

    std::int64_t count() const {
        return static_cast<std::int64_t>(c) * h * w;
    }
    bool operator==(const Shape3&) const = default;
};

struct QNet {
    Shape3 input_shape;
    int num_actions = 0;
    std::vector<LayerSpec> layers;
    std::vector<Shape3> out_shapes;  // per layer, derived at construction

    // Aligned with layers; empty Tensor where the layer has no parameters.
    // Conv weights are (co, ci, kh, kw); dense weights (out, in, 1, 1);
    // biases (k, 1, 1, 1). rms_* are the RMSProp accumulators.
    std::vector<Tensor> weights, biases;
    std::vector<Tensor> rms_w, rms_b;

    std::uint64_t global_step = 0;
    // Bumped on every parameter mutation; forward caches remember the value
    // they were computed under so a stale cache is rejected.
    std::uint64_t param_version = 0;

    bool dueling() const {
        return !layers.empty() && layers.back().kind == LayerKind::dueling_head;
    }
    std::int64_t param_count() const;
};

// Validates the layer stack against the input shape (DimensionError on any
// incompatibility), derives per-layer shapes, and initializes parameters
// uniformly in +-sqrt(6 / (fan_in + fan_out)) from the seed; biases start 0.
// The final per-sample shape must be (num_actions, 1, 1).
QNet make_qnet(Shape3 input, std::vector<LayerSpec> layers, int num_actions,
               std::uint64_t seed);

// Named architecture profiles. "tiny" downsamples aggressively for cheap
// training; "full" is the four-conv stack. dueling appends a (1+A)-unit
// head plus the combining layer.
std::vector<LayerSpec> profile_layers(const std::string& profile,
                                      int num_actions, bool dueling);

struct ForwardCache {
    const QNet* net = nullptr;
    std::uint64_t param_version = 0;
    // True when the cache came from forward_from_pooled: layer 0 was skipped
    // and kept no argmax, so backward can't propagate into the input.
    bool pooled_entry = false;
    // Input activations, kept only when the first layer has parameters (its
    // param grads are the one consumer of these values in backward).
    Tensor input;
    std::vector<Tensor> outputs;  // per layer
    std::vector<std::vector<std::int32_t>> pool_argmax;  // per layer; maxpool only

    const Tensor& qvalues() const { return outputs.back(); }
    double q(int sample, int action) const {
        return outputs.back().at(sample, action, 0, 0);
    }
};

// Input is (batch, c, h, w) matching net.input_shape; output tensor is
// (batch, num_actions, 1, 1). Deterministic and bit-reproducible.
ForwardCache forward(const QNet& net, const Tensor& input);

// Fast entry for nets whose first layer is a maxpool (UsageError otherwise):
// the caller supplies that layer's output directly and layers [1, end) run
// normally. Training pools states in u8 space during batch assembly and
// enters here, which is bit-identical to forward() on the unpooled input
// because max commutes with the strictly monotone u8 -> double scaling —
// and skips most of the batch's memory traffic. The returned cache supports
// backward() only with need_input_grad = false: the skipped pool keeps no
// argmax to scatter gradients through.
ForwardCache forward_from_pooled(const QNet& net, const Tensor& pooled);

struct GradientBundle {
    std::vector<Tensor> weight_grads, bias_grads;  // aligned with net.layers
    Tensor input_grad;

    bool all_finite() const;
};

// Exact analytic gradients of sum(output_grad * qvalues) w.r.t. every
// parameter and the input. The cache must come from forward() on this net
// at the current param_version (else UsageError). With need_input_grad
// false, propagation stops at the lowest parametric layer and input_grad
// is left empty — parameter gradients are unaffected, and training loops
// skip the (often dominant) cost of back-propagating through leading
// pooling stages that feed no parameters. Saliency needs the default.
GradientBundle backward(const QNet& net, const ForwardCache& cache,
                        const Tensor& output_grad, bool need_input_grad = true);

// (batch, 1+A, 1, 1) value/advantage stack -> (batch, A, 1, 1) Q-values:
// Q(a) = V + A_a - mean_a' A_a'.
Tensor dueling_combine(const Tensor& va);

// acc = decay*acc + (1-decay)*g^2;  p -= lr * g / sqrt(acc + eps).
// Throws TrainingError on non-finite gradients; bumps param_version.
void rmsprop_step(QNet& net, const GradientBundle& grads, double lr,
                  double decay, double eps);

// --------------------------------------------------------------------------
// Checkpoints: magic "ODRLCKPT", u32 format version, u64 global step, the
// net spec as flat text, then per parametric layer (declaration order)
// weights, biases, and both RMSProp accumulators as little-endian f64
// arrays. save -> load -> save is byte-identical.
// --------------------------------------------------------------------------
void save_checkpoint(const std::string& path, const QNet& net);
QNet load_checkpoint(const std::string& path);

// --------------------------------------------------------------------------
// Finite-difference verification. Central differences of the scalar
// L = sum(output_grad * qvalues) at +-eps per coordinate. Coordinates where
// the perturbation flips a ReLU activation sign or a maxpool argmax are
// skipped (the subgradient convention makes the analytic value well-defined
// but the finite difference meaningless there). Above max_coords total
// coordinates, a seeded subsample is checked, spread over every parameter
// tensor and the input. Relative error per coordinate is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-5).
// --------------------------------------------------------------------------
struct GradCheckReport {
    double max_rel_error = 0.0;
    std::int64_t checked = 0;
    std::int64_t skipped = 0;  // kink-adjacent coordinates
};

GradCheckReport grad_check(const QNet& net, const Tensor& input, double eps,
                           std::int64_t max_coords, std::uint64_t seed);

// Same comparison against a caller-supplied bundle; grad_check is this with
// bundle = backward(...). A corrupted bundle (mutation tests) must fail.
GradCheckReport compare_with_finite_differences(
    const QNet& net, const Tensor& input, const Tensor& output_grad,
    const GradientBundle& analytic, double eps, std::int64_t max_coords,
    std::uint64_t seed);

// Raises glibc's mmap and trim thresholds so the multi-megabyte tensors a
// training step churns through are recycled from the heap instead of being
// returned to the kernel (and zero-faulted back in) on every free/alloc
// round trip. Idempotent; a no-op on non-glibc platforms.
void tune_allocator();

}  // namespace odrl::tensornet
