#include "odrl/tensornet.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "odrl/errors.hpp"
#include "odrl/kernels.hpp"
#include "odrl/rng.hpp"
#include "odrl/text.hpp"

namespace odrl::tensornet {
namespace {

bool has_params(const LayerSpec& ls) {
    return ls.kind == LayerKind::conv || ls.kind == LayerKind::dense;
}

kernels::ConvShape conv_shape(const LayerSpec& ls, int batch, const Shape3& in,
                              const Shape3& out) {
    return {batch, in.c, in.h, in.w, ls.filters, ls.kernel, ls.kernel, out.h,
            out.w};
}

double loss_of(const Tensor& q, const Tensor& g) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < q.size(); ++i) acc += q[i] * g[i];
    return acc;
}

// ReLU sign masks and pool argmaxes of a forward pass; finite differences
// are only trusted at coordinates where these match the base run.
struct KinkSignature {
    std::vector<std::vector<bool>> relu_pos;
    std::vector<std::vector<std::int32_t>> pool_arg;

    bool operator==(const KinkSignature&) const = default;
};

KinkSignature signature_of(const QNet& net, const ForwardCache& cache) {
    KinkSignature sig;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (net.layers[i].kind == LayerKind::relu) {
            const Tensor& out = cache.outputs[i];
            std::vector<bool> mask(static_cast<std::size_t>(out.size()));
            for (std::int64_t j = 0; j < out.size(); ++j) mask[j] = out[j] > 0.0;
            sig.relu_pos.push_back(std::move(mask));
        } else if (net.layers[i].kind == LayerKind::maxpool) {
            sig.pool_arg.push_back(cache.pool_argmax[i]);
        }
    }
    return sig;
}

std::vector<std::int64_t> sample_distinct(std::int64_t n, std::int64_t want,
                                          Rng& rng) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) idx[i] = i;
    if (want >= n) return idx;
    for (std::int64_t i = 0; i < want; ++i) {
        const std::int64_t j =
            i + static_cast<std::int64_t>(
                    rng.uniform_int(static_cast<std::uint32_t>(n - i)));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(static_cast<std::size_t>(want));
    return idx;
}

void append_u32le(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64le(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64le(std::string& buf, double d) {
    append_u64le(buf, std::bit_cast<std::uint64_t>(d));
}

class ByteReader {
public:
    ByteReader(const std::string& data, std::string path)
        : data_(data), path_(std::move(path)) {}

    std::uint32_t u32le() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(
                     static_cast<unsigned char>(data_[pos_ + i]))
                 << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64le() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(
                     static_cast<unsigned char>(data_[pos_ + i]))
                 << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64le() { return std::bit_cast<double>(u64le()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool exhausted() const { return pos_ == data_.size(); }
    void need(std::size_t n) const {
        if (pos_ + n > data_.size())
            throw IoError("checkpoint truncated: " + path_);
    }

private:
    const std::string& data_;
    std::string path_;
    std::size_t pos_ = 0;
};

constexpr char kCheckpointMagic[] = "ODRLCKPT";  // 8 bytes, no terminator
constexpr std::uint32_t kCheckpointVersion = 1;

std::string spec_text(const QNet& net) {
    std::ostringstream out;
    out << "input " << net.input_shape.c << " " << net.input_shape.h << " "
        << net.input_shape.w << "\n";
    out << "actions " << net.num_actions << "\n";
    for (const auto& ls : net.layers) {
        switch (ls.kind) {
            case LayerKind::conv:
                out << "layer conv " << ls.filters << " " << ls.kernel << "\n";
                break;
            case LayerKind::maxpool:
                out << "layer maxpool " << ls.kernel << "\n";
                break;
            case LayerKind::relu: out << "layer relu\n"; break;
            case LayerKind::dense:
                out << "layer dense " << ls.filters << "\n";
                break;
            case LayerKind::dueling_head: out << "layer dueling_head\n"; break;
        }
    }
    return out.str();
}

QNet net_from_spec_text(const std::string& text, const std::string& path) {
    Shape3 input;
    int actions = 0;
    bool have_input = false, have_actions = false;
    std::vector<LayerSpec> layers;
    for (const std::string& raw : split(text, '\n')) {
        const std::string line = trim(raw);
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "input") {
            if (!(ls >> input.c >> input.h >> input.w))
                throw IoError(path + ": bad input line in checkpoint spec");
            have_input = true;
        } else if (word == "actions") {
            if (!(ls >> actions))
                throw IoError(path + ": bad actions line in checkpoint spec");
            have_actions = true;
        } else if (word == "layer") {
            std::string kind;
            ls >> kind;
            if (kind == "conv") {
                LayerSpec l = LayerSpec::make_conv(0, 0);
                if (!(ls >> l.filters >> l.kernel))
                    throw IoError(path + ": bad conv layer in checkpoint spec");
                layers.push_back(l);
            } else if (kind == "maxpool") {
                LayerSpec l = LayerSpec::make_maxpool();
                if (!(ls >> l.kernel))
                    throw IoError(path + ": bad maxpool layer in checkpoint spec");
                layers.push_back(l);
            } else if (kind == "relu") {
                layers.push_back(LayerSpec::make_relu());
            } else if (kind == "dense") {
                LayerSpec l = LayerSpec::make_dense(0);
                if (!(ls >> l.filters))
                    throw IoError(path + ": bad dense layer in checkpoint spec");
                layers.push_back(l);
            } else if (kind == "dueling_head") {
                layers.push_back(LayerSpec::make_dueling_head());
            } else {
                throw IoError(path + ": unknown layer kind '" + kind +
                              "' in checkpoint spec");
            }
        } else {
            throw IoError(path + ": unknown checkpoint spec line '" + line + "'");
        }
    }
    if (!have_input || !have_actions || layers.empty())
        throw IoError(path + ": incomplete checkpoint spec");
    return make_qnet(input, std::move(layers), actions, 0);
}

}  // namespace

std::int64_t QNet::param_count() const {
    std::int64_t total = 0;
    for (const auto& t : weights) total += t.size();
    for (const auto& t : biases) total += t.size();
    return total;
}

QNet make_qnet(Shape3 input, std::vector<LayerSpec> layers, int num_actions,
               std::uint64_t seed) {
    if (input.c < 1 || input.h < 1 || input.w < 1)
        throw DimensionError("net input shape must be positive");
    if (num_actions < 1) throw DimensionError("net needs at least one action");
    if (layers.empty()) throw DimensionError("net needs at least one layer");

    QNet net;
    net.input_shape = input;
    net.num_actions = num_actions;
    net.layers = std::move(layers);

    Rng rng(seed);
    Shape3 cur = input;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& ls = net.layers[i];
        const std::string where = "layer " + std::to_string(i);
        Tensor w, b;
        std::int64_t fan_in = 0, fan_out = 0;
        switch (ls.kind) {
            case LayerKind::conv:
                if (ls.filters < 1 || ls.kernel < 1)
                    throw DimensionError(where + ": conv needs filters and kernel >= 1");
                if (cur.h < ls.kernel || cur.w < ls.kernel)
                    throw DimensionError(where + ": conv kernel " +
                                         std::to_string(ls.kernel) +
                                         " larger than input " +
                                         std::to_string(cur.h) + "x" +
                                         std::to_string(cur.w));
                w = Tensor(ls.filters, cur.c, ls.kernel, ls.kernel);
                b = Tensor(ls.filters, 1, 1, 1);
                fan_in = static_cast<std::int64_t>(cur.c) * ls.kernel * ls.kernel;
                fan_out = static_cast<std::int64_t>(ls.filters) * ls.kernel * ls.kernel;
                cur = {ls.filters, cur.h - ls.kernel + 1, cur.w - ls.kernel + 1};
                break;
            case LayerKind::maxpool:
                if (ls.kernel < 2)
                    throw DimensionError(where + ": maxpool window must be >= 2");
                if (cur.h < ls.kernel || cur.w < ls.kernel)
                    throw DimensionError(where + ": maxpool window " +
                                         std::to_string(ls.kernel) +
                                         " larger than input " +
                                         std::to_string(cur.h) + "x" +
                                         std::to_string(cur.w));
                cur = {cur.c, cur.h / ls.kernel, cur.w / ls.kernel};
                break;
            case LayerKind::relu:
                break;
            case LayerKind::dense:
                if (ls.filters < 1)
                    throw DimensionError(where + ": dense needs units >= 1");
                if (cur.count() > (1 << 24))
                    throw DimensionError(where + ": dense input too large");
                w = Tensor(ls.filters, static_cast<int>(cur.count()), 1, 1);
                b = Tensor(ls.filters, 1, 1, 1);
                fan_in = cur.count();
                fan_out = ls.filters;
                cur = {ls.filters, 1, 1};
                break;
            case LayerKind::dueling_head:
                if (i + 1 != net.layers.size())
                    throw DimensionError(where + ": dueling_head must be the last layer");
                if (cur.h != 1 || cur.w != 1 || cur.c != num_actions + 1)
                    throw DimensionError(
                        where + ": dueling_head needs (1+actions) input units, got " +
                        std::to_string(cur.c));
                cur = {num_actions, 1, 1};
                break;
        }
        if (!w.empty()) {
            const double bound =
                std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            for (std::int64_t j = 0; j < w.size(); ++j)
                w[j] = rng.uniform(-bound, bound);
        }
        net.rms_w.push_back(Tensor::zeros_like(w));
        net.rms_b.push_back(Tensor::zeros_like(b));
        net.weights.push_back(std::move(w));
        net.biases.push_back(std::move(b));  // biases start at 0
        net.out_shapes.push_back(cur);
    }
    if (cur.c != num_actions || cur.h != 1 || cur.w != 1)
        throw DimensionError("net output shape is (" + std::to_string(cur.c) +
                             "," + std::to_string(cur.h) + "," +
                             std::to_string(cur.w) + "), expected (" +
                             std::to_string(num_actions) + ",1,1)");
    return net;
}

std::vector<LayerSpec> profile_layers(const std::string& profile,
                                      int num_actions, bool dueling) {
    const int head = dueling ? num_actions + 1 : num_actions;
    std::vector<LayerSpec> layers;
    if (profile == "tiny") {
        // The leading 8x8 pool collapses 8x8-pixel sprite cells to single
        // units in one pass over the frame, then a 2x2 conv sees
        // adjacent-cell neighborhoods. Cheap enough for single-core training.
        layers = {LayerSpec::make_maxpool(8),  LayerSpec::make_conv(16, 2),
                  LayerSpec::make_relu(),      LayerSpec::make_maxpool(),
                  LayerSpec::make_conv(16, 3), LayerSpec::make_relu(),
                  LayerSpec::make_dense(64),   LayerSpec::make_relu(),
                  LayerSpec::make_dense(head)};
    } else if (profile == "full") {
        layers = {LayerSpec::make_conv(32, 5), LayerSpec::make_relu(),
                  LayerSpec::make_maxpool(),   LayerSpec::make_conv(32, 5),
                  LayerSpec::make_relu(),      LayerSpec::make_maxpool(),
                  LayerSpec::make_conv(64, 4), LayerSpec::make_relu(),
                  LayerSpec::make_maxpool(),   LayerSpec::make_conv(64, 3),
                  LayerSpec::make_relu(),      LayerSpec::make_dense(512),
                  LayerSpec::make_relu(),      LayerSpec::make_dense(head)};
    } else {
        throw ConfigError("unknown net profile '" + profile +
                          "' (expected tiny|full)");
    }
    if (dueling) layers.push_back(LayerSpec::make_dueling_head());
    return layers;
}

namespace {

// Runs layers [first, end), appending one output per layer to the cache.
// cur points at the input of layer `first`: the net input, or — for the
// pooled entry — the caller-supplied layer-0 output already stored in
// cache.outputs[0].
void run_layers(const QNet& net, const Tensor* cur, std::size_t first,
                ForwardCache& cache) {
    const kernels::Ops& k = kernels::ops();
    const int batch = cur->n();
    Shape3 in_shape =
        first == 0 ? net.input_shape : net.out_shapes[first - 1];
    for (std::size_t i = first; i < net.layers.size(); ++i) {
        const LayerSpec& ls = net.layers[i];
        const Shape3& os = net.out_shapes[i];
        // Every kernel below writes the whole output, so skip the zero fill.
        Tensor out = Tensor::uninitialized(batch, os.c, os.h, os.w);
        switch (ls.kind) {
            case LayerKind::conv: {
                const kernels::ConvShape s = conv_shape(ls, batch, in_shape, os);
                k.conv2d_forward(cur->data(), net.weights[i].data(),
                                 net.biases[i].data(), out.data(), s);
                break;
            }
            case LayerKind::maxpool: {
                auto& argmax = cache.pool_argmax[i];
                argmax.resize(static_cast<std::size_t>(out.size()));
                k.maxpool_forward(cur->data(), out.data(), argmax.data(),
                                  batch * in_shape.c, in_shape.h, in_shape.w,
                                  os.h, os.w, ls.kernel);
                break;
            }
            case LayerKind::relu:
                k.relu_forward(cur->data(), out.data(), cur->size());
                break;
            case LayerKind::dense:
                k.dense_forward(cur->data(), net.weights[i].data(),
                                net.biases[i].data(), out.data(), batch,
                                static_cast<int>(in_shape.count()), ls.filters);
                break;
            case LayerKind::dueling_head:
                out = dueling_combine(*cur);
                break;
        }
        cache.outputs.push_back(std::move(out));
        cur = &cache.outputs.back();
        in_shape = os;
    }
}

}  // namespace

ForwardCache forward(const QNet& net, const Tensor& input) {
    if (input.n() < 1) throw DimensionError("forward: empty batch");
    if (input.c() != net.input_shape.c || input.h() != net.input_shape.h ||
        input.w() != net.input_shape.w)
        throw DimensionError("forward: input " + input.shape_str() +
                             " does not match net input (" +
                             std::to_string(net.input_shape.c) + "," +
                             std::to_string(net.input_shape.h) + "," +
                             std::to_string(net.input_shape.w) + ")");

    ForwardCache cache;
    cache.net = &net;
    cache.param_version = net.param_version;
    // backward only reads the input values through a parametric first layer
    // (conv/dense param grads); behind a pooling front the copy is dead
    // weight, and skipping it saves tens of MB of traffic per training step.
    if (has_params(net.layers.front())) cache.input = input;
    cache.outputs.reserve(net.layers.size());
    cache.pool_argmax.resize(net.layers.size());
    run_layers(net, &input, 0, cache);
    return cache;
}

ForwardCache forward_from_pooled(const QNet& net, const Tensor& pooled) {
    if (net.layers.empty() || net.layers.front().kind != LayerKind::maxpool)
        throw UsageError(
            "forward_from_pooled: the net's first layer is not a maxpool");
    if (pooled.n() < 1) throw DimensionError("forward: empty batch");
    const Shape3& s0 = net.out_shapes[0];
    if (pooled.c() != s0.c || pooled.h() != s0.h || pooled.w() != s0.w)
        throw DimensionError("forward_from_pooled: input " +
                             pooled.shape_str() +
                             " does not match the first pool's output (" +
                             std::to_string(s0.c) + "," + std::to_string(s0.h) +
                             "," + std::to_string(s0.w) + ")");

    ForwardCache cache;
    cache.net = &net;
    cache.param_version = net.param_version;
    cache.pooled_entry = true;
    cache.outputs.reserve(net.layers.size());
    cache.pool_argmax.resize(net.layers.size());
    // The supplied tensor stands in for layer 0's output; its argmax slot
    // stays empty, which is why backward may not propagate past layer 1.
    cache.outputs.push_back(pooled);
    run_layers(net, &cache.outputs.front(), 1, cache);
    return cache;
}

Tensor dueling_combine(const Tensor& va) {
    if (va.c() < 2 || va.h() != 1 || va.w() != 1)
        throw DimensionError("dueling_combine: expected (n, 1+actions, 1, 1), got " +
                             va.shape_str());
    const int actions = va.c() - 1;
    Tensor q = Tensor::uninitialized(va.n(), actions, 1, 1);
    for (int n = 0; n < va.n(); ++n) {
        const double v = va.at(n, 0, 0, 0);
        double mean = 0.0;
        for (int a = 0; a < actions; ++a) mean += va.at(n, 1 + a, 0, 0);
        mean /= static_cast<double>(actions);
        for (int a = 0; a < actions; ++a)
            q.at(n, a, 0, 0) = v + va.at(n, 1 + a, 0, 0) - mean;
    }
    return q;
}

bool GradientBundle::all_finite() const {
    const auto tensor_finite = [](const Tensor& t) {
        for (std::int64_t i = 0; i < t.size(); ++i)
            if (!std::isfinite(t[i])) return false;
        return true;
    };
    for (const auto& t : weight_grads)
        if (!tensor_finite(t)) return false;
    for (const auto& t : bias_grads)
        if (!tensor_finite(t)) return false;
    return tensor_finite(input_grad);
}

GradientBundle backward(const QNet& net, const ForwardCache& cache,
                        const Tensor& output_grad, bool need_input_grad) {
    if (cache.net != &net || cache.param_version != net.param_version)
        throw UsageError("backward: cache is stale or from a different net");
    if (cache.outputs.size() != net.layers.size())
        throw UsageError("backward: malformed cache");
    if (cache.pooled_entry && need_input_grad)
        throw UsageError(
            "backward: a pooled-entry cache cannot produce an input gradient "
            "(the skipped pool kept no argmax); run forward() instead");
    if (!output_grad.same_shape(cache.outputs.back()))
        throw DimensionError("backward: output_grad " + output_grad.shape_str() +
                             " does not match net output " +
                             cache.outputs.back().shape_str());

    const kernels::Ops& k = kernels::ops();
    const int batch = output_grad.n();

    // Every grad kernel overwrites (or internally zeroes) its whole output,
    // so grad buffers skip the zero fill.
    const auto grad_slot = [](const Tensor& p) {
        return Tensor::uninitialized(p.n(), p.c(), p.h(), p.w());
    };

    GradientBundle bundle;
    bundle.weight_grads.reserve(net.layers.size());
    bundle.bias_grads.reserve(net.layers.size());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        bundle.weight_grads.push_back(grad_slot(net.weights[i]));
        bundle.bias_grads.push_back(grad_slot(net.biases[i]));
    }

    // Below the lowest parametric layer a gradient feeds nothing unless the
    // caller wants the input gradient itself.
    std::size_t lowest_param = 0;
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        if (has_params(net.layers[i])) {
            lowest_param = i;
            break;
        }

    Tensor g = output_grad;
    for (std::size_t idx = net.layers.size(); idx-- > 0;) {
        const LayerSpec& ls = net.layers[idx];
        const Tensor& in = idx == 0 ? cache.input : cache.outputs[idx - 1];
        const Shape3 in_shape = idx == 0
                                    ? net.input_shape
                                    : net.out_shapes[idx - 1];
        const Shape3& os = net.out_shapes[idx];
        const bool want_gin = need_input_grad || idx > lowest_param;
        if (!want_gin && !has_params(ls)) break;  // nothing parametric at or below
        Tensor gin = want_gin ? Tensor::uninitialized(batch, in_shape.c,
                                                      in_shape.h, in_shape.w)
                              : Tensor();
        switch (ls.kind) {
            case LayerKind::conv: {
                const kernels::ConvShape s = conv_shape(ls, batch, in_shape, os);
                k.conv2d_param_grad(g.data(), in.data(),
                                    bundle.weight_grads[idx].data(),
                                    bundle.bias_grads[idx].data(), s);
                if (want_gin)
                    k.conv2d_input_grad(g.data(), net.weights[idx].data(),
                                        gin.data(), s);
                break;
            }
            case LayerKind::maxpool:
                k.maxpool_backward(g.data(), cache.pool_argmax[idx].data(),
                                   gin.data(), batch * in_shape.c, in_shape.h,
                                   in_shape.w, os.h, os.w);
                break;
            case LayerKind::relu:
                k.relu_backward(g.data(), cache.outputs[idx].data(), gin.data(),
                                g.size());
                break;
            case LayerKind::dense:
                k.dense_param_grad(g.data(), in.data(),
                                   bundle.weight_grads[idx].data(),
                                   bundle.bias_grads[idx].data(), batch,
                                   static_cast<int>(in_shape.count()), ls.filters);
                if (want_gin)
                    k.dense_input_grad(g.data(), net.weights[idx].data(),
                                       gin.data(), batch,
                                       static_cast<int>(in_shape.count()),
                                       ls.filters);
                break;
            case LayerKind::dueling_head: {
                // q_a = v + adv_a - mean(adv):
                //   d/dv = sum_a g_a;  d/dadv_b = g_b - mean_a(g_a)
                const int actions = net.num_actions;
                for (int n = 0; n < batch; ++n) {
                    double gsum = 0.0;
                    for (int a = 0; a < actions; ++a) gsum += g.at(n, a, 0, 0);
                    gin.at(n, 0, 0, 0) = gsum;
                    const double gmean = gsum / static_cast<double>(actions);
                    for (int a = 0; a < actions; ++a)
                        gin.at(n, 1 + a, 0, 0) = g.at(n, a, 0, 0) - gmean;
                }
                break;
            }
        }
        if (!want_gin) break;  // nothing parametric below
        g = std::move(gin);
    }
    if (need_input_grad) bundle.input_grad = std::move(g);
    return bundle;
}

void rmsprop_step(QNet& net, const GradientBundle& grads, double lr,
                  double decay, double eps) {
    if (grads.weight_grads.size() != net.layers.size() ||
        grads.bias_grads.size() != net.layers.size())
        throw DimensionError("rmsprop_step: bundle does not match net layers");
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (!grads.weight_grads[i].same_shape(net.weights[i]) ||
            !grads.bias_grads[i].same_shape(net.biases[i]))
            throw DimensionError("rmsprop_step: gradient shape mismatch at layer " +
                                 std::to_string(i));
    }
    if (!grads.all_finite())
        throw TrainingError("rmsprop_step: non-finite gradient");

    const kernels::Ops& k = kernels::ops();
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (net.weights[i].empty()) continue;
        k.rmsprop_update(net.weights[i].data(), grads.weight_grads[i].data(),
                         net.rms_w[i].data(), net.weights[i].size(), lr, decay,
                         eps);
        k.rmsprop_update(net.biases[i].data(), grads.bias_grads[i].data(),
                         net.rms_b[i].data(), net.biases[i].size(), lr, decay,
                         eps);
    }
    ++net.param_version;
}

void save_checkpoint(const std::string& path, const QNet& net) {
    const std::string spec = spec_text(net);
    std::string buf;
    buf.append(kCheckpointMagic, 8);
    append_u32le(buf, kCheckpointVersion);
    append_u64le(buf, net.global_step);
    append_u32le(buf, static_cast<std::uint32_t>(spec.size()));
    buf += spec;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (!has_params(net.layers[i])) continue;
        for (const Tensor* t : {&net.weights[i], &net.biases[i], &net.rms_w[i],
                                &net.rms_b[i]})
            for (std::int64_t j = 0; j < t->size(); ++j) append_f64le(buf, (*t)[j]);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("checkpoint write failed: " + path);
}

QNet load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string data = ss.str();

    ByteReader r(data, path);
    if (r.bytes(8) != std::string(kCheckpointMagic, 8))
        throw IoError("not a checkpoint file: " + path);
    const std::uint32_t version = r.u32le();
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " +
                      std::to_string(version) + ": " + path);
    const std::uint64_t global_step = r.u64le();
    const std::uint32_t spec_len = r.u32le();
    QNet net = net_from_spec_text(r.bytes(spec_len), path);
    net.global_step = global_step;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (!has_params(net.layers[i])) continue;
        for (Tensor* t : {&net.weights[i], &net.biases[i], &net.rms_w[i],
                          &net.rms_b[i]})
            for (std::int64_t j = 0; j < t->size(); ++j) (*t)[j] = r.f64le();
    }
    if (!r.exhausted())
        throw IoError("checkpoint has trailing bytes: " + path);
    return net;
}

GradCheckReport compare_with_finite_differences(
    const QNet& net, const Tensor& input, const Tensor& output_grad,
    const GradientBundle& analytic, double eps, std::int64_t max_coords,
    std::uint64_t seed) {
    if (eps <= 0.0) throw UsageError("grad check: eps must be positive");
    if (max_coords < 1) throw UsageError("grad check: max_coords must be >= 1");

    QNet probe = net;  // params are perturbed in place during probing
    Tensor x = input;

    // (mutable value tensor, analytic gradient tensor) slots
    std::vector<std::pair<Tensor*, const Tensor*>> slots;
    for (std::size_t i = 0; i < probe.layers.size(); ++i) {
        if (!has_params(probe.layers[i])) continue;
        if (!analytic.weight_grads[i].same_shape(probe.weights[i]) ||
            !analytic.bias_grads[i].same_shape(probe.biases[i]))
            throw DimensionError("grad check: bundle shape mismatch at layer " +
                                 std::to_string(i));
        slots.emplace_back(&probe.weights[i], &analytic.weight_grads[i]);
        slots.emplace_back(&probe.biases[i], &analytic.bias_grads[i]);
    }
    if (!analytic.input_grad.same_shape(x))
        throw DimensionError("grad check: input gradient shape mismatch");
    slots.emplace_back(&x, &analytic.input_grad);

    std::int64_t total = 0;
    for (const auto& [value, grad] : slots) total += value->size();

    Rng rng(mix_seed(seed, 0x67726164));  // independent coordinate stream
    std::vector<std::vector<std::int64_t>> picks(slots.size());
    for (std::size_t s = 0; s < slots.size(); ++s) {
        const std::int64_t n = slots[s].first->size();
        std::int64_t want = n;
        if (total > max_coords) {
            // proportional share, but every tensor keeps a floor of coverage
            want = std::max<std::int64_t>(
                std::min<std::int64_t>(n, 4),
                max_coords * n / total);
        }
        picks[s] = sample_distinct(n, want, rng);
    }

    const ForwardCache base = forward(probe, x);
    const KinkSignature base_sig = signature_of(probe, base);

    GradCheckReport report;
    for (std::size_t s = 0; s < slots.size(); ++s) {
        Tensor& value = *slots[s].first;
        const Tensor& grad = *slots[s].second;
        for (const std::int64_t j : picks[s]) {
            const double orig = value[j];
            value[j] = orig + eps;
            const ForwardCache plus = forward(probe, x);
            value[j] = orig - eps;
            const ForwardCache minus = forward(probe, x);
            value[j] = orig;
            if (signature_of(probe, plus) != base_sig ||
                signature_of(probe, minus) != base_sig) {
                ++report.skipped;  // kink crossed; difference quotient invalid
                continue;
            }
            const double numeric =
                (loss_of(plus.qvalues(), output_grad) -
                 loss_of(minus.qvalues(), output_grad)) /
                (2.0 * eps);
            const double a = grad[j];
            const double rel = std::fabs(a - numeric) /
                               std::max({std::fabs(a), std::fabs(numeric), 1e-5});
            if (rel > report.max_rel_error) report.max_rel_error = rel;
            ++report.checked;
        }
    }
    return report;
}

void tune_allocator() {
#if defined(__GLIBC__)
    static const bool done = [] {
        // Keep per-step tensor churn on the heap: without this, buffers over
        // the default 128 KiB threshold round-trip through mmap/munmap and
        // every reuse pays a fresh zero-page fault.
        mallopt(M_MMAP_THRESHOLD, 256 << 20);
        mallopt(M_TRIM_THRESHOLD, 256 << 20);
        return true;
    }();
    (void)done;
#endif
}

GradCheckReport grad_check(const QNet& net, const Tensor& input, double eps,
                           std::int64_t max_coords, std::uint64_t seed) {
    const ForwardCache cache = forward(net, input);
    Tensor output_grad = Tensor::zeros_like(cache.qvalues());
    Rng rng(mix_seed(seed, 0x6c6f7373));
    for (std::int64_t i = 0; i < output_grad.size(); ++i)
        output_grad[i] = rng.uniform(-1.0, 1.0);
    const GradientBundle bundle = backward(net, cache, output_grad);
    return compare_with_finite_differences(net, input, output_grad, bundle, eps,
                                           max_coords, seed);
}

}  // namespace odrl::tensornet
