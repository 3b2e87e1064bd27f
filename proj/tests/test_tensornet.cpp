#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "odrl/errors.hpp"
#include "odrl/rng.hpp"
#include "odrl/tensornet.hpp"

using namespace odrl;
using namespace odrl::tensornet;

namespace {

Tensor random_tensor(int n, int c, int h, int w, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(n, c, h, w);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("make_qnet validates the layer stack") {
    // kernel larger than input
    CHECK_THROWS_AS(make_qnet({1, 4, 4}, {LayerSpec::make_conv(2, 5),
                                          LayerSpec::make_dense(2)},
                              2, 1),
                    DimensionError);
    // final shape must be (actions, 1, 1)
    CHECK_THROWS_AS(make_qnet({1, 8, 8}, {LayerSpec::make_conv(3, 3)}, 3, 1),
                    DimensionError);
    // dueling head not last
    CHECK_THROWS_AS(make_qnet({4, 1, 1}, {LayerSpec::make_dense(3),
                                          LayerSpec::make_dueling_head(),
                                          LayerSpec::make_relu()},
                              2, 1),
                    DimensionError);
    // dueling head unit count must be 1+actions
    CHECK_THROWS_AS(make_qnet({4, 1, 1}, {LayerSpec::make_dense(3),
                                          LayerSpec::make_dueling_head()},
                              3, 1),
                    DimensionError);
    CHECK_NOTHROW(make_qnet({4, 1, 1}, {LayerSpec::make_dense(4),
                                        LayerSpec::make_dueling_head()},
                            3, 1));
    // maxpool needs a window
    CHECK_THROWS_AS(make_qnet({2, 1, 1}, {LayerSpec::make_maxpool(),
                                          LayerSpec::make_dense(2)},
                              2, 1),
                    DimensionError);
}

TEST_CASE("initialization: seeded, bounded, zero biases") {
    const auto layers = profile_layers("tiny", 6, false);
    const QNet a = make_qnet({16, 72, 72}, layers, 6, 42);
    const QNet b = make_qnet({16, 72, 72}, layers, 6, 42);
    const QNet c = make_qnet({16, 72, 72}, layers, 6, 43);
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        CHECK(a.weights[i] == b.weights[i]);
        for (std::int64_t j = 0; j < a.biases[i].size(); ++j)
            CHECK(a.biases[i][j] == 0.0);
        for (std::int64_t j = 0; j < a.rms_w[i].size(); ++j)
            CHECK(a.rms_w[i][j] == 0.0);
    }
    bool any_diff = false, any_nonzero = false;
    for (std::size_t i = 0; i < a.layers.size(); ++i)
        for (std::int64_t j = 0; j < a.weights[i].size(); ++j) {
            any_diff |= a.weights[i][j] != c.weights[i][j];
            any_nonzero |= a.weights[i][j] != 0.0;
        }
    CHECK(any_diff);
    CHECK(any_nonzero);

    // per-layer bound +-sqrt(6/(fan_in+fan_out))
    const Tensor& conv_w = a.weights[1];  // first conv of the tiny profile
    const double bound = std::sqrt(6.0 / (16 * 4 + 16 * 4));
    for (std::int64_t j = 0; j < conv_w.size(); ++j) {
        CHECK(conv_w[j] < bound);
        CHECK(conv_w[j] >= -bound);
    }
}

TEST_CASE("profiles: shapes flow to (actions,1,1) on 72x72 input") {
    for (const char* name : {"tiny", "full"}) {
        for (const bool dueling : {false, true}) {
            const QNet net =
                make_qnet({16, 72, 72}, profile_layers(name, 6, dueling), 6, 1);
            CHECK(net.out_shapes.back() == Shape3{6, 1, 1});
            CHECK(net.dueling() == dueling);
            if (dueling) {
                const auto& pre = net.layers[net.layers.size() - 2];
                CHECK(pre.kind == LayerKind::dense);
                CHECK(pre.filters == 7);
            }
        }
    }
    CHECK_THROWS_AS(profile_layers("huge", 6, false), ConfigError);
    // documented tiny flow: 72 -> pool8 9 -> conv2 8 -> pool 4 -> conv3 2
    const QNet tiny = make_qnet({16, 72, 72}, profile_layers("tiny", 6, false), 6, 1);
    CHECK(tiny.out_shapes[0] == Shape3{16, 9, 9});
    CHECK(tiny.out_shapes[1] == Shape3{16, 8, 8});
    CHECK(tiny.out_shapes[3] == Shape3{16, 4, 4});
    CHECK(tiny.out_shapes[4] == Shape3{16, 2, 2});
    CHECK(tiny.out_shapes[6] == Shape3{64, 1, 1});
    // an 8x8-window pool equals three cascaded 2x2 pools over 72x72 (max is
    // associative over the same 8x8 blocks)
    const QNet cascade = make_qnet(
        {3, 72, 72},
        {LayerSpec::make_maxpool(), LayerSpec::make_maxpool(),
         LayerSpec::make_maxpool(), LayerSpec::make_dense(2)},
        2, 4);
    QNet fused = make_qnet(
        {3, 72, 72}, {LayerSpec::make_maxpool(8), LayerSpec::make_dense(2)}, 2, 4);
    fused.weights[1] = cascade.weights[3];
    fused.biases[1] = cascade.biases[3];
    ++fused.param_version;
    Rng prng(123);
    const Tensor px = random_tensor(2, 3, 72, 72, prng);
    const ForwardCache fc = forward(fused, px);
    const ForwardCache cc = forward(cascade, px);
    CHECK(fc.outputs[0] == cc.outputs[2]);
    CHECK(fc.qvalues() == cc.qvalues());
}

TEST_CASE("forward_from_pooled matches forward through a leading pool") {
    QNet net = make_qnet({3, 72, 72},
                         {LayerSpec::make_maxpool(8), LayerSpec::make_conv(8, 2),
                          LayerSpec::make_relu(), LayerSpec::make_dense(4)},
                         4, 21);
    Rng rng(22);
    const Tensor x = random_tensor(2, 3, 72, 72, rng);
    const ForwardCache plain = forward(net, x);
    // The pool's own output fed through the fast entry must reproduce the
    // remaining layers bit-for-bit, through backward too.
    const ForwardCache pooled = forward_from_pooled(net, plain.outputs[0]);
    CHECK(pooled.qvalues() == plain.qvalues());

    const Tensor og = random_tensor(2, 4, 1, 1, rng);
    const GradientBundle gp = backward(net, plain, og, false);
    const GradientBundle gq = backward(net, pooled, og, false);
    for (std::size_t i = 0; i < gp.weight_grads.size(); ++i) {
        CHECK(gq.weight_grads[i] == gp.weight_grads[i]);
        CHECK(gq.bias_grads[i] == gp.bias_grads[i]);
    }

    // The skipped pool kept no argmax, so input gradients are off the table.
    CHECK_THROWS_AS(backward(net, pooled, og, true), UsageError);
    // Wrong pooled shape and a net that does not start with a pool.
    CHECK_THROWS_AS(forward_from_pooled(net, x), DimensionError);
    const QNet convnet =
        make_qnet({1, 6, 6}, {LayerSpec::make_conv(2, 3), LayerSpec::make_dense(2)},
                  2, 5);
    CHECK_THROWS_AS(forward_from_pooled(convnet, random_tensor(1, 2, 4, 4, rng)),
                    UsageError);
}

TEST_CASE("forward: zero parameters give zero q-values") {
    QNet net = make_qnet({3, 12, 12},
                         {LayerSpec::make_conv(4, 3), LayerSpec::make_relu(),
                          LayerSpec::make_maxpool(), LayerSpec::make_dense(4)},
                         4, 9);
    for (auto& w : net.weights) w.fill(0.0);
    Rng rng(3);
    const Tensor x = random_tensor(2, 3, 12, 12, rng);
    const ForwardCache cache = forward(net, x);
    for (std::int64_t i = 0; i < cache.qvalues().size(); ++i)
        CHECK(cache.qvalues()[i] == 0.0);
}

TEST_CASE("forward: 1x1 identity conv passes the input through exactly") {
    QNet net = make_qnet({1, 4, 4},
                         {LayerSpec::make_conv(1, 1), LayerSpec::make_dense(2)},
                         2, 7);
    net.weights[0][0] = 1.0;  // identity kernel; bias already 0
    Rng rng(11);
    const Tensor x = random_tensor(3, 1, 4, 4, rng);
    const ForwardCache cache = forward(net, x);
    CHECK(cache.outputs[0] == x);
}

TEST_CASE("forward: hand-computed two-layer fixture") {
    // input 1..16 row-major, conv 3x3 diag-ones bias -21, relu, dense(2)
    QNet net = make_qnet({1, 4, 4},
                         {LayerSpec::make_conv(1, 3), LayerSpec::make_relu(),
                          LayerSpec::make_dense(2)},
                         2, 1);
    Tensor x(1, 1, 4, 4);
    for (int i = 0; i < 16; ++i) x[i] = static_cast<double>(i + 1);
    net.weights[0].fill(0.0);
    net.weights[0].at(0, 0, 0, 0) = 1.0;
    net.weights[0].at(0, 0, 1, 1) = 1.0;
    net.weights[0].at(0, 0, 2, 2) = 1.0;
    net.biases[0][0] = -21.0;
    // conv outputs: (1+6+11, 2+7+12, 5+10+15, 6+11+16) - 21 = (-3, 0, 9, 12)
    // relu: (0, 0, 9, 12)
    const double w1[2][4] = {{1.0, 1.0, 1.0, 1.0}, {0.5, 0.5, -1.0, 1.0}};
    for (int o = 0; o < 2; ++o)
        for (int i = 0; i < 4; ++i) net.weights[2].at(o, i, 0, 0) = w1[o][i];
    net.biases[2][0] = 0.5;
    net.biases[2][1] = -1.0;
    const ForwardCache cache = forward(net, x);
    CHECK(cache.outputs[0].at(0, 0, 0, 0) == -3.0);
    CHECK(cache.outputs[0].at(0, 0, 0, 1) == 0.0);
    CHECK(cache.outputs[0].at(0, 0, 1, 0) == 9.0);
    CHECK(cache.outputs[0].at(0, 0, 1, 1) == 12.0);
    CHECK(cache.q(0, 0) == 21.5);  // 0+0+9+12 + 0.5
    CHECK(cache.q(0, 1) == 2.0);   // 0+0-9+12 - 1.0
}

TEST_CASE("forward: maxpool drops trailing odd row and column") {
    QNet net = make_qnet({1, 5, 5},
                         {LayerSpec::make_maxpool(), LayerSpec::make_dense(1)},
                         1, 1);
    CHECK(net.out_shapes[0] == Shape3{1, 2, 2});
    Tensor x(1, 1, 5, 5);
    for (int i = 0; i < 25; ++i) x[i] = static_cast<double>(i);
    // row 4 and column 4 never participate
    const ForwardCache cache = forward(net, x);
    CHECK(cache.outputs[0].at(0, 0, 0, 0) == 6.0);
    CHECK(cache.outputs[0].at(0, 0, 0, 1) == 8.0);
    CHECK(cache.outputs[0].at(0, 0, 1, 0) == 16.0);
    CHECK(cache.outputs[0].at(0, 0, 1, 1) == 18.0);
}

TEST_CASE("forward: shape mismatch and bit-reproducibility") {
    const QNet net = make_qnet({2, 8, 8},
                               {LayerSpec::make_conv(3, 3), LayerSpec::make_relu(),
                                LayerSpec::make_dense(4)},
                               4, 5);
    Rng rng(2);
    const Tensor bad = random_tensor(1, 2, 8, 7, rng);
    CHECK_THROWS_AS(forward(net, bad), DimensionError);
    const Tensor x = random_tensor(2, 2, 8, 8, rng);
    const ForwardCache a = forward(net, x);
    const ForwardCache b = forward(net, x);
    CHECK(a.qvalues() == b.qvalues());
}

TEST_CASE("dueling_combine: fixtures, shift invariance, argmax preservation") {
    Tensor va(1, 4, 1, 1);
    va[0] = 0.0;
    va[1] = va[2] = va[3] = 1.0;
    Tensor q = dueling_combine(va);
    CHECK(q.at(0, 0, 0, 0) == 0.0);
    CHECK(q.at(0, 1, 0, 0) == 0.0);
    CHECK(q.at(0, 2, 0, 0) == 0.0);

    va[0] = 5.0;
    va[1] = 2.0;
    va[2] = -2.0;
    va[3] = 0.0;
    q = dueling_combine(va);
    CHECK(q.at(0, 0, 0, 0) == 7.0);
    CHECK(q.at(0, 1, 0, 0) == 3.0);
    CHECK(q.at(0, 2, 0, 0) == 5.0);

    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor draw(1, 6, 1, 1);
        for (int i = 0; i < 6; ++i) draw[i] = rng.uniform(-3.0, 3.0);
        const Tensor base = dueling_combine(draw);
        int best_q = 0, best_a = 0;
        for (int a = 1; a < 5; ++a) {
            if (base.at(0, a, 0, 0) > base.at(0, best_q, 0, 0)) best_q = a;
            if (draw[1 + a] > draw[1 + best_a]) best_a = a;
        }
        CHECK(best_q == best_a);

        // adding a constant to all advantages leaves Q unchanged (+-1e-12)
        Tensor shifted = draw;
        for (int a = 0; a < 5; ++a) shifted[1 + a] += 0.7;
        const Tensor q2 = dueling_combine(shifted);
        for (int a = 0; a < 5; ++a)
            CHECK(std::fabs(q2.at(0, a, 0, 0) - base.at(0, a, 0, 0)) < 1e-12);
    }

    CHECK_THROWS_AS(dueling_combine(Tensor(1, 1, 1, 1)), DimensionError);
}

TEST_CASE("backward: zero output_grad gives a zero bundle") {
    const QNet net = make_qnet({2, 10, 10},
                               {LayerSpec::make_conv(3, 3), LayerSpec::make_relu(),
                                LayerSpec::make_maxpool(), LayerSpec::make_dense(5),
                                LayerSpec::make_relu(), LayerSpec::make_dense(3)},
                               3, 21);
    Rng rng(4);
    const Tensor x = random_tensor(2, 2, 10, 10, rng);
    const ForwardCache cache = forward(net, x);
    const GradientBundle g = backward(net, cache, Tensor(2, 3, 1, 1));
    for (const auto& t : g.weight_grads)
        for (std::int64_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);
    for (const auto& t : g.bias_grads)
        for (std::int64_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);
    for (std::int64_t i = 0; i < g.input_grad.size(); ++i)
        CHECK(g.input_grad[i] == 0.0);
}

TEST_CASE("backward: dense closed form gw = g x^T, gin = W^T g") {
    const QNet net = make_qnet({3, 1, 1}, {LayerSpec::make_dense(2)}, 2, 8);
    Tensor x(1, 3, 1, 1);
    x[0] = 0.5;
    x[1] = -1.25;
    x[2] = 2.0;
    const ForwardCache cache = forward(net, x);
    Tensor g(1, 2, 1, 1);
    g[0] = 2.0;
    g[1] = -3.0;
    const GradientBundle bundle = backward(net, cache, g);
    for (int o = 0; o < 2; ++o) {
        for (int i = 0; i < 3; ++i)
            CHECK(bundle.weight_grads[0].at(o, i, 0, 0) == g[o] * x[i]);
        CHECK(bundle.bias_grads[0][o] == g[o]);
    }
    for (int i = 0; i < 3; ++i) {
        const double want = g[0] * net.weights[0].at(0, i, 0, 0) +
                            g[1] * net.weights[0].at(1, i, 0, 0);
        CHECK(bundle.input_grad[i] == doctest::Approx(want).epsilon(1e-15));
    }
}

TEST_CASE("backward: stale or foreign cache is rejected") {
    QNet net = make_qnet({2, 1, 1}, {LayerSpec::make_dense(2)}, 2, 3);
    const QNet other = make_qnet({2, 1, 1}, {LayerSpec::make_dense(2)}, 2, 4);
    Tensor x(1, 2, 1, 1);
    x[0] = 1.0;
    const ForwardCache cache = forward(net, x);
    Tensor g(1, 2, 1, 1);
    g[0] = 1.0;
    CHECK_THROWS_AS(backward(other, cache, g), UsageError);

    GradientBundle bundle = backward(net, cache, g);
    rmsprop_step(net, bundle, 1e-3, 0.9, 1e-8);  // bumps param_version
    CHECK_THROWS_AS(backward(net, cache, g), UsageError);
    const ForwardCache fresh = forward(net, x);
    CHECK_NOTHROW(backward(net, fresh, g));
}

TEST_CASE("rmsprop: zero gradient leaves parameters untouched") {
    QNet net = make_qnet({2, 1, 1}, {LayerSpec::make_dense(2)}, 2, 3);
    const Tensor before = net.weights[0];
    GradientBundle g;
    g.weight_grads.push_back(Tensor::zeros_like(net.weights[0]));
    g.bias_grads.push_back(Tensor::zeros_like(net.biases[0]));
    g.input_grad = Tensor(1, 2, 1, 1);
    rmsprop_step(net, g, 0.01, 0.9, 1e-8);
    CHECK(net.weights[0] == before);
    CHECK(net.param_version == 1);
}

TEST_CASE("rmsprop: first-step hand value and non-finite rejection") {
    QNet net = make_qnet({1, 1, 1}, {LayerSpec::make_dense(1)}, 1, 3);
    const double w0 = net.weights[0][0];
    GradientBundle g;
    g.weight_grads.push_back(Tensor(1, 1, 1, 1));
    g.bias_grads.push_back(Tensor(1, 1, 1, 1));
    g.input_grad = Tensor(1, 1, 1, 1);
    g.weight_grads[0][0] = 1.0;
    rmsprop_step(net, g, 0.01, 0.9, 1e-8);
    // delta = -0.01 * 1 / sqrt(0.1 + 1e-8)
    CHECK(net.weights[0][0] - w0 ==
          doctest::Approx(-0.0316227).epsilon(1e-5));

    g.weight_grads[0][0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(rmsprop_step(net, g, 0.01, 0.9, 1e-8), TrainingError);
    g.weight_grads[0][0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(rmsprop_step(net, g, 0.01, 0.9, 1e-8), TrainingError);
}

TEST_CASE("rmsprop: drives w^2 toward zero within 500 steps") {
    QNet net = make_qnet({1, 1, 1}, {LayerSpec::make_dense(1)}, 1, 3);
    net.weights[0][0] = 1.0;
    GradientBundle g;
    g.weight_grads.push_back(Tensor(1, 1, 1, 1));
    g.bias_grads.push_back(Tensor(1, 1, 1, 1));
    g.input_grad = Tensor(1, 1, 1, 1);
    bool reached = false;
    for (int step = 0; step < 500 && !reached; ++step) {
        g.weight_grads[0][0] = 2.0 * net.weights[0][0];
        rmsprop_step(net, g, 2.5e-3, 0.95, 1e-8);
        reached = std::fabs(net.weights[0][0]) < 1e-3;
    }
    CHECK(reached);
}

TEST_CASE("grad check: linear net is exact up to rounding (< 1e-9)") {
    QNet net = make_qnet({4, 1, 1}, {LayerSpec::make_dense(1)}, 1, 0);
    Rng rng(5);
    for (int i = 0; i < 4; ++i)
        net.weights[0].at(0, i, 0, 0) = rng.uniform(0.5, 1.0);
    net.biases[0][0] = 0.25;
    Tensor x(1, 4, 1, 1);
    for (int i = 0; i < 4; ++i) x[i] = rng.uniform(0.5, 1.0);
    // a larger eps is still exact for a linear map and shrinks the rounding
    // noise of the difference quotient
    const GradCheckReport report = grad_check(net, x, 1e-3, 1 << 20, 77);
    CHECK(report.checked == 9);  // 4 weights + 1 bias + 4 inputs
    CHECK(report.skipped == 0);
    CHECK(report.max_rel_error < 1e-9);
}

TEST_CASE("grad check: conv/pool/relu/dense stack stays under 1e-4") {
    const QNet net = make_qnet({3, 12, 12},
                               {LayerSpec::make_conv(4, 3), LayerSpec::make_relu(),
                                LayerSpec::make_maxpool(), LayerSpec::make_conv(6, 3),
                                LayerSpec::make_relu(), LayerSpec::make_dense(10),
                                LayerSpec::make_relu(), LayerSpec::make_dense(3)},
                               3, 31);
    Rng rng(6);
    const Tensor x = random_tensor(2, 3, 12, 12, rng);
    const GradCheckReport report = grad_check(net, x, 1e-5, 600, 13);
    INFO("max rel error ", report.max_rel_error, " checked ", report.checked,
         " skipped ", report.skipped);
    CHECK(report.checked > 400);
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("grad check: dueling head gradients verify too") {
    const QNet net = make_qnet({5, 1, 1},
                               {LayerSpec::make_dense(8), LayerSpec::make_relu(),
                                LayerSpec::make_dense(4),
                                LayerSpec::make_dueling_head()},
                               3, 77);
    Rng rng(8);
    const Tensor x = random_tensor(2, 5, 1, 1, rng);
    const GradCheckReport report = grad_check(net, x, 1e-5, 1 << 20, 3);
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("grad check: corrupted dense gradient is caught (> 1e-2)") {
    const QNet net = make_qnet({4, 1, 1},
                               {LayerSpec::make_dense(4), LayerSpec::make_relu(),
                                LayerSpec::make_dense(2)},
                               2, 15);
    Tensor x(1, 4, 1, 1);
    x[0] = 0.1;
    x[1] = 0.35;
    x[2] = -0.4;
    x[3] = 0.8;
    const ForwardCache cache = forward(net, x);
    Tensor g(1, 2, 1, 1);
    g[0] = 1.0;
    g[1] = -0.5;
    GradientBundle bundle = backward(net, cache, g);

    const GradCheckReport clean = compare_with_finite_differences(
        net, x, g, bundle, 1e-5, 1 << 20, 9);
    CHECK(clean.max_rel_error < 1e-4);

    // transpose the square first-layer weight gradient
    Tensor& gw = bundle.weight_grads[0];
    for (int o = 0; o < 4; ++o)
        for (int i = o + 1; i < 4; ++i)
            std::swap(gw.at(o, i, 0, 0), gw.at(i, o, 0, 0));
    const GradCheckReport corrupt = compare_with_finite_differences(
        net, x, g, bundle, 1e-5, 1 << 20, 9);
    CHECK(corrupt.max_rel_error > 1e-2);
}

TEST_CASE("checkpoint: round trip is lossless and byte-identical") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "odrl_ckpt_test";
    fs::create_directories(dir);
    const std::string p1 = (dir / "a.bin").string();
    const std::string p2 = (dir / "b.bin").string();

    QNet net = make_qnet({16, 72, 72}, profile_layers("tiny", 6, true), 6, 99);
    net.global_step = 123456789;
    // non-trivial optimizer state
    Rng rng(31);
    const Tensor x = random_tensor(1, 16, 72, 72, rng, 0.0, 1.0);
    const ForwardCache cache = forward(net, x);
    Tensor g = Tensor::zeros_like(cache.qvalues());
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] = rng.uniform(-1.0, 1.0);
    rmsprop_step(net, backward(net, cache, g), 2.5e-4, 0.95, 1e-8);

    save_checkpoint(p1, net);
    const QNet back = load_checkpoint(p1);
    CHECK(back.global_step == net.global_step);
    CHECK(back.num_actions == net.num_actions);
    CHECK(back.input_shape == net.input_shape);
    CHECK(back.layers == net.layers);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        CHECK(back.weights[i] == net.weights[i]);
        CHECK(back.biases[i] == net.biases[i]);
        CHECK(back.rms_w[i] == net.rms_w[i]);
        CHECK(back.rms_b[i] == net.rms_b[i]);
    }
    save_checkpoint(p2, back);
    CHECK(slurp(p1) == slurp(p2));

    // loaded net computes identically
    const ForwardCache c2 = forward(back, x);
    CHECK(c2.qvalues() == forward(net, x).qvalues());
    fs::remove_all(dir);
}

TEST_CASE("checkpoint: malformed files are rejected") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "odrl_ckpt_bad";
    fs::create_directories(dir);
    const std::string good = (dir / "good.bin").string();
    const QNet net = make_qnet({2, 1, 1}, {LayerSpec::make_dense(2)}, 2, 1);
    save_checkpoint(good, net);
    const std::string blob = slurp(good);

    const auto write_variant = [&](const std::string& name, std::string bytes) {
        const std::string p = (dir / name).string();
        std::ofstream out(p, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        return p;
    };
    CHECK_THROWS_AS(load_checkpoint((dir / "missing.bin").string()), IoError);
    std::string bad_magic = blob;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(load_checkpoint(write_variant("magic.bin", bad_magic)), IoError);
    std::string bad_version = blob;
    bad_version[8] = 9;
    CHECK_THROWS_AS(load_checkpoint(write_variant("ver.bin", bad_version)), IoError);
    CHECK_THROWS_AS(
        load_checkpoint(write_variant("trunc.bin", blob.substr(0, blob.size() - 3))),
        IoError);
    CHECK_THROWS_AS(
        load_checkpoint(write_variant("trail.bin", blob + "xy")), IoError);
    fs::remove_all(dir);
}

TEST_CASE("dueling forward equals manual combine of the pre-head stack") {
    const QNet net = make_qnet({6, 1, 1},
                               {LayerSpec::make_dense(5), LayerSpec::make_relu(),
                                LayerSpec::make_dense(4),
                                LayerSpec::make_dueling_head()},
                               3, 55);
    Rng rng(9);
    const Tensor x = random_tensor(3, 6, 1, 1, rng);
    const ForwardCache cache = forward(net, x);
    const Tensor manual = dueling_combine(cache.outputs[cache.outputs.size() - 2]);
    CHECK(cache.qvalues() == manual);
}
