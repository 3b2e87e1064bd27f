#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "odrl/envsim.hpp"
#include "odrl/errors.hpp"
#include "odrl/image_io.hpp"
#include "odrl/rng.hpp"
#include "odrl/vision.hpp"

using namespace odrl;
using namespace odrl::vision;

namespace {

using Planes = std::vector<std::vector<std::uint8_t>>;

Planes random_planes(int channels, int h, int w, Rng& rng, int maxval = 255) {
    Planes planes(static_cast<std::size_t>(channels));
    for (auto& p : planes) {
        p.resize(static_cast<std::size_t>(h) * w);
        for (auto& b : p)
            b = static_cast<std::uint8_t>(rng.uniform_int(static_cast<std::uint32_t>(maxval + 1)));
    }
    return planes;
}

// Brute-force sliding-window oracle, written directly from the matching
// definitions: per window, per channel, literal pixel loops. Mean-subtracted
// quantities are evaluated exactly by scaling with n = w*h (so n*T - sumT is
// an integer), keeping all arithmetic in int64 until the final documented
// roundings. Independent of the library's window-sum/dot-map machinery.
double oracle_score(const Planes& src, int H, int W, const Planes& tpl, int h,
                    int w, int y, int x, MatchMethod method, bool normalized) {
    const int channels = static_cast<int>(src.size());
    const std::int64_t n = static_cast<std::int64_t>(w) * h;

    std::int64_t sqdiff = 0, dot = 0, sum_stt = 0, sum_sii = 0;
    std::int64_t m_scaled = 0, dt = 0, di = 0;  // ccoeff terms, scaled by n
    for (int c = 0; c < channels; ++c) {
        std::int64_t st = 0, si = 0;
        for (int ty = 0; ty < h; ++ty)
            for (int tx = 0; tx < w; ++tx) {
                st += tpl[c][ty * w + tx];
                si += src[c][(y + ty) * W + (x + tx)];
            }
        std::int64_t m_c = 0, dt_c = 0, di_c = 0;
        for (int ty = 0; ty < h; ++ty)
            for (int tx = 0; tx < w; ++tx) {
                const std::int64_t t = tpl[c][ty * w + tx];
                const std::int64_t i = src[c][(y + ty) * W + (x + tx)];
                sqdiff += (t - i) * (t - i);
                dot += t * i;
                sum_stt += t * t;
                sum_sii += i * i;
                const std::int64_t tc = n * t - st;  // n * (T - meanT)
                const std::int64_t ic = n * i - si;
                m_c += tc * ic;
                dt_c += tc * tc;
                di_c += ic * ic;
            }
        // every *_c is divisible by n (sum of n*(...) cross terms)
        m_scaled += m_c / n;
        dt += dt_c / n;
        di += di_c / n;
    }

    switch (method) {
        case MatchMethod::sqdiff: {
            const double r = static_cast<double>(sqdiff);
            if (!normalized) return r;
            const double denom = std::sqrt(static_cast<double>(sum_stt) *
                                           static_cast<double>(sum_sii));
            return denom > 0.0 ? r / denom : 0.0;
        }
        case MatchMethod::ccorr: {
            const double r = static_cast<double>(dot);
            if (!normalized) return r;
            const double denom = std::sqrt(static_cast<double>(sum_stt) *
                                           static_cast<double>(sum_sii));
            return denom > 0.0 ? r / denom : 0.0;
        }
        case MatchMethod::ccoeff: {
            const double m = static_cast<double>(m_scaled);
            if (!normalized) return m / static_cast<double>(n);
            const double denom =
                std::sqrt(static_cast<double>(dt) * static_cast<double>(di));
            return denom > 0.0 ? m / denom : 0.0;
        }
    }
    return 0.0;
}

Frame frame_from_planes(const Planes& planes, int h, int w) {
    Frame f(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            f.set(y, x, {planes[0][i], planes[1][i], planes[2][i]});
        }
    return f;
}

void blit_sprite(Frame& f, const envsim::SpriteBitmap& sprite, int x, int y) {
    for (int sy = 0; sy < sprite.h; ++sy)
        for (int sx = 0; sx < sprite.w; ++sx) {
            const std::uint8_t* p =
                sprite.pixels.data() + (static_cast<std::size_t>(sy) * sprite.w + sx) * 3;
            f.set(y + sy, x + sx, {p[0], p[1], p[2]});
        }
}

}  // namespace

TEST_CASE("match equals the brute-force oracle on all six combinations") {
    Rng rng(101);
    for (int trial = 0; trial < 8; ++trial) {
        const int H = 12, W = 12, h = 4, w = 4;
        const int channels = trial % 2 == 0 ? 3 : 1;
        const Planes src = random_planes(channels, H, W, rng);
        const Planes tpl = random_planes(channels, h, w, rng);
        for (MatchMethod m :
             {MatchMethod::sqdiff, MatchMethod::ccorr, MatchMethod::ccoeff})
            for (bool norm : {false, true}) {
                const ScoreMap map = match_planes(src, H, W, tpl, h, w, m, norm);
                REQUIRE(map.height == H - h + 1);
                REQUIRE(map.width == W - w + 1);
                for (int y = 0; y < map.height; ++y)
                    for (int x = 0; x < map.width; ++x) {
                        const double want =
                            oracle_score(src, H, W, tpl, h, w, y, x, m, norm);
                        REQUIRE(map.at(y, x) == want);  // exact, not approx
                    }
            }
    }
}

TEST_CASE("exact template copy scores 1.0 under normalized ccoeff") {
    Rng rng(7);
    const auto sprite = envsim::sprites(envsim::EnvId::minipac, 8)[1];
    Frame f(20, 24);
    f.fill(envsim::background_color(envsim::EnvId::minipac));
    blit_sprite(f, sprite, 9, 5);
    const Template tpl = template_from_sprite(sprite, 0.95);
    const ScoreMap map = match(f, tpl, MatchMethod::ccoeff, true);
    CHECK(map.at(5, 9) == doctest::Approx(1.0).epsilon(1e-9));
    // and 0 under sqdiff (exact) / normalized sqdiff
    CHECK(match(f, tpl, MatchMethod::sqdiff, false).at(5, 9) == 0.0);
    CHECK(match(f, tpl, MatchMethod::sqdiff, true).at(5, 9) == 0.0);
}

TEST_CASE("identical source and template: 1x1 sqdiff map of 0") {
    Rng rng(3);
    const Planes img = random_planes(3, 6, 6, rng);
    const ScoreMap map = match_planes(img, 6, 6, img, 6, 6, MatchMethod::sqdiff, false);
    CHECK(map.height == 1);
    CHECK(map.width == 1);
    CHECK(map.at(0, 0) == 0.0);
}

TEST_CASE("template larger than source is a dimension error") {
    Rng rng(4);
    const Planes src = random_planes(3, 4, 4, rng);
    const Planes tpl = random_planes(3, 5, 5, rng);
    CHECK_THROWS_AS(match_planes(src, 4, 4, tpl, 5, 5, MatchMethod::ccorr, false),
                    DimensionError);
}

TEST_CASE("normalized ccoeff scores stay in [-1, 1]") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const Planes src = random_planes(3, 16, 16, rng);
        const Planes tpl = random_planes(3, 5, 5, rng);
        const ScoreMap map = match_planes(src, 16, 16, tpl, 5, 5,
                                          MatchMethod::ccoeff, true);
        for (const double s : map.scores) {
            CHECK(s <= 1.0 + 1e-9);
            CHECK(s >= -1.0 - 1e-9);
        }
    }
}

TEST_CASE("brightness invariance of normalized ccoeff") {
    Rng rng(13);
    const int H = 14, W = 14;
    Planes src = random_planes(3, H, W, rng, 200);  // headroom for +40
    const Planes tpl = random_planes(3, 4, 4, rng);
    const ScoreMap base = match_planes(src, H, W, tpl, 4, 4, MatchMethod::ccoeff, true);
    Planes brighter = src;
    for (auto& plane : brighter)
        for (auto& b : plane) b = static_cast<std::uint8_t>(b + 40);
    const ScoreMap shifted =
        match_planes(brighter, H, W, tpl, 4, 4, MatchMethod::ccoeff, true);
    for (std::size_t i = 0; i < base.scores.size(); ++i)
        CHECK(std::fabs(base.scores[i] - shifted.scores[i]) < 1e-6);
}

TEST_CASE("shift equivariance of the score argmax") {
    Rng rng(17);
    const auto sprite = envsim::sprites(envsim::EnvId::minicross, 8)[1];
    const Template tpl = template_from_sprite(sprite, 0.9);
    for (const auto [dx, dy] : {std::pair{3, 2}, std::pair{7, 5}}) {
        Frame f(24, 24);
        f.fill(envsim::background_color(envsim::EnvId::minicross));
        blit_sprite(f, sprite, 4 + dx, 4 + dy);
        const ScoreMap map = match(f, tpl, MatchMethod::ccoeff, true);
        int best_x = -1, best_y = -1;
        double best = -2.0;
        for (int y = 0; y < map.height; ++y)
            for (int x = 0; x < map.width; ++x)
                if (map.at(y, x) > best) {
                    best = map.at(y, x);
                    best_x = x;
                    best_y = y;
                }
        CHECK(best_x == 4 + dx);
        CHECK(best_y == 4 + dy);
    }
}

TEST_CASE("constant-patch positions score 0 under normalized ccoeff") {
    const auto sprite = envsim::sprites(envsim::EnvId::minipac, 8)[0];
    Frame f(20, 20);
    f.fill({77, 77, 77});
    blit_sprite(f, sprite, 10, 10);
    const Template tpl = template_from_sprite(sprite, 0.95);
    const ScoreMap map = match(f, tpl, MatchMethod::ccoeff, true);
    CHECK(map.at(0, 0) == 0.0);  // pure background window
}

TEST_CASE("template validation rejects constant and malformed patches") {
    Template tpl;
    tpl.object_type = 0;
    tpl.name = "flat";
    tpl.w = 4;
    tpl.h = 4;
    tpl.pixels.assign(4 * 4 * 3, 128);
    CHECK_THROWS_AS(validate(tpl), ConfigError);
    tpl.pixels[0] = 7;
    CHECK_NOTHROW(validate(tpl));
    tpl.pixels.pop_back();
    CHECK_THROWS_AS(validate(tpl), ConfigError);
    tpl.w = 0;
    CHECK_THROWS_AS(validate(tpl), ConfigError);
}

TEST_CASE("detect_objects matches ground truth on fresh frames (both envs)") {
    for (envsim::EnvId env : {envsim::EnvId::minipac, envsim::EnvId::minicross}) {
        const auto templates = builtin_templates(env, 8, 0.95);
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            envsim::EnvConfig cfg;
            cfg.env_id = env;
            cfg.seed = seed;
            envsim::EnvState st = envsim::reset(cfg);
            const Frame f = envsim::render(st);
            const auto dets = detect_objects(f, templates);
            const auto truth = envsim::ground_truth(st);
            REQUIRE(dets.size() == truth.size());
            for (std::size_t i = 0; i < dets.size(); ++i) {
                CHECK(dets[i].object_type == truth[i].object_type);
                CHECK(dets[i].x == truth[i].box.x);
                CHECK(dets[i].y == truth[i].box.y);
                CHECK(dets[i].score == doctest::Approx(1.0).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("detect_objects: empty frame yields no detections") {
    Frame f(72, 72);
    f.fill(envsim::background_color(envsim::EnvId::minipac));
    const auto templates = builtin_templates(envsim::EnvId::minipac, 8, 0.95);
    CHECK(detect_objects(f, templates).empty());
    CHECK_THROWS_AS(detect_objects(f, {}), UsageError);
}

TEST_CASE("detect_objects: two sprites side by side give two detections") {
    const auto sprite = envsim::sprites(envsim::EnvId::minipac, 8)[1];
    Frame f(20, 30);
    f.fill(envsim::background_color(envsim::EnvId::minipac));
    blit_sprite(f, sprite, 6, 7);
    blit_sprite(f, sprite, 12, 7);  // adjacent, boxes touch but do not overlap
    const auto templates = builtin_templates(envsim::EnvId::minipac, 8, 0.95);
    const auto dets = detect_objects(f, templates);
    REQUIRE(dets.size() == 2);
    CHECK(dets[0].object_type == 1);
    CHECK(dets[1].object_type == 1);
    CHECK(dets[0].x == 6);
    CHECK(dets[1].x == 12);
}

TEST_CASE("cross-type confusion stays below the 0.95 threshold") {
    // Each type's template must not fire anywhere on a frame containing
    // only sprites of OTHER types. This is what makes precision exactly 1
    // on clean frames.
    for (envsim::EnvId env : {envsim::EnvId::minipac, envsim::EnvId::minicross}) {
        const auto all = envsim::sprites(env, 8);
        for (const auto& target : all) {
            Frame f(30, 30 * static_cast<int>(all.size()));
            f.fill(envsim::background_color(env));
            int placed = 0;
            for (const auto& other : all) {
                if (other.object_type == target.object_type) continue;
                blit_sprite(f, other, 30 * placed + 10, 10);
                ++placed;
            }
            const Template tpl = template_from_sprite(target, 0.95);
            const ScoreMap map = match(f, tpl, MatchMethod::ccoeff, true);
            double best = -2.0;
            for (const double s : map.scores) best = std::max(best, s);
            INFO("env ", envsim::env_name(env), " template ", target.name,
                 " best cross score ", best);
            CHECK(best < 0.95);
        }
    }
}

TEST_CASE("object channels: zero detections, single box, type range") {
    const ObjectChannels zero = build_object_channels(10, 12, {}, 3);
    CHECK(zero.k == 3);
    for (const auto b : zero.planes) CHECK(b == 0);

    std::vector<Detection> dets{{2, 3, 4, 6, 6, 1.0}};
    const ObjectChannels oc = build_object_channels(20, 20, dets, 4);
    std::int64_t sums[4] = {0, 0, 0, 0};
    for (int c = 0; c < 4; ++c)
        for (int y = 0; y < 20; ++y)
            for (int x = 0; x < 20; ++x) sums[c] += oc.at(c, y, x);
    CHECK(sums[0] == 0);
    CHECK(sums[1] == 0);
    CHECK(sums[2] == 36);
    CHECK(sums[3] == 0);
    CHECK(oc.at(2, 4, 3) == 1);
    CHECK(oc.at(2, 9, 8) == 1);
    CHECK(oc.at(2, 10, 8) == 0);

    std::vector<Detection> bad{{4, 0, 0, 6, 6, 1.0}};
    CHECK_THROWS_AS(build_object_channels(20, 20, bad, 4), DimensionError);
}

TEST_CASE("object channels: union of overlapping boxes stays binary") {
    std::vector<Detection> dets{{0, 2, 2, 6, 6, 1.0}, {0, 4, 4, 6, 6, 0.99}};
    const ObjectChannels oc = build_object_channels(16, 16, dets, 1);
    // channel soundness: 1 exactly inside the union
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            const bool in_a = x >= 2 && x < 8 && y >= 2 && y < 8;
            const bool in_b = x >= 4 && x < 10 && y >= 4 && y < 10;
            CHECK(oc.at(0, y, x) == ((in_a || in_b) ? 1 : 0));
        }
}

TEST_CASE("channels from detections equal channels from ground truth") {
    const auto templates = builtin_templates(envsim::EnvId::minipac, 8, 0.95);
    for (std::uint64_t seed = 50; seed < 60; ++seed) {
        envsim::EnvConfig cfg;
        cfg.seed = seed;
        envsim::EnvState st = envsim::reset(cfg);
        const Frame f = envsim::render(st);
        const auto dets = detect_objects(f, templates);
        std::vector<Detection> truth_dets;
        for (const auto& gt : envsim::ground_truth(st))
            truth_dets.push_back(
                {gt.object_type, gt.box.x, gt.box.y, gt.box.w, gt.box.h, 1.0});
        const auto a = build_object_channels(f.height, f.width, dets, 4);
        const auto b = build_object_channels(f.height, f.width, truth_dets, 4);
        CHECK(a == b);
    }
}

TEST_CASE("evaluate_detections: perfect, partial, empty") {
    std::vector<envsim::GroundTruthBox> truth{
        {0, {4, 4, 6, 6}}, {1, {20, 8, 6, 6}}, {1, {40, 8, 6, 6}}};
    std::vector<Detection> perfect{{0, 4, 4, 6, 6, 1.0},
                                   {1, 20, 8, 6, 6, 1.0},
                                   {1, 40, 8, 6, 6, 1.0}};
    DetectionMetrics m = evaluate_detections(perfect, truth);
    CHECK(m.tp == 3);
    CHECK(m.fp == 0);
    CHECK(m.fn == 0);
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.f1 == 1.0);

    // one detection missing, one at a wrong place, one wrong type
    std::vector<Detection> partial{{0, 4, 4, 6, 6, 1.0},
                                   {1, 60, 40, 6, 6, 0.97},
                                   {0, 20, 8, 6, 6, 0.96}};
    m = evaluate_detections(partial, truth);
    CHECK(m.tp == 1);
    CHECK(m.fp == 2);
    CHECK(m.fn == 2);

    m = evaluate_detections({}, truth);
    CHECK(m.precision == 0.0);
    CHECK(m.recall == 0.0);
    CHECK(m.f1 == 0.0);

    m = evaluate_detections({}, {});
    CHECK(m.f1 == 0.0);
}

TEST_CASE("evaluate_detections: IoU boundary at exactly 0.5") {
    // 6x6 boxes shifted horizontally by 2: inter 24, union 48, IoU 0.5 -> TP
    std::vector<envsim::GroundTruthBox> truth{{0, {10, 10, 6, 6}}};
    std::vector<Detection> at_half{{0, 12, 10, 6, 6, 1.0}};
    CHECK(evaluate_detections(at_half, truth).tp == 1);
    // shifted by 3: inter 18, union 54, IoU 1/3 -> FP + FN
    std::vector<Detection> beyond{{0, 13, 10, 6, 6, 1.0}};
    const DetectionMetrics m = evaluate_detections(beyond, truth);
    CHECK(m.tp == 0);
    CHECK(m.fp == 1);
    CHECK(m.fn == 1);
}

TEST_CASE("metrics_from_counts: documented example and conventions") {
    const DetectionMetrics m = metrics_from_counts(23, 0, 2);
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 0.92);
    CHECK(m.f1 == doctest::Approx(0.9583).epsilon(1e-4));
    CHECK(m.f1 == 2.0 * 1.0 * 0.92 / (1.0 + 0.92));
    const DetectionMetrics z = metrics_from_counts(0, 0, 0);
    CHECK(z.precision == 0.0);
    CHECK(z.recall == 0.0);
    CHECK(z.f1 == 0.0);
}

TEST_CASE("template assets round-trip through manifest") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "odrl_tpl_assets";
    fs::remove_all(dir);
    const auto templates = builtin_templates(envsim::EnvId::minipac, 8, 0.95);
    write_template_assets(dir.string(), templates);
    const auto back = read_template_manifest((dir / "manifest.txt").string());
    REQUIRE(back.size() == templates.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].object_type == templates[i].object_type);
        CHECK(back[i].w == templates[i].w);
        CHECK(back[i].h == templates[i].h);
        CHECK(back[i].pixels == templates[i].pixels);
        CHECK(back[i].match_threshold == templates[i].match_threshold);
    }
    CHECK_THROWS_AS(read_template_manifest("/nonexistent/manifest.txt"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("match threshold 1.01 detects nothing even on clean frames") {
    envsim::EnvConfig cfg;
    cfg.seed = 3;
    envsim::EnvState st = envsim::reset(cfg);
    const auto templates = builtin_templates(envsim::EnvId::minipac, 8, 1.01);
    CHECK(detect_objects(envsim::render(st), templates).empty());
}
