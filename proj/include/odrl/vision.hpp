#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "odrl/envsim.hpp"
#include "odrl/image.hpp"

namespace odrl::vision {

// ============================================================================
// Template matching and object detection on 8-bit frames.
//
// Score semantics (T = template, I = source patch under the window, both
// 8-bit; n = w*h pixels per channel; per-channel integer sums ST, STT, SI,
// SII, STI over the window):
//
//   sqdiff          R = sum_c (STT_c - 2*STI_c + SII_c)        (= sum (T-I)^2)
//   ccorr           R = sum_c STI_c                            (= sum T*I)
//   ccoeff          R = M / n,  M = sum_c (n*STI_c - ST_c*SI_c)
//                   (= sum (T-meanT)(I-meanI), means per channel)
//   normalized:
//     sqdiff/ccorr  R' = R / sqrt(double(A) * double(B)),
//                   A = sum_c STT_c, B = sum_c SII_c
//     ccoeff        R' = M / sqrt(double(Dt) * double(Di)),
//                   Dt = sum_c (n*STT_c - ST_c^2), Di analogously on I
//   A, B, Dt or Di of zero (constant patch or template) gives score 0.
//
// Every quantity up to and including M, A, B, Dt, Di is an integer that a
// double represents exactly for any template up to 64x64 (bounds < 2^53), so
// scores are independent of summation order: scalar, SIMD, and a brute-force
// per-pixel oracle produce bit-identical results. The only roundings are the
// final divisions/sqrt written above.
// ============================================================================

enum class MatchMethod { sqdiff, ccorr, ccoeff };

struct Template {
    int object_type = 0;
    std::string name;
    int w = 0, h = 0;
    std::vector<std::uint8_t> pixels;  // interleaved RGB, h*w*3
    double match_threshold = 0.95;
};

// Throws ConfigError if dims are non-positive, the pixel buffer disagrees,
// or the patch is constant (every byte identical).
void validate(const Template& tpl);

Template template_from_sprite(const envsim::SpriteBitmap& sprite,
                              double match_threshold);

struct ScoreMap {
    int height = 0, width = 0;  // (H-h+1, W-w+1)
    std::vector<double> scores;

    double at(int y, int x) const {
        return scores[static_cast<std::size_t>(y) * width + x];
    }
};

struct Detection {
    int object_type = 0;
    int x = 0, y = 0;  // top-left pixel of the matched box
    int w = 0, h = 0;  // template dims
    double score = 0.0;

    Box box() const { return {x, y, w, h}; }
    bool operator==(const Detection&) const = default;
};

struct ObjectChannels {
    int k = 0, h = 0, w = 0;
    std::vector<std::uint8_t> planes;  // k*h*w, values 0/1

    std::uint8_t at(int c, int y, int x) const {
        return planes[(static_cast<std::size_t>(c) * h + y) * w + x];
    }
    const std::uint8_t* plane(int c) const {
        return planes.data() + static_cast<std::size_t>(c) * h * w;
    }
    bool operator==(const ObjectChannels&) const = default;
};

struct DetectionMetrics {
    std::int64_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Sliding-window match of an RGB template over an RGB frame.
// Throws DimensionError if the template does not fit in the source.
ScoreMap match(const Frame& source, const Template& tpl, MatchMethod method,
               bool normalized);

// Plane-level core (1 plane = grayscale, 3 = RGB); planes must agree in
// count between source and template.
ScoreMap match_planes(const std::vector<std::vector<std::uint8_t>>& src_planes,
                      int src_h, int src_w,
                      const std::vector<std::vector<std::uint8_t>>& tpl_planes,
                      int tpl_h, int tpl_w, MatchMethod method, bool normalized);

// Normalized-ccoeff detection: local maxima at or above each template's
// threshold, greedy per-type NMS suppressing IoU > 0.3 overlaps, result
// sorted by (type, y, x).
std::vector<Detection> detect_objects(const Frame& frame,
                                      const std::vector<Template>& templates);

// k binary planes; plane j is 1 exactly on pixels covered by some type-j
// detection box (clipped to the frame). Throws DimensionError on a
// detection whose type is outside [0, k).
ObjectChannels build_object_channels(int frame_h, int frame_w,
                                     const std::vector<Detection>& detections,
                                     int k);

// Greedy matching by descending score: a prediction is TP if an unmatched
// truth box of the same type has IoU >= 0.5 (best IoU wins; earlier truth
// entry on ties). Unmatched predictions are FP, unmatched truths FN.
DetectionMetrics evaluate_detections(
    const std::vector<Detection>& pred,
    const std::vector<envsim::GroundTruthBox>& truth);

// precision/recall/f1 from raw counts using the 0-denominator conventions.
DetectionMetrics metrics_from_counts(std::int64_t tp, std::int64_t fp,
                                     std::int64_t fn);

// Template assets on disk: one PPM per template plus a manifest of
// "type_id filename threshold" lines, filenames relative to the manifest.
void write_template_assets(const std::string& dir,
                           const std::vector<Template>& templates);
std::vector<Template> read_template_manifest(const std::string& manifest_path);

// Environment sprites as ready-to-use templates.
std::vector<Template> builtin_templates(envsim::EnvId env, int cell_px,
                                        double match_threshold);

}  // namespace odrl::vision
