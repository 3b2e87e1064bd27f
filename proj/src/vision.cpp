#include "odrl/vision.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "odrl/errors.hpp"
#include "odrl/image_io.hpp"
#include "odrl/kernels.hpp"
#include "odrl/text.hpp"

namespace odrl::vision {
namespace {

std::vector<std::vector<std::uint8_t>> split_planes(const std::uint8_t* rgb,
                                                    int h, int w) {
    std::vector<std::vector<std::uint8_t>> planes(
        3, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w));
    const std::size_t n = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < n; ++i) {
        planes[0][i] = rgb[i * 3 + 0];
        planes[1][i] = rgb[i * 3 + 1];
        planes[2][i] = rgb[i * 3 + 2];
    }
    return planes;
}

bool is_local_max(const ScoreMap& map, int y, int x) {
    const double v = map.at(y, x);
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            if (dy == 0 && dx == 0) continue;
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= map.height || nx < 0 || nx >= map.width) continue;
            if (map.at(ny, nx) > v) return false;
        }
    return true;
}

}  // namespace

void validate(const Template& tpl) {
    if (tpl.w <= 0 || tpl.h <= 0)
        throw ConfigError("template '" + tpl.name + "': dims must be positive");
    if (tpl.pixels.size() != static_cast<std::size_t>(tpl.w) * tpl.h * 3)
        throw ConfigError("template '" + tpl.name + "': pixel buffer size mismatch");
    const std::uint8_t first = tpl.pixels.empty() ? 0 : tpl.pixels[0];
    bool constant = true;
    for (const std::uint8_t b : tpl.pixels) constant &= (b == first);
    if (constant)
        throw ConfigError("template '" + tpl.name + "': constant patch");
}

Template template_from_sprite(const envsim::SpriteBitmap& sprite,
                              double match_threshold) {
    Template tpl;
    tpl.object_type = sprite.object_type;
    tpl.name = sprite.name;
    tpl.w = sprite.w;
    tpl.h = sprite.h;
    tpl.pixels = sprite.pixels;
    tpl.match_threshold = match_threshold;
    validate(tpl);
    return tpl;
}

ScoreMap match_planes(const std::vector<std::vector<std::uint8_t>>& src_planes,
                      int src_h, int src_w,
                      const std::vector<std::vector<std::uint8_t>>& tpl_planes,
                      int tpl_h, int tpl_w, MatchMethod method, bool normalized) {
    if (src_planes.empty() || src_planes.size() != tpl_planes.size())
        throw DimensionError("match: channel counts differ");
    if (tpl_h > src_h || tpl_w > src_w || tpl_h <= 0 || tpl_w <= 0)
        throw DimensionError("match: template does not fit in source");

    const int channels = static_cast<int>(src_planes.size());
    const int oh = src_h - tpl_h + 1, ow = src_w - tpl_w + 1;
    const std::size_t map_n = static_cast<std::size_t>(oh) * ow;
    const std::int64_t n_px = static_cast<std::int64_t>(tpl_w) * tpl_h;

    // Per-channel template sums.
    std::vector<std::int64_t> st(channels, 0), stt(channels, 0);
    for (int c = 0; c < channels; ++c) {
        for (const std::uint8_t b : tpl_planes[c]) {
            st[c] += b;
            stt[c] += static_cast<std::int64_t>(b) * b;
        }
    }

    // dot(y,x) = sum_c STI_c, via the SIMD-able kernel (exact integers).
    std::vector<double> dot(map_n, 0.0);
    for (int c = 0; c < channels; ++c)
        kernels::ops().u8_dot_map(src_planes[c].data(), src_h, src_w,
                                  tpl_planes[c].data(), tpl_h, tpl_w, dot.data(),
                                  oh, ow);

    // Window sums per channel, combined per position into the integer
    // aggregates each method needs.
    std::vector<std::int64_t> si(map_n), sii(map_n);
    std::vector<std::int64_t> sum_sii(map_n, 0);   // sum_c SII_c
    std::vector<std::int64_t> cross(map_n, 0);     // sum_c ST_c*SI_c
    std::vector<std::int64_t> di(map_n, 0);        // sum_c (n*SII_c - SI_c^2)
    for (int c = 0; c < channels; ++c) {
        kernels::u8_window_sums(src_planes[c].data(), src_h, src_w, tpl_h, tpl_w,
                                si.data(), sii.data());
        for (std::size_t i = 0; i < map_n; ++i) {
            sum_sii[i] += sii[i];
            cross[i] += st[c] * si[i];
            di[i] += n_px * sii[i] - si[i] * si[i];
        }
    }

    std::int64_t sum_stt = 0, dt = 0;
    for (int c = 0; c < channels; ++c) {
        sum_stt += stt[c];
        dt += n_px * stt[c] - st[c] * st[c];
    }

    ScoreMap map;
    map.height = oh;
    map.width = ow;
    map.scores.resize(map_n);

    for (std::size_t i = 0; i < map_n; ++i) {
        double r;
        switch (method) {
            case MatchMethod::sqdiff:
                r = static_cast<double>(sum_stt) - 2.0 * dot[i] +
                    static_cast<double>(sum_sii[i]);
                if (normalized) {
                    const double denom = std::sqrt(static_cast<double>(sum_stt) *
                                                   static_cast<double>(sum_sii[i]));
                    r = denom > 0.0 ? r / denom : 0.0;
                }
                break;
            case MatchMethod::ccorr:
                r = dot[i];
                if (normalized) {
                    const double denom = std::sqrt(static_cast<double>(sum_stt) *
                                                   static_cast<double>(sum_sii[i]));
                    r = denom > 0.0 ? r / denom : 0.0;
                }
                break;
            case MatchMethod::ccoeff: {
                // M = n*sum_c STI_c - sum_c ST_c*SI_c, exact in double
                const double m = static_cast<double>(n_px) * dot[i] -
                                 static_cast<double>(cross[i]);
                if (normalized) {
                    const double denom = std::sqrt(static_cast<double>(dt) *
                                                   static_cast<double>(di[i]));
                    r = denom > 0.0 ? m / denom : 0.0;
                } else {
                    r = m / static_cast<double>(n_px);
                }
                break;
            }
        }
        map.scores[i] = r;
    }
    return map;
}

ScoreMap match(const Frame& source, const Template& tpl, MatchMethod method,
               bool normalized) {
    validate(tpl);
    return match_planes(split_planes(source.pixels.data(), source.height, source.width),
                        source.height, source.width,
                        split_planes(tpl.pixels.data(), tpl.h, tpl.w), tpl.h,
                        tpl.w, method, normalized);
}

std::vector<Detection> detect_objects(const Frame& frame,
                                      const std::vector<Template>& templates) {
    if (templates.empty()) throw UsageError("detect_objects: no templates");

    std::vector<Detection> kept;
    // Candidates grouped per type so NMS only suppresses within a type.
    std::vector<int> types;
    for (const auto& tpl : templates)
        if (std::find(types.begin(), types.end(), tpl.object_type) == types.end())
            types.push_back(tpl.object_type);

    for (const int type : types) {
        std::vector<Detection> cands;
        for (const auto& tpl : templates) {
            if (tpl.object_type != type) continue;
            const ScoreMap map = match(frame, tpl, MatchMethod::ccoeff, true);
            for (int y = 0; y < map.height; ++y)
                for (int x = 0; x < map.width; ++x) {
                    const double s = map.at(y, x);
                    if (s >= tpl.match_threshold && is_local_max(map, y, x))
                        cands.push_back({type, x, y, tpl.w, tpl.h, s});
                }
        }
        std::sort(cands.begin(), cands.end(), [](const Detection& a, const Detection& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.y != b.y) return a.y < b.y;
            return a.x < b.x;
        });
        std::vector<Detection> type_kept;
        for (const auto& cand : cands) {
            bool suppressed = false;
            for (const auto& k : type_kept)
                if (box_iou(cand.box(), k.box()) > 0.3) {
                    suppressed = true;
                    break;
                }
            if (!suppressed) type_kept.push_back(cand);
        }
        kept.insert(kept.end(), type_kept.begin(), type_kept.end());
    }

    std::sort(kept.begin(), kept.end(), [](const Detection& a, const Detection& b) {
        if (a.object_type != b.object_type) return a.object_type < b.object_type;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });
    return kept;
}

ObjectChannels build_object_channels(int frame_h, int frame_w,
                                     const std::vector<Detection>& detections,
                                     int k) {
    if (k < 0 || frame_h < 0 || frame_w < 0)
        throw DimensionError("build_object_channels: negative dims");
    ObjectChannels oc;
    oc.k = k;
    oc.h = frame_h;
    oc.w = frame_w;
    oc.planes.assign(static_cast<std::size_t>(k) * frame_h * frame_w, 0);
    for (const auto& det : detections) {
        if (det.object_type < 0 || det.object_type >= k)
            throw DimensionError("detection type " + std::to_string(det.object_type) +
                                 " outside [0," + std::to_string(k) + ")");
        const int y0 = std::max(0, det.y), y1 = std::min(frame_h, det.y + det.h);
        const int x0 = std::max(0, det.x), x1 = std::min(frame_w, det.x + det.w);
        std::uint8_t* plane =
            oc.planes.data() + static_cast<std::size_t>(det.object_type) * frame_h * frame_w;
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) plane[y * frame_w + x] = 1;
    }
    return oc;
}

DetectionMetrics metrics_from_counts(std::int64_t tp, std::int64_t fp,
                                     std::int64_t fn) {
    DetectionMetrics m;
    m.tp = tp;
    m.fp = fp;
    m.fn = fn;
    m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    return m;
}

DetectionMetrics evaluate_detections(
    const std::vector<Detection>& pred,
    const std::vector<envsim::GroundTruthBox>& truth) {
    std::vector<Detection> ordered = pred;
    std::sort(ordered.begin(), ordered.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.object_type != b.object_type) return a.object_type < b.object_type;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });

    std::vector<bool> matched(truth.size(), false);
    std::int64_t tp = 0, fp = 0;
    for (const auto& det : ordered) {
        int best = -1;
        double best_iou = 0.0;
        for (std::size_t t = 0; t < truth.size(); ++t) {
            if (matched[t] || truth[t].object_type != det.object_type) continue;
            const double iou = box_iou(det.box(), truth[t].box);
            if (iou >= 0.5 && iou > best_iou) {
                best = static_cast<int>(t);
                best_iou = iou;
            }
        }
        if (best >= 0) {
            matched[static_cast<std::size_t>(best)] = true;
            ++tp;
        } else {
            ++fp;
        }
    }
    std::int64_t fn = 0;
    for (const bool m : matched) fn += m ? 0 : 1;
    return metrics_from_counts(tp, fp, fn);
}

void write_template_assets(const std::string& dir,
                           const std::vector<Template>& templates) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream manifest(fs::path(dir) / "manifest.txt", std::ios::trunc);
    if (!manifest) throw IoError("cannot write manifest in " + dir);
    for (const auto& tpl : templates) {
        validate(tpl);
        const std::string filename =
            (tpl.name.empty() ? "type" + std::to_string(tpl.object_type) : tpl.name) +
            ".ppm";
        Frame img(tpl.h, tpl.w);
        img.pixels = tpl.pixels;
        write_ppm((fs::path(dir) / filename).string(), img);
        manifest << tpl.object_type << " " << filename << " "
                 << fmt_double(tpl.match_threshold) << "\n";
    }
    if (!manifest) throw IoError("manifest write failed in " + dir);
}

std::vector<Template> read_template_manifest(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open template manifest: " + manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();

    std::vector<Template> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        Template tpl;
        std::string filename;
        if (!(ls >> tpl.object_type >> filename >> tpl.match_threshold))
            throw IoError(manifest_path + ":" + std::to_string(lineno) +
                          ": expected 'type_id filename threshold'");
        const Frame img = read_ppm((base / filename).string());
        tpl.name = fs::path(filename).stem().string();
        tpl.w = img.width;
        tpl.h = img.height;
        tpl.pixels = img.pixels;
        validate(tpl);
        out.push_back(std::move(tpl));
    }
    if (out.empty())
        throw ConfigError("template manifest is empty: " + manifest_path);
    return out;
}

std::vector<Template> builtin_templates(envsim::EnvId env, int cell_px,
                                        double match_threshold) {
    std::vector<Template> out;
    for (const auto& sprite : envsim::sprites(env, cell_px))
        out.push_back(template_from_sprite(sprite, match_threshold));
    return out;
}

}  // namespace odrl::vision
