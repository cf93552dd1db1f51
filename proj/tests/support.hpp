#pragma once

// Synthetic inputs and independent oracles shared by the test binaries.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fieldstack/epipolar.hpp"
#include "fieldstack/image.hpp"
#include "fieldstack/segeval.hpp"

namespace support {

using namespace fieldstack;

// ---------------------------------------------------------------- textures

inline std::uint32_t hash2d(std::uint32_t x, std::uint32_t y, std::uint32_t seed) {
    std::uint32_t h = x * 0x9e3779b9u ^ y * 0x85ebca6bu ^ seed * 0xc2b2ae35u;
    h ^= h >> 16;
    h *= 0x7feb352du;
    h ^= h >> 15;
    h *= 0x846ca68bu;
    h ^= h >> 16;
    return h;
}

/// Smooth band-limited texture plus soft blobs: enough low-frequency
/// structure for the blob detector, enough high-frequency detail for census
/// matching. Deterministic in (w, h, seed).
inline GrayImage make_texture(int w, int h, std::uint32_t seed = 7) {
    GrayImage g(w, h);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(0.0, w), uy(0.0, h);
    std::uniform_real_distribution<double> us(2.0, 6.0), ua(-0.30, 0.30);

    struct Blob {
        double cx, cy, s, a;
    };
    std::vector<Blob> blobs;
    const int nb = std::max(4, (w * h) / 350);
    for (int i = 0; i < nb; ++i) blobs.push_back({ux(rng), uy(rng), us(rng), ua(rng)});

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double v = 0.55 + 0.10 * std::sin(0.13 * x + 2.1 * std::sin(0.045 * y)) +
                       0.08 * std::sin(0.071 * y + 1.3 * std::sin(0.052 * x));
            for (const Blob& b : blobs) {
                const double dx = x - b.cx, dy = y - b.cy;
                const double r2 = dx * dx + dy * dy;
                if (r2 < 25.0 * b.s * b.s) v += b.a * std::exp(-r2 / (2.0 * b.s * b.s));
            }
            v += (hash2d(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y), seed) &
                  0xff) /
                     255.0 * 0.06 -
                 0.03;
            g.at(x, y) = static_cast<float>(std::clamp(v, 0.02, 0.98));
        }
    }
    return g;
}

/// Bilinear sample with clamped borders.
inline float sample_clamped(const GrayImage& g, double x, double y) {
    x = std::clamp(x, 0.0, g.width - 1.0);
    y = std::clamp(y, 0.0, g.height - 1.0);
    const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, g.width - 1), y1 = std::min(y0 + 1, g.height - 1);
    const double fx = x - x0, fy = y - y0;
    return static_cast<float>((1 - fx) * (1 - fy) * g.at(x0, y0) + fx * (1 - fy) * g.at(x1, y0) +
                              (1 - fx) * fy * g.at(x0, y1) + fx * fy * g.at(x1, y1));
}

/// out(x, y) = src(x - dx(y), y): per-row horizontal motion.
inline GrayImage shift_rows(const GrayImage& src, const std::vector<double>& dx_by_row) {
    GrayImage out(src.width, src.height);
    for (int y = 0; y < src.height; ++y) {
        const double dx = dx_by_row[static_cast<std::size_t>(y)];
        for (int x = 0; x < src.width; ++x) out.at(x, y) = sample_clamped(src, x - dx, y);
    }
    return out;
}

inline GrayImage shift_uniform(const GrayImage& src, double dx) {
    return shift_rows(src, std::vector<double>(static_cast<std::size_t>(src.height), dx));
}

inline MultiChannelImage gray_to_rgb(const GrayImage& g) {
    MultiChannelImage img(g.width, g.height, {Channel::R, Channel::G, Channel::B});
    for (int c = 0; c < 3; ++c) {
        auto plane = img.plane_u8(c);
        for (std::size_t i = 0; i < g.samples.size(); ++i) {
            plane[i] = static_cast<std::uint8_t>(std::lround(255.0 * g.samples[i]));
        }
    }
    return img;
}

/// Piecewise-constant per-row parallax magnitudes (3, 5, 7 px in 25/50/25
/// bands): three depth planes seen from a translating camera. Median 5 px.
inline std::vector<double> banded_shifts(int height) {
    std::vector<double> dx(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) {
        const double frac = (y + 0.5) / height;
        dx[static_cast<std::size_t>(y)] = frac < 0.25 ? 3.0 : (frac < 0.75 ? 5.0 : 7.0);
    }
    return dx;
}

/// Distance (px right of the image centre) of the focus of expansion of the
/// synthetic camera track: mostly sideways, with a touch of forward motion.
/// Close enough that flow directions fan out measurably (the epipole stays
/// well conditioned), far enough to sit outside every test frame.
inline constexpr double kFoeDistance = 500.0;

/// One step of scene flow at (x, y) for a band with the given parallax. The
/// slight x-dependence (all flow rays meet at the focus of expansion) pins
/// the epipole far outside the frame; with row-constant shifts its position
/// along the baseline would be left to the mercy of feature noise.
inline void scene_flow(int w, int h, double band, double x, double y, double& dx, double& dy) {
    dx = band * (1.0 - (x - 0.5 * w) / kFoeDistance);
    dy = -band * (y - 0.5 * h) / kFoeDistance;
}

/// The texture advected by `amount` steps of the banded scene flow
/// (backward warp with clamped sampling).
inline GrayImage warp_flow(const GrayImage& src, double amount) {
    const std::vector<double> bands = banded_shifts(src.height);
    GrayImage out(src.width, src.height);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            double dx, dy;
            scene_flow(src.width, src.height, bands[static_cast<std::size_t>(y)], x, y, dx, dy);
            out.at(x, y) = sample_clamped(src, x - amount * dx, y - amount * dy);
        }
    }
    return out;
}

struct Triple {
    MultiChannelImage prev, center, next;
};

/// prev/next are the centre texture advected -+one flow step: a camera
/// sliding along +x past a three-depth scene. Median parallax 5 px.
inline Triple make_triple(int w, int h, std::uint32_t seed = 7) {
    const GrayImage center = make_texture(w, h, seed);
    return {gray_to_rgb(warp_flow(center, 1.0)), gray_to_rgb(center),
            gray_to_rgb(warp_flow(center, -1.0))};
}

// ------------------------------------------------------------- projections

/// Canonical form used for comparing fundamental matrices: unit Frobenius
/// norm, with the largest-magnitude entry (first in scan order on ties)
/// positive.
inline FundamentalMatrix canonical_f(const std::array<double, 9>& m) {
    double norm = 0.0;
    for (double v : m) norm += v * v;
    norm = std::sqrt(norm);
    int arg = 0;
    for (int i = 1; i < 9; ++i) {
        if (std::abs(m[static_cast<std::size_t>(i)]) >
            std::abs(m[static_cast<std::size_t>(arg)]))
            arg = i;
    }
    const double s = (m[static_cast<std::size_t>(arg)] < 0 ? -1.0 : 1.0) / norm;
    FundamentalMatrix f;
    for (int i = 0; i < 9; ++i) f.m[static_cast<std::size_t>(i)] = m[static_cast<std::size_t>(i)] * s;
    return f;
}

struct Scene {
    std::vector<PointPair> pairs;
    FundamentalMatrix f_true;
};

/// Two projective views of a random point cloud. The second camera is
/// rotated `pan_deg` about the vertical axis and translated mostly along x,
/// so both epipoles stay far outside the image.
inline Scene make_scene(std::mt19937_64& rng, int n_points, double noise_px,
                        double pan_deg = 2.0, int width = 640, int height = 480) {
    const double f = 500.0, cx = width / 2.0, cy = height / 2.0;
    const double a = pan_deg * 3.14159265358979323846 / 180.0;
    // rotation about y, then the epipolar ingredients
    const double r[9] = {std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a)};
    const double t[3] = {0.6, 0.03, 0.02};

    auto cross = [](const double v[3], const double w[3], double out[3]) {
        out[0] = v[1] * w[2] - v[2] * w[1];
        out[1] = v[2] * w[0] - v[0] * w[2];
        out[2] = v[0] * w[1] - v[1] * w[0];
    };

    // E = [t]x R, column by column; F = K^-T E K^-1
    double e[9];
    for (int c = 0; c < 3; ++c) {
        const double rc[3] = {r[c], r[3 + c], r[6 + c]};
        double ec[3];
        cross(t, rc, ec);
        e[c] = ec[0];
        e[3 + c] = ec[1];
        e[6 + c] = ec[2];
    }
    // K^-1 = [[1/f, 0, -cx/f], [0, 1/f, -cy/f], [0, 0, 1]]
    std::array<double, 9> fm{};
    const double ki[9] = {1 / f, 0, -cx / f, 0, 1 / f, -cy / f, 0, 0, 1};
    double ek[9] = {0};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) ek[i * 3 + j] += e[i * 3 + k] * ki[k * 3 + j];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k)
                fm[static_cast<std::size_t>(i * 3 + j)] += ki[k * 3 + i] * ek[k * 3 + j];

    Scene scene;
    scene.f_true = canonical_f(fm);

    std::uniform_real_distribution<double> px(-2.2, 2.2), pz(4.0, 9.0);
    std::normal_distribution<double> noise(0.0, noise_px);
    while (static_cast<int>(scene.pairs.size()) < n_points) {
        const double X = px(rng), Y = px(rng) * 0.75, Z = pz(rng);
        const double u1 = f * X / Z + cx, v1 = f * Y / Z + cy;
        const double xc = r[0] * X + r[1] * Y + r[2] * Z + t[0];
        const double yc = r[3] * X + r[4] * Y + r[5] * Z + t[1];
        const double zc = r[6] * X + r[7] * Y + r[8] * Z + t[2];
        const double u2 = f * xc / zc + cx, v2 = f * yc / zc + cy;
        if (u1 < 0 || u1 >= width || v1 < 0 || v1 >= height) continue;
        if (u2 < 0 || u2 >= width || v2 < 0 || v2 >= height) continue;
        PointPair p{u1, v1, u2, v2};
        if (noise_px > 0.0) {
            p.x1 += noise(rng);
            p.y1 += noise(rng);
            p.x2 += noise(rng);
            p.y2 += noise(rng);
        }
        scene.pairs.push_back(p);
    }
    return scene;
}

inline void add_outliers(std::mt19937_64& rng, std::vector<PointPair>& pairs, int count,
                         int width = 640, int height = 480) {
    std::uniform_real_distribution<double> ux(0.0, width - 1.0), uy(0.0, height - 1.0);
    for (int i = 0; i < count; ++i) pairs.push_back({ux(rng), uy(rng), ux(rng), uy(rng)});
}

// ----------------------------------------------------------------- polygons

/// Crossing-number point-in-polygon test (strict right-side ray), sampled at
/// pixel centres. Independent of the scanline rasterizer.
inline bool pnpoly(const std::vector<double>& poly, double px, double py) {
    const std::size_t n = poly.size() / 2;
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const double xi = poly[2 * i], yi = poly[2 * i + 1];
        const double xj = poly[2 * j], yj = poly[2 * j + 1];
        if ((yi > py) != (yj > py)) {
            const double cross_x = (xj - xi) * (py - yi) / (yj - yi) + xi;
            if (px < cross_x) inside = !inside;
        }
    }
    return inside;
}

inline long pnpoly_area(const std::vector<double>& poly, int width, int height) {
    long area = 0;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            if (pnpoly(poly, x + 0.5, y + 0.5)) ++area;
    return area;
}

/// Star-shaped polygon around a random centre, clamped to the image box and
/// regenerated until it covers at least one pixel centre.
inline std::vector<double> random_polygon(std::mt19937_64& rng, int width, int height) {
    std::uniform_int_distribution<int> nv(3, 6);
    std::uniform_real_distribution<double> ucx(1.0, width - 1.0), ucy(1.0, height - 1.0);
    std::uniform_real_distribution<double> ur(1.5, std::max(2.0, 0.45 * std::min(width, height)));
    std::uniform_real_distribution<double> uj(0.0, 1.0);
    for (;;) {
        const int n = nv(rng);
        const double cx = ucx(rng), cy = ucy(rng);
        std::vector<double> poly;
        for (int i = 0; i < n; ++i) {
            const double ang = (i + 0.8 * uj(rng)) * 2.0 * 3.14159265358979323846 / n;
            const double rad = ur(rng);
            poly.push_back(std::clamp(cx + rad * std::cos(ang), 0.0, static_cast<double>(width)));
            poly.push_back(std::clamp(cy + rad * std::sin(ang), 0.0, static_cast<double>(height)));
        }
        if (pnpoly_area(poly, width, height) > 0) return poly;
    }
}

// ------------------------------------------------ evaluation-protocol oracle

/// Brute-force COCO-protocol scorer. Everything is recomputed from scratch
/// with flat loops: per-pixel-centre crossing tests for masks, quadratic
/// scans for matching, and a direct max-precision-at-recall sweep for AP.
/// Final averaging expressions match the library contract (101-point AP on a
/// 0-100 scale, category mean, 10-threshold mean) so agreement is exact.
namespace oracle {

struct RasterMask {
    std::vector<std::uint8_t> bits;
    int w = 0, h = 0;
};

inline RasterMask raster(const std::vector<double>& poly, int w, int h) {
    RasterMask m;
    m.w = w;
    m.h = h;
    m.bits.assign(static_cast<std::size_t>(w) * h, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (pnpoly(poly, x + 0.5, y + 0.5))
                m.bits[static_cast<std::size_t>(y) * w + x] = 1;
    return m;
}

inline double iou(const RasterMask& a, const RasterMask& b) {
    long inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        if (a.bits[i] && b.bits[i]) ++inter;
        if (a.bits[i] || b.bits[i]) ++uni;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct Flags {
    std::vector<char> tp; // parallel to preds
};

inline Flags match_all(const Dataset& gt, const PredictionSet& preds, double iou_t) {
    std::map<int, std::pair<int, int>> image_size;
    for (const ImageInfo& im : gt.images) image_size[im.id] = {im.width, im.height};

    Flags out;
    out.tp.assign(preds.size(), 0);
    std::vector<char> gt_taken(gt.annotations.size(), 0);

    // predictions in (score desc, id asc) order
    std::vector<std::size_t> order(preds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (preds[a].score != preds[b].score) return preds[a].score > preds[b].score;
        return preds[a].id < preds[b].id;
    });

    for (std::size_t pi : order) {
        const InstanceMask& p = preds[pi];
        const auto [w, h] = image_size.at(p.image_id);
        const RasterMask pm = raster(p.polygon, w, h);
        int best = -1;
        double best_iou = 0.0;
        for (std::size_t gi = 0; gi < gt.annotations.size(); ++gi) {
            const InstanceMask& g = gt.annotations[gi];
            if (g.image_id != p.image_id || g.category_id != p.category_id) continue;
            if (gt_taken[gi]) continue;
            const double v = iou(pm, raster(g.polygon, w, h));
            if (v < iou_t) continue;
            const bool better = best < 0 || v > best_iou ||
                                (v == best_iou &&
                                 g.id < gt.annotations[static_cast<std::size_t>(best)].id);
            if (better) {
                best = static_cast<int>(gi);
                best_iou = v;
            }
        }
        if (best >= 0) {
            gt_taken[static_cast<std::size_t>(best)] = 1;
            out.tp[pi] = 1;
        }
    }
    return out;
}

inline std::optional<double> ap_at(const Dataset& gt, const PredictionSet& preds, double iou_t) {
    const Flags flags = match_all(gt, preds, iou_t);

    std::vector<int> cats;
    for (const CategoryInfo& c : gt.categories) cats.push_back(c.id);
    for (const InstanceMask& a : gt.annotations)
        if (std::find(cats.begin(), cats.end(), a.category_id) == cats.end())
            cats.push_back(a.category_id);
    for (const InstanceMask& p : preds)
        if (std::find(cats.begin(), cats.end(), p.category_id) == cats.end())
            cats.push_back(p.category_id);
    std::sort(cats.begin(), cats.end());

    double sum = 0.0;
    int cats_with_gt = 0;
    for (int cat : cats) {
        long ngt = 0;
        for (const InstanceMask& a : gt.annotations)
            if (a.category_id == cat) ++ngt;
        if (ngt == 0) continue;
        ++cats_with_gt;

        std::vector<std::size_t> order;
        for (std::size_t i = 0; i < preds.size(); ++i)
            if (preds[i].category_id == cat) order.push_back(i);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (preds[a].score != preds[b].score) return preds[a].score > preds[b].score;
            return preds[a].id < preds[b].id;
        });

        std::vector<double> prec, rec;
        long tp = 0, fp = 0;
        for (std::size_t pi : order) {
            flags.tp[pi] ? ++tp : ++fp;
            prec.push_back(static_cast<double>(tp) / (tp + fp));
            rec.push_back(static_cast<double>(tp) / ngt);
        }

        double ap_sum = 0.0;
        for (int j = 0; j <= 100; ++j) {
            const double r = j / 100.0;
            double best = 0.0;
            for (std::size_t k = 0; k < prec.size(); ++k)
                if (rec[k] >= r) best = std::max(best, prec[k]);
            ap_sum += best;
        }
        sum += 100.0 * (ap_sum / 101);
    }
    if (cats_with_gt == 0) return std::nullopt;
    return sum / cats_with_gt;
}

struct Report {
    std::vector<std::optional<double>> ap; // one per threshold 0.50..0.95
    std::optional<double> map;
};

inline Report evaluate(const Dataset& gt, const PredictionSet& preds) {
    Report r;
    double sum = 0.0;
    bool have_all = true;
    for (int k = 0; k < 10; ++k) {
        const double t = (50 + 5 * k) / 100.0;
        const std::optional<double> ap = ap_at(gt, preds, t);
        r.ap.push_back(ap);
        if (ap)
            sum += *ap;
        else
            have_all = false;
    }
    if (have_all) r.map = sum / 10.0;
    return r;
}

} // namespace oracle

/// Random small evaluation scenario: a few images, masks and categories,
/// quantized scores so ties actually occur.
inline void random_eval_case(std::mt19937_64& rng, Dataset& gt, PredictionSet& preds) {
    std::uniform_int_distribution<int> n_images(1, 5), n_cat(1, 2), n_gt(0, 6), n_pred(0, 6);
    std::uniform_int_distribution<int> dim(12, 32), score_q(0, 16);

    gt = Dataset{};
    preds.clear();
    const int ni = n_images(rng);
    for (int i = 0; i < ni; ++i) gt.images.push_back({i + 1, dim(rng), dim(rng), ""});
    const int nc = n_cat(rng);
    for (int c = 0; c < nc; ++c) gt.categories.push_back({c + 1, ""});

    std::uniform_int_distribution<int> pick_img(0, ni - 1), pick_cat(1, nc);
    int next_id = 1;
    const int ngt = n_gt(rng);
    for (int a = 0; a < ngt; ++a) {
        const ImageInfo& im = gt.images[static_cast<std::size_t>(pick_img(rng))];
        gt.annotations.push_back(
            {next_id++, im.id, pick_cat(rng), random_polygon(rng, im.width, im.height), 1.0});
    }
    const int npred = n_pred(rng);
    for (int p = 0; p < npred; ++p) {
        const ImageInfo& im = gt.images[static_cast<std::size_t>(pick_img(rng))];
        preds.push_back({p + 1, im.id, pick_cat(rng),
                         random_polygon(rng, im.width, im.height), score_q(rng) / 16.0});
    }
}

// ------------------------------------------------------------------- files

/// Self-deleting temporary directory for file-shaped fixtures.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("fieldstack-test-" + tag + "-" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

} // namespace support
