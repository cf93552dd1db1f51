#include "fieldstack/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace fieldstack {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Detection scale of a box filter: the 9x9 base filter approximates a
// Gaussian with sigma 1.2.
float filter_scale(double filter_size) { return static_cast<float>(1.2 * filter_size / 9.0); }

struct ResponseLayer {
    int filter = 0; // box filter side length in pixels
    int step = 0;   // sampling stride in pixels
    int rows = 0;
    int cols = 0;
    std::vector<float> resp;
    std::vector<std::uint8_t> lap;

    float at(int r, int c) const { return resp[static_cast<std::size_t>(r) * cols + c]; }
};

ResponseLayer build_response_layer(const IntegralImage& ii, int filter, int step) {
    ResponseLayer layer;
    layer.filter = filter;
    layer.step = step;
    layer.rows = ii.height() / step;
    layer.cols = ii.width() / step;
    const std::size_t n = static_cast<std::size_t>(layer.rows) * layer.cols;
    layer.resp.resize(n);
    layer.lap.resize(n);

    const int lobe = filter / 3;
    const int border = (filter - 1) / 2;
    const double inv_area = 1.0 / (static_cast<double>(filter) * filter);

    std::size_t idx = 0;
    for (int ar = 0; ar < layer.rows; ++ar) {
        const int r = ar * step;
        for (int ac = 0; ac < layer.cols; ++ac, ++idx) {
            const int c = ac * step;
            double dxx = ii.box_sum(r - lobe + 1, c - border, 2 * lobe - 1, filter) -
                         3.0 * ii.box_sum(r - lobe + 1, c - lobe / 2, 2 * lobe - 1, lobe);
            double dyy = ii.box_sum(r - border, c - lobe + 1, filter, 2 * lobe - 1) -
                         3.0 * ii.box_sum(r - lobe / 2, c - lobe + 1, lobe, 2 * lobe - 1);
            double dxy = ii.box_sum(r - lobe, c + 1, lobe, lobe) +
                         ii.box_sum(r + 1, c - lobe, lobe, lobe) -
                         ii.box_sum(r - lobe, c - lobe, lobe, lobe) -
                         ii.box_sum(r + 1, c + 1, lobe, lobe);
            dxx *= inv_area;
            dyy *= inv_area;
            dxy *= inv_area;
            layer.resp[idx] = static_cast<float>(dxx * dyy - 0.81 * dxy * dxy);
            layer.lap[idx] = dxx + dyy >= 0.0 ? 1 : 0;
        }
    }
    return layer;
}

// Quadratic fit of the 3x3x3 response neighbourhood; offsets returned in
// (col, row, layer) units. False when the local Hessian is singular.
bool interpolate_extremum(const ResponseLayer& b, const ResponseLayer& m, const ResponseLayer& t,
                          int ar, int ac, double out[3]) {
    const double v = m.at(ar, ac);
    const double gx = (m.at(ar, ac + 1) - m.at(ar, ac - 1)) / 2.0;
    const double gy = (m.at(ar + 1, ac) - m.at(ar - 1, ac)) / 2.0;
    const double gs = (t.at(ar, ac) - b.at(ar, ac)) / 2.0;
    const double hxx = m.at(ar, ac + 1) + m.at(ar, ac - 1) - 2.0 * v;
    const double hyy = m.at(ar + 1, ac) + m.at(ar - 1, ac) - 2.0 * v;
    const double hss = t.at(ar, ac) + b.at(ar, ac) - 2.0 * v;
    const double hxy = (m.at(ar + 1, ac + 1) - m.at(ar + 1, ac - 1) - m.at(ar - 1, ac + 1) +
                        m.at(ar - 1, ac - 1)) /
                       4.0;
    const double hxs =
        (t.at(ar, ac + 1) - t.at(ar, ac - 1) - b.at(ar, ac + 1) + b.at(ar, ac - 1)) / 4.0;
    const double hys =
        (t.at(ar + 1, ac) - t.at(ar - 1, ac) - b.at(ar + 1, ac) + b.at(ar - 1, ac)) / 4.0;

    // Solve H * delta = -g by Cramer's rule on the symmetric 3x3 system.
    const double det = hxx * (hyy * hss - hys * hys) - hxy * (hxy * hss - hys * hxs) +
                       hxs * (hxy * hys - hyy * hxs);
    if (std::abs(det) < 1e-30) return false;
    const double rx = -gx, ry = -gy, rs = -gs;
    out[0] = (rx * (hyy * hss - hys * hys) - hxy * (ry * hss - rs * hys) +
              hxs * (ry * hys - rs * hyy)) /
             det;
    out[1] = (hxx * (ry * hss - rs * hys) - rx * (hxy * hss - hxs * hys) +
              hxs * (hxy * rs - hxs * ry)) /
             det;
    out[2] = (hxx * (hyy * rs - hys * ry) - hxy * (hxy * rs - hxs * ry) +
              rx * (hxy * hys - hyy * hxs)) /
             det;
    return true;
}

double gaussian(double x, double y, double sig) {
    return 1.0 / (kTwoPi * sig * sig) * std::exp(-(x * x + y * y) / (2.0 * sig * sig));
}

// Haar wavelet responses of side s centred at (row, col): right half minus
// left half, and bottom half minus top half.
double haar_x(const IntegralImage& ii, int row, int col, int s) {
    return ii.box_sum(row - s / 2, col, s, s / 2) - ii.box_sum(row - s / 2, col - s / 2, s, s / 2);
}

double haar_y(const IntegralImage& ii, int row, int col, int s) {
    return ii.box_sum(row, col - s / 2, s / 2, s) - ii.box_sum(row - s / 2, col - s / 2, s / 2, s);
}

double angle_of(double x, double y) {
    double a = std::atan2(y, x);
    if (a < 0.0) a += kTwoPi;
    return a;
}

float assign_orientation(const IntegralImage& ii, const FeaturePoint& pt) {
    const int s = std::max(1, static_cast<int>(std::lround(pt.scale)));
    const int r = static_cast<int>(std::lround(pt.y));
    const int c = static_cast<int>(std::lround(pt.x));

    std::vector<double> res_x, res_y, ang;
    res_x.reserve(109);
    res_y.reserve(109);
    ang.reserve(109);
    for (int i = -6; i <= 6; ++i) {
        for (int j = -6; j <= 6; ++j) {
            if (i * i + j * j >= 36) continue;
            const double g = gaussian(i, j, 2.5);
            const double rx = g * haar_x(ii, r + j * s, c + i * s, 4 * s);
            const double ry = g * haar_y(ii, r + j * s, c + i * s, 4 * s);
            res_x.push_back(rx);
            res_y.push_back(ry);
            ang.push_back(angle_of(rx, ry));
        }
    }

    // pi/3 sliding window over response angles; keep the strongest summed vector
    double best = 0.0, orientation = 0.0;
    const double window = std::numbers::pi / 3.0;
    for (double ang1 = 0.0; ang1 < kTwoPi; ang1 += 0.15) {
        const double ang2 = ang1 + window > kTwoPi ? ang1 + window - kTwoPi : ang1 + window;
        double sum_x = 0.0, sum_y = 0.0;
        for (std::size_t k = 0; k < ang.size(); ++k) {
            const double a = ang[k];
            const bool inside = ang1 < ang2 ? (ang1 < a && a < ang2)
                                            : ((a > 0.0 && a < ang2) || (a > ang1 && a < kTwoPi));
            if (inside) {
                sum_x += res_x[k];
                sum_y += res_y[k];
            }
        }
        const double mag = sum_x * sum_x + sum_y * sum_y;
        if (mag > best) {
            best = mag;
            orientation = angle_of(sum_x, sum_y);
        }
    }
    return static_cast<float>(orientation);
}

Descriptor build_descriptor(const IntegralImage& ii, const FeaturePoint& pt, bool upright) {
    const double scale = pt.scale;
    const int x = static_cast<int>(std::lround(pt.x));
    const int y = static_cast<int>(std::lround(pt.y));
    const int haar = 2 * std::max(1, static_cast<int>(std::lround(scale)));
    const double co = upright ? 1.0 : std::cos(pt.orientation);
    const double si = upright ? 0.0 : std::sin(pt.orientation);

    Descriptor desc{};
    int count = 0;
    double len = 0.0;
    double cx = -0.5; // subregion centre in 4x4 grid units, for weighting

    // 4x4 subregions of 9x9 samples with 2-sample overlap
    int i = -8;
    while (i < 12) {
        i -= 4;
        cx += 1.0;
        double cy = -0.5;
        int j = -8;
        while (j < 12) {
            j -= 4;
            cy += 1.0;
            const int ix = i + 5;
            const int jx = j + 5;
            const int xs = static_cast<int>(std::lround(x + (-jx * scale * si + ix * scale * co)));
            const int ys = static_cast<int>(std::lround(y + (jx * scale * co + ix * scale * si)));

            double dx = 0.0, dy = 0.0, mdx = 0.0, mdy = 0.0;
            for (int k = i; k < i + 9; ++k) {
                for (int l = j; l < j + 9; ++l) {
                    const int sample_x =
                        static_cast<int>(std::lround(x + (-l * scale * si + k * scale * co)));
                    const int sample_y =
                        static_cast<int>(std::lround(y + (l * scale * co + k * scale * si)));
                    const double g1 = gaussian(xs - sample_x, ys - sample_y, 2.5 * scale);
                    const double rx = haar_x(ii, sample_y, sample_x, haar);
                    const double ry = haar_y(ii, sample_y, sample_x, haar);
                    const double rrx = g1 * (-rx * si + ry * co);
                    const double rry = g1 * (rx * co + ry * si);
                    dx += rrx;
                    dy += rry;
                    mdx += std::abs(rrx);
                    mdy += std::abs(rry);
                }
            }
            const double g2 = gaussian(cx - 2.0, cy - 2.0, 1.5);
            desc[count++] = static_cast<float>(dx * g2);
            desc[count++] = static_cast<float>(dy * g2);
            desc[count++] = static_cast<float>(mdx * g2);
            desc[count++] = static_cast<float>(mdy * g2);
            len += (dx * dx + dy * dy + mdx * mdx + mdy * mdy) * g2 * g2;
            j += 9;
        }
        i += 9;
    }

    len = std::sqrt(len);
    if (len > 0.0) {
        for (float& v : desc) v = static_cast<float>(v / len);
    }
    return desc;
}

} // namespace

void SurfParams::validate() const {
    if (!(hessian_threshold > 0.0)) throw Error("hessian threshold must be positive");
    if (octaves < 1 || octaves > 8) throw Error("octaves must be in [1,8]");
    if (layers_per_octave < 1 || layers_per_octave > 8) {
        throw Error("layers per octave must be in [1,8]");
    }
}

std::vector<FeaturePoint> detect_features(const GrayImage& g, const SurfParams& params) {
    params.validate();
    if (g.width < 32 || g.height < 32) {
        throw Error("image too small for feature detection: " + std::to_string(g.width) + "x" +
                    std::to_string(g.height));
    }

    const IntegralImage ii(g);
    std::vector<FeaturePoint> pts;

    for (int o = 0; o < params.octaves; ++o) {
        const int step = 1 << o;
        const int base = 3 * ((2 << o) + 1); // 9, 15, 27, 51, ...
        const int filter_step = 6 << o;
        if (g.width / step < 3 || g.height / step < 3) break;

        std::vector<ResponseLayer> layers;
        layers.reserve(params.layers_per_octave + 2);
        for (int l = 0; l < params.layers_per_octave + 2; ++l) {
            layers.push_back(build_response_layer(ii, base + l * filter_step, step));
        }

        for (int m = 1; m <= params.layers_per_octave; ++m) {
            const ResponseLayer& lb = layers[m - 1];
            const ResponseLayer& lm = layers[m];
            const ResponseLayer& lt = layers[m + 1];
            const int border = (lt.filter + 1) / (2 * step) + 1;
            for (int ar = border; ar < lm.rows - border; ++ar) {
                for (int ac = border; ac < lm.cols - border; ++ac) {
                    const float v = lm.at(ar, ac);
                    if (v <= params.hessian_threshold) continue;
                    bool extremum = true;
                    for (int dl = -1; dl <= 1 && extremum; ++dl) {
                        const ResponseLayer& ll = layers[m + dl];
                        for (int dr = -1; dr <= 1 && extremum; ++dr) {
                            for (int dc = -1; dc <= 1; ++dc) {
                                if (dl == 0 && dr == 0 && dc == 0) continue;
                                if (ll.at(ar + dr, ac + dc) >= v) {
                                    extremum = false;
                                    break;
                                }
                            }
                        }
                    }
                    if (!extremum) continue;

                    double offset[3];
                    if (!interpolate_extremum(lb, lm, lt, ar, ac, offset)) continue;
                    if (std::abs(offset[0]) >= 0.5 || std::abs(offset[1]) >= 0.5 ||
                        std::abs(offset[2]) >= 0.5) {
                        continue;
                    }
                    FeaturePoint pt;
                    pt.x = static_cast<float>((ac + offset[0]) * step);
                    pt.y = static_cast<float>((ar + offset[1]) * step);
                    pt.scale = filter_scale(lm.filter + offset[2] * filter_step);
                    pt.laplacian_sign = lm.lap[static_cast<std::size_t>(ar) * lm.cols + ac] ? 1 : -1;
                    pt.response = v;
                    pts.push_back(pt);
                }
            }
        }
    }

    std::sort(pts.begin(), pts.end(), [](const FeaturePoint& a, const FeaturePoint& b) {
        if (a.response != b.response) return a.response > b.response;
        if (a.y != b.y) return a.y < b.y;
        if (a.x != b.x) return a.x < b.x;
        return a.scale < b.scale;
    });
    return pts;
}

DescriptorSet compute_descriptors(const GrayImage& g, std::vector<FeaturePoint>& pts,
                                  const SurfParams& params) {
    params.validate();
    const IntegralImage ii(g);
    DescriptorSet out;
    out.descriptors.reserve(pts.size());
    out.point_indices.reserve(pts.size());

    for (std::size_t i = 0; i < pts.size(); ++i) {
        FeaturePoint& pt = pts[i];
        const int margin = static_cast<int>(std::lround(2.0 * pt.scale)) + 1;
        const int cx = static_cast<int>(std::lround(pt.x));
        const int cy = static_cast<int>(std::lround(pt.y));
        if (cx - margin < 0 || cx + margin >= g.width || cy - margin < 0 ||
            cy + margin >= g.height) {
            out.skipped.push_back(static_cast<int>(i));
            continue;
        }
        pt.orientation = params.upright ? 0.0f : assign_orientation(ii, pt);
        out.descriptors.push_back(build_descriptor(ii, pt, params.upright));
        out.point_indices.push_back(static_cast<int>(i));
    }
    return out;
}

std::vector<MatchPair> match_features(const std::vector<Descriptor>& a,
                                      const std::vector<Descriptor>& b, float ratio_max) {
    if (a.empty() || b.empty()) throw Error("descriptor lists must be non-empty");
    if (!(ratio_max >= 0.0f && ratio_max <= 1.0f)) throw Error("ratio_max must be in [0,1]");

    auto dist_sq = [](const Descriptor& p, const Descriptor& q) {
        double s = 0.0;
        for (int k = 0; k < 64; ++k) {
            const double d = static_cast<double>(p[k]) - q[k];
            s += d * d;
        }
        return s;
    };

    const int na = static_cast<int>(a.size());
    const int nb = static_cast<int>(b.size());
    std::vector<int> best_b(na, -1);
    std::vector<double> best_d(na), second_d(na);
    for (int i = 0; i < na; ++i) {
        double d1 = std::numeric_limits<double>::infinity();
        double d2 = std::numeric_limits<double>::infinity();
        int j1 = -1;
        for (int j = 0; j < nb; ++j) {
            const double d = dist_sq(a[i], b[j]);
            if (d < d1) {
                d2 = d1;
                d1 = d;
                j1 = j;
            } else if (d < d2) {
                d2 = d;
            }
        }
        best_b[i] = j1;
        best_d[i] = d1;
        second_d[i] = d2;
    }
    std::vector<int> best_a(nb, -1);
    for (int j = 0; j < nb; ++j) {
        double d1 = std::numeric_limits<double>::infinity();
        int i1 = -1;
        for (int i = 0; i < na; ++i) {
            const double d = dist_sq(a[i], b[j]);
            if (d < d1) {
                d1 = d;
                i1 = i;
            }
        }
        best_a[j] = i1;
    }

    std::vector<MatchPair> matches;
    for (int i = 0; i < na; ++i) {
        const int j = best_b[i];
        if (j < 0 || best_a[j] != i) continue;
        float ratio = 0.0f;
        if (nb > 1) {
            ratio = second_d[i] > 0.0
                        ? static_cast<float>(std::sqrt(best_d[i] / second_d[i]))
                        : 1.0f;
        }
        if (ratio > ratio_max) continue;
        matches.push_back({i, j, static_cast<float>(std::sqrt(best_d[i])), ratio});
    }
    return matches;
}

} // namespace fieldstack
