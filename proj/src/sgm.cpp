#include "fieldstack/sgm.hpp"

#include <algorithm>
#include <bit>

namespace fieldstack {

double DisparityMap::valid_fraction() const {
    if (values.empty()) return 0.0;
    std::size_t n = 0;
    for (const float v : values)
        if (!std::isnan(v)) ++n;
    return static_cast<double>(n) / values.size();
}

void SgmParams::validate(int image_width) const {
    if (census_w % 2 == 0 || census_h % 2 == 0 || census_w < 3 || census_h < 3 ||
        census_w > 9 || census_h > 9)
        throw Error("census window must be odd and between 3x3 and 9x9");
    if (!(p2 > p1 && p1 > 0)) throw Error("SGM penalties require P2 > P1 > 0");
    if (paths != 8) throw Error("only 8 aggregation paths are supported");
    if (d_max < d_min) throw Error("disparity range is empty");
    if (d_max - d_min + 1 > 256) throw Error("disparity range exceeds 256 steps");
    if (image_width > 0 && d_max - d_min + 1 > image_width)
        throw Error("disparity range exceeds image width");
    const long bound = 8L * ((census_w * census_h - 1) + p2);
    if (bound > 65535) throw Error("aggregated cost would overflow 16 bits (max_cost + P2 per path)");
    if (!(uniqueness_ratio > 0.0 && uniqueness_ratio <= 1.0))
        throw Error("uniqueness_ratio must be in (0,1]");
    if (lr_tolerance < 0.0) throw Error("lr_tolerance must be non-negative");
}

CensusImage census(const GrayImage& g, int win_w, int win_h) {
    if (win_w % 2 == 0 || win_h % 2 == 0 || win_w < 1 || win_h < 1 || win_w > 9 || win_h > 9)
        throw Error("census window must be odd and at most 9x9");
    CensusImage out;
    out.width = g.width;
    out.height = g.height;
    out.win_w = win_w;
    out.win_h = win_h;
    const std::size_t n = static_cast<std::size_t>(g.width) * g.height;
    out.lo.assign(n, 0);
    out.hi.assign(n, 0);
    out.valid.assign(n, 0);
    const int rx = win_w / 2;
    const int ry = win_h / 2;
    for (int y = ry; y < g.height - ry; ++y) {
        for (int x = rx; x < g.width - rx; ++x) {
            const float center = g.at(x, y);
            std::uint64_t lo = 0, hi = 0;
            int bit = 0;
            for (int dy = -ry; dy <= ry; ++dy) {
                for (int dx = -rx; dx <= rx; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    if (g.at(x + dx, y + dy) < center) {
                        if (bit < 64)
                            lo |= (std::uint64_t{1} << bit);
                        else
                            hi |= (std::uint64_t{1} << (bit - 64));
                    }
                    ++bit;
                }
            }
            const std::size_t i = static_cast<std::size_t>(y) * g.width + x;
            out.lo[i] = lo;
            out.hi[i] = hi;
            out.valid[i] = 1;
        }
    }
    return out;
}

CostVolume build_cost_volume(const CensusImage& ref, const CensusImage& other, int d_min,
                             int d_max, MatchDirection dir) {
    if (ref.width != other.width || ref.height != other.height)
        throw Error("cost volume inputs must have equal dimensions");
    if (d_max < d_min) throw Error("disparity range is empty");
    const int nd = d_max - d_min + 1;
    if (nd > 256) throw Error("disparity range exceeds 256 steps");
    if (nd > ref.width) throw Error("disparity range exceeds image width");

    CostVolume cv;
    cv.width = ref.width;
    cv.height = ref.height;
    cv.d_min = d_min;
    cv.d_max = d_max;
    cv.max_cost = static_cast<std::uint16_t>(ref.bit_count());
    cv.cost.assign(static_cast<std::size_t>(ref.width) * ref.height * nd, cv.max_cost);

    const int step = (dir == MatchDirection::LeftReference) ? -1 : 1;
    for (int y = 0; y < ref.height; ++y) {
        for (int x = 0; x < ref.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * ref.width + x;
            if (!ref.valid[i]) continue; // border codes carry no signal
            std::uint16_t* dst = cv.cost.data() + i * nd;
            for (int d = d_min; d <= d_max; ++d) {
                const int xo = x + step * d;
                if (xo < 0 || xo >= ref.width) continue; // leave max cost
                const std::size_t j = static_cast<std::size_t>(y) * ref.width + xo;
                if (!other.valid[j]) continue;
                const std::uint64_t xl = ref.lo[i] ^ other.lo[j];
                const std::uint64_t xh = ref.hi[i] ^ other.hi[j];
                dst[d - d_min] = static_cast<std::uint16_t>(std::popcount(xl) + std::popcount(xh));
            }
        }
    }
    return cv;
}

namespace {

// One scan direction: dx,dy is the step from the path predecessor to the
// current pixel.
struct PathDir {
    int dx;
    int dy;
};

// L_r(p,d) = C(p,d) + min(L(q,d), L(q,d+-1)+P1, minL(q)+P2) - minL(q),
// where q = p - r. Row buffers hold L for the previous row per direction.
class PathState {
public:
    PathState(int width, int nd) : width_(width), nd_(nd) {
        prev_row_.assign(static_cast<std::size_t>(width) * nd, 0);
        cur_row_.assign(static_cast<std::size_t>(width) * nd, 0);
        has_prev_row_ = false;
    }

    void start_row() { cur_valid_.assign(width_, 0); }

    void end_row() {
        std::swap(prev_row_, cur_row_);
        prev_valid_ = cur_valid_;
        has_prev_row_ = true;
    }

    const std::uint16_t* prev(int x) const {
        if (!has_prev_row_ || x < 0 || x >= width_ || !prev_valid_[x]) return nullptr;
        return prev_row_.data() + static_cast<std::size_t>(x) * nd_;
    }

    std::uint16_t* cur(int x) {
        cur_valid_[x] = 1;
        return cur_row_.data() + static_cast<std::size_t>(x) * nd_;
    }

private:
    int width_;
    int nd_;
    bool has_prev_row_ = false;
    std::vector<std::uint16_t> prev_row_, cur_row_;
    std::vector<std::uint8_t> prev_valid_, cur_valid_;
};

void accumulate_path(const std::uint16_t* c, const std::uint16_t* pred, std::uint16_t* out_l,
                     std::uint16_t* agg, int nd, int p1, int p2) {
    if (!pred) {
        for (int k = 0; k < nd; ++k) {
            out_l[k] = c[k];
            agg[k] = static_cast<std::uint16_t>(agg[k] + c[k]);
        }
        return;
    }
    std::uint16_t min_prev = pred[0];
    for (int k = 1; k < nd; ++k) min_prev = std::min(min_prev, pred[k]);
    const int jump = min_prev + p2;
    for (int k = 0; k < nd; ++k) {
        int best = pred[k];
        if (k > 0) best = std::min(best, pred[k - 1] + p1);
        if (k + 1 < nd) best = std::min(best, pred[k + 1] + p1);
        best = std::min(best, jump);
        const int l = c[k] + best - min_prev;
        out_l[k] = static_cast<std::uint16_t>(l);
        agg[k] = static_cast<std::uint16_t>(agg[k] + l);
    }
}

} // namespace

CostVolume aggregate(const CostVolume& cv, int p1, int p2, int paths) {
    if (!(p2 > p1 && p1 > 0)) throw Error("SGM penalties require P2 > P1 > 0");
    if (paths != 8) throw Error("only 8 aggregation paths are supported");
    if (8L * (cv.max_cost + p2) > 65535)
        throw Error("aggregated cost would overflow 16 bits (max_cost + P2 per path)");

    const int W = cv.width, H = cv.height, nd = cv.num_disp();
    CostVolume agg;
    agg.width = W;
    agg.height = H;
    agg.d_min = cv.d_min;
    agg.d_max = cv.d_max;
    agg.max_cost = static_cast<std::uint16_t>(8 * (cv.max_cost + p2));
    agg.cost.assign(cv.cost.size(), 0);

    const auto cost_ptr = [&](int x, int y) {
        return cv.cost.data() + (static_cast<std::size_t>(y) * W + x) * nd;
    };
    const auto agg_ptr = [&](int x, int y) {
        return agg.cost.data() + (static_cast<std::size_t>(y) * W + x) * nd;
    };

    std::vector<std::uint16_t> lr_buf(nd);

    // Forward scan: paths arriving from the left and from the previous row.
    {
        const PathDir row_dirs[3] = {{0, 1}, {1, 1}, {-1, 1}};
        std::vector<PathState> states;
        for (int i = 0; i < 3; ++i) states.emplace_back(W, nd);
        std::vector<std::uint16_t> horiz(nd);
        for (int y = 0; y < H; ++y) {
            for (auto& s : states) s.start_row();
            bool has_horiz = false;
            for (int x = 0; x < W; ++x) {
                const std::uint16_t* c = cost_ptr(x, y);
                std::uint16_t* a = agg_ptr(x, y);
                accumulate_path(c, has_horiz ? horiz.data() : nullptr, lr_buf.data(), a, nd, p1, p2);
                horiz = lr_buf;
                has_horiz = true;
                for (int k = 0; k < 3; ++k) {
                    const std::uint16_t* pred = states[k].prev(x - row_dirs[k].dx);
                    accumulate_path(c, pred, states[k].cur(x), a, nd, p1, p2);
                }
            }
            for (auto& s : states) s.end_row();
        }
    }

    // Backward scan: paths arriving from the right and from the next row.
    {
        const PathDir row_dirs[3] = {{0, -1}, {-1, -1}, {1, -1}};
        std::vector<PathState> states;
        for (int i = 0; i < 3; ++i) states.emplace_back(W, nd);
        std::vector<std::uint16_t> horiz(nd);
        for (int y = H - 1; y >= 0; --y) {
            for (auto& s : states) s.start_row();
            bool has_horiz = false;
            for (int x = W - 1; x >= 0; --x) {
                const std::uint16_t* c = cost_ptr(x, y);
                std::uint16_t* a = agg_ptr(x, y);
                accumulate_path(c, has_horiz ? horiz.data() : nullptr, lr_buf.data(), a, nd, p1, p2);
                horiz = lr_buf;
                has_horiz = true;
                for (int k = 0; k < 3; ++k) {
                    const std::uint16_t* pred = states[k].prev(x - row_dirs[k].dx);
                    accumulate_path(c, pred, states[k].cur(x), a, nd, p1, p2);
                }
            }
            for (auto& s : states) s.end_row();
        }
    }

    return agg;
}

DisparityMap select_disparity(const CostVolume& agg, double uniqueness_ratio) {
    if (!(uniqueness_ratio > 0.0 && uniqueness_ratio <= 1.0))
        throw Error("uniqueness_ratio must be in (0,1]");
    const int W = agg.width, H = agg.height, nd = agg.num_disp();
    DisparityMap out(W, H, agg.d_min, agg.d_max);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::uint16_t* c = agg.cost.data() + (static_cast<std::size_t>(y) * W + x) * nd;
            int best_k = 0;
            for (int k = 1; k < nd; ++k)
                if (c[k] < c[best_k]) best_k = k;
            const std::uint16_t best = c[best_k];

            // Second-best excludes the winner and its immediate neighbours.
            int second = -1;
            for (int k = 0; k < nd; ++k) {
                if (std::abs(k - best_k) <= 1) continue;
                if (second < 0 || c[k] < second) second = c[k];
            }
            if (second >= 0 && !(static_cast<double>(best) < uniqueness_ratio * second)) continue;

            double d = agg.d_min + best_k;
            if (best_k > 0 && best_k + 1 < nd) {
                const double cm = c[best_k - 1], c0 = c[best_k], cp = c[best_k + 1];
                const double denom = 2.0 * (cm - 2.0 * c0 + cp);
                if (denom > 0.0) d += (cm - cp) / denom;
            }
            out.at(x, y) = static_cast<float>(d);
        }
    }
    return out;
}

DisparityMap lr_check(const DisparityMap& left, const DisparityMap& right, double tol) {
    if (left.width != right.width || left.height != right.height)
        throw Error("lr_check inputs must have equal dimensions");
    DisparityMap gated(left.width, left.height, left.d_min, left.d_max);
    for (int y = 0; y < left.height; ++y) {
        for (int x = 0; x < left.width; ++x) {
            const float dl = left.at(x, y);
            if (std::isnan(dl)) continue;
            const int xr = x - static_cast<int>(std::lround(dl));
            if (xr < 0 || xr >= right.width) continue;
            const float dr = right.at(xr, y);
            if (std::isnan(dr)) continue;
            if (std::abs(dl - dr) <= tol) gated.at(x, y) = dl;
        }
    }

    // 3x3 median over valid pixels; lower median for even counts so output
    // values always come from the input set.
    DisparityMap out(left.width, left.height, left.d_min, left.d_max);
    float window[9];
    for (int y = 0; y < left.height; ++y) {
        for (int x = 0; x < left.width; ++x) {
            if (!gated.valid(x, y)) continue;
            int n = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int xx = x + dx, yy = y + dy;
                    if (xx < 0 || yy < 0 || xx >= left.width || yy >= left.height) continue;
                    const float v = gated.at(xx, yy);
                    if (!std::isnan(v)) window[n++] = v;
                }
            }
            std::sort(window, window + n);
            out.at(x, y) = window[(n - 1) / 2];
        }
    }
    return out;
}

DisparityMap compute_disparity(const GrayImage& left, const GrayImage& right,
                               const SgmParams& params) {
    if (left.width != right.width || left.height != right.height)
        throw Error("stereo pair must have equal dimensions");
    params.validate(left.width);

    const CensusImage cl = census(left, params.census_w, params.census_h);
    const CensusImage cr = census(right, params.census_w, params.census_h);

    const CostVolume cvl =
        build_cost_volume(cl, cr, params.d_min, params.d_max, MatchDirection::LeftReference);
    const DisparityMap dl = select_disparity(aggregate(cvl, params.p1, params.p2, params.paths),
                                             params.uniqueness_ratio);

    const CostVolume cvr =
        build_cost_volume(cr, cl, params.d_min, params.d_max, MatchDirection::RightReference);
    const DisparityMap dr = select_disparity(aggregate(cvr, params.p1, params.p2, params.paths),
                                             params.uniqueness_ratio);

    return lr_check(dl, dr, params.lr_tolerance);
}

MultiChannelImage disparity_to_gray(const DisparityMap& d) {
    MultiChannelImage out(d.width, d.height, {Channel::Gray});
    auto plane = out.plane_u8(0);
    float lo = std::numeric_limits<float>::max();
    float hi = std::numeric_limits<float>::lowest();
    for (const float v : d.values) {
        if (std::isnan(v)) continue;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = (hi > lo) ? hi - lo : 1.0;
    for (std::size_t i = 0; i < d.values.size(); ++i) {
        const float v = d.values[i];
        if (std::isnan(v)) continue;
        plane[i] = static_cast<std::uint8_t>(1 + std::lround(254.0 * (v - lo) / span));
    }
    return out;
}

} // namespace fieldstack
