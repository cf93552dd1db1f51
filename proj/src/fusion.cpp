#include "fieldstack/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fieldstack/image.hpp"

namespace fieldstack {

FusedDepth fuse(const DisparityMap& d_prev, const DisparityMap& d_next, double agree_tol) {
    if (d_prev.width != d_next.width || d_prev.height != d_next.height) {
        throw Error("fuse: disparity maps have different sizes");
    }
    if (agree_tol < 0.0) throw Error("fuse: agreement tolerance must be non-negative");

    FusedDepth out;
    out.map.width = d_prev.width;
    out.map.height = d_prev.height;
    out.map.d_min = std::min(d_prev.d_min, d_next.d_min);
    out.map.d_max = std::max(d_prev.d_max, d_next.d_max);
    out.map.values.assign(static_cast<size_t>(out.map.width) * out.map.height,
                          DisparityMap::kInvalid);

    size_t n_both = 0, n_one = 0, n_rej = 0, n_none = 0;
    const size_t total = out.map.values.size();
    for (size_t i = 0; i < total; ++i) {
        const float a = d_prev.values[i];
        const float b = d_next.values[i];
        const bool va = !std::isnan(a);
        const bool vb = !std::isnan(b);
        if (va && vb) {
            if (std::abs(static_cast<double>(a) - b) <= agree_tol) {
                out.map.values[i] = 0.5f * (a + b);
                ++n_both;
            } else {
                ++n_rej;
            }
        } else if (va) {
            out.map.values[i] = a;
            ++n_one;
        } else if (vb) {
            out.map.values[i] = b;
            ++n_one;
        } else {
            ++n_none;
        }
    }

    const double denom = static_cast<double>(total);
    out.stats.both_valid = n_both / denom;
    out.stats.one_side = n_one / denom;
    out.stats.rejected = n_rej / denom;
    out.stats.both_invalid = n_none / denom;
    return out;
}

NormalizedDepth normalize_depth(const DisparityMap& map, const DepthNormalization& policy) {
    NormalizedDepth out;
    out.width = map.width;
    out.height = map.height;
    out.policy = policy.policy;
    out.plane.assign(static_cast<size_t>(map.width) * map.height, 0);

    double lo = policy.lo;
    double hi = policy.hi;
    if (policy.policy == DepthNormPolicy::PerImage) {
        lo = std::numeric_limits<double>::infinity();
        hi = -std::numeric_limits<double>::infinity();
        for (float v : map.values) {
            if (std::isnan(v)) continue;
            lo = std::min(lo, static_cast<double>(v));
            hi = std::max(hi, static_cast<double>(v));
        }
        if (!(lo <= hi)) {
            throw Error("normalize_depth: per-image range needs at least one valid pixel");
        }
    } else if (!(hi > lo)) {
        throw Error("normalize_depth: fixed range requires hi > lo");
    }
    out.lo_used = lo;
    out.hi_used = hi;

    const double span = hi - lo;
    for (size_t i = 0; i < map.values.size(); ++i) {
        const float v = map.values[i];
        if (std::isnan(v)) continue;
        if (span <= 0.0) {
            out.plane[i] = 128; // constant image: midpoint, still distinct from invalid
            continue;
        }
        const double t = std::clamp((static_cast<double>(v) - lo) / span, 0.0, 1.0);
        out.plane[i] = static_cast<std::uint8_t>(std::lround(1.0 + 254.0 * t));
    }
    return out;
}

NormalizedDepth normalize_depth(const FusedDepth& fused, const DepthNormalization& policy) {
    return normalize_depth(fused.map, policy);
}

} // namespace fieldstack
