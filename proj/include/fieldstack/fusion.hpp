#pragma once

#include <cstdint>
#include <vector>

#include "fieldstack/sgm.hpp"

namespace fieldstack {

/// Pixel accounting for a fused map. The four fractions partition the image:
/// both_valid + one_side + rejected + both_invalid = 1.
struct FuseStats {
    double both_valid = 0.0; // agreed, averaged
    double one_side = 0.0;   // filled from a single map
    double rejected = 0.0;   // both valid but disagreeing
    double both_invalid = 0.0;

    double valid() const { return both_valid + one_side; }
};

struct FusedDepth {
    DisparityMap map;
    FuseStats stats;
};

/// Consistency-gated merge of the two neighbour disparity maps: agreeing
/// pixels are averaged, one-sided pixels filled, disagreements invalidated.
FusedDepth fuse(const DisparityMap& d_prev, const DisparityMap& d_next, double agree_tol = 1.0);

enum class DepthNormPolicy : std::uint8_t { FixedRange, PerImage };

struct DepthNormalization {
    DepthNormPolicy policy = DepthNormPolicy::FixedRange;
    double lo = 0.0; // fixed-range bounds; ignored for PerImage
    double hi = 128.0;

    bool operator==(const DepthNormalization&) const = default;
};

struct NormalizedDepth {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> plane; // 0 = invalid, valid values in [1,255]
    double lo_used = 0.0;
    double hi_used = 0.0;
    DepthNormPolicy policy = DepthNormPolicy::FixedRange;
};

/// Linear map of valid disparities onto [1,255]; invalid pixels become 0.
NormalizedDepth normalize_depth(const FusedDepth& fused, const DepthNormalization& policy = {});
NormalizedDepth normalize_depth(const DisparityMap& map, const DepthNormalization& policy = {});

} // namespace fieldstack
