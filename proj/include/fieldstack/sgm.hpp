#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "fieldstack/image.hpp"

namespace fieldstack {

/// Per-pixel real-valued disparity with NaN as the invalid marker.
struct DisparityMap {
    static constexpr float kInvalid = std::numeric_limits<float>::quiet_NaN();

    int width = 0;
    int height = 0;
    int d_min = 0;
    int d_max = 0;
    std::vector<float> values;

    DisparityMap() = default;
    DisparityMap(int w, int h, int dmin, int dmax)
        : width(w), height(h), d_min(dmin), d_max(dmax),
          values(static_cast<std::size_t>(w) * h, kInvalid) {}

    float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
    float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
    bool valid(int x, int y) const { return !std::isnan(at(x, y)); }

    double valid_fraction() const;
};

/// Census transform codes; up to 9x9 windows (80 comparison bits).
struct CensusImage {
    int width = 0;
    int height = 0;
    int win_w = 0;
    int win_h = 0;
    std::vector<std::uint64_t> lo; // bits 0..63
    std::vector<std::uint64_t> hi; // bits 64..
    std::vector<std::uint8_t> valid;

    int bit_count() const { return win_w * win_h - 1; }
};

struct CostVolume {
    int width = 0;
    int height = 0;
    int d_min = 0;
    int d_max = 0;
    std::uint16_t max_cost = 0;
    std::vector<std::uint16_t> cost; // layout: ((y*width)+x)*num_disp + (d-d_min)

    int num_disp() const { return d_max - d_min + 1; }
    std::uint16_t at(int x, int y, int d) const {
        return cost[(static_cast<std::size_t>(y) * width + x) * num_disp() + (d - d_min)];
    }
};

struct SgmParams {
    int census_w = 5;
    int census_h = 5;
    int p1 = 10;
    int p2 = 120;
    int paths = 8;
    int d_min = 0;
    int d_max = 128;
    double uniqueness_ratio = 0.95;
    double lr_tolerance = 1.0;

    void validate(int image_width) const;
    bool operator==(const SgmParams&) const = default;
};

/// Bit i is set iff the i-th window neighbour (raster order, centre skipped)
/// is strictly darker than the centre. Border pixels where the window does
/// not fit keep an all-zero code and are flagged invalid.
CensusImage census(const GrayImage& g, int win_w = 5, int win_h = 5);

enum class MatchDirection {
    LeftReference,  // match pixel of `other` at (x - d, y)
    RightReference, // match pixel of `other` at (x + d, y)
};

CostVolume build_cost_volume(const CensusImage& ref, const CensusImage& other, int d_min,
                             int d_max, MatchDirection dir = MatchDirection::LeftReference);

/// Eight-path semi-global aggregation with penalties P1 (|dd| = 1) and
/// P2 (|dd| > 1). Per-path values are bounded by max_cost + P2; the sum of
/// the eight paths must fit 16 bits, which validate() enforces up front.
CostVolume aggregate(const CostVolume& cv, int p1, int p2, int paths = 8);

DisparityMap select_disparity(const CostVolume& agg, double uniqueness_ratio = 0.95);

/// Left-right consistency gate followed by a 3x3 median over valid pixels.
DisparityMap lr_check(const DisparityMap& left, const DisparityMap& right, double tol = 1.0);

/// census -> cost -> aggregate -> select for both views, then lr_check.
DisparityMap compute_disparity(const GrayImage& left, const GrayImage& right,
                               const SgmParams& params = {});

/// Debug rendering: valid disparities normalized to [1,255], invalid as 0.
MultiChannelImage disparity_to_gray(const DisparityMap& d);

} // namespace fieldstack
