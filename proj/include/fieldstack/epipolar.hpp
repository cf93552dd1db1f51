#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "fieldstack/image.hpp"

namespace fieldstack {

struct PointPair {
    double x1 = 0.0; // first image
    double y1 = 0.0;
    double x2 = 0.0; // second image
    double y2 = 0.0;
};

/// Rank-2 fundamental matrix in canonical form: unit Frobenius norm with the
/// largest-magnitude entry positive, so equal geometries compare equal.
struct FundamentalMatrix {
    std::array<double, 9> m{}; // row-major

    double operator()(int r, int c) const { return m[static_cast<std::size_t>(r) * 3 + c]; }
};

/// Normalized (isotropic-scaled) eight-point estimate.
FundamentalMatrix estimate_f_8point(const std::vector<PointPair>& pairs);

/// Translation-only estimate F = [e]x with a shared epipole: two degrees of
/// freedom instead of seven, so the epipole stays well conditioned even when
/// the scene relief is too shallow to pin a general fundamental matrix.
FundamentalMatrix estimate_f_translation(const std::vector<PointPair>& pairs);

/// First-order geometric error of a correspondence, in squared pixels.
/// Returns +infinity when the gradient denominator vanishes.
double sampson_distance(const FundamentalMatrix& f, const PointPair& p);

struct RansacParams {
    double threshold_px = 1.0; // inlier gate on sqrt(sampson)
    double confidence = 0.999;
    int max_iters = 2000;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const RansacParams&) const = default;
};

struct RobustFit {
    FundamentalMatrix f;
    std::vector<char> inlier_mask; // parallel to the input matches
    int inlier_count = 0;
    int iterations_used = 0;
    double inlier_rms_sampson = 0.0; // px
};

/// Seeded 8-sample RANSAC with adaptive iteration count; the winning model is
/// re-estimated on all of its inliers. Bit-reproducible for a fixed seed.
RobustFit ransac_f(const std::vector<PointPair>& matches, const RansacParams& params = {});

/// Projective rectification pair. h1 applies to image-1 points, h2 to
/// image-2 points; both target a shared output grid of size `extent`.
struct RectifyingPair {
    std::array<double, 9> h1{};
    std::array<double, 9> h2{};
    Extent extent;
    double vertical_rms = 0.0;           // px over the supplied inliers
    double vertical_frac_half_px = 0.0;  // fraction with |dy| <= 0.5 px
};

/// Uncalibrated rectification: the image-2 epipole is sent to infinity and
/// image 1 gets the matching transform with a least-squares affine x-fit.
RectifyingPair rectify(const FundamentalMatrix& f, const std::vector<PointPair>& inliers,
                       Extent image_size);

std::array<double, 9> invert_homography(const std::array<double, 9>& h);
void apply_homography(const std::array<double, 9>& h, double x, double y, double& ox, double& oy);

} // namespace fieldstack
