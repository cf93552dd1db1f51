#pragma once

#include <array>
#include <vector>

#include "fieldstack/image.hpp"

namespace fieldstack {

struct FeaturePoint {
    float x = 0.0f; // sub-pixel image coordinates
    float y = 0.0f;
    float scale = 0.0f;       // detection scale in pixels
    float orientation = 0.0f; // radians in [0, 2pi)
    int laplacian_sign = 1;   // sign of the Hessian trace, for match filtering
    float response = 0.0f;    // Hessian-determinant strength
};

struct SurfParams {
    double hessian_threshold = 4e-4; // determinant threshold on [0,1] images
    int octaves = 4;
    int layers_per_octave = 3; // interior scale layers scored per octave
    bool upright = false;      // skip orientation assignment

    void validate() const;
    bool operator==(const SurfParams&) const = default;
};

/// Box-filter Hessian detector over an octave pyramid: 3x3x3 non-maximum
/// suppression plus quadratic sub-pixel refinement. Results are sorted by
/// descending response.
std::vector<FeaturePoint> detect_features(const GrayImage& g, const SurfParams& params = {});

using Descriptor = std::array<float, 64>;

struct DescriptorSet {
    std::vector<Descriptor> descriptors;
    std::vector<int> point_indices; // descriptor i belongs to pts[point_indices[i]]
    std::vector<int> skipped;       // points too close to the border for a descriptor
};

/// Haar-wavelet orientation (written back into pts) and 4x4-subregion
/// gradient-statistics descriptors, unit-normalized.
DescriptorSet compute_descriptors(const GrayImage& g, std::vector<FeaturePoint>& pts,
                                  const SurfParams& params = {});

struct MatchPair {
    int index_a = 0; // descriptor indices, not feature indices
    int index_b = 0;
    float distance = 0.0f; // Euclidean descriptor distance
    float ratio = 0.0f;    // best / second-best distance; 0 when unique
};

/// Nearest-neighbour matching with Lowe's ratio test and a mutual-best
/// cross-check; the result is one-to-one.
std::vector<MatchPair> match_features(const std::vector<Descriptor>& a,
                                      const std::vector<Descriptor>& b,
                                      float ratio_max = 0.7f);

} // namespace fieldstack
