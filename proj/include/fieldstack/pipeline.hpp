#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fieldstack/colorspace.hpp"
#include "fieldstack/epipolar.hpp"
#include "fieldstack/features.hpp"
#include "fieldstack/fusion.hpp"
#include "fieldstack/sgm.hpp"
#include "fieldstack/stack.hpp"

namespace fieldstack {

struct PipelineConfig {
    std::string frame_dir;
    int stride = 1; // neighbour offset for the prev/next pairs
    std::uint64_t seed = 0;
    SurfParams features;
    double ratio_max = 0.7; // descriptor match acceptance
    RansacParams ransac;    // its seed field is unused; seeds derive from `seed`
    SgmParams sgm = rectified_sgm_defaults();
    double fuse_agree_tol = 1.0;
    DepthNormalization depth_norm{DepthNormPolicy::FixedRange, -32.0, 32.0};
    std::vector<StackSpec> stacks{StackSpec{ColourSpace::LAB, true}};
    std::string output_dir;
    int workers = 0; // 0 = one per hardware thread

    /// Rectification centres the disparity distribution near zero, so the
    /// pipeline searches a symmetric range instead of the stereo default.
    static SgmParams rectified_sgm_defaults() {
        SgmParams p;
        p.d_min = -32;
        p.d_max = 32;
        return p;
    }

    bool operator==(const PipelineConfig&) const = default;
};

std::string config_json(const PipelineConfig& config);
PipelineConfig parse_config_json(const std::string& text, const std::string& origin);
PipelineConfig load_config(const std::filesystem::path& path);
void save_config(const PipelineConfig& config, const std::filesystem::path& path);

/// Parameter sanity only; set `require_paths` to also demand that the frame
/// directory exists.
void validate_config(const PipelineConfig& config, bool require_paths);

struct FrameTriple {
    int index = 0; // position in the triple list
    int prev_index = 0;
    int center_index = 0;
    int next_index = 0;
    std::filesystem::path prev;
    std::filesystem::path center;
    std::filesystem::path next;
};

/// Lexicographically ordered frames windowed into overlapping
/// (center - stride, center, center + stride) triples.
std::vector<FrameTriple> ingest(const std::filesystem::path& dir, int stride = 1);

struct PairDiagnostics {
    int features_center = 0;
    int features_neighbor = 0;
    int matches = 0;
    int inliers = 0;
    int ransac_iterations = 0;
    double inlier_rms_sampson = 0.0;
    double median_displacement = 0.0;  // px between matched points
    double vertical_rms = 0.0;         // px after rectification
    double valid_fraction = 0.0;       // of the per-pair disparity map
    bool translation_model = false;    // general F was unrectifiable; used [e]x
};

struct DepthResult {
    FusedDepth fused;          // parallax against the centre frame's grid, px
    NormalizedDepth normalized;
    PairDiagnostics prev_pair;
    PairDiagnostics next_pair;
};

/// Full per-triple depth flow: features, robust F, rectification, SGM, and
/// un-warping of both neighbour disparities onto the centre frame before
/// fusion. Throws Error with a reason ("too few matches", "insufficient
/// parallax", ...) when a stage cannot proceed.
DepthResult run_depth(const MultiChannelImage& prev, const MultiChannelImage& center,
                      const MultiChannelImage& next, const PipelineConfig& config,
                      std::uint64_t pair_seed_base = 0);
DepthResult run_depth(const FrameTriple& triple, const PipelineConfig& config);

struct TripleOutcome {
    int index = 0;
    std::string center_name;
    bool ok = false;
    std::string error; // failure reason when !ok
    PairDiagnostics prev_pair;
    PairDiagnostics next_pair;
    FuseStats fuse_stats;
};

struct PipelineSummary {
    int triples = 0;
    int successes = 0;
    int failures = 0;
    std::vector<TripleOutcome> outcomes; // ordered by triple index
    std::vector<std::string> outputs;    // file names under the output directory
    ExposureReport exposure;             // over all centre frames
};

/// End-to-end batch: per-triple depth, one container file per configured
/// stack variant, an exposure report, and a machine-readable summary.
/// Failed triples are recorded and skipped; outputs are byte-identical for
/// identical config and seed.
PipelineSummary run_pipeline(const PipelineConfig& config);

std::string summary_json(const PipelineSummary& summary);
std::string format_summary(const PipelineSummary& summary);

} // namespace fieldstack
