#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fieldstack {

/// One polygonal instance. `polygon` holds flat x0,y0,x1,y1,... vertex
/// coordinates; `score` is meaningful for predictions only.
struct InstanceMask {
    int id = 0;
    int image_id = 0;
    int category_id = 0;
    std::vector<double> polygon;
    double score = 1.0;
};

struct ImageInfo {
    int id = 0;
    int width = 0;
    int height = 0;
    std::string file_name;
};

struct CategoryInfo {
    int id = 0;
    std::string name;
};

struct Dataset {
    std::vector<ImageInfo> images;
    std::vector<CategoryInfo> categories;
    std::vector<InstanceMask> annotations;
};

using PredictionSet = std::vector<InstanceMask>;

struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits; // one byte per pixel, 0 or 1

    bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
};

/// Even-odd polygon fill sampled at pixel centres (x+0.5, y+0.5) with
/// half-open vertical edge handling, so shared edges never double-fill.
BinaryMask rasterize(const std::vector<double>& polygon, int width, int height);

double mask_iou(const BinaryMask& a, const BinaryMask& b);

struct Tally {
    long tp = 0;
    long fp = 0;
    long fn = 0;
};

/// precision = TP/(TP+FP), recall = TP/(TP+FN), each 0 when its denominator is 0.
std::pair<double, double> precision_recall(const Tally& t);

struct InstanceMatch {
    int pred_id = 0;
    int gt_id = -1; // -1 when unmatched (false positive)
    double iou = 0.0;
};

struct MatchResult {
    std::vector<InstanceMatch> matches; // predictions in processing order
    Tally tally;
};

/// Greedy same-category matching for one image: predictions in descending
/// score (ties: lower id) each take the unmatched ground truth with the
/// highest IoU >= iou_t (ties: lower ground-truth id).
MatchResult match_instances(const std::vector<InstanceMask>& preds,
                            const std::vector<InstanceMask>& gts, double iou_t, int width,
                            int height);

struct ThresholdEval {
    double iou_t = 0.0;
    std::optional<double> ap; // 0-100; absent when there is no ground truth
    double precision = 0.0;
    double recall = 0.0;
    Tally tally;
};

struct EvalReport {
    std::vector<ThresholdEval> thresholds; // IoU 0.50, 0.55, ..., 0.95
    std::optional<double> map;             // mean AP over the ten thresholds
    long image_count = 0;
    long gt_count = 0;
    long pred_count = 0;
};

/// Dataset-level 101-point interpolated AP at one threshold, on a 0-100
/// scale, averaged over categories present in the ground truth. Absent when
/// the ground truth is empty.
std::optional<double> average_precision(const Dataset& gt, const PredictionSet& preds,
                                        double iou_t);

EvalReport mean_average_precision(const Dataset& gt, const PredictionSet& preds);

Dataset load_coco_annotations(const std::filesystem::path& path);
/// Predictions get sequential ids in file order, which is the score tie-break.
PredictionSet load_coco_predictions(const std::filesystem::path& path, const Dataset& gt);

/// Seeded subsample of n images (and their instances), for spot-checking
/// large prediction sets.
void sample_images(Dataset& gt, PredictionSet& preds, int n, std::uint64_t seed);

std::string format_eval_report(const EvalReport& report);
std::string eval_report_json(const EvalReport& report);

} // namespace fieldstack
