#include "fieldstack/segeval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "fieldstack/image.hpp"
#include "fieldstack/rng.hpp"

namespace fieldstack {

namespace {

using nlohmann::json;

constexpr int kRecallPoints = 101;

std::vector<double> iou_thresholds() {
    std::vector<double> t(10);
    for (int k = 0; k < 10; ++k) t[static_cast<std::size_t>(k)] = (50 + 5 * k) / 100.0;
    return t;
}

// Sort order for predictions: score descending, id ascending.
bool pred_before(const InstanceMask& a, const InstanceMask& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
}

void check_polygon(const InstanceMask& inst, int width, int height) {
    if (inst.polygon.size() % 2 != 0 || inst.polygon.size() < 6) {
        throw Error("instance " + std::to_string(inst.id) +
                    ": polygon needs at least 3 (x,y) vertices");
    }
    for (std::size_t i = 0; i < inst.polygon.size(); i += 2) {
        const double x = inst.polygon[i];
        const double y = inst.polygon[i + 1];
        if (!(x >= 0.0 && x <= width && y >= 0.0 && y <= height)) {
            throw Error("instance " + std::to_string(inst.id) + ": vertex (" + std::to_string(x) +
                        ", " + std::to_string(y) + ") outside image bounds");
        }
    }
}

struct Indexed {
    const ImageInfo* image = nullptr;
    std::vector<int> gt;   // indices into gt.annotations
    std::vector<int> pred; // indices into preds
};

} // namespace

BinaryMask rasterize(const std::vector<double>& polygon, int width, int height) {
    if (polygon.size() % 2 != 0 || polygon.size() < 6) {
        throw Error("polygon needs at least 3 (x,y) vertices");
    }
    if (width <= 0 || height <= 0) throw Error("mask dimensions must be positive");

    BinaryMask mask;
    mask.width = width;
    mask.height = height;
    mask.bits.assign(static_cast<std::size_t>(width) * height, 0);

    const std::size_t nv = polygon.size() / 2;
    std::vector<double> xs;
    std::size_t filled = 0;
    for (int y = 0; y < height; ++y) {
        const double yc = y + 0.5;
        xs.clear();
        for (std::size_t i = 0; i < nv; ++i) {
            const std::size_t j = (i + 1) % nv;
            const double y1 = polygon[2 * i + 1], y2 = polygon[2 * j + 1];
            if ((y1 <= yc) == (y2 <= yc)) continue; // half-open: no crossing
            const double x1 = polygon[2 * i], x2 = polygon[2 * j];
            xs.push_back(x1 + (yc - y1) * (x2 - x1) / (y2 - y1));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            // pixel centre x+0.5 in [xs[k], xs[k+1])
            const int x_begin = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
            const int x_end = std::min(width, static_cast<int>(std::ceil(xs[k + 1] - 0.5)));
            for (int x = x_begin; x < x_end; ++x) {
                mask.bits[static_cast<std::size_t>(y) * width + x] = 1;
                ++filled;
            }
        }
    }
    if (filled == 0) throw Error("polygon rasterizes to an empty mask");
    return mask;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
    if (a.width != b.width || a.height != b.height) {
        throw Error("mask dimensions differ");
    }
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        const bool pa = a.bits[i] != 0, pb = b.bits[i] != 0;
        inter += pa && pb ? 1 : 0;
        uni += pa || pb ? 1 : 0;
    }
    if (uni == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::pair<double, double> precision_recall(const Tally& t) {
    const double precision = t.tp + t.fp > 0 ? static_cast<double>(t.tp) / (t.tp + t.fp) : 0.0;
    const double recall = t.tp + t.fn > 0 ? static_cast<double>(t.tp) / (t.tp + t.fn) : 0.0;
    return {precision, recall};
}

MatchResult match_instances(const std::vector<InstanceMask>& preds,
                            const std::vector<InstanceMask>& gts, double iou_t, int width,
                            int height) {
    if (!preds.empty() || !gts.empty()) {
        const int image_id = preds.empty() ? gts.front().image_id : preds.front().image_id;
        for (const auto* list : {&preds, &gts}) {
            for (const InstanceMask& m : *list) {
                if (m.image_id != image_id) {
                    throw Error("match_instances: instances span multiple images");
                }
            }
        }
    }

    std::vector<BinaryMask> pred_masks, gt_masks;
    pred_masks.reserve(preds.size());
    gt_masks.reserve(gts.size());
    for (const InstanceMask& m : preds) pred_masks.push_back(rasterize(m.polygon, width, height));
    for (const InstanceMask& m : gts) gt_masks.push_back(rasterize(m.polygon, width, height));

    std::vector<int> order(preds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return pred_before(preds[static_cast<std::size_t>(a)],
                                                     preds[static_cast<std::size_t>(b)]); });

    MatchResult result;
    std::vector<char> gt_taken(gts.size(), 0);
    for (int pi : order) {
        const InstanceMask& p = preds[static_cast<std::size_t>(pi)];
        int best_gt = -1;
        double best_iou = 0.0;
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            const InstanceMask& g = gts[gi];
            if (gt_taken[gi] || g.category_id != p.category_id) continue;
            const double iou = mask_iou(pred_masks[static_cast<std::size_t>(pi)], gt_masks[gi]);
            if (iou < iou_t) continue;
            const bool better = best_gt < 0 || iou > best_iou ||
                                (iou == best_iou && g.id < gts[static_cast<std::size_t>(best_gt)].id);
            if (better) {
                best_iou = iou;
                best_gt = static_cast<int>(gi);
            }
        }
        InstanceMatch m;
        m.pred_id = p.id;
        if (best_gt >= 0) {
            gt_taken[static_cast<std::size_t>(best_gt)] = 1;
            m.gt_id = gts[static_cast<std::size_t>(best_gt)].id;
            m.iou = best_iou;
            ++result.tally.tp;
        } else {
            ++result.tally.fp;
        }
        result.matches.push_back(m);
    }
    result.tally.fn = static_cast<long>(gts.size()) - result.tally.tp;
    return result;
}

namespace {

struct EvalContext {
    std::vector<int> image_ids;                       // sorted
    std::unordered_map<int, const ImageInfo*> images; // by id
    std::vector<int> categories;                      // sorted, union of all seen
    std::vector<BinaryMask> gt_masks;                 // parallel to gt.annotations
    std::vector<BinaryMask> pred_masks;               // parallel to preds
    // per (image, category): instance indices and their IoU matrix
    std::map<std::pair<int, int>, std::vector<int>> gt_by_cell;
    std::map<std::pair<int, int>, std::vector<int>> pred_by_cell;
    std::map<std::pair<int, int>, std::vector<double>> iou_by_cell; // pred-major
    std::map<int, std::vector<int>> pred_order_by_cat;              // global score order
    std::map<int, long> gt_count_by_cat;
};

EvalContext build_context(const Dataset& gt, const PredictionSet& preds) {
    EvalContext ctx;

    std::unordered_set<int> seen_images;
    for (const ImageInfo& im : gt.images) {
        if (im.width <= 0 || im.height <= 0) {
            throw Error("image " + std::to_string(im.id) + ": non-positive dimensions");
        }
        if (!seen_images.insert(im.id).second) {
            throw Error("duplicate image id " + std::to_string(im.id));
        }
        ctx.images.emplace(im.id, &im);
        ctx.image_ids.push_back(im.id);
    }
    std::sort(ctx.image_ids.begin(), ctx.image_ids.end());

    std::set<int> cats;
    for (const CategoryInfo& c : gt.categories) cats.insert(c.id);

    std::unordered_set<int> ids;
    for (const InstanceMask& a : gt.annotations) {
        if (!ids.insert(a.id).second) {
            throw Error("duplicate annotation id " + std::to_string(a.id));
        }
        auto it = ctx.images.find(a.image_id);
        if (it == ctx.images.end()) {
            throw Error("annotation " + std::to_string(a.id) + ": unknown image id " +
                        std::to_string(a.image_id));
        }
        check_polygon(a, it->second->width, it->second->height);
        cats.insert(a.category_id);
    }
    ids.clear();
    for (const InstanceMask& p : preds) {
        if (!ids.insert(p.id).second) {
            throw Error("duplicate prediction id " + std::to_string(p.id));
        }
        auto it = ctx.images.find(p.image_id);
        if (it == ctx.images.end()) {
            throw Error("prediction " + std::to_string(p.id) + ": unknown image id " +
                        std::to_string(p.image_id));
        }
        if (!(p.score >= 0.0 && p.score <= 1.0)) {
            throw Error("prediction " + std::to_string(p.id) + ": score outside [0,1]");
        }
        check_polygon(p, it->second->width, it->second->height);
        cats.insert(p.category_id);
    }
    ctx.categories.assign(cats.begin(), cats.end());

    ctx.gt_masks.reserve(gt.annotations.size());
    for (std::size_t i = 0; i < gt.annotations.size(); ++i) {
        const InstanceMask& a = gt.annotations[i];
        const ImageInfo* im = ctx.images.at(a.image_id);
        ctx.gt_masks.push_back(rasterize(a.polygon, im->width, im->height));
        ctx.gt_by_cell[{a.image_id, a.category_id}].push_back(static_cast<int>(i));
        ++ctx.gt_count_by_cat[a.category_id];
    }
    ctx.pred_masks.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const InstanceMask& p = preds[i];
        const ImageInfo* im = ctx.images.at(p.image_id);
        ctx.pred_masks.push_back(rasterize(p.polygon, im->width, im->height));
        ctx.pred_by_cell[{p.image_id, p.category_id}].push_back(static_cast<int>(i));
        ctx.pred_order_by_cat[p.category_id].push_back(static_cast<int>(i));
    }

    for (auto& [cell, pis] : ctx.pred_by_cell) {
        std::sort(pis.begin(), pis.end(), [&](int a, int b) {
            return pred_before(preds[static_cast<std::size_t>(a)],
                               preds[static_cast<std::size_t>(b)]);
        });
        const auto git = ctx.gt_by_cell.find(cell);
        if (git == ctx.gt_by_cell.end()) continue;
        std::vector<double>& ious = ctx.iou_by_cell[cell];
        ious.resize(pis.size() * git->second.size());
        for (std::size_t a = 0; a < pis.size(); ++a) {
            for (std::size_t b = 0; b < git->second.size(); ++b) {
                ious[a * git->second.size() + b] =
                    mask_iou(ctx.pred_masks[static_cast<std::size_t>(pis[a])],
                             ctx.gt_masks[static_cast<std::size_t>(git->second[b])]);
            }
        }
    }
    for (auto& [cat, order] : ctx.pred_order_by_cat) {
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return pred_before(preds[static_cast<std::size_t>(a)],
                               preds[static_cast<std::size_t>(b)]);
        });
    }
    return ctx;
}

struct ThresholdOutcome {
    std::vector<char> pred_tp; // parallel to preds
    Tally tally;
};

ThresholdOutcome match_at_threshold(const EvalContext& ctx, const Dataset& gt,
                                    const PredictionSet& preds, double iou_t) {
    ThresholdOutcome out;
    out.pred_tp.assign(preds.size(), 0);

    for (int image_id : ctx.image_ids) {
        for (int cat : ctx.categories) {
            const std::pair<int, int> cell{image_id, cat};
            const auto pit = ctx.pred_by_cell.find(cell);
            const auto git = ctx.gt_by_cell.find(cell);
            const std::size_t ngt = git == ctx.gt_by_cell.end() ? 0 : git->second.size();
            if (pit == ctx.pred_by_cell.end()) {
                out.tally.fn += static_cast<long>(ngt);
                continue;
            }
            const std::vector<int>& pis = pit->second;
            std::vector<char> taken(ngt, 0);
            long matched = 0;
            const std::vector<double>* ious =
                ngt > 0 ? &ctx.iou_by_cell.at(cell) : nullptr;
            auto gt_id = [&](std::size_t b) {
                return gt.annotations[static_cast<std::size_t>(git->second[b])].id;
            };
            for (std::size_t a = 0; a < pis.size(); ++a) {
                int best = -1;
                double best_iou = 0.0;
                for (std::size_t b = 0; b < ngt; ++b) {
                    if (taken[b]) continue;
                    const double iou = (*ious)[a * ngt + b];
                    if (iou < iou_t) continue;
                    const bool better =
                        best < 0 || iou > best_iou ||
                        (iou == best_iou && gt_id(b) < gt_id(static_cast<std::size_t>(best)));
                    if (better) {
                        best = static_cast<int>(b);
                        best_iou = iou;
                    }
                }
                if (best >= 0) {
                    taken[static_cast<std::size_t>(best)] = 1;
                    out.pred_tp[static_cast<std::size_t>(pis[a])] = 1;
                    ++matched;
                    ++out.tally.tp;
                } else {
                    ++out.tally.fp;
                }
            }
            out.tally.fn += static_cast<long>(ngt) - matched;
        }
    }
    return out;
}

std::optional<double> ap_from_outcome(const EvalContext& ctx, const ThresholdOutcome& outcome) {
    double sum = 0.0;
    int cats_with_gt = 0;
    for (int cat : ctx.categories) {
        const auto git = ctx.gt_count_by_cat.find(cat);
        const long ngt = git == ctx.gt_count_by_cat.end() ? 0 : git->second;
        if (ngt == 0) continue;
        ++cats_with_gt;

        const auto oit = ctx.pred_order_by_cat.find(cat);
        std::vector<double> prec, rec;
        if (oit != ctx.pred_order_by_cat.end()) {
            long tp = 0, fp = 0;
            prec.reserve(oit->second.size());
            rec.reserve(oit->second.size());
            for (int pi : oit->second) {
                outcome.pred_tp[static_cast<std::size_t>(pi)] ? ++tp : ++fp;
                prec.push_back(static_cast<double>(tp) / (tp + fp));
                rec.push_back(static_cast<double>(tp) / ngt);
            }
        }
        // precision envelope: running max from the right
        std::vector<double> env(prec.size());
        double run = 0.0;
        for (std::size_t k = prec.size(); k-- > 0;) {
            run = std::max(run, prec[k]);
            env[k] = run;
        }
        double ap_sum = 0.0;
        std::size_t k = 0;
        for (int j = 0; j < kRecallPoints; ++j) {
            const double r = j / 100.0;
            while (k < rec.size() && rec[k] < r) ++k;
            ap_sum += k < env.size() ? env[k] : 0.0;
        }
        sum += 100.0 * (ap_sum / kRecallPoints);
    }
    if (cats_with_gt == 0) return std::nullopt;
    return sum / cats_with_gt;
}

} // namespace

std::optional<double> average_precision(const Dataset& gt, const PredictionSet& preds,
                                        double iou_t) {
    const EvalContext ctx = build_context(gt, preds);
    return ap_from_outcome(ctx, match_at_threshold(ctx, gt, preds, iou_t));
}

EvalReport mean_average_precision(const Dataset& gt, const PredictionSet& preds) {
    const EvalContext ctx = build_context(gt, preds);

    EvalReport report;
    report.image_count = static_cast<long>(gt.images.size());
    report.gt_count = static_cast<long>(gt.annotations.size());
    report.pred_count = static_cast<long>(preds.size());

    double sum = 0.0;
    bool have_all = true;
    for (double t : iou_thresholds()) {
        const ThresholdOutcome outcome = match_at_threshold(ctx, gt, preds, t);
        ThresholdEval row;
        row.iou_t = t;
        row.ap = ap_from_outcome(ctx, outcome);
        row.tally = outcome.tally;
        std::tie(row.precision, row.recall) = precision_recall(outcome.tally);
        if (row.ap) {
            sum += *row.ap;
        } else {
            have_all = false;
        }
        report.thresholds.push_back(row);
    }
    if (have_all) report.map = sum / static_cast<double>(report.thresholds.size());
    return report;
}

Dataset load_coco_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("unreadable file: " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw Error("cannot parse " + path.string() + ": " + e.what());
    }
    if (!doc.is_object() || !doc.contains("images") || !doc.contains("annotations")) {
        throw Error(path.string() + ": expected an object with 'images' and 'annotations'");
    }

    Dataset ds;
    try {
        for (const json& im : doc.at("images")) {
            ImageInfo info;
            info.id = im.at("id").get<int>();
            info.width = im.at("width").get<int>();
            info.height = im.at("height").get<int>();
            info.file_name = im.value("file_name", std::string{});
            ds.images.push_back(std::move(info));
        }
        for (const json& cat : doc.value("categories", json::array())) {
            ds.categories.push_back({cat.at("id").get<int>(),
                                     cat.value("name", std::string{})});
        }
        for (const json& an : doc.at("annotations")) {
            InstanceMask inst;
            inst.id = an.at("id").get<int>();
            inst.image_id = an.at("image_id").get<int>();
            inst.category_id = an.at("category_id").get<int>();
            const json& seg = an.at("segmentation");
            if (!seg.is_array() || seg.size() != 1 || !seg[0].is_array()) {
                throw Error("annotation " + std::to_string(inst.id) +
                            ": segmentation must be a single polygon");
            }
            inst.polygon = seg[0].get<std::vector<double>>();
            ds.annotations.push_back(std::move(inst));
        }
    } catch (const json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
    return ds;
}

PredictionSet load_coco_predictions(const std::filesystem::path& path, const Dataset& gt) {
    std::ifstream in(path);
    if (!in) throw Error("unreadable file: " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw Error("cannot parse " + path.string() + ": " + e.what());
    }
    if (!doc.is_array()) throw Error(path.string() + ": expected an array of predictions");

    std::unordered_set<int> known;
    for (const ImageInfo& im : gt.images) known.insert(im.id);

    PredictionSet preds;
    int next_id = 0;
    try {
        for (const json& p : doc) {
            InstanceMask inst;
            inst.id = next_id++;
            inst.image_id = p.at("image_id").get<int>();
            inst.category_id = p.at("category_id").get<int>();
            inst.score = p.at("score").get<double>();
            const json& seg = p.at("segmentation");
            if (!seg.is_array() || seg.size() != 1 || !seg[0].is_array()) {
                throw Error("prediction " + std::to_string(inst.id) +
                            ": segmentation must be a single polygon");
            }
            inst.polygon = seg[0].get<std::vector<double>>();
            if (known.find(inst.image_id) == known.end()) {
                throw Error("prediction " + std::to_string(inst.id) + ": unknown image id " +
                            std::to_string(inst.image_id));
            }
            preds.push_back(std::move(inst));
        }
    } catch (const json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
    return preds;
}

void sample_images(Dataset& gt, PredictionSet& preds, int n, std::uint64_t seed) {
    if (n <= 0) throw Error("sample size must be positive");
    if (static_cast<std::size_t>(n) >= gt.images.size()) return;

    std::vector<int> ids;
    ids.reserve(gt.images.size());
    for (const ImageInfo& im : gt.images) ids.push_back(im.id);
    std::sort(ids.begin(), ids.end());

    std::mt19937_64 gen(seed);
    for (std::size_t i = ids.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(uniform_below(gen, i + 1));
        std::swap(ids[i], ids[j]);
    }
    const std::unordered_set<int> keep(ids.begin(), ids.begin() + n);

    std::erase_if(gt.images, [&](const ImageInfo& im) { return !keep.count(im.id); });
    std::erase_if(gt.annotations,
                  [&](const InstanceMask& a) { return !keep.count(a.image_id); });
    std::erase_if(preds, [&](const InstanceMask& p) { return !keep.count(p.image_id); });
}

std::string format_eval_report(const EvalReport& report) {
    std::ostringstream os;
    os << "IoU    AP      precision  recall    TP      FP      FN\n";
    char line[128];
    for (const ThresholdEval& row : report.thresholds) {
        std::string ap = row.ap ? [&] {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%5.1f", *row.ap);
            return std::string(buf);
        }() : std::string("    -");
        std::snprintf(line, sizeof(line), "%.2f  %s   %9.3f  %6.3f  %6ld  %6ld  %6ld\n",
                      row.iou_t, ap.c_str(), row.precision, row.recall, row.tally.tp,
                      row.tally.fp, row.tally.fn);
        os << line;
    }
    if (report.map) {
        std::snprintf(line, sizeof(line), "mAP (0.50:0.95) = %.1f\n", *report.map);
        os << line;
    } else {
        os << "mAP (0.50:0.95) = -  (no ground-truth instances)\n";
    }
    os << "images " << report.image_count << ", ground-truth instances " << report.gt_count
       << ", predictions " << report.pred_count << "\n";
    return os.str();
}

std::string eval_report_json(const EvalReport& report) {
    json doc;
    doc["thresholds"] = json::array();
    for (const ThresholdEval& row : report.thresholds) {
        json r;
        r["iou"] = row.iou_t;
        if (row.ap) {
            r["ap"] = *row.ap;
        } else {
            r["ap"] = nullptr;
        }
        r["precision"] = row.precision;
        r["recall"] = row.recall;
        r["tp"] = row.tally.tp;
        r["fp"] = row.tally.fp;
        r["fn"] = row.tally.fn;
        doc["thresholds"].push_back(r);
    }
    if (report.map) {
        doc["map"] = *report.map;
    } else {
        doc["map"] = nullptr;
    }
    doc["images"] = report.image_count;
    doc["gt_instances"] = report.gt_count;
    doc["predictions"] = report.pred_count;
    return doc.dump(2) + "\n";
}

} // namespace fieldstack
