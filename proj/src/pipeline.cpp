#include "fieldstack/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include <json.hpp>

namespace fieldstack {

namespace {

using ordered_json = nlohmann::ordered_json;
using nlohmann::json;

void expect_keys(const json& obj, std::initializer_list<const char*> allowed,
                 const std::string& where) {
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* k : allowed) {
            if (item.key() == k) {
                known = true;
                break;
            }
        }
        if (!known) throw Error("unknown key '" + item.key() + "' in " + where);
    }
}

std::string policy_name(DepthNormPolicy p) {
    return p == DepthNormPolicy::FixedRange ? "fixed" : "per_image";
}

DepthNormPolicy policy_from_name(const std::string& s) {
    if (s == "fixed") return DepthNormPolicy::FixedRange;
    if (s == "per_image") return DepthNormPolicy::PerImage;
    throw Error("unknown depth normalization policy '" + s + "'");
}

} // namespace

std::string config_json(const PipelineConfig& c) {
    ordered_json doc;
    doc["frames"] = {{"dir", c.frame_dir}, {"stride", c.stride}};
    doc["seed"] = c.seed;
    doc["features"] = {{"hessian_threshold", c.features.hessian_threshold},
                       {"octaves", c.features.octaves},
                       {"layers_per_octave", c.features.layers_per_octave},
                       {"upright", c.features.upright},
                       {"ratio_max", c.ratio_max}};
    doc["ransac"] = {{"threshold_px", c.ransac.threshold_px},
                     {"confidence", c.ransac.confidence},
                     {"max_iters", c.ransac.max_iters}};
    doc["sgm"] = {{"census_width", c.sgm.census_w},
                  {"census_height", c.sgm.census_h},
                  {"p1", c.sgm.p1},
                  {"p2", c.sgm.p2},
                  {"paths", c.sgm.paths},
                  {"d_min", c.sgm.d_min},
                  {"d_max", c.sgm.d_max},
                  {"uniqueness_ratio", c.sgm.uniqueness_ratio},
                  {"lr_tolerance", c.sgm.lr_tolerance}};
    doc["fusion"] = {{"agree_tol", c.fuse_agree_tol},
                     {"normalization",
                      {{"policy", policy_name(c.depth_norm.policy)},
                       {"lo", c.depth_norm.lo},
                       {"hi", c.depth_norm.hi}}}};
    doc["stacks"] = ordered_json::array();
    for (const StackSpec& s : c.stacks) doc["stacks"].push_back(s.name());
    doc["output"] = {{"dir", c.output_dir}};
    doc["workers"] = c.workers;
    return doc.dump(2) + "\n";
}

PipelineConfig parse_config_json(const std::string& text, const std::string& origin) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw Error("cannot parse " + origin + ": " + e.what());
    }
    if (!doc.is_object()) throw Error(origin + ": expected a JSON object");

    PipelineConfig c;
    try {
        expect_keys(doc, {"frames", "seed", "features", "ransac", "sgm", "fusion", "stacks",
                          "output", "workers"},
                    origin);
        if (doc.contains("frames")) {
            const json& f = doc["frames"];
            expect_keys(f, {"dir", "stride"}, "frames");
            c.frame_dir = f.value("dir", c.frame_dir);
            c.stride = f.value("stride", c.stride);
        }
        c.seed = doc.value("seed", c.seed);
        if (doc.contains("features")) {
            const json& f = doc["features"];
            expect_keys(f, {"hessian_threshold", "octaves", "layers_per_octave", "upright",
                            "ratio_max"},
                        "features");
            c.features.hessian_threshold = f.value("hessian_threshold", c.features.hessian_threshold);
            c.features.octaves = f.value("octaves", c.features.octaves);
            c.features.layers_per_octave = f.value("layers_per_octave", c.features.layers_per_octave);
            c.features.upright = f.value("upright", c.features.upright);
            c.ratio_max = f.value("ratio_max", c.ratio_max);
        }
        if (doc.contains("ransac")) {
            const json& f = doc["ransac"];
            expect_keys(f, {"threshold_px", "confidence", "max_iters"}, "ransac");
            c.ransac.threshold_px = f.value("threshold_px", c.ransac.threshold_px);
            c.ransac.confidence = f.value("confidence", c.ransac.confidence);
            c.ransac.max_iters = f.value("max_iters", c.ransac.max_iters);
        }
        if (doc.contains("sgm")) {
            const json& f = doc["sgm"];
            expect_keys(f, {"census_width", "census_height", "p1", "p2", "paths", "d_min",
                            "d_max", "uniqueness_ratio", "lr_tolerance"},
                        "sgm");
            c.sgm.census_w = f.value("census_width", c.sgm.census_w);
            c.sgm.census_h = f.value("census_height", c.sgm.census_h);
            c.sgm.p1 = f.value("p1", c.sgm.p1);
            c.sgm.p2 = f.value("p2", c.sgm.p2);
            c.sgm.paths = f.value("paths", c.sgm.paths);
            c.sgm.d_min = f.value("d_min", c.sgm.d_min);
            c.sgm.d_max = f.value("d_max", c.sgm.d_max);
            c.sgm.uniqueness_ratio = f.value("uniqueness_ratio", c.sgm.uniqueness_ratio);
            c.sgm.lr_tolerance = f.value("lr_tolerance", c.sgm.lr_tolerance);
        }
        if (doc.contains("fusion")) {
            const json& f = doc["fusion"];
            expect_keys(f, {"agree_tol", "normalization"}, "fusion");
            c.fuse_agree_tol = f.value("agree_tol", c.fuse_agree_tol);
            if (f.contains("normalization")) {
                const json& n = f["normalization"];
                expect_keys(n, {"policy", "lo", "hi"}, "fusion.normalization");
                c.depth_norm.policy =
                    policy_from_name(n.value("policy", policy_name(c.depth_norm.policy)));
                c.depth_norm.lo = n.value("lo", c.depth_norm.lo);
                c.depth_norm.hi = n.value("hi", c.depth_norm.hi);
            }
        }
        if (doc.contains("stacks")) {
            c.stacks.clear();
            for (const json& s : doc["stacks"]) {
                c.stacks.push_back(StackSpec::from_name(s.get<std::string>()));
            }
        }
        if (doc.contains("output")) {
            const json& f = doc["output"];
            expect_keys(f, {"dir"}, "output");
            c.output_dir = f.value("dir", c.output_dir);
        }
        c.workers = doc.value("workers", c.workers);
    } catch (const json::exception& e) {
        throw Error(origin + ": " + e.what());
    }
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("unreadable file: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_json(text, path.string());
}

void save_config(const PipelineConfig& config, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out << config_json(config);
    if (!out) throw Error("write failed: " + path.string());
}

void validate_config(const PipelineConfig& c, bool require_paths) {
    if (c.stride < 1) throw Error("stride must be at least 1");
    c.features.validate();
    if (!(c.ratio_max >= 0.0 && c.ratio_max <= 1.0)) throw Error("ratio_max must be in [0,1]");
    c.ransac.validate();
    c.sgm.validate(1 << 20); // width-dependent limits re-checked per image
    if (c.fuse_agree_tol < 0.0) throw Error("fusion agree_tol must be non-negative");
    if (c.depth_norm.policy == DepthNormPolicy::FixedRange && !(c.depth_norm.hi > c.depth_norm.lo)) {
        throw Error("depth normalization needs hi > lo");
    }
    if (c.stacks.empty()) throw Error("at least one stack variant is required");
    for (std::size_t i = 0; i < c.stacks.size(); ++i) {
        for (std::size_t j = i + 1; j < c.stacks.size(); ++j) {
            if (c.stacks[i] == c.stacks[j]) {
                throw Error("duplicate stack variant " + c.stacks[i].name());
            }
        }
    }
    if (c.workers < 0 || c.workers > 256) throw Error("workers must be in [0,256]");
    if (require_paths) {
        if (c.frame_dir.empty()) throw Error("frame directory is not set");
        if (!std::filesystem::is_directory(c.frame_dir)) {
            throw Error("frame directory does not exist: " + c.frame_dir);
        }
        if (c.output_dir.empty()) throw Error("output directory is not set");
    }
}

std::vector<FrameTriple> ingest(const std::filesystem::path& dir, int stride) {
    if (stride < 1) throw Error("stride must be at least 1");
    if (!std::filesystem::is_directory(dir)) {
        throw Error("frame directory does not exist: " + dir.string());
    }

    std::vector<std::filesystem::path> frames;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        for (char& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") frames.push_back(entry.path());
    }
    std::sort(frames.begin(), frames.end(),
              [](const auto& a, const auto& b) { return a.filename() < b.filename(); });

    const int needed = 2 * stride + 1;
    if (static_cast<int>(frames.size()) < needed) {
        throw Error("need at least " + std::to_string(needed) + " frames in " + dir.string() +
                    ", found " + std::to_string(frames.size()));
    }

    std::vector<FrameTriple> triples;
    const int n = static_cast<int>(frames.size());
    for (int center = stride; center + stride < n; ++center) {
        FrameTriple t;
        t.index = center - stride;
        t.prev_index = center - stride;
        t.center_index = center;
        t.next_index = center + stride;
        t.prev = frames[static_cast<std::size_t>(t.prev_index)];
        t.center = frames[static_cast<std::size_t>(center)];
        t.next = frames[static_cast<std::size_t>(t.next_index)];
        triples.push_back(std::move(t));
    }
    return triples;
}

namespace {

struct PairOutput {
    DisparityMap map;
    PairDiagnostics diag;
};

// One neighbour pair: match -> robust F -> rectify -> SGM -> parallax in the
// centre frame's own pixel grid. `negate` flips the sign for the previous
// neighbour, whose baseline points the other way.
PairOutput process_pair(const GrayImage& center_g, const std::vector<FeaturePoint>& center_pts,
                        const DescriptorSet& center_desc, const GrayImage& neighbor_g,
                        const PipelineConfig& config, std::uint64_t seed, bool negate) {
    PairOutput out;
    out.diag.features_center = static_cast<int>(center_pts.size());

    std::vector<FeaturePoint> npts = detect_features(neighbor_g, config.features);
    out.diag.features_neighbor = static_cast<int>(npts.size());
    const DescriptorSet ndesc = compute_descriptors(neighbor_g, npts, config.features);
    if (center_desc.descriptors.empty() || ndesc.descriptors.empty()) {
        throw Error("too few matches: a frame yielded no usable features");
    }

    const std::vector<MatchPair> matches =
        match_features(center_desc.descriptors, ndesc.descriptors,
                       static_cast<float>(config.ratio_max));
    out.diag.matches = static_cast<int>(matches.size());
    if (matches.size() < 8) {
        throw Error("too few matches: " + std::to_string(matches.size()) + " after the ratio test");
    }

    std::vector<PointPair> pairs;
    std::vector<double> displacement;
    pairs.reserve(matches.size());
    displacement.reserve(matches.size());
    for (const MatchPair& m : matches) {
        const FeaturePoint& a =
            center_pts[static_cast<std::size_t>(center_desc.point_indices[static_cast<std::size_t>(m.index_a)])];
        const FeaturePoint& b =
            npts[static_cast<std::size_t>(ndesc.point_indices[static_cast<std::size_t>(m.index_b)])];
        pairs.push_back({a.x, a.y, b.x, b.y});
        displacement.push_back(std::hypot(a.x - b.x, a.y - b.y));
    }

    // A near-static pair cannot yield a usable baseline; cheaper to reject on
    // the raw matches than to let the robust fit chew on a degenerate set.
    std::sort(displacement.begin(), displacement.end());
    const double median_disp = displacement[displacement.size() / 2];
    out.diag.median_displacement = median_disp;
    if (median_disp < 0.5) {
        char buf[96];
        std::snprintf(buf, sizeof(buf),
                      "insufficient parallax: median match displacement %.3f px", median_disp);
        throw Error(buf);
    }

    RansacParams rp = config.ransac;
    rp.seed = seed;
    const RobustFit fit = ransac_f(pairs, rp);
    out.diag.inliers = fit.inlier_count;
    out.diag.ransac_iterations = fit.iterations_used;
    out.diag.inlier_rms_sampson = fit.inlier_rms_sampson;

    std::vector<PointPair> inliers;
    inliers.reserve(static_cast<std::size_t>(fit.inlier_count));
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (fit.inlier_mask[i]) inliers.push_back(pairs[i]);
    }

    RectifyingPair rect;
    try {
        rect = rectify(fit.f, inliers, Extent{center_g.width, center_g.height});
    } catch (const Error&) {
        // Shallow-relief pairs constrain a full fundamental matrix poorly and
        // the fitted epipole can wander into the frame. The rig translates
        // along a straight track, so retry with the translation-only model
        // before declaring the pair unusable.
        const FundamentalMatrix ft = estimate_f_translation(inliers);
        rect = rectify(ft, inliers, Extent{center_g.width, center_g.height});
        out.diag.translation_model = true;
    }
    out.diag.vertical_rms = rect.vertical_rms;

    const std::array<double, 9> inv1 = invert_homography(rect.h1);
    const std::array<double, 9> inv2 = invert_homography(rect.h2);
    const GrayImage rect_center = warp_gray(center_g, inv1.data(), rect.extent);
    const GrayImage rect_neighbor = warp_gray(neighbor_g, inv2.data(), rect.extent);

    const DisparityMap rect_disp = compute_disparity(rect_center, rect_neighbor, config.sgm);

    // Back to the centre grid: sample the rectified disparity at H1*p, then
    // express it as x-parallax between p and its original neighbour point.
    out.map = DisparityMap(center_g.width, center_g.height, 0, 0);
    float lo = 0.0f, hi = 0.0f;
    bool any = false;
    for (int y = 0; y < center_g.height; ++y) {
        for (int x = 0; x < center_g.width; ++x) {
            double u, v;
            apply_homography(rect.h1, x, y, u, v);
            const long ui = std::lround(u), vi = std::lround(v);
            if (ui < 0 || vi < 0 || ui >= rect_disp.width || vi >= rect_disp.height) continue;
            const float d = rect_disp.values[static_cast<std::size_t>(vi) * rect_disp.width + ui];
            if (std::isnan(d)) continue;
            double nx, ny;
            apply_homography(inv2, u - d, v, nx, ny);
            float parallax = static_cast<float>(x - nx);
            if (negate) parallax = -parallax;
            out.map.values[static_cast<std::size_t>(y) * out.map.width + x] = parallax;
            if (!any || parallax < lo) lo = parallax;
            if (!any || parallax > hi) hi = parallax;
            any = true;
        }
    }
    out.map.d_min = static_cast<int>(std::floor(lo));
    out.map.d_max = static_cast<int>(std::ceil(hi));
    out.diag.valid_fraction = out.map.valid_fraction();
    return out;
}

} // namespace

DepthResult run_depth(const MultiChannelImage& prev, const MultiChannelImage& center,
                      const MultiChannelImage& next, const PipelineConfig& config,
                      std::uint64_t pair_seed_base) {
    if (prev.width() != center.width() || prev.height() != center.height() ||
        next.width() != center.width() || next.height() != center.height()) {
        throw Error("triple frames have different sizes");
    }

    const GrayImage center_g = as_gray(center);
    const GrayImage prev_g = as_gray(prev);
    const GrayImage next_g = as_gray(next);

    std::vector<FeaturePoint> center_pts = detect_features(center_g, config.features);
    const DescriptorSet center_desc = compute_descriptors(center_g, center_pts, config.features);

    const std::uint64_t base = config.seed + pair_seed_base;
    PairOutput prev_out =
        process_pair(center_g, center_pts, center_desc, prev_g, config, base, true);
    PairOutput next_out =
        process_pair(center_g, center_pts, center_desc, next_g, config, base + 1, false);

    DepthResult result;
    result.fused = fuse(prev_out.map, next_out.map, config.fuse_agree_tol);
    result.normalized = normalize_depth(result.fused, config.depth_norm);
    result.prev_pair = prev_out.diag;
    result.next_pair = next_out.diag;
    return result;
}

DepthResult run_depth(const FrameTriple& triple, const PipelineConfig& config) {
    const MultiChannelImage prev = load_raster(triple.prev);
    const MultiChannelImage center = load_raster(triple.center);
    const MultiChannelImage next = load_raster(triple.next);
    return run_depth(prev, center, next, config,
                     2 * static_cast<std::uint64_t>(triple.center_index));
}

namespace {

std::string triple_file_name(int index, const std::string& variant) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "triple-%04d-%s.mcim", index, variant.c_str());
    return buf;
}

json diagnostics_json(const PairDiagnostics& d) {
    return {{"features_center", d.features_center},
            {"features_neighbor", d.features_neighbor},
            {"matches", d.matches},
            {"inliers", d.inliers},
            {"ransac_iterations", d.ransac_iterations},
            {"inlier_rms_sampson", d.inlier_rms_sampson},
            {"median_displacement", d.median_displacement},
            {"vertical_rms", d.vertical_rms},
            {"valid_fraction", d.valid_fraction},
            {"translation_model", d.translation_model}};
}

} // namespace

PipelineSummary run_pipeline(const PipelineConfig& config) {
    validate_config(config, true);
    const std::vector<FrameTriple> triples = ingest(config.frame_dir, config.stride);
    std::filesystem::create_directories(config.output_dir);

    PipelineSummary summary;
    summary.triples = static_cast<int>(triples.size());
    summary.outcomes.resize(triples.size());
    std::vector<std::vector<std::string>> files(triples.size());

    std::atomic<std::size_t> cursor{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = cursor.fetch_add(1);
            if (i >= triples.size()) return;
            const FrameTriple& t = triples[i];
            TripleOutcome& outcome = summary.outcomes[i];
            outcome.index = t.index;
            outcome.center_name = t.center.filename().string();
            try {
                const DepthResult depth = run_depth(t, config);
                outcome.prev_pair = depth.prev_pair;
                outcome.next_pair = depth.next_pair;
                outcome.fuse_stats = depth.fused.stats;

                const MultiChannelImage center = load_raster(t.center);
                for (const StackSpec& spec : config.stacks) {
                    const ChannelStack stack =
                        assemble_stack(center, spec, &depth.normalized.plane);
                    const std::string name = triple_file_name(t.index, spec.name());
                    write_mcim(std::filesystem::path(config.output_dir) / name, stack);
                    files[i].push_back(name);
                }
                outcome.ok = true;
            } catch (const std::exception& e) {
                outcome.ok = false;
                outcome.error = e.what();
            }
        }
    };

    unsigned n_workers = config.workers > 0 ? static_cast<unsigned>(config.workers)
                                            : std::max(1u, std::thread::hardware_concurrency());
    n_workers = std::min<unsigned>(n_workers, static_cast<unsigned>(triples.size()));
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_workers);
        for (unsigned k = 0; k < n_workers; ++k) pool.emplace_back(worker);
        for (std::thread& th : pool) th.join();
    }

    for (const TripleOutcome& o : summary.outcomes) {
        o.ok ? ++summary.successes : ++summary.failures;
    }
    for (std::vector<std::string>& f : files) {
        summary.outputs.insert(summary.outputs.end(), f.begin(), f.end());
    }

    ExposureAccumulator exposure;
    for (const FrameTriple& t : triples) {
        try {
            exposure.add_frame(t.center.filename().string(), load_raster(t.center));
        } catch (const std::exception&) {
            // unloadable centre frames already show up as triple failures
        }
    }
    if (!exposure.empty()) summary.exposure = exposure.report();

    std::ofstream exposure_file(std::filesystem::path(config.output_dir) / "exposure.txt");
    exposure_file << format_exposure_table(summary.exposure);
    std::ofstream summary_file(std::filesystem::path(config.output_dir) / "summary.json");
    summary_file << summary_json(summary);
    return summary;
}

std::string summary_json(const PipelineSummary& summary) {
    ordered_json doc;
    doc["triples"] = summary.triples;
    doc["successes"] = summary.successes;
    doc["failures"] = summary.failures;
    doc["outcomes"] = ordered_json::array();
    for (const TripleOutcome& o : summary.outcomes) {
        ordered_json j;
        j["index"] = o.index;
        j["center"] = o.center_name;
        j["ok"] = o.ok;
        if (!o.ok) {
            j["error"] = o.error;
        } else {
            j["prev_pair"] = diagnostics_json(o.prev_pair);
            j["next_pair"] = diagnostics_json(o.next_pair);
            j["fusion"] = {{"both_valid", o.fuse_stats.both_valid},
                           {"one_side", o.fuse_stats.one_side},
                           {"rejected", o.fuse_stats.rejected},
                           {"both_invalid", o.fuse_stats.both_invalid}};
        }
        doc["outcomes"].push_back(j);
    }
    doc["outputs"] = summary.outputs;
    ordered_json ex;
    ex["per_frame"] = ordered_json::array();
    for (const auto& f : summary.exposure.per_image) {
        ex["per_frame"].push_back(
            {{"frame", f.frame_id}, {"stddev", f.stddev}, {"pixels", f.pixels}});
    }
    ex["dataset_stddev"] = summary.exposure.dataset_stddev;
    ex["mean_of_per_frame"] = summary.exposure.mean_of_per_image;
    ex["total_pixels"] = summary.exposure.total_pixels;
    doc["exposure"] = ex;
    return doc.dump(2) + "\n";
}

std::string format_summary(const PipelineSummary& summary) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof(line), "triples %d, succeeded %d, failed %d\n", summary.triples,
                  summary.successes, summary.failures);
    out += line;
    for (const TripleOutcome& o : summary.outcomes) {
        if (o.ok) {
            std::snprintf(line, sizeof(line),
                          "[%04d] %s  inliers %d+%d  vertical rms %.2f/%.2f px  valid %.3f "
                          "(agree %.3f, one-side %.3f, rejected %.3f)\n",
                          o.index, o.center_name.c_str(), o.prev_pair.inliers,
                          o.next_pair.inliers, o.prev_pair.vertical_rms, o.next_pair.vertical_rms,
                          o.fuse_stats.valid(), o.fuse_stats.both_valid, o.fuse_stats.one_side,
                          o.fuse_stats.rejected);
        } else {
            std::snprintf(line, sizeof(line), "[%04d] %s  FAILED: %s\n", o.index,
                          o.center_name.c_str(), o.error.c_str());
        }
        out += line;
    }
    std::snprintf(line, sizeof(line), "outputs: %zu files\n", summary.outputs.size());
    out += line;
    return out;
}

} // namespace fieldstack
