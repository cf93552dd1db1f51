// Command-line front end: depth for one triple, stack assembly, colour
// conversion, exposure tables, segmentation scoring, and the full batch run.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fieldstack/colorspace.hpp"
#include "fieldstack/pipeline.hpp"
#include "fieldstack/segeval.hpp"
#include "fieldstack/stack.hpp"

namespace fs = std::filesystem;
using namespace fieldstack;

namespace {

void write_text(const std::string& text, const std::string& path) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path);
    out << text;
}

// Depth side input for `stack`: a container holding a DEPTH plane, or any
// single-channel raster whose bytes are used as-is (0 = invalid).
std::vector<std::uint8_t> load_depth_plane(const std::string& path, int want_w, int want_h) {
    std::vector<std::uint8_t> plane;
    int w = 0, h = 0;
    if (fs::path(path).extension() == ".mcim") {
        const ChannelStack stack = read_mcim(path);
        const int c = stack.image.find_channel(Channel::Depth);
        if (c < 0) throw Error("no depth channel in " + path);
        const auto span = stack.image.plane_u8(c);
        plane.assign(span.begin(), span.end());
        w = stack.image.width();
        h = stack.image.height();
    } else {
        const MultiChannelImage img = load_raster(path);
        if (img.channel_count() != 1) {
            throw Error("depth raster must be single-channel: " + path);
        }
        const auto span = img.plane_u8(0);
        plane.assign(span.begin(), span.end());
        w = img.width();
        h = img.height();
    }
    if (w != want_w || h != want_h) {
        throw Error("depth plane size " + std::to_string(w) + "x" + std::to_string(h) +
                    " does not match frame " + std::to_string(want_w) + "x" +
                    std::to_string(want_h));
    }
    return plane;
}

MultiChannelImage depth_preview(const NormalizedDepth& nd) {
    MultiChannelImage img(nd.width, nd.height, {Channel::Gray});
    auto dst = img.plane_u8(0);
    std::copy(nd.plane.begin(), nd.plane.end(), dst.begin());
    return img;
}

struct ConfigCli {
    std::string config_path;
    std::optional<std::string> frames_dir;
    std::optional<std::string> output_dir;
    std::optional<int> stride;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::vector<std::string> stacks;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file; flags override its values");
        cmd->add_option("--frames", frames_dir, "frame directory");
        cmd->add_option("--output", output_dir, "output directory");
        cmd->add_option("--stride", stride, "neighbour offset for prev/next pairs");
        cmd->add_option("--seed", seed, "seed for all randomized stages");
        cmd->add_option("--workers", workers, "worker threads (0 = hardware)");
        cmd->add_option("--stack", stacks, "stack variant, repeatable (RGB, RGB-D, HSV, HSV-D, LAB, LAB-D, DEPTH)");
    }

    PipelineConfig resolve() const {
        PipelineConfig c = config_path.empty() ? PipelineConfig{} : load_config(config_path);
        if (frames_dir) c.frame_dir = *frames_dir;
        if (output_dir) c.output_dir = *output_dir;
        if (stride) c.stride = *stride;
        if (seed) c.seed = *seed;
        if (workers) c.workers = *workers;
        if (!stacks.empty()) {
            c.stacks.clear();
            for (const std::string& s : stacks) c.stacks.push_back(StackSpec::from_name(s));
        }
        return c;
    }
};

void print_pair(const char* tag, const PairDiagnostics& d) {
    std::printf("%s: features %d/%d, matches %d, inliers %d (rms %.3f px), "
                "median shift %.2f px, vertical rms %.3f px, valid %.3f\n",
                tag, d.features_center, d.features_neighbor, d.matches, d.inliers,
                d.inlier_rms_sampson, d.median_displacement, d.vertical_rms, d.valid_fraction);
}

int run(int argc, char** argv) {
    CLI::App app{"depth-from-motion stacks and evaluation tools"};
    app.require_subcommand(1);

    // config init
    CLI::App* config_cmd = app.add_subcommand("config", "configuration helpers");
    config_cmd->require_subcommand(1);
    CLI::App* config_init = config_cmd->add_subcommand("init", "emit the reference config");
    std::string config_out = "-";
    config_init->add_option("-o,--out", config_out, "file to write (default stdout)");

    // depth
    CLI::App* depth_cmd = app.add_subcommand("depth", "fuse one (prev, center, next) triple");
    std::string depth_prev, depth_center, depth_next, depth_out, depth_png;
    ConfigCli depth_cfg;
    depth_cmd->add_option("--prev", depth_prev, "previous frame")->required();
    depth_cmd->add_option("--center", depth_center, "center frame")->required();
    depth_cmd->add_option("--next", depth_next, "next frame")->required();
    depth_cmd->add_option("-o,--out", depth_out, "output container (.mcim)")->required();
    depth_cmd->add_option("--preview", depth_png, "also write the depth plane as a PNG");
    depth_cfg.attach(depth_cmd);

    // stack
    CLI::App* stack_cmd = app.add_subcommand("stack", "assemble a colour+depth container");
    std::string stack_frame, stack_depth, stack_spec = "LAB-D", stack_out;
    stack_cmd->add_option("--frame", stack_frame, "colour frame")->required();
    stack_cmd->add_option("--depth", stack_depth, "depth plane (.mcim or single-channel PNG)");
    stack_cmd->add_option("--spec", stack_spec, "variant name (default LAB-D)");
    stack_cmd->add_option("-o,--out", stack_out, "output container (.mcim)")->required();

    // convert
    CLI::App* convert_cmd = app.add_subcommand("convert", "colour-space conversion of a raster");
    std::string conv_in, conv_to = "LAB", conv_out;
    convert_cmd->add_option("-i,--in", conv_in, "input raster")->required();
    convert_cmd->add_option("--to", conv_to, "target space: RGB, HSV or LAB");
    convert_cmd->add_option("-o,--out", conv_out, "output (.mcim, or .png for RGB)")->required();

    // exposure
    CLI::App* exposure_cmd = app.add_subcommand("exposure", "L-channel variation over a directory");
    std::string exp_dir, exp_out = "-";
    exposure_cmd->add_option("--dir", exp_dir, "frame directory")->required();
    exposure_cmd->add_option("-o,--out", exp_out, "file to write (default stdout)");

    // eval
    CLI::App* eval_cmd = app.add_subcommand("eval", "score predictions against annotations");
    std::string eval_gt, eval_pred, eval_out = "-";
    int eval_sample = 0;
    std::uint64_t eval_seed = 0;
    bool eval_json = false;
    eval_cmd->add_option("--annotations", eval_gt, "ground-truth JSON")->required();
    eval_cmd->add_option("--predictions", eval_pred, "prediction JSON")->required();
    eval_cmd->add_option("--sample", eval_sample, "evaluate a seeded random subset of N images");
    eval_cmd->add_option("--seed", eval_seed, "sampling seed");
    eval_cmd->add_flag("--json", eval_json, "machine-readable report");
    eval_cmd->add_option("-o,--out", eval_out, "file to write (default stdout)");

    // pipeline
    CLI::App* pipe_cmd = app.add_subcommand("pipeline", "full batch run over a frame directory");
    ConfigCli pipe_cfg;
    bool allow_partial = false;
    bool pipe_json = false;
    pipe_cfg.attach(pipe_cmd);
    pipe_cmd->add_flag("--allow-partial", allow_partial, "exit 0 even if some triples failed");
    pipe_cmd->add_flag("--json", pipe_json, "print the JSON summary instead of the table");

    CLI11_PARSE(app, argc, argv);

    if (*config_init) {
        write_text(config_json(PipelineConfig{}), config_out);
        return 0;
    }

    if (*depth_cmd) {
        const PipelineConfig config = depth_cfg.resolve();
        validate_config(config, false);
        const MultiChannelImage prev = load_raster(depth_prev);
        const MultiChannelImage center = load_raster(depth_center);
        const MultiChannelImage next = load_raster(depth_next);
        const DepthResult result = run_depth(prev, center, next, config);
        print_pair("prev", result.prev_pair);
        print_pair("next", result.next_pair);
        const FuseStats& st = result.fused.stats;
        std::printf("fused: agree %.3f, one-side %.3f, rejected %.3f, empty %.3f\n",
                    st.both_valid, st.one_side, st.rejected, st.both_invalid);
        const ChannelStack stack = assemble_stack(center, StackSpec::from_name("DEPTH"),
                                                  &result.normalized.plane);
        write_mcim(depth_out, stack);
        if (!depth_png.empty()) save_png(depth_preview(result.normalized), depth_png);
        return 0;
    }

    if (*stack_cmd) {
        const MultiChannelImage frame = load_raster(stack_frame);
        const StackSpec spec = StackSpec::from_name(stack_spec);
        std::vector<std::uint8_t> depth;
        const std::vector<std::uint8_t>* depth_ptr = nullptr;
        if (!stack_depth.empty()) {
            depth = load_depth_plane(stack_depth, frame.width(), frame.height());
            depth_ptr = &depth;
        }
        write_mcim(stack_out, assemble_stack(frame, spec, depth_ptr));
        return 0;
    }

    if (*convert_cmd) {
        const MultiChannelImage in = load_raster(conv_in);
        std::string to = conv_to;
        for (char& ch : to) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        if (to == "RGB") {
            if (fs::path(conv_out).extension() == ".png") {
                save_png(in, conv_out);
            } else {
                write_mcim(conv_out, assemble_stack(in, StackSpec::from_name("RGB"), nullptr));
            }
        } else if (to == "HSV" || to == "LAB") {
            write_mcim(conv_out, assemble_stack(in, StackSpec::from_name(to), nullptr));
        } else {
            throw Error("unknown target colour space '" + conv_to + "'");
        }
        return 0;
    }

    if (*exposure_cmd) {
        ExposureAccumulator acc;
        std::vector<fs::path> frames;
        for (const auto& entry : fs::directory_iterator(exp_dir)) {
            if (!entry.is_regular_file()) continue;
            std::string ext = entry.path().extension().string();
            for (char& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") frames.push_back(entry.path());
        }
        std::sort(frames.begin(), frames.end(),
                  [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
        if (frames.empty()) throw Error("no frames in " + exp_dir);
        for (const auto& f : frames) acc.add_frame(f.filename().string(), load_raster(f));
        write_text(format_exposure_table(acc.report()), exp_out);
        return 0;
    }

    if (*eval_cmd) {
        Dataset gt = load_coco_annotations(eval_gt);
        PredictionSet preds = load_coco_predictions(eval_pred, gt);
        if (eval_sample > 0) sample_images(gt, preds, eval_sample, eval_seed);
        const EvalReport report = mean_average_precision(gt, preds);
        write_text(eval_json ? eval_report_json(report) : format_eval_report(report), eval_out);
        return 0;
    }

    if (*pipe_cmd) {
        const PipelineConfig config = pipe_cfg.resolve();
        const PipelineSummary summary = run_pipeline(config);
        std::cout << (pipe_json ? summary_json(summary) : format_summary(summary));
        if (summary.failures > 0 && !allow_partial) return 1;
        return 0;
    }

    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
