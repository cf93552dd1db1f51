// numpy-facing bindings for the core operations.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fieldstack/colorspace.hpp"
#include "fieldstack/pipeline.hpp"
#include "fieldstack/segeval.hpp"
#include "fieldstack/stack.hpp"

namespace py = pybind11;
using namespace fieldstack;

namespace {

// (H, W) or (H, W, C) uint8 -> planar image with Gray or R,G,B labels.
MultiChannelImage image_from_array(const py::array_t<std::uint8_t>& arr) {
    const py::buffer_info info = arr.request();
    int w = 0, h = 0, c = 0;
    if (info.ndim == 2) {
        h = static_cast<int>(info.shape[0]);
        w = static_cast<int>(info.shape[1]);
        c = 1;
    } else if (info.ndim == 3 && info.shape[2] == 3) {
        h = static_cast<int>(info.shape[0]);
        w = static_cast<int>(info.shape[1]);
        c = 3;
    } else {
        throw Error("expected a (H, W) or (H, W, 3) uint8 array");
    }
    std::vector<Channel> labels =
        c == 1 ? std::vector<Channel>{Channel::Gray}
               : std::vector<Channel>{Channel::R, Channel::G, Channel::B};
    MultiChannelImage img(w, h, labels);
    auto a = arr.unchecked();
    for (int ch = 0; ch < c; ++ch) {
        auto plane = img.plane_u8(ch);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                plane[static_cast<std::size_t>(y) * w + x] =
                    info.ndim == 2 ? a(y, x) : a(y, x, ch);
            }
        }
    }
    return img;
}

py::array_t<std::uint8_t> array_from_image(const MultiChannelImage& img) {
    const int w = img.width(), h = img.height(), c = img.channel_count();
    py::array_t<std::uint8_t> arr({h, w, c});
    auto a = arr.mutable_unchecked<3>();
    for (int ch = 0; ch < c; ++ch) {
        const auto plane = img.plane_u8(ch);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                a(y, x, ch) = plane[static_cast<std::size_t>(y) * w + x];
            }
        }
    }
    return arr;
}

std::vector<std::string> label_names(const MultiChannelImage& img) {
    std::vector<std::string> out;
    for (Channel c : img.labels()) out.emplace_back(channel_name(c));
    return out;
}

GrayImage gray_from_array(const py::array_t<std::uint8_t>& arr) {
    return as_gray(image_from_array(arr));
}

py::array_t<float> array_from_disparity(const DisparityMap& map) {
    py::array_t<float> arr({map.height, map.width});
    auto a = arr.mutable_unchecked<2>();
    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
            a(y, x) = map.values[static_cast<std::size_t>(y) * map.width + x];
        }
    }
    return arr;
}

py::array_t<std::uint8_t> array_from_plane(const std::vector<std::uint8_t>& plane, int w, int h) {
    py::array_t<std::uint8_t> arr({h, w});
    auto a = arr.mutable_unchecked<2>();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            a(y, x) = plane[static_cast<std::size_t>(y) * w + x];
        }
    }
    return arr;
}

PipelineConfig config_from_arg(const py::object& config) {
    if (config.is_none()) return PipelineConfig{};
    if (py::isinstance<py::str>(config)) {
        return parse_config_json(config.cast<std::string>(), "config");
    }
    // dicts go through their JSON form so the same validation applies
    const py::object dumps = py::module_::import("json").attr("dumps");
    return parse_config_json(dumps(config).cast<std::string>(), "config");
}

py::dict dict_from_diagnostics(const PairDiagnostics& d) {
    py::dict out;
    out["features_center"] = d.features_center;
    out["features_neighbor"] = d.features_neighbor;
    out["matches"] = d.matches;
    out["inliers"] = d.inliers;
    out["ransac_iterations"] = d.ransac_iterations;
    out["inlier_rms_sampson"] = d.inlier_rms_sampson;
    out["median_displacement"] = d.median_displacement;
    out["vertical_rms"] = d.vertical_rms;
    out["valid_fraction"] = d.valid_fraction;
    return out;
}

py::dict dict_from_report(const EvalReport& r) {
    py::dict out;
    py::list thresholds;
    for (const ThresholdEval& t : r.thresholds) {
        py::dict row;
        row["iou"] = t.iou_t;
        row["ap"] = t.ap ? py::cast(*t.ap) : py::none();
        row["precision"] = t.precision;
        row["recall"] = t.recall;
        row["tp"] = t.tally.tp;
        row["fp"] = t.tally.fp;
        row["fn"] = t.tally.fn;
        thresholds.append(row);
    }
    out["thresholds"] = thresholds;
    out["map"] = r.map ? py::cast(*r.map) : py::none();
    out["images"] = r.image_count;
    out["ground_truth"] = r.gt_count;
    out["predictions"] = r.pred_count;
    return out;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "fused depth-from-motion stacks: core operations";

    py::register_exception<Error>(m, "FieldstackError");

    m.def(
        "load_image",
        [](const std::filesystem::path& path) {
            const MultiChannelImage img = load_raster(path);
            return py::make_tuple(array_from_image(img), label_names(img));
        },
        py::arg("path"), "Load a PNG/JPEG as ((H, W, C) uint8 array, channel labels).");

    m.def(
        "save_png",
        [](const std::filesystem::path& path, const py::array_t<std::uint8_t>& image) {
            save_png(image_from_array(image), path);
        },
        py::arg("path"), py::arg("image"));

    m.def(
        "detect_features",
        [](const py::array_t<std::uint8_t>& image, double hessian_threshold, int octaves,
           int layers_per_octave, bool upright) {
            SurfParams p;
            p.hessian_threshold = hessian_threshold;
            p.octaves = octaves;
            p.layers_per_octave = layers_per_octave;
            p.upright = upright;
            const GrayImage g = gray_from_array(image);
            std::vector<FeaturePoint> pts = detect_features(g, p);
            const DescriptorSet ds = compute_descriptors(g, pts, p);
            py::array_t<double> keypoints({static_cast<py::ssize_t>(ds.descriptors.size()),
                                           static_cast<py::ssize_t>(5)});
            py::array_t<float> descriptors({static_cast<py::ssize_t>(ds.descriptors.size()),
                                            static_cast<py::ssize_t>(64)});
            auto kp = keypoints.mutable_unchecked<2>();
            auto de = descriptors.mutable_unchecked<2>();
            for (py::ssize_t i = 0; i < static_cast<py::ssize_t>(ds.descriptors.size()); ++i) {
                const FeaturePoint& f = pts[static_cast<std::size_t>(ds.point_indices[i])];
                kp(i, 0) = f.x;
                kp(i, 1) = f.y;
                kp(i, 2) = f.scale;
                kp(i, 3) = f.orientation;
                kp(i, 4) = f.response;
                for (int k = 0; k < 64; ++k) de(i, k) = ds.descriptors[i][static_cast<std::size_t>(k)];
            }
            return py::make_tuple(keypoints, descriptors);
        },
        py::arg("image"), py::arg("hessian_threshold") = SurfParams{}.hessian_threshold,
        py::arg("octaves") = SurfParams{}.octaves,
        py::arg("layers_per_octave") = SurfParams{}.layers_per_octave,
        py::arg("upright") = SurfParams{}.upright,
        "Detect and describe features; returns ((N, 5) keypoints [x, y, scale, "
        "orientation, response], (N, 64) float descriptors).");

    m.def(
        "match_features",
        [](const py::array_t<float>& desc_a, const py::array_t<float>& desc_b, float ratio_max) {
            auto to_set = [](const py::array_t<float>& arr) {
                const py::buffer_info info = arr.request();
                if (info.ndim != 2 || info.shape[1] != 64) {
                    throw Error("descriptors must be an (N, 64) float array");
                }
                std::vector<Descriptor> out(static_cast<std::size_t>(info.shape[0]));
                auto a = arr.unchecked<2>();
                for (py::ssize_t i = 0; i < info.shape[0]; ++i) {
                    for (int k = 0; k < 64; ++k) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = a(i, k);
                }
                return out;
            };
            const std::vector<MatchPair> matches =
                match_features(to_set(desc_a), to_set(desc_b), ratio_max);
            py::array_t<int> idx({static_cast<py::ssize_t>(matches.size()), static_cast<py::ssize_t>(2)});
            py::array_t<float> dist(static_cast<py::ssize_t>(matches.size()));
            auto mi = idx.mutable_unchecked<2>();
            auto md = dist.mutable_unchecked<1>();
            for (py::ssize_t i = 0; i < static_cast<py::ssize_t>(matches.size()); ++i) {
                mi(i, 0) = matches[static_cast<std::size_t>(i)].index_a;
                mi(i, 1) = matches[static_cast<std::size_t>(i)].index_b;
                md(i) = matches[static_cast<std::size_t>(i)].distance;
            }
            return py::make_tuple(idx, dist);
        },
        py::arg("desc_a"), py::arg("desc_b"), py::arg("ratio_max") = 0.7f,
        "Ratio-test + cross-check matching; returns ((N, 2) index pairs, distances).");

    m.def(
        "compute_disparity",
        [](const py::array_t<std::uint8_t>& left, const py::array_t<std::uint8_t>& right,
           int d_min, int d_max) {
            SgmParams p;
            p.d_min = d_min;
            p.d_max = d_max;
            const DisparityMap map =
                compute_disparity(gray_from_array(left), gray_from_array(right), p);
            return array_from_disparity(map);
        },
        py::arg("left"), py::arg("right"), py::arg("d_min") = 0, py::arg("d_max") = 128,
        "Census/SGM disparity; (H, W) float32 with NaN where invalid.");

    m.def(
        "depth_from_triple",
        [](const py::array_t<std::uint8_t>& prev, const py::array_t<std::uint8_t>& center,
           const py::array_t<std::uint8_t>& next, const py::object& config) {
            const PipelineConfig c = config_from_arg(config);
            validate_config(c, false);
            const DepthResult r =
                run_depth(image_from_array(prev), image_from_array(center),
                          image_from_array(next), c);
            py::dict out;
            out["fused"] = array_from_disparity(r.fused.map);
            out["depth"] = array_from_plane(r.normalized.plane, r.normalized.width,
                                            r.normalized.height);
            py::dict stats;
            stats["both_valid"] = r.fused.stats.both_valid;
            stats["one_side"] = r.fused.stats.one_side;
            stats["rejected"] = r.fused.stats.rejected;
            stats["both_invalid"] = r.fused.stats.both_invalid;
            out["fusion"] = stats;
            out["prev_pair"] = dict_from_diagnostics(r.prev_pair);
            out["next_pair"] = dict_from_diagnostics(r.next_pair);
            return out;
        },
        py::arg("prev"), py::arg("center"), py::arg("next"), py::arg("config") = py::none(),
        "Fused depth for one frame triple. `config` is a JSON string or dict.");

    m.def(
        "write_stack",
        [](const std::filesystem::path& path, const py::array_t<std::uint8_t>& image,
           const std::string& spec, const py::object& depth) {
            const MultiChannelImage img = image_from_array(image);
            std::vector<std::uint8_t> plane;
            const std::vector<std::uint8_t>* plane_ptr = nullptr;
            if (!depth.is_none()) {
                const auto arr = depth.cast<py::array_t<std::uint8_t>>();
                const py::buffer_info info = arr.request();
                if (info.ndim != 2 || info.shape[0] != img.height() ||
                    info.shape[1] != img.width()) {
                    throw Error("depth must be a (H, W) uint8 array matching the image");
                }
                auto a = arr.unchecked<2>();
                plane.resize(static_cast<std::size_t>(img.width()) * img.height());
                for (int y = 0; y < img.height(); ++y) {
                    for (int x = 0; x < img.width(); ++x) {
                        plane[static_cast<std::size_t>(y) * img.width() + x] = a(y, x);
                    }
                }
                plane_ptr = &plane;
            }
            write_mcim(path, assemble_stack(img, StackSpec::from_name(spec), plane_ptr));
        },
        py::arg("path"), py::arg("image"), py::arg("spec") = "LAB-D",
        py::arg("depth") = py::none(),
        "Quantize a frame (plus optional depth plane) into a container file.");

    m.def(
        "read_stack",
        [](const std::filesystem::path& path) {
            const ChannelStack stack = read_mcim(path);
            py::dict out;
            out["data"] = array_from_image(stack.image);
            out["labels"] = label_names(stack.image);
            py::list quant;
            for (const QuantRecord& q : stack.quant) {
                quant.append(py::make_tuple(q.offset, q.scale));
            }
            out["quant"] = quant;
            return out;
        },
        py::arg("path"), "Read a container file back into (H, W, C) bytes plus quantizers.");

    m.def(
        "exposure_report",
        [](const std::vector<py::array_t<std::uint8_t>>& frames,
           const std::vector<std::string>& ids) {
            ExposureAccumulator acc;
            for (std::size_t i = 0; i < frames.size(); ++i) {
                acc.add_frame(i < ids.size() ? ids[i] : "frame-" + std::to_string(i),
                              image_from_array(frames[i]));
            }
            const ExposureReport r = acc.report();
            py::dict out;
            py::list per;
            for (const auto& f : r.per_image) {
                py::dict row;
                row["frame"] = f.frame_id;
                row["stddev"] = f.stddev;
                row["pixels"] = f.pixels;
                per.append(row);
            }
            out["per_frame"] = per;
            out["dataset_stddev"] = r.dataset_stddev;
            out["mean_of_per_frame"] = r.mean_of_per_image;
            out["total_pixels"] = r.total_pixels;
            return out;
        },
        py::arg("frames"), py::arg("ids") = std::vector<std::string>{},
        "L-channel standard deviation per frame and pooled over all frames.");

    m.def(
        "evaluate",
        [](const std::filesystem::path& annotations, const std::filesystem::path& predictions,
           int sample, std::uint64_t seed) {
            Dataset gt = load_coco_annotations(annotations);
            PredictionSet preds = load_coco_predictions(predictions, gt);
            if (sample > 0) sample_images(gt, preds, sample, seed);
            return dict_from_report(mean_average_precision(gt, preds));
        },
        py::arg("annotations"), py::arg("predictions"), py::arg("sample") = 0,
        py::arg("seed") = 0,
        "Polygon-mask mAP over IoU 0.50:0.05:0.95 for COCO-style files.");

    m.def(
        "run_pipeline",
        [](const py::object& config) {
            const PipelineSummary s = run_pipeline(config_from_arg(config));
            const py::object loads = py::module_::import("json").attr("loads");
            return loads(summary_json(s));
        },
        py::arg("config"), "Full batch run; returns the summary as a dict.");

    m.def("default_config", [] { return config_json(PipelineConfig{}); },
          "Reference JSON configuration with every default filled in.");
}
