#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "fieldstack/pipeline.hpp"
#include "support.hpp"

using namespace fieldstack;

namespace {

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

/// Five frames of a camera sliding past the three-band scene at constant
/// velocity; frame k is the base texture advected by (k-2) flow steps.
void write_sequence(const std::filesystem::path& dir, int w, int h, std::uint32_t seed) {
    const GrayImage base = support::make_texture(w, h, seed);
    for (int k = 0; k < 5; ++k) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame-%02d.png", k);
        save_png(support::gray_to_rgb(support::warp_flow(base, k - 2.0)), dir / name);
    }
}

PipelineConfig small_config() {
    PipelineConfig c;
    c.sgm.d_min = -16;
    c.sgm.d_max = 16;
    c.workers = 1;
    return c;
}

float median_of(std::vector<float> v) {
    REQUIRE_FALSE(v.empty());
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

} // namespace

TEST_CASE("configuration serializes losslessly") {
    const PipelineConfig defaults;
    CHECK(parse_config_json(config_json(defaults), "test") == defaults);

    PipelineConfig custom;
    custom.frame_dir = "/data/frames";
    custom.output_dir = "out";
    custom.stride = 2;
    custom.seed = 123456789;
    custom.features.hessian_threshold = 2e-4;
    custom.features.upright = true;
    custom.ratio_max = 0.8;
    custom.ransac.threshold_px = 1.5;
    custom.ransac.max_iters = 500;
    custom.sgm.census_w = 7;
    custom.sgm.p2 = 90;
    custom.sgm.d_min = -8;
    custom.sgm.d_max = 24;
    custom.fuse_agree_tol = 2.0;
    custom.depth_norm.policy = DepthNormPolicy::PerImage;
    custom.stacks = {StackSpec::from_name("RGB"), StackSpec::from_name("DEPTH"),
                     StackSpec::from_name("HSV-D")};
    custom.workers = 3;
    CHECK(parse_config_json(config_json(custom), "test") == custom);

    support::TempDir dir("config");
    save_config(custom, dir.path / "run.json");
    CHECK(load_config(dir.path / "run.json") == custom);

    // partial documents keep defaults for everything unspecified
    const PipelineConfig sparse = parse_config_json(R"({"seed": 9})", "test");
    CHECK(sparse.seed == 9);
    CHECK(sparse.stride == defaults.stride);
    CHECK(sparse.stacks == defaults.stacks);
}

TEST_CASE("configuration documents are strict about their schema") {
    CHECK_THROWS_WITH_AS((void)parse_config_json(R"({"bogus": 1})", "test"),
                         doctest::Contains("unknown key 'bogus'"), Error);
    CHECK_THROWS_WITH_AS(
        (void)parse_config_json(R"({"features": {"octave_count": 4}})", "test"),
        doctest::Contains("unknown key 'octave_count'"), Error);
    CHECK_THROWS_WITH_AS(
        (void)parse_config_json(R"({"fusion": {"normalization": {"policy": "stretchy"}}})",
                                "test"),
        doctest::Contains("unknown depth normalization policy 'stretchy'"), Error);
    CHECK_THROWS_WITH_AS((void)parse_config_json("[1, 2]", "test"),
                         doctest::Contains("expected a JSON object"), Error);
    CHECK_THROWS_WITH_AS((void)parse_config_json("{oops", "test"),
                         doctest::Contains("cannot parse"), Error);
    CHECK_THROWS_WITH_AS((void)load_config("/nonexistent/config.json"),
                         doctest::Contains("unreadable file"), Error);
}

TEST_CASE("configuration limits are enforced") {
    auto expect_throw = [](PipelineConfig c, const char* fragment, bool require_paths = false) {
        CAPTURE(fragment);
        CHECK_THROWS_WITH_AS(validate_config(c, require_paths), doctest::Contains(fragment),
                             Error);
    };

    {
        PipelineConfig c;
        c.stride = 0;
        expect_throw(c, "stride");
    }
    {
        PipelineConfig c;
        c.ratio_max = 1.5;
        expect_throw(c, "ratio_max");
    }
    {
        PipelineConfig c;
        c.features.octaves = 0;
        CHECK_THROWS_AS(validate_config(c, false), Error);
    }
    {
        PipelineConfig c;
        c.ransac.threshold_px = 0.0;
        CHECK_THROWS_AS(validate_config(c, false), Error);
    }
    {
        PipelineConfig c;
        c.sgm.p1 = 0;
        CHECK_THROWS_AS(validate_config(c, false), Error);
    }
    {
        PipelineConfig c;
        c.fuse_agree_tol = -1.0;
        expect_throw(c, "agree_tol");
    }
    {
        PipelineConfig c;
        c.depth_norm.hi = c.depth_norm.lo;
        expect_throw(c, "hi > lo");
    }
    {
        PipelineConfig c;
        c.stacks.clear();
        expect_throw(c, "at least one stack");
    }
    {
        PipelineConfig c;
        c.stacks = {StackSpec::from_name("RGB"), StackSpec::from_name("RGB")};
        expect_throw(c, "duplicate stack variant RGB");
    }
    {
        PipelineConfig c;
        c.workers = 300;
        expect_throw(c, "workers");
    }
    {
        PipelineConfig c;
        expect_throw(c, "frame directory is not set", true);
        CHECK_NOTHROW(validate_config(c, false)); // paths optional until a run starts
    }
    {
        PipelineConfig c;
        c.frame_dir = "/definitely/not/here";
        c.output_dir = "out";
        expect_throw(c, "frame directory does not exist", true);
    }
    {
        support::TempDir dir("validate");
        PipelineConfig c;
        c.frame_dir = dir.path.string();
        expect_throw(c, "output directory is not set", true);
    }
}

TEST_CASE("frame ingestion windows sorted frames into triples") {
    support::TempDir dir("ingest");
    const MultiChannelImage tiny = support::gray_to_rgb(support::make_texture(8, 8, 1));
    for (const char* name : {"c.png", "a.png", "e.png", "b.png", "d.png"})
        save_png(tiny, dir.path / name);
    std::ofstream(dir.path / "notes.txt") << "ignored";
    std::filesystem::create_directory(dir.path / "subdir");

    const std::vector<FrameTriple> triples = ingest(dir.path);
    REQUIRE(triples.size() == 3);
    const char* expect[][3] = {{"a.png", "b.png", "c.png"},
                               {"b.png", "c.png", "d.png"},
                               {"c.png", "d.png", "e.png"}};
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(triples[i].index == static_cast<int>(i));
        CHECK(triples[i].prev.filename() == expect[i][0]);
        CHECK(triples[i].center.filename() == expect[i][1]);
        CHECK(triples[i].next.filename() == expect[i][2]);
        CHECK(triples[i].center_index == static_cast<int>(i) + 1);
        CHECK(triples[i].prev_index == static_cast<int>(i));
        CHECK(triples[i].next_index == static_cast<int>(i) + 2);
    }

    const std::vector<FrameTriple> strided = ingest(dir.path, 2);
    REQUIRE(strided.size() == 1);
    CHECK(strided[0].prev.filename() == "a.png");
    CHECK(strided[0].center.filename() == "c.png");
    CHECK(strided[0].next.filename() == "e.png");

    CHECK_THROWS_WITH_AS((void)ingest(dir.path, 3), doctest::Contains("need at least 7 frames"),
                         Error);
    CHECK_THROWS_AS((void)ingest(dir.path / "subdir"), Error); // no frames inside
    CHECK_THROWS_WITH_AS((void)ingest("/definitely/not/here"),
                         doctest::Contains("frame directory does not exist"), Error);
}

TEST_CASE("depth from a synthetic triple recovers the banded motion") {
    const support::Triple triple = support::make_triple(256, 192, 7);
    const PipelineConfig config = small_config();

    const DepthResult result = run_depth(triple.prev, triple.center, triple.next, config, 0);

    CHECK(result.prev_pair.inliers >= 8);
    CHECK(result.next_pair.inliers >= 8);
    CHECK(result.prev_pair.median_displacement >= 0.5);

    std::vector<float> valid;
    for (float v : result.fused.map.values)
        if (!std::isnan(v)) valid.push_back(v);
    REQUIRE_FALSE(valid.empty());
    CHECK(result.fused.stats.valid() >= 0.5);
    CHECK(std::abs(median_of(valid) - 5.0f) <= 0.3f);

    // merged coverage should not fall below either contributing pair
    CHECK(result.fused.stats.valid() >= result.prev_pair.valid_fraction - 1e-12);
    CHECK(result.fused.stats.valid() >= result.next_pair.valid_fraction - 1e-12);

    // the depth plane marks exactly the valid pixels
    std::size_t nonzero = 0;
    for (std::uint8_t b : result.normalized.plane) nonzero += b != 0;
    CHECK(static_cast<double>(nonzero) / result.normalized.plane.size() ==
          result.fused.stats.valid());
}

TEST_CASE("depth computation is reproducible") {
    const support::Triple triple = support::make_triple(192, 144, 15);
    const PipelineConfig config = small_config();

    const DepthResult a = run_depth(triple.prev, triple.center, triple.next, config, 4);
    const DepthResult b = run_depth(triple.prev, triple.center, triple.next, config, 4);
    REQUIRE(a.fused.map.values.size() == b.fused.map.values.size());
    CHECK(std::memcmp(a.fused.map.values.data(), b.fused.map.values.data(),
                      a.fused.map.values.size() * sizeof(float)) == 0);
    CHECK(a.normalized.plane == b.normalized.plane);
    CHECK(a.prev_pair.inliers == b.prev_pair.inliers);
    CHECK(a.next_pair.ransac_iterations == b.next_pair.ransac_iterations);
}

TEST_CASE("depth failures carry actionable reasons") {
    const PipelineConfig config = small_config();

    // static camera: everything matches with zero displacement
    const MultiChannelImage still = support::gray_to_rgb(support::make_texture(200, 150, 3));
    CHECK_THROWS_WITH_AS((void)run_depth(still, still, still, config, 0),
                         doctest::Contains("insufficient parallax"), Error);

    // featureless frames
    const MultiChannelImage flat = support::gray_to_rgb(GrayImage(96, 96));
    CHECK_THROWS_WITH_AS((void)run_depth(flat, flat, flat, config, 0),
                         doctest::Contains("too few matches"), Error);

    const MultiChannelImage small = support::gray_to_rgb(support::make_texture(180, 150, 3));
    CHECK_THROWS_WITH_AS((void)run_depth(small, still, still, config, 0),
                         doctest::Contains("different sizes"), Error);
}

TEST_CASE("the batch pipeline writes stacks, reports and a summary") {
    support::TempDir dir("batch");
    const auto frames = dir.path / "frames";
    std::filesystem::create_directories(frames);
    write_sequence(frames, 256, 192, 11);

    PipelineConfig config = small_config();
    config.frame_dir = frames.string();
    config.output_dir = (dir.path / "out").string();
    config.seed = 7;

    const PipelineSummary summary = run_pipeline(config);
    CHECK(summary.triples == 3);
    CHECK(summary.successes == 3);
    CHECK(summary.failures == 0);
    REQUIRE(summary.outputs.size() == 3);
    CHECK(summary.outputs[0] == "triple-0000-LAB-D.mcim");

    for (const std::string& name : summary.outputs) {
        const ChannelStack stack = read_mcim(dir.path / "out" / name);
        CHECK(stack.image.channel_count() == 4);
        CHECK(stack.image.width() == 256);
    }
    CHECK(std::filesystem::exists(dir.path / "out" / "exposure.txt"));
    CHECK(std::filesystem::exists(dir.path / "out" / "summary.json"));

    // exposure covers the three centre frames
    REQUIRE(summary.exposure.per_image.size() == 3);
    CHECK(summary.exposure.per_image[0].frame_id == "frame-01.png");
    CHECK(summary.exposure.total_pixels == 3ull * 256 * 192);

    const nlohmann::json doc = nlohmann::json::parse(summary_json(summary));
    CHECK(doc.at("triples").get<int>() == 3);
    CHECK(doc.at("successes").get<int>() == 3);
    CHECK(doc.at("outcomes").size() == 3);
    CHECK(doc.at("outputs").size() == 3);
    CHECK(doc.at("outcomes")[0].at("ok").get<bool>());

    const std::string human = format_summary(summary);
    CHECK(human.find("triples 3, succeeded 3, failed 0") != std::string::npos);

    // a second identical run produces byte-identical containers
    PipelineConfig again = config;
    again.output_dir = (dir.path / "out2").string();
    const PipelineSummary second = run_pipeline(again);
    REQUIRE(second.outputs == summary.outputs);
    for (const std::string& name : summary.outputs) {
        CHECK(file_bytes(dir.path / "out" / name) == file_bytes(dir.path / "out2" / name));
    }
    CHECK(file_bytes(dir.path / "out" / "summary.json") ==
          file_bytes(dir.path / "out2" / "summary.json"));
}

TEST_CASE("one broken frame does not sink the batch") {
    support::TempDir dir("broken");
    const auto frames = dir.path / "frames";
    std::filesystem::create_directories(frames);
    write_sequence(frames, 192, 144, 21);
    std::ofstream(frames / "frame-04.png", std::ios::binary) << "this is not a png";

    PipelineConfig config = small_config();
    config.frame_dir = frames.string();
    config.output_dir = (dir.path / "out").string();

    const PipelineSummary summary = run_pipeline(config);
    CHECK(summary.triples == 3);
    CHECK(summary.successes == 2);
    CHECK(summary.failures == 1);
    CHECK(summary.outputs.size() == 2);

    REQUIRE(summary.outcomes.size() == 3);
    CHECK(summary.outcomes[0].ok);
    CHECK(summary.outcomes[1].ok);
    CHECK_FALSE(summary.outcomes[2].ok);
    CHECK_FALSE(summary.outcomes[2].error.empty());

    const std::string human = format_summary(summary);
    CHECK(human.find("FAILED") != std::string::npos);
}

TEST_CASE("the batch pipeline refuses an invalid configuration up front") {
    PipelineConfig config;
    config.frame_dir = "/definitely/not/here";
    config.output_dir = "/tmp/unused";
    CHECK_THROWS_WITH_AS((void)run_pipeline(config),
                         doctest::Contains("frame directory does not exist"), Error);
}
