#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "fieldstack/colorspace.hpp"
#include "fieldstack/stack.hpp"
#include "support.hpp"

using namespace fieldstack;

namespace {

MultiChannelImage random_rgb(int w, int h, std::uint64_t seed) {
    MultiChannelImage img(w, h, {Channel::R, Channel::G, Channel::B});
    std::mt19937_64 rng(seed);
    for (int c = 0; c < 3; ++c) {
        auto plane = img.plane_u8(c);
        for (auto& v : plane) v = static_cast<std::uint8_t>(rng() & 0xff);
    }
    return img;
}

std::vector<std::uint8_t> ramp_depth(int w, int h) {
    std::vector<std::uint8_t> plane(static_cast<std::size_t>(w) * h);
    for (std::size_t i = 0; i < plane.size(); ++i)
        plane[i] = static_cast<std::uint8_t>(i * 13 % 256);
    return plane;
}

std::uint32_t crc32_ref(const std::vector<std::uint8_t>& data, std::size_t n) {
    std::uint32_t crc = 0xffffffffu;
    for (std::size_t i = 0; i < n; ++i) {
        crc ^= data[i];
        for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xedb88320u & (0u - (crc & 1u)));
    }
    return ~crc;
}

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v & 0xff));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& b, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(b, bits);
}

void seal_and_write(const std::filesystem::path& p, std::vector<std::uint8_t> content) {
    put_u32(content, crc32_ref(content, content.size()));
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(content.data()),
              static_cast<std::streamsize>(content.size()));
}

// minimal single-channel container: 1x1 "R" plane holding one byte
std::vector<std::uint8_t> tiny_container(std::uint16_t version, std::uint8_t dtype,
                                         const std::string& label, std::uint32_t w = 1,
                                         std::uint32_t h = 1) {
    std::vector<std::uint8_t> b = {'M', 'C', 'I', 'M'};
    put_u16(b, version);
    put_u32(b, w);
    put_u32(b, h);
    put_u16(b, 1);
    b.push_back(dtype);
    b.push_back(0);
    b.push_back(static_cast<std::uint8_t>(label.size()));
    b.insert(b.end(), label.begin(), label.end());
    put_f32(b, 0.0f);
    put_f32(b, 1.0f);
    for (std::uint32_t i = 0; i < w * h; ++i) b.push_back(42);
    return b;
}

} // namespace

TEST_CASE("stack variant names parse and print consistently") {
    const struct {
        const char* name;
        ColourSpace space;
        bool depth;
        int channels;
    } table[] = {
        {"RGB", ColourSpace::RGB, false, 3},   {"RGB-D", ColourSpace::RGB, true, 4},
        {"HSV", ColourSpace::HSV, false, 3},   {"HSV-D", ColourSpace::HSV, true, 4},
        {"LAB", ColourSpace::LAB, false, 3},   {"LAB-D", ColourSpace::LAB, true, 4},
        {"DEPTH", ColourSpace::Depth, false, 1},
    };
    for (const auto& row : table) {
        CAPTURE(row.name);
        const StackSpec spec = StackSpec::from_name(row.name);
        CHECK(spec.colour_space == row.space);
        CHECK(spec.include_depth == row.depth);
        CHECK(spec.channel_count() == row.channels);
        CHECK(spec.name() == row.name);
    }
    CHECK(StackSpec::from_name("lab-d") == StackSpec::from_name("LAB-D"));
    CHECK(StackSpec::from_name("Hsv") == StackSpec::from_name("HSV"));
    CHECK_THROWS_WITH_AS((void)StackSpec::from_name("XYZ"), "unknown stack variant: XYZ", Error);

    CHECK(StackSpec::from_name("LAB-D").channels() ==
          std::vector<Channel>{Channel::L, Channel::A, Channel::Bstar, Channel::Depth});
    CHECK(StackSpec::from_name("DEPTH").channels() == std::vector<Channel>{Channel::Depth});
}

TEST_CASE("channel quantizers cover their physical ranges") {
    CHECK(quantize(100.0f, quant_for_channel(Channel::L)) == 255);
    CHECK(quantize(0.0f, quant_for_channel(Channel::L)) == 0);
    CHECK(quantize(50.0f, quant_for_channel(Channel::L)) == 127); // 50 * 2.55f lands just under the half
    CHECK(quantize(-10.0f, quant_for_channel(Channel::L)) == 0);  // clamps

    CHECK(quantize(0.0f, quant_for_channel(Channel::A)) == 128);
    CHECK(dequantize(128, quant_for_channel(Channel::A)) == 0.0f);
    CHECK(quantize(-128.0f, quant_for_channel(Channel::A)) == 0);
    CHECK(quantize(127.0f, quant_for_channel(Channel::Bstar)) == 255);

    CHECK(quantize(360.0f, quant_for_channel(Channel::H)) == 255);
    CHECK(quantize(1.0f, quant_for_channel(Channel::S)) == 255);
    CHECK(quantize(200.0f, quant_for_channel(Channel::R)) == 200); // byte passthrough

    // round trips stay within half a quantization step
    std::mt19937_64 rng(3);
    const struct {
        Channel c;
        float lo, hi;
    } spans[] = {{Channel::L, 0.0f, 100.0f},
                 {Channel::A, -128.0f, 127.0f},
                 {Channel::H, 0.0f, 360.0f},
                 {Channel::V, 0.0f, 1.0f}};
    for (const auto& s : spans) {
        const QuantRecord q = quant_for_channel(s.c);
        std::uniform_real_distribution<float> u(s.lo, s.hi);
        for (int i = 0; i < 200; ++i) {
            const float v = u(rng);
            const float back = dequantize(quantize(v, q), q);
            CHECK(std::abs(back - v) <= 0.5f / q.scale + 1e-4f);
        }
    }
}

TEST_CASE("an RGB stack stores the source bytes untouched") {
    const MultiChannelImage rgb = random_rgb(9, 7, 1);
    const ChannelStack stack = assemble_stack(rgb, StackSpec::from_name("RGB"));
    REQUIRE(stack.image.channel_count() == 3);
    for (int c = 0; c < 3; ++c) {
        const auto src = rgb.plane_u8(c);
        const auto dst = stack.image.plane_u8(c);
        CHECK(std::equal(src.begin(), src.end(), dst.begin()));
        CHECK(stack.quant[static_cast<std::size_t>(c)] == QuantRecord{0.0f, 1.0f});
    }
}

TEST_CASE("a colour-plus-depth stack quantizes the converted planes and copies depth") {
    const MultiChannelImage rgb = random_rgb(6, 5, 2);
    const std::vector<std::uint8_t> depth = ramp_depth(6, 5);
    const ChannelStack stack = assemble_stack(rgb, StackSpec::from_name("LAB-D"), &depth);

    REQUIRE(stack.image.labels() ==
            std::vector<Channel>{Channel::L, Channel::A, Channel::Bstar, Channel::Depth});

    const LabImage lab = rgb_to_lab(rgb);
    const auto lp = stack.image.plane_u8(0);
    const auto ap = stack.image.plane_u8(1);
    const auto bp = stack.image.plane_u8(2);
    const auto dp = stack.image.plane_u8(3);
    for (std::size_t i = 0; i < lab.l.size(); ++i) {
        CHECK(lp[i] == quantize(lab.l[i], quant_for_channel(Channel::L)));
        CHECK(ap[i] == quantize(lab.a[i], quant_for_channel(Channel::A)));
        CHECK(bp[i] == quantize(lab.b[i], quant_for_channel(Channel::Bstar)));
        CHECK(dp[i] == depth[i]);
    }

    // recovered plane values sit within half a step of the originals
    const std::vector<float> l_back = dequantize_plane(stack, 0);
    for (std::size_t i = 0; i < lab.l.size(); ++i)
        CHECK(std::abs(l_back[i] - lab.l[i]) <= 0.5f / 2.55f + 1e-4f);
    CHECK_THROWS_WITH_AS((void)dequantize_plane(stack, 4), "channel index out of range", Error);
}

TEST_CASE("depth-only stacks and depth plane validation") {
    const MultiChannelImage rgb = random_rgb(4, 3, 3);
    const std::vector<std::uint8_t> depth = ramp_depth(4, 3);

    const ChannelStack d = assemble_stack(rgb, StackSpec::from_name("DEPTH"), &depth);
    REQUIRE(d.image.channel_count() == 1);
    const auto plane = d.image.plane_u8(0);
    CHECK(std::equal(depth.begin(), depth.end(), plane.begin()));

    CHECK_THROWS_WITH_AS((void)assemble_stack(rgb, StackSpec::from_name("RGB-D")),
                         "stack variant RGB-D requires a depth plane", Error);
    const std::vector<std::uint8_t> wrong(5, 0);
    CHECK_THROWS_WITH_AS((void)assemble_stack(rgb, StackSpec::from_name("DEPTH"), &wrong),
                         "depth plane size does not match the image", Error);
}

TEST_CASE("containers round trip bit for bit and match their declared size") {
    support::TempDir dir("stack");
    const MultiChannelImage rgb = random_rgb(11, 8, 4);
    const std::vector<std::uint8_t> depth = ramp_depth(11, 8);

    for (const char* name : {"RGB", "RGB-D", "HSV", "HSV-D", "LAB", "LAB-D", "DEPTH"}) {
        CAPTURE(name);
        const ChannelStack stack = assemble_stack(rgb, StackSpec::from_name(name), &depth);
        const auto path = dir.path / (std::string(name) + ".mcim");
        write_mcim(path, stack);

        CHECK(std::filesystem::file_size(path) == mcim_file_size(stack));
        const ChannelStack back = read_mcim(path);
        CHECK(back == stack);
    }

    // the writer must not leave temp files behind
    for (const auto& entry : std::filesystem::directory_iterator(dir.path))
        CHECK(entry.path().extension() == ".mcim");

    // overwriting an existing container is fine
    const ChannelStack stack = assemble_stack(rgb, StackSpec::from_name("RGB"));
    write_mcim(dir.path / "RGB.mcim", stack);
    CHECK(read_mcim(dir.path / "RGB.mcim") == stack);
}

TEST_CASE("container corruption and format violations are reported") {
    support::TempDir dir("badstack");
    const auto path = dir.path / "t.mcim";
    const ChannelStack stack =
        assemble_stack(random_rgb(7, 6, 5), StackSpec::from_name("HSV"));
    write_mcim(path, stack);

    auto bytes = [&] {
        std::ifstream in(path, std::ios::binary);
        return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
    }();

    SUBCASE("a flipped payload byte breaks the checksum") {
        auto bad = bytes;
        bad[bad.size() / 2] ^= 0x40;
        std::ofstream(path, std::ios::binary)
            .write(reinterpret_cast<const char*>(bad.data()),
                   static_cast<std::streamsize>(bad.size()));
        CHECK_THROWS_WITH_AS((void)read_mcim(path), doctest::Contains("checksum mismatch"),
                             Error);
    }

    SUBCASE("a short file is truncated") {
        auto bad = bytes;
        bad.resize(10);
        std::ofstream(path, std::ios::binary)
            .write(reinterpret_cast<const char*>(bad.data()),
                   static_cast<std::streamsize>(bad.size()));
        CHECK_THROWS_WITH_AS((void)read_mcim(path), doctest::Contains("truncated container"),
                             Error);
    }

    SUBCASE("wrong magic") {
        auto content = tiny_container(1, 0, "R");
        content[0] = 'X';
        seal_and_write(path, content);
        CHECK_THROWS_WITH_AS((void)read_mcim(path), doctest::Contains("not a stack container"),
                             Error);
    }

    SUBCASE("future version") {
        seal_and_write(path, tiny_container(9, 0, "R"));
        CHECK_THROWS_WITH_AS((void)read_mcim(path),
                             doctest::Contains("unsupported container version 9"), Error);
    }

    SUBCASE("non-byte samples") {
        seal_and_write(path, tiny_container(1, 3, "R"));
        CHECK_THROWS_WITH_AS((void)read_mcim(path), doctest::Contains("unsupported sample type"),
                             Error);
    }

    SUBCASE("unknown channel label") {
        seal_and_write(path, tiny_container(1, 0, "Q"));
        CHECK_THROWS_WITH_AS((void)read_mcim(path),
                             doctest::Contains("unknown channel label \"Q\""), Error);
    }

    SUBCASE("zero-sized stack") {
        seal_and_write(path, tiny_container(1, 0, "R", 0, 1));
        CHECK_THROWS_WITH_AS((void)read_mcim(path), doctest::Contains("empty stack dimensions"),
                             Error);
    }

    SUBCASE("payload shorter than the header promises") {
        auto content = tiny_container(1, 0, "R", 2, 2);
        content.pop_back();
        seal_and_write(path, content);
        CHECK_THROWS_AS((void)read_mcim(path), Error);
    }

    SUBCASE("missing file") {
        CHECK_THROWS_WITH_AS((void)read_mcim(dir.path / "absent.mcim"),
                             doctest::Contains("unreadable file"), Error);
    }
}

TEST_CASE("the declared container size is the exact layout arithmetic") {
    const MultiChannelImage rgb = random_rgb(10, 4, 6);
    const std::vector<std::uint8_t> depth = ramp_depth(10, 4);
    const ChannelStack stack = assemble_stack(rgb, StackSpec::from_name("HSV-D"), &depth);

    std::uint64_t expect = 18; // fixed header
    for (Channel c : stack.image.labels()) expect += 1 + channel_name(c).size();
    expect += 8ull * 4;       // quantization records
    expect += 10ull * 4 * 4;  // planes
    expect += 4;              // checksum
    CHECK(mcim_file_size(stack) == expect);
}
