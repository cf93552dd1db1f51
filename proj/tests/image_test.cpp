#include <doctest.h>

#include <fstream>
#include <random>

#include "fieldstack/image.hpp"
#include "support.hpp"

using namespace fieldstack;

TEST_CASE("channel names round-trip") {
    for (Channel c : {Channel::R, Channel::G, Channel::B, Channel::H, Channel::S, Channel::V,
                      Channel::L, Channel::A, Channel::Bstar, Channel::Depth, Channel::Gray}) {
        const auto back = channel_from_name(channel_name(c));
        REQUIRE(back.has_value());
        CHECK(*back == c);
    }
    CHECK_FALSE(channel_from_name("XYZ").has_value());
}

TEST_CASE("multi-channel image plane access") {
    MultiChannelImage img(4, 3, {Channel::R, Channel::G, Channel::B});
    CHECK(img.width() == 4);
    CHECK(img.height() == 3);
    CHECK(img.channel_count() == 3);
    CHECK(img.find_channel(Channel::G) == 1);
    CHECK(img.find_channel(Channel::Depth) == -1);
    CHECK(img.has_channels({Channel::R, Channel::B}));
    CHECK_FALSE(img.has_channels({Channel::R, Channel::L}));

    img.set_u8(1, 2, 1, 77);
    CHECK(img.at_u8(1, 2, 1) == 77);
    CHECK_THROWS_AS((void)img.plane_u8(3), Error);

    MultiChannelImage f32(2, 2, {Channel::Depth}, SampleType::F32);
    CHECK_THROWS_AS((void)f32.plane_u8(0), Error);
    f32.plane_f32(0)[0] = 1.5f;
    CHECK(f32.plane_f32(0)[0] == 1.5f);
}

TEST_CASE("integral image matches direct summation") {
    std::mt19937_64 rng(11);
    const GrayImage g = support::make_texture(23, 17, 3);
    const IntegralImage ii(g);

    std::uniform_int_distribution<int> ux(0, g.width - 1), uy(0, g.height - 1);
    for (int trial = 0; trial < 200; ++trial) {
        int x0 = ux(rng), x1 = ux(rng), y0 = uy(rng), y1 = uy(rng);
        if (x1 < x0) std::swap(x0, x1);
        if (y1 < y0) std::swap(y0, y1);
        const int w = x1 - x0 + 1, h = y1 - y0 + 1;
        double direct = 0.0;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) direct += g.at(x, y);
        CHECK(ii.rect_sum(x0, y0, w, h) == doctest::Approx(direct).epsilon(1e-9));
    }
}

TEST_CASE("clamped box sums ignore out-of-image area") {
    GrayImage g(4, 4);
    for (auto& v : g.samples) v = 1.0f;
    const IntegralImage ii(g);
    CHECK(ii.box_sum(0, 0, 4, 4) == doctest::Approx(16.0));
    CHECK(ii.box_sum(-2, -2, 4, 4) == doctest::Approx(4.0));   // only 2x2 inside
    CHECK(ii.box_sum(2, 2, 10, 10) == doctest::Approx(4.0));
    CHECK(ii.box_sum(-5, -5, 2, 2) == doctest::Approx(0.0));
}

TEST_CASE("luminance conversion") {
    MultiChannelImage img(3, 1, {Channel::R, Channel::G, Channel::B});
    // red, green, blue pixels
    img.set_u8(0, 0, 0, 255);
    img.set_u8(1, 1, 0, 255);
    img.set_u8(2, 2, 0, 255);
    const GrayImage g = as_gray(img);
    CHECK(g.at(0, 0) == doctest::Approx(0.299).epsilon(1e-3));
    CHECK(g.at(1, 0) == doctest::Approx(0.587).epsilon(1e-3));
    CHECK(g.at(2, 0) == doctest::Approx(0.114).epsilon(1e-3));

    MultiChannelImage gray(2, 1, {Channel::Gray});
    gray.set_u8(0, 0, 0, 255);
    const GrayImage g2 = as_gray(gray);
    CHECK(g2.at(0, 0) == doctest::Approx(1.0));
    CHECK(g2.at(1, 0) == doctest::Approx(0.0));
}

TEST_CASE("projective warp with identity and translation") {
    const GrayImage g = support::make_texture(20, 14, 5);

    const double ident[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    CHECK(warp_gray(g, ident) == g);

    // output(x, y) samples source at (x+3, y): content shifts left by 3
    const double shift[9] = {1, 0, 3, 0, 1, 0, 0, 0, 1};
    const GrayImage moved = warp_gray(g, shift);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x + 3 < g.width; ++x)
            CHECK(moved.at(x, y) == doctest::Approx(g.at(x + 3, y)));
    CHECK(moved.at(g.width - 1, 0) == doctest::Approx(0.0)); // outside source
}

TEST_CASE("png io round-trips both layouts") {
    support::TempDir tmp("png");

    const MultiChannelImage rgb = support::gray_to_rgb(support::make_texture(9, 7, 21));
    save_png(rgb, tmp.path / "rgb.png");
    CHECK(load_raster(tmp.path / "rgb.png") == rgb);

    MultiChannelImage gray(5, 4, {Channel::Gray});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x) gray.set_u8(0, x, y, static_cast<std::uint8_t>(10 * x + y));
    save_png(gray, tmp.path / "gray.png");
    CHECK(load_raster(tmp.path / "gray.png") == gray);
}

TEST_CASE("raster loader rejects what it cannot read") {
    support::TempDir tmp("rasterr");
    CHECK_THROWS_AS((void)load_raster(tmp.path / "absent.png"), Error);

    std::ofstream(tmp.path / "bogus.txt") << "hello";
    CHECK_THROWS_AS((void)load_raster(tmp.path / "bogus.txt"), Error);

    std::ofstream(tmp.path / "bad.png") << "not a png at all";
    CHECK_THROWS_AS((void)load_raster(tmp.path / "bad.png"), Error);
}
