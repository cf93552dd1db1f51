#pragma once

#include <string>
#include <vector>

#include "fieldstack/image.hpp"

namespace fieldstack {

/// CIELAB planes: L in [0,100], A and B* roughly in [-128,127].
struct LabImage {
    int width = 0;
    int height = 0;
    std::vector<float> l, a, b;

    LabImage() = default;
    LabImage(int w, int h)
        : width(w), height(h),
          l(static_cast<std::size_t>(w) * h, 0.f),
          a(static_cast<std::size_t>(w) * h, 0.f),
          b(static_cast<std::size_t>(w) * h, 0.f) {}
};

/// HSV planes: H in degrees [0,360) (0 when S = 0), S and V in [0,1].
struct HsvImage {
    int width = 0;
    int height = 0;
    std::vector<float> h, s, v;

    HsvImage() = default;
    HsvImage(int w, int h_)
        : width(w), height(h_),
          h(static_cast<std::size_t>(w) * h_, 0.f),
          s(static_cast<std::size_t>(w) * h_, 0.f),
          v(static_cast<std::size_t>(w) * h_, 0.f) {}
};

LabImage rgb_to_lab(const MultiChannelImage& img);
MultiChannelImage lab_to_rgb(const LabImage& img);
HsvImage rgb_to_hsv(const MultiChannelImage& img);
MultiChannelImage hsv_to_rgb(const HsvImage& img);

namespace color {
// Per-pixel conversions on 8-bit sRGB values; exposed for reuse by the
// channel-stack quantizer and the CLI.
void srgb_to_lab(std::uint8_t r, std::uint8_t g, std::uint8_t b, double& L, double& A, double& B);
void lab_to_srgb(double L, double A, double B, std::uint8_t& r, std::uint8_t& g, std::uint8_t& b);
void srgb_to_hsv(std::uint8_t r, std::uint8_t g, std::uint8_t b, double& H, double& S, double& V);
void hsv_to_srgb(double H, double S, double V, std::uint8_t& r, std::uint8_t& g, std::uint8_t& b);
} // namespace color

/// Standard deviation of the CIELAB L channel, per frame and pooled over all
/// pixels of all frames. Population form; pooled figure computed from pooled
/// sums rather than averaging per-frame values.
struct ExposureReport {
    struct FrameStat {
        std::string frame_id;
        double stddev = 0.0;
        std::size_t pixels = 0;
    };
    std::vector<FrameStat> per_image;
    double dataset_stddev = 0.0;
    double mean_of_per_image = 0.0;
    std::size_t total_pixels = 0;
};

/// Streaming accumulator so a directory of frames never has to sit in memory.
class ExposureAccumulator {
public:
    void add_frame(const std::string& frame_id, const MultiChannelImage& img);
    ExposureReport report() const;
    bool empty() const { return frames_.empty(); }

private:
    struct Entry {
        std::string id;
        double origin = 0.0; // first sample; sums are of (v - origin)
        double sum = 0.0;
        double sum_sq = 0.0;
        std::size_t n = 0;
    };
    std::vector<Entry> frames_;
};

ExposureReport exposure_report(const std::vector<MultiChannelImage>& frames,
                               const std::vector<std::string>& frame_ids = {});

/// Two-column table mirroring the (frame, stddev) report layout.
std::string format_exposure_table(const ExposureReport& report);

} // namespace fieldstack
