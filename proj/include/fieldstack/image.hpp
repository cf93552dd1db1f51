#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fieldstack {

/// Error type thrown by all library operations on contract violations.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Semantic channel tags. B* is the CIELAB blue-yellow opponent channel,
/// kept distinct from the RGB blue channel.
enum class Channel : std::uint8_t { R, G, B, H, S, V, L, A, Bstar, Depth, Gray };

std::string_view channel_name(Channel c);
std::optional<Channel> channel_from_name(std::string_view name);

enum class SampleType : std::uint8_t { U8 = 0, F32 = 1 };

/// Planar raster with per-channel semantic labels. All planes share one
/// sample type; storage is channel-major (plane 0 first, row-major rows).
class MultiChannelImage {
public:
    MultiChannelImage(int width, int height, std::vector<Channel> labels,
                      SampleType type = SampleType::U8);

    int width() const { return width_; }
    int height() const { return height_; }
    int channel_count() const { return static_cast<int>(labels_.size()); }
    SampleType sample_type() const { return type_; }
    const std::vector<Channel>& labels() const { return labels_; }

    /// Index of the first plane with the given label, or -1.
    int find_channel(Channel c) const;
    bool has_channels(std::initializer_list<Channel> cs) const;

    std::span<std::uint8_t> plane_u8(int c);
    std::span<const std::uint8_t> plane_u8(int c) const;
    std::span<float> plane_f32(int c);
    std::span<const float> plane_f32(int c) const;

    std::uint8_t at_u8(int c, int x, int y) const {
        return plane_u8(c)[static_cast<std::size_t>(y) * width_ + x];
    }
    void set_u8(int c, int x, int y, std::uint8_t v) {
        plane_u8(c)[static_cast<std::size_t>(y) * width_ + x] = v;
    }

    bool operator==(const MultiChannelImage&) const = default;

private:
    std::size_t plane_size() const { return static_cast<std::size_t>(width_) * height_; }
    void check_plane(int c) const;

    int width_ = 0;
    int height_ = 0;
    SampleType type_ = SampleType::U8;
    std::vector<Channel> labels_;
    std::vector<std::uint8_t> data_u8_;
    std::vector<float> data_f32_;
};

/// Single-plane 32-bit luminance raster, samples in [0,1].
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<float> samples;

    GrayImage() = default;
    GrayImage(int w, int h) : width(w), height(h), samples(static_cast<std::size_t>(w) * h, 0.f) {}

    float at(int x, int y) const { return samples[static_cast<std::size_t>(y) * width + x]; }
    float& at(int x, int y) { return samples[static_cast<std::size_t>(y) * width + x]; }

    bool operator==(const GrayImage&) const = default;
};

/// Summed-area table over a GrayImage; entry (x,y) is the sum of all
/// samples with coordinates strictly below (x,y). Sized (width+1)x(height+1).
class IntegralImage {
public:
    explicit IntegralImage(const GrayImage& g);

    int width() const { return width_; }    // source image width
    int height() const { return height_; }  // source image height

    double entry(int x, int y) const { return table_[static_cast<std::size_t>(y) * (width_ + 1) + x]; }

    /// Sum over the rectangle [x0, x0+w) x [y0, y0+h); caller keeps it in bounds.
    double rect_sum(int x0, int y0, int w, int h) const;

    /// Sum over a rectangle given by top-left (row, col) and extents, with the
    /// rectangle clamped to the image. Used by box-filter responses near borders.
    double box_sum(int row, int col, int rows, int cols) const;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> table_;
};

GrayImage to_gray(const MultiChannelImage& img);
IntegralImage integral(const GrayImage& g);

/// GRAY plane scaled to [0,1], or BT.601 luminance for R,G,B images.
GrayImage as_gray(const MultiChannelImage& img);

enum class Interp { Bilinear, Nearest };

struct Extent {
    int width = 0;
    int height = 0;
};

/// Projective resampling. H maps *output* pixel coordinates to source
/// coordinates (inverse mapping); samples falling outside the source are 0.
/// Output geometry equals the input's unless `extent` is given.
MultiChannelImage warp_projective(const MultiChannelImage& img, const double H[9],
                                  std::optional<Extent> extent = std::nullopt,
                                  Interp interp = Interp::Bilinear);
GrayImage warp_gray(const GrayImage& img, const double H[9],
                    std::optional<Extent> extent = std::nullopt);

/// Raster I/O: PNG and JPEG input (8-bit, 1 or 3 channels), PNG output.
MultiChannelImage load_raster(const std::filesystem::path& path);
void save_png(const MultiChannelImage& img, const std::filesystem::path& path);

} // namespace fieldstack
