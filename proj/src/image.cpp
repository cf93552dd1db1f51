#include "fieldstack/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace fieldstack {

namespace {

constexpr std::array<std::string_view, 11> kChannelNames = {
    "R", "G", "B", "H", "S", "V", "L", "A", "B*", "DEPTH", "GRAY"};

} // namespace

std::string_view channel_name(Channel c) {
    return kChannelNames[static_cast<std::size_t>(c)];
}

std::optional<Channel> channel_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kChannelNames.size(); ++i) {
        if (kChannelNames[i] == name) return static_cast<Channel>(i);
    }
    return std::nullopt;
}

MultiChannelImage::MultiChannelImage(int width, int height, std::vector<Channel> labels,
                                     SampleType type)
    : width_(width), height_(height), type_(type), labels_(std::move(labels)) {
    if (width_ <= 0 || height_ <= 0) throw Error("image dimensions must be positive");
    if (labels_.empty()) throw Error("image needs at least one channel");
    const std::size_t n = plane_size() * labels_.size();
    if (type_ == SampleType::U8) {
        data_u8_.assign(n, 0);
    } else {
        data_f32_.assign(n, 0.f);
    }
}

int MultiChannelImage::find_channel(Channel c) const {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] == c) return static_cast<int>(i);
    }
    return -1;
}

bool MultiChannelImage::has_channels(std::initializer_list<Channel> cs) const {
    return std::all_of(cs.begin(), cs.end(), [&](Channel c) { return find_channel(c) >= 0; });
}

void MultiChannelImage::check_plane(int c) const {
    if (c < 0 || c >= channel_count()) throw Error("channel index out of range");
}

std::span<std::uint8_t> MultiChannelImage::plane_u8(int c) {
    check_plane(c);
    if (type_ != SampleType::U8) throw Error("image does not hold 8-bit samples");
    return {data_u8_.data() + plane_size() * c, plane_size()};
}

std::span<const std::uint8_t> MultiChannelImage::plane_u8(int c) const {
    check_plane(c);
    if (type_ != SampleType::U8) throw Error("image does not hold 8-bit samples");
    return {data_u8_.data() + plane_size() * c, plane_size()};
}

std::span<float> MultiChannelImage::plane_f32(int c) {
    check_plane(c);
    if (type_ != SampleType::F32) throw Error("image does not hold 32-bit samples");
    return {data_f32_.data() + plane_size() * c, plane_size()};
}

std::span<const float> MultiChannelImage::plane_f32(int c) const {
    check_plane(c);
    if (type_ != SampleType::F32) throw Error("image does not hold 32-bit samples");
    return {data_f32_.data() + plane_size() * c, plane_size()};
}

GrayImage to_gray(const MultiChannelImage& img) {
    if (!img.has_channels({Channel::R, Channel::G, Channel::B}))
        throw Error("to_gray needs R,G,B channel labels");
    const auto r = img.plane_u8(img.find_channel(Channel::R));
    const auto g = img.plane_u8(img.find_channel(Channel::G));
    const auto b = img.plane_u8(img.find_channel(Channel::B));
    GrayImage out(img.width(), img.height());
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
        const double y = (0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]) / 255.0;
        out.samples[i] = static_cast<float>(std::clamp(y, 0.0, 1.0));
    }
    return out;
}

GrayImage as_gray(const MultiChannelImage& img) {
    const int gray = img.find_channel(Channel::Gray);
    if (gray >= 0) {
        const auto p = img.plane_u8(gray);
        GrayImage out(img.width(), img.height());
        for (std::size_t i = 0; i < out.samples.size(); ++i)
            out.samples[i] = static_cast<float>(p[i]) / 255.f;
        return out;
    }
    return to_gray(img);
}

IntegralImage::IntegralImage(const GrayImage& g) : width_(g.width), height_(g.height) {
    table_.assign(static_cast<std::size_t>(width_ + 1) * (height_ + 1), 0.0);
    for (int y = 0; y < height_; ++y) {
        double row_sum = 0.0;
        const std::size_t src = static_cast<std::size_t>(y) * width_;
        const std::size_t above = static_cast<std::size_t>(y) * (width_ + 1);
        const std::size_t here = static_cast<std::size_t>(y + 1) * (width_ + 1);
        for (int x = 0; x < width_; ++x) {
            row_sum += g.samples[src + x];
            table_[here + x + 1] = table_[above + x + 1] + row_sum;
        }
    }
}

double IntegralImage::rect_sum(int x0, int y0, int w, int h) const {
    const int x1 = x0 + w;
    const int y1 = y0 + h;
    return entry(x1, y1) - entry(x0, y1) - entry(x1, y0) + entry(x0, y0);
}

double IntegralImage::box_sum(int row, int col, int rows, int cols) const {
    const int r0 = std::clamp(row, 0, height_);
    const int c0 = std::clamp(col, 0, width_);
    const int r1 = std::clamp(row + rows, 0, height_);
    const int c1 = std::clamp(col + cols, 0, width_);
    if (r1 <= r0 || c1 <= c0) return 0.0;
    return entry(c1, r1) - entry(c0, r1) - entry(c1, r0) + entry(c0, r0);
}

IntegralImage integral(const GrayImage& g) { return IntegralImage(g); }

namespace {

struct Homography {
    double m[9];

    static Homography from(const double H[9]) {
        Homography h;
        std::copy(H, H + 9, h.m);
        return h;
    }

    // (x, y, 1) -> inhomogeneous (u, v); returns false when w ~ 0
    bool apply(double x, double y, double& u, double& v) const {
        const double w = m[6] * x + m[7] * y + m[8];
        if (std::abs(w) < 1e-15) return false;
        u = (m[0] * x + m[1] * y + m[2]) / w;
        v = (m[3] * x + m[4] * y + m[5]) / w;
        return true;
    }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }
};

template <typename Sample, typename Fetch>
Sample sample_bilinear(double sx, double sy, int w, int h, Fetch fetch) {
    if (sx < 0.0 || sy < 0.0 || sx > w - 1.0 || sy > h - 1.0) return Sample(0);
    const int x0 = std::min(static_cast<int>(sx), w - 1);
    const int y0 = std::min(static_cast<int>(sy), h - 1);
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fx = sx - x0;
    const double fy = sy - y0;
    const double v = (1 - fx) * (1 - fy) * fetch(x0, y0) + fx * (1 - fy) * fetch(x1, y0) +
                     (1 - fx) * fy * fetch(x0, y1) + fx * fy * fetch(x1, y1);
    if constexpr (std::is_same_v<Sample, std::uint8_t>) {
        return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    } else {
        return static_cast<Sample>(v);
    }
}

template <typename Sample, typename Fetch>
Sample sample_nearest(double sx, double sy, int w, int h, Fetch fetch) {
    const long x = std::lround(sx);
    const long y = std::lround(sy);
    if (x < 0 || y < 0 || x >= w || y >= h) return Sample(0);
    return fetch(static_cast<int>(x), static_cast<int>(y));
}

} // namespace

MultiChannelImage warp_projective(const MultiChannelImage& img, const double H[9],
                                  std::optional<Extent> extent, Interp interp) {
    const Homography h = Homography::from(H);
    if (std::abs(h.det()) < 1e-12) throw Error("warp_projective: singular transform");
    const int ow = extent ? extent->width : img.width();
    const int oh = extent ? extent->height : img.height();
    MultiChannelImage out(ow, oh, img.labels(), img.sample_type());
    for (int c = 0; c < img.channel_count(); ++c) {
        if (img.sample_type() == SampleType::U8) {
            const auto src = img.plane_u8(c);
            auto dst = out.plane_u8(c);
            const auto fetch = [&](int x, int y) {
                return static_cast<double>(src[static_cast<std::size_t>(y) * img.width() + x]);
            };
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x) {
                    double sx, sy;
                    std::uint8_t v = 0;
                    if (h.apply(x, y, sx, sy)) {
                        v = (interp == Interp::Bilinear)
                                ? sample_bilinear<std::uint8_t>(sx, sy, img.width(), img.height(), fetch)
                                : sample_nearest<std::uint8_t>(sx, sy, img.width(), img.height(),
                                                               [&](int xx, int yy) {
                                                                   return src[static_cast<std::size_t>(yy) * img.width() + xx];
                                                               });
                    }
                    dst[static_cast<std::size_t>(y) * ow + x] = v;
                }
            }
        } else {
            const auto src = img.plane_f32(c);
            auto dst = out.plane_f32(c);
            const auto fetch = [&](int x, int y) {
                return static_cast<double>(src[static_cast<std::size_t>(y) * img.width() + x]);
            };
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x) {
                    double sx, sy;
                    float v = 0.f;
                    if (h.apply(x, y, sx, sy)) {
                        v = (interp == Interp::Bilinear)
                                ? sample_bilinear<float>(sx, sy, img.width(), img.height(), fetch)
                                : sample_nearest<float>(sx, sy, img.width(), img.height(),
                                                        [&](int xx, int yy) {
                                                            return src[static_cast<std::size_t>(yy) * img.width() + xx];
                                                        });
                    }
                    dst[static_cast<std::size_t>(y) * ow + x] = v;
                }
            }
        }
    }
    return out;
}

GrayImage warp_gray(const GrayImage& img, const double H[9], std::optional<Extent> extent) {
    const Homography h = Homography::from(H);
    if (std::abs(h.det()) < 1e-12) throw Error("warp_gray: singular transform");
    const int ow = extent ? extent->width : img.width;
    const int oh = extent ? extent->height : img.height;
    GrayImage out(ow, oh);
    const auto fetch = [&](int x, int y) { return static_cast<double>(img.at(x, y)); };
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double sx, sy;
            float v = 0.f;
            if (h.apply(x, y, sx, sy)) {
                v = sample_bilinear<float>(sx, sy, img.width, img.height, fetch);
            }
            out.at(x, y) = v;
        }
    }
    return out;
}

} // namespace fieldstack
