#include "fieldstack/colorspace.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fieldstack {

namespace {

// sRGB <-> XYZ under D65. The white point is taken as the exact row sums of
// the forward matrix so that pure white lands on L = 100 with no residual.
constexpr double kRgbToXyz[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
};
constexpr double kWhiteX = kRgbToXyz[0][0] + kRgbToXyz[0][1] + kRgbToXyz[0][2];
constexpr double kWhiteY = kRgbToXyz[1][0] + kRgbToXyz[1][1] + kRgbToXyz[1][2];
constexpr double kWhiteZ = kRgbToXyz[2][0] + kRgbToXyz[2][1] + kRgbToXyz[2][2];

struct XyzToRgb {
    double m[3][3];
};

// Numeric inverse of kRgbToXyz, computed once so round trips cancel exactly.
XyzToRgb invert_rgb_to_xyz() {
    const auto& a = kRgbToXyz;
    const double det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
                       a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
                       a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    XyzToRgb inv;
    inv.m[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) / det;
    inv.m[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) / det;
    inv.m[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) / det;
    inv.m[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) / det;
    inv.m[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) / det;
    inv.m[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) / det;
    inv.m[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) / det;
    inv.m[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) / det;
    inv.m[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) / det;
    return inv;
}

const XyzToRgb kXyzToRgb = invert_rgb_to_xyz();

constexpr double kLabEpsilon = 216.0 / 24389.0; // (6/29)^3
constexpr double kLabKappa = 24389.0 / 27.0;    // (29/3)^3

double srgb_decode(double u) {
    return (u <= 0.04045) ? u / 12.92 : std::pow((u + 0.055) / 1.055, 2.4);
}

double srgb_encode(double u) {
    return (u <= 0.0031308) ? u * 12.92 : 1.055 * std::pow(u, 1.0 / 2.4) - 0.055;
}

double lab_f(double t) {
    return (t > kLabEpsilon) ? std::cbrt(t) : (kLabKappa * t + 16.0) / 116.0;
}

double lab_f_inv(double t) {
    const double t3 = t * t * t;
    return (t3 > kLabEpsilon) ? t3 : (116.0 * t - 16.0) / kLabKappa;
}

std::uint8_t clamp_u8(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

void require_rgb(const MultiChannelImage& img, const char* op) {
    if (img.sample_type() != SampleType::U8 ||
        !img.has_channels({Channel::R, Channel::G, Channel::B}))
        throw Error(std::string(op) + " needs an 8-bit image with R,G,B channel labels");
}

} // namespace

namespace color {

void srgb_to_lab(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8, double& L, double& A, double& B) {
    const double r = srgb_decode(r8 / 255.0);
    const double g = srgb_decode(g8 / 255.0);
    const double b = srgb_decode(b8 / 255.0);
    const double x = kRgbToXyz[0][0] * r + kRgbToXyz[0][1] * g + kRgbToXyz[0][2] * b;
    const double y = kRgbToXyz[1][0] * r + kRgbToXyz[1][1] * g + kRgbToXyz[1][2] * b;
    const double z = kRgbToXyz[2][0] * r + kRgbToXyz[2][1] * g + kRgbToXyz[2][2] * b;
    const double fx = lab_f(x / kWhiteX);
    const double fy = lab_f(y / kWhiteY);
    const double fz = lab_f(z / kWhiteZ);
    L = std::clamp(116.0 * fy - 16.0, 0.0, 100.0);
    A = 500.0 * (fx - fy);
    B = 200.0 * (fy - fz);
}

void lab_to_srgb(double L, double A, double B, std::uint8_t& r8, std::uint8_t& g8, std::uint8_t& b8) {
    const double fy = (L + 16.0) / 116.0;
    const double fx = fy + A / 500.0;
    const double fz = fy - B / 200.0;
    const double x = lab_f_inv(fx) * kWhiteX;
    const double y = lab_f_inv(fy) * kWhiteY;
    const double z = lab_f_inv(fz) * kWhiteZ;
    const double r = kXyzToRgb.m[0][0] * x + kXyzToRgb.m[0][1] * y + kXyzToRgb.m[0][2] * z;
    const double g = kXyzToRgb.m[1][0] * x + kXyzToRgb.m[1][1] * y + kXyzToRgb.m[1][2] * z;
    const double b = kXyzToRgb.m[2][0] * x + kXyzToRgb.m[2][1] * y + kXyzToRgb.m[2][2] * z;
    r8 = clamp_u8(srgb_encode(std::clamp(r, 0.0, 1.0)) * 255.0);
    g8 = clamp_u8(srgb_encode(std::clamp(g, 0.0, 1.0)) * 255.0);
    b8 = clamp_u8(srgb_encode(std::clamp(b, 0.0, 1.0)) * 255.0);
}

void srgb_to_hsv(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8, double& H, double& S, double& V) {
    const double r = r8 / 255.0, g = g8 / 255.0, b = b8 / 255.0;
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double delta = mx - mn;
    V = mx;
    S = (mx > 0.0) ? delta / mx : 0.0;
    if (delta <= 0.0) {
        H = 0.0; // hue undefined for achromatic pixels
        return;
    }
    double h;
    if (mx == r) {
        h = 60.0 * ((g - b) / delta);
    } else if (mx == g) {
        h = 60.0 * ((b - r) / delta + 2.0);
    } else {
        h = 60.0 * ((r - g) / delta + 4.0);
    }
    if (h < 0.0) h += 360.0;
    if (h >= 360.0) h -= 360.0;
    H = h;
}

void hsv_to_srgb(double H, double S, double V, std::uint8_t& r8, std::uint8_t& g8, std::uint8_t& b8) {
    H = H - 360.0 * std::floor(H / 360.0);
    S = std::clamp(S, 0.0, 1.0);
    V = std::clamp(V, 0.0, 1.0);
    const double c = V * S;
    const double hp = H / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: r = c; g = x; break;
        case 1: r = x; g = c; break;
        case 2: g = c; b = x; break;
        case 3: g = x; b = c; break;
        case 4: r = x; b = c; break;
        default: r = c; b = x; break;
    }
    const double m = V - c;
    r8 = clamp_u8((r + m) * 255.0);
    g8 = clamp_u8((g + m) * 255.0);
    b8 = clamp_u8((b + m) * 255.0);
}

} // namespace color

LabImage rgb_to_lab(const MultiChannelImage& img) {
    require_rgb(img, "rgb_to_lab");
    const auto r = img.plane_u8(img.find_channel(Channel::R));
    const auto g = img.plane_u8(img.find_channel(Channel::G));
    const auto b = img.plane_u8(img.find_channel(Channel::B));
    LabImage out(img.width(), img.height());
    for (std::size_t i = 0; i < r.size(); ++i) {
        double L, A, B;
        color::srgb_to_lab(r[i], g[i], b[i], L, A, B);
        out.l[i] = static_cast<float>(L);
        out.a[i] = static_cast<float>(A);
        out.b[i] = static_cast<float>(B);
    }
    return out;
}

MultiChannelImage lab_to_rgb(const LabImage& img) {
    MultiChannelImage out(img.width, img.height, {Channel::R, Channel::G, Channel::B});
    auto r = out.plane_u8(0);
    auto g = out.plane_u8(1);
    auto b = out.plane_u8(2);
    for (std::size_t i = 0; i < img.l.size(); ++i) {
        color::lab_to_srgb(img.l[i], img.a[i], img.b[i], r[i], g[i], b[i]);
    }
    return out;
}

HsvImage rgb_to_hsv(const MultiChannelImage& img) {
    require_rgb(img, "rgb_to_hsv");
    const auto r = img.plane_u8(img.find_channel(Channel::R));
    const auto g = img.plane_u8(img.find_channel(Channel::G));
    const auto b = img.plane_u8(img.find_channel(Channel::B));
    HsvImage out(img.width(), img.height());
    for (std::size_t i = 0; i < r.size(); ++i) {
        double H, S, V;
        color::srgb_to_hsv(r[i], g[i], b[i], H, S, V);
        out.h[i] = static_cast<float>(H);
        out.s[i] = static_cast<float>(S);
        out.v[i] = static_cast<float>(V);
    }
    return out;
}

MultiChannelImage hsv_to_rgb(const HsvImage& img) {
    MultiChannelImage out(img.width, img.height, {Channel::R, Channel::G, Channel::B});
    auto r = out.plane_u8(0);
    auto g = out.plane_u8(1);
    auto b = out.plane_u8(2);
    for (std::size_t i = 0; i < img.h.size(); ++i) {
        color::hsv_to_srgb(img.h[i], img.s[i], img.v[i], r[i], g[i], b[i]);
    }
    return out;
}

void ExposureAccumulator::add_frame(const std::string& frame_id, const MultiChannelImage& img) {
    const LabImage lab = rgb_to_lab(img);
    Entry e;
    e.id = frame_id;
    e.n = lab.l.size();
    // Accumulate relative to the first sample: a constant frame then sums
    // exact zeros and reports a stddev of exactly 0.
    e.origin = lab.l.empty() ? 0.0 : lab.l.front();
    for (const float v : lab.l) {
        const double d = v - e.origin;
        e.sum += d;
        e.sum_sq += d * d;
    }
    frames_.push_back(std::move(e));
}

ExposureReport ExposureAccumulator::report() const {
    if (frames_.empty()) throw Error("exposure report needs at least one frame");
    ExposureReport rep;
    double pooled_sum = 0.0, pooled_sq = 0.0;
    std::size_t pooled_n = 0;
    double sigma_sum = 0.0;
    for (const Entry& e : frames_) {
        const double mean = e.sum / e.n;
        const double var = std::max(0.0, e.sum_sq / e.n - mean * mean);
        const double sigma = std::sqrt(var);
        rep.per_image.push_back({e.id, sigma, e.n});
        sigma_sum += sigma;
        // undo the per-frame shift for the pooled moments
        pooled_sum += e.sum + e.origin * e.n;
        pooled_sq += e.sum_sq + 2.0 * e.origin * e.sum + e.origin * e.origin * e.n;
        pooled_n += e.n;
    }
    const double mean = pooled_sum / pooled_n;
    rep.dataset_stddev = std::sqrt(std::max(0.0, pooled_sq / pooled_n - mean * mean));
    rep.mean_of_per_image = sigma_sum / frames_.size();
    rep.total_pixels = pooled_n;
    return rep;
}

ExposureReport exposure_report(const std::vector<MultiChannelImage>& frames,
                               const std::vector<std::string>& frame_ids) {
    if (frames.empty()) throw Error("exposure report needs at least one frame");
    ExposureAccumulator acc;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const std::string id = (i < frame_ids.size()) ? frame_ids[i] : "frame_" + std::to_string(i);
        acc.add_frame(id, frames[i]);
    }
    return acc.report();
}

std::string format_exposure_table(const ExposureReport& report) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(1);
    std::size_t width = 5; // "Frame"
    for (const auto& f : report.per_image) width = std::max(width, f.frame_id.size());
    os << "Frame";
    os << std::string(width - 5, ' ') << "  Standard deviation\n";
    for (const auto& f : report.per_image) {
        os << f.frame_id << std::string(width - f.frame_id.size(), ' ') << "  " << f.stddev << "\n";
    }
    os << "Pooled (all pixels)" << "  " << report.dataset_stddev << "\n";
    os << "Mean of per-frame " << "  " << report.mean_of_per_image << "\n";
    return os.str();
}

} // namespace fieldstack
