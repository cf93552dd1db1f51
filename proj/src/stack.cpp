#include "fieldstack/stack.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "fieldstack/colorspace.hpp"

namespace fieldstack {

namespace {

constexpr std::uint16_t kMcimVersion = 1;
constexpr std::size_t kFixedHeaderSize = 18; // magic..reserved
constexpr std::size_t kCrcSize = 4;

std::string to_upper(std::string s) {
    for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

void append_u8(std::vector<std::uint8_t>& buf, std::uint8_t v) { buf.push_back(v); }

void append_u16le(std::vector<std::uint8_t>& buf, std::uint16_t v) {
    buf.push_back(static_cast<std::uint8_t>(v & 0xff));
    buf.push_back(static_cast<std::uint8_t>(v >> 8));
}

void append_u32le(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void append_f32le(std::vector<std::uint8_t>& buf, float v) {
    append_u32le(buf, std::bit_cast<std::uint32_t>(v));
}

class Cursor {
public:
    Cursor(const std::vector<std::uint8_t>& buf, std::string path)
        : buf_(buf), path_(std::move(path)) {}

    std::uint8_t u8() {
        need(1);
        return buf_[pos_++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(buf_[pos_] | (buf_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    const std::uint8_t* bytes(std::size_t n) {
        need(n);
        const std::uint8_t* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw Error("truncated container: " + path_);
    }
    const std::vector<std::uint8_t>& buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

} // namespace

StackSpec StackSpec::from_name(const std::string& name) {
    const std::string u = to_upper(name);
    if (u == "RGB") return {ColourSpace::RGB, false};
    if (u == "RGB-D") return {ColourSpace::RGB, true};
    if (u == "HSV") return {ColourSpace::HSV, false};
    if (u == "HSV-D") return {ColourSpace::HSV, true};
    if (u == "LAB") return {ColourSpace::LAB, false};
    if (u == "LAB-D") return {ColourSpace::LAB, true};
    if (u == "DEPTH") return {ColourSpace::Depth, false};
    throw Error("unknown stack variant: " + name);
}

std::string StackSpec::name() const {
    switch (colour_space) {
        case ColourSpace::RGB: return include_depth ? "RGB-D" : "RGB";
        case ColourSpace::HSV: return include_depth ? "HSV-D" : "HSV";
        case ColourSpace::LAB: return include_depth ? "LAB-D" : "LAB";
        case ColourSpace::Depth: return "DEPTH";
    }
    throw Error("invalid colour space");
}

int StackSpec::channel_count() const { return static_cast<int>(channels().size()); }

std::vector<Channel> StackSpec::channels() const {
    std::vector<Channel> cs;
    switch (colour_space) {
        case ColourSpace::RGB: cs = {Channel::R, Channel::G, Channel::B}; break;
        case ColourSpace::HSV: cs = {Channel::H, Channel::S, Channel::V}; break;
        case ColourSpace::LAB: cs = {Channel::L, Channel::A, Channel::Bstar}; break;
        case ColourSpace::Depth: return {Channel::Depth};
    }
    if (include_depth) cs.push_back(Channel::Depth);
    return cs;
}

QuantRecord quant_for_channel(Channel c) {
    switch (c) {
        case Channel::R:
        case Channel::G:
        case Channel::B:
        case Channel::Depth:
        case Channel::Gray: return {0.0f, 1.0f};
        case Channel::H: return {0.0f, 255.0f / 360.0f};
        case Channel::S:
        case Channel::V: return {0.0f, 255.0f};
        case Channel::L: return {0.0f, 2.55f};
        case Channel::A:
        case Channel::Bstar: return {-128.0f, 1.0f};
    }
    throw Error("invalid channel");
}

std::uint8_t quantize(float value, const QuantRecord& q) {
    const double code = (static_cast<double>(value) - q.offset) * q.scale;
    return static_cast<std::uint8_t>(std::lround(std::clamp(code, 0.0, 255.0)));
}

float dequantize(std::uint8_t code, const QuantRecord& q) {
    return static_cast<float>(code) / q.scale + q.offset;
}

ChannelStack assemble_stack(const MultiChannelImage& rgb, const StackSpec& spec,
                            const std::vector<std::uint8_t>* depth_plane) {
    const std::vector<Channel> chs = spec.channels();
    const bool needs_depth =
        std::find(chs.begin(), chs.end(), Channel::Depth) != chs.end();
    const std::size_t npix = static_cast<std::size_t>(rgb.width()) * rgb.height();
    if (needs_depth) {
        if (depth_plane == nullptr) {
            throw Error("stack variant " + spec.name() + " requires a depth plane");
        }
        if (depth_plane->size() != npix) {
            throw Error("depth plane size does not match the image");
        }
    }

    ChannelStack out{MultiChannelImage(rgb.width(), rgb.height(), chs, SampleType::U8), {}};
    out.quant.reserve(chs.size());
    for (Channel c : chs) out.quant.push_back(quant_for_channel(c));

    LabImage lab;
    HsvImage hsv;
    if (spec.colour_space == ColourSpace::LAB) lab = rgb_to_lab(rgb);
    if (spec.colour_space == ColourSpace::HSV) hsv = rgb_to_hsv(rgb);

    for (std::size_t ci = 0; ci < chs.size(); ++ci) {
        auto dst = out.image.plane_u8(static_cast<int>(ci));
        const QuantRecord& q = out.quant[ci];
        switch (chs[ci]) {
            case Channel::R:
            case Channel::G:
            case Channel::B: {
                const int src = rgb.find_channel(chs[ci]);
                if (src < 0) throw Error("source image is missing an R, G or B plane");
                auto sp = rgb.plane_u8(src);
                std::copy(sp.begin(), sp.end(), dst.begin());
                break;
            }
            case Channel::H:
                for (std::size_t i = 0; i < npix; ++i) dst[i] = quantize(hsv.h[i], q);
                break;
            case Channel::S:
                for (std::size_t i = 0; i < npix; ++i) dst[i] = quantize(hsv.s[i], q);
                break;
            case Channel::V:
                for (std::size_t i = 0; i < npix; ++i) dst[i] = quantize(hsv.v[i], q);
                break;
            case Channel::L:
                for (std::size_t i = 0; i < npix; ++i) dst[i] = quantize(lab.l[i], q);
                break;
            case Channel::A:
                for (std::size_t i = 0; i < npix; ++i) dst[i] = quantize(lab.a[i], q);
                break;
            case Channel::Bstar:
                for (std::size_t i = 0; i < npix; ++i) dst[i] = quantize(lab.b[i], q);
                break;
            case Channel::Depth:
                std::copy(depth_plane->begin(), depth_plane->end(), dst.begin());
                break;
            case Channel::Gray:
                throw Error("gray planes are not part of any stack variant");
        }
    }
    return out;
}

std::vector<float> dequantize_plane(const ChannelStack& stack, int channel_index) {
    if (channel_index < 0 || channel_index >= stack.image.channel_count()) {
        throw Error("channel index out of range");
    }
    auto plane = stack.image.plane_u8(channel_index);
    const QuantRecord& q = stack.quant[static_cast<std::size_t>(channel_index)];
    std::vector<float> out(plane.size());
    for (std::size_t i = 0; i < plane.size(); ++i) out[i] = dequantize(plane[i], q);
    return out;
}

std::uint64_t mcim_file_size(const ChannelStack& stack) {
    const auto& img = stack.image;
    std::uint64_t size = kFixedHeaderSize;
    for (Channel c : img.labels()) size += 1 + channel_name(c).size();
    size += 8ull * img.channel_count();
    size += static_cast<std::uint64_t>(img.width()) * img.height() * img.channel_count();
    size += kCrcSize;
    return size;
}

void write_mcim(const std::filesystem::path& path, const ChannelStack& stack) {
    const auto& img = stack.image;
    if (img.sample_type() != SampleType::U8) {
        throw Error("container only stores 8-bit stacks");
    }
    if (stack.quant.size() != static_cast<std::size_t>(img.channel_count())) {
        throw Error("quantization records do not match the channel count");
    }

    std::vector<std::uint8_t> buf;
    buf.reserve(mcim_file_size(stack));
    buf.insert(buf.end(), {'M', 'C', 'I', 'M'});
    append_u16le(buf, kMcimVersion);
    append_u32le(buf, static_cast<std::uint32_t>(img.width()));
    append_u32le(buf, static_cast<std::uint32_t>(img.height()));
    append_u16le(buf, static_cast<std::uint16_t>(img.channel_count()));
    append_u8(buf, 0); // sample type: u8
    append_u8(buf, 0); // reserved
    for (Channel c : img.labels()) {
        const std::string_view name = channel_name(c);
        append_u8(buf, static_cast<std::uint8_t>(name.size()));
        buf.insert(buf.end(), name.begin(), name.end());
    }
    for (const QuantRecord& q : stack.quant) {
        append_f32le(buf, q.offset);
        append_f32le(buf, q.scale);
    }
    for (int c = 0; c < img.channel_count(); ++c) {
        auto plane = img.plane_u8(c);
        buf.insert(buf.end(), plane.begin(), plane.end());
    }
    std::uint32_t crc = static_cast<std::uint32_t>(crc32_z(0, nullptr, 0));
    crc = static_cast<std::uint32_t>(crc32_z(crc, buf.data(), buf.size()));
    append_u32le(buf, crc);

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open for writing: " + tmp.string());
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
        if (!out) {
            out.close();
            std::filesystem::remove(tmp);
            throw Error("write failed: " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw Error("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

ChannelStack read_mcim(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw Error("unreadable file: " + path.string());
    const std::streamsize file_size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(file_size));
    in.read(reinterpret_cast<char*>(buf.data()), file_size);
    if (!in) throw Error("unreadable file: " + path.string());

    if (buf.size() < kFixedHeaderSize + kCrcSize) {
        throw Error("truncated container: " + path.string());
    }
    std::uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i) {
        stored_crc |= static_cast<std::uint32_t>(buf[buf.size() - 4 + i]) << (8 * i);
    }
    std::uint32_t crc = static_cast<std::uint32_t>(crc32_z(0, nullptr, 0));
    crc = static_cast<std::uint32_t>(crc32_z(crc, buf.data(), buf.size() - kCrcSize));
    if (crc != stored_crc) throw Error("checksum mismatch: " + path.string());

    Cursor cur(buf, path.string());
    if (cur.str(4) != "MCIM") throw Error("not a stack container: " + path.string());
    const std::uint16_t version = cur.u16();
    if (version != kMcimVersion) {
        throw Error("unsupported container version " + std::to_string(version) + ": " +
                    path.string());
    }
    const std::uint32_t width = cur.u32();
    const std::uint32_t height = cur.u32();
    const std::uint16_t channels = cur.u16();
    const std::uint8_t dtype = cur.u8();
    cur.u8(); // reserved
    if (dtype != 0) throw Error("unsupported sample type: " + path.string());
    if (width == 0 || height == 0 || channels == 0) {
        throw Error("empty stack dimensions: " + path.string());
    }
    if (width > static_cast<std::uint32_t>(std::numeric_limits<int>::max()) ||
        height > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
        throw Error("stack dimensions too large: " + path.string());
    }

    std::vector<Channel> labels;
    labels.reserve(channels);
    for (int c = 0; c < channels; ++c) {
        const std::uint8_t len = cur.u8();
        const std::string name = cur.str(len);
        const auto ch = channel_from_name(name);
        if (!ch) throw Error("unknown channel label \"" + name + "\": " + path.string());
        labels.push_back(*ch);
    }
    std::vector<QuantRecord> quant(channels);
    for (int c = 0; c < channels; ++c) {
        quant[c].offset = cur.f32();
        quant[c].scale = cur.f32();
    }

    const std::uint64_t npix = static_cast<std::uint64_t>(width) * height;
    const std::uint64_t data_size = npix * channels;
    if (cur.pos() + data_size + kCrcSize != buf.size()) {
        throw Error("container size does not match its header: " + path.string());
    }

    ChannelStack out{MultiChannelImage(static_cast<int>(width), static_cast<int>(height),
                                       std::move(labels), SampleType::U8),
                     std::move(quant)};
    for (int c = 0; c < channels; ++c) {
        const std::uint8_t* src = cur.bytes(static_cast<std::size_t>(npix));
        auto dst = out.image.plane_u8(c);
        std::memcpy(dst.data(), src, static_cast<std::size_t>(npix));
    }
    return out;
}

} // namespace fieldstack
