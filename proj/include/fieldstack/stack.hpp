#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fieldstack/image.hpp"

namespace fieldstack {

/// Colour basis of a stack. Depth keeps only the depth plane.
enum class ColourSpace : std::uint8_t { RGB = 0, HSV = 1, LAB = 2, Depth = 3 };

struct StackSpec {
    ColourSpace colour_space = ColourSpace::RGB;
    bool include_depth = false;

    /// Parses "RGB", "RGB-D", "HSV", "HSV-D", "LAB", "LAB-D" or "DEPTH"
    /// (case-insensitive).
    static StackSpec from_name(const std::string& name);
    std::string name() const;
    int channel_count() const;
    std::vector<Channel> channels() const;

    bool operator==(const StackSpec&) const = default;
};

/// Affine quantization of one stored channel: q = round((v - offset) * scale),
/// clamped to [0,255]. Recover with v = q / scale + offset.
struct QuantRecord {
    float offset = 0.0f;
    float scale = 1.0f;

    bool operator==(const QuantRecord&) const = default;
};

QuantRecord quant_for_channel(Channel c);
std::uint8_t quantize(float value, const QuantRecord& q);
float dequantize(std::uint8_t code, const QuantRecord& q);

/// A multi-channel image plus the quantization used to pack each channel
/// into 8 bits. This is the in-memory form of an .mcim file.
struct ChannelStack {
    MultiChannelImage image;
    std::vector<QuantRecord> quant; // one record per channel

    bool operator==(const ChannelStack&) const = default;
};

/// Builds a stack from an R,G,B source image and, when the spec asks for it,
/// a normalized depth plane (one byte per pixel, 0 = invalid).
ChannelStack assemble_stack(const MultiChannelImage& rgb, const StackSpec& spec,
                            const std::vector<std::uint8_t>* depth_plane = nullptr);

/// Recovers the physical channel values of one plane.
std::vector<float> dequantize_plane(const ChannelStack& stack, int channel_index);

/// Serialized size in bytes of a stack, per the container layout.
std::uint64_t mcim_file_size(const ChannelStack& stack);

/// Writes the container atomically (temp file + rename).
void write_mcim(const std::filesystem::path& path, const ChannelStack& stack);
ChannelStack read_mcim(const std::filesystem::path& path);

} // namespace fieldstack
