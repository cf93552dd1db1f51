#include "fieldstack/image.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

#include <jpeglib.h>
#include <png.h>

namespace fieldstack {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.string().c_str(), mode));
    if (!f) throw Error("unreadable file: " + path.string());
    return f;
}

MultiChannelImage from_interleaved(const std::vector<std::uint8_t>& buf, int w, int h, int ch) {
    std::vector<Channel> labels;
    if (ch == 1) {
        labels = {Channel::Gray};
    } else if (ch == 3) {
        labels = {Channel::R, Channel::G, Channel::B};
    } else {
        throw Error("unsupported channel count: " + std::to_string(ch));
    }
    MultiChannelImage img(w, h, labels);
    for (int c = 0; c < ch; ++c) {
        auto plane = img.plane_u8(c);
        for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = buf[i * ch + c];
    }
    return img;
}

MultiChannelImage load_png_file(const std::filesystem::path& path) {
    FilePtr f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw Error("png reader allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw Error("png reader allocation failed");
    }
    std::vector<std::uint8_t> buf;
    int w = 0, h = 0, ch = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("unreadable PNG: " + path.string());
    }
    png_init_io(png, f.get());
    png_read_info(png, info);

    const png_byte color_type = png_get_color_type(png, info);
    const png_byte bit_depth = png_get_bit_depth(png, info);
    if (bit_depth == 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("unsupported bit depth: 16-bit PNG");
    }
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    w = static_cast<int>(png_get_image_width(png, info));
    h = static_cast<int>(png_get_image_height(png, info));
    ch = png_get_channels(png, info);
    if (ch != 1 && ch != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("unsupported channel count: " + std::to_string(ch));
    }
    buf.resize(static_cast<std::size_t>(w) * h * ch);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = buf.data() + static_cast<std::size_t>(y) * w * ch;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return from_interleaved(buf, w, h, ch);
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

MultiChannelImage load_jpeg_file(const std::filesystem::path& path) {
    FilePtr f = open_file(path, "rb");
    jpeg_decompress_struct cinfo{};
    JpegErrorMgr jerr{};
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw Error("unreadable JPEG: " + path.string());
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f.get());
    jpeg_read_header(&cinfo, TRUE);
    jpeg_start_decompress(&cinfo);
    const int w = static_cast<int>(cinfo.output_width);
    const int h = static_cast<int>(cinfo.output_height);
    const int ch = cinfo.output_components;
    if (ch != 1 && ch != 3) {
        jpeg_destroy_decompress(&cinfo);
        throw Error("unsupported channel count: " + std::to_string(ch));
    }
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h * ch);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = buf.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * ch;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return from_interleaved(buf, w, h, ch);
}

} // namespace

MultiChannelImage load_raster(const std::filesystem::path& path) {
    FilePtr f = open_file(path, "rb");
    unsigned char magic[4] = {0, 0, 0, 0};
    const std::size_t got = std::fread(magic, 1, sizeof magic, f.get());
    f.reset();
    if (got >= 4 && png_sig_cmp(magic, 0, 4) == 0) return load_png_file(path);
    if (got >= 2 && magic[0] == 0xFF && magic[1] == 0xD8) return load_jpeg_file(path);
    throw Error("unreadable file (not PNG or JPEG): " + path.string());
}

void save_png(const MultiChannelImage& img, const std::filesystem::path& path) {
    if (img.sample_type() != SampleType::U8) throw Error("save_png: only 8-bit images");
    const int ch = img.channel_count();
    if (ch != 1 && ch != 3) throw Error("save_png: only 1- or 3-channel images");

    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw Error("png writer allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error("png writer allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("failed to write PNG: " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, img.width(), img.height(), 8,
                 ch == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width()) * ch);
    for (int y = 0; y < img.height(); ++y) {
        for (int c = 0; c < ch; ++c) {
            const auto plane = img.plane_u8(c);
            for (int x = 0; x < img.width(); ++x)
                row[static_cast<std::size_t>(x) * ch + c] = plane[static_cast<std::size_t>(y) * img.width() + x];
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace fieldstack
