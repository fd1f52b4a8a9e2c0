#include "auditkit/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <memory>
#include <vector>

namespace audit {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::string lower_ext(const std::string& path) {
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return "";
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return ext;
}

Tensor bytes_to_tensor(const std::vector<unsigned char>& bytes, int channels, int h, int w) {
    // Interleaved rows in, planar [C,H,W] out.
    Tensor out = Tensor::zeros({channels, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c)
                out.at3(c, y, x) =
                    static_cast<float>(bytes[(static_cast<std::size_t>(y) * w + x) * channels + c]) /
                    255.0f;
    return out;
}

}  // namespace

Tensor read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw io_error("cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw io_error("libpng initialization failed reading " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw io_error("libpng initialization failed reading " + path);
    }
    std::vector<unsigned char> interleaved;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw io_error("corrupt or unsupported PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    // Fold every supported variant down to 8-bit gray or RGB.
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int channels = static_cast<int>(png_get_channels(png, info));
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw io_error("PNG has " + std::to_string(channels) + " channels after expansion: " + path);
    }
    interleaved.resize(static_cast<std::size_t>(w) * h * channels);
    rows.resize(h);
    for (int y = 0; y < h; ++y)
        rows[y] = interleaved.data() + static_cast<std::size_t>(y) * w * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return bytes_to_tensor(interleaved, channels, h, w);
}

void write_png(const std::string& path, const Tensor& chw) {
    if (chw.rank() != 3 || (chw.dim(0) != 1 && chw.dim(0) != 3))
        throw validation_error("write_png expects a [C,H,W] tensor with 1 or 3 channels, got " +
                               shape_str(chw.shape));
    const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw io_error("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw io_error("libpng initialization failed writing " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw io_error("libpng initialization failed writing " + path);
    }
    std::vector<unsigned char> interleaved(static_cast<std::size_t>(w) * h * c);
    std::vector<png_bytep> rows(h);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw io_error("PNG encode failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, w, h, 8, c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int cc = 0; cc < c; ++cc) {
                const float v = std::clamp(chw.at3(cc, y, x), 0.0f, 1.0f);
                interleaved[(static_cast<std::size_t>(y) * w + x) * c + cc] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
    for (int y = 0; y < h; ++y)
        rows[y] = interleaved.data() + static_cast<std::size_t>(y) * w * c;
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

namespace {

// Reads the next PNM header token, skipping whitespace and # comments.
std::string pnm_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

}  // namespace

Tensor read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    const std::string magic = pnm_token(in);
    int channels;
    if (magic == "P5")
        channels = 1;
    else if (magic == "P6")
        channels = 3;
    else
        throw io_error("not a binary PGM/PPM (magic '" + magic + "'): " + path);
    int w, h, maxval;
    try {
        w = std::stoi(pnm_token(in));
        h = std::stoi(pnm_token(in));
        maxval = std::stoi(pnm_token(in));
    } catch (const std::exception&) {
        throw io_error("malformed PNM header: " + path);
    }
    if (w <= 0 || h <= 0) throw io_error("PNM with non-positive dimensions: " + path);
    if (maxval != 255)
        throw io_error("only 8-bit PNM supported (maxval 255), got " + std::to_string(maxval) +
                       ": " + path);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * channels);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw io_error("truncated PNM pixel data: " + path);
    return bytes_to_tensor(bytes, channels, h, w);
}

void write_pnm(const std::string& path, const Tensor& chw) {
    if (chw.rank() != 3 || (chw.dim(0) != 1 && chw.dim(0) != 3))
        throw validation_error("write_pnm expects a [C,H,W] tensor with 1 or 3 channels, got " +
                               shape_str(chw.shape));
    const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << (c == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int cc = 0; cc < c; ++cc) {
                const float v = std::clamp(chw.at3(cc, y, x), 0.0f, 1.0f);
                out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
            }
    if (!out) throw io_error("short write: " + path);
}

Tensor read_image(const std::string& path) {
    const std::string ext = lower_ext(path);
    if (ext == "png") return read_png(path);
    if (ext == "pgm" || ext == "ppm") return read_pnm(path);
    throw io_error("unsupported image extension '" + ext + "': " + path);
}

}  // namespace audit
