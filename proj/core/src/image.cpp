#include "macnet/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

#include "macnet/colormap.hpp"

namespace macnet {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

uint8_t quantize(double v) {
    const double x = std::lround(std::min(std::max(v, 0.0), 1.0) * 255.0);
    return static_cast<uint8_t>(x);
}

void write_rgb_png(const std::filesystem::path& path, const std::vector<uint8_t>& interleaved,
                   int height, int width) {
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng error while writing " + path.string());
    }
    png_init_io(png, fp.get());
    // fixed settings keep output bytes reproducible
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y)
        rows[y] = const_cast<png_bytep>(interleaved.data() + static_cast<size_t>(y) * width * 3);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void save_png(const std::filesystem::path& path, const Image& img) {
    std::vector<uint8_t> interleaved(static_cast<size_t>(img.height) * img.width * 3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                interleaved[(static_cast<size_t>(y) * img.width + x) * 3 + c] =
                    quantize(img.at(c, y, x));
    write_rgb_png(path, interleaved, img.height, img.width);
}

Image load_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng error while reading " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    // normalize to 8-bit RGB
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    std::vector<uint8_t> interleaved(static_cast<size_t>(height) * width * 3);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y)
        rows[y] = interleaved.data() + static_cast<size_t>(y) * width * 3;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Image img = Image::zeros(height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) =
                    interleaved[(static_cast<size_t>(y) * width + x) * 3 + c] / 255.0;
    return img;
}

void save_heatmap_png(const std::filesystem::path& path, const std::vector<double>& values,
                      int height, int width) {
    if (values.size() != static_cast<size_t>(height) * width)
        throw std::invalid_argument("heatmap values do not match " + std::to_string(height) + "x" +
                                    std::to_string(width));
    std::vector<uint8_t> interleaved(static_cast<size_t>(height) * width * 3);
    for (size_t i = 0; i < values.size(); ++i) {
        const auto& e = kHeatColormap[quantize(values[i])];
        interleaved[i * 3 + 0] = e.r;
        interleaved[i * 3 + 1] = e.g;
        interleaved[i * 3 + 2] = e.b;
    }
    write_rgb_png(path, interleaved, height, width);
}

void save_map_csv(const std::filesystem::path& path, const std::vector<double>& values,
                  int height, int width) {
    if (values.size() != static_cast<size_t>(height) * width)
        throw std::invalid_argument("map values do not match declared size");
    std::FILE* f = std::fopen(path.string().c_str(), "w");
    if (!f) throw std::runtime_error("cannot write " + path.string());
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x)
            std::fprintf(f, "%s%.17g", x ? "," : "", values[static_cast<size_t>(y) * width + x]);
        std::fputc('\n', f);
    }
    std::fclose(f);
}

}  // namespace macnet
