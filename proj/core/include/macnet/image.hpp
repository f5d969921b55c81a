#pragma once

#include <filesystem>
#include <vector>

namespace macnet {

// Planar RGB image, values in [0,1], layout {3,H,W} row-major.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    static Image zeros(int height, int width) {
        Image img;
        img.height = height;
        img.width = width;
        img.pixels.assign(static_cast<size_t>(3) * height * width, 0.0);
        return img;
    }
    double& at(int c, int y, int x) {
        return pixels[(static_cast<size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return pixels[(static_cast<size_t>(c) * height + y) * width + x];
    }
};

// 8-bit RGB PNG. Quantization is round(v*255); load returns value/255.
void save_png(const std::filesystem::path& path, const Image& img);
Image load_png(const std::filesystem::path& path);

// Single-channel map rendered through the fixed colormap table.
void save_heatmap_png(const std::filesystem::path& path, const std::vector<double>& values,
                      int height, int width);

// Raw map values as CSV, one image row per line.
void save_map_csv(const std::filesystem::path& path, const std::vector<double>& values,
                  int height, int width);

}  // namespace macnet
