#ifndef PCDC_IMAGE_HPP
#define PCDC_IMAGE_HPP

#include <string>
#include <vector>

#include "pcdc/common.hpp"
#include "pcdc/tensor.hpp"

namespace pcdc {

// RGB image with values in [0,1], stored planar (channel, row, col).
struct ImagePlane {
    int height = 0;
    int width = 0;
    std::vector<double> data;  // 3 * height * width

    ImagePlane() = default;
    ImagePlane(int h, int w, double fill = 0.0)
        : height(h), width(w), data(size_t(3) * h * w, fill) {}

    double& at(int c, int y, int x) { return data[(size_t(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return data[(size_t(c) * height + y) * width + x]; }

    // Mean of the three channels at (y,x).
    double luma(int y, int x) const {
        return (at(0, y, x) + at(1, y, x) + at(2, y, x)) / 3.0;
    }

    Tensor to_tensor() const { return Tensor::from({3, height, width}, data); }
    static ImagePlane from_tensor(const Tensor& t);
};

// Binary portable pixmap (P6, 8-bit). Values map linearly byte <-> [0,1].
// `header_comments` lines are written as '#' comments after the magic.
ImagePlane load_ppm(const std::string& path);
void save_ppm(const ImagePlane& img, const std::string& path,
              const std::vector<std::string>& header_comments = {});

struct Block {
    int row = 0, col = 0;  // grid coordinates
    int y0 = 0, x0 = 0;    // top-left pixel in the padded image
    int h = 0, w = 0;
};

struct BlockGrid {
    int block_size = 16;
    int rows = 0, cols = 0;          // grid dimensions
    int padded_h = 0, padded_w = 0;  // image dims after edge padding
    std::vector<Block> blocks;       // raster order

    int count() const { return int(blocks.size()); }
};

// Edge-pads (replicate) to a multiple of block_size in both dims.
ImagePlane pad_to_multiple(const ImagePlane& img, int block_size);

// Non-overlapping raster-order tiling of the padded image.
BlockGrid partition(const ImagePlane& img, int block_size);

// Single-channel high-frequency residual map.
struct ResidualMap {
    int height = 0, width = 0;
    std::vector<double> data;

    double at(int y, int x) const { return data[size_t(y) * width + x]; }
};

// 4-neighbour Laplacian of the luma plane, replicate boundary.
ResidualMap highpass(const ImagePlane& img);

// Block statistics of the residual: [mean|h|, std(h), max|h|, frac(|h| > 0.05)].
// std is the population standard deviation.
std::vector<double> block_stats(const ResidualMap& residual, const Block& block);

inline constexpr double kActivityThreshold = 0.05;

}  // namespace pcdc

#endif
