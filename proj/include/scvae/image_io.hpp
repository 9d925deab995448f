#ifndef SCVAE_IMAGE_IO_HPP
#define SCVAE_IMAGE_IO_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "scvae/tensor.hpp"

namespace scvae {

// Images move through the library as C x H x W f64 tensors with values in
// [0, 1]; files are 8-bit PNG (gray or RGB) and binary PGM/PPM (P5/P6).

Tensor read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Tensor& image);  // values clamped to [0,1]
void write_pgm(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels, int height, int width);

// Indexed-color PNG for label visualizations; values index the fixed 16-entry
// palette below.
void write_png_palette(const std::filesystem::path& path, const std::vector<std::uint8_t>& indices, int height,
                       int width);
extern const std::array<std::array<std::uint8_t, 3>, 16> kLabelPalette;

// Integer grid from a gray image file (PGM or gray/RGB PNG); RGB collapses to
// the red channel. Used for label grids and ground-truth masks.
struct LabelImage {
    int height = 0;
    int width = 0;
    std::vector<int> values;
};
LabelImage read_label_image(const std::filesystem::path& path);

// Channel-wise bilinear resampling with pixel-center alignment.
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

// Luma (Rec. 601) collapse and channel replication.
Tensor to_gray(const Tensor& image);
Tensor to_rgb(const Tensor& image);

}  // namespace scvae

#endif
