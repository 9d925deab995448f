#ifndef SCVAE_DATASET_HPP
#define SCVAE_DATASET_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "scvae/tensor.hpp"

namespace scvae {

struct Dataset {
    std::vector<std::string> names;  // file names, lexicographic order
    std::vector<Tensor> images;      // C x H x W f64 in [0, 1]
};

// Loads every .png/.pgm/.ppm file in the directory, sorted by file name.
// Images are resized bilinearly to image_size and converted between gray and
// RGB as requested. Undecodable files are skipped with a warning on stderr;
// an empty result is an I/O error.
Dataset load_dataset(const std::filesystem::path& data_dir, int image_size, int channels);

}  // namespace scvae

#endif
