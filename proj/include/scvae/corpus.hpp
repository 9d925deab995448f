#ifndef SCVAE_CORPUS_HPP
#define SCVAE_CORPUS_HPP

#include <cstdint>
#include <filesystem>
#include <vector>

#include "scvae/tensor.hpp"

namespace scvae {

// Deterministic synthetic corpus: textured images with simple shape overlays
// and per-image binary masks. Images are C x size x size in [0, 1].
struct ToyImage {
    Tensor image;
    std::vector<int> mask;  // size*size, 1 inside the overlay region
};

// seg_only = true restricts generation to interior-rectangle two-texture
// images (every mask nonempty and border-free), the layout used for
// segmentation scoring. Otherwise images cycle through rectangles, half
// splits, plain textures and solid patches.
ToyImage make_toy_image(int size, int channels, std::uint64_t seed, int index, bool seg_only = false);

// Writes <dir>/images/imgNNNN.png and <dir>/masks/imgNNNN.pgm (0/255).
void write_toy_corpus(const std::filesystem::path& dir, int count, int size, int channels, std::uint64_t seed,
                      bool seg_only = false);

}  // namespace scvae

#endif
