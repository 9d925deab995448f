// Generator for the bundled synthetic corpus: textured 32x32 images with
// shape overlays and ground-truth masks, reproducible from the seed.
#include <CLI11.hpp>

#include <iostream>

#include "scvae/corpus.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Generate the deterministic toy corpus (images/ + masks/)"};
    std::string out;
    int count = 200, size = 32, channels = 3;
    std::uint64_t seed = 0;
    bool seg_only = false;
    app.add_option("--out", out, "Output directory")->required();
    app.add_option("--count", count, "Number of images");
    app.add_option("--size", size, "Image side length");
    app.add_option("--channels", channels, "1 or 3");
    app.add_option("--seed", seed, "Generator seed");
    app.add_flag("--seg-only", seg_only, "Only interior-rectangle two-texture images");
    CLI11_PARSE(app, argc, argv);
    try {
        scvae::write_toy_corpus(out, count, size, channels, seed, seg_only);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cout << "wrote " << count << " images to " << out << "\n";
    return 0;
}
