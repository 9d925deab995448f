#include "scvae/dataset.hpp"

#include <algorithm>
#include <iostream>

#include "scvae/image_io.hpp"

namespace scvae {

Dataset load_dataset(const std::filesystem::path& data_dir, int image_size, int channels) {
    if (!std::filesystem::is_directory(data_dir)) {
        throw IoError("data directory does not exist: " + data_dir.string());
    }
    if (channels != 1 && channels != 3) throw ConfigError("dataset channels must be 1 or 3");

    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(data_dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        for (auto& c : ext) c = static_cast<char>(std::tolower(c));
        if (ext == ".png" || ext == ".pgm" || ext == ".ppm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });

    Dataset ds;
    for (const auto& path : files) {
        Tensor img;
        try {
            img = read_image(path);
        } catch (const std::exception& e) {
            std::cerr << "warning: skipping " << path.string() << ": " << e.what() << "\n";
            continue;
        }
        if (channels == 1 && img.dim(0) != 1) img = to_gray(img);
        if (channels == 3 && img.dim(0) != 3) img = to_rgb(img);
        if (img.dim(1) != image_size || img.dim(2) != image_size) {
            img = resize_bilinear(img, image_size, image_size);
        }
        ds.names.push_back(path.filename().string());
        ds.images.push_back(std::move(img));
    }
    if (ds.images.empty()) throw IoError("no usable images in " + data_dir.string());
    return ds;
}

}  // namespace scvae
