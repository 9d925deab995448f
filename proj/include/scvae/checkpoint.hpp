#ifndef SCVAE_CHECKPOINT_HPP
#define SCVAE_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "scvae/tensor.hpp"

namespace scvae {

// Self-describing binary tensor container.
//
// Layout: magic "SCVK", version u32, entry count u32, then per entry
//   { name length u32, UTF-8 name, dtype code u8, rank u8, dims u64[rank],
//     raw little-endian data }.
// Dtype codes: 0 = f32, 1 = f64, 2 = u8 (opaque byte blobs such as the config
// snapshot). Entries are written sorted by name, so save -> load -> save is
// byte-identical.
struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::vector<std::uint8_t>> blobs;

    bool has(const std::string& name) const { return tensors.count(name) || blobs.count(name); }

    void set_scalar(const std::string& name, double v) { tensors[name] = Tensor::scalar(v, Dtype::F64); }
    double scalar(const std::string& name) const;

    void set_text(const std::string& name, const std::string& text);
    std::string text(const std::string& name) const;

    std::vector<std::uint8_t> serialize() const;
    static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace scvae

#endif
