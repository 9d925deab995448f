#include "scvae/corpus.hpp"

#include <cmath>
#include <cstdio>

#include "scvae/image_io.hpp"
#include "scvae/rng.hpp"

namespace scvae {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

struct Texture {
    int kind = 0;          // 0 grating, 1 checker, 2 diagonal stripes, 3 near-solid
    double fx = 0, fy = 0, phase = 0;
    int period = 4;
    double c0[3] = {0, 0, 0};
    double c1[3] = {1, 1, 1};

    double eval(int x, int y, int size, int ch) const {
        double t = 0.0;
        switch (kind) {
            case 0:
                t = 0.5 + 0.5 * std::sin(kTau * (fx * x + fy * y) / size + phase);
                break;
            case 1:
                t = ((x / period + y / period) % 2 == 0) ? 0.0 : 1.0;
                break;
            case 2:
                t = (((x + y) / period) % 2 == 0) ? 0.0 : 1.0;
                break;
            default:
                t = 0.5 + 0.15 * std::sin(kTau * (x + 2.0 * y) / (4.0 * size) + phase);
                break;
        }
        return c0[ch] * (1.0 - t) + c1[ch] * t;
    }
};

Texture random_texture(Rng& rng, int channels, int kind) {
    Texture t;
    t.kind = kind;
    t.fx = rng.uniform(0.5, 3.0);
    t.fy = rng.uniform(0.5, 3.0);
    t.phase = rng.uniform(0.0, kTau);
    t.period = 4 + 2 * static_cast<int>(rng.uniform_int(3));  // 4, 6, 8
    for (int c = 0; c < 3; ++c) {
        const double lo = rng.uniform(0.05, 0.45);
        const double hi = rng.uniform(0.55, 0.95);
        t.c0[c] = lo;
        t.c1[c] = hi;
    }
    if (channels == 1) {
        // Collapse to a single pair of gray levels.
        for (int c = 1; c < 3; ++c) {
            t.c0[c] = t.c0[0];
            t.c1[c] = t.c1[0];
        }
    }
    return t;
}

int even_in(Rng& rng, int lo, int hi) {  // even value in [lo, hi]
    const int n = (hi - lo) / 2 + 1;
    return lo + 2 * static_cast<int>(rng.uniform_int(n));
}

}  // namespace

ToyImage make_toy_image(int size, int channels, std::uint64_t seed, int index, bool seg_only) {
    if (size < 16) throw ConfigError("toy corpus image size must be >= 16");
    Rng rng(mix_seed(seed, 0xC0DE + static_cast<std::uint64_t>(index)));
    const int layout = seg_only ? 0 : index % 4;

    // Textures come from a fixed per-corpus bank, so images share structure
    // the way frames of a natural corpus do.
    constexpr int kBankSize = 24;
    const int slot_a = static_cast<int>(rng.uniform_int(kBankSize));
    int slot_b = static_cast<int>(rng.uniform_int(kBankSize - 1));
    if (slot_b >= slot_a) ++slot_b;
    Rng rng_a(mix_seed(seed, 0x7E40 + static_cast<std::uint64_t>(slot_a)));
    Rng rng_b(mix_seed(seed, 0x7E40 + static_cast<std::uint64_t>(slot_b)));
    Texture a = random_texture(rng_a, channels, slot_a % 3);
    Texture b = layout == 3 ? random_texture(rng_b, channels, 3)
                            : random_texture(rng_b, channels, (slot_a % 3 + 1 + slot_b % 2) % 3);

    ToyImage out;
    out.image = Tensor({channels, size, size}, Dtype::F64);
    out.mask.assign(static_cast<std::size_t>(size) * static_cast<std::size_t>(size), 0);

    // Region of texture B, axis-aligned to even pixels so the latent grid can
    // represent it exactly at one downsampling block.
    int rx0 = 0, ry0 = 0, rx1 = 0, ry1 = 0;  // half-open
    bool has_region = true;
    if (layout == 0 || layout == 3) {
        const int rw = even_in(rng, 10, std::min(20, size - 8));
        const int rh = even_in(rng, 10, std::min(20, size - 8));
        rx0 = even_in(rng, 4, size - rw - 4);
        ry0 = even_in(rng, 4, size - rh - 4);
        rx1 = rx0 + rw;
        ry1 = ry0 + rh;
    } else if (layout == 1) {
        const bool vertical = rng.uniform() < 0.5;
        const int cut = even_in(rng, size / 4, 3 * size / 4);
        if (vertical) {
            rx0 = cut;
            rx1 = size;
            ry0 = 0;
            ry1 = size;
        } else {
            rx0 = 0;
            rx1 = size;
            ry0 = cut;
            ry1 = size;
        }
    } else {
        has_region = false;
    }

    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const bool inside = has_region && x >= rx0 && x < rx1 && y >= ry0 && y < ry1;
            if (inside) out.mask[static_cast<std::size_t>(y * size + x)] = 1;
            for (int c = 0; c < channels; ++c) {
                double v = inside ? b.eval(x - rx0, y - ry0, size, c) : a.eval(x, y, size, c);
                v = std::min(0.98, std::max(0.02, v));
                out.image.set({c, y, x}, v);
            }
        }
    }
    return out;
}

void write_toy_corpus(const std::filesystem::path& dir, int count, int size, int channels, std::uint64_t seed,
                      bool seg_only) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "masks");
    char name[32];
    for (int i = 0; i < count; ++i) {
        ToyImage toy = make_toy_image(size, channels, seed, i, seg_only);
        std::snprintf(name, sizeof(name), "img%04d", i);
        write_png(dir / "images" / (std::string(name) + ".png"), toy.image);
        std::vector<std::uint8_t> mask_bytes(toy.mask.size());
        for (std::size_t j = 0; j < toy.mask.size(); ++j) mask_bytes[j] = toy.mask[j] ? 255 : 0;
        write_pgm(dir / "masks" / (std::string(name) + ".pgm"), mask_bytes, size, size);
    }
}

}  // namespace scvae
