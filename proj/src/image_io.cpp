#include "scvae/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

namespace scvae {

const std::array<std::array<std::uint8_t, 3>, 16> kLabelPalette = {{
    {0, 0, 0},       {230, 25, 75},   {60, 180, 75},   {255, 225, 25},
    {0, 130, 200},   {245, 130, 48},  {145, 30, 180},  {70, 240, 240},
    {240, 50, 230},  {210, 245, 60},  {250, 190, 212}, {0, 128, 128},
    {220, 190, 255}, {170, 110, 40},  {128, 128, 128}, {255, 255, 255},
}};

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(double v) {
    const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

// ---- PNG ----

struct PngBytes {
    int height = 0, width = 0, channels = 0;
    std::vector<std::uint8_t> data;  // interleaved
};

PngBytes read_png_bytes(const std::filesystem::path& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path.string());
    png_byte header[8];
    if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
        throw FormatError("not a PNG file: " + path.string());
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    PngBytes out;
    std::vector<png_bytep> row_ptrs;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("corrupt PNG: " + path.string());
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    // Normalize everything to 8-bit gray or RGB.
    png_set_strip_16(png);
    png_set_packing(png);
    const png_byte color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    out.height = static_cast<int>(png_get_image_height(png, info));
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.channels = static_cast<int>(png_get_channels(png, info));
    if (out.channels == 4) {
        // tRNS expansion can reintroduce alpha; drop it below.
    } else if (out.channels != 1 && out.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("unsupported PNG channel count in " + path.string());
    }
    const std::size_t stride = png_get_rowbytes(png, info);
    std::vector<std::uint8_t> raw(stride * static_cast<std::size_t>(out.height));
    row_ptrs.resize(static_cast<std::size_t>(out.height));
    for (int y = 0; y < out.height; ++y) row_ptrs[static_cast<std::size_t>(y)] = raw.data() + stride * static_cast<std::size_t>(y);
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (out.channels == 4) {
        out.data.resize(static_cast<std::size_t>(out.height) * out.width * 3);
        for (std::size_t i = 0; i < static_cast<std::size_t>(out.height) * out.width; ++i) {
            out.data[3 * i + 0] = raw[4 * i + 0];
            out.data[3 * i + 1] = raw[4 * i + 1];
            out.data[3 * i + 2] = raw[4 * i + 2];
        }
        out.channels = 3;
    } else {
        out.data.assign(raw.begin(),
                        raw.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(out.height) * out.width *
                                                                  static_cast<std::size_t>(out.channels)));
    }
    return out;
}

void write_png_bytes(const std::filesystem::path& path, const std::uint8_t* data, int height, int width,
                     int channels) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG write failed for " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    const std::size_t stride = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
    for (int y = 0; y < height; ++y) {
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(data + stride * static_cast<std::size_t>(y));
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// ---- PNM ----

struct PnmBytes {
    int height = 0, width = 0, channels = 0;
    int maxval = 255;
    std::vector<std::uint8_t> data;
};

PnmBytes read_pnm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::string magic;
    f >> magic;
    if (magic != "P5" && magic != "P6") throw FormatError("unsupported PNM magic \"" + magic + "\" in " + path.string());
    auto next_int = [&]() {
        // Skip whitespace and `#` comment lines between header fields.
        int c = f.get();
        while (c != EOF && (std::isspace(c) || c == '#')) {
            if (c == '#') {
                while (c != EOF && c != '\n') c = f.get();
            }
            c = f.get();
        }
        int v = 0;
        bool any = false;
        while (c != EOF && std::isdigit(c)) {
            v = v * 10 + (c - '0');
            any = true;
            c = f.get();
        }
        if (!any) throw FormatError("bad PNM header in " + path.string());
        return v;
    };
    PnmBytes out;
    out.width = next_int();
    out.height = next_int();
    out.maxval = next_int();
    if (out.maxval < 1 || out.maxval > 255) throw FormatError("unsupported PNM maxval in " + path.string());
    out.channels = magic == "P5" ? 1 : 3;
    const std::size_t n = static_cast<std::size_t>(out.width) * out.height * static_cast<std::size_t>(out.channels);
    out.data.resize(n);
    f.read(reinterpret_cast<char*>(out.data.data()), static_cast<std::streamsize>(n));
    if (f.gcount() != static_cast<std::streamsize>(n)) throw FormatError("truncated PNM data in " + path.string());
    return out;
}

Tensor bytes_to_tensor(const std::uint8_t* data, int height, int width, int channels, double maxval) {
    Tensor img({channels, height, width}, Dtype::F64);
    auto v = img.data<double>();
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < channels; ++c) {
                v[static_cast<std::size_t>((c * height + y) * width + x)] =
                    static_cast<double>(data[(static_cast<std::size_t>(y) * width + x) * channels + c]) / maxval;
            }
        }
    }
    return img;
}

std::string lower_ext(const std::filesystem::path& path) {
    std::string e = path.extension().string();
    for (auto& c : e) c = static_cast<char>(std::tolower(c));
    return e;
}

}  // namespace

Tensor read_image(const std::filesystem::path& path) {
    const std::string ext = lower_ext(path);
    if (ext == ".png") {
        const PngBytes p = read_png_bytes(path);
        return bytes_to_tensor(p.data.data(), p.height, p.width, p.channels, 255.0);
    }
    if (ext == ".pgm" || ext == ".ppm") {
        const PnmBytes p = read_pnm(path);
        return bytes_to_tensor(p.data.data(), p.height, p.width, p.channels, static_cast<double>(p.maxval));
    }
    throw FormatError("unrecognized image extension for " + path.string());
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
        throw DimensionError("write_png expects 1xHxW or 3xHxW, got " + shape_str(image.shape()));
    }
    const int c = static_cast<int>(image.dim(0)), h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(c) * h * w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int ch = 0; ch < c; ++ch) {
                bytes[(static_cast<std::size_t>(y) * w + x) * static_cast<std::size_t>(c) + static_cast<std::size_t>(ch)] =
                    to_byte(image.at({ch, y, x}));
            }
        }
    }
    write_png_bytes(path, bytes.data(), h, w, c);
}

void write_pgm(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels, int height, int width) {
    if (pixels.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
        throw DimensionError("write_pgm: pixel count does not match dimensions");
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << "P5\n" << width << " " << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!f) throw IoError("write failed for " + path.string());
}

void write_png_palette(const std::filesystem::path& path, const std::vector<std::uint8_t>& indices, int height,
                       int width) {
    if (indices.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
        throw DimensionError("write_png_palette: index count does not match dimensions");
    }
    for (std::uint8_t v : indices) {
        if (v >= kLabelPalette.size()) throw DomainError("palette index " + std::to_string(v) + " out of range");
    }
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG write failed for " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_color palette[16];
    for (std::size_t i = 0; i < kLabelPalette.size(); ++i) {
        palette[i].red = kLabelPalette[i][0];
        palette[i].green = kLabelPalette[i][1];
        palette[i].blue = kLabelPalette[i][2];
    }
    png_set_PLTE(png, info, palette, 16);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) {
        rows[static_cast<std::size_t>(y)] =
            const_cast<png_bytep>(indices.data() + static_cast<std::size_t>(y) * static_cast<std::size_t>(width));
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

LabelImage read_label_image(const std::filesystem::path& path) {
    const std::string ext = lower_ext(path);
    LabelImage out;
    if (ext == ".pgm") {
        const PnmBytes p = read_pnm(path);
        out.height = p.height;
        out.width = p.width;
        out.values.assign(p.data.begin(), p.data.end());
        return out;
    }
    if (ext == ".png") {
        const PngBytes p = read_png_bytes(path);
        out.height = p.height;
        out.width = p.width;
        out.values.resize(static_cast<std::size_t>(p.height) * p.width);
        for (std::size_t i = 0; i < out.values.size(); ++i) {
            out.values[i] = p.data[i * static_cast<std::size_t>(p.channels)];
        }
        return out;
    }
    throw FormatError("unrecognized label image extension for " + path.string());
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
    if (image.rank() != 3) throw DimensionError("resize expects CxHxW, got " + shape_str(image.shape()));
    const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (out_h == h && out_w == w) return image.clone();
    Tensor out({c, out_h, out_w}, image.dtype());
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (int y = 0; y < out_h; ++y) {
            double fy = (y + 0.5) * sy - 0.5;
            fy = std::max(0.0, std::min(fy, static_cast<double>(h - 1)));
            const auto y0 = static_cast<std::int64_t>(fy);
            const std::int64_t y1 = std::min(y0 + 1, h - 1);
            const double wy = fy - static_cast<double>(y0);
            for (int x = 0; x < out_w; ++x) {
                double fx = (x + 0.5) * sx - 0.5;
                fx = std::max(0.0, std::min(fx, static_cast<double>(w - 1)));
                const auto x0 = static_cast<std::int64_t>(fx);
                const std::int64_t x1 = std::min(x0 + 1, w - 1);
                const double wx = fx - static_cast<double>(x0);
                const double v00 = image.at({ch, y0, x0});
                const double v01 = image.at({ch, y0, x1});
                const double v10 = image.at({ch, y1, x0});
                const double v11 = image.at({ch, y1, x1});
                const double v = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11);
                out.set({ch, y, x}, v);
            }
        }
    }
    return out;
}

Tensor to_gray(const Tensor& image) {
    if (image.rank() != 3) throw DimensionError("to_gray expects CxHxW");
    if (image.dim(0) == 1) return image.clone();
    if (image.dim(0) != 3) throw DimensionError("to_gray expects 1 or 3 channels");
    const std::int64_t h = image.dim(1), w = image.dim(2);
    Tensor out({1, h, w}, image.dtype());
    for (std::int64_t i = 0; i < h * w; ++i) {
        out.set(i, 0.299 * image.at(i) + 0.587 * image.at(h * w + i) + 0.114 * image.at(2 * h * w + i));
    }
    return out;
}

Tensor to_rgb(const Tensor& image) {
    if (image.rank() != 3) throw DimensionError("to_rgb expects CxHxW");
    if (image.dim(0) == 3) return image.clone();
    if (image.dim(0) != 1) throw DimensionError("to_rgb expects 1 or 3 channels");
    const std::int64_t h = image.dim(1), w = image.dim(2);
    Tensor out({3, h, w}, image.dtype());
    for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t i = 0; i < h * w; ++i) out.set(c * h * w + i, image.at(i));
    }
    return out;
}

}  // namespace scvae
