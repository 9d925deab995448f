#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "scvae/cli.hpp"
#include "scvae/corpus.hpp"
#include "scvae/checkpoint.hpp"
#include "scvae/image_io.hpp"
#include "testutil.hpp"

using namespace scvae;
using testutil::TempDir;

namespace {

std::vector<char> slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::vector<char>((std::istreambuf_iterator<char>(f)), {});
}

void write_config(const std::filesystem::path& path, const std::string& data_dir, int epochs, std::uint64_t seed) {
    std::ofstream f(path);
    f << "learning_rate = 0.001\n"
      << "batch_size = 4\n"
      << "epochs = " << epochs << "\n"
      << "seed = " << seed << "\n"
      << "data_dir = " << data_dir << "\n"
      << "model.image_size = 16\n"
      << "model.channels = 1\n"
      << "model.downsample_blocks = 1\n"
      << "model.latent_dim = 9\n"
      << "model.dict_atoms = 16\n"
      << "model.lista_steps = 2\n"
      << "model.alpha = 1\n"
      << "model.base_channels = 4\n"
      << "model.mid_channels = 4\n";
}

}  // namespace

TEST_CASE("png and pgm round trips preserve quantized pixels") {
    TempDir tmp("io");
    Rng rng(100);
    for (int channels : {1, 3}) {
        Tensor img({channels, 9, 7}, Dtype::F64);
        for (std::int64_t i = 0; i < img.numel(); ++i) img.set(i, rng.uniform(0.0, 1.0));
        const auto path = tmp.path / ("t" + std::to_string(channels) + ".png");
        write_png(path, img);
        Tensor back = read_image(path);
        REQUIRE(back.shape() == img.shape());
        for (std::int64_t i = 0; i < img.numel(); ++i) {
            CHECK(back.at(i) == doctest::Approx(std::round(img.at(i) * 255.0) / 255.0).epsilon(1e-12));
        }
    }

    std::vector<std::uint8_t> gray = {0, 64, 128, 255, 17, 99};
    write_pgm(tmp.path / "m.pgm", gray, 2, 3);
    LabelImage li = read_label_image(tmp.path / "m.pgm");
    CHECK(li.height == 2);
    CHECK(li.width == 3);
    for (std::size_t i = 0; i < gray.size(); ++i) CHECK(li.values[i] == static_cast<int>(gray[i]));

    Tensor as_image = read_image(tmp.path / "m.pgm");
    CHECK(as_image.shape() == std::vector<std::int64_t>{1, 2, 3});
    CHECK(as_image.at(3) == doctest::Approx(1.0));
}

TEST_CASE("palette png writes valid indexed files") {
    TempDir tmp("pal");
    std::vector<std::uint8_t> idx = {0, 1, 2, 3, 4, 5};
    write_png_palette(tmp.path / "p.png", idx, 2, 3);
    Tensor rgb = read_image(tmp.path / "p.png");  // palette expands to RGB
    CHECK(rgb.shape() == std::vector<std::int64_t>{3, 2, 3});
    // first palette entry is black, second is the fixed red
    CHECK(rgb.at({0, 0, 0}) == 0.0);
    CHECK(rgb.at({0, 0, 1}) == doctest::Approx(230.0 / 255.0));
    CHECK_THROWS_AS(write_png_palette(tmp.path / "bad.png", {99}, 1, 1), DomainError);
}

TEST_CASE("bilinear resize preserves constants and sizes") {
    Tensor img = Tensor::full({3, 5, 5}, 0.42, Dtype::F64);
    Tensor up = resize_bilinear(img, 13, 9);
    CHECK(up.shape() == std::vector<std::int64_t>{3, 13, 9});
    for (std::int64_t i = 0; i < up.numel(); ++i) CHECK(up.at(i) == doctest::Approx(0.42).epsilon(1e-12));
}

TEST_CASE("toy corpus is deterministic and in range") {
    ToyImage a = make_toy_image(32, 3, 5, 7);
    ToyImage b = make_toy_image(32, 3, 5, 7);
    CHECK(bitwise_equal(a.image, b.image));
    CHECK(a.mask == b.mask);
    for (std::int64_t i = 0; i < a.image.numel(); ++i) {
        CHECK(a.image.at(i) >= 0.0);
        CHECK(a.image.at(i) <= 1.0);
    }
    // seg-only images have interior, nonempty masks
    ToyImage seg = make_toy_image(32, 3, 5, 3, /*seg_only=*/true);
    int fg = 0;
    for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
            if (seg.mask[static_cast<std::size_t>(y * 32 + x)]) {
                ++fg;
                CHECK(y > 0);
                CHECK(y < 31);
                CHECK(x > 0);
                CHECK(x < 31);
            }
        }
    }
    CHECK(fg >= 100);
}

TEST_CASE("cli usage errors and help") {
    CHECK(run_cli({"--help"}) == 0);
    for (const std::string sub :
         {"make-dict", "train", "encode", "reconstruct", "cluster-patches", "segment", "eval", "noise-sweep"}) {
        CHECK(run_cli({sub, "--help"}) == 0);
    }
    CHECK(run_cli({}) == 2);                       // missing subcommand
    CHECK(run_cli({"frobnicate"}) == 2);           // unknown subcommand
    CHECK(run_cli({"make-dict", "--bogus", "1"}) == 2);
    CHECK(run_cli({"make-dict"}) == 2);            // missing required flags
}

TEST_CASE("make-dict writes the expected container") {
    TempDir tmp("mkdict");
    const auto out = (tmp.path / "dict.scvk").string();
    CHECK(run_cli({"make-dict", "--n", "256", "--atoms", "512", "--out", out}) == 0);
    Checkpoint ck = load_checkpoint(out);
    REQUIRE(ck.tensors.count("dictionary.atoms") == 1);
    CHECK(ck.tensors.at("dictionary.atoms").shape() == std::vector<std::int64_t>{256, 512});
    CHECK(ck.scalar("dictionary.lipschitz") > 1.0);

    // invalid configuration is a runtime failure, not a crash
    CHECK(run_cli({"make-dict", "--n", "15", "--atoms", "64", "--out", (tmp.path / "x.scvk").string()}) == 1);
}

TEST_CASE("train/eval/reconstruct pipeline runs and is deterministic") {
    TempDir tmp("pipe");
    write_toy_corpus(tmp.path / "corpus", 12, 16, 1, 3);
    const std::string data = (tmp.path / "corpus" / "images").string();
    write_config(tmp.path / "cfg.txt", data, 1, 11);

    for (const std::string run : {"r1", "r2"}) {
        const auto dir = tmp.path / run;
        std::filesystem::create_directories(dir);
        CHECK(run_cli({"train", "--config", (tmp.path / "cfg.txt").string(), "--out", dir.string()}) == 0);
        CHECK(run_cli({"eval", "--ckpt", (dir / "last.scvk").string(), "--data", data, "--out",
                       (dir / "eval.csv").string()}) == 0);
        CHECK(run_cli({"reconstruct", "--ckpt", (dir / "last.scvk").string(), "--in", data, "--out",
                       (dir / "recon").string()}) == 0);
        CHECK(run_cli({"segment", "--ckpt", (dir / "last.scvk").string(), "--in", data, "--out",
                       (dir / "seg").string(), "--classes", "2", "--seed", "4"}) == 0);
        CHECK(run_cli({"encode", "--ckpt", (dir / "last.scvk").string(), "--in", data, "--out",
                       (dir / "codes").string()}) == 0);
        CHECK(run_cli({"cluster-patches", "--ckpt", (dir / "last.scvk").string(), "--data", data, "--clusters",
                       "4", "--seed", "2", "--out", (dir / "clusters").string()}) == 0);
    }

    CHECK(slurp(tmp.path / "r1/last.scvk") == slurp(tmp.path / "r2/last.scvk"));
    CHECK(slurp(tmp.path / "r1/losses.csv") == slurp(tmp.path / "r2/losses.csv"));
    CHECK(slurp(tmp.path / "r1/eval.csv") == slurp(tmp.path / "r2/eval.csv"));
    CHECK(slurp(tmp.path / "r1/recon/metrics.csv") == slurp(tmp.path / "r2/recon/metrics.csv"));
    CHECK(slurp(tmp.path / "r1/clusters/assignments.csv") == slurp(tmp.path / "r2/clusters/assignments.csv"));

    // reconstructions exist, shapes preserved, deterministic bytes
    const auto png1 = tmp.path / "r1/recon/img0000.recon.png";
    REQUIRE(std::filesystem::exists(png1));
    CHECK(slurp(png1) == slurp(tmp.path / "r2/recon/img0000.recon.png"));
    Tensor recon = read_image(png1);
    CHECK(recon.shape() == std::vector<std::int64_t>{1, 16, 16});

    // segmentation artifacts
    const auto labels = tmp.path / "r1/seg/img0000.labels.pgm";
    REQUIRE(std::filesystem::exists(labels));
    LabelImage li = read_label_image(labels);
    CHECK(li.height == 8);
    CHECK(li.width == 8);
    for (int v : li.values) CHECK(v < 2);
    CHECK(std::filesystem::exists(tmp.path / "r1/seg/img0000.fg.png"));
    CHECK(slurp(labels) == slurp(tmp.path / "r2/seg/img0000.labels.pgm"));

    // encode artifacts: value/code grids in the container format
    Checkpoint codes = load_checkpoint(tmp.path / "r1/codes/img0000.codes.scvk");
    CHECK(codes.tensors.at("latent.values").shape() == std::vector<std::int64_t>{8, 8, 9});
    CHECK(codes.tensors.at("latent.codes").shape() == std::vector<std::int64_t>{8, 8, 16});
}

TEST_CASE("reconstruct on an empty directory exits 1 without outputs") {
    TempDir tmp("empty_recon");
    std::filesystem::create_directories(tmp.path / "empty");
    write_toy_corpus(tmp.path / "corpus", 6, 16, 1, 3);
    write_config(tmp.path / "cfg.txt", (tmp.path / "corpus" / "images").string(), 1, 1);
    std::filesystem::create_directories(tmp.path / "run");
    REQUIRE(run_cli({"train", "--config", (tmp.path / "cfg.txt").string(), "--out", (tmp.path / "run").string()}) ==
            0);
    CHECK(run_cli({"reconstruct", "--ckpt", (tmp.path / "run/last.scvk").string(), "--in",
                   (tmp.path / "empty").string(), "--out", (tmp.path / "out").string()}) == 1);
    CHECK_FALSE(std::filesystem::exists(tmp.path / "out/metrics.csv"));
}

TEST_CASE("noise-sweep emits one row per sigma and matches the clean run at zero") {
    TempDir tmp("sweep");
    write_toy_corpus(tmp.path / "corpus", 8, 16, 1, 9, /*seg_only=*/true);
    const std::string data = (tmp.path / "corpus" / "images").string();
    write_config(tmp.path / "cfg.txt", data, 1, 2);
    std::filesystem::create_directories(tmp.path / "run");
    REQUIRE(run_cli({"train", "--config", (tmp.path / "cfg.txt").string(), "--out", (tmp.path / "run").string()}) ==
            0);
    const std::string ckpt = (tmp.path / "run/last.scvk").string();

    CHECK(run_cli({"noise-sweep", "--ckpt", ckpt, "--data", data, "--sigmas", "0,0.05,0.1", "--classes", "2",
                   "--seed", "3", "--out", (tmp.path / "sweep.csv").string()}) == 0);
    std::ifstream f(tmp.path / "sweep.csv");
    std::string line;
    std::getline(f, line);
    CHECK(line == "sigma,mean_iou,mean_dice");
    std::vector<std::string> rows;
    while (std::getline(f, line)) {
        if (!line.empty()) rows.push_back(line);
    }
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].substr(0, 9) == "0.000000,");
    CHECK(rows[1].substr(0, 9) == "0.050000,");
    CHECK(rows[2].substr(0, 9) == "0.100000,");

    // sigma = 0 twice gives identical rows (no noise applied)
    CHECK(run_cli({"noise-sweep", "--ckpt", ckpt, "--data", data, "--sigmas", "0", "--classes", "2", "--seed",
                   "99", "--out", (tmp.path / "sweep0.csv").string()}) == 0);
    std::ifstream f0(tmp.path / "sweep0.csv");
    std::getline(f0, line);
    std::getline(f0, line);
    CHECK(line == rows[0]);
}
