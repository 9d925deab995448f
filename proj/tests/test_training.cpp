#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "scvae/corpus.hpp"
#include "scvae/dataset.hpp"
#include "scvae/image_io.hpp"
#include "scvae/trainer.hpp"
#include "testutil.hpp"

using namespace scvae;
using testutil::TempDir;

namespace {

TrainConfig toy_train_config(const std::string& data_dir) {
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.seed = 99;
    cfg.data_dir = data_dir;
    cfg.model.image_size = 16;
    cfg.model.channels = 1;
    cfg.model.downsample_blocks = 1;
    cfg.model.latent_dim = 9;
    cfg.model.dict_atoms = 16;
    cfg.model.lista_steps = 2;
    cfg.model.alpha = 1.0;
    cfg.model.base_channels = 4;
    cfg.model.mid_channels = 4;
    return cfg;
}

}  // namespace

TEST_CASE("adam zero gradient leaves parameters fixed while moments decay") {
    Tensor p = Tensor::from_values({3}, {1.0, -2.0, 0.5}, Dtype::F64);
    Tensor before = p.clone();
    Adam adam({0.1});
    adam.register_param("p", p);

    // One real step to charge the moments, then a zero-gradient step.
    p.ensure_grad();
    auto g = p.grad_data<double>();
    g[0] = 1.0;
    g[1] = -0.5;
    g[2] = 0.25;
    adam.step();
    Tensor after_first = p.clone();
    CHECK_FALSE(bitwise_equal(after_first, before));

    adam.zero_grad();
    adam.step();
    // Zero gradient: m decays toward zero but keeps its sign, so the update
    // direction is unchanged and tiny; v only decays. The key contract is
    // that a zero gradient from a zero state moves nothing:
    Tensor q = Tensor::from_values({2}, {3.0, -3.0}, Dtype::F64);
    Adam adam2({0.1});
    adam2.register_param("q", q);
    adam2.step();  // no grad buffer at all
    CHECK(q.at(0) == 3.0);
    CHECK(q.at(1) == -3.0);
}

TEST_CASE("adam first step has learning-rate magnitude") {
    Tensor p = Tensor::from_values({3}, {0.0, 0.0, 0.0}, Dtype::F64);
    Adam adam({0.05});
    adam.register_param("p", p);
    p.ensure_grad();
    auto g = p.grad_data<double>();
    g[0] = 0.7;
    g[1] = -1.9;
    g[2] = 1e-3;
    adam.step();
    CHECK(p.at(0) == doctest::Approx(-0.05).epsilon(1e-6));
    CHECK(p.at(1) == doctest::Approx(0.05).epsilon(1e-6));
    CHECK(p.at(2) == doctest::Approx(-0.05).epsilon(1e-4));
}

TEST_CASE("adam converges on a convex quadratic") {
    Tensor p = Tensor::from_values({1}, {0.0}, Dtype::F64);
    Adam adam({0.1});
    adam.register_param("p", p);
    for (int step = 0; step < 200; ++step) {
        p.zero_grad();
        p.ensure_grad();
        p.grad_data<double>()[0] = 2.0 * (p.at(0) - 3.0);
        adam.step();
    }
    CHECK(std::abs(p.at(0) - 3.0) < 0.1);
}

TEST_CASE("adam rejects non-finite gradients by name") {
    Tensor p = Tensor::from_values({2}, {1.0, 1.0}, Dtype::F64);
    Adam adam({0.1});
    adam.register_param("enc.weird", p);
    p.ensure_grad();
    p.grad_data<double>()[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(adam.step(), doctest::Contains("enc.weird"), NumericError);
}

TEST_CASE("adam clamps flagged parameters at zero") {
    Tensor theta = Tensor::from_values({2}, {1e-4, 0.5}, Dtype::F64);
    Adam adam({0.1});
    adam.register_param("lista.theta", theta, /*clamp_nonneg=*/true);
    theta.ensure_grad();
    theta.grad_data<double>()[0] = 1.0;
    theta.grad_data<double>()[1] = -1.0;
    adam.step();
    CHECK(theta.at(0) == 0.0);
    CHECK(theta.at(1) > 0.5);
}

TEST_CASE("checkpoint round trip is byte-exact") {
    TempDir tmp("ckpt");
    Rng rng(80);
    Checkpoint ck;
    ck.tensors["alpha"] = testutil::random_tensor({3, 4}, rng);
    Tensor f32({7}, Dtype::F32);
    for (int i = 0; i < 7; ++i) f32.set(i, rng.uniform(-10.0, 10.0));
    ck.tensors["seven"] = f32;
    ck.set_scalar("meta.step", 42.0);
    ck.set_text("config.text", "batch_size = 16\n");

    const auto path1 = tmp.path / "a.scvk";
    const auto path2 = tmp.path / "b.scvk";
    save_checkpoint(ck, path1);
    Checkpoint loaded = load_checkpoint(path1);
    save_checkpoint(loaded, path2);

    std::ifstream f1(path1, std::ios::binary), f2(path2, std::ios::binary);
    std::vector<char> b1((std::istreambuf_iterator<char>(f1)), {});
    std::vector<char> b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);

    CHECK(bitwise_equal(loaded.tensors.at("seven"), f32));
    CHECK(loaded.scalar("meta.step") == 42.0);
    CHECK(loaded.text("config.text") == "batch_size = 16\n");
}

TEST_CASE("corrupted checkpoints are format errors with no partial state") {
    TempDir tmp("corrupt");
    Checkpoint ck;
    ck.set_scalar("x", 1.0);
    const auto path = tmp.path / "c.scvk";
    save_checkpoint(ck, path);

    std::vector<std::uint8_t> bytes;
    {
        std::ifstream f(path, std::ios::binary);
        bytes.assign((std::istreambuf_iterator<char>(f)), {});
    }
    for (std::size_t off : {std::size_t{0}, std::size_t{2}, std::size_t{5}}) {
        std::vector<std::uint8_t> bad = bytes;
        bad[off] ^= 0xFF;
        CHECK_THROWS_AS(Checkpoint::deserialize(bad), FormatError);
    }
    std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 3);
    CHECK_THROWS_WITH_AS(Checkpoint::deserialize(truncated), doctest::Contains("offset"), FormatError);
}

TEST_CASE("config parsing") {
    TrainConfig defaults;
    CHECK(defaults.learning_rate == 1e-4);
    CHECK(defaults.batch_size == 16);
    CHECK(defaults.adam_beta1 == 0.9);
    CHECK(defaults.adam_beta2 == 0.999);
    CHECK(defaults.adam_eps == 1e-8);

    const std::string text =
        "# toy setup\n"
        "learning_rate = 0.001\n"
        "batch_size = 8   # inline comment\n"
        "epochs = 3\n"
        "seed = 7\n"
        "data_dir = /tmp/data\n"
        "model.downsample_blocks = 1\n"
        "model.latent_dim = 16\n"
        "model.use_nonlocal = false\n";
    TrainConfig cfg = parse_train_config_text(text);
    CHECK(cfg.learning_rate == 0.001);
    CHECK(cfg.batch_size == 8);
    CHECK(cfg.epochs == 3);
    CHECK(cfg.seed == 7);
    CHECK(cfg.data_dir == "/tmp/data");
    CHECK(cfg.model.latent_dim == 16);
    CHECK_FALSE(cfg.model.use_nonlocal);

    CHECK_THROWS_WITH_AS(parse_train_config_text("learning_rte = 0.1\n"), doctest::Contains("learning_rte"),
                         ConfigError);
    CHECK_THROWS_AS(parse_train_config_text("batch_size = soon\n"), ConfigError);

    // serialize -> parse round trip
    TrainConfig back = parse_train_config_text(serialize_train_config(cfg));
    CHECK(serialize_train_config(back) == serialize_train_config(cfg));
}

TEST_CASE("dataset loading is sorted, converted and resilient") {
    TempDir tmp("data");
    // three valid images with deliberately unsorted creation order
    Tensor img_b = Tensor::full({1, 8, 8}, 0.25, Dtype::F64);
    write_png(tmp.path / "b.png", img_b);
    Tensor img_a = Tensor::full({3, 8, 8}, 0.5, Dtype::F64);
    write_png(tmp.path / "a.png", img_a);
    Tensor img_c = Tensor::full({1, 4, 4}, 0.75, Dtype::F64);
    write_png(tmp.path / "c.png", img_c);
    // one junk file with an image extension
    {
        std::ofstream junk(tmp.path / "broken.png");
        junk << "not a png";
    }
    // one file with an unrecognized extension, ignored entirely
    {
        std::ofstream other(tmp.path / "notes.txt");
        other << "hello";
    }

    Dataset ds = load_dataset(tmp.path, 8, 1);
    REQUIRE(ds.names.size() == 3);
    CHECK(ds.names[0] == "a.png");
    CHECK(ds.names[1] == "b.png");
    CHECK(ds.names[2] == "c.png");

    // gray conversion of a gray-valued RGB image keeps the constant
    // (values carry the u8 quantization: round(v*255)/255)
    const auto quant = [](double v) { return std::round(v * 255.0) / 255.0; };
    CHECK(ds.images[0].dim(0) == 1);
    CHECK(ds.images[0].at(0) == doctest::Approx(quant(0.5)).epsilon(1e-9));
    // 2x upsize of a constant stays constant (bilinear preserves constants)
    for (std::int64_t i = 0; i < ds.images[2].numel(); ++i) {
        CHECK(ds.images[2].at(i) == doctest::Approx(quant(0.75)).epsilon(1e-9));
    }
    // u8 quantization round trip: 0.25 * 255 is not integral, so the stored
    // value is round(0.25*255)/255
    CHECK(ds.images[1].at(0) == doctest::Approx(std::round(0.25 * 255.0) / 255.0).epsilon(1e-12));

    TempDir empty("empty");
    CHECK_THROWS_AS(load_dataset(empty.path, 8, 1), IoError);
}

TEST_CASE("training is deterministic and keeps the invariants") {
    TempDir tmp("train");
    write_toy_corpus(tmp.path / "corpus", 16, 16, 1, 5);
    TrainConfig cfg = toy_train_config((tmp.path / "corpus" / "images").string());

    TrainResult r1 = train(cfg);
    TrainResult r2 = train(cfg);
    CHECK(r1.last.serialize() == r2.last.serialize());
    CHECK(r1.epoch_reports.size() == 2);

    // theta >= 0 after training
    const Tensor& theta = r1.last.tensors.at("lista.theta");
    for (std::int64_t i = 0; i < theta.numel(); ++i) CHECK(theta.at(i) >= 0.0);

    // best epoch-mean <= every epoch mean
    const double best = r1.best.has("meta.best_total") ? r1.best.scalar("meta.best_total")
                                                       : r1.last.scalar("meta.best_total");
    for (const LossReport& r : r1.epoch_reports) CHECK(best <= r.total + 1e-12);

    // loss decomposition recorded per epoch
    for (const LossReport& r : r1.epoch_reports) {
        CHECK(std::isfinite(r.total));
        CHECK(r.total >= 0.0);
    }
}

TEST_CASE("checkpoint resume is bit-exact") {
    TempDir tmp("resume");
    write_toy_corpus(tmp.path / "corpus", 40, 16, 1, 6);
    TrainConfig cfg = toy_train_config((tmp.path / "corpus" / "images").string());
    cfg.batch_size = 4;  // 10 steps per epoch

    TrainConfig cfg20 = cfg;
    cfg20.epochs = 2;
    TrainResult straight = train(cfg20);

    TrainConfig cfg10 = cfg;
    cfg10.epochs = 1;
    TrainResult first_half = train(cfg10);
    CHECK(static_cast<std::int64_t>(first_half.last.scalar("meta.step")) == 10);

    // save, reload, continue to 20 steps
    TempDir ckdir("resume_ck");
    const auto path = ckdir.path / "mid.scvk";
    save_checkpoint(first_half.last, path);
    Checkpoint mid = load_checkpoint(path);
    TrainResult second_half = train(cfg20, mid);

    CHECK(static_cast<std::int64_t>(second_half.last.scalar("meta.step")) == 20);
    CHECK(second_half.last.serialize() == straight.last.serialize());
}

TEST_CASE("training loss trends downward on the toy corpus") {
    TempDir tmp("trend");
    write_toy_corpus(tmp.path / "corpus", 64, 32, 1, 7);
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 8;
    cfg.epochs = 5;
    cfg.seed = 1;
    cfg.data_dir = (tmp.path / "corpus" / "images").string();
    cfg.model.image_size = 32;
    cfg.model.channels = 1;
    cfg.model.downsample_blocks = 1;
    cfg.model.latent_dim = 16;
    cfg.model.dict_atoms = 64;
    cfg.model.lista_steps = 4;
    cfg.model.alpha = 1.0;
    cfg.model.base_channels = 8;
    cfg.model.mid_channels = 16;

    TrainResult r = train(cfg);
    REQUIRE(r.epoch_reports.size() == 5);
    CHECK(r.epoch_reports.back().total < r.epoch_reports.front().total);
}

TEST_CASE("trainer writes best, last and losses.csv") {
    TempDir tmp("files");
    write_toy_corpus(tmp.path / "corpus", 16, 16, 1, 8);
    TrainConfig cfg = toy_train_config((tmp.path / "corpus" / "images").string());
    TrainResult r = train(cfg, std::nullopt, tmp.path);
    CHECK(std::filesystem::exists(tmp.path / "best.scvk"));
    CHECK(std::filesystem::exists(tmp.path / "last.scvk"));
    CHECK(std::filesystem::exists(tmp.path / "losses.csv"));

    std::ifstream csv(tmp.path / "losses.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "epoch,mean_total,mean_rec,mean_latent,mean_hoyer");
    int rows = 0;
    std::string line;
    while (std::getline(csv, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 2);

    // a reloaded checkpoint reproduces forward outputs bit-exactly
    LoadedModel lm = model_from_checkpoint(load_checkpoint(tmp.path / "last.scvk"));
    Dataset ds = load_dataset(cfg.data_dir, 16, 1);
    Tensor x = ds.images[0].astype(lm.model.dtype);
    ForwardResult a = model_forward(nullptr, lm.model, x);
    LoadedModel lm2 = model_from_checkpoint(r.last);
    ForwardResult b = model_forward(nullptr, lm2.model, x);
    CHECK(bitwise_equal(a.reconstruction, b.reconstruction));
}
