#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "scvae/ops.hpp"
#include "scvae/rng.hpp"
#include "testutil.hpp"

using namespace scvae;
using testutil::check_op_gradients;
using testutil::random_tensor;

namespace {

Tensor vec(const std::vector<double>& v, Dtype dt = Dtype::F64) {
    return Tensor::from_values({static_cast<std::int64_t>(v.size())}, v, dt);
}

}  // namespace

TEST_CASE("matmul basics") {
    Rng rng(1);
    Tensor eye = Tensor::zeros({3, 3}, Dtype::F64);
    for (int i = 0; i < 3; ++i) eye.set({i, i}, 1.0);
    Tensor m = random_tensor({3, 3}, rng);
    Tensor out = ops::matmul(nullptr, eye, m);
    for (std::int64_t i = 0; i < 9; ++i) CHECK(out.at(i) == doctest::Approx(m.at(i)).epsilon(1e-15));

    Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4}, Dtype::F64);
    Tensor b = Tensor::from_values({2, 1}, {1, 1}, Dtype::F64);
    Tensor c = ops::matmul(nullptr, a, b);
    CHECK(c.at(0) == 3.0);
    CHECK(c.at(1) == 7.0);

    CHECK_THROWS_WITH_AS(ops::matmul(nullptr, Tensor::zeros({2, 3}, Dtype::F64), Tensor::zeros({2, 3}, Dtype::F64)),
                         doctest::Contains("[2x3]"), DimensionError);
}

TEST_CASE("matmul gradients vs finite differences") {
    Rng rng(2);
    Tensor a = random_tensor({5, 4}, rng).set_requires_grad(true);
    Tensor b = random_tensor({4, 3}, rng).set_requires_grad(true);
    std::vector<Tensor> inputs{a, b};
    const double err = check_op_gradients(
        inputs, [](Tape* t, std::vector<Tensor>& in) { return ops::matmul(t, in[0], in[1]); }, rng);
    CHECK(err < 1e-6);
}

TEST_CASE("matmul transpose flags match explicit transposition") {
    Rng rng(3);
    for (const bool ta : {false, true}) {
        for (const bool tb : {false, true}) {
            Tensor a = random_tensor(ta ? std::vector<std::int64_t>{4, 5} : std::vector<std::int64_t>{5, 4}, rng);
            Tensor b = random_tensor(tb ? std::vector<std::int64_t>{3, 4} : std::vector<std::int64_t>{4, 3}, rng);
            Tensor out = ops::matmul(nullptr, a, b, ta, tb);
            for (int i = 0; i < 5; ++i) {
                for (int j = 0; j < 3; ++j) {
                    double s = 0.0;
                    for (int k = 0; k < 4; ++k) {
                        const double av = ta ? a.at({k, i}) : a.at({i, k});
                        const double bv = tb ? b.at({j, k}) : b.at({k, j});
                        s += av * bv;
                    }
                    CHECK(out.at({i, j}) == doctest::Approx(s).epsilon(1e-12));
                }
            }
            // gradients for each flag combination
            Tensor ag = a.clone().set_requires_grad(true);
            Tensor bg = b.clone().set_requires_grad(true);
            std::vector<Tensor> inputs{ag, bg};
            const double err = check_op_gradients(
                inputs, [ta, tb](Tape* t, std::vector<Tensor>& in) { return ops::matmul(t, in[0], in[1], ta, tb); },
                rng);
            CHECK(err < 1e-6);
        }
    }
}

TEST_CASE("conv2d identity and counting cases") {
    Rng rng(4);
    Tensor x = random_tensor({1, 1, 3, 3}, rng);
    Tensor k1 = Tensor::from_values({1, 1, 1, 1}, {1.0}, Dtype::F64);
    Tensor y = ops::conv2d(nullptr, x, k1, 1, 0);
    CHECK(bitwise_equal(y, x));

    Tensor ones = Tensor::full({1, 1, 4, 4}, 1.0, Dtype::F64);
    Tensor k2 = Tensor::full({1, 1, 2, 2}, 1.0, Dtype::F64);
    Tensor pooled = ops::conv2d(nullptr, ones, k2, 2, 0);
    CHECK(pooled.shape() == std::vector<std::int64_t>{1, 1, 2, 2});
    for (std::int64_t i = 0; i < 4; ++i) CHECK(pooled.at(i) == 4.0);

    CHECK_THROWS_AS(ops::conv2d(nullptr, ones, Tensor::zeros({1, 1, 7, 7}, Dtype::F64), 1, 0), DimensionError);
}

TEST_CASE("conv2d gradients vs finite differences") {
    Rng rng(5);
    Tensor x = random_tensor({2, 2, 5, 5}, rng).set_requires_grad(true);
    Tensor k = random_tensor({3, 2, 3, 3}, rng).set_requires_grad(true);
    std::vector<Tensor> inputs{x, k};
    const double err = check_op_gradients(
        inputs, [](Tape* t, std::vector<Tensor>& in) { return ops::conv2d(t, in[0], in[1], 2, 1); }, rng);
    CHECK(err < 1e-5);
}

TEST_CASE("soft_threshold formula and dead zone") {
    Tensor v = vec({0.5, -0.1, 0.0, -0.9});
    Tensor th = vec({0.2, 0.2, 0.3, 0.4});
    Tensor out = ops::soft_threshold(nullptr, v, th);
    CHECK(out.at(0) == doctest::Approx(0.3));
    CHECK(out.at(1) == 0.0);
    CHECK(out.at(2) == 0.0);
    CHECK(out.at(3) == doctest::Approx(-0.5));

    CHECK_THROWS_AS(ops::soft_threshold(nullptr, v, vec({0.1, -0.2, 0.3, 0.4})), DomainError);
}

TEST_CASE("soft_threshold zero-count property") {
    Rng rng(6);
    for (int trial = 0; trial < 25; ++trial) {
        Tensor v = random_tensor({40}, rng, -2.0, 2.0);
        Tensor th = random_tensor({40}, rng, 0.0, 1.5);
        Tensor out = ops::soft_threshold(nullptr, v, th);
        std::int64_t zeros = 0, dead = 0;
        for (std::int64_t i = 0; i < 40; ++i) {
            if (out.at(i) == 0.0) ++zeros;
            if (std::abs(v.at(i)) <= th.at(i)) ++dead;
        }
        CHECK(zeros == dead);
    }
}

TEST_CASE("group_norm degenerate and statistics cases") {
    Rng rng(7);
    Tensor gamma = Tensor::full({6}, 1.0, Dtype::F64);
    Tensor beta = Tensor::zeros({6}, Dtype::F64);

    Tensor constant = Tensor::full({2, 6, 3, 3}, 3.25, Dtype::F64);
    Tensor out = ops::group_norm(nullptr, constant, 3, gamma, beta, 1e-6);
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out.at(i) == doctest::Approx(0.0).epsilon(1e-12));

    Tensor beta_b = Tensor::full({6}, -1.5, Dtype::F64);
    Tensor zero_gamma = Tensor::zeros({6}, Dtype::F64);
    Tensor x = random_tensor({1, 6, 4, 4}, rng);
    out = ops::group_norm(nullptr, x, 2, zero_gamma, beta_b, 1e-6);
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out.at(i) == -1.5);

    // per-group mean/variance before affine
    out = ops::group_norm(nullptr, x, 2, gamma, beta, 1e-6);
    for (int g = 0; g < 2; ++g) {
        double mean = 0.0, var = 0.0;
        const int group_elems = 3 * 16;
        for (int c = g * 3; c < (g + 1) * 3; ++c) {
            for (int i = 0; i < 16; ++i) mean += out.at(c * 16 + i);
        }
        mean /= group_elems;
        for (int c = g * 3; c < (g + 1) * 3; ++c) {
            for (int i = 0; i < 16; ++i) {
                const double d = out.at(c * 16 + i) - mean;
                var += d * d;
            }
        }
        var /= group_elems;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }

    CHECK_THROWS_AS(ops::group_norm(nullptr, x, 4, gamma, beta, 1e-6), ConfigError);
}

TEST_CASE("group_norm gradients vs finite differences") {
    Rng rng(8);
    Tensor x = random_tensor({2, 4, 3, 3}, rng).set_requires_grad(true);
    Tensor gamma = random_tensor({4}, rng, 0.5, 1.5).set_requires_grad(true);
    Tensor beta = random_tensor({4}, rng, -0.5, 0.5).set_requires_grad(true);
    std::vector<Tensor> inputs{x, gamma, beta};
    const double err = check_op_gradients(
        inputs, [](Tape* t, std::vector<Tensor>& in) { return ops::group_norm(t, in[0], 2, in[1], in[2], 1e-6); },
        rng);
    CHECK(err < 1e-4);
}

TEST_CASE("swish values and gradient") {
    Tensor z = vec({0.0});
    CHECK(ops::swish(nullptr, z).at(0) == 0.0);
    Tensor big = vec({100.0});
    CHECK(ops::swish(nullptr, big).at(0) == doctest::Approx(100.0).epsilon(1e-12));

    Rng rng(9);
    Tensor x = random_tensor({30}, rng, -3.0, 3.0).set_requires_grad(true);
    std::vector<Tensor> inputs{x};
    const double err =
        check_op_gradients(inputs, [](Tape* t, std::vector<Tensor>& in) { return ops::swish(t, in[0]); }, rng);
    CHECK(err < 1e-6);
}

TEST_CASE("backward basics") {
    {
        Tape tape;
        Tensor x = vec({1.0, 2.0, 3.0}).set_requires_grad(true);
        Tensor loss = ops::sum(&tape, x);
        tape.backward(loss);
        for (int i = 0; i < 3; ++i) CHECK(x.grad_at(i) == 1.0);
    }
    {
        Tape tape;
        Tensor x = vec({1.0, 2.0}).set_requires_grad(true);
        Tensor loss = ops::sum(&tape, ops::mul(&tape, x, x));
        tape.backward(loss);
        CHECK(x.grad_at(0) == 2.0);
        CHECK(x.grad_at(1) == 4.0);
    }
    {
        Tape tape;
        Tensor x = vec({1.0, 2.0}).set_requires_grad(true);
        Tensor not_scalar = ops::mul(&tape, x, x);
        CHECK_THROWS_AS(tape.backward(not_scalar), DimensionError);
    }
}

TEST_CASE("backward accumulates until zeroed") {
    Tensor x = vec({2.0}).set_requires_grad(true);
    for (int pass = 1; pass <= 3; ++pass) {
        Tape tape;
        Tensor loss = ops::sum(&tape, x);
        tape.backward(loss);
        CHECK(x.grad_at(0) == static_cast<double>(pass));
    }
    x.zero_grad();
    CHECK(x.grad_at(0) == 0.0);
}

TEST_CASE("three-layer composition gradient vs finite differences") {
    Rng rng(10);
    Tensor w1 = random_tensor({6, 4}, rng).set_requires_grad(true);
    Tensor w2 = random_tensor({4, 3}, rng).set_requires_grad(true);
    Tensor x = random_tensor({2, 6}, rng).set_requires_grad(true);
    std::vector<Tensor> inputs{w1, w2, x};
    const double err = check_op_gradients(
        inputs,
        [](Tape* t, std::vector<Tensor>& in) {
            Tensor h = ops::swish(t, ops::matmul(t, in[2], in[0]));
            return ops::swish(t, ops::matmul(t, h, in[1]));
        },
        rng);
    CHECK(err < 1e-5);
}

TEST_CASE("backward linearity") {
    Rng rng(11);
    Tensor x = random_tensor({8}, rng);
    const double a = 1.7, b = -0.6;

    auto grad_of = [&](const std::function<Tensor(Tape*, Tensor&)>& f) {
        Tensor p = x.clone().set_requires_grad(true);
        Tape tape;
        tape.backward(f(&tape, p));
        return p.grad_clone();
    };
    Tensor gf = grad_of([](Tape* t, Tensor& p) { return ops::sum_squares(t, p); });
    Tensor gg = grad_of([](Tape* t, Tensor& p) { return ops::sum(t, ops::swish(t, p)); });
    Tensor gfg = grad_of([&](Tape* t, Tensor& p) {
        return ops::add(t, ops::scale(t, ops::sum_squares(t, p), a),
                        ops::scale(t, ops::sum(t, ops::swish(t, p)), b));
    });
    for (std::int64_t i = 0; i < 8; ++i) {
        CHECK(std::abs(gfg.at(i) - (a * gf.at(i) + b * gg.at(i))) < 1e-10);
    }
}

TEST_CASE("forward ops are pure") {
    Rng rng(12);
    Tensor a = random_tensor({4, 6}, rng);
    Tensor b = random_tensor({6, 5}, rng);
    CHECK(bitwise_equal(ops::matmul(nullptr, a, b), ops::matmul(nullptr, a, b)));
    Tensor x = random_tensor({1, 4, 6, 6}, rng);
    Tensor k = random_tensor({3, 4, 3, 3}, rng);
    CHECK(bitwise_equal(ops::conv2d(nullptr, x, k, 1, 1), ops::conv2d(nullptr, x, k, 1, 1)));
    CHECK(bitwise_equal(ops::swish(nullptr, x), ops::swish(nullptr, x)));
}

TEST_CASE("every op passes randomized finite-difference checks") {
    Rng rng(13);
    const double tol = 1e-4;
    for (int trial = 0; trial < 20; ++trial) {
        {  // soft_threshold, resampled away from the kink
            Tensor v = random_tensor({24}, rng, -2.0, 2.0);
            Tensor th = random_tensor({24}, rng, 0.0, 1.0);
            for (std::int64_t i = 0; i < 24; ++i) {
                while (std::abs(std::abs(v.at(i)) - th.at(i)) < 1e-3) v.set(i, rng.uniform(-2.0, 2.0));
            }
            v.set_requires_grad(true);
            th.set_requires_grad(true);
            std::vector<Tensor> in{v, th};
            CHECK(check_op_gradients(
                      in, [](Tape* t, std::vector<Tensor>& i) { return ops::soft_threshold(t, i[0], i[1]); }, rng) <
                  tol);
        }
        {  // elementwise and reductions
            Tensor a = random_tensor({12}, rng).set_requires_grad(true);
            Tensor b = random_tensor({12}, rng).set_requires_grad(true);
            std::vector<Tensor> in{a, b};
            CHECK(check_op_gradients(in,
                                     [](Tape* t, std::vector<Tensor>& i) {
                                         Tensor s = ops::sub(t, ops::add(t, i[0], i[1]), ops::mul(t, i[0], i[1]));
                                         return ops::scale(t, s, 0.7);
                                     },
                                     rng) < tol);
            Tensor c = random_tensor({12}, rng).set_requires_grad(true);
            for (std::int64_t i = 0; i < 12; ++i) {
                while (std::abs(c.at(i)) < 1e-3) c.set(i, rng.uniform(-1.0, 1.0));
            }
            std::vector<Tensor> in2{c};
            CHECK(check_op_gradients(in2,
                                     [](Tape* t, std::vector<Tensor>& i) {
                                         Tensor l1 = ops::l1_norm(t, i[0]);
                                         return ops::add(t, l1, ops::sum_squares(t, i[0]));
                                     },
                                     rng) < tol);
        }
        {  // layout ops, upsampling, softmax, bias
            Tensor x = random_tensor({2, 3, 2, 2}, rng).set_requires_grad(true);
            Tensor bias = random_tensor({3}, rng).set_requires_grad(true);
            std::vector<Tensor> in{x, bias};
            CHECK(check_op_gradients(in,
                                     [](Tape* t, std::vector<Tensor>& i) {
                                         Tensor y = ops::add_channel_bias(t, i[0], i[1]);
                                         y = ops::upsample_nearest2x(t, y);
                                         y = ops::permute(t, y, {0, 2, 3, 1});
                                         y = ops::reshape(t, y, {2 * 4 * 4, 3});
                                         return ops::softmax_lastdim(t, y);
                                     },
                                     rng) < tol);
        }
        {  // batched matmul
            Tensor a = random_tensor({3, 4, 5}, rng).set_requires_grad(true);
            Tensor b = random_tensor({3, 5, 2}, rng).set_requires_grad(true);
            std::vector<Tensor> in{a, b};
            CHECK(check_op_gradients(
                      in, [](Tape* t, std::vector<Tensor>& i) { return ops::bmm(t, i[0], i[1]); }, rng) < tol);
            Tensor c = random_tensor({2, 5, 4}, rng).set_requires_grad(true);
            Tensor d = random_tensor({2, 5, 3}, rng).set_requires_grad(true);
            std::vector<Tensor> in2{c, d};
            CHECK(check_op_gradients(
                      in2, [](Tape* t, std::vector<Tensor>& i) { return ops::bmm(t, i[0], i[1], true, false); },
                      rng) < tol);
        }
    }
}

TEST_CASE("tensor invariants") {
    Tensor t = Tensor::zeros({2, 3}, Dtype::F32);
    CHECK(t.numel() == 6);
    CHECK(t.impl()->data.size() == 6 * sizeof(float));
    CHECK_THROWS_AS(Tensor::from_values({2}, {1.0, 2.0, 3.0}, Dtype::F64), DimensionError);
    CHECK_THROWS_AS(t.item(), DimensionError);

    // f32/f64 mixing is rejected
    Tensor a32 = Tensor::zeros({2, 2}, Dtype::F32);
    Tensor a64 = Tensor::zeros({2, 2}, Dtype::F64);
    CHECK_THROWS_AS(ops::add(nullptr, a32, a64), DimensionError);
}
