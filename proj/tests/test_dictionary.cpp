#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "scvae/dictionary.hpp"
#include "scvae/rng.hpp"
#include "testutil.hpp"

using namespace scvae;

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
    Eigen::MatrixXd m(t.dim(0), t.dim(1));
    for (std::int64_t i = 0; i < t.dim(0); ++i) {
        for (std::int64_t j = 0; j < t.dim(1); ++j) m(i, j) = t.at({i, j});
    }
    return m;
}

}  // namespace

TEST_CASE("paper-shape dictionary builds with non-square atom count") {
    Dictionary d = build_dct_dictionary(256, 512);
    CHECK(d.atoms.shape() == std::vector<std::int64_t>{256, 512});
    for (std::int64_t k = 0; k < 512; ++k) {
        double norm = 0.0;
        for (std::int64_t i = 0; i < 256; ++i) norm += d.atoms.at({i, k}) * d.atoms.at({i, k});
        CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-8);
    }
}

TEST_CASE("complete dictionary is orthonormal") {
    Dictionary d = build_dct_dictionary(16, 16);
    Eigen::MatrixXd gram = to_eigen(d.atoms).transpose() * to_eigen(d.atoms);
    for (int i = 0; i < 16; ++i) {
        for (int j = 0; j < 16; ++j) {
            CHECK(std::abs(gram(i, j) - (i == j ? 1.0 : 0.0)) < 1e-6);
        }
    }
}

TEST_CASE("overcomplete dictionary has unit diagonal and bounded coherence") {
    Dictionary d = build_dct_dictionary(16, 64);
    Eigen::MatrixXd gram = to_eigen(d.atoms).transpose() * to_eigen(d.atoms);
    for (int i = 0; i < 64; ++i) {
        CHECK(std::abs(gram(i, i) - 1.0) < 1e-8);
        for (int j = 0; j < 64; ++j) {
            if (i != j) CHECK(std::abs(gram(i, j)) < 1.0);
        }
    }
    // Gram symmetry
    for (int i = 0; i < 64; ++i) {
        for (int j = 0; j < 64; ++j) CHECK(std::abs(gram(i, j) - gram(j, i)) < 1e-10);
    }
}

TEST_CASE("invalid dictionary shapes are config errors") {
    CHECK_THROWS_AS(build_dct_dictionary(15, 64), ConfigError);
    CHECK_THROWS_AS(build_dct_dictionary(16, 9), ConfigError);
}

TEST_CASE("orthonormal completeness: D D^T x = x") {
    Dictionary d = build_dct_dictionary(25, 25);
    Rng rng(21);
    Eigen::MatrixXd D = to_eigen(d.atoms);
    for (int trial = 0; trial < 5; ++trial) {
        Eigen::VectorXd x(25);
        for (int i = 0; i < 25; ++i) x(i) = rng.uniform(-2.0, 2.0);
        Eigen::VectorXd back = D * (D.transpose() * x);
        CHECK((back - x).cwiseAbs().maxCoeff() < 1e-5);
    }
}

TEST_CASE("dictionary construction is deterministic") {
    Dictionary a = build_dct_dictionary(16, 36);
    Dictionary b = build_dct_dictionary(16, 36);
    CHECK(bitwise_equal(a.atoms, b.atoms));
    CHECK(a.lipschitz_bound == b.lipschitz_bound);
}

TEST_CASE("lipschitz estimate on known spectra") {
    Dictionary ortho = build_dct_dictionary(16, 16);
    const double l_ortho = estimate_lipschitz(ortho);
    CHECK(l_ortho >= 1.0);
    CHECK(l_ortho <= 1.011);

    // Unnormalized test-only path: D = 2I has Gram eigenvalue 4.
    Tensor two_eye = Tensor::zeros({8, 8}, Dtype::F64);
    for (int i = 0; i < 8; ++i) two_eye.set({i, i}, 2.0);
    Dictionary scaled = Dictionary::from_atoms(two_eye, /*normalize=*/false);
    CHECK(scaled.lipschitz_bound >= 4.0);
    CHECK(scaled.lipschitz_bound <= 4.05);
}

TEST_CASE("power iteration matches a dense eigensolver") {
    Dictionary d = build_dct_dictionary(16, 64);
    Eigen::MatrixXd gram = to_eigen(d.atoms).transpose() * to_eigen(d.atoms);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    const double lambda_max = solver.eigenvalues().maxCoeff();
    const double estimated = estimate_lipschitz(d) / 1.01;  // undo the safety factor
    CHECK(std::abs(estimated - lambda_max) < 1e-6);
    // The stored bound really is an upper bound.
    CHECK(d.lipschitz_bound >= lambda_max);
}

TEST_CASE("lipschitz bound invariant holds for from_atoms dictionaries") {
    Rng rng(22);
    Tensor atoms = testutil::random_tensor({12, 30}, rng);
    Dictionary d = Dictionary::from_atoms(atoms);
    for (std::int64_t k = 0; k < 30; ++k) {
        double norm = 0.0;
        for (std::int64_t i = 0; i < 12; ++i) norm += d.atoms.at({i, k}) * d.atoms.at({i, k});
        CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-8);
    }
    Eigen::MatrixXd gram = to_eigen(d.atoms).transpose() * to_eigen(d.atoms);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    CHECK(d.lipschitz_bound >= solver.eigenvalues().maxCoeff() - 1e-8);
}
