#include "tgcrf/gcrf.hpp"

#include "tgcrf/common.hpp"
#include "tgcrf/rng.hpp"
#include "tgcrf/synthetic.hpp"

#include <doctest.h>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>

using namespace tgcrf;

namespace {

Eigen::MatrixXd random_similarity(Rng& rng, int n, double density = 0.5) {
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (rng.uniform() < density) {
                const double s = rng.uniform(0.1, 1.0);
                S(i, j) = s;
                S(j, i) = s;
            }
        }
    }
    return S;
}

GcrfSnapshot random_snapshot(Rng& rng, int n, int k, int l, double density = 0.5) {
    GcrfSnapshot snap;
    snap.R.resize(k, n);
    for (int p = 0; p < k; ++p) {
        for (int i = 0; i < n; ++i) snap.R(p, i) = rng.normal();
    }
    for (int s = 0; s < l; ++s) snap.S.push_back(random_similarity(rng, n, density));
    snap.y.resize(n);
    for (int i = 0; i < n; ++i) snap.y(i) = rng.normal();
    return snap;
}

GcrfParams random_params(Rng& rng, AlphaMode mode, int k, int l, int n) {
    GcrfParams params = mode == AlphaMode::Shared ? GcrfParams::shared(k, l)
                                                  : GcrfParams::per_node(k, l, n);
    for (long i = 0; i < params.u.size(); ++i) params.u(i) = rng.uniform(-1.0, 1.0);
    for (long i = 0; i < params.v.size(); ++i) params.v(i) = rng.uniform(-1.0, 1.0);
    return params;
}

}  // namespace

TEST_CASE("precision assembly on hand-checked cases") {
    SUBCASE("single node, single predictor, no edges") {
        const Eigen::MatrixXd alpha = Eigen::MatrixXd::Ones(1, 1);
        const auto Q = assemble_precision(alpha, Eigen::VectorXd{}, {});
        CHECK(Eigen::MatrixXd(Q)(0, 0) == 2.0);
    }
    SUBCASE("two nodes, one unit edge") {
        const Eigen::MatrixXd alpha = Eigen::MatrixXd::Ones(1, 2);
        Eigen::MatrixXd S(2, 2);
        S << 0, 1, 1, 0;
        const Eigen::MatrixXd Q = assemble_precision(alpha, Eigen::VectorXd::Ones(1), {S});
        Eigen::MatrixXd expected(2, 2);
        expected << 4, -2, -2, 4;
        CHECK((Q - expected).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("vanishing beta decouples the nodes") {
        Rng rng(1);
        const Eigen::MatrixXd alpha = Eigen::MatrixXd::Constant(2, 4, 0.7);
        const Eigen::MatrixXd S = random_similarity(rng, 4, 1.0);
        const Eigen::MatrixXd Q =
            assemble_precision(alpha, Eigen::VectorXd::Constant(1, 1e-12), {S});
        Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(4, 4);
        expected.diagonal().setConstant(2.0 * 2 * 0.7);
        CHECK((Q - expected).cwiseAbs().maxCoeff() < 1e-10);
    }
    SUBCASE("beta part has zero row sums") {
        Rng rng(2);
        const int n = 7;
        const Eigen::MatrixXd alpha = Eigen::MatrixXd::Constant(1, n, 0.4);
        const Eigen::MatrixXd S = random_similarity(rng, n);
        const Eigen::MatrixXd Q = assemble_precision(alpha, Eigen::VectorXd::Constant(1, 1.7), {S});
        const Eigen::VectorXd row_sums = Q * Eigen::VectorXd::Ones(n);
        for (int i = 0; i < n; ++i) CHECK(row_sums(i) == doctest::Approx(2.0 * 0.4).epsilon(1e-12));
    }
}

TEST_CASE("b assembly") {
    SUBCASE("single predictor") {
        const Eigen::MatrixXd alpha = Eigen::MatrixXd::Ones(1, 3);
        const Eigen::MatrixXd R = Eigen::MatrixXd::Constant(1, 3, 0.5);
        const Eigen::VectorXd b = assemble_b(alpha, R);
        for (int i = 0; i < 3; ++i) CHECK(b(i) == 1.0);
    }
    SUBCASE("two predictors with different weights") {
        Eigen::MatrixXd alpha(2, 1), R(2, 1);
        alpha << 1, 3;
        R << 0.2, 0.6;
        CHECK(assemble_b(alpha, R)(0) == doctest::Approx(4.0));
    }
    SUBCASE("zero alpha gives zero b") {
        const Eigen::MatrixXd alpha = Eigen::MatrixXd::Zero(2, 3);
        const Eigen::MatrixXd R = Eigen::MatrixXd::Random(2, 3);
        CHECK(assemble_b(alpha, R).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("posterior on hand-checked cases") {
    SUBCASE("scalar") {
        Eigen::SparseMatrix<double> Q(1, 1);
        Q.insert(0, 0) = 2.0;
        const auto post = posterior(Q, Eigen::VectorXd::Ones(1));
        CHECK(post.mu(0) == doctest::Approx(0.5));
        CHECK(post.var_diag(0) == doctest::Approx(0.5));
        CHECK(post.log_det_q == doctest::Approx(std::log(2.0)));
    }
    SUBCASE("symmetric two-node fixed point") {
        const Eigen::MatrixXd alpha = Eigen::MatrixXd::Ones(1, 2);
        Eigen::MatrixXd S(2, 2);
        S << 0, 1, 1, 0;
        const auto Q = assemble_precision(alpha, Eigen::VectorXd::Ones(1), {S});
        Eigen::VectorXd b(2);
        b << 4, 4;
        const auto post = posterior(Q, b);
        CHECK(post.mu(0) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(post.mu(1) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("beta=0 degenerates to the precision-weighted predictor average") {
        Rng rng(3);
        const int n = 5, k = 3;
        Eigen::MatrixXd alpha(k, n), R(k, n);
        for (int p = 0; p < k; ++p) {
            for (int i = 0; i < n; ++i) {
                alpha(p, i) = rng.uniform(0.2, 2.0);
                R(p, i) = rng.normal();
            }
        }
        const auto Q = assemble_precision(alpha, Eigen::VectorXd{}, {});
        const auto post = posterior(Q, assemble_b(alpha, R));
        for (int i = 0; i < n; ++i) {
            const double expected =
                (alpha.col(i).array() * R.col(i).array()).sum() / alpha.col(i).sum();
            CHECK(post.mu(i) == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("posterior matches the dense-inverse oracle") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_index(19));
        const int k = 1 + static_cast<int>(rng.uniform_index(3));
        const int l = 1 + static_cast<int>(rng.uniform_index(2));
        const auto snap = random_snapshot(rng, n, k, l);
        const auto params = random_params(rng, AlphaMode::PerNode, k, l, n);

        const Eigen::MatrixXd alpha = params.alpha(n);
        const Eigen::VectorXd beta = params.beta();
        const Eigen::MatrixXd Q_dense =
            Eigen::MatrixXd(assemble_precision(alpha, beta, snap.S));
        const Eigen::VectorXd b = assemble_b(alpha, snap.R);
        const Eigen::MatrixXd Q_inv = Q_dense.inverse();
        const Eigen::VectorXd mu_oracle = Q_inv * b;

        const auto post = posterior(params, snap);
        CHECK((post.mu - mu_oracle).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((post.var_diag - Q_inv.diagonal()).cwiseAbs().maxCoeff() < 1e-10);
        CHECK(post.log_det_q ==
              doctest::Approx(std::log(Q_dense.determinant())).epsilon(1e-9));
    }
}

TEST_CASE("precision is positive definite across random draws") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_index(19));
        const int k = 1 + static_cast<int>(rng.uniform_index(3));
        const int l = 1 + static_cast<int>(rng.uniform_index(2));
        const auto snap = random_snapshot(rng, n, k, l);
        const auto params = random_params(rng, trial % 2 ? AlphaMode::Shared : AlphaMode::PerNode,
                                          k, l, n);
        const Eigen::MatrixXd Q =
            Eigen::MatrixXd(assemble_precision(params.alpha(n), params.beta(), snap.S));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Q);
        CHECK(eig.eigenvalues().minCoeff() > 0.0);
    }
}

TEST_CASE("log-likelihood") {
    SUBCASE("scalar case matches the Gaussian density") {
        GcrfSnapshot snap;
        snap.R = Eigen::MatrixXd::Constant(1, 1, 0.3);
        snap.y = Eigen::VectorXd::Constant(1, 0.9);
        GcrfParams params = GcrfParams::shared(1, 0);
        params.u(0) = 0.4;

        const double alpha = std::exp(0.4);
        const double q = 2.0 * alpha;
        const double mu = 0.3;  // b/q = 2 alpha R / 2 alpha
        const double expected = -0.5 * q * (0.9 - mu) * (0.9 - mu) + 0.5 * std::log(q) -
                                0.5 * std::log(2.0 * M_PI);
        CHECK(log_likelihood(params, snap) == doctest::Approx(expected).epsilon(1e-12));
    }
    SUBCASE("y at the posterior mean leaves only the normalization terms") {
        Rng rng(6);
        auto snap = random_snapshot(rng, 6, 2, 1);
        const auto params = random_params(rng, AlphaMode::Shared, 2, 1, 6);
        const auto post = posterior(params, snap);
        snap.y = post.mu;
        const double expected = 0.5 * post.log_det_q - 0.5 * 6 * std::log(2.0 * M_PI);
        CHECK(log_likelihood(params, snap) == doctest::Approx(expected).epsilon(1e-10));

        // Moving y away from mu along any direction strictly decreases it.
        Eigen::VectorXd direction(6);
        for (int i = 0; i < 6; ++i) direction(i) = rng.normal();
        double previous = log_likelihood(params, snap);
        for (double step : {0.1, 0.3, 0.9}) {
            auto moved = snap;
            moved.y = post.mu + step * direction;
            const double value = log_likelihood(params, moved);
            CHECK(value < previous);
            previous = value;
        }
    }
}

TEST_CASE("analytic gradient matches central finite differences") {
    Rng rng(7);
    const int n = 6, k = 2, l = 1;
    const auto snap = random_snapshot(rng, n, k, l);

    for (AlphaMode mode : {AlphaMode::Shared, AlphaMode::PerNode}) {
        auto params = random_params(rng, mode, k, l, n);
        const Eigen::VectorXd grad = likelihood_gradient(params, snap);
        const double step = 1e-6;
        auto eval = [&](const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
            GcrfParams p = params;
            p.u = u;
            p.v = v;
            return log_likelihood(p, snap);
        };
        for (long i = 0; i < params.u.size(); ++i) {
            Eigen::VectorXd up = params.u, down = params.u;
            up(i) += step;
            down(i) -= step;
            const double fd = (eval(up, params.v) - eval(down, params.v)) / (2.0 * step);
            CHECK(std::abs(grad(i) - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
        for (long i = 0; i < params.v.size(); ++i) {
            Eigen::VectorXd up = params.v, down = params.v;
            up(i) += step;
            down(i) -= step;
            const double fd = (eval(params.u, up) - eval(params.u, down)) / (2.0 * step);
            CHECK(std::abs(grad(params.u.size() + i) - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("gradient structure cases") {
    SUBCASE("fully disconnected similarity has zero beta gradient") {
        Rng rng(8);
        auto snap = random_snapshot(rng, 5, 1, 1);
        snap.S[0].setZero();
        const auto params = random_params(rng, AlphaMode::Shared, 1, 1, 5);
        const Eigen::VectorXd grad = likelihood_gradient(params, snap);
        CHECK(grad(grad.size() - 1) == 0.0);
    }
    SUBCASE("symmetric two-node instance has identical per-node alpha gradients") {
        GcrfSnapshot snap;
        snap.R = Eigen::MatrixXd::Constant(1, 2, 0.4);
        Eigen::MatrixXd S(2, 2);
        S << 0, 0.8, 0.8, 0;
        snap.S = {S};
        snap.y = Eigen::VectorXd::Constant(2, 0.7);
        GcrfParams params = GcrfParams::per_node(1, 1, 2);
        const Eigen::VectorXd grad = likelihood_gradient(params, snap);
        CHECK(grad(0) == doctest::Approx(grad(1)).epsilon(1e-12));
    }
}

TEST_CASE("likelihood is concave along random alpha-beta segments") {
    Rng rng(9);
    const int n = 8, k = 2, l = 1;
    const auto snap = random_snapshot(rng, n, k, l);

    auto value_at = [&](const Eigen::VectorXd& alpha_flat, double beta) {
        Eigen::MatrixXd alpha(k, n);
        for (int p = 0; p < k; ++p) alpha.row(p).setConstant(alpha_flat(p));
        const auto g =
            likelihood_gradient_alpha_beta(alpha, Eigen::VectorXd::Constant(1, beta), snap);
        return g.value;
    };

    int checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        Eigen::VectorXd a0(k), a1(k);
        for (int p = 0; p < k; ++p) {
            a0(p) = rng.uniform(0.05, 3.0);
            a1(p) = rng.uniform(0.05, 3.0);
        }
        const double b0 = rng.uniform(0.05, 3.0);
        const double b1 = rng.uniform(0.05, 3.0);
        const double mid = value_at(0.5 * (a0 + a1), 0.5 * (b0 + b1));
        const double ends = 0.5 * (value_at(a0, b0) + value_at(a1, b1));
        CHECK(mid >= ends - 1e-9);
        ++checked;
    }
    CHECK(checked == 1000);
}

TEST_CASE("scaling alpha and beta by c rescales variances by 1/c and keeps mu") {
    Rng rng(10);
    const auto snap = random_snapshot(rng, 7, 2, 1);
    auto params = random_params(rng, AlphaMode::PerNode, 2, 1, 7);
    const auto base = posterior(params, snap);
    const double c = 3.7;
    auto scaled = params;
    scaled.u.array() += std::log(c);
    scaled.v.array() += std::log(c);
    const auto post = posterior(scaled, snap);
    CHECK((post.mu - base.mu).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((post.var_diag * c - base.var_diag).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("beta to zero with one predictor reduces to the unstructured model") {
    Rng rng(11);
    GcrfSnapshot snap = random_snapshot(rng, 9, 1, 1, 1.0);
    GcrfParams params = GcrfParams::shared(1, 1);
    params.v(0) = std::log(1e-12);
    const auto post = posterior(params, snap);
    CHECK((post.mu - snap.R.row(0).transpose()).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("training recovers planted parameters") {
    GcrfProcessConfig process;
    process.n_nodes = 10;
    process.alpha_true = 1.0;
    process.beta_true = 2.0;
    process.n_snapshots = 120;
    process.seed = 902;
    const auto similarity = ring_similarity(process.n_nodes, 4, process.seed);
    const auto snapshots = generate_gcrf_exact(process, similarity);

    const auto result = train_gcrf(snapshots, GcrfParams::shared(1, 1));
    const double alpha_hat = std::exp(result.params.u(0));
    const double beta_hat = std::exp(result.params.v(0));
    CHECK(alpha_hat == doctest::Approx(1.0).epsilon(0.15));
    CHECK(beta_hat == doctest::Approx(2.0).epsilon(0.15));
    CHECK(result.converged);
}

TEST_CASE("a perfect predictor dominates a pure-noise predictor") {
    Rng rng(12);
    const int n = 12;
    std::vector<GcrfSnapshot> snapshots;
    for (int s = 0; s < 30; ++s) {
        GcrfSnapshot snap;
        snap.y.resize(n);
        for (int i = 0; i < n; ++i) snap.y(i) = rng.normal();
        snap.R.resize(2, n);
        snap.R.row(0) = snap.y.transpose();  // perfect
        for (int i = 0; i < n; ++i) snap.R(1, i) = rng.normal();  // noise
        snap.S = {random_similarity(rng, n)};
        snapshots.push_back(std::move(snap));
    }
    GcrfTrainConfig config;
    config.max_iterations = 200;
    const auto result = train_gcrf(snapshots, GcrfParams::shared(2, 1), config);
    const double ratio = std::exp(result.params.u(0) - result.params.u(1));
    CHECK(ratio > 10.0);
}

TEST_CASE("single snapshot with tiny beta matches the diagonal Gaussian MLE") {
    Rng rng(13);
    const int n = 40;
    GcrfSnapshot snap;
    snap.R.resize(1, n);
    snap.y.resize(n);
    for (int i = 0; i < n; ++i) {
        snap.R(0, i) = rng.normal();
        snap.y(i) = snap.R(0, i) + rng.normal(0.0, 0.5);
    }
    snap.S = {Eigen::MatrixXd::Zero(n, n)};  // no edges: beta has no effect

    const auto result = train_gcrf({snap}, GcrfParams::shared(1, 1));
    const double mean_sq_residual = (snap.y - snap.R.row(0).transpose()).squaredNorm() / n;
    CHECK(std::exp(result.params.u(0)) ==
          doctest::Approx(1.0 / (2.0 * mean_sq_residual)).epsilon(1e-3));
}

TEST_CASE("training is deterministic") {
    Rng rng(14);
    std::vector<GcrfSnapshot> snapshots;
    for (int s = 0; s < 5; ++s) snapshots.push_back(random_snapshot(rng, 6, 2, 1));
    const auto a = train_gcrf(snapshots, GcrfParams::per_node(2, 1, 6));
    const auto b = train_gcrf(snapshots, GcrfParams::per_node(2, 1, 6));
    CHECK(a.params.u == b.params.u);
    CHECK(a.params.v == b.params.v);
    CHECK(a.log_likelihood == b.log_likelihood);
}
