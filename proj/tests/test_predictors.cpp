#include "tgcrf/predictors.hpp"

#include "tgcrf/common.hpp"
#include "tgcrf/rng.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>

using namespace tgcrf;

namespace {

LagFeatureMatrix make_features(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    LagFeatureMatrix f;
    f.X = X;
    f.y = y;
    f.node_index.assign(X.rows(), 0);
    f.timestep_index.resize(X.rows());
    for (long r = 0; r < X.rows(); ++r) f.timestep_index[r] = r;
    return f;
}

// Textbook OLS by explicit normal equations, kept independent of the library
// fitting path.
struct OlsOracle {
    Eigen::VectorXd w;
    double sigma2;

    OlsOracle(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
        Eigen::MatrixXd Xi(X.rows(), X.cols() + 1);
        Xi.leftCols(X.cols()) = X;
        Xi.col(X.cols()).setOnes();
        w = (Xi.transpose() * Xi).fullPivLu().solve(Xi.transpose() * y);
        const Eigen::VectorXd r = y - Xi * w;
        sigma2 = r.squaredNorm() / static_cast<double>(X.rows() - X.cols() - 1);
    }
};

}  // namespace

TEST_CASE("noiseless linear data is fit exactly") {
    Eigen::MatrixXd X(5, 1);
    X << 0, 1, 2, 3, 4;
    Eigen::VectorXd y = 2.0 * X.col(0).array() + 1.0;
    const auto model = fit_linear_ar(make_features(X, y));
    CHECK(model.w(0) == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(model.w(1) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(model.sigma_y2 == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("noise variance estimate matches the OLS oracle") {
    Rng rng(42);
    const int n = 1000;
    Eigen::MatrixXd X(n, 1);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = rng.uniform(0.0, 4.0);
        y(i) = X(i, 0) + rng.normal(0.0, 0.1);
    }
    const auto model = fit_linear_ar(make_features(X, y));
    CHECK(model.sigma_y2 > 0.008);
    CHECK(model.sigma_y2 < 0.012);

    const OlsOracle oracle(X, y);
    CHECK(model.sigma_y2 == doctest::Approx(oracle.sigma2).epsilon(1e-10));
    CHECK(model.w(0) == doctest::Approx(oracle.w(0)).epsilon(1e-10));
    CHECK(model.w(1) == doctest::Approx(oracle.w(1)).epsilon(1e-10));
}

TEST_CASE("too few samples for the N-k-1 denominator") {
    Eigen::MatrixXd X(2, 2);
    X << 1, 2, 3, 4;
    Eigen::VectorXd y(2);
    y << 1, 2;
    CHECK_THROWS_WITH_AS(fit_linear_ar(make_features(X, y)), doctest::Contains("insufficient samples"),
                         TgcrfError);
}

TEST_CASE("collinear features are rejected with a condition estimate") {
    Eigen::MatrixXd X(6, 2);
    for (int i = 0; i < 6; ++i) {
        X(i, 0) = i;
        X(i, 1) = 2.0 * i;  // exactly collinear
    }
    Eigen::VectorXd y = X.col(0);
    CHECK_THROWS_WITH_AS(fit_linear_ar(make_features(X, y)), doctest::Contains("ill-conditioned"),
                         TgcrfError);
}

TEST_CASE("linear predictive variance") {
    Rng rng(7);
    const int n = 60;
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = rng.normal(1.0, 1.0);
        X(i, 1) = rng.normal(-2.0, 2.0);
        y(i) = 0.5 * X(i, 0) - 0.25 * X(i, 1) + rng.normal(0.0, 0.3);
    }
    const auto model = fit_linear_ar(make_features(X, y));

    SUBCASE("zero-noise model floors the variance") {
        auto zero = model;
        zero.sigma_y2 = 0.0;
        const auto pred = predict_linear(zero, X.row(0));
        CHECK(pred.variance == kVarianceFloor);
    }

    SUBCASE("variance always exceeds the residual variance") {
        for (int i = 0; i < n; ++i) {
            CHECK(predict_linear(model, X.row(i)).variance >= model.sigma_y2);
        }
    }

    SUBCASE("variance is smallest at the centroid, largest far outside the hull") {
        // Direct formula scan over candidate points.
        const Eigen::VectorXd centroid = X.colwise().mean();
        const double centroid_var = predict_linear(model, centroid).variance;
        double max_in_sample = 0.0;
        for (int i = 0; i < n; ++i) {
            const Eigen::VectorXd x = X.row(i);
            Eigen::VectorXd xi(3);
            xi << x(0), x(1), 1.0;
            const double direct = model.sigma_y2 * (1.0 + xi.dot(model.xtx_inv * xi));
            const double via_api = predict_linear(model, x).variance;
            CHECK(via_api == doctest::Approx(direct).epsilon(1e-12));
            CHECK(centroid_var <= via_api + 1e-12);
            max_in_sample = std::max(max_in_sample, via_api);
        }
        Eigen::VectorXd far(2);
        far << 50.0, -80.0;
        CHECK(predict_linear(model, far).variance > max_in_sample);
    }

    SUBCASE("dimension mismatch is rejected") {
        CHECK_THROWS_AS(predict_linear(model, Eigen::VectorXd::Ones(3)), TgcrfError);
    }
}

namespace {

// Dense GP oracle: no factorization reuse, plain inverse.
void dense_gp_posterior(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double noise,
                        double amplitude, const Eigen::VectorXd& ls, const Eigen::VectorXd& x_star,
                        double& mean, double& variance) {
    const long n = X.rows();
    Eigen::MatrixXd C(n, n);
    Eigen::VectorXd k_star(n);
    for (long i = 0; i < n; ++i) {
        for (long j = 0; j < n; ++j) {
            C(i, j) = gaussian_kernel(X.row(i), X.row(j), amplitude, ls);
        }
        C(i, i) += noise;
        k_star(i) = gaussian_kernel(X.row(i), x_star, amplitude, ls);
    }
    const Eigen::MatrixXd C_inv = C.inverse();
    const double y_mean = y.mean();
    const Eigen::VectorXd yc = y.array() - y_mean;
    mean = k_star.dot(C_inv * yc) + y_mean;
    variance = amplitude + noise - k_star.dot(C_inv * k_star);
}

double dense_lml(const Eigen::MatrixXd& X, const Eigen::VectorXd& yc, double noise,
                 double amplitude, double scale) {
    const long n = X.rows();
    const Eigen::VectorXd ls = Eigen::VectorXd::Constant(X.cols(), scale);
    Eigen::MatrixXd C(n, n);
    for (long i = 0; i < n; ++i) {
        for (long j = 0; j < n; ++j) C(i, j) = gaussian_kernel(X.row(i), X.row(j), amplitude, ls);
        C(i, i) += noise;
    }
    const double det = C.determinant();
    if (!(det > 0.0)) return -std::numeric_limits<double>::infinity();
    return -0.5 * yc.dot(C.inverse() * yc) - 0.5 * std::log(det) -
           0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
}

std::vector<double> oracle_log_grid(double lo, double hi, int n) {
    std::vector<double> grid(n);
    for (int i = 0; i < n; ++i) {
        grid[i] = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (n - 1));
    }
    return grid;
}

}  // namespace

TEST_CASE("GP on a smooth sine recovers a grid-optimal length scale") {
    Rng rng(11);
    const int n = 50;
    Eigen::MatrixXd X(n, 1);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = rng.uniform(0.0, 6.0);
        y(i) = std::sin(X(i, 0)) + rng.normal(0.0, 0.05);
    }
    const auto model = fit_gp(make_features(X, y));

    // Exhaustive oracle over the same grid construction, dense algebra only.
    const Eigen::VectorXd yc = y.array() - y.mean();
    const double var_y = std::max(yc.squaredNorm() / n, 1e-8);
    std::vector<double> dists;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double d = std::abs(X(i, 0) - X(j, 0));
            if (d > 0) dists.push_back(d);
        }
    }
    std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
    const double med = dists[dists.size() / 2];

    double best_lml = -std::numeric_limits<double>::infinity();
    double best_scale = 0.0;
    for (double noise : oracle_log_grid(1e-4 * var_y, var_y, 8)) {
        for (double amplitude : oracle_log_grid(5e-2 * var_y, 2e1 * var_y, 8)) {
            for (double scale : oracle_log_grid(1e-1 * med, 1e1 * med, 8)) {
                const double lml = dense_lml(X, yc, noise, amplitude, scale);
                if (lml > best_lml) {
                    best_lml = lml;
                    best_scale = scale;
                }
            }
        }
    }
    CHECK(model.length_scales(0) <= 3.0 * best_scale);
    CHECK(model.length_scales(0) >= best_scale / 3.0);
}

TEST_CASE("duplicate inputs with different targets still factor") {
    Eigen::MatrixXd X(4, 1);
    X << 1, 1, 2, 3;
    Eigen::VectorXd y(4);
    y << 0.0, 1.0, 0.5, 0.2;  // contradictory targets at x=1
    const auto model = fit_gp(make_features(X, y));
    CHECK(model.sigma_y2 > 0.0);
    CHECK(std::isfinite(predict_gp(model, Eigen::VectorXd::Ones(1)).mean));
}

TEST_CASE("GP with one sample is rejected") {
    Eigen::MatrixXd X(1, 1);
    X << 1;
    Eigen::VectorXd y(1);
    y << 2;
    CHECK_THROWS_WITH_AS(fit_gp(make_features(X, y)), doctest::Contains("insufficient samples"),
                         TgcrfError);
}

TEST_CASE("GP posterior matches the dense oracle on a 5-point dataset") {
    Rng rng(3);
    Eigen::MatrixXd X(5, 2);
    Eigen::VectorXd y(5);
    for (int i = 0; i < 5; ++i) {
        X(i, 0) = rng.normal();
        X(i, 1) = rng.normal();
        y(i) = X(i, 0) - 0.5 * X(i, 1) + rng.normal(0.0, 0.1);
    }
    const auto model = fit_gp(make_features(X, y));
    CHECK(model.jitter == 0.0);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd x_star(2);
        x_star << rng.normal(), rng.normal();
        double mean = 0.0, variance = 0.0;
        dense_gp_posterior(X, y, model.sigma_y2, model.kernel_amplitude, model.length_scales,
                           x_star, mean, variance);
        const auto pred = predict_gp(model, x_star);
        CHECK(pred.mean == doctest::Approx(mean).epsilon(1e-10));
        CHECK(pred.variance == doctest::Approx(variance).epsilon(1e-10));
    }
}

TEST_CASE("GP interpolation and prior-reversion limits") {
    Eigen::MatrixXd X(3, 1);
    X << 0, 1, 2;
    Eigen::VectorXd y(3);
    y << 0.5, 1.0, 0.3;

    GpModel model;
    model.X_train = X;
    model.y_mean = 0.0;
    model.y_centered = y;
    model.kernel_amplitude = 1.0;
    model.length_scales = Eigen::VectorXd::Ones(1);
    model.sigma_y2 = 1e-12;  // near the noiseless limit
    Eigen::MatrixXd C(3, 3);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            C(i, j) = gaussian_kernel(X.row(i), X.row(j), 1.0, model.length_scales);
        }
        C(i, i) += model.sigma_y2;
    }
    model.C_chol.compute(C);
    model.weights = model.C_chol.solve(model.y_centered);

    SUBCASE("at a training point the mean interpolates and variance collapses") {
        const auto pred = predict_gp(model, X.row(1));
        CHECK(pred.mean == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(pred.variance <= 1e-6);
    }
    SUBCASE("far away the prior takes over") {
        Eigen::VectorXd far(1);
        far << 100.0;
        const auto pred = predict_gp(model, far);
        CHECK(pred.mean == doctest::Approx(0.0).epsilon(1e-10));
        CHECK(pred.variance == doctest::Approx(model.prior_variance()).epsilon(1e-10));
    }
    SUBCASE("posterior variance never exceeds the prior variance") {
        Rng rng(17);
        for (int i = 0; i < 50; ++i) {
            Eigen::VectorXd x(1);
            x << rng.uniform(-3.0, 5.0);
            CHECK(predict_gp(model, x).variance <= model.prior_variance() + 1e-12);
        }
    }
}

TEST_CASE("fits are deterministic") {
    Rng rng(19);
    Eigen::MatrixXd X(30, 1);
    Eigen::VectorXd y(30);
    for (int i = 0; i < 30; ++i) {
        X(i, 0) = rng.uniform(0.0, 3.0);
        y(i) = std::cos(X(i, 0)) + rng.normal(0.0, 0.1);
    }
    const auto features = make_features(X, y);
    const auto gp1 = fit_gp(features);
    const auto gp2 = fit_gp(features);
    CHECK(gp1.sigma_y2 == gp2.sigma_y2);
    CHECK(gp1.kernel_amplitude == gp2.kernel_amplitude);
    CHECK(gp1.length_scales(0) == gp2.length_scales(0));
    const auto lr1 = fit_linear_ar(features);
    const auto lr2 = fit_linear_ar(features);
    CHECK(lr1.w == lr2.w);
}

TEST_CASE("per-dimension length scales refine the shared pick") {
    Rng rng(23);
    Eigen::MatrixXd X(40, 2);
    Eigen::VectorXd y(40);
    for (int i = 0; i < 40; ++i) {
        X(i, 0) = rng.uniform(0.0, 5.0);
        X(i, 1) = rng.uniform(0.0, 5.0);
        y(i) = std::sin(X(i, 0)) + rng.normal(0.0, 0.05);  // second dim irrelevant
    }
    GpConfig config;
    config.per_dimension_lengthscales = true;
    const auto model = fit_gp(make_features(X, y), config);
    CHECK(model.length_scales.size() == 2);
    CHECK(model.length_scales(1) >= model.length_scales(0));
}

TEST_CASE("candidate selection by validation RMSE") {
    SUBCASE("reported per-lag errors pick the smallest") {
        const std::vector<CandidateScore> lr = {{1, 0.3168}, {2, 0.3296}, {3, 0.3536}};
        CHECK(select_by_validation_rmse(lr) == 0);
        const std::vector<CandidateScore> gp = {{1, 0.3098}, {2, 0.3129}};
        CHECK(select_by_validation_rmse(gp) == 0);
        const std::vector<CandidateScore> reordered = {{3, 0.3536}, {1, 0.3168}, {2, 0.3296}};
        CHECK(select_by_validation_rmse(reordered) == 1);
    }
    SUBCASE("ties break toward the smaller lag") {
        const std::vector<CandidateScore> tied = {{2, 0.25}, {1, 0.25}};
        CHECK(select_by_validation_rmse(tied) == 1);
    }
}

TEST_CASE("select_best_predictor picks per family on real candidates") {
    Rng rng(29);
    const int n = 12;
    Eigen::MatrixXd X1(n, 1), X2(n, 2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        const double x = rng.uniform(0.0, 2.0);
        X1(i, 0) = x;
        X2(i, 0) = x;
        X2(i, 1) = rng.normal();  // pure noise feature
        y(i) = 1.5 * x + rng.normal(0.0, 0.2);
    }
    const auto f1 = make_features(X1, y);
    const auto f2 = make_features(X2, y);

    std::vector<FittedPredictor> candidates;
    candidates.push_back({PredictorFamily::Linear, 1, fit_linear_ar(f1)});
    candidates.push_back({PredictorFamily::Linear, 2, fit_linear_ar(f2)});
    candidates.push_back({PredictorFamily::Gp, 1, fit_gp(f1)});

    // Fresh validation data from the same process.
    const int nv = 400;
    Eigen::MatrixXd V1(nv, 1), V2(nv, 2);
    Eigen::VectorXd vy(nv);
    for (int i = 0; i < nv; ++i) {
        const double x = rng.uniform(0.0, 2.0);
        V1(i, 0) = x;
        V2(i, 0) = x;
        V2(i, 1) = rng.normal();
        vy(i) = 1.5 * x + rng.normal(0.0, 0.2);
    }
    const auto chosen = select_best_predictor(
        candidates, {make_features(V1, vy), make_features(V2, vy), make_features(V1, vy)});
    REQUIRE(chosen.size() == 2);  // one per family
    CHECK(candidates[chosen[0]].family == PredictorFamily::Linear);
    CHECK(candidates[chosen[0]].lag == 1);
    CHECK(candidates[chosen[1]].family == PredictorFamily::Gp);

    CHECK_THROWS_WITH_AS(
        select_best_predictor(candidates, {make_features(V1, vy), make_features(V2, vy),
                                           LagFeatureMatrix{}}),
        doctest::Contains("empty validation"), TgcrfError);
}
