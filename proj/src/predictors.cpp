#include "tgcrf/predictors.hpp"

#include "tgcrf/common.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace tgcrf {

namespace {

constexpr const char* kStage = "unstructured-predictors";

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& X) {
    Eigen::MatrixXd Xi(X.rows(), X.cols() + 1);
    Xi.leftCols(X.cols()) = X;
    Xi.col(X.cols()).setOnes();
    return Xi;
}

Eigen::VectorXd with_intercept(const Eigen::VectorXd& x) {
    Eigen::VectorXd xi(x.size() + 1);
    xi.head(x.size()) = x;
    xi(x.size()) = 1.0;
    return xi;
}

}  // namespace

LinearArModel fit_linear_ar(const LagFeatureMatrix& features) {
    const int n = static_cast<int>(features.rows());
    const int k = features.lag();
    if (n <= k + 1) {
        throw TgcrfError(kStage, "insufficient samples: N=" + std::to_string(n) +
                                     " must exceed k+1=" + std::to_string(k + 1));
    }

    const Eigen::MatrixXd Xi = with_intercept(features.X);
    const Eigen::MatrixXd gram = Xi.transpose() * Xi;

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(gram);
    const double smax = svd.singularValues()(0);
    const double smin = svd.singularValues()(svd.singularValues().size() - 1);
    const double condition = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
    if (!(condition < kMaxConditionNumber)) {
        throw TgcrfError(kStage, "ill-conditioned X'X: condition estimate " + std::to_string(condition));
    }

    LinearArModel model;
    model.n_train = n;
    model.n_features = k;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    model.w = ldlt.solve(Xi.transpose() * features.y);
    model.xtx_inv = ldlt.solve(Eigen::MatrixXd::Identity(k + 1, k + 1));
    model.xtx_inv = 0.5 * (model.xtx_inv + model.xtx_inv.transpose().eval());

    const Eigen::VectorXd residuals = features.y - Xi * model.w;
    model.sigma_y2 = std::max(0.0, residuals.squaredNorm() / static_cast<double>(n - k - 1));
    return model;
}

PredictiveDistribution predict_linear(const LinearArModel& model, const Eigen::VectorXd& x_star) {
    if (x_star.size() != model.n_features) {
        throw TgcrfError(kStage, "feature dimension mismatch: got " + std::to_string(x_star.size()) +
                                     ", model expects " + std::to_string(model.n_features));
    }
    const Eigen::VectorXd xi = with_intercept(x_star);
    PredictiveDistribution out;
    out.mean = model.w.dot(xi);
    out.variance = floored_variance(model.sigma_y2 * (1.0 + xi.dot(model.xtx_inv * xi)));
    return out;
}

double gaussian_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double amplitude,
                       const Eigen::VectorXd& length_scales) {
    double quad = 0.0;
    for (long d = 0; d < a.size(); ++d) {
        const double diff = (a(d) - b(d)) / length_scales(d);
        quad += diff * diff;
    }
    return amplitude * std::exp(-0.5 * quad);
}

namespace {

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& X, double amplitude,
                              const Eigen::VectorXd& length_scales) {
    const long n = X.rows();
    Eigen::MatrixXd K(n, n);
    for (long i = 0; i < n; ++i) {
        K(i, i) = amplitude;
        for (long j = i + 1; j < n; ++j) {
            K(i, j) = gaussian_kernel(X.row(i), X.row(j), amplitude, length_scales);
            K(j, i) = K(i, j);
        }
    }
    return K;
}

struct CholResult {
    Eigen::LLT<Eigen::MatrixXd> llt;
    double jitter = 0.0;
    bool ok = false;
};

CholResult factor_with_jitter(const Eigen::MatrixXd& C) {
    CholResult result;
    result.llt.compute(C);
    if (result.llt.info() == Eigen::Success) {
        result.ok = true;
        return result;
    }
    for (double jitter = 1e-10; jitter <= 1e-6; jitter *= 10.0) {
        Eigen::MatrixXd Cj = C;
        Cj.diagonal().array() += jitter;
        result.llt.compute(Cj);
        if (result.llt.info() == Eigen::Success) {
            result.jitter = jitter;
            result.ok = true;
            return result;
        }
    }
    return result;
}

double log_marginal_likelihood(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::VectorXd& y) {
    const Eigen::VectorXd alpha = llt.solve(y);
    double log_det = 0.0;
    for (long i = 0; i < y.size(); ++i) log_det += 2.0 * std::log(llt.matrixLLT()(i, i));
    constexpr double kLog2Pi = 1.8378770664093453;
    return -0.5 * y.dot(alpha) - 0.5 * log_det - 0.5 * static_cast<double>(y.size()) * kLog2Pi;
}

std::vector<double> log_grid(double lo, double hi, int n) {
    std::vector<double> grid(n);
    const double step = (std::log(hi) - std::log(lo)) / static_cast<double>(n - 1);
    for (int i = 0; i < n; ++i) grid[i] = std::exp(std::log(lo) + step * i);
    return grid;
}

}  // namespace

GpModel fit_gp(const LagFeatureMatrix& features, const GpConfig& config) {
    const long n = features.rows();
    if (n < 2) throw TgcrfError(kStage, "insufficient samples: GP needs at least 2, got " + std::to_string(n));
    const long d = features.lag();

    GpModel model;
    model.X_train = features.X;
    model.y_mean = features.y.mean();
    model.y_centered = features.y.array() - model.y_mean;

    const double var_y = std::max(model.y_centered.squaredNorm() / static_cast<double>(n), 1e-8);

    // Median pairwise distance anchors the length-scale grid.
    std::vector<double> dists;
    dists.reserve(n * (n - 1) / 2);
    for (long i = 0; i < n; ++i) {
        for (long j = i + 1; j < n; ++j) {
            const double dist = (features.X.row(i) - features.X.row(j)).norm();
            if (dist > 0.0) dists.push_back(dist);
        }
    }
    double median_dist = 1.0;
    if (!dists.empty()) {
        std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
        median_dist = dists[dists.size() / 2];
    }

    const auto noise_grid = log_grid(1e-4 * var_y, var_y, config.grid_size);
    const auto amplitude_grid = log_grid(5e-2 * var_y, 2e1 * var_y, config.grid_size);
    const auto scale_grid = log_grid(1e-1 * median_dist, 1e1 * median_dist, config.grid_size);

    double best_lml = -std::numeric_limits<double>::infinity();
    for (double noise : noise_grid) {
        for (double amplitude : amplitude_grid) {
            for (double scale : scale_grid) {
                const Eigen::VectorXd ls = Eigen::VectorXd::Constant(d, scale);
                Eigen::MatrixXd C = kernel_matrix(features.X, amplitude, ls);
                C.diagonal().array() += noise;
                const CholResult chol = factor_with_jitter(C);
                if (!chol.ok) continue;
                const double lml = log_marginal_likelihood(chol.llt, model.y_centered);
                if (lml > best_lml) {
                    best_lml = lml;
                    model.sigma_y2 = noise;
                    model.kernel_amplitude = amplitude;
                    model.length_scales = ls;
                }
            }
        }
    }
    if (!std::isfinite(best_lml)) {
        throw TgcrfError(kStage, "GP covariance factorization failed for every grid point");
    }

    if (config.per_dimension_lengthscales && d > 1) {
        for (long dim = 0; dim < d; ++dim) {
            for (double scale : scale_grid) {
                Eigen::VectorXd ls = model.length_scales;
                ls(dim) = scale;
                Eigen::MatrixXd C = kernel_matrix(features.X, model.kernel_amplitude, ls);
                C.diagonal().array() += model.sigma_y2;
                const CholResult chol = factor_with_jitter(C);
                if (!chol.ok) continue;
                const double lml = log_marginal_likelihood(chol.llt, model.y_centered);
                if (lml > best_lml) {
                    best_lml = lml;
                    model.length_scales = ls;
                }
            }
        }
    }

    Eigen::MatrixXd C = kernel_matrix(features.X, model.kernel_amplitude, model.length_scales);
    C.diagonal().array() += model.sigma_y2;
    CholResult chol = factor_with_jitter(C);
    if (!chol.ok) throw TgcrfError(kStage, "GP covariance factorization failed after jitter escalation");
    model.C_chol = std::move(chol.llt);
    model.jitter = chol.jitter;
    model.weights = model.C_chol.solve(model.y_centered);
    return model;
}

PredictiveDistribution predict_gp(const GpModel& model, const Eigen::VectorXd& x_star) {
    if (x_star.size() != model.X_train.cols()) {
        throw TgcrfError(kStage, "feature dimension mismatch: got " + std::to_string(x_star.size()) +
                                     ", model expects " + std::to_string(model.X_train.cols()));
    }
    const long n = model.X_train.rows();
    Eigen::VectorXd k_star(n);
    for (long i = 0; i < n; ++i) {
        k_star(i) = gaussian_kernel(model.X_train.row(i), x_star, model.kernel_amplitude,
                                    model.length_scales);
    }
    PredictiveDistribution out;
    out.mean = k_star.dot(model.weights) + model.y_mean;
    const double c_star = model.prior_variance();
    const double variance = c_star - k_star.dot(model.C_chol.solve(k_star));
    out.variance = floored_variance(std::min(variance, c_star));
    return out;
}

std::string family_name(PredictorFamily family) {
    return family == PredictorFamily::Linear ? "LR" : "GP";
}

PredictiveDistribution predict(const FittedPredictor& predictor, const Eigen::VectorXd& x_star) {
    if (std::holds_alternative<LinearArModel>(predictor.model)) {
        return predict_linear(std::get<LinearArModel>(predictor.model), x_star);
    }
    return predict_gp(std::get<GpModel>(predictor.model), x_star);
}

std::size_t select_by_validation_rmse(const std::vector<CandidateScore>& scores) {
    if (scores.empty()) throw TgcrfError(kStage, "no candidates to select from");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i].rmse < scores[best].rmse ||
            (scores[i].rmse == scores[best].rmse && scores[i].lag < scores[best].lag)) {
            best = i;
        }
    }
    return best;
}

std::vector<std::size_t> select_best_predictor(const std::vector<FittedPredictor>& candidates,
                                               const std::vector<LagFeatureMatrix>& validation) {
    if (candidates.empty()) throw TgcrfError(kStage, "no candidates");
    if (candidates.size() != validation.size()) {
        throw TgcrfError(kStage, "one validation matrix per candidate required");
    }

    std::map<PredictorFamily, std::vector<std::pair<std::size_t, CandidateScore>>> per_family;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (validation[i].rows() == 0) throw TgcrfError(kStage, "empty validation window");
        double sse = 0.0;
        for (long r = 0; r < validation[i].rows(); ++r) {
            const double err = predict(candidates[i], validation[i].X.row(r)).mean - validation[i].y(r);
            sse += err * err;
        }
        CandidateScore score;
        score.lag = candidates[i].lag;
        score.rmse = std::sqrt(sse / static_cast<double>(validation[i].rows()));
        per_family[candidates[i].family].emplace_back(i, score);
    }

    std::vector<std::size_t> chosen;
    for (const auto& [family, entries] : per_family) {
        std::vector<CandidateScore> scores;
        scores.reserve(entries.size());
        for (const auto& [idx, score] : entries) scores.push_back(score);
        chosen.push_back(entries[select_by_validation_rmse(scores)].first);
    }
    return chosen;
}

}  // namespace tgcrf
