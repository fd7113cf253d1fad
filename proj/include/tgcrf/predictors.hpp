#pragma once

#include "tgcrf/temporal_graph.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <string>
#include <variant>
#include <vector>

namespace tgcrf {

/// A single prediction: mean and strictly positive variance.
struct PredictiveDistribution {
    double mean = 0.0;
    double variance = 0.0;
};

/// Least-squares autoregression with an appended intercept column. Residual
/// variance uses the N-k-1 denominator (k lag features, intercept excluded).
struct LinearArModel {
    Eigen::VectorXd w;        // k+1 coefficients, intercept last
    double sigma_y2 = 0.0;
    Eigen::MatrixXd xtx_inv;  // (k+1)x(k+1), intercept included
    int n_train = 0;
    int n_features = 0;
};

LinearArModel fit_linear_ar(const LagFeatureMatrix& features);
PredictiveDistribution predict_linear(const LinearArModel& model, const Eigen::VectorXd& x_star);

struct GpConfig {
    int grid_size = 8;                     // per hyperparameter, log-spaced
    bool per_dimension_lengthscales = false;  // one refinement pass per dimension
};

/// GP regression with a squared-exponential kernel, zero mean after centering,
/// hyperparameters picked by grid search on the log marginal likelihood.
struct GpModel {
    Eigen::MatrixXd X_train;
    Eigen::VectorXd y_centered;
    double y_mean = 0.0;
    double sigma_y2 = 0.0;        // observation noise
    double kernel_amplitude = 0.0;
    Eigen::VectorXd length_scales;  // per input dimension
    Eigen::LLT<Eigen::MatrixXd> C_chol;  // C = K + sigma_y2 I (+ jitter if needed)
    Eigen::VectorXd weights;             // C^{-1} y_centered
    double jitter = 0.0;

    double prior_variance() const { return kernel_amplitude + sigma_y2; }
};

GpModel fit_gp(const LagFeatureMatrix& features, const GpConfig& config = {});
PredictiveDistribution predict_gp(const GpModel& model, const Eigen::VectorXd& x_star);

double gaussian_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double amplitude,
                       const Eigen::VectorXd& length_scales);

enum class PredictorFamily { Linear, Gp };

std::string family_name(PredictorFamily family);

/// One fitted base predictor together with the lag it was built from.
struct FittedPredictor {
    PredictorFamily family = PredictorFamily::Linear;
    int lag = 1;
    std::variant<LinearArModel, GpModel> model;
};

PredictiveDistribution predict(const FittedPredictor& predictor, const Eigen::VectorXd& x_star);

/// argmin RMSE; ties broken by smaller lag.
struct CandidateScore {
    int lag = 0;
    double rmse = 0.0;
};
std::size_t select_by_validation_rmse(const std::vector<CandidateScore>& scores);

/// Per family, the candidate with the lowest validation RMSE. `validation`
/// must hold one matrix per candidate, built at that candidate's lag.
std::vector<std::size_t> select_best_predictor(const std::vector<FittedPredictor>& candidates,
                                               const std::vector<LagFeatureMatrix>& validation);

}  // namespace tgcrf
