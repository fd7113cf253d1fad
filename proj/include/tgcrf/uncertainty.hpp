#pragma once

#include "tgcrf/gcrf.hpp"
#include "tgcrf/predictors.hpp"
#include "tgcrf/rng.hpp"

#include <Eigen/Core>

#include <vector>

namespace tgcrf {

/// Coverage of the 95% confidence interval, floored so a badly calibrated
/// predictor is penalized but never deleted outright.
double ci_from_errors(const Eigen::VectorXd& truths, const Eigen::VectorXd& means,
                      const Eigen::VectorXd& variances, double ci_floor = 0.01);

/// ci index of a fitted base predictor over a validation window.
double compute_ci_index(const FittedPredictor& predictor, const LagFeatureMatrix& validation,
                        double ci_floor = 0.01);

/// uGCRF: association weights rescaled by each base predictor's predictive
/// variance, with one log-coefficient per predictor and prediction horizon and
/// a fixed coverage quality index: alpha = e^{u_{k,p}} ci_{k,p} / sigma^2.
struct UgcrfParams {
    int n_predictors = 0;
    int n_horizons = 0;
    int n_similarities = 0;
    bool shared_u = false;   // ablation: one u_k for every horizon
    Eigen::MatrixXd u;       // K x P (K x 1 when shared_u)
    Eigen::VectorXd v;       // L
    Eigen::MatrixXd ci;      // K x P, entries in (0,1]

    static UgcrfParams init(int n_predictors, int n_horizons, int n_similarities,
                            bool shared_u = false);

    double u_at(int k, int horizon) const;  // horizon is 1-based
};

double ugcrf_alpha(double u, double ci, double sigma2);

/// Effective K x N alpha matrix for a snapshot at `horizon` with base
/// predictor variances sigma2 (K x N).
Eigen::MatrixXd ugcrf_alpha_matrix(const UgcrfParams& params, const Eigen::MatrixXd& sigma2,
                                   int horizon);

struct UgcrfSnapshot {
    GcrfSnapshot base;
    Eigen::MatrixXd sigma2;  // K x N
    int horizon = 1;         // 1-based
};

struct UgcrfTrainResult {
    UgcrfParams params;
    double log_likelihood = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Maximizes the summed likelihood over (u, v); ci values stay fixed.
UgcrfTrainResult train_ugcrf(const std::vector<UgcrfSnapshot>& snapshots, UgcrfParams init,
                             const GcrfTrainConfig& config = {});

/// Scalar-output feed-forward network with one tanh hidden layer. Width 0
/// degenerates to a linear map.
class SmallMlp {
public:
    SmallMlp() = default;
    SmallMlp(int input_dim, int hidden_width);

    static long parameter_count(int input_dim, int hidden_width);

    void init_uniform(Rng& rng, double range = 0.1);

    double forward(const Eigen::VectorXd& x) const;
    /// Output plus its gradient with respect to the packed parameters.
    double forward_with_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& d_theta) const;

    int input_dim() const { return input_dim_; }
    int hidden_width() const { return hidden_width_; }

    Eigen::VectorXd theta;  // [W1 row-major, b1, w2, b2] or [w, b] when width 0

private:
    int input_dim_ = 0;
    int hidden_width_ = 0;
};

/// Standardization applied to network inputs; fit on the training snapshots.
struct FeatureScaling {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;

    Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
    static FeatureScaling fit(const std::vector<Eigen::MatrixXd>& feature_blocks);
};

/// ufGCRF: alpha_k(x) = e^{u_k(theta_k, x)} with u_k a SmallMlp of the node's
/// input features.
struct UfgcrfParams {
    std::vector<SmallMlp> networks;  // one per predictor
    Eigen::VectorXd v;               // L
    FeatureScaling scaling;
    int n_similarities = 0;

    static UfgcrfParams init(int n_predictors, int n_similarities, int input_dim,
                             int hidden_width, std::uint64_t seed);

    Eigen::MatrixXd alpha_matrix(const Eigen::MatrixXd& features) const;  // features: N x D
};

struct UfgcrfSnapshot {
    GcrfSnapshot base;
    Eigen::MatrixXd features;  // N x D, raw (scaling is applied internally)
};

struct GradientAscentConfig {
    double step_size = 1e-2;
    int max_epochs = 2000;
    int divergence_patience = 10;  // consecutive worsening epochs before halving the step
    int max_step_halvings = 5;
    double plateau_tolerance = 1e-12;
    int plateau_patience = 25;
};

struct UfgcrfTrainResult {
    UfgcrfParams params;
    double log_likelihood = 0.0;
    int epochs = 0;
    int step_halvings = 0;
    bool converged = false;
};

/// Full-batch gradient ascent on the summed likelihood, backpropagating
/// through alpha_i = e^{u(theta, x_i)}. Deterministic given the init.
UfgcrfTrainResult train_ufgcrf(const std::vector<UfgcrfSnapshot>& snapshots, UfgcrfParams init,
                               const GradientAscentConfig& config = {});

/// Likelihood gradient with respect to every network parameter and v, packed
/// as [theta_0, ..., theta_{K-1}, v]; used by training and the gradient checks.
Eigen::VectorXd ufgcrf_likelihood_gradient(const UfgcrfParams& params,
                                           const std::vector<UfgcrfSnapshot>& snapshots,
                                           double* likelihood_out = nullptr);

std::vector<PredictiveDistribution> predict_structured(const GcrfParams& params,
                                                       const GcrfSnapshot& snapshot);
std::vector<PredictiveDistribution> predict_structured(const UgcrfParams& params,
                                                       const UgcrfSnapshot& snapshot);
std::vector<PredictiveDistribution> predict_structured(const UfgcrfParams& params,
                                                       const UfgcrfSnapshot& snapshot);

}  // namespace tgcrf
