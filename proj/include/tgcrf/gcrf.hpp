#pragma once

#include "tgcrf/optim.hpp"
#include "tgcrf/similarity.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <vector>

namespace tgcrf {

enum class AlphaMode { Shared, PerNode };

/// GCRF parameters in the unconstrained log domain: alpha_k = e^{u_k} and
/// beta_l = e^{v_l}, so both stay positive and the precision matrix stays
/// positive definite for any finite (u, v).
struct GcrfParams {
    AlphaMode mode = AlphaMode::Shared;
    int n_predictors = 0;
    int n_similarities = 0;
    int n_nodes = 0;  // used by PerNode mode
    Eigen::VectorXd u;  // K (shared) or K*N (per-node, predictor-major)
    Eigen::VectorXd v;  // L

    static GcrfParams shared(int n_predictors, int n_similarities);
    static GcrfParams per_node(int n_predictors, int n_similarities, int n_nodes);

    /// Effective K x N alpha matrix.
    Eigen::MatrixXd alpha(int n_nodes) const;
    Eigen::VectorXd beta() const;

    long parameter_count() const { return u.size() + v.size(); }
};

/// Inputs for one target timestep: K unstructured predictions per node, L
/// similarity matrices, and (for training) the observed targets.
struct GcrfSnapshot {
    Eigen::MatrixXd R;                // K x N
    std::vector<Eigen::MatrixXd> S;   // L matrices, N x N symmetric
    Eigen::VectorXd y;                // empty unless training

    long n_predictors() const { return R.rows(); }
    long n_nodes() const { return R.cols(); }
    long n_similarities() const { return static_cast<long>(S.size()); }
};

GcrfSnapshot make_snapshot(Eigen::MatrixXd R, std::vector<SimilarityMatrix> similarities,
                           Eigen::VectorXd y = {});

struct GcrfPosterior {
    Eigen::VectorXd mu;
    Eigen::VectorXd var_diag;  // diagonal of Q^{-1}
    double log_det_q = 0.0;
    bool ridged = false;  // diagonal ridge was added to rescue the factorization
};

/// Q_ii = 2 sum_k alpha_{k,i} + 2 sum_l beta_l sum_j S^l_ij, and
/// Q_ij = -2 sum_l beta_l S^l_ij off the diagonal. The beta part is a graph
/// Laplacian, so Q is positive definite whenever all alpha, beta > 0.
Eigen::SparseMatrix<double> assemble_precision(const Eigen::MatrixXd& alpha,
                                               const Eigen::VectorXd& beta,
                                               const std::vector<Eigen::MatrixXd>& S);

/// b_i = 2 sum_k alpha_{k,i} R_{k,i}.
Eigen::VectorXd assemble_b(const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& R);

/// Solves Q mu = b by sparse Cholesky and extracts the marginal variances
/// diag(Q^{-1}) and log det Q. A tiny ridge is added once if a pivot falls
/// under 1e-12; persistent failure raises an error with the minimum pivot.
GcrfPosterior posterior(const Eigen::SparseMatrix<double>& Q, const Eigen::VectorXd& b);

GcrfPosterior posterior(const GcrfParams& params, const GcrfSnapshot& snapshot);

/// Conditional log-likelihood of snapshot.y:
///   -1/2 (y-mu)' Q (y-mu) + 1/2 log det Q - N/2 log 2 pi.
double log_likelihood(const GcrfParams& params, const GcrfSnapshot& snapshot);

/// Likelihood value plus gradients in the (alpha, beta) domain; the (u, v)
/// chain rule is a multiplication by alpha resp. beta.
struct AlphaBetaGradient {
    double value = 0.0;
    Eigen::MatrixXd d_alpha;  // K x N
    Eigen::VectorXd d_beta;   // L
};

AlphaBetaGradient likelihood_gradient_alpha_beta(const Eigen::MatrixXd& alpha,
                                                 const Eigen::VectorXd& beta,
                                                 const GcrfSnapshot& snapshot);

/// Gradient of log_likelihood with respect to (u, v), packed like params.
Eigen::VectorXd likelihood_gradient(const GcrfParams& params, const GcrfSnapshot& snapshot);

struct GcrfTrainConfig {
    int max_iterations = 500;
    double gradient_tolerance = 1e-6;
};

struct GcrfTrainResult {
    GcrfParams params;
    double log_likelihood = 0.0;  // summed over snapshots
    int iterations = 0;
    bool converged = false;  // false: best-so-far params after hitting the cap
};

/// Maximizes the summed conditional log-likelihood over training snapshots by
/// L-BFGS in the (u, v) domain. Deterministic given init and data.
GcrfTrainResult train_gcrf(const std::vector<GcrfSnapshot>& snapshots, GcrfParams init,
                           const GcrfTrainConfig& config = {});

}  // namespace tgcrf
