#include "tgcrf/gcrf.hpp"

#include "tgcrf/common.hpp"

#include <Eigen/SparseCholesky>

#include <cmath>
#include <limits>
#include <utility>

namespace tgcrf {

namespace {

constexpr const char* kStage = "gcrf-core";
constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kMinPivot = 1e-12;
constexpr double kRidge = 1e-10;

void check_dimensions(const Eigen::MatrixXd& alpha, const Eigen::VectorXd& beta,
                      const GcrfSnapshot& snapshot) {
    if (alpha.rows() != snapshot.n_predictors() || alpha.cols() != snapshot.n_nodes()) {
        throw TgcrfError(kStage, "alpha shape does not match snapshot R");
    }
    if (beta.size() != snapshot.n_similarities()) {
        throw TgcrfError(kStage, "beta length does not match snapshot similarity count");
    }
    for (const auto& S : snapshot.S) {
        if (S.rows() != snapshot.n_nodes() || S.cols() != snapshot.n_nodes()) {
            throw TgcrfError(kStage, "similarity matrix size does not match snapshot");
        }
    }
}

// Sparse LDL' factorization of Q with the ridge rescue applied at most once.
struct FactoredPrecision {
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    double log_det = 0.0;
    bool ridged = false;

    explicit FactoredPrecision(const Eigen::SparseMatrix<double>& Q) {
        for (long k = 0; k < Q.outerSize(); ++k) {
            for (Eigen::SparseMatrix<double>::InnerIterator it(Q, k); it; ++it) {
                if (!std::isfinite(it.value())) {
                    throw TgcrfError(kStage, "precision matrix has non-finite entries");
                }
            }
        }
        ldlt.compute(Q);
        if (!pivot_ok()) {
            Eigen::SparseMatrix<double> ridged_q = Q;
            Eigen::SparseMatrix<double> identity(Q.rows(), Q.cols());
            identity.setIdentity();
            ridged_q += kRidge * identity;
            ldlt.compute(ridged_q);
            ridged = true;
            if (!pivot_ok()) {
                throw TgcrfError(kStage, "precision factorization failed; min pivot " +
                                             std::to_string(pivot_min()));
            }
        }
        log_det = ldlt.vectorD().array().log().sum();
    }

    double pivot_min() const {
        return ldlt.info() == Eigen::Success ? ldlt.vectorD().minCoeff() : -1.0;
    }

    bool pivot_ok() const {
        const double p = pivot_min();
        return ldlt.info() == Eigen::Success && std::isfinite(p) && p >= kMinPivot;
    }

    Eigen::MatrixXd inverse(long n) const {
        return ldlt.solve(Eigen::MatrixXd::Identity(n, n));
    }
};

}  // namespace

GcrfParams GcrfParams::shared(int n_predictors, int n_similarities) {
    GcrfParams params;
    params.mode = AlphaMode::Shared;
    params.n_predictors = n_predictors;
    params.n_similarities = n_similarities;
    params.u = Eigen::VectorXd::Zero(n_predictors);
    params.v = Eigen::VectorXd::Zero(n_similarities);
    return params;
}

GcrfParams GcrfParams::per_node(int n_predictors, int n_similarities, int n_nodes) {
    GcrfParams params;
    params.mode = AlphaMode::PerNode;
    params.n_predictors = n_predictors;
    params.n_similarities = n_similarities;
    params.n_nodes = n_nodes;
    params.u = Eigen::VectorXd::Zero(static_cast<long>(n_predictors) * n_nodes);
    params.v = Eigen::VectorXd::Zero(n_similarities);
    return params;
}

Eigen::MatrixXd GcrfParams::alpha(int n_nodes_requested) const {
    Eigen::MatrixXd alpha(n_predictors, n_nodes_requested);
    if (mode == AlphaMode::Shared) {
        for (int k = 0; k < n_predictors; ++k) alpha.row(k).setConstant(std::exp(u(k)));
    } else {
        if (n_nodes_requested != n_nodes) {
            throw TgcrfError(kStage, "per-node parameters sized for " + std::to_string(n_nodes) +
                                         " nodes, snapshot has " + std::to_string(n_nodes_requested));
        }
        for (int k = 0; k < n_predictors; ++k) {
            for (int i = 0; i < n_nodes; ++i) {
                alpha(k, i) = std::exp(u(static_cast<long>(k) * n_nodes + i));
            }
        }
    }
    return alpha;
}

Eigen::VectorXd GcrfParams::beta() const { return v.array().exp(); }

GcrfSnapshot make_snapshot(Eigen::MatrixXd R, std::vector<SimilarityMatrix> similarities,
                           Eigen::VectorXd y) {
    GcrfSnapshot snapshot;
    snapshot.R = std::move(R);
    for (auto& sim : similarities) {
        if ((sim.values - sim.values.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
            throw TgcrfError(kStage, "similarity matrix is not symmetric");
        }
        sim.values.diagonal().setZero();
        snapshot.S.push_back(std::move(sim.values));
    }
    snapshot.y = std::move(y);
    if (snapshot.y.size() > 0 && snapshot.y.size() != snapshot.n_nodes()) {
        throw TgcrfError(kStage, "target vector length does not match node count");
    }
    return snapshot;
}

Eigen::SparseMatrix<double> assemble_precision(const Eigen::MatrixXd& alpha,
                                               const Eigen::VectorXd& beta,
                                               const std::vector<Eigen::MatrixXd>& S) {
    const long n = alpha.cols();
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::VectorXd diagonal = 2.0 * alpha.colwise().sum().transpose();

    for (std::size_t l = 0; l < S.size(); ++l) {
        const double b = beta(static_cast<long>(l));
        for (long i = 0; i < n; ++i) {
            for (long j = i + 1; j < n; ++j) {
                const double s = S[l](i, j);
                if (s <= 0.0) continue;
                triplets.emplace_back(i, j, -2.0 * b * s);
                triplets.emplace_back(j, i, -2.0 * b * s);
                diagonal(i) += 2.0 * b * s;
                diagonal(j) += 2.0 * b * s;
            }
        }
    }
    for (long i = 0; i < n; ++i) triplets.emplace_back(i, i, diagonal(i));

    Eigen::SparseMatrix<double> Q(n, n);
    Q.setFromTriplets(triplets.begin(), triplets.end());
    return Q;
}

Eigen::VectorXd assemble_b(const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& R) {
    return 2.0 * (alpha.array() * R.array()).colwise().sum().transpose();
}

GcrfPosterior posterior(const Eigen::SparseMatrix<double>& Q, const Eigen::VectorXd& b) {
    const FactoredPrecision factor(Q);
    GcrfPosterior post;
    post.mu = factor.ldlt.solve(b);
    post.var_diag = factor.inverse(Q.rows()).diagonal();
    post.log_det_q = factor.log_det;
    post.ridged = factor.ridged;
    return post;
}

GcrfPosterior posterior(const GcrfParams& params, const GcrfSnapshot& snapshot) {
    const Eigen::MatrixXd alpha = params.alpha(static_cast<int>(snapshot.n_nodes()));
    const Eigen::VectorXd beta = params.beta();
    check_dimensions(alpha, beta, snapshot);
    return posterior(assemble_precision(alpha, beta, snapshot.S), assemble_b(alpha, snapshot.R));
}

double log_likelihood(const GcrfParams& params, const GcrfSnapshot& snapshot) {
    const Eigen::MatrixXd alpha = params.alpha(static_cast<int>(snapshot.n_nodes()));
    const Eigen::VectorXd beta = params.beta();
    check_dimensions(alpha, beta, snapshot);
    if (snapshot.y.size() == 0) throw TgcrfError(kStage, "log_likelihood requires observed targets");

    const Eigen::SparseMatrix<double> Q = assemble_precision(alpha, beta, snapshot.S);
    const FactoredPrecision factor(Q);
    const Eigen::VectorXd mu = factor.ldlt.solve(assemble_b(alpha, snapshot.R));
    const Eigen::VectorXd r = snapshot.y - mu;
    const double quadratic = r.dot(Q * r);
    const double n = static_cast<double>(snapshot.n_nodes());
    return -0.5 * quadratic + 0.5 * factor.log_det - 0.5 * n * kLog2Pi;
}

AlphaBetaGradient likelihood_gradient_alpha_beta(const Eigen::MatrixXd& alpha,
                                                 const Eigen::VectorXd& beta,
                                                 const GcrfSnapshot& snapshot) {
    check_dimensions(alpha, beta, snapshot);
    if (snapshot.y.size() == 0) throw TgcrfError(kStage, "gradient requires observed targets");

    const long n = snapshot.n_nodes();
    const long K = snapshot.n_predictors();
    const Eigen::SparseMatrix<double> Q = assemble_precision(alpha, beta, snapshot.S);
    const FactoredPrecision factor(Q);
    const Eigen::VectorXd mu = factor.ldlt.solve(assemble_b(alpha, snapshot.R));
    const Eigen::MatrixXd q_inv = factor.inverse(n);
    const Eigen::VectorXd r = snapshot.y - mu;

    AlphaBetaGradient grad;
    grad.value = -0.5 * r.dot(Q * r) + 0.5 * factor.log_det - 0.5 * static_cast<double>(n) * kLog2Pi;

    // d l / d alpha_{k,i} = -r_i^2 + 2 (R_{k,i} - mu_i) r_i + [Q^{-1}]_ii
    grad.d_alpha.resize(K, n);
    for (long i = 0; i < n; ++i) {
        const double base = -r(i) * r(i) + q_inv(i, i);
        for (long k = 0; k < K; ++k) {
            grad.d_alpha(k, i) = base + 2.0 * (snapshot.R(k, i) - mu(i)) * r(i);
        }
    }

    // d l / d beta_l over the edges of S_l:
    //   sum_{i<j} S_ij [ -(r_i-r_j)^2 - 2 (mu_i-mu_j)(r_i-r_j)
    //                    + Qinv_ii + Qinv_jj - 2 Qinv_ij ]
    grad.d_beta.resize(snapshot.n_similarities());
    for (long l = 0; l < snapshot.n_similarities(); ++l) {
        double acc = 0.0;
        const Eigen::MatrixXd& S = snapshot.S[l];
        for (long i = 0; i < n; ++i) {
            for (long j = i + 1; j < n; ++j) {
                const double s = S(i, j);
                if (s <= 0.0) continue;
                const double dr = r(i) - r(j);
                const double dmu = mu(i) - mu(j);
                acc += s * (-dr * dr - 2.0 * dmu * dr + q_inv(i, i) + q_inv(j, j) - 2.0 * q_inv(i, j));
            }
        }
        grad.d_beta(l) = acc;
    }
    return grad;
}

Eigen::VectorXd likelihood_gradient(const GcrfParams& params, const GcrfSnapshot& snapshot) {
    const Eigen::MatrixXd alpha = params.alpha(static_cast<int>(snapshot.n_nodes()));
    const Eigen::VectorXd beta = params.beta();
    const AlphaBetaGradient grad = likelihood_gradient_alpha_beta(alpha, beta, snapshot);

    Eigen::VectorXd packed(params.parameter_count());
    if (params.mode == AlphaMode::Shared) {
        for (int k = 0; k < params.n_predictors; ++k) {
            packed(k) = grad.d_alpha.row(k).sum() * alpha(k, 0);
        }
    } else {
        const long n = snapshot.n_nodes();
        for (int k = 0; k < params.n_predictors; ++k) {
            for (long i = 0; i < n; ++i) {
                packed(static_cast<long>(k) * n + i) = grad.d_alpha(k, i) * alpha(k, i);
            }
        }
    }
    for (int l = 0; l < params.n_similarities; ++l) {
        packed(params.u.size() + l) = grad.d_beta(l) * beta(l);
    }
    return packed;
}

GcrfTrainResult train_gcrf(const std::vector<GcrfSnapshot>& snapshots, GcrfParams init,
                           const GcrfTrainConfig& config) {
    if (snapshots.empty()) throw TgcrfError(kStage, "training requires at least one snapshot");
    for (const auto& snapshot : snapshots) {
        if (snapshot.y.size() == 0) throw TgcrfError(kStage, "training snapshot lacks targets");
    }

    GcrfParams params = std::move(init);
    Eigen::VectorXd x0(params.parameter_count());
    x0 << params.u, params.v;

    auto unpack = [&params](const Eigen::VectorXd& x) {
        GcrfParams p = params;
        p.u = x.head(params.u.size());
        p.v = x.tail(params.v.size());
        return p;
    };

    const ObjectiveFn objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
        const GcrfParams p = unpack(x);
        double value = 0.0;
        grad.setZero(x.size());
        // Extreme steps can overflow exp(u); an infinite objective makes the
        // line search back off instead of aborting the run.
        try {
            for (const auto& snapshot : snapshots) {
                const Eigen::MatrixXd alpha = p.alpha(static_cast<int>(snapshot.n_nodes()));
                const Eigen::VectorXd beta = p.beta();
                const AlphaBetaGradient g = likelihood_gradient_alpha_beta(alpha, beta, snapshot);
                value += g.value;
                if (p.mode == AlphaMode::Shared) {
                    for (int k = 0; k < p.n_predictors; ++k) {
                        grad(k) += g.d_alpha.row(k).sum() * alpha(k, 0);
                    }
                } else {
                    const long n = snapshot.n_nodes();
                    for (int k = 0; k < p.n_predictors; ++k) {
                        for (long i = 0; i < n; ++i) {
                            grad(static_cast<long>(k) * n + i) += g.d_alpha(k, i) * alpha(k, i);
                        }
                    }
                }
                for (int l = 0; l < p.n_similarities; ++l) {
                    grad(p.u.size() + l) += g.d_beta(l) * beta(l);
                }
            }
        } catch (const TgcrfError&) {
            grad.setZero();
            return std::numeric_limits<double>::infinity();
        }
        if (!std::isfinite(value)) {
            grad.setZero();
            return std::numeric_limits<double>::infinity();
        }
        grad = -grad;  // minimize the negative
        return -value;
    };

    LbfgsConfig lbfgs;
    lbfgs.max_iterations = config.max_iterations;
    lbfgs.gradient_tolerance = config.gradient_tolerance;
    const LbfgsResult opt = lbfgs_minimize(objective, x0, lbfgs);

    GcrfTrainResult result;
    result.params = unpack(opt.x);
    result.log_likelihood = -opt.fx;
    result.iterations = opt.iterations;
    result.converged = opt.converged;
    return result;
}

}  // namespace tgcrf
