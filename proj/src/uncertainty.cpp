#include "tgcrf/uncertainty.hpp"

#include "tgcrf/common.hpp"

#include <cmath>
#include <limits>

namespace tgcrf {

namespace {

constexpr const char* kStage = "uncertainty-ext";

}  // namespace

double ci_from_errors(const Eigen::VectorXd& truths, const Eigen::VectorXd& means,
                      const Eigen::VectorXd& variances, double ci_floor) {
    if (truths.size() == 0) throw TgcrfError(kStage, "empty validation window");
    if (truths.size() != means.size() || truths.size() != variances.size()) {
        throw TgcrfError(kStage, "validation vectors must have equal length");
    }
    long covered = 0;
    for (long i = 0; i < truths.size(); ++i) {
        if (std::abs(truths(i) - means(i)) <= 1.96 * std::sqrt(variances(i))) ++covered;
    }
    const double fraction = static_cast<double>(covered) / static_cast<double>(truths.size());
    return std::max(fraction, ci_floor);
}

double compute_ci_index(const FittedPredictor& predictor, const LagFeatureMatrix& validation,
                        double ci_floor) {
    if (validation.rows() == 0) throw TgcrfError(kStage, "empty validation window");
    Eigen::VectorXd means(validation.rows());
    Eigen::VectorXd variances(validation.rows());
    for (long r = 0; r < validation.rows(); ++r) {
        const PredictiveDistribution out = predict(predictor, validation.X.row(r));
        means(r) = out.mean;
        variances(r) = out.variance;
    }
    return ci_from_errors(validation.y, means, variances, ci_floor);
}

UgcrfParams UgcrfParams::init(int n_predictors, int n_horizons, int n_similarities, bool shared_u) {
    UgcrfParams params;
    params.n_predictors = n_predictors;
    params.n_horizons = n_horizons;
    params.n_similarities = n_similarities;
    params.shared_u = shared_u;
    params.u = Eigen::MatrixXd::Zero(n_predictors, shared_u ? 1 : n_horizons);
    params.v = Eigen::VectorXd::Zero(n_similarities);
    params.ci = Eigen::MatrixXd::Ones(n_predictors, n_horizons);
    return params;
}

double UgcrfParams::u_at(int k, int horizon) const {
    return u(k, shared_u ? 0 : horizon - 1);
}

double ugcrf_alpha(double u, double ci, double sigma2) {
    if (!(sigma2 >= kVarianceFloor)) {
        throw TgcrfError(kStage, "predictor variance below the variance floor");
    }
    return std::exp(u) * ci / sigma2;
}

Eigen::MatrixXd ugcrf_alpha_matrix(const UgcrfParams& params, const Eigen::MatrixXd& sigma2,
                                   int horizon) {
    if (horizon < 1 || horizon > params.n_horizons) {
        throw TgcrfError(kStage, "horizon " + std::to_string(horizon) + " outside 1.." +
                                     std::to_string(params.n_horizons));
    }
    if (sigma2.rows() != params.n_predictors) {
        throw TgcrfError(kStage, "sigma2 channel has wrong predictor count");
    }
    Eigen::MatrixXd alpha(sigma2.rows(), sigma2.cols());
    for (long k = 0; k < sigma2.rows(); ++k) {
        const double scale = std::exp(params.u_at(static_cast<int>(k), horizon)) *
                             params.ci(k, horizon - 1);
        for (long i = 0; i < sigma2.cols(); ++i) {
            if (!(sigma2(k, i) >= kVarianceFloor)) {
                throw TgcrfError(kStage, "predictor variance below the variance floor");
            }
            alpha(k, i) = scale / sigma2(k, i);
        }
    }
    return alpha;
}

UgcrfTrainResult train_ugcrf(const std::vector<UgcrfSnapshot>& snapshots, UgcrfParams init,
                             const GcrfTrainConfig& config) {
    if (snapshots.empty()) throw TgcrfError(kStage, "training requires at least one snapshot");
    for (const auto& snapshot : snapshots) {
        if (snapshot.sigma2.size() == 0) {
            throw TgcrfError(kStage, "snapshot is missing the predictor variance channel");
        }
        if (snapshot.base.y.size() == 0) throw TgcrfError(kStage, "training snapshot lacks targets");
        if (snapshot.horizon < 1 || snapshot.horizon > init.n_horizons) {
            throw TgcrfError(kStage, "snapshot horizon outside the configured range");
        }
    }

    UgcrfParams params = std::move(init);
    const long n_u = params.u.size();
    Eigen::VectorXd x0(n_u + params.v.size());
    x0 << Eigen::Map<const Eigen::VectorXd>(params.u.data(), n_u), params.v;

    auto unpack = [&params, n_u](const Eigen::VectorXd& x) {
        UgcrfParams p = params;
        p.u = Eigen::Map<const Eigen::MatrixXd>(x.data(), params.u.rows(), params.u.cols());
        p.v = x.tail(params.v.size());
        return p;
    };

    const ObjectiveFn objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
        const UgcrfParams p = unpack(x);
        const Eigen::VectorXd beta = p.v.array().exp();
        double value = 0.0;
        grad.setZero(x.size());
        Eigen::Map<Eigen::MatrixXd> grad_u(grad.data(), p.u.rows(), p.u.cols());
        try {
            for (const auto& snapshot : snapshots) {
                const Eigen::MatrixXd alpha = ugcrf_alpha_matrix(p, snapshot.sigma2, snapshot.horizon);
                const AlphaBetaGradient g = likelihood_gradient_alpha_beta(alpha, beta, snapshot.base);
                value += g.value;
                // d alpha / d u_{k,p} = alpha, so the chain rule contracts rows.
                const int col = p.shared_u ? 0 : snapshot.horizon - 1;
                for (long k = 0; k < alpha.rows(); ++k) {
                    grad_u(k, col) += (g.d_alpha.row(k).array() * alpha.row(k).array()).sum();
                }
                for (long l = 0; l < beta.size(); ++l) {
                    grad(n_u + l) += g.d_beta(l) * beta(l);
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
        grad = -grad;
        return -value;
    };

    LbfgsConfig lbfgs;
    lbfgs.max_iterations = config.max_iterations;
    lbfgs.gradient_tolerance = config.gradient_tolerance;
    const LbfgsResult opt = lbfgs_minimize(objective, x0, lbfgs);

    UgcrfTrainResult result;
    result.params = unpack(opt.x);
    result.log_likelihood = -opt.fx;
    result.iterations = opt.iterations;
    result.converged = opt.converged;
    return result;
}

SmallMlp::SmallMlp(int input_dim, int hidden_width)
    : theta(Eigen::VectorXd::Zero(parameter_count(input_dim, hidden_width))),
      input_dim_(input_dim),
      hidden_width_(hidden_width) {}

long SmallMlp::parameter_count(int input_dim, int hidden_width) {
    if (hidden_width == 0) return input_dim + 1;
    return static_cast<long>(hidden_width) * input_dim + hidden_width + hidden_width + 1;
}

void SmallMlp::init_uniform(Rng& rng, double range) {
    for (long i = 0; i < theta.size(); ++i) theta(i) = rng.uniform(-range, range);
}

double SmallMlp::forward(const Eigen::VectorXd& x) const {
    if (x.size() != input_dim_) throw TgcrfError(kStage, "network input dimension mismatch");
    if (hidden_width_ == 0) {
        return theta.head(input_dim_).dot(x) + theta(input_dim_);
    }
    const int d = input_dim_;
    const int h = hidden_width_;
    double out = theta(static_cast<long>(h) * d + 2 * h);  // b2
    for (int j = 0; j < h; ++j) {
        double pre = theta(static_cast<long>(h) * d + j);  // b1_j
        for (int c = 0; c < d; ++c) pre += theta(static_cast<long>(j) * d + c) * x(c);
        out += theta(static_cast<long>(h) * d + h + j) * std::tanh(pre);  // w2_j
    }
    return out;
}

double SmallMlp::forward_with_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& d_theta) const {
    if (x.size() != input_dim_) throw TgcrfError(kStage, "network input dimension mismatch");
    d_theta.setZero(theta.size());
    if (hidden_width_ == 0) {
        d_theta.head(input_dim_) = x;
        d_theta(input_dim_) = 1.0;
        return theta.head(input_dim_).dot(x) + theta(input_dim_);
    }
    const int d = input_dim_;
    const int h = hidden_width_;
    const long w2_offset = static_cast<long>(h) * d + h;
    double out = theta(w2_offset + h);  // b2
    d_theta(w2_offset + h) = 1.0;
    for (int j = 0; j < h; ++j) {
        double pre = theta(static_cast<long>(h) * d + j);
        for (int c = 0; c < d; ++c) pre += theta(static_cast<long>(j) * d + c) * x(c);
        const double act = std::tanh(pre);
        const double w2 = theta(w2_offset + j);
        out += w2 * act;
        d_theta(w2_offset + j) = act;
        const double back = w2 * (1.0 - act * act);
        d_theta(static_cast<long>(h) * d + j) = back;
        for (int c = 0; c < d; ++c) d_theta(static_cast<long>(j) * d + c) = back * x(c);
    }
    return out;
}

Eigen::VectorXd FeatureScaling::apply(const Eigen::VectorXd& x) const {
    if (mean.size() == 0) return x;
    return (x - mean).cwiseQuotient(scale);
}

FeatureScaling FeatureScaling::fit(const std::vector<Eigen::MatrixXd>& feature_blocks) {
    if (feature_blocks.empty()) throw TgcrfError(kStage, "no features to fit scaling on");
    const long d = feature_blocks.front().cols();
    long count = 0;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (const auto& block : feature_blocks) {
        for (long r = 0; r < block.rows(); ++r) mean += block.row(r).transpose();
        count += block.rows();
    }
    mean /= static_cast<double>(count);
    Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
    for (const auto& block : feature_blocks) {
        for (long r = 0; r < block.rows(); ++r) {
            var += (block.row(r).transpose() - mean).array().square().matrix();
        }
    }
    var /= static_cast<double>(count);
    FeatureScaling scaling;
    scaling.mean = mean;
    scaling.scale = var.array().sqrt().max(1e-12);
    return scaling;
}

UfgcrfParams UfgcrfParams::init(int n_predictors, int n_similarities, int input_dim,
                                int hidden_width, std::uint64_t seed) {
    UfgcrfParams params;
    params.n_similarities = n_similarities;
    params.v = Eigen::VectorXd::Zero(n_similarities);
    Rng rng(seed);
    for (int k = 0; k < n_predictors; ++k) {
        SmallMlp net(input_dim, hidden_width);
        net.init_uniform(rng);
        params.networks.push_back(std::move(net));
    }
    return params;
}

Eigen::MatrixXd UfgcrfParams::alpha_matrix(const Eigen::MatrixXd& features) const {
    const long n = features.rows();
    Eigen::MatrixXd alpha(static_cast<long>(networks.size()), n);
    for (std::size_t k = 0; k < networks.size(); ++k) {
        for (long i = 0; i < n; ++i) {
            alpha(static_cast<long>(k), i) =
                std::exp(networks[k].forward(scaling.apply(features.row(i))));
        }
    }
    return alpha;
}

Eigen::VectorXd ufgcrf_likelihood_gradient(const UfgcrfParams& params,
                                           const std::vector<UfgcrfSnapshot>& snapshots,
                                           double* likelihood_out) {
    const std::size_t K = params.networks.size();
    long n_theta = 0;
    for (const auto& net : params.networks) n_theta += net.theta.size();
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(n_theta + params.v.size());
    const Eigen::VectorXd beta = params.v.array().exp();
    double value = 0.0;

    Eigen::VectorXd d_theta;
    for (const auto& snapshot : snapshots) {
        if (snapshot.features.size() == 0) {
            throw TgcrfError(kStage, "snapshot is missing the node feature channel");
        }
        const long n = snapshot.features.rows();
        Eigen::MatrixXd alpha(static_cast<long>(K), n);
        std::vector<Eigen::MatrixXd> net_grads(K);  // per network: n x theta
        for (std::size_t k = 0; k < K; ++k) {
            net_grads[k].resize(n, params.networks[k].theta.size());
            for (long i = 0; i < n; ++i) {
                const double u = params.networks[k].forward_with_gradient(
                    params.scaling.apply(snapshot.features.row(i)), d_theta);
                alpha(static_cast<long>(k), i) = std::exp(u);
                net_grads[k].row(i) = d_theta;
            }
        }
        const AlphaBetaGradient g = likelihood_gradient_alpha_beta(alpha, beta, snapshot.base);
        value += g.value;
        long offset = 0;
        for (std::size_t k = 0; k < K; ++k) {
            // d l / d theta_k = sum_i (d l / d alpha_{k,i}) alpha_{k,i} d u / d theta_k
            const Eigen::VectorXd weights =
                (g.d_alpha.row(static_cast<long>(k)).array() * alpha.row(static_cast<long>(k)).array())
                    .transpose();
            grad.segment(offset, params.networks[k].theta.size()) += net_grads[k].transpose() * weights;
            offset += params.networks[k].theta.size();
        }
        for (long l = 0; l < beta.size(); ++l) grad(n_theta + l) += g.d_beta(l) * beta(l);
    }
    if (likelihood_out) *likelihood_out = value;
    return grad;
}

namespace {

void unpack_ufgcrf(UfgcrfParams& params, const Eigen::VectorXd& x) {
    long offset = 0;
    for (auto& net : params.networks) {
        net.theta = x.segment(offset, net.theta.size());
        offset += net.theta.size();
    }
    params.v = x.tail(params.v.size());
}

Eigen::VectorXd pack_ufgcrf(const UfgcrfParams& params) {
    long n_theta = 0;
    for (const auto& net : params.networks) n_theta += net.theta.size();
    Eigen::VectorXd x(n_theta + params.v.size());
    long offset = 0;
    for (const auto& net : params.networks) {
        x.segment(offset, net.theta.size()) = net.theta;
        offset += net.theta.size();
    }
    x.tail(params.v.size()) = params.v;
    return x;
}

}  // namespace

UfgcrfTrainResult train_ufgcrf(const std::vector<UfgcrfSnapshot>& snapshots, UfgcrfParams init,
                               const GradientAscentConfig& config) {
    if (snapshots.empty()) throw TgcrfError(kStage, "training requires at least one snapshot");
    for (const auto& snapshot : snapshots) {
        if (snapshot.base.y.size() == 0) throw TgcrfError(kStage, "training snapshot lacks targets");
        if (snapshot.features.size() == 0) {
            throw TgcrfError(kStage, "snapshot is missing the node feature channel");
        }
    }

    UfgcrfParams params = std::move(init);
    if (params.scaling.mean.size() == 0) {
        std::vector<Eigen::MatrixXd> blocks;
        blocks.reserve(snapshots.size());
        for (const auto& snapshot : snapshots) blocks.push_back(snapshot.features);
        params.scaling = FeatureScaling::fit(blocks);
    }

    Eigen::VectorXd x = pack_ufgcrf(params);
    double step = config.step_size;
    const double inv_count = 1.0 / static_cast<double>(snapshots.size());

    auto evaluate = [&](double& val, Eigen::VectorXd& g) {
        try {
            g = ufgcrf_likelihood_gradient(params, snapshots, &val);
        } catch (const TgcrfError&) {
            val = -std::numeric_limits<double>::infinity();
        }
    };

    double value = 0.0;
    Eigen::VectorXd grad;
    evaluate(value, grad);
    if (!std::isfinite(value)) throw TgcrfError(kStage, "initial parameters are infeasible");

    UfgcrfTrainResult result;
    Eigen::VectorXd best_x = x;
    double best_value = value;
    double previous = value;
    int worsening = 0;
    int flat = 0;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        x += step * inv_count * grad;
        unpack_ufgcrf(params, x);
        evaluate(value, grad);
        ++result.epochs;

        if (std::isfinite(value) && value > best_value) {
            best_value = value;
            best_x = x;
        }

        const bool worse = !std::isfinite(value) || value < previous;
        worsening = worse ? worsening + 1 : 0;
        if (!std::isfinite(value) || worsening >= config.divergence_patience) {
            ++result.step_halvings;
            if (result.step_halvings > config.max_step_halvings) break;
            step *= 0.5;
            worsening = 0;
            x = best_x;
            unpack_ufgcrf(params, x);
            evaluate(value, grad);
        }

        if (std::isfinite(value) && std::abs(value - previous) <=
                                        config.plateau_tolerance * (1.0 + std::abs(value))) {
            if (++flat >= config.plateau_patience) {
                result.converged = true;
                break;
            }
        } else {
            flat = 0;
        }
        previous = value;
    }

    unpack_ufgcrf(params, best_x);
    result.params = std::move(params);
    result.log_likelihood = best_value;
    return result;
}

namespace {

std::vector<PredictiveDistribution> posterior_to_distributions(const GcrfPosterior& post) {
    std::vector<PredictiveDistribution> out(post.mu.size());
    for (long i = 0; i < post.mu.size(); ++i) {
        out[i].mean = post.mu(i);
        out[i].variance = floored_variance(post.var_diag(i));
    }
    return out;
}

}  // namespace

std::vector<PredictiveDistribution> predict_structured(const GcrfParams& params,
                                                       const GcrfSnapshot& snapshot) {
    return posterior_to_distributions(posterior(params, snapshot));
}

std::vector<PredictiveDistribution> predict_structured(const UgcrfParams& params,
                                                       const UgcrfSnapshot& snapshot) {
    if (snapshot.sigma2.size() == 0) {
        throw TgcrfError(kStage, "snapshot is missing the predictor variance channel");
    }
    const Eigen::MatrixXd alpha = ugcrf_alpha_matrix(params, snapshot.sigma2, snapshot.horizon);
    const Eigen::VectorXd beta = params.v.array().exp();
    const auto Q = assemble_precision(alpha, beta, snapshot.base.S);
    return posterior_to_distributions(posterior(Q, assemble_b(alpha, snapshot.base.R)));
}

std::vector<PredictiveDistribution> predict_structured(const UfgcrfParams& params,
                                                       const UfgcrfSnapshot& snapshot) {
    if (snapshot.features.size() == 0) {
        throw TgcrfError(kStage, "snapshot is missing the node feature channel");
    }
    const Eigen::MatrixXd alpha = params.alpha_matrix(snapshot.features);
    const Eigen::VectorXd beta = params.v.array().exp();
    const auto Q = assemble_precision(alpha, beta, snapshot.base.S);
    return posterior_to_distributions(posterior(Q, assemble_b(alpha, snapshot.base.R)));
}

}  // namespace tgcrf
