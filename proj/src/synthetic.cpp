#include "tgcrf/synthetic.hpp"

#include "tgcrf/common.hpp"
#include "tgcrf/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

namespace tgcrf {

namespace {

constexpr const char* kStage = "synthetic-generator";

std::string node_name(int index, int n_nodes) {
    int width = 1;
    for (int v = n_nodes - 1; v >= 10; v /= 10) ++width;
    width = std::max(width, 3);
    std::ostringstream out;
    out << 'n' << std::setw(width) << std::setfill('0') << index;
    return out.str();
}

}  // namespace

void SynthConfig::validate() const {
    if (n_nodes < 2) throw TgcrfError(kStage, "need at least 2 nodes");
    if (n_timesteps < 2) throw TgcrfError(kStage, "need at least 2 timesteps");
    if (!(std::abs(ar1) < 1.0)) throw TgcrfError(kStage, "ar1 coefficient must lie in (-1, 1)");
    if (!(noise_variance_lo > 0.0) || !(noise_variance_hi >= noise_variance_lo)) {
        throw TgcrfError(kStage, "noise variance range must be positive with hi >= lo");
    }
    if (homophily < 0.0) throw TgcrfError(kStage, "homophily must be >= 0");
    if (neighbors_per_node < 1 || neighbors_per_node >= n_nodes) {
        throw TgcrfError(kStage, "neighbors_per_node must be in [1, n_nodes)");
    }
    if (seasonal_period < 1) throw TgcrfError(kStage, "seasonal period must be >= 1");
}

SimilarityMatrix ring_similarity(int n_nodes, int neighbors_per_node, std::uint64_t seed) {
    Rng rng(seed ^ 0x51a1c0de1ULL);
    SimilarityMatrix sim;
    sim.kind = SimilarityKind::CommonHistory;
    sim.values = Eigen::MatrixXd::Zero(n_nodes, n_nodes);
    const int half = std::max(1, neighbors_per_node / 2);
    for (int i = 0; i < n_nodes; ++i) {
        for (int d = 1; d <= half; ++d) {
            const int j = (i + d) % n_nodes;
            if (sim.values(i, j) == 0.0) {
                const double w = rng.uniform(0.5, 1.0);
                sim.values(i, j) = w;
                sim.values(j, i) = w;
            }
        }
    }
    return sim;
}

SynthResult generate_ar_graph(const SynthConfig& config) {
    config.validate();
    const int n = config.n_nodes;
    const int T = config.n_timesteps;

    SynthResult result;
    result.coupling = ring_similarity(n, config.neighbors_per_node, config.seed);

    // Row-normalized coupling; stability check on the full linear system.
    Eigen::MatrixXd W = result.coupling.values;
    for (int i = 0; i < n; ++i) {
        const double row_sum = W.row(i).sum();
        if (row_sum > 0.0) W.row(i) /= row_sum;
    }
    const Eigen::MatrixXd A =
        config.ar1 * Eigen::MatrixXd::Identity(n, n) + config.homophily * W;
    const double spectral_radius = A.eigenvalues().cwiseAbs().maxCoeff();
    if (spectral_radius >= 1.0) {
        throw TgcrfError(kStage, "unstable configuration: spectral radius " +
                                     std::to_string(spectral_radius) + " >= 1");
    }

    Rng rng(config.seed);

    // Smooth node levels around the latent circle make neighbors genuinely
    // similar, so history-based similarity can recover the coupling graph.
    Eigen::VectorXd offset(n);
    for (int i = 0; i < n; ++i) {
        offset(i) = std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / n);
    }

    result.noise_variances.resize(n);
    const double log_lo = std::log(config.noise_variance_lo);
    const double log_hi = std::log(config.noise_variance_hi);
    for (int i = 0; i < n; ++i) {
        result.noise_variances(i) = std::exp(rng.uniform(log_lo, log_hi));
    }

    auto seasonal = [&](int t) {
        return config.seasonal_amplitude *
               std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / config.seasonal_period);
    };

    Eigen::MatrixXd deviations(T, n);
    for (int i = 0; i < n; ++i) {
        deviations(0, i) = rng.normal() * std::sqrt(result.noise_variances(i));
    }
    for (int t = 1; t < T; ++t) {
        const Eigen::VectorXd prev = deviations.row(t - 1).transpose();
        const Eigen::VectorXd mean = A * prev;
        for (int i = 0; i < n; ++i) {
            deviations(t, i) = mean(i) + rng.normal() * std::sqrt(result.noise_variances(i));
        }
    }

    TemporalGraphDataset& ds = result.dataset;
    ds.node_ids.reserve(n);
    for (int i = 0; i < n; ++i) ds.node_ids.push_back(node_name(i, n));
    ds.timesteps.resize(T);
    for (int t = 0; t < T; ++t) ds.timesteps[t] = t;
    ds.targets.resize(T, n);
    ds.masks.setConstant(T, n, true);
    Eigen::MatrixXd attr0(T, n);
    for (int t = 0; t < T; ++t) {
        for (int i = 0; i < n; ++i) {
            ds.targets(t, i) = offset(i) + seasonal(t) + deviations(t, i);
        }
    }
    for (int t = 0; t < T; ++t) {
        for (int i = 0; i < n; ++i) {
            attr0(t, i) = ds.targets(t, i) + config.attribute_noise * rng.normal();
        }
    }
    ds.attributes.emplace("attr0", std::move(attr0));

    if (config.regime_switch) {
        Eigen::MatrixXd regime(T, n);
        for (int i = 0; i < n; ++i) {
            const double flag = offset(i) < *config.regime_switch ? 0.0 : 1.0;
            regime.col(i).setConstant(flag);
        }
        ds.attributes.emplace("regime", std::move(regime));
    }
    return result;
}

std::vector<GcrfSnapshot> generate_gcrf_exact(const GcrfProcessConfig& config,
                                              const SimilarityMatrix& similarity) {
    if (config.alpha_true <= 0.0 || config.beta_true < 0.0) {
        throw TgcrfError(kStage, "alpha must be positive and beta nonnegative");
    }
    const int n = config.n_nodes;
    if (similarity.size() != n) throw TgcrfError(kStage, "similarity size does not match n_nodes");

    const Eigen::MatrixXd alpha =
        Eigen::MatrixXd::Constant(config.n_predictors, n, config.alpha_true);
    const Eigen::VectorXd beta = Eigen::VectorXd::Constant(1, config.beta_true);
    const std::vector<Eigen::MatrixXd> S = {similarity.values};
    const Eigen::MatrixXd Q = Eigen::MatrixXd(assemble_precision(alpha, beta, S));
    const Eigen::LLT<Eigen::MatrixXd> llt(Q);
    if (llt.info() != Eigen::Success) throw TgcrfError(kStage, "true precision is not PD");

    Rng rng(config.seed);
    std::vector<GcrfSnapshot> snapshots;
    snapshots.reserve(config.n_snapshots);
    for (int s = 0; s < config.n_snapshots; ++s) {
        GcrfSnapshot snapshot;
        snapshot.R.resize(config.n_predictors, n);
        for (int k = 0; k < config.n_predictors; ++k) {
            for (int i = 0; i < n; ++i) snapshot.R(k, i) = rng.normal() * config.r_scale;
        }
        snapshot.S = S;
        const Eigen::VectorXd b = assemble_b(alpha, snapshot.R);
        const Eigen::VectorXd mu = llt.solve(b);
        Eigen::VectorXd z(n);
        for (int i = 0; i < n; ++i) z(i) = rng.normal();
        // y = mu + L^{-T} z has covariance Q^{-1}.
        snapshot.y = mu + llt.matrixU().solve(z);
        snapshots.push_back(std::move(snapshot));
    }
    return snapshots;
}

SynthConfig parse_synth_config(std::istream& in) {
    SynthConfig config;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw TgcrfError(kStage, "bad config line " + std::to_string(line_no) + ": '" + line + "'");
        }
        auto trim = [](std::string text) {
            const auto begin = text.find_first_not_of(" \t");
            const auto end = text.find_last_not_of(" \t");
            return begin == std::string::npos ? std::string() : text.substr(begin, end - begin + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "rng") {
                if (value != Rng::algorithm_name()) {
                    throw TgcrfError(kStage, "unsupported rng '" + value + "', expected " +
                                                 std::string(Rng::algorithm_name()));
                }
            } else if (key == "n_nodes") config.n_nodes = std::stoi(value);
            else if (key == "n_timesteps") config.n_timesteps = std::stoi(value);
            else if (key == "seed") config.seed = std::stoull(value);
            else if (key == "homophily") config.homophily = std::stod(value);
            else if (key == "neighbors_per_node") config.neighbors_per_node = std::stoi(value);
            else if (key == "ar1") config.ar1 = std::stod(value);
            else if (key == "seasonal_amplitude") config.seasonal_amplitude = std::stod(value);
            else if (key == "seasonal_period") config.seasonal_period = std::stoi(value);
            else if (key == "noise_variance_lo") config.noise_variance_lo = std::stod(value);
            else if (key == "noise_variance_hi") config.noise_variance_hi = std::stod(value);
            else if (key == "attribute_noise") config.attribute_noise = std::stod(value);
            else if (key == "regime_switch") config.regime_switch = std::stod(value);
            else throw TgcrfError(kStage, "unknown config key '" + key + "'");
        } catch (const TgcrfError&) {
            throw;
        } catch (const std::exception&) {
            throw TgcrfError(kStage, "bad value for '" + key + "' at line " + std::to_string(line_no));
        }
    }
    config.validate();
    return config;
}

void write_synth_config(const SynthConfig& config, std::ostream& out) {
    out << std::setprecision(17);
    out << "rng = " << Rng::algorithm_name() << '\n';
    out << "n_nodes = " << config.n_nodes << '\n';
    out << "n_timesteps = " << config.n_timesteps << '\n';
    out << "seed = " << config.seed << '\n';
    out << "homophily = " << config.homophily << '\n';
    out << "neighbors_per_node = " << config.neighbors_per_node << '\n';
    out << "ar1 = " << config.ar1 << '\n';
    out << "seasonal_amplitude = " << config.seasonal_amplitude << '\n';
    out << "seasonal_period = " << config.seasonal_period << '\n';
    out << "noise_variance_lo = " << config.noise_variance_lo << '\n';
    out << "noise_variance_hi = " << config.noise_variance_hi << '\n';
    out << "attribute_noise = " << config.attribute_noise << '\n';
    if (config.regime_switch) out << "regime_switch = " << *config.regime_switch << '\n';
}

}  // namespace tgcrf
