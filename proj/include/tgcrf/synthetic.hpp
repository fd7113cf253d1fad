#pragma once

#include "tgcrf/gcrf.hpp"
#include "tgcrf/similarity.hpp"
#include "tgcrf/temporal_graph.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace tgcrf {

/// Controls for the seeded evolving-graph generator. Node targets follow
///   y_t = ar1 * y_{t-1} + homophily * (neighbor mean of y_{t-1})
///         + seasonal + node offset + noise,
/// with a dataset attribute `attr0` tracking the target so history-based
/// similarity reflects the true coupling graph.
struct SynthConfig {
    int n_nodes = 20;
    int n_timesteps = 60;
    std::uint64_t seed = 1;
    double homophily = 0.0;        // >= 0, strength of neighbor coupling
    int neighbors_per_node = 4;    // ring-lattice edges on a latent circle
    double ar1 = 0.6;              // in (-1, 1)
    double seasonal_amplitude = 0.0;
    int seasonal_period = 12;
    double noise_variance_lo = 0.01;  // heteroscedastic: log-uniform per node
    double noise_variance_hi = 0.01;  // == lo for homoscedastic noise
    double attribute_noise = 0.02;    // sd of attr0 around the target
    std::optional<double> regime_switch;  // latent-position threshold, emits a regime attribute

    void validate() const;
};

SynthConfig parse_synth_config(std::istream& in);
void write_synth_config(const SynthConfig& config, std::ostream& out);

struct SynthResult {
    TemporalGraphDataset dataset;
    SimilarityMatrix coupling;          // ground-truth graph used by the dynamics
    Eigen::VectorXd noise_variances;    // per node
};

/// Deterministic per seed; rejects configurations whose linear system has
/// spectral radius >= 1.
SynthResult generate_ar_graph(const SynthConfig& config);

struct GcrfProcessConfig {
    int n_nodes = 10;
    int n_predictors = 1;
    double alpha_true = 1.0;
    double beta_true = 2.0;
    int n_snapshots = 200;
    std::uint64_t seed = 1;
    double r_scale = 1.0;  // predictor channels are iid N(0, r_scale^2)
};

/// Snapshots whose targets are exact draws from the GCRF's own Gaussian,
/// y ~ N(Q^{-1} b, Q^{-1}), for parameter-recovery experiments.
std::vector<GcrfSnapshot> generate_gcrf_exact(const GcrfProcessConfig& config,
                                              const SimilarityMatrix& similarity);

/// Ring-lattice similarity used as the default ground-truth coupling graph.
SimilarityMatrix ring_similarity(int n_nodes, int neighbors_per_node, std::uint64_t seed);

}  // namespace tgcrf
