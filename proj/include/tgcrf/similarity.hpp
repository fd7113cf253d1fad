#pragma once

#include "tgcrf/temporal_graph.hpp"

#include <Eigen/Core>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace tgcrf {

enum class SimilarityKind { Comorbidity, JsDivergence, CommonHistory };

std::string similarity_kind_name(SimilarityKind kind);
SimilarityKind similarity_kind_from_name(const std::string& name);

/// Symmetric nonnegative edge weights over the node set; zero diagonal. An
/// edge exists wherever the weight is positive.
struct SimilarityMatrix {
    SimilarityKind kind = SimilarityKind::CommonHistory;
    Eigen::MatrixXd values;
    std::optional<long> timestep;

    long size() const { return values.rows(); }
};

enum class ComorbidityMeasure { Count, Jaccard };

/// Co-occurrence of node ids across records. Codes within a record are
/// treated as a set.
SimilarityMatrix comorbidity_similarity(const std::vector<std::vector<std::string>>& patient_records,
                                        const std::vector<std::string>& node_ids,
                                        ComorbidityMeasure measure,
                                        bool skip_unknown_codes = false);

/// S_ij = 1 / JSD(P_i || P_j), natural log; identical distributions capped at
/// 1/jsd_min. Rows of `histograms` are per-node distributions on a shared
/// support and must each sum to 1.
SimilarityMatrix js_divergence_similarity(const Eigen::MatrixXd& histograms, double jsd_min = 1e-6);

double js_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

enum class HistoryVariant {
    MeanAbsoluteDifference,  // exp(-mean_s |x_i - x_j|)
    AbsoluteMeanDifference,  // exp(-|sum_s (x_i - x_j)| / h)
};

/// Similarity from the last `h` values of `attribute` before timestep t.
SimilarityMatrix common_history_similarity(const TemporalGraphDataset& dataset,
                                           const std::string& attribute, int h, long t,
                                           HistoryVariant variant = HistoryVariant::MeanAbsoluteDifference);

/// JS-divergence similarity from per-node equal-width histograms of
/// `attribute` over timesteps [0, t); the binning is shared across nodes.
SimilarityMatrix attribute_histogram_similarity(const TemporalGraphDataset& dataset,
                                                const std::string& attribute, int n_bins, long t);

struct VariogramBin {
    double lo = 0.0;
    double hi = 0.0;
    long n_pairs = 0;
    double gamma = 0.0;  // mean half squared target difference
};

struct VariogramReport {
    std::vector<VariogramBin> bins;
    double overall_variance = 0.0;
    double spearman = 0.0;  // rank correlation of bin order vs gamma
    bool good = false;
};

/// Bins node pairs by similarity and reports the mean half squared target
/// difference per bin. A similarity is judged good when the top bin's gamma
/// falls below the overall target variance and gamma trends downward.
VariogramReport variogram(const SimilarityMatrix& similarity, const Eigen::VectorXd& targets,
                          int n_bins = 20, long min_pairs_per_bin = 10);

struct SparsifyRule {
    enum class Kind { TopK, Threshold } kind = Kind::TopK;
    int k = 8;
    double threshold = 0.0;

    static SparsifyRule top_k(int k) { return {Kind::TopK, k, 0.0}; }
    static SparsifyRule min_weight(double t) { return {Kind::Threshold, 0, t}; }
};

/// Keeps an edge if either endpoint keeps it, so the result stays symmetric.
SimilarityMatrix sparsify(const SimilarityMatrix& similarity, const SparsifyRule& rule);

/// Triplet text format: version line, "kind N timestep" header, then one
/// "i j s_ij" row per upper-triangle edge.
void write_similarity(const SimilarityMatrix& similarity, std::ostream& out);
SimilarityMatrix read_similarity(std::istream& in);

}  // namespace tgcrf
