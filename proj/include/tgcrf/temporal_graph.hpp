#pragma once

#include <Eigen/Core>

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace tgcrf {

/// Node-level time series over a fixed node set: a T x N target matrix, a
/// matching observation mask, and zero or more named T x N attribute matrices.
/// Immutable once ingested; node order is lexicographic in node id, timestep
/// order ascending.
struct TemporalGraphDataset {
    std::vector<std::string> node_ids;
    std::vector<long> timesteps;
    Eigen::MatrixXd targets;                         // T x N, NaN where unobserved
    std::map<std::string, Eigen::MatrixXd> attributes;  // name -> T x N
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> masks;  // T x N

    long n_timesteps() const { return static_cast<long>(timesteps.size()); }
    long n_nodes() const { return static_cast<long>(node_ids.size()); }

    int node_index(const std::string& id) const;  // -1 if absent
    bool fully_observed() const { return masks.all(); }
    bool observed_range(int node, long t_begin, long t_end) const;
};

bool operator==(const TemporalGraphDataset& a, const TemporalGraphDataset& b);

/// Column mapping for long-format ingestion. Attribute columns default to
/// every header column not otherwise named.
struct IngestSchema {
    std::string timestep_column = "timestep";
    std::string node_column = "node_id";
    std::string target_column = "target";
    std::vector<std::string> attribute_columns;  // empty: take all remaining
    char delimiter = ',';
};

TemporalGraphDataset ingest_node_series(std::istream& source, const IngestSchema& schema = {});
TemporalGraphDataset ingest_node_series_file(const std::string& path, const IngestSchema& schema = {});

/// Writes the long-format file this module ingests; only observed entries are
/// emitted, so ingest(serialize(ds)) == ds.
void serialize_dataset(const TemporalGraphDataset& dataset, std::ostream& out, char delimiter = ',');
void serialize_dataset_file(const TemporalGraphDataset& dataset, const std::string& path, char delimiter = ',');

enum class ScalingMode { Global, PerNode };

/// Affine min-max map to [0,1], invertible exactly. `fit` may be restricted to
/// a timestep window so test months can reuse a training-window scaler.
struct TargetScaler {
    ScalingMode mode = ScalingMode::Global;
    Eigen::VectorXd min;  // size 1 (global) or N (per-node)
    Eigen::VectorXd max;

    static TargetScaler fit(const TemporalGraphDataset& dataset, ScalingMode mode,
                            long t_begin = 0, long t_end = -1);

    double scale(int node, double value) const;
    double inverse(int node, double value) const;
    TemporalGraphDataset apply(const TemporalGraphDataset& dataset) const;
};

std::pair<TemporalGraphDataset, TargetScaler>
normalize_targets(const TemporalGraphDataset& dataset, ScalingMode mode = ScalingMode::Global);

/// Supervised rows (lag features -> current target), possibly pooled over
/// nodes. Column 0 holds the most recent lag (t-1).
struct LagFeatureMatrix {
    Eigen::MatrixXd X;            // rows x lag
    Eigen::VectorXd y;
    std::vector<int> node_index;      // per row
    std::vector<long> timestep_index;  // per row, index of the label timestep

    long rows() const { return X.rows(); }
    int lag() const { return static_cast<int>(X.cols()); }
    void append(const LagFeatureMatrix& other);
};

/// One row per predictable timestep of `node` in [t_begin, t_end); features
/// are strictly earlier targets. The node must be observed over the whole
/// window. t_end == -1 means the dataset end.
LagFeatureMatrix build_lag_features(const TemporalGraphDataset& dataset, int node, int lag,
                                    long t_begin = 0, long t_end = -1);

}  // namespace tgcrf
