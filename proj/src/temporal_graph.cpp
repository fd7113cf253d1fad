#include "tgcrf/temporal_graph.hpp"

#include "tgcrf/common.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace tgcrf {

namespace {

constexpr const char* kStage = "temporal-graph";

std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, delim)) fields.push_back(field);
    if (!line.empty() && line.back() == delim) fields.emplace_back();
    return fields;
}

double parse_real(const std::string& text, const char* what, std::size_t line_no) {
    std::size_t pos = 0;
    double value = 0.0;
    try {
        value = std::stod(text, &pos);
    } catch (const std::exception&) {
        throw TgcrfError(kStage, std::string("non-numeric ") + what + " '" + text + "' at line " +
                                     std::to_string(line_no));
    }
    if (pos != text.size()) {
        throw TgcrfError(kStage, std::string("non-numeric ") + what + " '" + text + "' at line " +
                                     std::to_string(line_no));
    }
    return value;
}

long parse_timestep(const std::string& text, std::size_t line_no) {
    std::size_t pos = 0;
    long value = 0;
    try {
        value = std::stol(text, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != text.size()) {
        throw TgcrfError(kStage, "non-integer timestep '" + text + "' at line " + std::to_string(line_no));
    }
    return value;
}

}  // namespace

int TemporalGraphDataset::node_index(const std::string& id) const {
    auto it = std::lower_bound(node_ids.begin(), node_ids.end(), id);
    if (it == node_ids.end() || *it != id) return -1;
    return static_cast<int>(it - node_ids.begin());
}

bool TemporalGraphDataset::observed_range(int node, long t_begin, long t_end) const {
    for (long t = t_begin; t < t_end; ++t) {
        if (!masks(t, node)) return false;
    }
    return true;
}

bool operator==(const TemporalGraphDataset& a, const TemporalGraphDataset& b) {
    if (a.node_ids != b.node_ids || a.timesteps != b.timesteps) return false;
    if (a.masks.rows() != b.masks.rows() || a.masks.cols() != b.masks.cols()) return false;
    if (!(a.masks.array() == b.masks.array()).all()) return false;
    auto matrices_equal = [&](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
        for (long t = 0; t < x.rows(); ++t) {
            for (long n = 0; n < x.cols(); ++n) {
                if (!a.masks(t, n)) continue;  // sentinel values compare as equal
                if (x(t, n) != y(t, n)) return false;
            }
        }
        return true;
    };
    if (!matrices_equal(a.targets, b.targets)) return false;
    if (a.attributes.size() != b.attributes.size()) return false;
    for (const auto& [name, matrix] : a.attributes) {
        auto it = b.attributes.find(name);
        if (it == b.attributes.end() || !matrices_equal(matrix, it->second)) return false;
    }
    return true;
}

TemporalGraphDataset ingest_node_series(std::istream& source, const IngestSchema& schema) {
    std::string line;
    if (!std::getline(source, line)) throw TgcrfError(kStage, "empty input: no header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const auto header = split_line(line, schema.delimiter);
    auto column_of = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw TgcrfError(kStage, "schema column '" + name + "' not in header");
        return static_cast<int>(it - header.begin());
    };

    const int t_col = column_of(schema.timestep_column);
    const int n_col = column_of(schema.node_column);
    const int y_col = column_of(schema.target_column);

    std::vector<std::string> attr_names = schema.attribute_columns;
    if (attr_names.empty()) {
        for (int c = 0; c < static_cast<int>(header.size()); ++c) {
            if (c != t_col && c != n_col && c != y_col) attr_names.push_back(header[c]);
        }
    }
    std::vector<int> attr_cols;
    attr_cols.reserve(attr_names.size());
    for (const auto& name : attr_names) attr_cols.push_back(column_of(name));

    struct Row {
        long timestep;
        std::string node;
        double target;
        std::vector<double> attrs;
        std::size_t line_no;
    };
    std::vector<Row> rows;
    std::map<std::pair<long, std::string>, std::size_t> seen;  // -> line number

    std::size_t line_no = 1;
    while (std::getline(source, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_line(line, schema.delimiter);
        if (fields.size() != header.size()) {
            throw TgcrfError(kStage, "line " + std::to_string(line_no) + " has " +
                                         std::to_string(fields.size()) + " fields, header has " +
                                         std::to_string(header.size()));
        }
        Row row;
        row.timestep = parse_timestep(fields[t_col], line_no);
        row.node = fields[n_col];
        row.target = parse_real(fields[y_col], "target", line_no);
        row.attrs.reserve(attr_cols.size());
        for (int c : attr_cols) row.attrs.push_back(parse_real(fields[c], "attribute", line_no));
        row.line_no = line_no;

        auto key = std::make_pair(row.timestep, row.node);
        auto [it, inserted] = seen.emplace(key, line_no);
        if (!inserted) {
            throw TgcrfError(kStage, "duplicate row (timestep=" + std::to_string(row.timestep) +
                                         ", node=" + row.node + ") at line " + std::to_string(line_no) +
                                         ", first seen at line " + std::to_string(it->second));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw TgcrfError(kStage, "no data rows");

    TemporalGraphDataset ds;
    for (const auto& row : rows) {
        ds.node_ids.push_back(row.node);
        ds.timesteps.push_back(row.timestep);
    }
    std::sort(ds.node_ids.begin(), ds.node_ids.end());
    ds.node_ids.erase(std::unique(ds.node_ids.begin(), ds.node_ids.end()), ds.node_ids.end());
    std::sort(ds.timesteps.begin(), ds.timesteps.end());
    ds.timesteps.erase(std::unique(ds.timesteps.begin(), ds.timesteps.end()), ds.timesteps.end());

    const long T = ds.n_timesteps();
    const long N = ds.n_nodes();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    ds.targets = Eigen::MatrixXd::Constant(T, N, nan);
    ds.masks.setConstant(T, N, false);
    for (const auto& name : attr_names) {
        ds.attributes.emplace(name, Eigen::MatrixXd::Constant(T, N, nan));
    }

    for (const auto& row : rows) {
        const long t = std::lower_bound(ds.timesteps.begin(), ds.timesteps.end(), row.timestep) -
                       ds.timesteps.begin();
        const int n = ds.node_index(row.node);
        ds.targets(t, n) = row.target;
        ds.masks(t, n) = true;
        for (std::size_t a = 0; a < attr_names.size(); ++a) {
            ds.attributes[attr_names[a]](t, n) = row.attrs[a];
        }
    }
    return ds;
}

TemporalGraphDataset ingest_node_series_file(const std::string& path, const IngestSchema& schema) {
    std::ifstream in(path);
    if (!in) throw TgcrfError(kStage, "cannot open '" + path + "'");
    return ingest_node_series(in, schema);
}

void serialize_dataset(const TemporalGraphDataset& dataset, std::ostream& out, char delimiter) {
    out << "timestep" << delimiter << "node_id" << delimiter << "target";
    for (const auto& [name, values] : dataset.attributes) out << delimiter << name;
    out << '\n';
    out << std::setprecision(17);
    for (long t = 0; t < dataset.n_timesteps(); ++t) {
        for (long n = 0; n < dataset.n_nodes(); ++n) {
            if (!dataset.masks(t, n)) continue;
            out << dataset.timesteps[t] << delimiter << dataset.node_ids[n] << delimiter
                << dataset.targets(t, n);
            for (const auto& [name, values] : dataset.attributes) out << delimiter << values(t, n);
            out << '\n';
        }
    }
}

void serialize_dataset_file(const TemporalGraphDataset& dataset, const std::string& path, char delimiter) {
    std::ofstream out(path);
    if (!out) throw TgcrfError(kStage, "cannot open '" + path + "' for writing");
    serialize_dataset(dataset, out, delimiter);
}

TargetScaler TargetScaler::fit(const TemporalGraphDataset& dataset, ScalingMode mode,
                               long t_begin, long t_end) {
    if (t_end < 0) t_end = dataset.n_timesteps();
    if (t_begin < 0 || t_end > dataset.n_timesteps() || t_begin >= t_end) {
        throw TgcrfError(kStage, "invalid scaler window [" + std::to_string(t_begin) + ", " +
                                     std::to_string(t_end) + ")");
    }
    TargetScaler scaler;
    scaler.mode = mode;
    const long N = dataset.n_nodes();
    if (mode == ScalingMode::Global) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (long t = t_begin; t < t_end; ++t) {
            for (long n = 0; n < N; ++n) {
                if (!dataset.masks(t, n)) continue;
                lo = std::min(lo, dataset.targets(t, n));
                hi = std::max(hi, dataset.targets(t, n));
            }
        }
        if (!(hi > lo)) throw TgcrfError(kStage, "constant targets: global scaling undefined");
        scaler.min = Eigen::VectorXd::Constant(1, lo);
        scaler.max = Eigen::VectorXd::Constant(1, hi);
    } else {
        scaler.min.resize(N);
        scaler.max.resize(N);
        for (long n = 0; n < N; ++n) {
            double lo = std::numeric_limits<double>::infinity();
            double hi = -std::numeric_limits<double>::infinity();
            for (long t = t_begin; t < t_end; ++t) {
                if (!dataset.masks(t, n)) continue;
                lo = std::min(lo, dataset.targets(t, n));
                hi = std::max(hi, dataset.targets(t, n));
            }
            if (!(hi > lo)) {
                throw TgcrfError(kStage, "constant series: node " + dataset.node_ids[n] +
                                             " cannot be scaled per-node");
            }
            scaler.min(n) = lo;
            scaler.max(n) = hi;
        }
    }
    return scaler;
}

double TargetScaler::scale(int node, double value) const {
    const int i = mode == ScalingMode::Global ? 0 : node;
    return (value - min(i)) / (max(i) - min(i));
}

double TargetScaler::inverse(int node, double value) const {
    const int i = mode == ScalingMode::Global ? 0 : node;
    return value * (max(i) - min(i)) + min(i);
}

TemporalGraphDataset TargetScaler::apply(const TemporalGraphDataset& dataset) const {
    TemporalGraphDataset scaled = dataset;
    for (long t = 0; t < dataset.n_timesteps(); ++t) {
        for (long n = 0; n < dataset.n_nodes(); ++n) {
            if (dataset.masks(t, n)) scaled.targets(t, n) = scale(static_cast<int>(n), dataset.targets(t, n));
        }
    }
    return scaled;
}

std::pair<TemporalGraphDataset, TargetScaler>
normalize_targets(const TemporalGraphDataset& dataset, ScalingMode mode) {
    TargetScaler scaler = TargetScaler::fit(dataset, mode);
    return {scaler.apply(dataset), scaler};
}

void LagFeatureMatrix::append(const LagFeatureMatrix& other) {
    if (rows() == 0) {
        *this = other;
        return;
    }
    if (other.lag() != lag()) throw TgcrfError(kStage, "lag mismatch in LagFeatureMatrix::append");
    const long r = rows();
    X.conservativeResize(r + other.rows(), Eigen::NoChange);
    y.conservativeResize(r + other.rows());
    X.bottomRows(other.rows()) = other.X;
    y.tail(other.rows()) = other.y;
    node_index.insert(node_index.end(), other.node_index.begin(), other.node_index.end());
    timestep_index.insert(timestep_index.end(), other.timestep_index.begin(), other.timestep_index.end());
}

LagFeatureMatrix build_lag_features(const TemporalGraphDataset& dataset, int node, int lag,
                                    long t_begin, long t_end) {
    if (lag < 1) throw TgcrfError(kStage, "lag must be >= 1");
    if (t_end < 0) t_end = dataset.n_timesteps();
    if (node < 0 || node >= dataset.n_nodes()) throw TgcrfError(kStage, "node index out of range");
    const long window = t_end - t_begin;
    if (window < lag + 1) {
        throw TgcrfError(kStage, "window of length " + std::to_string(window) +
                                     " shorter than lag+1=" + std::to_string(lag + 1) + " for node " +
                                     dataset.node_ids[node]);
    }
    for (long t = t_begin; t < t_end; ++t) {
        if (!dataset.masks(t, node)) {
            throw TgcrfError(kStage, "node " + dataset.node_ids[node] + " unobserved at timestep " +
                                         std::to_string(dataset.timesteps[t]) + " inside feature window");
        }
    }

    LagFeatureMatrix features;
    const long n_rows = window - lag;
    features.X.resize(n_rows, lag);
    features.y.resize(n_rows);
    features.node_index.assign(n_rows, node);
    features.timestep_index.resize(n_rows);
    for (long r = 0; r < n_rows; ++r) {
        const long t = t_begin + lag + r;
        for (int l = 0; l < lag; ++l) features.X(r, l) = dataset.targets(t - 1 - l, node);
        features.y(r) = dataset.targets(t, node);
        features.timestep_index[r] = t;
    }
    return features;
}

}  // namespace tgcrf
