#include "tgcrf/similarity.hpp"

#include "tgcrf/common.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace tgcrf {

namespace {

constexpr const char* kStage = "similarity-builders";
constexpr double kLn2 = 0.6931471805599453;

}  // namespace

std::string similarity_kind_name(SimilarityKind kind) {
    switch (kind) {
        case SimilarityKind::Comorbidity: return "comorbidity";
        case SimilarityKind::JsDivergence: return "js-divergence";
        case SimilarityKind::CommonHistory: return "common-history";
    }
    return "unknown";
}

SimilarityKind similarity_kind_from_name(const std::string& name) {
    if (name == "comorbidity") return SimilarityKind::Comorbidity;
    if (name == "js-divergence") return SimilarityKind::JsDivergence;
    if (name == "common-history") return SimilarityKind::CommonHistory;
    throw TgcrfError(kStage, "unknown similarity kind '" + name + "'");
}

SimilarityMatrix comorbidity_similarity(const std::vector<std::vector<std::string>>& patient_records,
                                        const std::vector<std::string>& node_ids,
                                        ComorbidityMeasure measure, bool skip_unknown_codes) {
    const long n = static_cast<long>(node_ids.size());
    std::map<std::string, int> index;
    for (long i = 0; i < n; ++i) index[node_ids[i]] = static_cast<int>(i);

    Eigen::MatrixXd both = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd any = Eigen::VectorXd::Zero(n);

    for (std::size_t r = 0; r < patient_records.size(); ++r) {
        std::set<int> codes;
        for (const auto& code : patient_records[r]) {
            auto it = index.find(code);
            if (it == index.end()) {
                if (skip_unknown_codes) continue;
                throw TgcrfError(kStage, "record " + std::to_string(r) + " contains unknown code '" +
                                             code + "'");
            }
            codes.insert(it->second);
        }
        for (int i : codes) any(i) += 1.0;
        for (auto it = codes.begin(); it != codes.end(); ++it) {
            for (auto jt = std::next(it); jt != codes.end(); ++jt) {
                both(*it, *jt) += 1.0;
                both(*jt, *it) += 1.0;
            }
        }
    }

    SimilarityMatrix result;
    result.kind = SimilarityKind::Comorbidity;
    if (measure == ComorbidityMeasure::Count) {
        result.values = both;
    } else {
        result.values = Eigen::MatrixXd::Zero(n, n);
        for (long i = 0; i < n; ++i) {
            for (long j = i + 1; j < n; ++j) {
                const double either = any(i) + any(j) - both(i, j);
                const double s = either > 0.0 ? both(i, j) / either : 0.0;
                result.values(i, j) = s;
                result.values(j, i) = s;
            }
        }
    }
    result.values.diagonal().setZero();
    return result;
}

double js_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
    // KLD convention: 0 * log(0/m) = 0, natural logarithm.
    double jsd = 0.0;
    for (long b = 0; b < p.size(); ++b) {
        const double m = 0.5 * (p(b) + q(b));
        if (p(b) > 0.0) jsd += 0.5 * p(b) * std::log(p(b) / m);
        if (q(b) > 0.0) jsd += 0.5 * q(b) * std::log(q(b) / m);
    }
    return std::max(jsd, 0.0);
}

SimilarityMatrix js_divergence_similarity(const Eigen::MatrixXd& histograms, double jsd_min) {
    const long n = histograms.rows();
    for (long i = 0; i < n; ++i) {
        if ((histograms.row(i).array() < 0.0).any()) {
            throw TgcrfError(kStage, "negative bin in histogram for node " + std::to_string(i));
        }
        const double sum = histograms.row(i).sum();
        if (std::abs(sum - 1.0) > 1e-8) {
            throw TgcrfError(kStage, "histogram for node " + std::to_string(i) +
                                         " sums to " + std::to_string(sum) + ", expected 1");
        }
    }

    SimilarityMatrix result;
    result.kind = SimilarityKind::JsDivergence;
    result.values = Eigen::MatrixXd::Zero(n, n);
    for (long i = 0; i < n; ++i) {
        for (long j = i + 1; j < n; ++j) {
            const double jsd = js_divergence(histograms.row(i), histograms.row(j));
            if (jsd > kLn2 + 1e-9) {
                throw TgcrfError(kStage, "JSD exceeded ln 2: " + std::to_string(jsd));
            }
            const double s = 1.0 / std::max(jsd, jsd_min);
            result.values(i, j) = s;
            result.values(j, i) = s;
        }
    }
    return result;
}

SimilarityMatrix common_history_similarity(const TemporalGraphDataset& dataset,
                                           const std::string& attribute, int h, long t,
                                           HistoryVariant variant) {
    if (h < 1) throw TgcrfError(kStage, "history length must be >= 1");
    if (t < h) {
        throw TgcrfError(kStage, "insufficient history: timestep index " + std::to_string(t) +
                                     " needs " + std::to_string(h) + " earlier steps");
    }
    auto it = dataset.attributes.find(attribute);
    if (it == dataset.attributes.end()) {
        throw TgcrfError(kStage, "dataset has no attribute '" + attribute + "'");
    }
    const Eigen::MatrixXd& attr = it->second;
    const long n = dataset.n_nodes();
    for (long i = 0; i < n; ++i) {
        if (!dataset.observed_range(static_cast<int>(i), t - h, t)) {
            throw TgcrfError(kStage, "node " + dataset.node_ids[i] +
                                         " unobserved inside history window before timestep " +
                                         std::to_string(t));
        }
    }

    SimilarityMatrix result;
    result.kind = SimilarityKind::CommonHistory;
    result.timestep = t;
    result.values = Eigen::MatrixXd::Zero(n, n);
    for (long i = 0; i < n; ++i) {
        for (long j = i + 1; j < n; ++j) {
            double acc = 0.0;
            for (int s = 1; s <= h; ++s) {
                const double diff = attr(t - s, i) - attr(t - s, j);
                acc += variant == HistoryVariant::MeanAbsoluteDifference ? std::abs(diff) : diff;
            }
            const double arg = variant == HistoryVariant::MeanAbsoluteDifference
                                   ? acc / static_cast<double>(h)
                                   : std::abs(acc) / static_cast<double>(h);
            const double s_ij = std::exp(-arg);
            result.values(i, j) = s_ij;
            result.values(j, i) = s_ij;
        }
    }
    return result;
}

SimilarityMatrix attribute_histogram_similarity(const TemporalGraphDataset& dataset,
                                                const std::string& attribute, int n_bins, long t) {
    if (n_bins < 2) throw TgcrfError(kStage, "histogram needs at least 2 bins");
    if (t < 1) throw TgcrfError(kStage, "histogram needs at least one earlier timestep");
    auto it = dataset.attributes.find(attribute);
    if (it == dataset.attributes.end()) {
        throw TgcrfError(kStage, "dataset has no attribute '" + attribute + "'");
    }
    const Eigen::MatrixXd& attr = it->second;
    const long n = dataset.n_nodes();
    const double lo = attr.topRows(t).minCoeff();
    const double hi = attr.topRows(t).maxCoeff();
    const double width = hi > lo ? (hi - lo) / n_bins : 1.0;
    Eigen::MatrixXd hist = Eigen::MatrixXd::Zero(n, n_bins);
    for (long i = 0; i < n; ++i) {
        for (long s = 0; s < t; ++s) {
            int b = static_cast<int>((attr(s, i) - lo) / width);
            b = std::clamp(b, 0, n_bins - 1);
            hist(i, b) += 1.0;
        }
        hist.row(i) /= hist.row(i).sum();
    }
    SimilarityMatrix sim = js_divergence_similarity(hist);
    sim.timestep = t;
    return sim;
}

namespace {

double spearman_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    auto ranks = [n](const std::vector<double>& values) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
        std::vector<double> rank(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // average rank for ties
            for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
            i = j + 1;
        }
        return rank;
    };
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    const double mean = 0.5 * static_cast<double>(n + 1);
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (ra[i] - mean) * (rb[i] - mean);
        va += (ra[i] - mean) * (ra[i] - mean);
        vb += (rb[i] - mean) * (rb[i] - mean);
    }
    if (va <= 0.0 || vb <= 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

}  // namespace

VariogramReport variogram(const SimilarityMatrix& similarity, const Eigen::VectorXd& targets,
                          int n_bins, long min_pairs_per_bin) {
    if (n_bins < 2) throw TgcrfError(kStage, "variogram needs at least 2 bins");
    const long n = similarity.size();
    if (targets.size() != n) throw TgcrfError(kStage, "target vector size does not match similarity");

    double s_min = std::numeric_limits<double>::infinity();
    double s_max = -std::numeric_limits<double>::infinity();
    for (long i = 0; i < n; ++i) {
        for (long j = i + 1; j < n; ++j) {
            s_min = std::min(s_min, similarity.values(i, j));
            s_max = std::max(s_max, similarity.values(i, j));
        }
    }
    if (!(s_max > s_min)) throw TgcrfError(kStage, "degenerate similarity: all pair values equal");

    const double width = (s_max - s_min) / static_cast<double>(n_bins);
    std::vector<VariogramBin> bins(n_bins);
    std::vector<double> gamma_sum(n_bins, 0.0);
    for (int b = 0; b < n_bins; ++b) {
        bins[b].lo = s_min + b * width;
        bins[b].hi = s_min + (b + 1) * width;
    }
    for (long i = 0; i < n; ++i) {
        for (long j = i + 1; j < n; ++j) {
            int b = static_cast<int>((similarity.values(i, j) - s_min) / width);
            b = std::clamp(b, 0, n_bins - 1);
            const double diff = targets(i) - targets(j);
            gamma_sum[b] += 0.5 * diff * diff;
            bins[b].n_pairs += 1;
        }
    }

    // Sparse bins merge into their right neighbor; the last bin, if still
    // sparse, merges into the previous surviving one.
    std::vector<VariogramBin> merged;
    std::vector<double> merged_sum;
    for (int b = 0; b < n_bins; ++b) {
        if (!merged.empty() && merged.back().n_pairs < min_pairs_per_bin) {
            merged.back().hi = bins[b].hi;
            merged.back().n_pairs += bins[b].n_pairs;
            merged_sum.back() += gamma_sum[b];
        } else {
            merged.push_back(bins[b]);
            merged_sum.push_back(gamma_sum[b]);
        }
    }
    while (merged.size() > 1 && merged.back().n_pairs < min_pairs_per_bin) {
        auto last = merged.back();
        merged.pop_back();
        const double last_sum = merged_sum.back();
        merged_sum.pop_back();
        merged.back().hi = last.hi;
        merged.back().n_pairs += last.n_pairs;
        merged_sum.back() += last_sum;
    }
    for (std::size_t b = 0; b < merged.size(); ++b) {
        merged[b].gamma = merged[b].n_pairs > 0 ? merged_sum[b] / static_cast<double>(merged[b].n_pairs) : 0.0;
    }

    VariogramReport report;
    report.bins = std::move(merged);
    const double mean = targets.mean();
    report.overall_variance = (targets.array() - mean).square().sum() / static_cast<double>(n);

    std::vector<double> order(report.bins.size());
    std::vector<double> gammas(report.bins.size());
    for (std::size_t b = 0; b < report.bins.size(); ++b) {
        order[b] = static_cast<double>(b);
        gammas[b] = report.bins[b].gamma;
    }
    report.spearman = spearman_correlation(order, gammas);

    if (report.overall_variance == 0.0) {
        report.good = true;  // no variance to explain, trivially consistent
    } else {
        report.good = report.bins.back().gamma < report.overall_variance && report.spearman < 0.0;
    }
    return report;
}

SimilarityMatrix sparsify(const SimilarityMatrix& similarity, const SparsifyRule& rule) {
    const long n = similarity.size();
    SimilarityMatrix result;
    result.kind = similarity.kind;
    result.timestep = similarity.timestep;
    result.values = Eigen::MatrixXd::Zero(n, n);

    if (rule.kind == SparsifyRule::Kind::Threshold) {
        if (rule.threshold < 0.0) throw TgcrfError(kStage, "threshold must be >= 0");
        for (long i = 0; i < n; ++i) {
            for (long j = i + 1; j < n; ++j) {
                const double s = similarity.values(i, j);
                if (s > 0.0 && s >= rule.threshold) {
                    result.values(i, j) = s;
                    result.values(j, i) = s;
                }
            }
        }
        return result;
    }

    if (rule.k < 1) throw TgcrfError(kStage, "top-k requires k >= 1");
    for (long i = 0; i < n; ++i) {
        std::vector<long> neighbors;
        for (long j = 0; j < n; ++j) {
            if (j != i && similarity.values(i, j) > 0.0) neighbors.push_back(j);
        }
        const long keep = std::min<long>(rule.k, static_cast<long>(neighbors.size()));
        std::partial_sort(neighbors.begin(), neighbors.begin() + keep, neighbors.end(),
                          [&](long a, long b) {
                              if (similarity.values(i, a) != similarity.values(i, b)) {
                                  return similarity.values(i, a) > similarity.values(i, b);
                              }
                              return a < b;
                          });
        for (long r = 0; r < keep; ++r) {
            const long j = neighbors[r];
            result.values(i, j) = similarity.values(i, j);
            result.values(j, i) = similarity.values(i, j);
        }
    }
    return result;
}

void write_similarity(const SimilarityMatrix& similarity, std::ostream& out) {
    out << "tgcrf.similarity.v1\n";
    out << similarity_kind_name(similarity.kind) << ' ' << similarity.size() << ' '
        << (similarity.timestep ? std::to_string(*similarity.timestep) : "-") << '\n';
    out << std::setprecision(17);
    const long n = similarity.size();
    for (long i = 0; i < n; ++i) {
        for (long j = i + 1; j < n; ++j) {
            if (similarity.values(i, j) != 0.0) {
                out << i << ' ' << j << ' ' << similarity.values(i, j) << '\n';
            }
        }
    }
}

SimilarityMatrix read_similarity(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "tgcrf.similarity.v1") {
        throw TgcrfError(kStage, "bad similarity file: expected version line tgcrf.similarity.v1");
    }
    if (!std::getline(in, line)) throw TgcrfError(kStage, "bad similarity file: missing header");
    std::istringstream header(line);
    std::string kind_name, timestep_text;
    long n = 0;
    header >> kind_name >> n >> timestep_text;
    if (!header || n < 1) throw TgcrfError(kStage, "bad similarity header '" + line + "'");

    SimilarityMatrix result;
    result.kind = similarity_kind_from_name(kind_name);
    if (timestep_text != "-") result.timestep = std::stol(timestep_text);
    result.values = Eigen::MatrixXd::Zero(n, n);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        long i = 0, j = 0;
        double s = 0.0;
        row >> i >> j >> s;
        if (!row || i < 0 || j < 0 || i >= n || j >= n || i >= j || s < 0.0) {
            throw TgcrfError(kStage, "bad similarity row '" + line + "'");
        }
        result.values(i, j) = s;
        result.values(j, i) = s;
    }
    return result;
}

}  // namespace tgcrf
