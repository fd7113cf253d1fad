#include "tgcrf/evaluation.hpp"

#include "tgcrf/common.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace tgcrf {

namespace {

constexpr const char* kStage = "evaluation";

void check_lengths(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() == 0) throw TgcrfError(kStage, "empty input");
    if (a.size() != b.size()) throw TgcrfError(kStage, "length mismatch");
}

}  // namespace

double rmse(const Eigen::VectorXd& predictions, const Eigen::VectorXd& truths) {
    check_lengths(predictions, truths);
    return std::sqrt((predictions - truths).squaredNorm() / static_cast<double>(predictions.size()));
}

double nlpd(const Eigen::VectorXd& predictions, const Eigen::VectorXd& variances,
            const Eigen::VectorXd& truths, NlpdForm form) {
    check_lengths(predictions, truths);
    check_lengths(variances, truths);
    double acc = 0.0;
    for (long i = 0; i < predictions.size(); ++i) {
        const double s2 = variances(i);
        if (!(s2 > 0.0)) throw TgcrfError(kStage, "nonpositive variance at index " + std::to_string(i));
        const double r2 = (truths(i) - predictions(i)) * (truths(i) - predictions(i));
        const double quad = form == NlpdForm::StationaryAtResidual ? r2 / s2 : r2 / (2.0 * s2);
        acc += 0.5 * (quad + std::log(s2));
    }
    return acc / static_cast<double>(predictions.size());
}

double min_nlpd(const Eigen::VectorXd& predictions, const Eigen::VectorXd& truths) {
    check_lengths(predictions, truths);
    Eigen::VectorXd best_variance(predictions.size());
    for (long i = 0; i < predictions.size(); ++i) {
        const double r = truths(i) - predictions(i);
        best_variance(i) = floored_variance(r * r);
    }
    return nlpd(predictions, best_variance, truths);
}

double coverage95(const Eigen::VectorXd& predictions, const Eigen::VectorXd& variances,
                  const Eigen::VectorXd& truths) {
    check_lengths(predictions, truths);
    check_lengths(variances, truths);
    long covered = 0;
    for (long i = 0; i < predictions.size(); ++i) {
        if (!(variances(i) > 0.0)) {
            throw TgcrfError(kStage, "nonpositive variance at index " + std::to_string(i));
        }
        if (std::abs(truths(i) - predictions(i)) <= 1.96 * std::sqrt(variances(i))) ++covered;
    }
    return static_cast<double>(covered) / static_cast<double>(predictions.size());
}

EvaluationReport EvaluationReport::from_monthly_metrics(
    const std::map<std::string, std::map<long, MetricSet>>& per_month) {
    if (per_month.empty()) throw TgcrfError(kStage, "no models to report");

    EvaluationReport report;
    report.per_month = per_month;
    for (const auto& [month, metrics] : per_month.begin()->second) report.months.push_back(month);
    for (const auto& [model, months] : per_month) {
        if (months.size() != report.months.size()) {
            throw TgcrfError(kStage, "month mismatch for model " + model);
        }
        MetricSet avg;
        for (const auto& [month, metrics] : months) {
            if (std::find(report.months.begin(), report.months.end(), month) == report.months.end()) {
                throw TgcrfError(kStage, "month mismatch for model " + model);
            }
            avg.rmse += metrics.rmse;
            avg.nlpd += metrics.nlpd;
            avg.coverage95 += metrics.coverage95;
        }
        const double n = static_cast<double>(months.size());
        avg.rmse /= n;
        avg.nlpd /= n;
        avg.coverage95 /= n;
        report.averages[model] = avg;
    }

    auto rank_by = [&](auto key) {
        std::vector<std::string> names;
        for (const auto& [model, metrics] : report.averages) names.push_back(model);
        std::stable_sort(names.begin(), names.end(), [&](const std::string& a, const std::string& b) {
            const double ka = key(report.averages.at(a));
            const double kb = key(report.averages.at(b));
            if (ka != kb) return ka < kb;
            return a < b;  // deterministic tie-break by name
        });
        return names;
    };
    report.ranking["rmse"] = rank_by([](const MetricSet& m) { return m.rmse; });
    report.ranking["nlpd"] = rank_by([](const MetricSet& m) { return m.nlpd; });
    report.ranking["coverage95"] =
        rank_by([](const MetricSet& m) { return std::abs(m.coverage95 - 0.95); });
    return report;
}

EvaluationReport build_report(
    const std::map<std::string, std::map<long, ModelMonthOutput>>& outputs,
    const std::map<long, Eigen::VectorXd>& truths) {
    if (outputs.empty()) throw TgcrfError(kStage, "no model outputs");

    std::map<std::string, std::map<long, MetricSet>> per_month;
    for (const auto& [model, months] : outputs) {
        for (const auto& [month, output] : months) {
            auto truth_it = truths.find(month);
            if (truth_it == truths.end()) {
                throw TgcrfError(kStage, "no truths for month " + std::to_string(month));
            }
            MetricSet metrics;
            metrics.rmse = rmse(output.means, truth_it->second);
            metrics.nlpd = nlpd(output.means, output.variances, truth_it->second);
            metrics.coverage95 = coverage95(output.means, output.variances, truth_it->second);
            per_month[model][month] = metrics;
        }
    }
    EvaluationReport report = EvaluationReport::from_monthly_metrics(per_month);

    // Per-node decomposition: obtained and minimal NLPD averaged over months.
    for (const auto& [model, months] : outputs) {
        const long n = months.begin()->second.means.size();
        std::vector<PerNodeNlpd> per_node(n);
        for (const auto& [month, output] : months) {
            const Eigen::VectorXd& truth = truths.at(month);
            for (long i = 0; i < n; ++i) {
                const double r = truth(i) - output.means(i);
                const double s2 = output.variances(i);
                per_node[i].obtained_nlpd += 0.5 * (r * r / s2 + std::log(s2));
                const double best = floored_variance(r * r);
                per_node[i].min_nlpd += 0.5 * (r * r / best + std::log(best));
            }
        }
        for (auto& entry : per_node) {
            entry.obtained_nlpd /= static_cast<double>(months.size());
            entry.min_nlpd /= static_cast<double>(months.size());
        }
        report.per_node_nlpd[model] = std::move(per_node);
    }
    return report;
}

std::string render_metric_table(const EvaluationReport& report, const std::string& metric) {
    auto pick = [&](const MetricSet& m) {
        if (metric == "rmse") return m.rmse;
        if (metric == "nlpd") return m.nlpd;
        if (metric == "coverage95") return m.coverage95;
        throw TgcrfError(kStage, "unknown metric '" + metric + "'");
    };

    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << std::setw(18) << std::left << metric << std::right << std::setw(10) << "average";
    for (long month : report.months) out << std::setw(10) << ("m" + std::to_string(month));
    out << '\n';
    for (const auto& [model, avg] : report.averages) {
        out << std::setw(18) << std::left << model << std::right << std::setw(10) << pick(avg);
        for (long month : report.months) out << std::setw(10) << pick(report.per_month.at(model).at(month));
        out << '\n';
    }
    return out.str();
}

void write_machine_report(const EvaluationReport& report, std::ostream& out) {
    out << "tgcrf.report.v1\n";
    out << std::setprecision(10);
    for (const auto& [model, months] : report.per_month) {
        for (const auto& [month, metrics] : months) {
            out << model << '\t' << month << '\t' << "rmse" << '\t' << metrics.rmse << '\n';
            out << model << '\t' << month << '\t' << "nlpd" << '\t' << metrics.nlpd << '\n';
            out << model << '\t' << month << '\t' << "coverage95" << '\t' << metrics.coverage95 << '\n';
        }
        const MetricSet& avg = report.averages.at(model);
        out << model << '\t' << "average" << '\t' << "rmse" << '\t' << avg.rmse << '\n';
        out << model << '\t' << "average" << '\t' << "nlpd" << '\t' << avg.nlpd << '\n';
        out << model << '\t' << "average" << '\t' << "coverage95" << '\t' << avg.coverage95 << '\n';
    }
    for (const auto& [model, nodes] : report.per_node_nlpd) {
        std::vector<std::size_t> order(nodes.size());
        for (std::size_t i = 0; i < nodes.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return nodes[a].obtained_nlpd > nodes[b].obtained_nlpd;
        });
        for (std::size_t i : order) {
            out << model << "\tnode" << i << '\t' << nodes[i].min_nlpd << '\t'
                << nodes[i].obtained_nlpd << '\n';
        }
    }
}

}  // namespace tgcrf
