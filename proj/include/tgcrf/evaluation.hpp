#pragma once

#include <Eigen/Core>

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace tgcrf {

double rmse(const Eigen::VectorXd& predictions, const Eigen::VectorXd& truths);

enum class NlpdForm {
    StationaryAtResidual,  // mean of 1/2 [ r^2/s2 + log s2 ]; minimum at s2 = r^2
    HalvedQuadratic,       // mean of 1/2 [ r^2/(2 s2) + log s2 ]; minimum at s2 = r^2/2
};

/// Negative log predictive density, averaged over points; log 2 pi omitted.
double nlpd(const Eigen::VectorXd& predictions, const Eigen::VectorXd& variances,
            const Eigen::VectorXd& truths, NlpdForm form = NlpdForm::StationaryAtResidual);

/// NLPD at the per-point optimum s2_i = max(r_i^2, variance floor).
double min_nlpd(const Eigen::VectorXd& predictions, const Eigen::VectorXd& truths);

/// Fraction of points with |y - y*| <= 1.96 sigma*.
double coverage95(const Eigen::VectorXd& predictions, const Eigen::VectorXd& variances,
                  const Eigen::VectorXd& truths);

struct MetricSet {
    double rmse = 0.0;
    double nlpd = 0.0;
    double coverage95 = 0.0;
};

struct PerNodeNlpd {
    double min_nlpd = 0.0;
    double obtained_nlpd = 0.0;
};

/// Per-month and averaged metrics for a set of models, plus the per-node
/// obtained-vs-minimal NLPD decomposition and per-metric model rankings.
struct EvaluationReport {
    std::vector<long> months;
    std::map<std::string, std::map<long, MetricSet>> per_month;   // model -> month -> metrics
    std::map<std::string, MetricSet> averages;                    // model -> mean over months
    std::map<std::string, std::vector<PerNodeNlpd>> per_node_nlpd;  // model -> per node
    std::map<std::string, std::vector<std::string>> ranking;      // metric -> models, best first

    /// Averages and rankings recomputed from the per-month table.
    static EvaluationReport from_monthly_metrics(
        const std::map<std::string, std::map<long, MetricSet>>& per_month);
};

struct ModelMonthOutput {
    Eigen::VectorXd means;
    Eigen::VectorXd variances;
};

/// model -> month -> predictions; months must agree across models.
EvaluationReport build_report(
    const std::map<std::string, std::map<long, ModelMonthOutput>>& outputs,
    const std::map<long, Eigen::VectorXd>& truths);

/// Human-readable table: one row per model, average column then one per month.
std::string render_metric_table(const EvaluationReport& report, const std::string& metric);

/// Machine format: version line, then "model<TAB>month<TAB>metric<TAB>value"
/// records followed by "node<TAB>min_nlpd<TAB>obtained_nlpd" records per model,
/// sorted descending by obtained NLPD.
void write_machine_report(const EvaluationReport& report, std::ostream& out);

}  // namespace tgcrf
