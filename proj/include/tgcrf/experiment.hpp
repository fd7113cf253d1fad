#pragma once

#include "tgcrf/evaluation.hpp"
#include "tgcrf/gcrf.hpp"
#include "tgcrf/predictors.hpp"
#include "tgcrf/similarity.hpp"
#include "tgcrf/synthetic.hpp"
#include "tgcrf/temporal_graph.hpp"
#include "tgcrf/uncertainty.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tgcrf {

enum class Protocol { RefitEachMonth, FitOnce };

/// Full pipeline description: data source, graph construction, base model
/// sweep, structured model roster, and the rolling test protocol.
struct ExperimentConfig {
    std::string dataset_path;               // exclusive with synth
    std::optional<SynthConfig> synth;

    SimilarityKind similarity_kind = SimilarityKind::CommonHistory;
    std::string similarity_attribute = "attr0";
    int history_length = 3;   // h for common-history
    int js_bins = 10;         // histogram bins for js-divergence
    enum class Sparsify { None, TopK, Threshold } sparsify = Sparsify::TopK;
    int sparsify_k = 8;
    double sparsify_threshold = 0.0;

    std::vector<PredictorFamily> families = {PredictorFamily::Linear, PredictorFamily::Gp};
    std::vector<int> lags = {1, 2, 3};

    bool run_gcrf = true;
    bool run_ugcrf = true;
    bool run_ufgcrf = true;

    int window = 12;
    int test_horizon = 12;
    Protocol protocol = Protocol::RefitEachMonth;
    ScalingMode scaling_mode = ScalingMode::Global;
    AlphaMode gcrf_alpha_mode = AlphaMode::PerNode;
    int ufgcrf_hidden_width = 8;
    int ufgcrf_max_epochs = 2000;
    int gcrf_max_iterations = 500;
    std::uint64_t seed = 1;

    std::string output_dir;

    void validate() const;
};

ExperimentConfig parse_experiment_config(std::istream& in);
ExperimentConfig parse_experiment_config_file(const std::string& path);
void write_experiment_config(const ExperimentConfig& config, std::ostream& out);

/// FNV-1a hash of the canonical config text; recorded in the manifest.
std::uint64_t config_hash(const ExperimentConfig& config);

struct ExperimentResult {
    EvaluationReport report;
    std::map<std::string, std::map<long, ModelMonthOutput>> outputs;  // model -> month -> predictions
    std::map<long, Eigen::VectorXd> truths;                           // month -> scaled targets
};

/// Stage entry points. `train` fits everything and serializes models under
/// <out>/models; `predict` loads them and writes <out>/predictions;
/// `evaluate` reads predictions and writes <out>/reports. `run_experiment`
/// chains all three through the filesystem, so a staged run and a single run
/// produce identical bytes.
void run_train_stage(const ExperimentConfig& config);
void run_predict_stage(const ExperimentConfig& config);
ExperimentResult run_evaluate_stage(const ExperimentConfig& config);
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Dataset as the pipeline consumes it (generated or ingested).
TemporalGraphDataset load_experiment_dataset(const ExperimentConfig& config);

// --- versioned model serialization (text, exact round-trip) ---

void write_linear_models(const std::vector<LinearArModel>& models, int lag, std::ostream& out);
std::pair<std::vector<LinearArModel>, int> read_linear_models(std::istream& in);

void write_gp_models(const std::vector<GpModel>& models, int lag, std::ostream& out);
std::pair<std::vector<GpModel>, int> read_gp_models(std::istream& in);

void write_gcrf_params(const GcrfParams& params, std::ostream& out);
GcrfParams read_gcrf_params(std::istream& in);

void write_ugcrf_params(const UgcrfParams& params, std::ostream& out);
UgcrfParams read_ugcrf_params(std::istream& in);

void write_ufgcrf_params(const UfgcrfParams& params, std::ostream& out);
UfgcrfParams read_ufgcrf_params(std::istream& in);

}  // namespace tgcrf
