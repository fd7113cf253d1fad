#include "tgcrf/experiment.hpp"

#include "tgcrf/common.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fs = std::filesystem;

namespace tgcrf {

namespace {

constexpr const char* kStage = "cli-harness";

std::string trim(const std::string& text) {
    const auto begin = text.find_first_not_of(" \t");
    const auto end = text.find_last_not_of(" \t");
    return begin == std::string::npos ? std::string() : text.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> items;
    std::string item;
    std::istringstream ss(text);
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) items.push_back(item);
    }
    return items;
}

std::string structured_name(const std::string& kind, PredictorFamily family) {
    return kind + "+" + family_name(family);
}

std::string base_name(PredictorFamily family, int lag) {
    return family_name(family) + " lag" + std::to_string(lag);
}

std::string family_file_tag(PredictorFamily family) {
    return family == PredictorFamily::Linear ? "lr" : "gp";
}

}  // namespace

void ExperimentConfig::validate() const {
    if (dataset_path.empty() == !synth.has_value()) {
        throw TgcrfError(kStage, "config must name exactly one data source (dataset or synth.*)");
    }
    if (synth) synth->validate();
    if (families.empty()) throw TgcrfError(kStage, "at least one predictor family required");
    if (lags.empty()) throw TgcrfError(kStage, "at least one lag required");
    for (int lag : lags) {
        if (lag < 1) throw TgcrfError(kStage, "lags must be >= 1");
    }
    const int max_lag = *std::max_element(lags.begin(), lags.end());
    if (window < max_lag + 1) {
        throw TgcrfError(kStage, "window length " + std::to_string(window) +
                                     " must be >= max lag + 1 = " + std::to_string(max_lag + 1));
    }
    if (test_horizon < 1) throw TgcrfError(kStage, "test horizon must be >= 1");
    if (similarity_kind == SimilarityKind::Comorbidity) {
        throw TgcrfError(kStage, "the pipeline cannot build comorbidity graphs: no record stream "
                                 "in the dataset format");
    }
    if (history_length < 1) throw TgcrfError(kStage, "similarity.h must be >= 1");
    if (js_bins < 2) throw TgcrfError(kStage, "similarity.js_bins must be >= 2");
    if (ufgcrf_hidden_width < 0) throw TgcrfError(kStage, "ufgcrf.hidden_width must be >= 0");
}

ExperimentConfig parse_experiment_config(std::istream& in) {
    ExperimentConfig config;
    std::ostringstream synth_text;
    bool saw_synth = false;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || trim(line)[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw TgcrfError(kStage, "bad config line " + std::to_string(line_no) + ": '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key.rfind("synth.", 0) == 0) {
                synth_text << key.substr(6) << " = " << value << '\n';
                saw_synth = true;
            } else if (key == "dataset") config.dataset_path = value;
            else if (key == "similarity") config.similarity_kind = similarity_kind_from_name(value);
            else if (key == "similarity.attribute") config.similarity_attribute = value;
            else if (key == "similarity.h") config.history_length = std::stoi(value);
            else if (key == "similarity.js_bins") config.js_bins = std::stoi(value);
            else if (key == "sparsify") {
                if (value == "none") config.sparsify = ExperimentConfig::Sparsify::None;
                else if (value == "top-k") config.sparsify = ExperimentConfig::Sparsify::TopK;
                else if (value == "threshold") config.sparsify = ExperimentConfig::Sparsify::Threshold;
                else throw TgcrfError(kStage, "unknown sparsify rule '" + value + "'");
            } else if (key == "sparsify.k") config.sparsify_k = std::stoi(value);
            else if (key == "sparsify.threshold") config.sparsify_threshold = std::stod(value);
            else if (key == "families") {
                config.families.clear();
                for (const auto& item : split_list(value)) {
                    if (item == "lr") config.families.push_back(PredictorFamily::Linear);
                    else if (item == "gp") config.families.push_back(PredictorFamily::Gp);
                    else throw TgcrfError(kStage, "unknown family '" + item + "'");
                }
            } else if (key == "lags") {
                config.lags.clear();
                for (const auto& item : split_list(value)) config.lags.push_back(std::stoi(item));
            } else if (key == "models") {
                config.run_gcrf = config.run_ugcrf = config.run_ufgcrf = false;
                for (const auto& item : split_list(value)) {
                    if (item == "gcrf") config.run_gcrf = true;
                    else if (item == "ugcrf") config.run_ugcrf = true;
                    else if (item == "ufgcrf") config.run_ufgcrf = true;
                    else if (item == "none") continue;
                    else throw TgcrfError(kStage, "unknown structured model '" + item + "'");
                }
            } else if (key == "window") config.window = std::stoi(value);
            else if (key == "test_horizon") config.test_horizon = std::stoi(value);
            else if (key == "protocol") {
                if (value == "refit-each-month") config.protocol = Protocol::RefitEachMonth;
                else if (value == "fit-once") config.protocol = Protocol::FitOnce;
                else throw TgcrfError(kStage, "unknown protocol '" + value + "'");
            } else if (key == "scaling") {
                if (value == "global") config.scaling_mode = ScalingMode::Global;
                else if (value == "per-node") config.scaling_mode = ScalingMode::PerNode;
                else throw TgcrfError(kStage, "unknown scaling mode '" + value + "'");
            } else if (key == "alpha_mode") {
                if (value == "per-node") config.gcrf_alpha_mode = AlphaMode::PerNode;
                else if (value == "shared") config.gcrf_alpha_mode = AlphaMode::Shared;
                else throw TgcrfError(kStage, "unknown alpha mode '" + value + "'");
            } else if (key == "ufgcrf.hidden_width") config.ufgcrf_hidden_width = std::stoi(value);
            else if (key == "ufgcrf.max_epochs") config.ufgcrf_max_epochs = std::stoi(value);
            else if (key == "gcrf.max_iterations") config.gcrf_max_iterations = std::stoi(value);
            else if (key == "seed") config.seed = std::stoull(value);
            else if (key == "output") config.output_dir = value;
            else throw TgcrfError(kStage, "unknown config key '" + key + "'");
        } catch (const TgcrfError&) {
            throw;
        } catch (const std::exception&) {
            throw TgcrfError(kStage, "bad value for '" + key + "' at line " + std::to_string(line_no));
        }
    }
    if (saw_synth) {
        std::istringstream synth_in(synth_text.str());
        config.synth = parse_synth_config(synth_in);
    }
    config.validate();
    return config;
}

ExperimentConfig parse_experiment_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TgcrfError(kStage, "cannot open config file '" + path + "'");
    return parse_experiment_config(in);
}

void write_experiment_config(const ExperimentConfig& config, std::ostream& out) {
    out << std::setprecision(17);
    if (!config.dataset_path.empty()) out << "dataset = " << config.dataset_path << '\n';
    if (config.synth) {
        std::ostringstream synth_out;
        write_synth_config(*config.synth, synth_out);
        std::istringstream lines(synth_out.str());
        std::string line;
        while (std::getline(lines, line)) out << "synth." << line << '\n';
    }
    out << "similarity = " << similarity_kind_name(config.similarity_kind) << '\n';
    out << "similarity.attribute = " << config.similarity_attribute << '\n';
    out << "similarity.h = " << config.history_length << '\n';
    out << "similarity.js_bins = " << config.js_bins << '\n';
    switch (config.sparsify) {
        case ExperimentConfig::Sparsify::None: out << "sparsify = none\n"; break;
        case ExperimentConfig::Sparsify::TopK: out << "sparsify = top-k\n"; break;
        case ExperimentConfig::Sparsify::Threshold: out << "sparsify = threshold\n"; break;
    }
    out << "sparsify.k = " << config.sparsify_k << '\n';
    out << "sparsify.threshold = " << config.sparsify_threshold << '\n';
    out << "families = ";
    for (std::size_t i = 0; i < config.families.size(); ++i) {
        out << (i ? "," : "") << family_file_tag(config.families[i]);
    }
    out << '\n';
    out << "lags = ";
    for (std::size_t i = 0; i < config.lags.size(); ++i) out << (i ? "," : "") << config.lags[i];
    out << '\n';
    out << "models = ";
    {
        std::vector<std::string> models;
        if (config.run_gcrf) models.push_back("gcrf");
        if (config.run_ugcrf) models.push_back("ugcrf");
        if (config.run_ufgcrf) models.push_back("ufgcrf");
        if (models.empty()) models.push_back("none");
        for (std::size_t i = 0; i < models.size(); ++i) out << (i ? "," : "") << models[i];
    }
    out << '\n';
    out << "window = " << config.window << '\n';
    out << "test_horizon = " << config.test_horizon << '\n';
    out << "protocol = "
        << (config.protocol == Protocol::RefitEachMonth ? "refit-each-month" : "fit-once") << '\n';
    out << "scaling = " << (config.scaling_mode == ScalingMode::Global ? "global" : "per-node") << '\n';
    out << "alpha_mode = " << (config.gcrf_alpha_mode == AlphaMode::PerNode ? "per-node" : "shared")
        << '\n';
    out << "ufgcrf.hidden_width = " << config.ufgcrf_hidden_width << '\n';
    out << "ufgcrf.max_epochs = " << config.ufgcrf_max_epochs << '\n';
    out << "gcrf.max_iterations = " << config.gcrf_max_iterations << '\n';
    out << "seed = " << config.seed << '\n';
}

std::uint64_t config_hash(const ExperimentConfig& config) {
    std::ostringstream text;
    write_experiment_config(config, text);
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : text.str()) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

TemporalGraphDataset load_experiment_dataset(const ExperimentConfig& config) {
    TemporalGraphDataset ds =
        config.synth ? generate_ar_graph(*config.synth).dataset
                     : ingest_node_series_file(config.dataset_path);
    for (long t = 0; t < ds.n_timesteps(); ++t) {
        for (long n = 0; n < ds.n_nodes(); ++n) {
            if (!ds.masks(t, n)) {
                throw TgcrfError(kStage, "experiment requires fully observed nodes; node " +
                                             ds.node_ids[n] + " missing at timestep " +
                                             std::to_string(ds.timesteps[t]));
            }
        }
    }
    return ds;
}

namespace {

// ---------- shared pipeline machinery ----------

struct PipelineContext {
    ExperimentConfig config;
    TemporalGraphDataset raw;
    TemporalGraphDataset scaled;
    TargetScaler scaler;
    long first_test = 0;  // timestep index of the first test month
    int max_lag = 0;

    long similarity_reach() const {
        return config.similarity_kind == SimilarityKind::CommonHistory ? config.history_length : 1;
    }
};

PipelineContext make_context(const ExperimentConfig& config) {
    config.validate();
    PipelineContext ctx;
    ctx.config = config;
    ctx.raw = load_experiment_dataset(config);
    const long T = ctx.raw.n_timesteps();
    const long P = config.test_horizon;
    ctx.first_test = T - P;
    ctx.max_lag = *std::max_element(config.lags.begin(), config.lags.end());

    // The first training window must start after enough history for lag
    // features and similarity construction; otherwise the windows collide
    // with the data start (or each other) and the run is rejected up front.
    const long earliest_needed = ctx.first_test - config.window;
    const long reach = std::max<long>(ctx.max_lag, ctx.similarity_reach());
    if (earliest_needed < reach) {
        throw TgcrfError(kStage, "dataset too short for the configured windows: first training "
                                 "window starts at index " + std::to_string(earliest_needed) +
                                 " but needs " + std::to_string(reach) + " earlier timesteps");
    }
    if (config.protocol == Protocol::FitOnce && ctx.first_test - P < reach) {
        throw TgcrfError(kStage, "fit-once protocol needs " + std::to_string(P) +
                                 " pre-test months for horizon calibration plus " +
                                 std::to_string(reach) + " of history");
    }

    ctx.scaler = TargetScaler::fit(ctx.raw, config.scaling_mode, 0, ctx.first_test);
    ctx.scaled = ctx.scaler.apply(ctx.raw);
    return ctx;
}

SimilarityMatrix month_similarity(const PipelineContext& ctx, long t) {
    const ExperimentConfig& config = ctx.config;
    SimilarityMatrix sim;
    if (config.similarity_kind == SimilarityKind::CommonHistory) {
        sim = common_history_similarity(ctx.raw, config.similarity_attribute, config.history_length, t);
    } else {
        sim = attribute_histogram_similarity(ctx.raw, config.similarity_attribute, config.js_bins, t);
    }
    switch (config.sparsify) {
        case ExperimentConfig::Sparsify::None: break;
        case ExperimentConfig::Sparsify::TopK:
            sim = sparsify(sim, SparsifyRule::top_k(config.sparsify_k));
            break;
        case ExperimentConfig::Sparsify::Threshold:
            sim = sparsify(sim, SparsifyRule::min_weight(config.sparsify_threshold));
            break;
    }
    return sim;
}

struct FamilyModels {
    PredictorFamily family = PredictorFamily::Linear;
    int lag = 1;
    std::vector<FittedPredictor> per_node;
};

// Fits every configured lag on the window and keeps the one with the lowest
// pooled in-window one-step RMSE.
FamilyModels fit_family(const PipelineContext& ctx, PredictorFamily family, long win_begin,
                        long win_end) {
    const long n = ctx.scaled.n_nodes();
    FamilyModels best;
    best.family = family;
    std::vector<CandidateScore> scores;
    std::vector<std::vector<FittedPredictor>> fits_per_lag;

    for (int lag : ctx.config.lags) {
        std::vector<FittedPredictor> fits;
        fits.reserve(n);
        double sse = 0.0;
        long count = 0;
        for (long i = 0; i < n; ++i) {
            const LagFeatureMatrix features =
                build_lag_features(ctx.scaled, static_cast<int>(i), lag, win_begin, win_end);
            FittedPredictor fitted;
            fitted.family = family;
            fitted.lag = lag;
            if (family == PredictorFamily::Linear) {
                fitted.model = fit_linear_ar(features);
            } else {
                fitted.model = fit_gp(features);
            }
            for (long r = 0; r < features.rows(); ++r) {
                const double err = predict(fitted, features.X.row(r)).mean - features.y(r);
                sse += err * err;
                ++count;
            }
            fits.push_back(std::move(fitted));
        }
        scores.push_back({lag, std::sqrt(sse / static_cast<double>(count))});
        fits_per_lag.push_back(std::move(fits));
    }

    const std::size_t pick = select_by_validation_rmse(scores);
    best.lag = scores[pick].lag;
    best.per_node = std::move(fits_per_lag[pick]);
    return best;
}

Eigen::VectorXd lag_vector(const TemporalGraphDataset& ds, long t, int node, int lag) {
    Eigen::VectorXd x(lag);
    for (int l = 0; l < lag; ++l) x(l) = ds.targets(t - 1 - l, node);
    return x;
}

struct ChannelOutput {
    Eigen::MatrixXd R;       // 1 x N
    Eigen::MatrixXd sigma2;  // 1 x N
    Eigen::MatrixXd features;  // N x (lag + 1): lag features then log sigma2
};

// One-step base predictions at month t from true lag features.
ChannelOutput channel_at(const PipelineContext& ctx, const FamilyModels& models, long t) {
    const long n = ctx.scaled.n_nodes();
    ChannelOutput out;
    out.R.resize(1, n);
    out.sigma2.resize(1, n);
    out.features.resize(n, models.lag + 1);
    for (long i = 0; i < n; ++i) {
        const Eigen::VectorXd x = lag_vector(ctx.scaled, t, static_cast<int>(i), models.lag);
        const PredictiveDistribution pred = predict(models.per_node[i], x);
        out.R(0, i) = pred.mean;
        out.sigma2(0, i) = pred.variance;
        out.features.row(i).head(models.lag) = x;
        out.features(i, models.lag) = std::log(pred.variance);
    }
    return out;
}

// Iterated multi-step predictions for months [start, start + horizon), feeding
// predicted means back into the lag buffer.
std::vector<ChannelOutput> channel_rollout(const PipelineContext& ctx, const FamilyModels& models,
                                           long start, int horizon) {
    const long n = ctx.scaled.n_nodes();
    std::vector<ChannelOutput> out(horizon);
    Eigen::MatrixXd buffer(n, models.lag);  // column l holds the value at t-1-l
    for (long i = 0; i < n; ++i) {
        buffer.row(i) = lag_vector(ctx.scaled, start, static_cast<int>(i), models.lag).transpose();
    }
    for (int p = 0; p < horizon; ++p) {
        ChannelOutput& slot = out[p];
        slot.R.resize(1, n);
        slot.sigma2.resize(1, n);
        slot.features.resize(n, models.lag + 1);
        for (long i = 0; i < n; ++i) {
            const Eigen::VectorXd x = buffer.row(i).transpose();
            const PredictiveDistribution pred = predict(models.per_node[i], x);
            slot.R(0, i) = pred.mean;
            slot.sigma2(0, i) = pred.variance;
            slot.features.row(i).head(models.lag) = x;
            slot.features(i, models.lag) = std::log(pred.variance);
        }
        for (long i = 0; i < n; ++i) {
            for (int l = models.lag - 1; l > 0; --l) buffer(i, l) = buffer(i, l - 1);
            buffer(i, 0) = slot.R(0, i);
        }
    }
    return out;
}

struct StructuredModels {
    bool has_gcrf = false;
    GcrfParams gcrf;
    bool has_ugcrf = false;
    UgcrfParams ugcrf;
    bool has_ufgcrf = false;
    UfgcrfParams ufgcrf;
};

struct TrainingData {
    std::vector<GcrfSnapshot> snapshots;
    std::vector<Eigen::MatrixXd> sigma2;    // per snapshot
    std::vector<Eigen::MatrixXd> features;  // per snapshot
    std::vector<int> horizons;              // per snapshot, 1-based
    int n_horizons = 1;
};

StructuredModels train_structured(const PipelineContext& ctx, const TrainingData& data,
                                  std::uint64_t seed) {
    const ExperimentConfig& config = ctx.config;
    const int n_nodes = static_cast<int>(ctx.scaled.n_nodes());
    StructuredModels out;

    GcrfTrainConfig tc;
    tc.max_iterations = config.gcrf_max_iterations;

    if (config.run_gcrf) {
        GcrfParams init = config.gcrf_alpha_mode == AlphaMode::PerNode
                              ? GcrfParams::per_node(1, 1, n_nodes)
                              : GcrfParams::shared(1, 1);
        out.gcrf = train_gcrf(data.snapshots, init, tc).params;
        out.has_gcrf = true;
    }
    if (config.run_ugcrf) {
        UgcrfParams init = UgcrfParams::init(1, data.n_horizons, 1);
        // ci per horizon: pooled coverage of the base predictions feeding the
        // snapshots at that horizon.
        for (int p = 1; p <= data.n_horizons; ++p) {
            long covered = 0, total = 0;
            for (std::size_t s = 0; s < data.snapshots.size(); ++s) {
                if (data.horizons[s] != p) continue;
                const GcrfSnapshot& snap = data.snapshots[s];
                for (long i = 0; i < snap.n_nodes(); ++i) {
                    const double err = std::abs(snap.y(i) - snap.R(0, i));
                    if (err <= 1.96 * std::sqrt(data.sigma2[s](0, i))) ++covered;
                    ++total;
                }
            }
            init.ci(0, p - 1) =
                total > 0 ? std::max(static_cast<double>(covered) / total, 0.01) : 1.0;
        }
        std::vector<UgcrfSnapshot> snaps(data.snapshots.size());
        for (std::size_t s = 0; s < data.snapshots.size(); ++s) {
            snaps[s].base = data.snapshots[s];
            snaps[s].sigma2 = data.sigma2[s];
            snaps[s].horizon = data.horizons[s];
        }
        out.ugcrf = train_ugcrf(snaps, init, tc).params;
        out.has_ugcrf = true;
    }
    if (config.run_ufgcrf) {
        const int input_dim = static_cast<int>(data.features.front().cols());
        UfgcrfParams init = UfgcrfParams::init(1, 1, input_dim, config.ufgcrf_hidden_width, seed);
        std::vector<UfgcrfSnapshot> snaps(data.snapshots.size());
        for (std::size_t s = 0; s < data.snapshots.size(); ++s) {
            snaps[s].base = data.snapshots[s];
            snaps[s].features = data.features[s];
        }
        GradientAscentConfig gc;
        gc.max_epochs = config.ufgcrf_max_epochs;
        out.ufgcrf = train_ufgcrf(snaps, init, gc).params;
        out.has_ufgcrf = true;
    }
    return out;
}

// ---------- output directory layout ----------

struct Paths {
    fs::path root, models, predictions, reports;
    fs::path manifest, dataset, incomplete;

    explicit Paths(const std::string& out_dir) {
        if (out_dir.empty()) throw TgcrfError(kStage, "output directory not set");
        root = out_dir;
        models = root / "models";
        predictions = root / "predictions";
        reports = root / "reports";
        manifest = root / "manifest.txt";
        dataset = root / "dataset.csv";
        incomplete = root / "INCOMPLETE";
    }

    fs::path model_dir(const ExperimentConfig& config, long month_label) const {
        return config.protocol == Protocol::FitOnce
                   ? models / "global"
                   : models / ("month_" + std::to_string(month_label));
    }
};

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw TgcrfError(kStage, "cannot write '" + path.string() + "'");
    return out;
}

std::ifstream open_in(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw TgcrfError(kStage, "cannot read '" + path.string() + "'");
    return in;
}

void write_manifest(const PipelineContext& ctx, const Paths& paths) {
    auto out = open_out(paths.manifest);
    out << "tgcrf.manifest.v1\n";
    out << "config_hash " << std::hex << config_hash(ctx.config) << std::dec << '\n';
    out << "rng " << Rng::algorithm_name() << '\n';
    out << "seed " << ctx.config.seed << '\n';
    out << "--- config ---\n";
    write_experiment_config(ctx.config, out);
}

// ---------- train stage ----------

void write_family_models(const FamilyModels& models, std::ostream& out) {
    if (models.family == PredictorFamily::Linear) {
        std::vector<LinearArModel> linear;
        for (const auto& fitted : models.per_node) {
            linear.push_back(std::get<LinearArModel>(fitted.model));
        }
        write_linear_models(linear, models.lag, out);
    } else {
        std::vector<GpModel> gps;
        for (const auto& fitted : models.per_node) gps.push_back(std::get<GpModel>(fitted.model));
        write_gp_models(gps, models.lag, out);
    }
}

FamilyModels read_family_models(PredictorFamily family, std::istream& in) {
    FamilyModels models;
    models.family = family;
    if (family == PredictorFamily::Linear) {
        auto [linear, lag] = read_linear_models(in);
        models.lag = lag;
        for (auto& model : linear) {
            models.per_node.push_back({family, lag, std::move(model)});
        }
    } else {
        auto [gps, lag] = read_gp_models(in);
        models.lag = lag;
        for (auto& model : gps) {
            models.per_node.push_back({family, lag, std::move(model)});
        }
    }
    return models;
}

TrainingData build_training_data(const PipelineContext& ctx, const FamilyModels& models,
                                 long win_begin, long win_end) {
    TrainingData data;
    const long m_first = win_begin + models.lag;
    for (long m = m_first; m < win_end; ++m) {
        const ChannelOutput channel = channel_at(ctx, models, m);
        GcrfSnapshot snap;
        snap.R = channel.R;
        snap.S = {month_similarity(ctx, m).values};
        snap.y = ctx.scaled.targets.row(m).transpose();
        data.snapshots.push_back(std::move(snap));
        data.sigma2.push_back(channel.sigma2);
        data.features.push_back(channel.features);
        data.horizons.push_back(1);
    }
    data.n_horizons = 1;
    return data;
}

TrainingData build_rollout_training_data(const PipelineContext& ctx, const FamilyModels& models,
                                         long anchor, int horizon) {
    TrainingData data;
    const auto rollout = channel_rollout(ctx, models, anchor, horizon);
    for (int p = 0; p < horizon; ++p) {
        const long m = anchor + p;
        GcrfSnapshot snap;
        snap.R = rollout[p].R;
        snap.S = {month_similarity(ctx, m).values};
        snap.y = ctx.scaled.targets.row(m).transpose();
        data.snapshots.push_back(std::move(snap));
        data.sigma2.push_back(rollout[p].sigma2);
        data.features.push_back(rollout[p].features);
        data.horizons.push_back(p + 1);
    }
    data.n_horizons = horizon;
    return data;
}

void train_one_unit(const PipelineContext& ctx, const Paths& paths, long month_label,
                    long win_begin, long win_end, bool rollout) {
    const fs::path dir = paths.model_dir(ctx.config, month_label);
    fs::create_directories(dir);
    for (std::size_t f = 0; f < ctx.config.families.size(); ++f) {
        const PredictorFamily family = ctx.config.families[f];
        const FamilyModels models = fit_family(ctx, family, win_begin, win_end);
        {
            auto out = open_out(dir / ("base_" + family_file_tag(family) + ".txt"));
            write_family_models(models, out);
        }
        const TrainingData data =
            rollout ? build_rollout_training_data(ctx, models, ctx.first_test - ctx.config.test_horizon,
                                                  ctx.config.test_horizon)
                    : build_training_data(ctx, models, win_begin, win_end);
        const std::uint64_t seed =
            ctx.config.seed ^ (static_cast<std::uint64_t>(month_label) << 8) ^ (f + 1);
        const StructuredModels structured = train_structured(ctx, data, seed);
        const std::string tag = family_file_tag(family);
        if (structured.has_gcrf) {
            auto out = open_out(dir / ("gcrf_" + tag + ".txt"));
            write_gcrf_params(structured.gcrf, out);
        }
        if (structured.has_ugcrf) {
            auto out = open_out(dir / ("ugcrf_" + tag + ".txt"));
            write_ugcrf_params(structured.ugcrf, out);
        }
        if (structured.has_ufgcrf) {
            auto out = open_out(dir / ("ufgcrf_" + tag + ".txt"));
            write_ufgcrf_params(structured.ufgcrf, out);
        }
    }
}

void train_stage(const PipelineContext& ctx, const Paths& paths) {
    fs::create_directories(paths.root);
    fs::create_directories(paths.models);
    write_manifest(ctx, paths);
    {
        auto out = open_out(paths.dataset);
        serialize_dataset(ctx.raw, out);
    }
    if (ctx.config.protocol == Protocol::FitOnce) {
        train_one_unit(ctx, paths, 0, ctx.first_test - ctx.config.window, ctx.first_test, true);
    } else {
        for (int p = 0; p < ctx.config.test_horizon; ++p) {
            const long t = ctx.first_test + p;
            train_one_unit(ctx, paths, ctx.raw.timesteps[t], t - ctx.config.window, t, false);
        }
    }
}

// ---------- predict stage ----------

struct LoadedUnit {
    std::map<PredictorFamily, FamilyModels> base;
    std::map<PredictorFamily, GcrfParams> gcrf;
    std::map<PredictorFamily, UgcrfParams> ugcrf;
    std::map<PredictorFamily, UfgcrfParams> ufgcrf;
};

LoadedUnit load_unit(const PipelineContext& ctx, const Paths& paths, long month_label) {
    const fs::path dir = paths.model_dir(ctx.config, month_label);
    LoadedUnit unit;
    for (PredictorFamily family : ctx.config.families) {
        const std::string tag = family_file_tag(family);
        {
            auto in = open_in(dir / ("base_" + tag + ".txt"));
            unit.base.emplace(family, read_family_models(family, in));
        }
        if (ctx.config.run_gcrf) {
            auto in = open_in(dir / ("gcrf_" + tag + ".txt"));
            unit.gcrf.emplace(family, read_gcrf_params(in));
        }
        if (ctx.config.run_ugcrf) {
            auto in = open_in(dir / ("ugcrf_" + tag + ".txt"));
            unit.ugcrf.emplace(family, read_ugcrf_params(in));
        }
        if (ctx.config.run_ufgcrf) {
            auto in = open_in(dir / ("ufgcrf_" + tag + ".txt"));
            unit.ufgcrf.emplace(family, read_ufgcrf_params(in));
        }
    }
    return unit;
}

using MonthPredictions = std::map<std::string, std::vector<PredictiveDistribution>>;

MonthPredictions predict_month(const PipelineContext& ctx, const LoadedUnit& unit, long t,
                               int horizon, const std::map<PredictorFamily, ChannelOutput>& channels) {
    MonthPredictions predictions;
    const SimilarityMatrix sim = month_similarity(ctx, t);
    for (PredictorFamily family : ctx.config.families) {
        const FamilyModels& models = unit.base.at(family);
        const ChannelOutput& channel = channels.at(family);
        std::vector<PredictiveDistribution> base(ctx.scaled.n_nodes());
        for (long i = 0; i < ctx.scaled.n_nodes(); ++i) {
            base[i] = {channel.R(0, i), channel.sigma2(0, i)};
        }
        predictions[base_name(family, models.lag)] = std::move(base);

        GcrfSnapshot snap;
        snap.R = channel.R;
        snap.S = {sim.values};
        if (ctx.config.run_gcrf) {
            predictions[structured_name("GCRF", family)] =
                predict_structured(unit.gcrf.at(family), snap);
        }
        if (ctx.config.run_ugcrf) {
            UgcrfSnapshot usnap;
            usnap.base = snap;
            usnap.sigma2 = channel.sigma2;
            usnap.horizon = horizon;
            predictions[structured_name("uGCRF", family)] =
                predict_structured(unit.ugcrf.at(family), usnap);
        }
        if (ctx.config.run_ufgcrf) {
            UfgcrfSnapshot fsnap;
            fsnap.base = snap;
            fsnap.features = channel.features;
            predictions[structured_name("ufGCRF", family)] =
                predict_structured(unit.ufgcrf.at(family), fsnap);
        }
    }
    return predictions;
}

void write_predictions(const PipelineContext& ctx, const Paths& paths, long month_label,
                       const MonthPredictions& predictions) {
    auto out = open_out(paths.predictions / ("month_" + std::to_string(month_label) + ".tsv"));
    out << "tgcrf.predictions.v1\n";
    out << "month " << month_label << '\n';
    out << "model\tnode\tmean\tvariance\n";
    out << std::setprecision(10);
    for (const auto& [model, values] : predictions) {
        for (long i = 0; i < static_cast<long>(values.size()); ++i) {
            out << model << '\t' << ctx.scaled.node_ids[i] << '\t' << values[i].mean << '\t'
                << values[i].variance << '\n';
        }
    }
}

void predict_stage(const PipelineContext& ctx, const Paths& paths) {
    fs::create_directories(paths.predictions);
    const int P = ctx.config.test_horizon;
    if (ctx.config.protocol == Protocol::FitOnce) {
        const LoadedUnit unit = load_unit(ctx, paths, 0);
        // Iterated rollouts over the whole test span, one per family.
        std::map<PredictorFamily, std::vector<ChannelOutput>> rollouts;
        for (PredictorFamily family : ctx.config.families) {
            rollouts.emplace(family,
                             channel_rollout(ctx, unit.base.at(family), ctx.first_test, P));
        }
        for (int p = 0; p < P; ++p) {
            const long t = ctx.first_test + p;
            std::map<PredictorFamily, ChannelOutput> channels;
            for (PredictorFamily family : ctx.config.families) {
                channels.emplace(family, rollouts.at(family)[p]);
            }
            write_predictions(ctx, paths, ctx.raw.timesteps[t],
                              predict_month(ctx, unit, t, p + 1, channels));
        }
    } else {
        for (int p = 0; p < P; ++p) {
            const long t = ctx.first_test + p;
            const long label = ctx.raw.timesteps[t];
            const LoadedUnit unit = load_unit(ctx, paths, label);
            std::map<PredictorFamily, ChannelOutput> channels;
            for (PredictorFamily family : ctx.config.families) {
                channels.emplace(family, channel_at(ctx, unit.base.at(family), t));
            }
            write_predictions(ctx, paths, label, predict_month(ctx, unit, t, 1, channels));
        }
    }
}

// ---------- evaluate stage ----------

std::map<std::string, std::vector<PredictiveDistribution>> read_predictions(
    const PipelineContext& ctx, const fs::path& file) {
    auto in = open_in(file);
    std::string line;
    if (!std::getline(in, line) || line != "tgcrf.predictions.v1") {
        throw TgcrfError(kStage, "bad predictions file '" + file.string() + "'");
    }
    std::getline(in, line);  // month header
    std::getline(in, line);  // column header
    std::map<std::string, std::vector<PredictiveDistribution>> result;
    std::map<std::string, std::map<std::string, PredictiveDistribution>> by_node;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string model, node, mean_text, var_text;
        if (!std::getline(row, model, '\t') || !std::getline(row, node, '\t') ||
            !std::getline(row, mean_text, '\t') || !std::getline(row, var_text)) {
            throw TgcrfError(kStage, "bad prediction row '" + line + "'");
        }
        by_node[model][node] = {std::stod(mean_text), std::stod(var_text)};
    }
    for (const auto& [model, nodes] : by_node) {
        std::vector<PredictiveDistribution> values(ctx.scaled.n_nodes());
        for (long i = 0; i < ctx.scaled.n_nodes(); ++i) {
            auto it = nodes.find(ctx.scaled.node_ids[i]);
            if (it == nodes.end()) {
                throw TgcrfError(kStage, "predictions missing node " + ctx.scaled.node_ids[i]);
            }
            values[i] = it->second;
        }
        result[model] = std::move(values);
    }
    return result;
}

ExperimentResult evaluate_stage(const PipelineContext& ctx, const Paths& paths) {
    fs::create_directories(paths.reports);
    ExperimentResult result;
    for (int p = 0; p < ctx.config.test_horizon; ++p) {
        const long t = ctx.first_test + p;
        const long label = ctx.raw.timesteps[t];
        const auto predictions =
            read_predictions(ctx, paths.predictions / ("month_" + std::to_string(label) + ".tsv"));
        result.truths[label] = ctx.scaled.targets.row(t).transpose();
        for (const auto& [model, values] : predictions) {
            ModelMonthOutput output;
            output.means.resize(values.size());
            output.variances.resize(values.size());
            for (std::size_t i = 0; i < values.size(); ++i) {
                output.means(i) = values[i].mean;
                output.variances(i) = values[i].variance;
            }
            result.outputs[model][label] = std::move(output);
        }
    }
    result.report = build_report(result.outputs, result.truths);

    {
        auto out = open_out(paths.reports / "report.tsv");
        write_machine_report(result.report, out);
    }
    {
        auto out = open_out(paths.reports / "report.txt");
        out << render_metric_table(result.report, "rmse") << '\n';
        out << render_metric_table(result.report, "nlpd") << '\n';
        out << render_metric_table(result.report, "coverage95");
    }
    {
        auto out = open_out(paths.reports / "per_node_nlpd.tsv");
        out << std::setprecision(10);
        for (const auto& [model, nodes] : result.report.per_node_nlpd) {
            std::vector<std::size_t> order(nodes.size());
            for (std::size_t i = 0; i < nodes.size(); ++i) order[i] = i;
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return nodes[a].obtained_nlpd > nodes[b].obtained_nlpd;
            });
            for (std::size_t i : order) {
                out << model << '\t' << ctx.scaled.node_ids[i] << '\t' << nodes[i].min_nlpd << '\t'
                    << nodes[i].obtained_nlpd << '\n';
            }
        }
    }
    return result;
}

template <typename Fn>
auto with_incomplete_marker(const std::string& out_dir, Fn&& fn) {
    const Paths paths(out_dir);
    fs::create_directories(paths.root);
    std::error_code ec;
    fs::remove(paths.incomplete, ec);
    try {
        return fn(paths);
    } catch (const std::exception& error) {
        std::ofstream marker(paths.incomplete);
        marker << error.what() << '\n';
        throw;
    }
}

}  // namespace

void run_train_stage(const ExperimentConfig& config) {
    with_incomplete_marker(config.output_dir, [&](const Paths& paths) {
        const PipelineContext ctx = make_context(config);
        train_stage(ctx, paths);
        return 0;
    });
}

void run_predict_stage(const ExperimentConfig& config) {
    with_incomplete_marker(config.output_dir, [&](const Paths& paths) {
        const PipelineContext ctx = make_context(config);
        predict_stage(ctx, paths);
        return 0;
    });
}

ExperimentResult run_evaluate_stage(const ExperimentConfig& config) {
    return with_incomplete_marker(config.output_dir, [&](const Paths& paths) {
        const PipelineContext ctx = make_context(config);
        return evaluate_stage(ctx, paths);
    });
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
    return with_incomplete_marker(config.output_dir, [&](const Paths& paths) {
        const PipelineContext ctx = make_context(config);
        train_stage(ctx, paths);
        predict_stage(ctx, paths);
        return evaluate_stage(ctx, paths);
    });
}

}  // namespace tgcrf
