// Command-line front end: dataset ingestion, synthetic generation, graph
// construction with variogram diagnostics, and the staged forecasting
// pipeline (train / predict / evaluate / run).

#include "tgcrf/common.hpp"
#include "tgcrf/evaluation.hpp"
#include "tgcrf/experiment.hpp"
#include "tgcrf/similarity.hpp"
#include "tgcrf/synthetic.hpp"
#include "tgcrf/temporal_graph.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace tgcrf;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
    auto* config = cmd->add_option("--config", args.config_path, "configuration file");
    if (config_required) config->required();
    cmd->add_option("--out", args.out_dir, "output directory")->required();
    cmd->add_option("--seed", args.seed, "seed override");
}

ExperimentConfig load_config(const CommonArgs& args) {
    ExperimentConfig config = parse_experiment_config_file(args.config_path);
    config.output_dir = args.out_dir;
    if (args.seed) {
        config.seed = *args.seed;
        if (config.synth) config.synth->seed = *args.seed;
    }
    return config;
}

int cmd_synth(const CommonArgs& args) {
    std::ifstream in(args.config_path);
    if (!in) throw TgcrfError("cli-harness", "cannot open config file '" + args.config_path + "'");
    SynthConfig config = parse_synth_config(in);
    if (args.seed) config.seed = *args.seed;

    const SynthResult result = generate_ar_graph(config);
    fs::create_directories(args.out_dir);
    serialize_dataset_file(result.dataset, (fs::path(args.out_dir) / "dataset.csv").string());
    {
        std::ofstream sim_out(fs::path(args.out_dir) / "coupling.txt");
        write_similarity(result.coupling, sim_out);
    }
    {
        std::ofstream cfg_out(fs::path(args.out_dir) / "synth.cfg");
        write_synth_config(config, cfg_out);
    }
    std::cout << "generated " << result.dataset.n_nodes() << " nodes x "
              << result.dataset.n_timesteps() << " timesteps into " << args.out_dir << "\n";
    return 0;
}

int cmd_ingest(const CommonArgs& args, const std::string& input_override,
               const IngestSchema& schema) {
    std::string input = input_override;
    if (input.empty()) {
        const ExperimentConfig config = parse_experiment_config_file(args.config_path);
        if (config.dataset_path.empty()) {
            throw TgcrfError("cli-harness", "ingest needs --in or a config with a dataset path");
        }
        input = config.dataset_path;
    }
    const TemporalGraphDataset ds = ingest_node_series_file(input, schema);
    fs::create_directories(args.out_dir);
    serialize_dataset_file(ds, (fs::path(args.out_dir) / "dataset.csv").string());
    long observed = 0;
    for (long t = 0; t < ds.n_timesteps(); ++t) {
        for (long n = 0; n < ds.n_nodes(); ++n) {
            if (ds.masks(t, n)) ++observed;
        }
    }
    std::cout << "ingested " << ds.n_nodes() << " nodes x " << ds.n_timesteps() << " timesteps ("
              << observed << " observed entries, " << ds.attributes.size() << " attributes)\n";
    return 0;
}

struct GraphArgs {
    std::string kind;
    std::string attribute;
    int h = 0;
    long timestep = -1;
    int bins = 20;
    std::string input;
};

int cmd_graph(const CommonArgs& args, const GraphArgs& graph_args) {
    SimilarityKind kind = SimilarityKind::CommonHistory;
    std::string attribute = "attr0";
    int h = 3;
    int js_bins = 10;
    std::string dataset_path = graph_args.input;

    if (!args.config_path.empty()) {
        const ExperimentConfig config = parse_experiment_config_file(args.config_path);
        kind = config.similarity_kind;
        attribute = config.similarity_attribute;
        h = config.history_length;
        js_bins = config.js_bins;
        if (dataset_path.empty()) dataset_path = config.dataset_path;
    }
    if (!graph_args.kind.empty()) kind = similarity_kind_from_name(graph_args.kind);
    if (!graph_args.attribute.empty()) attribute = graph_args.attribute;
    if (graph_args.h > 0) h = graph_args.h;
    if (dataset_path.empty()) throw TgcrfError("cli-harness", "graph needs --in or a config dataset");

    const TemporalGraphDataset ds = ingest_node_series_file(dataset_path);
    const long t = graph_args.timestep >= 0 ? graph_args.timestep : ds.n_timesteps() - 1;

    SimilarityMatrix sim;
    if (kind == SimilarityKind::CommonHistory) {
        sim = common_history_similarity(ds, attribute, h, t);
    } else if (kind == SimilarityKind::JsDivergence) {
        sim = attribute_histogram_similarity(ds, attribute, js_bins, t);
    } else {
        throw TgcrfError("cli-harness", "graph subcommand builds common-history or js-divergence "
                                        "similarities; comorbidity needs a record stream");
    }

    fs::create_directories(args.out_dir);
    const fs::path sim_path =
        fs::path(args.out_dir) /
        ("similarity_" + similarity_kind_name(kind) + "_t" + std::to_string(t) + ".txt");
    {
        std::ofstream out(sim_path);
        write_similarity(sim, out);
    }

    const VariogramReport report = variogram(sim, ds.targets.row(t).transpose(), graph_args.bins);
    {
        std::ofstream out(fs::path(args.out_dir) / "variogram.tsv");
        out << "lo\thi\tn_pairs\tgamma\n" << std::setprecision(10);
        for (const auto& bin : report.bins) {
            out << bin.lo << '\t' << bin.hi << '\t' << bin.n_pairs << '\t' << bin.gamma << '\n';
        }
        out << "# overall_variance\t" << report.overall_variance << '\n';
        out << "# spearman\t" << report.spearman << '\n';
        out << "# verdict\t" << (report.good ? "good" : "bad") << '\n';
    }
    std::cout << "similarity written to " << sim_path.string() << "\n";
    std::cout << "variogram verdict: " << (report.good ? "good" : "bad")
              << " (top-bin gamma " << report.bins.back().gamma << ", overall variance "
              << report.overall_variance << ", spearman " << report.spearman << ")\n";
    return 0;
}

int cmd_stage(const CommonArgs& args, const std::string& stage) {
    const ExperimentConfig config = load_config(args);
    if (stage == "train") {
        run_train_stage(config);
        std::cout << "models written to " << (fs::path(args.out_dir) / "models").string() << "\n";
    } else if (stage == "predict") {
        run_predict_stage(config);
        std::cout << "predictions written to "
                  << (fs::path(args.out_dir) / "predictions").string() << "\n";
    } else {
        const ExperimentResult result =
            stage == "evaluate" ? run_evaluate_stage(config) : run_experiment(config);
        std::cout << render_metric_table(result.report, "rmse") << '\n'
                  << render_metric_table(result.report, "nlpd");
        std::cout << "reports written to " << (fs::path(args.out_dir) / "reports").string() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"temporal-graph forecasting with Gaussian conditional random fields"};
    app.require_subcommand(1);

    CommonArgs synth_args;
    auto* synth = app.add_subcommand("synth", "generate a synthetic evolving-graph dataset");
    add_common(synth, synth_args);

    CommonArgs ingest_args;
    std::string ingest_input;
    IngestSchema schema;
    auto* ingest = app.add_subcommand("ingest", "validate and canonicalize a long-format dataset");
    add_common(ingest, ingest_args, false);
    ingest->add_option("--in", ingest_input, "input file (overrides config dataset)");
    ingest->add_option("--timestep-col", schema.timestep_column, "timestep column name");
    ingest->add_option("--node-col", schema.node_column, "node id column name");
    ingest->add_option("--target-col", schema.target_column, "target column name");
    std::string delimiter = ",";
    ingest->add_option("--delimiter", delimiter, "field delimiter");

    CommonArgs graph_common;
    GraphArgs graph_args;
    auto* graph = app.add_subcommand("graph", "build a similarity graph and its variogram");
    add_common(graph, graph_common, false);
    graph->add_option("--in", graph_args.input, "input dataset (overrides config)");
    graph->add_option("--kind", graph_args.kind, "similarity kind");
    graph->add_option("--attribute", graph_args.attribute, "attribute column");
    graph->add_option("--h", graph_args.h, "history length");
    graph->add_option("--timestep", graph_args.timestep, "timestep index (default: last)");
    graph->add_option("--bins", graph_args.bins, "variogram bins");

    CommonArgs train_args, predict_args, evaluate_args, run_args;
    add_common(app.add_subcommand("train", "fit base and structured models"), train_args);
    add_common(app.add_subcommand("predict", "predict the test months from trained models"),
               predict_args);
    add_common(app.add_subcommand("evaluate", "score predictions and write reports"), evaluate_args);
    add_common(app.add_subcommand("run", "full pipeline: train, predict, evaluate"), run_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand("synth")) return cmd_synth(synth_args);
        if (app.got_subcommand("ingest")) {
            if (!delimiter.empty()) schema.delimiter = delimiter[0];
            return cmd_ingest(ingest_args, ingest_input, schema);
        }
        if (app.got_subcommand("graph")) return cmd_graph(graph_common, graph_args);
        if (app.got_subcommand("train")) return cmd_stage(train_args, "train");
        if (app.got_subcommand("predict")) return cmd_stage(predict_args, "predict");
        if (app.got_subcommand("evaluate")) return cmd_stage(evaluate_args, "evaluate");
        if (app.got_subcommand("run")) return cmd_stage(run_args, "run");
    } catch (const TgcrfError& error) {
        std::cerr << "error: " << error.what() << "\n";
        return 1;
    } catch (const std::exception& error) {
        std::cerr << "error: " << error.what() << "\n";
        return 1;
    }
    return 0;
}
