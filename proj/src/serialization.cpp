#include "tgcrf/common.hpp"
#include "tgcrf/experiment.hpp"

#include <iomanip>
#include <istream>
#include <ostream>
#include <string>

namespace tgcrf {

namespace {

constexpr const char* kStage = "serialization";

void expect_version(std::istream& in, const std::string& version) {
    std::string line;
    if (!std::getline(in, line) || line != version) {
        throw TgcrfError(kStage, "expected version line '" + version + "', got '" + line + "'");
    }
}

void expect_token(std::istream& in, const std::string& token) {
    std::string got;
    in >> got;
    if (!in || got != token) {
        throw TgcrfError(kStage, "expected token '" + token + "', got '" + got + "'");
    }
}

template <typename T>
T read_value(std::istream& in, const char* what) {
    T value{};
    in >> value;
    if (!in) throw TgcrfError(kStage, std::string("failed to read ") + what);
    return value;
}

void write_vector(std::ostream& out, const char* label, const Eigen::VectorXd& values) {
    out << label;
    for (long i = 0; i < values.size(); ++i) out << ' ' << values(i);
    out << '\n';
}

Eigen::VectorXd read_vector(std::istream& in, const char* label, long size) {
    expect_token(in, label);
    Eigen::VectorXd values(size);
    for (long i = 0; i < size; ++i) values(i) = read_value<double>(in, label);
    return values;
}

void write_matrix_rows(std::ostream& out, const char* label, const Eigen::MatrixXd& values) {
    out << label;
    for (long r = 0; r < values.rows(); ++r) {
        for (long c = 0; c < values.cols(); ++c) out << ' ' << values(r, c);
    }
    out << '\n';
}

Eigen::MatrixXd read_matrix_rows(std::istream& in, const char* label, long rows, long cols) {
    expect_token(in, label);
    Eigen::MatrixXd values(rows, cols);
    for (long r = 0; r < rows; ++r) {
        for (long c = 0; c < cols; ++c) values(r, c) = read_value<double>(in, label);
    }
    return values;
}

}  // namespace

void write_linear_models(const std::vector<LinearArModel>& models, int lag, std::ostream& out) {
    out << "tgcrf.base-lr.v1\n" << std::setprecision(17);
    out << "lag " << lag << '\n';
    out << "count " << models.size() << '\n';
    for (const auto& model : models) {
        out << "model " << model.n_train << ' ' << model.n_features << '\n';
        write_vector(out, "w", model.w);
        out << "sigma_y2 " << model.sigma_y2 << '\n';
        write_matrix_rows(out, "xtx_inv", model.xtx_inv);
    }
}

std::pair<std::vector<LinearArModel>, int> read_linear_models(std::istream& in) {
    expect_version(in, "tgcrf.base-lr.v1");
    expect_token(in, "lag");
    const int lag = read_value<int>(in, "lag");
    expect_token(in, "count");
    const long count = read_value<long>(in, "count");
    std::vector<LinearArModel> models(count);
    for (auto& model : models) {
        expect_token(in, "model");
        model.n_train = read_value<int>(in, "n_train");
        model.n_features = read_value<int>(in, "n_features");
        model.w = read_vector(in, "w", model.n_features + 1);
        expect_token(in, "sigma_y2");
        model.sigma_y2 = read_value<double>(in, "sigma_y2");
        model.xtx_inv = read_matrix_rows(in, "xtx_inv", model.n_features + 1, model.n_features + 1);
    }
    return {std::move(models), lag};
}

void write_gp_models(const std::vector<GpModel>& models, int lag, std::ostream& out) {
    out << "tgcrf.base-gp.v1\n" << std::setprecision(17);
    out << "lag " << lag << '\n';
    out << "count " << models.size() << '\n';
    for (const auto& model : models) {
        out << "model " << model.X_train.rows() << ' ' << model.X_train.cols() << '\n';
        out << "y_mean " << model.y_mean << '\n';
        out << "sigma_y2 " << model.sigma_y2 << '\n';
        out << "amplitude " << model.kernel_amplitude << '\n';
        out << "jitter " << model.jitter << '\n';
        write_vector(out, "length_scales", model.length_scales);
        write_matrix_rows(out, "X", model.X_train);
        write_vector(out, "y_centered", model.y_centered);
    }
}

std::pair<std::vector<GpModel>, int> read_gp_models(std::istream& in) {
    expect_version(in, "tgcrf.base-gp.v1");
    expect_token(in, "lag");
    const int lag = read_value<int>(in, "lag");
    expect_token(in, "count");
    const long count = read_value<long>(in, "count");
    std::vector<GpModel> models(count);
    for (auto& model : models) {
        expect_token(in, "model");
        const long rows = read_value<long>(in, "rows");
        const long cols = read_value<long>(in, "cols");
        expect_token(in, "y_mean");
        model.y_mean = read_value<double>(in, "y_mean");
        expect_token(in, "sigma_y2");
        model.sigma_y2 = read_value<double>(in, "sigma_y2");
        expect_token(in, "amplitude");
        model.kernel_amplitude = read_value<double>(in, "amplitude");
        expect_token(in, "jitter");
        model.jitter = read_value<double>(in, "jitter");
        model.length_scales = read_vector(in, "length_scales", cols);
        model.X_train = read_matrix_rows(in, "X", rows, cols);
        model.y_centered = read_vector(in, "y_centered", rows);

        Eigen::MatrixXd C(rows, rows);
        for (long i = 0; i < rows; ++i) {
            C(i, i) = model.kernel_amplitude + model.sigma_y2 + model.jitter;
            for (long j = i + 1; j < rows; ++j) {
                C(i, j) = gaussian_kernel(model.X_train.row(i), model.X_train.row(j),
                                          model.kernel_amplitude, model.length_scales);
                C(j, i) = C(i, j);
            }
        }
        model.C_chol.compute(C);
        if (model.C_chol.info() != Eigen::Success) {
            throw TgcrfError(kStage, "stored GP covariance failed to refactor");
        }
        model.weights = model.C_chol.solve(model.y_centered);
    }
    return {std::move(models), lag};
}

void write_gcrf_params(const GcrfParams& params, std::ostream& out) {
    out << "tgcrf.params.v1\n" << std::setprecision(17);
    out << "model gcrf\n";
    out << "mode " << (params.mode == AlphaMode::Shared ? "shared" : "per-node") << '\n';
    out << "K " << params.n_predictors << " L " << params.n_similarities << " N "
        << params.n_nodes << '\n';
    write_vector(out, "u", params.u);
    write_vector(out, "v", params.v);
}

GcrfParams read_gcrf_params(std::istream& in) {
    expect_version(in, "tgcrf.params.v1");
    expect_token(in, "model");
    expect_token(in, "gcrf");
    expect_token(in, "mode");
    const std::string mode = read_value<std::string>(in, "mode");
    GcrfParams params;
    params.mode = mode == "shared" ? AlphaMode::Shared : AlphaMode::PerNode;
    expect_token(in, "K");
    params.n_predictors = read_value<int>(in, "K");
    expect_token(in, "L");
    params.n_similarities = read_value<int>(in, "L");
    expect_token(in, "N");
    params.n_nodes = read_value<int>(in, "N");
    const long n_u = params.mode == AlphaMode::Shared
                         ? params.n_predictors
                         : static_cast<long>(params.n_predictors) * params.n_nodes;
    params.u = read_vector(in, "u", n_u);
    params.v = read_vector(in, "v", params.n_similarities);
    return params;
}

void write_ugcrf_params(const UgcrfParams& params, std::ostream& out) {
    out << "tgcrf.params.v1\n" << std::setprecision(17);
    out << "model ugcrf\n";
    out << "K " << params.n_predictors << " P " << params.n_horizons << " L "
        << params.n_similarities << " shared_u " << (params.shared_u ? 1 : 0) << '\n';
    write_matrix_rows(out, "u", params.u);
    write_vector(out, "v", params.v);
    write_matrix_rows(out, "ci", params.ci);
}

UgcrfParams read_ugcrf_params(std::istream& in) {
    expect_version(in, "tgcrf.params.v1");
    expect_token(in, "model");
    expect_token(in, "ugcrf");
    UgcrfParams params;
    expect_token(in, "K");
    params.n_predictors = read_value<int>(in, "K");
    expect_token(in, "P");
    params.n_horizons = read_value<int>(in, "P");
    expect_token(in, "L");
    params.n_similarities = read_value<int>(in, "L");
    expect_token(in, "shared_u");
    params.shared_u = read_value<int>(in, "shared_u") != 0;
    params.u = read_matrix_rows(in, "u", params.n_predictors, params.shared_u ? 1 : params.n_horizons);
    params.v = read_vector(in, "v", params.n_similarities);
    params.ci = read_matrix_rows(in, "ci", params.n_predictors, params.n_horizons);
    return params;
}

void write_ufgcrf_params(const UfgcrfParams& params, std::ostream& out) {
    out << "tgcrf.params.v1\n" << std::setprecision(17);
    out << "model ufgcrf\n";
    const int input_dim = params.networks.empty() ? 0 : params.networks.front().input_dim();
    const int hidden = params.networks.empty() ? 0 : params.networks.front().hidden_width();
    out << "K " << params.networks.size() << " L " << params.n_similarities << " input_dim "
        << input_dim << " hidden_width " << hidden << '\n';
    write_vector(out, "scaling_mean", params.scaling.mean);
    write_vector(out, "scaling_scale", params.scaling.scale);
    for (const auto& net : params.networks) write_vector(out, "theta", net.theta);
    write_vector(out, "v", params.v);
}

UfgcrfParams read_ufgcrf_params(std::istream& in) {
    expect_version(in, "tgcrf.params.v1");
    expect_token(in, "model");
    expect_token(in, "ufgcrf");
    UfgcrfParams params;
    expect_token(in, "K");
    const int K = read_value<int>(in, "K");
    expect_token(in, "L");
    params.n_similarities = read_value<int>(in, "L");
    expect_token(in, "input_dim");
    const int input_dim = read_value<int>(in, "input_dim");
    expect_token(in, "hidden_width");
    const int hidden = read_value<int>(in, "hidden_width");
    params.scaling.mean = read_vector(in, "scaling_mean", input_dim);
    params.scaling.scale = read_vector(in, "scaling_scale", input_dim);
    for (int k = 0; k < K; ++k) {
        SmallMlp net(input_dim, hidden);
        net.theta = read_vector(in, "theta", SmallMlp::parameter_count(input_dim, hidden));
        params.networks.push_back(std::move(net));
    }
    params.v = read_vector(in, "v", params.n_similarities);
    return params;
}

}  // namespace tgcrf
