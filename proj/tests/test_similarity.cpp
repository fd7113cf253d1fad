#include "tgcrf/similarity.hpp"

#include "tgcrf/common.hpp"
#include "tgcrf/rng.hpp"
#include "tgcrf/temporal_graph.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace tgcrf;

namespace {

constexpr double kLn2 = 0.6931471805599453;

void check_symmetric_nonnegative(const SimilarityMatrix& sim) {
    CHECK((sim.values - sim.values.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(sim.values.minCoeff() >= 0.0);
    CHECK(sim.values.diagonal().cwiseAbs().maxCoeff() == 0.0);
}

TemporalGraphDataset attribute_dataset(const Eigen::MatrixXd& attr) {
    TemporalGraphDataset ds;
    const long T = attr.rows(), N = attr.cols();
    for (long i = 0; i < N; ++i) ds.node_ids.push_back("n" + std::to_string(i));
    for (long t = 0; t < T; ++t) ds.timesteps.push_back(t);
    ds.targets = Eigen::MatrixXd::Zero(T, N);
    ds.masks.setConstant(T, N, true);
    ds.attributes.emplace("x", attr);
    return ds;
}

}  // namespace

TEST_CASE("comorbidity counting") {
    const std::vector<std::vector<std::string>> records = {{"A", "B"}, {"A", "B"}, {"A", "C"}};
    const std::vector<std::string> nodes = {"A", "B", "C"};

    SUBCASE("count measure") {
        const auto sim = comorbidity_similarity(records, nodes, ComorbidityMeasure::Count);
        CHECK(sim.values(0, 1) == 2.0);
        CHECK(sim.values(0, 2) == 1.0);
        CHECK(sim.values(1, 2) == 0.0);
        check_symmetric_nonnegative(sim);
    }
    SUBCASE("jaccard measure over record sets") {
        const auto sim = comorbidity_similarity(records, nodes, ComorbidityMeasure::Jaccard);
        CHECK(sim.values(0, 1) == doctest::Approx(2.0 / 3.0));
        CHECK(sim.values(0, 2) == doctest::Approx(1.0 / 3.0));
        CHECK(sim.values(1, 2) == 0.0);
    }
    SUBCASE("single-disease records produce no edges") {
        const auto sim = comorbidity_similarity({{"A"}, {"B"}, {"C"}, {"A"}}, nodes,
                                                ComorbidityMeasure::Count);
        CHECK(sim.values.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("unknown codes fail by default, skip when configured") {
        CHECK_THROWS_WITH_AS(comorbidity_similarity({{"A", "Z"}}, nodes, ComorbidityMeasure::Count),
                             doctest::Contains("unknown code"), TgcrfError);
        const auto sim = comorbidity_similarity({{"A", "Z", "B"}}, nodes, ComorbidityMeasure::Count,
                                                /*skip_unknown_codes=*/true);
        CHECK(sim.values(0, 1) == 1.0);
    }
}

TEST_CASE("JS divergence similarity") {
    SUBCASE("disjoint distributions hit the ln 2 bound") {
        Eigen::MatrixXd hist(2, 2);
        hist << 1, 0, 0, 1;
        const auto sim = js_divergence_similarity(hist);
        CHECK(sim.values(0, 1) == doctest::Approx(1.0 / kLn2).epsilon(1e-12));
        // Hand check of the two KLD terms against M = (1/2, 1/2).
        const double jsd = 0.5 * (1.0 * std::log(1.0 / 0.5)) + 0.5 * (1.0 * std::log(1.0 / 0.5));
        CHECK(js_divergence(hist.row(0), hist.row(1)) == doctest::Approx(jsd).epsilon(1e-12));
    }
    SUBCASE("identical distributions are capped") {
        Eigen::MatrixXd hist(2, 3);
        hist << 0.2, 0.3, 0.5, 0.2, 0.3, 0.5;
        const auto sim = js_divergence_similarity(hist, 1e-6);
        CHECK(sim.values(0, 1) == doctest::Approx(1e6));
    }
    SUBCASE("closer distributions score higher") {
        Eigen::MatrixXd hist(3, 2);
        hist << 0.5, 0.5, 0.55, 0.45, 0.9, 0.1;
        const auto sim = js_divergence_similarity(hist);
        CHECK(sim.values(0, 1) > sim.values(0, 2));
        CHECK(js_divergence(hist.row(0), hist.row(1)) < js_divergence(hist.row(0), hist.row(2)));
    }
    SUBCASE("input validation") {
        Eigen::MatrixXd bad_sum(2, 2);
        bad_sum << 0.6, 0.6, 0.5, 0.5;
        CHECK_THROWS_WITH_AS(js_divergence_similarity(bad_sum), doctest::Contains("sums to"),
                             TgcrfError);
        Eigen::MatrixXd negative(2, 2);
        negative << 1.2, -0.2, 0.5, 0.5;
        CHECK_THROWS_WITH_AS(js_divergence_similarity(negative), doctest::Contains("negative bin"),
                             TgcrfError);
    }
    SUBCASE("JSD stays within [0, ln 2] and symmetric on random distributions") {
        Rng rng(101);
        for (int trial = 0; trial < 200; ++trial) {
            Eigen::VectorXd p(4), q(4);
            for (int b = 0; b < 4; ++b) {
                p(b) = rng.uniform();
                q(b) = rng.uniform();
            }
            p /= p.sum();
            q /= q.sum();
            const double pq = js_divergence(p, q);
            CHECK(pq >= 0.0);
            CHECK(pq <= kLn2 + 1e-12);
            CHECK(pq == doctest::Approx(js_divergence(q, p)).epsilon(1e-12));
        }
    }
}

TEST_CASE("common-history similarity") {
    SUBCASE("identical histories give similarity 1") {
        Eigen::MatrixXd attr(4, 2);
        attr << 0.3, 0.3, 0.7, 0.7, 0.1, 0.1, 9.0, -9.0;  // last row is after t
        const auto sim = common_history_similarity(attribute_dataset(attr), "x", 3, 3);
        CHECK(sim.values(0, 1) == doctest::Approx(1.0));
    }
    SUBCASE("hand-computed h=2 case") {
        Eigen::MatrixXd attr(3, 2);
        attr << 0.2, 0.6, 0.4, 0.0, 0.0, 0.0;
        // histories (0.2, 0.4) vs (0.6, 0.0): mean |diff| = 0.4
        const auto sim = common_history_similarity(attribute_dataset(attr), "x", 2, 2);
        CHECK(sim.values(0, 1) == doctest::Approx(std::exp(-0.4)).epsilon(1e-12));
        // The sum-then-abs variant cancels opposite-signed differences.
        const auto variant = common_history_similarity(attribute_dataset(attr), "x", 2, 2,
                                                       HistoryVariant::AbsoluteMeanDifference);
        CHECK(variant.values(0, 1) == doctest::Approx(std::exp(-0.0)).epsilon(1e-12));
    }
    SUBCASE("values stay in (0, 1] and the matrix is symmetric") {
        Rng rng(55);
        Eigen::MatrixXd attr(6, 5);
        for (long t = 0; t < 6; ++t) {
            for (long i = 0; i < 5; ++i) attr(t, i) = rng.normal(0.0, 2.0);
        }
        const auto sim = common_history_similarity(attribute_dataset(attr), "x", 3, 5);
        check_symmetric_nonnegative(sim);
        for (long i = 0; i < 5; ++i) {
            for (long j = i + 1; j < 5; ++j) {
                CHECK(sim.values(i, j) > 0.0);
                CHECK(sim.values(i, j) <= 1.0);
            }
        }
    }
    SUBCASE("translation invariance") {
        Rng rng(56);
        Eigen::MatrixXd attr(5, 4);
        for (long t = 0; t < 5; ++t) {
            for (long i = 0; i < 4; ++i) attr(t, i) = rng.normal();
        }
        const auto base = common_history_similarity(attribute_dataset(attr), "x", 3, 4);
        const auto shifted =
            common_history_similarity(attribute_dataset(attr.array() + 17.5), "x", 3, 4);
        CHECK((base.values - shifted.values).cwiseAbs().maxCoeff() <= 1e-12);
    }
    SUBCASE("insufficient history is rejected") {
        Eigen::MatrixXd attr(2, 2);
        attr << 1, 2, 3, 4;
        CHECK_THROWS_WITH_AS(common_history_similarity(attribute_dataset(attr), "x", 3, 2),
                             doctest::Contains("insufficient history"), TgcrfError);
    }
}

namespace {

// Brute-force variogram oracle: enumerate pairs, bin, average.
double oracle_gamma_in_range(const SimilarityMatrix& sim, const Eigen::VectorXd& y, double lo,
                             double hi, bool include_hi) {
    double acc = 0.0;
    long count = 0;
    for (long i = 0; i < sim.size(); ++i) {
        for (long j = i + 1; j < sim.size(); ++j) {
            const double s = sim.values(i, j);
            if (s >= lo && (s < hi || (include_hi && s <= hi))) {
                acc += 0.5 * (y(i) - y(j)) * (y(i) - y(j));
                ++count;
            }
        }
    }
    return count > 0 ? acc / count : 0.0;
}

}  // namespace

TEST_CASE("variogram") {
    SUBCASE("equal targets give zero gamma everywhere, verdict good") {
        Rng rng(60);
        SimilarityMatrix sim;
        sim.values = Eigen::MatrixXd::Zero(12, 12);
        for (long i = 0; i < 12; ++i) {
            for (long j = i + 1; j < 12; ++j) {
                const double s = rng.uniform();
                sim.values(i, j) = s;
                sim.values(j, i) = s;
            }
        }
        const auto report = variogram(sim, Eigen::VectorXd::Constant(12, 3.0), 5, 2);
        for (const auto& bin : report.bins) CHECK(bin.gamma == 0.0);
        CHECK(report.good);
    }
    SUBCASE("similarity independent of targets is judged bad") {
        Rng rng(61);
        const int n = 30;
        SimilarityMatrix sim;
        sim.values = Eigen::MatrixXd::Zero(n, n);
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) y(i) = rng.normal();
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                const double s = rng.uniform();
                sim.values(i, j) = s;
                sim.values(j, i) = s;
            }
        }
        const auto report = variogram(sim, y, 8);
        CHECK_FALSE(report.good);
        // Flat gamma: every bin within a factor-of-3 band of the overall variance.
        for (const auto& bin : report.bins) {
            CHECK(bin.gamma < 3.0 * report.overall_variance);
            CHECK(bin.gamma > report.overall_variance / 3.0);
        }
    }
    SUBCASE("homophilous similarity is judged good and matches the pair oracle") {
        Rng rng(62);
        const int n = 40;
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) y(i) = std::sin(0.3 * i) + 0.05 * rng.normal();
        SimilarityMatrix sim;
        sim.values = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                // Planted: similar targets get high similarity.
                const double s = std::exp(-std::abs(y(i) - y(j)));
                sim.values(i, j) = s;
                sim.values(j, i) = s;
            }
        }
        const auto report = variogram(sim, y, 10);
        CHECK(report.good);
        CHECK(report.spearman < 0.0);
        long total_pairs = 0;
        for (std::size_t b = 0; b < report.bins.size(); ++b) {
            const auto& bin = report.bins[b];
            total_pairs += bin.n_pairs;
            const bool last = b + 1 == report.bins.size();
            CHECK(bin.gamma ==
                  doctest::Approx(oracle_gamma_in_range(sim, y, bin.lo, bin.hi, last)).epsilon(1e-9));
        }
        CHECK(total_pairs == n * (n - 1) / 2);
    }
    SUBCASE("gamma is invariant to node reordering") {
        Rng rng(63);
        const int n = 15;
        Eigen::VectorXd y(n);
        SimilarityMatrix sim;
        sim.values = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i) y(i) = rng.normal();
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                const double s = rng.uniform();
                sim.values(i, j) = s;
                sim.values(j, i) = s;
            }
        }
        const auto base = variogram(sim, y, 6, 2);

        std::vector<int> perm(n);
        for (int i = 0; i < n; ++i) perm[i] = (i * 7 + 3) % n;  // a fixed permutation
        SimilarityMatrix permuted;
        permuted.values = Eigen::MatrixXd::Zero(n, n);
        Eigen::VectorXd py(n);
        for (int i = 0; i < n; ++i) {
            py(i) = y(perm[i]);
            for (int j = 0; j < n; ++j) permuted.values(i, j) = sim.values(perm[i], perm[j]);
        }
        const auto shuffled = variogram(permuted, py, 6, 2);
        REQUIRE(base.bins.size() == shuffled.bins.size());
        for (std::size_t b = 0; b < base.bins.size(); ++b) {
            CHECK(base.bins[b].gamma == doctest::Approx(shuffled.bins[b].gamma).epsilon(1e-12));
            CHECK(base.bins[b].n_pairs == shuffled.bins[b].n_pairs);
        }
    }
    SUBCASE("degenerate similarity is rejected") {
        SimilarityMatrix sim;
        sim.values = Eigen::MatrixXd::Constant(4, 4, 0.5);
        sim.values.diagonal().setZero();
        CHECK_THROWS_WITH_AS(variogram(sim, Eigen::VectorXd::Ones(4), 4),
                             doctest::Contains("degenerate similarity"), TgcrfError);
    }
}

TEST_CASE("sparsify") {
    SimilarityMatrix sim;
    sim.values = Eigen::MatrixXd::Zero(3, 3);
    sim.values(0, 1) = sim.values(1, 0) = 0.9;  // A-B
    sim.values(0, 2) = sim.values(2, 0) = 0.5;  // A-C
    sim.values(1, 2) = sim.values(2, 1) = 0.4;  // B-C

    SUBCASE("threshold zero keeps everything") {
        const auto kept = sparsify(sim, SparsifyRule::min_weight(0.0));
        CHECK((kept.values - sim.values).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("top-1 keeps an edge kept by either endpoint") {
        const auto kept = sparsify(sim, SparsifyRule::top_k(1));
        CHECK(kept.values(0, 1) == 0.9);
        CHECK(kept.values(0, 2) == 0.5);  // C's top edge
        CHECK(kept.values(1, 2) == 0.0);
        check_symmetric_nonnegative(kept);
    }
    SUBCASE("threshold above the maximum empties the edge set") {
        const auto kept = sparsify(sim, SparsifyRule::min_weight(1.5));
        CHECK(kept.values.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("similarity triplet round trip") {
    Rng rng(70);
    SimilarityMatrix sim;
    sim.kind = SimilarityKind::JsDivergence;
    sim.timestep = 42;
    sim.values = Eigen::MatrixXd::Zero(6, 6);
    for (int i = 0; i < 6; ++i) {
        for (int j = i + 1; j < 6; ++j) {
            if (rng.uniform() < 0.5) continue;
            const double s = rng.uniform();
            sim.values(i, j) = s;
            sim.values(j, i) = s;
        }
    }
    std::stringstream buffer;
    write_similarity(sim, buffer);
    const auto loaded = read_similarity(buffer);
    CHECK(loaded.kind == sim.kind);
    CHECK(loaded.timestep == sim.timestep);
    CHECK((loaded.values - sim.values).cwiseAbs().maxCoeff() == 0.0);
}
