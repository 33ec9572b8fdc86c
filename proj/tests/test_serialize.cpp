#include "nmaipw/serialize.hpp"

#include "nmaipw/ranking.hpp"
#include "nmaipw/simulation.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"

using namespace nmaipw;
using namespace test_helpers;

namespace {

NetworkDataset selected_dataset(std::uint64_t seed) {
    SimConfig cfg;
    cfg.tau_mode = TauMode::Common;
    cfg.tau = {0.1};
    cfg.selection = SelectionSpec::from_token("logit2");
    const NetworkDataset complete = generate_complete_network(cfg, seed);
    return apply_selection(complete, cfg.selection,
                           SelectionParams{Eigen::Vector2d(-0.2, 0.8)}, seed + 5);
}

}  // namespace

TEST_CASE("fit-v1 documents round-trip through the loader") {
    const NetworkDataset data = selected_dataset(61);
    const FitResult fit = fit_mre(data);
    const auto doc = fit_result_json(fit, Direction::Higher);
    CHECK(doc.at("format") == "fit-v1");
    CHECK(doc.at("method") == "mre");

    const auto path = std::filesystem::temp_directory_path() / "nmaipw_fit_test.json";
    write_text_file(path, doc.dump(2) + "\n");
    const LoadedFit loaded = read_fit_json(path);
    std::filesystem::remove(path);

    CHECK(loaded.method == "mre");
    CHECK(loaded.direction == Direction::Higher);
    CHECK(loaded.fit.params.reference == fit.params.reference);
    REQUIRE(loaded.fit.params.basic == fit.params.basic);
    for (Eigen::Index i = 0; i < fit.params.mu.size(); ++i) {
        CHECK(loaded.fit.params.mu[i] == fit.params.mu[i]);
    }
    REQUIRE(loaded.league.size() == league_table(fit).size());

    // Ranking from the serialized league matches ranking from the live fit.
    const RankTable from_fit = p_score(fit, Direction::Higher);
    const RankTable from_file =
        p_score_from_league(loaded.treatments, loaded.league, loaded.direction, loaded.method);
    for (std::size_t i = 0; i < from_fit.pbar.size(); ++i) {
        CHECK(from_fit.pbar[i] == doctest::Approx(from_file.pbar[i]).epsilon(1e-12));
    }
    CHECK(from_fit.order == from_file.order);
}

TEST_CASE("ipw fit-v1 document carries selection and bootstrap blocks") {
    const NetworkDataset data = selected_dataset(62);
    const auto spec = SelectionSpec::from_token("logit2");
    const IpwFit fit = fit_ipw_with_bootstrap(data, spec, TauMode::DesignSpecific, {}, 40, 11, 2);
    const auto doc = ipw_fit_json(fit, data);
    CHECK(doc.at("method") == "ipw");
    CHECK(doc.at("selection").at("token") == "logit2");
    CHECK(doc.at("bootstrap").at("requested") == 40);
    CHECK(doc.at("pi_hat").size() == static_cast<std::size_t>(data.published_count()));

    const auto path = std::filesystem::temp_directory_path() / "nmaipw_ipw_test.json";
    write_text_file(path, doc.dump(2) + "\n");
    const LoadedFit loaded = read_fit_json(path);
    std::filesystem::remove(path);
    CHECK(loaded.method == "ipw");
    REQUIRE(!loaded.league.empty());
    for (const auto& entry : loaded.league) CHECK(entry.se.has_value());
}

TEST_CASE("funnel csv lists points then overlays") {
    const NetworkDataset data = selected_dataset(63);
    FitResult fit;
    fit.params.reference = "C";
    fit.params.basic = {"A", "B"};
    fit.params.mu = Eigen::Vector2d(0.5, 0.3);
    fit.params.tau.mode = TauMode::Common;
    fit.params.tau.values = {0.1};
    const FunnelData funnel = funnel_data(data, fit);
    const std::string csv = funnel_csv(funnel);
    CHECK(csv.rfind("kind,study_id,design_k,treat_x,treat_y,x,y\n", 0) == 0);
    const auto lines = static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n'));
    CHECK(lines == 1 + funnel.points.size() + funnel.overlays.size());
}

TEST_CASE("sim metrics render to csv and json") {
    SimConfig cfg;
    cfg.tau_mode = TauMode::Common;
    cfg.tau = {0.05};
    cfg.selection = SelectionSpec::from_token("logit2");
    cfg.beta_true = Eigen::Vector2d(-0.2, 0.8);
    cfg.replications = 2;
    cfg.bootstrap = 10;
    cfg.seed = 5;
    cfg.estimators = {EstimatorSpec::parse("mre", Direction::Higher)};
    const SimMetrics metrics = run_monte_carlo(cfg);
    const std::string csv = sim_metrics_csv(metrics);
    CHECK(csv.rfind("estimator,param,truth,used,ave,sd,cp,loci,noz\n", 0) == 0);
    const auto doc = sim_metrics_json(metrics, cfg);
    CHECK(doc.at("format") == "sim-v1");
    CHECK(doc.at("replications") == 2);
    CHECK(doc.at("rows").size() == metrics.rows.size());
}
