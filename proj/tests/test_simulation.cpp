#include "nmaipw/simulation.hpp"

#include "nmaipw/errors.hpp"
#include "nmaipw/serialize.hpp"
#include "nmaipw/stats.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"

using namespace nmaipw;
using test_helpers::make_design;
using test_helpers::three_arm;
using test_helpers::two_arm;

TEST_CASE("event rate identities") {
    using sim_detail::event_rate_from_log_or;
    for (double pc : {0.2, 0.45, 0.9}) {
        CHECK(event_rate_from_log_or(0.0, pc) == doctest::Approx(pc).epsilon(1e-15));
    }
    CHECK(event_rate_from_log_or(std::log(2.0), 0.5) ==
          doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("study summaries follow the cell-count formulas") {
    using namespace sim_detail;
    ArmCells cells;
    cells.size = 100;
    cells.events_a = 30;
    cells.events_b = 40;
    cells.events_c = 20;
    const auto designs = simulated_designs();
    const StudyRecord study = study_from_cells("x", designs[3], cells);

    REQUIRE(study.outcomes.size() == 2);
    const double var_c = 1.0 / 20.0 + 1.0 / 80.0;
    CHECK(study.outcomes[0].y ==
          doctest::Approx(std::log(30.0 / 70.0) - std::log(20.0 / 80.0)).epsilon(1e-14));
    CHECK(study.outcomes[0].se ==
          doctest::Approx(std::sqrt(1.0 / 30.0 + 1.0 / 70.0 + var_c)).epsilon(1e-14));
    // Shared-arm covariance equals the control-arm logit variance.
    REQUIRE(study.shared_arm_variance.has_value());
    CHECK(*study.shared_arm_variance == doctest::Approx(var_c).epsilon(1e-14));
    CHECK(study.outcomes[0].n == 200);
    CHECK(study.n_planned == 200);
}

TEST_CASE("empirical log odds ratio converges to the drawn truth") {
    using namespace sim_detail;
    RngStream rng(8, 8);
    const double mu_ac = 0.37, mu_bc = 0.21, pc = 0.44;
    const double pa = event_rate_from_log_or(mu_ac, pc);
    const double pb = event_rate_from_log_or(mu_bc, pc);
    const ArmCells cells = draw_cells(rng, pa, pb, pc, 1000000, true, true, true);
    const auto designs = simulated_designs();
    const StudyRecord study = study_from_cells("big", designs[3], cells);
    CHECK(std::fabs(study.outcomes[0].y - mu_ac) < 0.01);
    CHECK(std::fabs(study.outcomes[1].y - mu_bc) < 0.01);
}

TEST_CASE("generation is deterministic in the replicate seed") {
    SimConfig cfg;
    cfg.selection = SelectionSpec::from_token("logit2");
    const NetworkDataset a = generate_complete_network(cfg, 5);
    const NetworkDataset b = generate_complete_network(cfg, 5);
    const NetworkDataset c = generate_complete_network(cfg, 6);
    std::ostringstream sa, sb, sc;
    write_dataset_csv(a, sa);
    write_dataset_csv(b, sb);
    write_dataset_csv(c, sc);
    CHECK(sa.str() == sb.str());
    CHECK(sa.str() != sc.str());
    CHECK(a.total_count() == 40);  // moderate: 10 studies in each of 4 designs
    CHECK(a.unpublished_count() == 0);
}

TEST_CASE("small size regime draws between 5 and 10 studies per design") {
    SimConfig cfg;
    cfg.size = SizeRegime::Small;
    cfg.selection = SelectionSpec::from_token("logit2");
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const NetworkDataset data = generate_complete_network(cfg, seed);
        std::vector<int> counts(4, 0);
        for (const auto& s : data.studies) counts[static_cast<std::size_t>(s.design_k - 1)]++;
        for (int c : counts) {
            CHECK(c >= 5);
            CHECK(c <= 10);
        }
    }
}

TEST_CASE("selection with saturated probability keeps everything published") {
    SimConfig cfg;
    cfg.selection = SelectionSpec::from_token("logit2");
    const NetworkDataset data = generate_complete_network(cfg, 17);
    SelectionParams saturated{Eigen::Vector2d(40.0, 0.0)};
    const NetworkDataset out = apply_selection(data, cfg.selection, saturated, 4);
    std::ostringstream sa, sb;
    write_dataset_csv(data, sa);
    write_dataset_csv(out, sb);
    CHECK(sa.str() == sb.str());
}

TEST_CASE("flat coin selection publishes about half the studies") {
    SimConfig cfg;
    cfg.size = SizeRegime::Large;
    cfg.selection = SelectionSpec::from_token("logit2");
    SelectionParams coin{Eigen::Vector2d(0.0, 0.0)};
    long total = 0, unpublished = 0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const NetworkDataset data = generate_complete_network(cfg, seed);
        const NetworkDataset out = apply_selection(data, cfg.selection, coin, seed + 1);
        total += out.total_count();
        unpublished += out.unpublished_count();
    }
    const double rate = static_cast<double>(unpublished) / static_cast<double>(total);
    CHECK(rate > 0.46);
    CHECK(rate < 0.54);
}

TEST_CASE("masking keeps only the registry view of unpublished studies") {
    SimConfig cfg;
    cfg.selection = SelectionSpec::from_token("logit2");
    const NetworkDataset data = generate_complete_network(cfg, 23);
    SelectionParams beta{Eigen::Vector2d(-0.2, 0.8)};
    const NetworkDataset out = apply_selection(data, cfg.selection, beta, 9);
    CHECK(out.unpublished_count() > 0);
    for (std::size_t i = 0; i < out.studies.size(); ++i) {
        const auto& masked = out.studies[i];
        const auto& original = data.studies[i];
        if (masked.published) continue;
        CHECK(masked.outcomes.empty());
        CHECK(!masked.shared_arm_variance.has_value());
        CHECK(masked.n_planned == original.n_planned);
    }
    validate_dataset(out);
}

TEST_CASE("a single replicate echoes the single fit") {
    SimConfig cfg;
    cfg.tau_mode = TauMode::Common;
    cfg.tau = {0.05};
    cfg.selection = SelectionSpec::from_token("logit2");
    cfg.beta_true = Eigen::Vector2d(-0.2, 0.8);
    cfg.replications = 1;
    cfg.seed = 31415;
    cfg.estimators = {EstimatorSpec::parse("mre", Direction::Higher)};
    const SimMetrics metrics = run_monte_carlo(cfg);

    const NetworkDataset complete = generate_complete_network(cfg, stream_key(cfg.seed, 0, 1));
    const NetworkDataset data =
        apply_selection(complete, cfg.selection, SelectionParams{cfg.beta_true},
                        stream_key(cfg.seed, 0, 2));
    const FitResult fit = fit_mre(data, cfg.analysis_tau);

    bool found = false;
    for (const auto& row : metrics.rows) {
        if (row.estimator == "mre" && row.param == "mu[A]") {
            found = true;
            CHECK(row.used == 1);
            CHECK(row.ave == doctest::Approx(fit.params.mu[0]).epsilon(1e-14));
            CHECK(row.sd == 0.0);
            CHECK((row.cp == 0.0 || row.cp == 1.0));
        }
    }
    CHECK(found);
}

TEST_CASE("monte carlo results are independent of the thread count") {
    SimConfig cfg;
    cfg.tau_mode = TauMode::Common;
    cfg.tau = {0.05};
    cfg.selection = SelectionSpec::from_token("logit2");
    cfg.beta_true = Eigen::Vector2d(-0.2, 0.8);
    cfg.replications = 4;
    cfg.bootstrap = 20;
    cfg.seed = 999;
    cfg.estimators = {EstimatorSpec::parse("mre", Direction::Higher),
                      EstimatorSpec::parse("ipw:logit2", Direction::Higher)};
    cfg.threads = 1;
    const SimMetrics a = run_monte_carlo(cfg);
    cfg.threads = 2;
    const SimMetrics b = run_monte_carlo(cfg);
    CHECK(sim_metrics_json(a, cfg).dump() == sim_metrics_json(b, cfg).dump());
    CHECK(sim_metrics_csv(a) == sim_metrics_csv(b));
}

TEST_CASE("without selection the estimator is unbiased within monte carlo error") {
    // Exact-model oracle: outcomes drawn from the fitted family itself, so
    // the only deviation from the truth is Monte Carlo noise.
    const double mu_ac = 0.5, mu_bc = 0.3, tau = 0.05;
    const int reps = 400;
    std::vector<double> est_a, est_b;
    const auto designs = sim_detail::simulated_designs();
    for (int r = 0; r < reps; ++r) {
        RngStream rng(913, static_cast<std::uint64_t>(r));
        NetworkDataset data;
        data.designs = designs;
        data.treatments = {"A", "C", "B"};
        int id = 0;
        for (int k = 0; k < 4; ++k) {
            const double truth =
                k == 0 ? mu_ac : (k == 1 ? mu_bc : (k == 2 ? mu_ac - mu_bc : 0.0));
            for (int i = 0; i < 10; ++i) {
                const std::string sid = "s" + std::to_string(++id);
                if (k < 3) {
                    const double se = rng.uniform(0.15, 0.5);
                    const double y = truth + std::sqrt(se * se + tau * tau) * rng.normal();
                    const auto& d = designs[static_cast<std::size_t>(k)];
                    data.studies.push_back(
                        two_arm(sid, k + 1, d.treatments[0], d.treatments[1], y, se, 100));
                } else {
                    const double se_ac = rng.uniform(0.15, 0.5);
                    const double se_bc = rng.uniform(0.15, 0.5);
                    const double shared =
                        rng.uniform(0.3, 0.7) * std::min(se_ac * se_ac, se_bc * se_bc);
                    // Chol factor of Sigma + Omega for the correlated draw.
                    const double v00 = se_ac * se_ac + tau * tau;
                    const double v11 = se_bc * se_bc + tau * tau;
                    const double v01 = shared + 0.5 * tau * tau;
                    const double l00 = std::sqrt(v00);
                    const double l10 = v01 / l00;
                    const double l11 = std::sqrt(v11 - l10 * l10);
                    const double z0 = rng.normal(), z1 = rng.normal();
                    const double y_ac = mu_ac + l00 * z0;
                    const double y_bc = mu_bc + l10 * z0 + l11 * z1;
                    data.studies.push_back(three_arm(sid, 4, "A", "B", "C", y_ac, se_ac, y_bc,
                                                     se_bc, shared, 100));
                }
            }
        }
        const FitResult fit = fit_mre(data, TauMode::Common);
        est_a.push_back(fit.params.mu[0]);
        est_b.push_back(fit.params.mu[1]);
    }
    CHECK(std::fabs(mean(est_a) - mu_ac) <
          2.0 * sample_sd(est_a) / std::sqrt(static_cast<double>(reps)));
    CHECK(std::fabs(mean(est_b) - mu_bc) <
          2.0 * sample_sd(est_b) / std::sqrt(static_cast<double>(reps)));
}

TEST_CASE("binomial generation carries only the small-count log-odds bias") {
    // Finite event counts bias the empirical log-odds ratio slightly; with
    // everything published the pooled estimate stays within a small band of
    // the truth.
    SimConfig cfg;
    cfg.tau_mode = TauMode::Common;
    cfg.tau = {0.05};
    cfg.selection = SelectionSpec::from_token("logit2");
    cfg.beta_true = Eigen::Vector2d(40.0, 0.0);  // pi = 1: nothing masked
    cfg.replications = 150;
    cfg.seed = 777;
    cfg.estimators = {EstimatorSpec::parse("mre", Direction::Higher)};
    cfg.threads = 2;
    const SimMetrics metrics = run_monte_carlo(cfg);
    for (const auto& row : metrics.rows) {
        if (row.param == "mu[A]") CHECK(std::fabs(row.ave - cfg.mu_ac) < 0.02);
        if (row.param == "mu[B]") CHECK(std::fabs(row.ave - cfg.mu_bc) < 0.02);
    }
    CHECK(metrics.mean_unpublished_fraction == 0.0);
}

TEST_CASE("positive-slope selection biases the unadjusted estimate upward") {
    SimConfig cfg;
    cfg.tau_mode = TauMode::Common;
    cfg.tau = {0.05};
    cfg.selection = SelectionSpec::from_token("logit2");
    cfg.beta_true = Eigen::Vector2d(-0.2, 0.8);
    cfg.replications = 200;
    cfg.seed = 2718;
    cfg.estimators = {EstimatorSpec::parse("mre", Direction::Higher)};
    cfg.threads = 2;
    const SimMetrics metrics = run_monte_carlo(cfg);
    for (const auto& row : metrics.rows) {
        if (row.param == "mu[A]") {
            // Overestimation with at least 95% sign confidence.
            CHECK(row.ave - cfg.mu_ac > 1.65 * row.sd / std::sqrt(static_cast<double>(row.used)));
        }
    }
    CHECK(metrics.mean_unpublished_fraction > 0.2);
    CHECK(metrics.mean_unpublished_fraction < 0.4);
}

TEST_CASE("estimator list overload matches the embedded configuration") {
    SimConfig cfg;
    cfg.tau_mode = TauMode::Common;
    cfg.tau = {0.05};
    cfg.selection = SelectionSpec::from_token("logit2");
    cfg.beta_true = Eigen::Vector2d(-0.2, 0.8);
    cfg.replications = 3;
    cfg.seed = 51;
    const std::vector<EstimatorSpec> estimators{EstimatorSpec::parse("mre", Direction::Higher)};
    cfg.estimators = estimators;
    const SimMetrics a = run_monte_carlo(cfg);
    SimConfig bare = cfg;
    bare.estimators.clear();
    const SimMetrics b = run_monte_carlo(bare, estimators);
    CHECK(sim_metrics_csv(a) == sim_metrics_csv(b));
}

TEST_CASE("estimator tokens parse") {
    const auto mre = EstimatorSpec::parse("mre", Direction::Higher);
    CHECK(!mre.ipw);
    CHECK(mre.label() == "mre");
    const auto ipw = EstimatorSpec::parse("ipw:probitK1", Direction::Lower);
    CHECK(ipw.ipw);
    CHECK(ipw.with_ci);
    CHECK(ipw.selection.family == SelectionFamily::Probit);
    CHECK(ipw.selection.direction == Direction::Lower);
    const auto noci = EstimatorSpec::parse("ipw:logit2K:noci", Direction::Higher);
    CHECK(!noci.with_ci);
    CHECK(noci.label() == "ipw:logit2K:noci");
    CHECK_THROWS_AS(EstimatorSpec::parse("bogus", Direction::Higher), ValidationError);
}
