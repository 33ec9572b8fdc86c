#pragma once

#include "nmaipw/ipw.hpp"
#include "nmaipw/mre_model.hpp"
#include "nmaipw/network_data.hpp"
#include "nmaipw/rng.hpp"
#include "nmaipw/selection.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace nmaipw {

enum class SizeRegime { Small, Moderate, Large };

SizeRegime size_regime_from_string(const std::string& s);
std::string to_string(SizeRegime regime);

/// One analysis method evaluated by the Monte Carlo loop.
struct EstimatorSpec {
    bool ipw = false;
    SelectionSpec selection;  ///< analysis selection model (ipw only)
    bool with_ci = true;      ///< run the bootstrap (ipw); Wald CIs are free for mre

    std::string label() const;
    /// "mre", "ipw:<token>", or "ipw:<token>:noci".
    static EstimatorSpec parse(const std::string& text, Direction direction);
};

struct SimConfig {
    double mu_ac = 0.5;
    double mu_bc = 0.3;
    TauMode tau_mode = TauMode::Common;  ///< heterogeneity structure of the truth
    std::vector<double> tau = {0.05};    ///< one value (common) or one per design
    SizeRegime size = SizeRegime::Moderate;
    SelectionSpec selection;      ///< true selective-publication process
    Eigen::VectorXd beta_true;    ///< its coefficients
    int replications = 1;
    int bootstrap = 1000;
    std::uint64_t seed = 0;
    TauMode analysis_tau = TauMode::DesignSpecific;
    std::vector<EstimatorSpec> estimators;
    int threads = 1;
};

struct MetricRow {
    std::string estimator;
    std::string param;  ///< "mu[A]", "mu[B]", "tau[k]" or "tau"
    double truth = 0.0;
    int used = 0;  ///< replicates contributing
    double ave = 0.0;
    double sd = 0.0;
    double cp = 0.0;    ///< NaN when no intervals were produced
    double loci = 0.0;  ///< NaN when no intervals were produced
    int noz = -1;       ///< count of exact-zero estimates; tau params only
    bool is_tau = false;
};

struct SimMetrics {
    int replications = 0;
    std::vector<MetricRow> rows;
    std::map<std::string, int> failures;  ///< estimator label -> failed replicates
    double mean_unpublished_fraction = 0.0;
};

/// Complete (all published) network of the fixed 3-treatment, 4-design
/// layout: {A,C}, {B,C}, {A,B}, {A,B,C}, generated from binomial patient
/// counts.
NetworkDataset generate_complete_network(const SimConfig& cfg, std::uint64_t replicate_seed);

/// Draws publication flags from the selection function evaluated at each
/// study's empirical t-statistic and masks the outcomes of unpublished
/// studies (registry view: only the sample size survives).
NetworkDataset apply_selection(const NetworkDataset& data, const SelectionSpec& spec,
                               const SelectionParams& beta_true, std::uint64_t seed);

SimMetrics run_monte_carlo(const SimConfig& cfg);
SimMetrics run_monte_carlo(const SimConfig& cfg, const std::vector<EstimatorSpec>& estimators);

namespace sim_detail {

/// Event rate in the treated arm implied by a log-odds ratio against a
/// control with rate control_rate.
double event_rate_from_log_or(double log_or, double control_rate);

struct ArmCells {
    long size = 0;  ///< subjects per arm (balanced design)
    long events_a = -1;
    long events_b = -1;
    long events_c = -1;
    bool corrected = false;  ///< +0.5 continuity correction applied
};

/// Draws the per-arm event counts for one study, redrawing degenerate
/// (zero/full) cells up to 100 times before falling back to the correction.
ArmCells draw_cells(RngStream& rng, double pa, double pb, double pc, long arm_size,
                    bool need_a, bool need_b, bool need_c);

/// Log-odds and its variance for one arm's cells.
void arm_logit(long events, long size, bool corrected, double& logit, double& var);

/// Builds the published StudyRecord for a design from the drawn cells.
StudyRecord study_from_cells(const std::string& study_id, const DesignType& design,
                             const ArmCells& cells);

/// The fixed simulated network skeleton (treatments and the four designs).
std::vector<DesignType> simulated_designs();

}  // namespace sim_detail

}  // namespace nmaipw
