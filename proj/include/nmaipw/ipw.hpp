#pragma once

#include "nmaipw/mre_model.hpp"
#include "nmaipw/network_data.hpp"
#include "nmaipw/selection.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace nmaipw {

struct BootstrapSummary {
    int requested = 0;  ///< B
    int completed = 0;
    int failed = 0;
    std::vector<std::string> param_names;
    /// Completed replicates in replicate-index order, one column per parameter.
    Eigen::MatrixXd replicate_estimates;
    Eigen::VectorXd sd;  ///< sigma_boot per parameter (1/B convention)
    std::vector<ParamInterval> ci;
};

/// Publication-bias-adjusted fit: selection weights, weighted likelihood
/// optimum, and (after parametric_bootstrap) resampling-based intervals.
struct IpwFit {
    FitResult fit;  ///< Wald machinery intentionally absent
    SelectionSpec spec;
    SelectionSolution selection;
    std::vector<double> pi_hat;  ///< per published study, dataset order
    bool all_published_fallback = false;
    BootstrapSummary boot;
};

IpwFit fit_ipw(const NetworkDataset& data, const SelectionSpec& spec,
               TauMode mode = TauMode::DesignSpecific, const TreatmentId& reference = {});

/// Resamples outcomes from the fitted model, re-solves the selection
/// equations and refits per replicate; publication flags and sample sizes
/// stay fixed. Deterministic in (seed, replicate index) even when threaded.
BootstrapSummary parametric_bootstrap(const NetworkDataset& data, const SelectionSpec& spec,
                                      const IpwFit& fit, int B, std::uint64_t seed,
                                      int threads = 1);

/// Convenience wrapper: fit_ipw followed by parametric_bootstrap.
IpwFit fit_ipw_with_bootstrap(const NetworkDataset& data, const SelectionSpec& spec,
                              TauMode mode, const TreatmentId& reference, int B,
                              std::uint64_t seed, int threads = 1);

/// sigma_boot of a pairwise contrast from replicate-level differencing.
double bootstrap_contrast_sd(const BootstrapSummary& boot, const FitResult& fit,
                             const TreatmentId& x, const TreatmentId& y);

/// Standardized-quantile interval for a pairwise contrast.
ParamInterval bootstrap_contrast_ci(const BootstrapSummary& boot, const FitResult& fit,
                                    const TreatmentId& x, const TreatmentId& y);

}  // namespace nmaipw
