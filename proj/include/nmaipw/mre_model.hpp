#pragma once

#include "nmaipw/network_data.hpp"
#include "nmaipw/optim.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace nmaipw {

enum class TauMode { Common, DesignSpecific };

TauMode tau_mode_from_string(const std::string& s);
std::string to_string(TauMode mode);

struct HeterogeneityStructure {
    TauMode mode = TauMode::DesignSpecific;
    /// One value when common, one per design (ordinal order) otherwise.
    std::vector<double> values;

    double tau_for_design(int ordinal) const {
        return mode == TauMode::Common ? values.at(0)
                                       : values.at(static_cast<std::size_t>(ordinal));
    }
};

/// Basic treatment effects against a reference plus the heterogeneity SDs.
/// Derived contrasts are never stored; they follow from consistency.
struct ModelParams {
    TreatmentId reference;
    std::vector<TreatmentId> basic;  ///< estimable non-reference treatments
    Eigen::VectorXd mu;              ///< aligned with `basic`
    HeterogeneityStructure tau;

    /// mu_x - mu_y with mu_reference = 0; throws UnknownTreatment.
    double contrast(const TreatmentId& x, const TreatmentId& y) const;
    int mu_index(const TreatmentId& t) const;  ///< -1 for the reference
};

struct ParamInterval {
    double lower = 0.0;
    double upper = 0.0;
    double length() const { return upper - lower; }
    bool contains(double v) const { return lower <= v && v <= upper; }
};

struct FitResult {
    ModelParams params;
    double loglik = 0.0;
    bool converged = false;
    int n_evals = 0;

    /// Free parameters in optimizer order: mu entries, then tau entries.
    std::vector<std::string> param_names;
    Eigen::VectorXd estimates;
    /// Maps design ordinal -> position of its tau in `estimates` (-1 when the
    /// design has no published studies and its tau is pinned at 0).
    std::vector<int> tau_param_index;

    /// Wald machinery from the observed information; absent when the Hessian
    /// is singular at the optimum.
    bool wald_available = false;
    Eigen::MatrixXd covariance;
    std::vector<double> se;
    std::vector<ParamInterval> ci;

    int mu_count() const { return static_cast<int>(params.basic.size()); }
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Heterogeneity block for one design: tau^2 on the diagonal and tau^2/2 off
/// it, so every pairwise contrast carries the same between-study variance.
Eigen::MatrixXd design_heterogeneity_matrix(const DesignType& design, double tau_k);

/// Full-network log-likelihood over published studies (2*pi constant
/// omitted). Optional weights are per published study, in dataset order.
double log_likelihood(const NetworkDataset& data, const ModelParams& params,
                      const std::vector<double>* weights = nullptr);

/// Comparator of the most published comparisons; ties resolve to the
/// earliest-seen treatment.
TreatmentId default_reference(const NetworkDataset& data);

FitResult fit_mre(const NetworkDataset& data, TauMode mode = TauMode::DesignSpecific,
                  const TreatmentId& reference = {});

/// Consistency contrast with a delta-method standard error.
std::pair<double, double> derived_contrast(const FitResult& fit, const TreatmentId& x,
                                           const TreatmentId& y);

// ---------------------------------------------------------------------------
// Likelihood object shared with the IPW estimator
// ---------------------------------------------------------------------------

class NmaLikelihood {
public:
    struct StudyBlock {
        int study_index = 0;  ///< position in data.studies
        int design_ordinal = 0;
        int tau_index = 0;  ///< position of this design's tau in theta
        int d = 1;
        Eigen::VectorXd y;
        Eigen::MatrixXd sigma;
        Eigen::MatrixXd cmat;  ///< d x n_mu contrast mapping
        double weight = 1.0;
    };

    NmaLikelihood(const NetworkDataset& data, TauMode mode, const TreatmentId& reference,
                  const std::vector<double>* weights = nullptr,
                  const std::vector<TreatmentId>* basic_override = nullptr);

    int n_mu() const { return static_cast<int>(basic_.size()); }
    int n_params() const { return n_mu() + n_tau_; }
    const std::vector<std::string>& param_names() const { return param_names_; }
    const std::vector<TreatmentId>& basic() const { return basic_; }
    const TreatmentId& reference() const { return reference_; }
    const std::vector<int>& tau_param_index() const { return tau_param_index_; }
    std::vector<StudyBlock>& blocks() { return blocks_; }
    const std::vector<StudyBlock>& blocks() const { return blocks_; }

    double value(const Eigen::VectorXd& theta) const;
    double value_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const;

    Eigen::VectorXd lower_bounds() const;
    /// Fixed-effect network WLS estimate used to seed the optimizer.
    Eigen::VectorXd initial_mu() const;
    /// The five deterministic restart points.
    std::vector<Eigen::VectorXd> start_points() const;

    struct WarmFit {
        Eigen::VectorXd theta;
        double loglik = 0.0;
        bool converged = false;
        int n_evals = 0;
    };
    /// Single optimization from theta0 with one fallback restart.
    WarmFit fit_from(const Eigen::VectorXd& theta0) const;

    /// Multistart fit; computes Wald intervals when requested.
    FitResult fit(bool with_wald = true) const;

    ModelParams params_from_theta(const Eigen::VectorXd& theta) const;
    Eigen::VectorXd theta_from_params(const ModelParams& params) const;

private:
    TreatmentId reference_;
    std::vector<TreatmentId> basic_;
    TauMode mode_;
    int n_tau_ = 0;
    int n_designs_ = 0;
    std::vector<int> tau_param_index_;  ///< design ordinal -> theta index or -1
    std::vector<std::string> param_names_;
    std::vector<StudyBlock> blocks_;
};

}  // namespace nmaipw
