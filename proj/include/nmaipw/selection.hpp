#pragma once

#include "nmaipw/network_data.hpp"

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace nmaipw {

enum class SelectionFamily { Logistic, Probit };
enum class SelectionStructure { Common, DesignIntercept, Separate };

/// A selection-function variant: family x intercept structure, plus the
/// direction of the t-statistic that drives publication.
struct SelectionSpec {
    SelectionFamily family = SelectionFamily::Logistic;
    SelectionStructure structure = SelectionStructure::Common;
    Direction direction = Direction::Higher;

    int param_count(int n_designs) const;
    /// CLI tokens: logit2|probit2|logitK1|probitK1|logit2K|probit2K.
    std::string token() const;
    static SelectionSpec from_token(const std::string& token,
                                    Direction direction = Direction::Higher);
};

/// Coefficients in spec layout. Common: (b0, b1). Design intercept:
/// (b0_1..b0_K, b1). Separate: (b0_1, b1_1, ..., b0_K, b1_K).
struct SelectionParams {
    Eigen::VectorXd beta;
};

/// Moment basis g(n): one basis vector per study, same dimension as beta.
/// The design ordinal argument lets the separate structure build its
/// block-diagonal layout; the other structures ignore it.
struct MomentFunction {
    int dim = 0;
    std::function<Eigen::VectorXd(double n, int design_ordinal)> eval;
};

/// Probability that a study in design k (1-based) with t-statistic t_star is
/// published.
double publish_probability(const SelectionSpec& spec, const SelectionParams& params,
                           int design_k, double t_star);

/// Common: (1, sqrt(n)). Design intercept: (n^(j/2), j = 0..K). Separate:
/// per-design blocks of (1, sqrt(n)).
MomentFunction default_moment_function(const SelectionSpec& spec, int n_designs);

/// Registry-calibrated moment equations U(beta) = sum {1 - Z/pi} g(n) over
/// all S studies.
Eigen::VectorXd estimating_equation(const NetworkDataset& data, const SelectionSpec& spec,
                                    const SelectionParams& params, const MomentFunction& g);

struct SelectionDiagnostics {
    double residual_norm = 0.0;       ///< infinity norm of U at the solution
    bool exact_root = true;           ///< false: least-norm solution, no exact root
    int iterations = 0;
    double jacobian_condition = 0.0;  ///< condition estimate at the solution
    bool ill_conditioned = false;
    std::vector<int> pinned_designs;  ///< 1-based designs forced to pi = 1
    std::vector<std::string> warnings;
};

struct SelectionSolution {
    SelectionParams params;
    SelectionDiagnostics diagnostics;
};

/// Solves U(beta) = 0 by damped Newton (Levenberg-Marquardt) iteration from
/// a deterministic restart grid. Finite samples do not always admit an exact
/// root; the least-norm stationary point is then returned with
/// diagnostics.exact_root = false. Throws AllPublished when no unpublished
/// study informs the equations and NoRoot when every restart diverges.
SelectionSolution solve_selection(const NetworkDataset& data, const SelectionSpec& spec,
                                  const MomentFunction* g = nullptr);

namespace detail {

/// solve_selection with a warm-start hint (full coefficient layout) tried
/// before the restart grid; used by the bootstrap inner loop.
SelectionSolution solve_selection_hinted(const NetworkDataset& data, const SelectionSpec& spec,
                                         const Eigen::VectorXd* hint);

}  // namespace detail

}  // namespace nmaipw
