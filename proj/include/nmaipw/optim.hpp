#pragma once

#include <Eigen/Dense>

#include <functional>

namespace nmaipw {

/// Objective with analytic gradient: returns f(x) and fills *grad when the
/// pointer is non-null.
using ObjectiveFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

struct OptimOptions {
    int max_iterations = 500;
    double gradient_tol = 1e-6;   ///< infinity norm of the projected gradient
    double rel_f_tol = 1e-10;     ///< relative change of the objective
};

struct OptimResult {
    Eigen::VectorXd x;
    double f = 0.0;
    bool converged = false;
    int iterations = 0;
    int n_evals = 0;
};

/// Maximizes f over { x : x >= lower } with a projected BFGS iteration.
/// Components with lower = -infinity are unconstrained. Estimates that hit a
/// bound land on it exactly.
OptimResult maximize_bounded(const ObjectiveFn& f, const Eigen::VectorXd& x0,
                             const Eigen::VectorXd& lower,
                             const OptimOptions& options = {});

}  // namespace nmaipw
