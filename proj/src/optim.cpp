#include "nmaipw/optim.hpp"

#include <cmath>
#include <limits>

namespace nmaipw {

namespace {

constexpr double kBoundEps = 1e-12;

Eigen::VectorXd project(const Eigen::VectorXd& x, const Eigen::VectorXd& lower) {
    return x.cwiseMax(lower);
}

}  // namespace

OptimResult maximize_bounded(const ObjectiveFn& f, const Eigen::VectorXd& x0,
                             const Eigen::VectorXd& lower, const OptimOptions& options) {
    const auto n = x0.size();
    OptimResult result;

    // Internally minimize the negated objective.
    auto eval = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
        ++result.n_evals;
        const double v = f(x, grad);
        if (grad) *grad = -*grad;
        return -v;
    };

    Eigen::VectorXd x = project(x0, lower);
    Eigen::VectorXd g(n);
    double fx = eval(x, &g);
    if (!std::isfinite(fx)) {
        result.x = x;
        result.f = -fx;
        return result;
    }

    Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n);

    auto projected_gradient = [&](const Eigen::VectorXd& xc, const Eigen::VectorXd& gc) {
        Eigen::VectorXd pg = gc;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (xc[i] <= lower[i] + kBoundEps && gc[i] > 0.0) pg[i] = 0.0;
        }
        return pg;
    };

    bool converged = false;
    int iter = 0;
    double last_step_df = std::numeric_limits<double>::infinity();
    for (; iter < options.max_iterations; ++iter) {
        const Eigen::VectorXd pg = projected_gradient(x, g);
        if (pg.lpNorm<Eigen::Infinity>() < options.gradient_tol && iter > 0) {
            converged = true;
            break;
        }

        Eigen::VectorXd d = -(h_inv * g);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (x[i] <= lower[i] + kBoundEps && d[i] < 0.0) d[i] = 0.0;
        }
        if (d.dot(g) > -1e-14 * d.norm() * g.norm()) {
            d = -pg;  // fall back to steepest descent along the feasible cone
            h_inv.setIdentity();
        }
        if (d.norm() == 0.0) {
            converged = true;
            break;
        }

        // Backtracking Armijo search on the projected path.
        double alpha = 1.0;
        double f_new = fx;
        Eigen::VectorXd x_new = x;
        Eigen::VectorXd g_new = g;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = project(x + alpha * d, lower);
            const Eigen::VectorXd step = x_new - x;
            if (step.lpNorm<Eigen::Infinity>() == 0.0) break;
            f_new = eval(x_new, &g_new);
            if (std::isfinite(f_new) && f_new <= fx + 1e-4 * g.dot(step)) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            // No step improves the objective: either the gradient is small
            // or the objective is converged to floating-point resolution
            // (extremely concentrated likelihoods).
            converged = pg.lpNorm<Eigen::Infinity>() < 1e-4 ||
                        last_step_df <= options.rel_f_tol * (std::fabs(fx) + 1e-12);
            break;
        }

        const Eigen::VectorXd s = x_new - x;
        const Eigen::VectorXd y = g_new - g;
        const double sty = s.dot(y);
        if (sty > 1e-12 * s.norm() * y.norm()) {
            const Eigen::VectorXd hy = h_inv * y;
            const double yhy = y.dot(hy);
            // BFGS inverse update.
            h_inv += ((sty + yhy) / (sty * sty)) * (s * s.transpose()) -
                     (hy * s.transpose() + s * hy.transpose()) / sty;
        }

        const double f_prev = fx;
        x = x_new;
        fx = f_new;
        g = g_new;
        last_step_df = std::fabs(f_prev - fx);

        if (std::fabs(f_prev - fx) <= options.rel_f_tol * (std::fabs(fx) + 1e-12)) {
            const Eigen::VectorXd pg2 = projected_gradient(x, g);
            if (pg2.lpNorm<Eigen::Infinity>() < options.gradient_tol) {
                converged = true;
                ++iter;
                break;
            }
        }
    }

    result.x = x;
    result.f = -fx;
    result.converged = converged;
    result.iterations = iter;
    return result;
}

}  // namespace nmaipw
