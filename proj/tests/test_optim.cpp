#include "nmaipw/optim.hpp"

#include <doctest.h>

using namespace nmaipw;

TEST_CASE("unconstrained quadratic maximum") {
    ObjectiveFn f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
        const double v = -((x[0] - 2.0) * (x[0] - 2.0) + 3.0 * (x[1] + 1.0) * (x[1] + 1.0));
        if (g) {
            (*g)[0] = -2.0 * (x[0] - 2.0);
            (*g)[1] = -6.0 * (x[1] + 1.0);
        }
        return v;
    };
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(2);
    Eigen::VectorXd lb = Eigen::VectorXd::Constant(2, -1e30);
    const OptimResult r = maximize_bounded(f, x0, lb);
    CHECK(r.converged);
    CHECK(r.x[0] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(r.x[1] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("active bound lands exactly on the boundary") {
    // Maximum of the unconstrained problem sits at y = -1; with y >= 0 the
    // constrained optimum is y = 0 exactly.
    ObjectiveFn f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
        const double v = -((x[0] - 2.0) * (x[0] - 2.0) + 3.0 * (x[1] + 1.0) * (x[1] + 1.0));
        if (g) {
            (*g)[0] = -2.0 * (x[0] - 2.0);
            (*g)[1] = -6.0 * (x[1] + 1.0);
        }
        return v;
    };
    Eigen::VectorXd x0(2);
    x0 << 0.0, 0.5;
    Eigen::VectorXd lb(2);
    lb << -1e30, 0.0;
    const OptimResult r = maximize_bounded(f, x0, lb);
    CHECK(r.converged);
    CHECK(r.x[0] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(r.x[1] == 0.0);
}

TEST_CASE("banana valley converges") {
    ObjectiveFn f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
        const double a = x[1] - x[0] * x[0];
        const double b = 1.0 - x[0];
        if (g) {
            (*g)[0] = -(-400.0 * x[0] * a - 2.0 * b);
            (*g)[1] = -(200.0 * a);
        }
        return -(100.0 * a * a + b * b);
    };
    Eigen::VectorXd x0(2);
    x0 << -1.2, 1.0;
    Eigen::VectorXd lb = Eigen::VectorXd::Constant(2, -1e30);
    OptimOptions opts;
    opts.max_iterations = 2000;
    const OptimResult r = maximize_bounded(f, x0, lb, opts);
    CHECK(r.converged);
    CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(r.x[1] == doctest::Approx(1.0).epsilon(1e-4));
}
