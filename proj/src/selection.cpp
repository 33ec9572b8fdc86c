#include "nmaipw/selection.hpp"

#include "nmaipw/errors.hpp"
#include "nmaipw/stats.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>

namespace nmaipw {

namespace {

constexpr double kPiClamp = 1e-10;
constexpr double kResidualTol = 1e-8;
/// Intercept that saturates both selection families to pi = 1 in doubles.
constexpr double kPinnedIntercept = 40.0;

double clamp_pi(double pi) {
    return std::min(std::max(pi, kPiClamp), 1.0 - kPiClamp);
}

double family_cdf(SelectionFamily family, double eta) {
    return family == SelectionFamily::Logistic ? logistic_cdf(eta) : normal_cdf(eta);
}

}  // namespace

int SelectionSpec::param_count(int n_designs) const {
    switch (structure) {
        case SelectionStructure::Common: return 2;
        case SelectionStructure::DesignIntercept: return n_designs + 1;
        case SelectionStructure::Separate: return 2 * n_designs;
    }
    return 0;
}

std::string SelectionSpec::token() const {
    const std::string fam = family == SelectionFamily::Logistic ? "logit" : "probit";
    switch (structure) {
        case SelectionStructure::Common: return fam + "2";
        case SelectionStructure::DesignIntercept: return fam + "K1";
        case SelectionStructure::Separate: return fam + "2K";
    }
    return fam;
}

SelectionSpec SelectionSpec::from_token(const std::string& token, Direction direction) {
    SelectionSpec spec;
    spec.direction = direction;
    std::string rest;
    if (token.rfind("logit", 0) == 0) {
        spec.family = SelectionFamily::Logistic;
        rest = token.substr(5);
    } else if (token.rfind("probit", 0) == 0) {
        spec.family = SelectionFamily::Probit;
        rest = token.substr(6);
    } else {
        throw ValidationError("unknown selection token '" + token + "'");
    }
    if (rest == "2") {
        spec.structure = SelectionStructure::Common;
    } else if (rest == "K1") {
        spec.structure = SelectionStructure::DesignIntercept;
    } else if (rest == "2K") {
        spec.structure = SelectionStructure::Separate;
    } else {
        throw ValidationError("unknown selection token '" + token + "'");
    }
    return spec;
}

double publish_probability(const SelectionSpec& spec, const SelectionParams& params,
                           int design_k, double t_star) {
    const auto& beta = params.beta;
    double eta = 0.0;
    switch (spec.structure) {
        case SelectionStructure::Common: {
            if (beta.size() != 2) {
                throw ValidationError("common selection expects 2 coefficients");
            }
            eta = beta[0] + beta[1] * t_star;
            break;
        }
        case SelectionStructure::DesignIntercept: {
            const int k = static_cast<int>(beta.size()) - 1;
            if (k < 1 || design_k < 1 || design_k > k) {
                throw ValidationError("design index " + std::to_string(design_k) +
                                      " out of range for the selection coefficients");
            }
            eta = beta[design_k - 1] + beta[k] * t_star;
            break;
        }
        case SelectionStructure::Separate: {
            const int k = static_cast<int>(beta.size()) / 2;
            if (beta.size() % 2 != 0 || design_k < 1 || design_k > k) {
                throw ValidationError("design index " + std::to_string(design_k) +
                                      " out of range for the selection coefficients");
            }
            eta = beta[2 * (design_k - 1)] + beta[2 * (design_k - 1) + 1] * t_star;
            break;
        }
    }
    return family_cdf(spec.family, eta);
}

MomentFunction default_moment_function(const SelectionSpec& spec, int n_designs) {
    MomentFunction g;
    switch (spec.structure) {
        case SelectionStructure::Common: {
            g.dim = 2;
            g.eval = [](double n, int) {
                Eigen::VectorXd v(2);
                v << 1.0, std::sqrt(n);
                return v;
            };
            break;
        }
        case SelectionStructure::DesignIntercept: {
            // Powers n^(j/2); for K = 4 this is (1, sqrt(n), n, n^1.5, n^2).
            const int dim = n_designs + 1;
            g.dim = dim;
            g.eval = [dim](double n, int) {
                Eigen::VectorXd v(dim);
                const double root = std::sqrt(n);
                double acc = 1.0;
                for (int j = 0; j < dim; ++j) {
                    v[j] = acc;
                    acc *= root;
                }
                return v;
            };
            break;
        }
        case SelectionStructure::Separate: {
            const int dim = 2 * n_designs;
            g.dim = dim;
            g.eval = [dim](double n, int design_ordinal) {
                Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
                v[2 * design_ordinal] = 1.0;
                v[2 * design_ordinal + 1] = std::sqrt(n);
                return v;
            };
            break;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Estimating equations
// ---------------------------------------------------------------------------

namespace {

struct Row {
    int ordinal = 0;  ///< design ordinal, 0-based
    bool published = false;
    double t_star = 0.0;
    double n = 0.0;
};

std::vector<Row> make_rows(const NetworkDataset& data, Direction direction) {
    std::vector<Row> rows;
    rows.reserve(data.studies.size());
    for (const auto& study : data.studies) {
        Row r;
        r.ordinal = data.design_ordinal(study);
        r.published = study.published;
        r.n = static_cast<double>(study.n_planned);
        if (study.published) r.t_star = study_t_statistic(study, direction);
        rows.push_back(r);
    }
    return rows;
}

/// U(beta) with long-double accumulation; `eta` maps (ordinal, t) to the
/// linear index under the current coefficient vector.
template <typename EtaFn>
Eigen::VectorXd accumulate_equations(const std::vector<Row>& rows,
                                     const std::vector<Eigen::VectorXd>& basis,
                                     SelectionFamily family, const EtaFn& eta, int dim) {
    std::vector<long double> acc(static_cast<std::size_t>(dim), 0.0L);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Row& r = rows[i];
        double factor = 1.0;
        if (r.published) {
            const double pi = clamp_pi(family_cdf(family, eta(r.ordinal, r.t_star)));
            factor = 1.0 - 1.0 / pi;
        }
        const Eigen::VectorXd& g = basis[i];
        for (int j = 0; j < dim; ++j) {
            acc[static_cast<std::size_t>(j)] += static_cast<long double>(factor) * g[j];
        }
    }
    Eigen::VectorXd u(dim);
    for (int j = 0; j < dim; ++j) u[j] = static_cast<double>(acc[static_cast<std::size_t>(j)]);
    return u;
}

}  // namespace

Eigen::VectorXd estimating_equation(const NetworkDataset& data, const SelectionSpec& spec,
                                    const SelectionParams& params, const MomentFunction& g) {
    const int k = data.design_count();
    if (g.dim != spec.param_count(k)) {
        throw ValidationError("moment function dimension does not match the coefficient count");
    }
    if (params.beta.size() != g.dim) {
        throw ValidationError("coefficient vector does not match the moment dimension");
    }
    const auto rows = make_rows(data, spec.direction);
    std::vector<Eigen::VectorXd> basis;
    basis.reserve(rows.size());
    for (const auto& r : rows) basis.push_back(g.eval(r.n, r.ordinal));
    auto eta = [&](int ordinal, double t) {
        switch (spec.structure) {
            case SelectionStructure::Common:
                return params.beta[0] + params.beta[1] * t;
            case SelectionStructure::DesignIntercept:
                return params.beta[ordinal] + params.beta[k] * t;
            case SelectionStructure::Separate:
                return params.beta[2 * ordinal] + params.beta[2 * ordinal + 1] * t;
        }
        return 0.0;
    };
    return accumulate_equations(rows, basis, spec.family, eta, g.dim);
}

// ---------------------------------------------------------------------------
// Root solver
// ---------------------------------------------------------------------------

namespace {

/// One decoupled system: common and design-intercept use a single instance,
/// the separate structure solves one per design.
struct System {
    SelectionFamily family = SelectionFamily::Logistic;
    int p = 0;
    std::vector<int> intercept_pos;  ///< design ordinal -> coefficient index (-1: not here)
    int slope_pos = 0;
    std::vector<Row> rows;
    std::vector<Eigen::VectorXd> raw_basis;
    std::vector<Eigen::VectorXd> solve_basis;  ///< standardized copy

    Eigen::VectorXd eval(const Eigen::VectorXd& beta, bool raw) const {
        auto eta_fn = [&](int ordinal, double t) {
            return beta[intercept_pos[static_cast<std::size_t>(ordinal)]] + beta[slope_pos] * t;
        };
        return accumulate_equations(rows, raw ? raw_basis : solve_basis, family, eta_fn, p);
    }
};

Eigen::MatrixXd numeric_jacobian(const System& sys, const Eigen::VectorXd& beta, bool raw) {
    const int p = sys.p;
    Eigen::MatrixXd jac(p, p);
    for (int j = 0; j < p; ++j) {
        const double h = 1e-6 * std::max(1.0, std::fabs(beta[j]));
        Eigen::VectorXd bp = beta, bm = beta;
        bp[j] += h;
        bm[j] -= h;
        jac.col(j) = (sys.eval(bp, raw) - sys.eval(bm, raw)) / (2.0 * h);
    }
    return jac;
}

struct NewtonOutcome {
    bool stationary = false;  ///< iteration settled (root or least-norm point)
    bool root = false;        ///< raw residual below the hard tolerance
    Eigen::VectorXd beta;
    double objective = std::numeric_limits<double>::infinity();  ///< |U_std|^2
    double raw_residual = std::numeric_limits<double>::infinity();
    int iterations = 0;
};

/// Damped Newton in Levenberg-Marquardt form on the standardized system,
/// followed by a plain-Newton polish against the untransformed equations.
/// Rootless samples settle on the least-norm stationary point.
NewtonOutcome lm_from(const System& sys, Eigen::VectorXd beta, double norm_tol) {
    NewtonOutcome out;
    Eigen::VectorXd u = sys.eval(beta, false);
    if (!u.allFinite()) return out;
    double f = u.squaredNorm();
    double lambda = 1e-3;

    for (int it = 0; it < 300; ++it) {
        ++out.iterations;
        if (u.lpNorm<Eigen::Infinity>() < norm_tol) {
            out.stationary = true;
            break;
        }
        const Eigen::MatrixXd jac = numeric_jacobian(sys, beta, false);
        const Eigen::VectorXd grad = jac.transpose() * u;
        if (grad.lpNorm<Eigen::Infinity>() < 1e-12 * std::max(1.0, std::sqrt(f))) {
            out.stationary = true;
            break;
        }
        Eigen::MatrixXd normal = jac.transpose() * jac;
        const Eigen::VectorXd diag = normal.diagonal().cwiseMax(1e-12);
        bool moved = false;
        for (int tries = 0; tries < 25; ++tries) {
            Eigen::MatrixXd damped = normal;
            damped.diagonal() += lambda * diag;
            const Eigen::VectorXd step = damped.ldlt().solve(-grad);
            if (!step.allFinite()) {
                lambda *= 4.0;
                continue;
            }
            if (step.lpNorm<Eigen::Infinity>() < 1e-14 * (1.0 + beta.lpNorm<Eigen::Infinity>())) {
                out.stationary = true;
                break;
            }
            const Eigen::VectorXd cand = beta + step;
            const Eigen::VectorXd u_new = sys.eval(cand, false);
            const double f_new = u_new.allFinite()
                                     ? u_new.squaredNorm()
                                     : std::numeric_limits<double>::infinity();
            if (f_new < f) {
                beta = cand;
                u = u_new;
                f = f_new;
                lambda = std::max(lambda / 3.0, 1e-10);
                moved = true;
                break;
            }
            lambda *= 4.0;
        }
        if (out.stationary) break;
        if (!moved) break;  // no descent left at any damping
    }
    // LM descends monotonically; the endpoint is the basin's least-norm
    // point (possibly a saturated one when coefficients run off).
    if (!u.allFinite()) return out;
    out.stationary = true;
    out.beta = beta;
    out.objective = f;
    out.raw_residual = sys.eval(beta, true).lpNorm<Eigen::Infinity>();

    // Polish against the untransformed equations until the hard tolerance.
    Eigen::VectorXd polish = beta;
    Eigen::VectorXd u_raw = sys.eval(polish, true);
    double raw_norm = u_raw.lpNorm<Eigen::Infinity>();
    for (int it = 0; it < 20 && raw_norm >= kResidualTol; ++it) {
        const Eigen::MatrixXd jac = numeric_jacobian(sys, polish, true);
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(jac);
        const Eigen::VectorXd step = qr.solve(-u_raw);
        if (!step.allFinite()) break;
        const Eigen::VectorXd cand = polish + step;
        const Eigen::VectorXd u_cand = sys.eval(cand, true);
        const double cand_norm = u_cand.lpNorm<Eigen::Infinity>();
        ++out.iterations;
        if (!std::isfinite(cand_norm) || cand_norm >= raw_norm) break;
        polish = cand;
        u_raw = u_cand;
        raw_norm = cand_norm;
    }
    if (raw_norm < kResidualTol) {
        out.beta = polish;
        out.raw_residual = raw_norm;
        out.root = true;
    }
    return out;
}

struct BlockResult {
    Eigen::VectorXd beta;
    double residual = 0.0;
    bool root = false;
    int iterations = 0;
    double condition = 0.0;
};

BlockResult solve_system(const System& sys, const std::string& label,
                         const Eigen::VectorXd* hint = nullptr) {
    // Deterministic restart grid over (intercept, slope); an optional warm
    // start is tried first. A warm start that settles (bootstrap inner
    // solves) ends the search: it continues the outer solution's branch.
    const double intercepts[] = {-1.0, 0.0, 1.0};
    const double slopes[] = {0.0, 0.5, 1.0};
    const double norm_tol = 1e-10 * static_cast<double>(std::max<std::size_t>(sys.rows.size(), 1));

    NewtonOutcome best;
    int iterations = 0;
    auto consider = [&](NewtonOutcome run) {
        iterations += run.iterations;
        if (!run.stationary) return false;
        if (run.root) {
            if (!best.root || run.raw_residual < best.raw_residual) best = std::move(run);
            return true;
        }
        if (!best.root && run.objective < best.objective) best = std::move(run);
        return false;
    };

    bool done = false;
    if (hint && hint->size() == sys.p && hint->allFinite()) {
        NewtonOutcome run = lm_from(sys, *hint, norm_tol);
        const bool settled = run.stationary;
        done = consider(std::move(run)) || settled;
    }
    for (int i0 = 0; i0 < 3 && !done; ++i0) {
        for (int i1 = 0; i1 < 3 && !done; ++i1) {
            Eigen::VectorXd start = Eigen::VectorXd::Zero(sys.p);
            for (int j = 0; j < sys.p - 1; ++j) start[j] = intercepts[i0];
            start[sys.slope_pos] = slopes[i1];
            done = consider(lm_from(sys, start, norm_tol));
        }
    }
    if (!best.stationary) {
        throw NoRoot("estimating equations for " + label + " diverged from every restart point");
    }

    BlockResult result;
    result.beta = best.beta;
    result.residual = best.raw_residual;
    result.root = best.root;
    result.iterations = iterations;
    const Eigen::MatrixXd jac = numeric_jacobian(sys, best.beta, true);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac);
    const auto& sv = svd.singularValues();
    result.condition = sv[sv.size() - 1] > 0.0
                           ? sv[0] / sv[sv.size() - 1]
                           : std::numeric_limits<double>::infinity();
    return result;
}

/// Standardizes every non-constant basis component to zero mean and unit
/// variance across studies; the constant column keeps the root set intact.
void standardize_basis(System& sys) {
    sys.solve_basis = sys.raw_basis;
    if (sys.raw_basis.empty()) return;
    const int dim = sys.p;
    for (int j = 1; j < dim; ++j) {
        double m = 0.0;
        for (const auto& g : sys.raw_basis) m += g[j];
        m /= static_cast<double>(sys.raw_basis.size());
        double var = 0.0;
        for (const auto& g : sys.raw_basis) var += (g[j] - m) * (g[j] - m);
        var /= static_cast<double>(sys.raw_basis.size());
        const double sd = std::sqrt(var);
        if (sd <= 0.0) continue;
        for (auto& g : sys.solve_basis) g[j] = (g[j] - m) / sd;
    }
}

}  // namespace

namespace {

SelectionSolution solve_selection_impl(const NetworkDataset& data, const SelectionSpec& spec,
                                       const MomentFunction* g, const Eigen::VectorXd* hint) {
    const int n_designs = data.design_count();
    const auto rows = make_rows(data, spec.direction);
    const int unpublished = data.unpublished_count();

    SelectionSolution solution;
    auto& diag = solution.diagnostics;

    std::vector<int> published_per_design(static_cast<std::size_t>(n_designs), 0);
    std::vector<int> unpublished_per_design(static_cast<std::size_t>(n_designs), 0);
    for (const auto& r : rows) {
        auto& counter = r.published ? published_per_design : unpublished_per_design;
        counter[static_cast<std::size_t>(r.ordinal)] += 1;
    }

    if (spec.structure == SelectionStructure::Separate) {
        if (g) {
            throw ValidationError(
                "custom moment functions are not supported for the separate structure; "
                "its blocks decouple by design");
        }
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(2 * n_designs);
        for (int k = 0; k < n_designs; ++k) {
            const int pub = published_per_design[static_cast<std::size_t>(k)];
            const int unpub = unpublished_per_design[static_cast<std::size_t>(k)];
            if (pub == 0) {
                diag.warnings.push_back("design " + std::to_string(k + 1) +
                                        " has no published studies; its selection "
                                        "coefficients are not identified");
                continue;
            }
            if (unpub == 0) {
                beta[2 * k] = kPinnedIntercept;
                diag.pinned_designs.push_back(k + 1);
                diag.warnings.push_back("design " + std::to_string(k + 1) +
                                        " has no unpublished studies; its publication "
                                        "probability is fixed at 1");
                continue;
            }
            System sys;
            sys.family = spec.family;
            sys.p = 2;
            sys.intercept_pos.assign(static_cast<std::size_t>(n_designs), -1);
            sys.intercept_pos[static_cast<std::size_t>(k)] = 0;
            sys.slope_pos = 1;
            for (const auto& r : rows) {
                if (r.ordinal != k) continue;
                sys.rows.push_back(r);
                Eigen::VectorXd v(2);
                v << 1.0, std::sqrt(r.n);
                sys.raw_basis.push_back(v);
            }
            sys.solve_basis = sys.raw_basis;
            Eigen::VectorXd block_hint;
            if (hint && hint->size() == 2 * n_designs) {
                block_hint.resize(2);
                block_hint << (*hint)[2 * k], (*hint)[2 * k + 1];
            }
            const BlockResult block =
                solve_system(sys, "design " + std::to_string(k + 1),
                             block_hint.size() == 2 ? &block_hint : nullptr);
            beta[2 * k] = block.beta[0];
            beta[2 * k + 1] = block.beta[1];
            diag.residual_norm = std::max(diag.residual_norm, block.residual);
            diag.iterations += block.iterations;
            diag.jacobian_condition = std::max(diag.jacobian_condition, block.condition);
            if (!block.root) {
                diag.exact_root = false;
                diag.warnings.push_back("design " + std::to_string(k + 1) +
                                        ": no exact root; least-norm solution used");
            }
        }
        if (static_cast<int>(diag.pinned_designs.size()) == n_designs) {
            throw AllPublished("every design is fully published; selection model is degenerate");
        }
        solution.params.beta = beta;
    } else {
        if (unpublished == 0) {
            throw AllPublished("no unpublished studies; selection model is degenerate");
        }
        // Intercepts are identified only for designs with published studies.
        std::vector<int> intercept_pos(static_cast<std::size_t>(n_designs), -1);
        int p = 0;
        if (spec.structure == SelectionStructure::Common) {
            for (auto& pos : intercept_pos) pos = 0;
            p = 2;
        } else {
            int next = 0;
            for (int k = 0; k < n_designs; ++k) {
                if (published_per_design[static_cast<std::size_t>(k)] > 0) {
                    intercept_pos[static_cast<std::size_t>(k)] = next++;
                } else {
                    diag.warnings.push_back("design " + std::to_string(k + 1) +
                                            " has no published studies; its intercept "
                                            "is not identified");
                }
            }
            p = next + 1;
            if (g && next != n_designs) {
                throw ValidationError(
                    "custom moment functions require every design to contain published studies");
            }
        }

        System sys;
        sys.family = spec.family;
        sys.p = p;
        sys.intercept_pos = intercept_pos;
        sys.slope_pos = p - 1;
        sys.rows = rows;
        MomentFunction basis_fn;
        if (g) {
            if (g->dim != spec.param_count(n_designs)) {
                throw ValidationError("moment function dimension does not match the coefficient count");
            }
            basis_fn = *g;
        } else if (spec.structure == SelectionStructure::Common) {
            basis_fn = default_moment_function(spec, n_designs);
        } else {
            // Reduced power basis when some intercepts dropped out.
            basis_fn = default_moment_function(spec, p - 1);
        }
        for (const auto& r : rows) sys.raw_basis.push_back(basis_fn.eval(r.n, r.ordinal));
        if (spec.structure == SelectionStructure::DesignIntercept) {
            standardize_basis(sys);
        } else {
            sys.solve_basis = sys.raw_basis;
        }

        Eigen::VectorXd reduced_hint;
        if (hint) {
            if (spec.structure == SelectionStructure::Common && hint->size() == 2) {
                reduced_hint = *hint;
            } else if (spec.structure == SelectionStructure::DesignIntercept &&
                       hint->size() == n_designs + 1) {
                reduced_hint = Eigen::VectorXd::Zero(p);
                for (int k = 0; k < n_designs; ++k) {
                    const int pos = intercept_pos[static_cast<std::size_t>(k)];
                    if (pos >= 0) reduced_hint[pos] = (*hint)[k];
                }
                reduced_hint[p - 1] = (*hint)[n_designs];
            }
        }
        const BlockResult block =
            solve_system(sys, "the " + spec.token() + " selection model",
                         reduced_hint.size() == p ? &reduced_hint : nullptr);
        Eigen::VectorXd beta;
        if (spec.structure == SelectionStructure::Common) {
            beta = block.beta;
        } else {
            beta = Eigen::VectorXd::Zero(n_designs + 1);
            for (int k = 0; k < n_designs; ++k) {
                const int pos = intercept_pos[static_cast<std::size_t>(k)];
                if (pos >= 0) beta[k] = block.beta[pos];
            }
            beta[n_designs] = block.beta[p - 1];
        }
        solution.params.beta = beta;
        diag.residual_norm = block.residual;
        diag.iterations = block.iterations;
        diag.jacobian_condition = block.condition;
        if (!block.root) {
            diag.exact_root = false;
            diag.warnings.push_back(
                "estimating equations have no exact root; least-norm solution used");
        }
    }

    if (diag.jacobian_condition > 1e12) {
        diag.ill_conditioned = true;
        diag.warnings.push_back("estimating-equation Jacobian is ill conditioned");
    }
    return solution;
}

}  // namespace

SelectionSolution solve_selection(const NetworkDataset& data, const SelectionSpec& spec,
                                  const MomentFunction* g) {
    return solve_selection_impl(data, spec, g, nullptr);
}

namespace detail {

SelectionSolution solve_selection_hinted(const NetworkDataset& data, const SelectionSpec& spec,
                                         const Eigen::VectorXd* hint) {
    return solve_selection_impl(data, spec, nullptr, hint);
}

}  // namespace detail

}  // namespace nmaipw
