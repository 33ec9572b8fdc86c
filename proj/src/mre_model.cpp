#include "nmaipw/mre_model.hpp"

#include "nmaipw/errors.hpp"
#include "nmaipw/stats.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace nmaipw {

namespace {

// Estimates this close to the boundary are reported as exactly zero.
constexpr double kTauSnap = 1e-6;

}  // namespace

TauMode tau_mode_from_string(const std::string& s) {
    if (s == "common") return TauMode::Common;
    if (s == "design" || s == "design_specific") return TauMode::DesignSpecific;
    throw ValidationError("unknown tau mode '" + s + "' (expected common|design)");
}

std::string to_string(TauMode mode) {
    return mode == TauMode::Common ? "common" : "design";
}

int ModelParams::mu_index(const TreatmentId& t) const {
    if (t == reference) return -1;
    for (std::size_t i = 0; i < basic.size(); ++i) {
        if (basic[i] == t) return static_cast<int>(i);
    }
    throw UnknownTreatment("treatment '" + t + "' is not part of the fitted model");
}

double ModelParams::contrast(const TreatmentId& x, const TreatmentId& y) const {
    const int ix = mu_index(x);
    const int iy = mu_index(y);
    const double mx = ix < 0 ? 0.0 : mu[ix];
    const double my = iy < 0 ? 0.0 : mu[iy];
    return mx - my;
}

Eigen::MatrixXd design_heterogeneity_matrix(const DesignType& design, double tau_k) {
    const int d = design.comparison_count();
    const double t2 = tau_k * tau_k;
    Eigen::MatrixXd omega = Eigen::MatrixXd::Constant(d, d, 0.5 * t2);
    omega.diagonal().setConstant(t2);
    return omega;
}

// ---------------------------------------------------------------------------
// NmaLikelihood
// ---------------------------------------------------------------------------

NmaLikelihood::NmaLikelihood(const NetworkDataset& data, TauMode mode,
                             const TreatmentId& reference,
                             const std::vector<double>* weights,
                             const std::vector<TreatmentId>* basic_override) {
    mode_ = mode;
    reference_ = reference;
    n_designs_ = data.design_count();

    if (basic_override) {
        basic_ = *basic_override;
    } else {
        // Estimable treatments: those appearing in published studies.
        for (const auto& study : data.studies) {
            if (!study.published) continue;
            for (const auto& oc : study.outcomes) {
                for (const TreatmentId* t : {&oc.treat_x, &oc.treat_y}) {
                    if (*t == reference_) continue;
                    if (std::find(basic_.begin(), basic_.end(), *t) == basic_.end()) {
                        basic_.push_back(*t);
                    }
                }
            }
        }
        // Keep dataset order for determinism.
        std::vector<TreatmentId> ordered;
        for (const auto& t : data.treatments) {
            if (std::find(basic_.begin(), basic_.end(), t) != basic_.end()) {
                ordered.push_back(t);
            }
        }
        basic_ = std::move(ordered);
    }

    std::vector<bool> informed(static_cast<std::size_t>(n_designs_), false);
    for (const auto& study : data.studies) {
        if (study.published) informed[static_cast<std::size_t>(data.design_ordinal(study))] = true;
    }

    tau_param_index_.assign(static_cast<std::size_t>(n_designs_), -1);
    if (mode_ == TauMode::Common) {
        n_tau_ = 1;
        for (int k = 0; k < n_designs_; ++k) tau_param_index_[static_cast<std::size_t>(k)] = 0;
    } else {
        n_tau_ = 0;
        for (int k = 0; k < n_designs_; ++k) {
            if (informed[static_cast<std::size_t>(k)]) {
                tau_param_index_[static_cast<std::size_t>(k)] = n_tau_++;
            }
        }
    }

    for (const auto& t : basic_) param_names_.push_back("mu[" + t + "]");
    if (mode_ == TauMode::Common) {
        param_names_.push_back("tau");
    } else {
        for (int k = 0; k < n_designs_; ++k) {
            if (tau_param_index_[static_cast<std::size_t>(k)] >= 0) {
                param_names_.push_back("tau[" + std::to_string(k + 1) + "]");
            }
        }
    }

    auto mu_col = [&](const TreatmentId& t) -> int {
        if (t == reference_) return -1;
        for (std::size_t i = 0; i < basic_.size(); ++i) {
            if (basic_[i] == t) return static_cast<int>(i);
        }
        throw UnknownTreatment("treatment '" + t + "' is not covered by the model parameters");
    };

    int published_seen = 0;
    for (std::size_t s = 0; s < data.studies.size(); ++s) {
        const auto& study = data.studies[s];
        if (!study.published) continue;
        const DesignType& design = data.design_of(study);
        StudyBlock block;
        block.study_index = static_cast<int>(s);
        block.design_ordinal = data.design_ordinal(study);
        block.tau_index = tau_param_index_[static_cast<std::size_t>(block.design_ordinal)];
        block.d = design.comparison_count();
        block.y.resize(block.d);
        for (int i = 0; i < block.d; ++i) {
            block.y[i] = study.outcomes[static_cast<std::size_t>(i)].y;
        }
        block.sigma = assemble_covariance(study, design);
        block.cmat = Eigen::MatrixXd::Zero(block.d, n_mu());
        for (int i = 0; i < block.d; ++i) {
            const auto& oc = study.outcomes[static_cast<std::size_t>(i)];
            const int cx = mu_col(oc.treat_x);
            const int cy = mu_col(oc.treat_y);
            if (cx >= 0) block.cmat(i, cx) = 1.0;
            if (cy >= 0) block.cmat(i, cy) = -1.0;
        }
        if (weights) {
            if (weights->size() != static_cast<std::size_t>(data.published_count())) {
                throw ValidationError("weights must have one entry per published study");
            }
            const double w = (*weights)[static_cast<std::size_t>(published_seen)];
            if (!(w > 0.0) || !std::isfinite(w)) {
                throw ValidationError("study weights must be positive and finite");
            }
            block.weight = w;
        }
        ++published_seen;
        blocks_.push_back(std::move(block));
    }
}

namespace {

double eval_block_generic(const NmaLikelihood::StudyBlock& b, const Eigen::VectorXd& theta,
                          int m, double tau, Eigen::VectorXd* grad, int tau_pos) {
    const int d = b.d;
    Eigen::MatrixXd p = Eigen::MatrixXd::Constant(d, d, 0.5);
    p.diagonal().setConstant(1.0);
    Eigen::MatrixXd v = b.sigma + tau * tau * p;
    Eigen::LLT<Eigen::MatrixXd> llt(v);
    if (llt.info() != Eigen::Success) {
        throw SingularCovariance("Cholesky failure on a per-study covariance");
    }
    const Eigen::VectorXd mean = b.cmat * theta.head(m);
    const Eigen::VectorXd r = b.y - mean;
    const Eigen::VectorXd a = llt.solve(r);
    double logdet = 0.0;
    for (int i = 0; i < d; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    const double quad = r.dot(a);
    if (grad) {
        grad->head(m) += b.weight * (b.cmat.transpose() * a);
        const Eigen::MatrixXd x = llt.solve(p);
        const double tr = x.trace();
        const double apa = a.dot(p * a);
        (*grad)[tau_pos] += -b.weight * tau * (tr - apa);
    }
    return b.weight * (logdet + quad);
}

}  // namespace

double NmaLikelihood::value_and_gradient(const Eigen::VectorXd& theta,
                                         Eigen::VectorXd& grad) const {
    grad.setZero(n_params());
    const int m = n_mu();
    long double acc = 0.0L;
    for (const auto& b : blocks_) {
        const double tau = theta[m + b.tau_index];
        const int tau_pos = m + b.tau_index;
        if (b.d == 1) {
            double mean = 0.0;
            for (int j = 0; j < m; ++j) mean += b.cmat(0, j) * theta[j];
            const double r = b.y[0] - mean;
            const double v = b.sigma(0, 0) + tau * tau;
            if (!(v > 0.0)) {
                throw SingularCovariance("non-positive study variance");
            }
            acc += b.weight * (std::log(v) + r * r / v);
            const double ar = r / v;
            for (int j = 0; j < m; ++j) grad[j] += b.weight * b.cmat(0, j) * ar;
            grad[tau_pos] += -b.weight * tau * (1.0 / v - r * r / (v * v));
        } else if (b.d == 2) {
            const double t2 = tau * tau;
            double mean0 = 0.0, mean1 = 0.0;
            for (int j = 0; j < m; ++j) {
                mean0 += b.cmat(0, j) * theta[j];
                mean1 += b.cmat(1, j) * theta[j];
            }
            const double r0 = b.y[0] - mean0;
            const double r1 = b.y[1] - mean1;
            const double v00 = b.sigma(0, 0) + t2;
            const double v11 = b.sigma(1, 1) + t2;
            const double v01 = b.sigma(0, 1) + 0.5 * t2;
            const double det = v00 * v11 - v01 * v01;
            if (!(det > 0.0) || !(v00 > 0.0)) {
                throw SingularCovariance("Cholesky failure on a per-study covariance");
            }
            const double a0 = (v11 * r0 - v01 * r1) / det;
            const double a1 = (-v01 * r0 + v00 * r1) / det;
            const double quad = r0 * a0 + r1 * a1;
            acc += b.weight * (std::log(det) + quad);
            for (int j = 0; j < m; ++j) {
                grad[j] += b.weight * (b.cmat(0, j) * a0 + b.cmat(1, j) * a1);
            }
            const double tr = (v00 + v11 - v01) / det;
            const double apa = a0 * a0 + a1 * a1 + a0 * a1;
            grad[tau_pos] += -b.weight * tau * (tr - apa);
        } else {
            acc += eval_block_generic(b, theta, m, tau, &grad, tau_pos);
        }
    }
    return -0.5 * static_cast<double>(acc);
}

double NmaLikelihood::value(const Eigen::VectorXd& theta) const {
    const int m = n_mu();
    long double acc = 0.0L;
    for (const auto& b : blocks_) {
        const double tau = theta[m + b.tau_index];
        if (b.d == 1) {
            double mean = 0.0;
            for (int j = 0; j < m; ++j) mean += b.cmat(0, j) * theta[j];
            const double r = b.y[0] - mean;
            const double v = b.sigma(0, 0) + tau * tau;
            if (!(v > 0.0)) {
                throw SingularCovariance("non-positive study variance");
            }
            acc += b.weight * (std::log(v) + r * r / v);
        } else if (b.d == 2) {
            const double t2 = tau * tau;
            double mean0 = 0.0, mean1 = 0.0;
            for (int j = 0; j < m; ++j) {
                mean0 += b.cmat(0, j) * theta[j];
                mean1 += b.cmat(1, j) * theta[j];
            }
            const double r0 = b.y[0] - mean0;
            const double r1 = b.y[1] - mean1;
            const double v00 = b.sigma(0, 0) + t2;
            const double v11 = b.sigma(1, 1) + t2;
            const double v01 = b.sigma(0, 1) + 0.5 * t2;
            const double det = v00 * v11 - v01 * v01;
            if (!(det > 0.0) || !(v00 > 0.0)) {
                throw SingularCovariance("Cholesky failure on a per-study covariance");
            }
            const double a0 = (v11 * r0 - v01 * r1) / det;
            const double a1 = (-v01 * r0 + v00 * r1) / det;
            acc += b.weight * (std::log(det) + r0 * a0 + r1 * a1);
        } else {
            acc += eval_block_generic(b, theta, m, tau, nullptr, 0);
        }
    }
    return -0.5 * static_cast<double>(acc);
}

Eigen::VectorXd NmaLikelihood::lower_bounds() const {
    Eigen::VectorXd lb = Eigen::VectorXd::Constant(n_params(),
                                                   -std::numeric_limits<double>::infinity());
    for (int i = n_mu(); i < n_params(); ++i) lb[i] = 0.0;
    return lb;
}

Eigen::VectorXd NmaLikelihood::initial_mu() const {
    const int m = n_mu();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
    for (const auto& block : blocks_) {
        for (int i = 0; i < block.d; ++i) {
            const double w = 1.0 / block.sigma(i, i);
            for (int j = 0; j < m; ++j) {
                const double cj = block.cmat(i, j);
                if (cj == 0.0) continue;
                b[j] += w * block.y[i] * cj;
                for (int l = 0; l < m; ++l) {
                    const double cl = block.cmat(i, l);
                    if (cl != 0.0) a(j, l) += w * cj * cl;
                }
            }
        }
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success) return Eigen::VectorXd::Zero(m);
    Eigen::VectorXd mu = ldlt.solve(b);
    if (!mu.allFinite()) mu.setZero();
    return mu;
}

std::vector<Eigen::VectorXd> NmaLikelihood::start_points() const {
    const Eigen::VectorXd mu0 = initial_mu();
    const int m = n_mu();
    auto make = [&](const Eigen::VectorXd& mu, double tau) {
        Eigen::VectorXd theta(n_params());
        theta.head(m) = mu;
        theta.tail(n_params() - m).setConstant(tau);
        return theta;
    };
    std::vector<Eigen::VectorXd> starts;
    starts.push_back(make(mu0, 0.01));
    starts.push_back(make(mu0, 0.1));
    starts.push_back(make(mu0, 0.3));
    starts.push_back(make(mu0, 1.0));
    starts.push_back(make(Eigen::VectorXd::Zero(m), 0.1));
    return starts;
}

NmaLikelihood::WarmFit NmaLikelihood::fit_from(const Eigen::VectorXd& theta0) const {
    ObjectiveFn objective = [this](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
        if (g) return value_and_gradient(x, *g);
        return value(x);
    };
    const Eigen::VectorXd lb = lower_bounds();
    OptimResult run = maximize_bounded(objective, theta0, lb);
    WarmFit best{run.x, run.f, run.converged, run.n_evals};
    if (!run.converged) {
        Eigen::VectorXd fallback(n_params());
        fallback.head(n_mu()) = initial_mu();
        fallback.tail(n_tau_).setConstant(0.1);
        OptimResult retry = maximize_bounded(objective, fallback, lb);
        best.n_evals += retry.n_evals;
        if (retry.converged && (retry.f > best.loglik || !best.converged)) {
            best.theta = retry.x;
            best.loglik = retry.f;
            best.converged = retry.converged;
        }
    }
    for (int i = n_mu(); i < n_params(); ++i) {
        if (best.theta[i] < kTauSnap) best.theta[i] = 0.0;
    }
    best.loglik = value(best.theta);
    return best;
}

ModelParams NmaLikelihood::params_from_theta(const Eigen::VectorXd& theta) const {
    ModelParams params;
    params.reference = reference_;
    params.basic = basic_;
    params.mu = theta.head(n_mu());
    params.tau.mode = mode_;
    if (mode_ == TauMode::Common) {
        params.tau.values = {theta[n_mu()]};
    } else {
        params.tau.values.assign(static_cast<std::size_t>(n_designs_), 0.0);
        for (int k = 0; k < n_designs_; ++k) {
            const int idx = tau_param_index_[static_cast<std::size_t>(k)];
            if (idx >= 0) params.tau.values[static_cast<std::size_t>(k)] = theta[n_mu() + idx];
        }
    }
    return params;
}

Eigen::VectorXd NmaLikelihood::theta_from_params(const ModelParams& params) const {
    if (params.reference != reference_) {
        throw ValidationError("parameter reference '" + params.reference +
                              "' does not match the likelihood reference '" + reference_ + "'");
    }
    Eigen::VectorXd theta(n_params());
    for (int j = 0; j < n_mu(); ++j) {
        bool found = false;
        for (std::size_t i = 0; i < params.basic.size(); ++i) {
            if (params.basic[i] == basic_[static_cast<std::size_t>(j)]) {
                theta[j] = params.mu[static_cast<Eigen::Index>(i)];
                found = true;
                break;
            }
        }
        if (!found) {
            throw UnknownTreatment("parameters miss treatment '" +
                                   basic_[static_cast<std::size_t>(j)] + "'");
        }
    }
    if (mode_ == TauMode::Common) {
        theta[n_mu()] = params.tau.values.at(0);
    } else {
        for (int k = 0; k < n_designs_; ++k) {
            const int idx = tau_param_index_[static_cast<std::size_t>(k)];
            if (idx >= 0) {
                theta[n_mu() + idx] = params.tau.values.at(static_cast<std::size_t>(k));
            }
        }
    }
    return theta;
}

FitResult NmaLikelihood::fit(bool with_wald) const {
    ObjectiveFn objective = [this](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
        if (g) return value_and_gradient(x, *g);
        return value(x);
    };
    const Eigen::VectorXd lb = lower_bounds();

    bool have_best = false;
    OptimResult best;
    int total_evals = 0;
    for (const auto& start : start_points()) {
        OptimResult run = maximize_bounded(objective, start, lb);
        total_evals += run.n_evals;
        if (!std::isfinite(run.f)) continue;
        if (!have_best || run.f > best.f ||
            (run.f == best.f && run.converged && !best.converged)) {
            best = run;
            have_best = true;
        }
    }
    if (!have_best || !best.converged) {
        throw NonConvergence("likelihood maximization failed from every restart point");
    }

    Eigen::VectorXd theta = best.x;
    for (int i = n_mu(); i < n_params(); ++i) {
        if (theta[i] < kTauSnap) theta[i] = 0.0;
    }

    FitResult result;
    result.params = params_from_theta(theta);
    result.estimates = theta;
    result.loglik = value(theta);
    result.converged = best.converged;
    result.n_evals = total_evals;
    result.param_names = param_names_;
    result.tau_param_index = tau_param_index_;

    if (with_wald) {
        const int n = n_params();
        Eigen::MatrixXd hess(n, n);
        Eigen::VectorXd gp(n), gm(n);
        for (int i = 0; i < n; ++i) {
            const double h = 1e-5 * std::max(1.0, std::fabs(theta[i]));
            Eigen::VectorXd tp = theta, tm = theta;
            tp[i] += h;
            tm[i] -= h;
            value_and_gradient(tp, gp);
            value_and_gradient(tm, gm);
            hess.col(i) = (gp - gm) / (2.0 * h);
        }
        Eigen::MatrixXd info = -0.5 * (hess + hess.transpose());
        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        bool ok = ldlt.info() == Eigen::Success;
        if (ok) {
            const auto d = ldlt.vectorD();
            for (int i = 0; i < n; ++i) {
                if (!(d[i] > 0.0) || !std::isfinite(d[i])) ok = false;
            }
        }
        if (ok) {
            Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(n, n));
            result.covariance = cov;
            result.se.resize(static_cast<std::size_t>(n));
            result.ci.resize(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                const double var = cov(i, i);
                if (!(var > 0.0) || !std::isfinite(var)) {
                    ok = false;
                    break;
                }
                const double se = std::sqrt(var);
                result.se[static_cast<std::size_t>(i)] = se;
                ParamInterval ci{theta[i] - kZ975 * se, theta[i] + kZ975 * se};
                if (i >= n_mu()) ci.lower = std::max(0.0, ci.lower);
                result.ci[static_cast<std::size_t>(i)] = ci;
            }
        }
        result.wald_available = ok;
        if (!ok) {
            result.se.clear();
            result.ci.clear();
            result.covariance.resize(0, 0);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Module operations
// ---------------------------------------------------------------------------

double log_likelihood(const NetworkDataset& data, const ModelParams& params,
                      const std::vector<double>* weights) {
    NmaLikelihood lik(data, params.tau.mode, params.reference, weights, &params.basic);
    return lik.value(lik.theta_from_params(params));
}

TreatmentId default_reference(const NetworkDataset& data) {
    std::map<TreatmentId, int> count;
    for (const auto& study : data.studies) {
        if (!study.published) continue;
        for (const auto& oc : study.outcomes) count[oc.treat_y] += 1;
    }
    if (count.empty()) {
        throw ValidationError("dataset has no published studies");
    }
    TreatmentId best;
    int best_count = -1;
    for (const auto& t : data.treatments) {
        const auto it = count.find(t);
        const int c = it == count.end() ? 0 : it->second;
        if (c > best_count) {
            best = t;
            best_count = c;
        }
    }
    return best;
}

FitResult fit_mre(const NetworkDataset& data, TauMode mode, const TreatmentId& reference) {
    const TreatmentId ref = reference.empty() ? default_reference(data) : reference;
    NmaLikelihood lik(data, mode, ref);
    return lik.fit(true);
}

std::pair<double, double> derived_contrast(const FitResult& fit, const TreatmentId& x,
                                           const TreatmentId& y) {
    if (x == y) {
        fit.params.mu_index(x);  // still validate the label
        return {0.0, 0.0};
    }
    const double estimate = fit.params.contrast(x, y);
    if (!fit.wald_available) {
        throw MissingSE("no parameter covariance available for contrast " + x + " vs " + y);
    }
    const int ix = fit.params.mu_index(x);
    const int iy = fit.params.mu_index(y);
    double var = 0.0;
    if (ix >= 0) var += fit.covariance(ix, ix);
    if (iy >= 0) var += fit.covariance(iy, iy);
    if (ix >= 0 && iy >= 0) var -= 2.0 * fit.covariance(ix, iy);
    var = std::max(var, 0.0);
    return {estimate, std::sqrt(var)};
}

}  // namespace nmaipw
