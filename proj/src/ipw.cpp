#include "nmaipw/ipw.hpp"

#include "nmaipw/errors.hpp"
#include "nmaipw/parallel.hpp"
#include "nmaipw/rng.hpp"
#include "nmaipw/stats.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>

namespace nmaipw {

namespace {

constexpr double kPiFloor = 1e-10;

std::vector<double> fitted_weights(const NetworkDataset& data, const SelectionSpec& spec,
                                   const SelectionParams& params, std::vector<double>* pi_out) {
    std::vector<double> weights;
    for (const auto& study : data.studies) {
        if (!study.published) continue;
        const double t = study_t_statistic(study, spec.direction);
        double pi = publish_probability(spec, params, study.design_k, t);
        pi = std::max(pi, kPiFloor);
        pi = std::min(pi, 1.0);
        if (pi_out) pi_out->push_back(pi);
        weights.push_back(1.0 / pi);
    }
    return weights;
}

}  // namespace

IpwFit fit_ipw(const NetworkDataset& data, const SelectionSpec& spec, TauMode mode,
               const TreatmentId& reference) {
    const TreatmentId ref = reference.empty() ? default_reference(data) : reference;

    IpwFit result;
    result.spec = spec;

    std::vector<double> weights;
    try {
        result.selection = solve_selection(data, spec);
        weights = fitted_weights(data, spec, result.selection.params, &result.pi_hat);
    } catch (const AllPublished&) {
        result.all_published_fallback = true;
        result.selection.diagnostics.warnings.push_back(
            "all studies are published; inverse-probability weights fixed at 1");
        weights.assign(static_cast<std::size_t>(data.published_count()), 1.0);
        result.pi_hat = weights;
    }

    NmaLikelihood lik(data, mode, ref, &weights);
    result.fit = lik.fit(false);
    return result;
}

BootstrapSummary parametric_bootstrap(const NetworkDataset& data, const SelectionSpec& spec,
                                      const IpwFit& fit, int B, std::uint64_t seed,
                                      int threads) {
    if (B < 2) throw ValidationError("bootstrap needs B >= 2 replicates");
    if (!fit.fit.converged) throw NonConvergence("cannot bootstrap a non-converged fit");

    const TreatmentId ref = fit.fit.params.reference;
    const TauMode mode = fit.fit.params.tau.mode;
    const Eigen::VectorXd theta_hat = fit.fit.estimates;
    const int n_params = static_cast<int>(theta_hat.size());

    // Resampling distribution per published study: mean = fitted design
    // contrast, covariance = fitted heterogeneity plus the observed Sigma.
    // The Cholesky factors are fixed across replicates.
    struct Sampler {
        int study_index;
        Eigen::VectorXd mean;
        Eigen::MatrixXd chol;  // lower factor
        int d;
    };
    std::vector<Sampler> samplers;
    {
        NmaLikelihood lik(data, mode, ref, nullptr, &fit.fit.params.basic);
        const Eigen::VectorXd mu = theta_hat.head(lik.n_mu());
        for (const auto& block : lik.blocks()) {
            Sampler s;
            s.study_index = block.study_index;
            s.d = block.d;
            s.mean = block.cmat * mu;
            const double tau =
                fit.fit.params.tau.tau_for_design(block.design_ordinal);
            Eigen::MatrixXd v = block.sigma;
            const double t2 = tau * tau;
            for (int i = 0; i < block.d; ++i) {
                for (int j = 0; j < block.d; ++j) {
                    v(i, j) += (i == j) ? t2 : 0.5 * t2;
                }
            }
            Eigen::LLT<Eigen::MatrixXd> llt(v);
            if (llt.info() != Eigen::Success) {
                throw SingularCovariance("resampling covariance is not positive definite");
            }
            s.chol = llt.matrixL();
            samplers.push_back(std::move(s));
        }
    }

    const Eigen::VectorXd beta_hint =
        fit.all_published_fallback ? Eigen::VectorXd() : fit.selection.params.beta;

    std::vector<int> status(static_cast<std::size_t>(B), 0);  // 1 = ok
    Eigen::MatrixXd draws(B, n_params);
    draws.setZero();

    parallel_for(B, threads, [&](int b) {
        RngStream rng(seed, static_cast<std::uint64_t>(b));
        NetworkDataset replicate = data;
        for (const auto& s : samplers) {
            auto& study = replicate.studies[static_cast<std::size_t>(s.study_index)];
            Eigen::VectorXd z(s.d);
            for (int i = 0; i < s.d; ++i) z[i] = rng.normal();
            const Eigen::VectorXd y = s.mean + s.chol * z;
            for (int i = 0; i < s.d; ++i) study.outcomes[static_cast<std::size_t>(i)].y = y[i];
        }
        try {
            std::vector<double> weights;
            if (fit.all_published_fallback) {
                weights.assign(static_cast<std::size_t>(replicate.published_count()), 1.0);
            } else {
                const SelectionSolution sol = detail::solve_selection_hinted(
                    replicate, spec, beta_hint.size() > 0 ? &beta_hint : nullptr);
                weights = fitted_weights(replicate, spec, sol.params, nullptr);
            }
            NmaLikelihood lik(replicate, mode, ref, &weights, &fit.fit.params.basic);
            const NmaLikelihood::WarmFit refit = lik.fit_from(theta_hat);
            if (!refit.converged || !refit.theta.allFinite()) return;
            draws.row(b) = refit.theta.transpose();
            status[static_cast<std::size_t>(b)] = 1;
        } catch (const Error&) {
            // replicate dropped and counted below
        }
    });

    BootstrapSummary summary;
    summary.requested = B;
    summary.param_names = fit.fit.param_names;
    int completed = 0;
    for (int b = 0; b < B; ++b) completed += status[static_cast<std::size_t>(b)];
    summary.completed = completed;
    summary.failed = B - completed;
    if (summary.failed * 5 > B) {
        throw TooManyFailures("bootstrap dropped " + std::to_string(summary.failed) + " of " +
                              std::to_string(B) + " replicates (more than 20%)");
    }

    summary.replicate_estimates.resize(completed, n_params);
    int row = 0;
    for (int b = 0; b < B; ++b) {
        if (status[static_cast<std::size_t>(b)]) {
            summary.replicate_estimates.row(row++) = draws.row(b);
        }
    }

    summary.sd.resize(n_params);
    summary.ci.resize(static_cast<std::size_t>(n_params));
    const int n_mu = fit.fit.mu_count();
    for (int j = 0; j < n_params; ++j) {
        std::vector<double> col(static_cast<std::size_t>(completed));
        for (int i = 0; i < completed; ++i) col[static_cast<std::size_t>(i)] =
            summary.replicate_estimates(i, j);
        const double sd = population_sd(col);
        summary.sd[j] = sd;
        const double point = theta_hat[j];
        ParamInterval ci{point, point};
        if (sd > 0.0) {
            const double center = mean(col);
            std::vector<double> standardized(col.size());
            for (std::size_t i = 0; i < col.size(); ++i) {
                standardized[i] = (col[i] - center) / sd;
            }
            ci.lower = point + quantile(standardized, 0.025) * sd;
            ci.upper = point + quantile(standardized, 0.975) * sd;
        }
        if (j >= n_mu) ci.lower = std::max(0.0, ci.lower);
        summary.ci[static_cast<std::size_t>(j)] = ci;
    }
    return summary;
}

IpwFit fit_ipw_with_bootstrap(const NetworkDataset& data, const SelectionSpec& spec,
                              TauMode mode, const TreatmentId& reference, int B,
                              std::uint64_t seed, int threads) {
    IpwFit fit = fit_ipw(data, spec, mode, reference);
    fit.boot = parametric_bootstrap(data, spec, fit, B, seed, threads);
    return fit;
}

namespace {

std::vector<double> contrast_column(const BootstrapSummary& boot, const FitResult& fit,
                                    const TreatmentId& x, const TreatmentId& y) {
    const int ix = fit.params.mu_index(x);
    const int iy = fit.params.mu_index(y);
    const int rows = static_cast<int>(boot.replicate_estimates.rows());
    std::vector<double> col(static_cast<std::size_t>(rows), 0.0);
    for (int i = 0; i < rows; ++i) {
        double v = 0.0;
        if (ix >= 0) v += boot.replicate_estimates(i, ix);
        if (iy >= 0) v -= boot.replicate_estimates(i, iy);
        col[static_cast<std::size_t>(i)] = v;
    }
    return col;
}

}  // namespace

double bootstrap_contrast_sd(const BootstrapSummary& boot, const FitResult& fit,
                             const TreatmentId& x, const TreatmentId& y) {
    if (boot.completed < 2) throw MissingSE("no bootstrap replicates available");
    if (x == y) return 0.0;
    return population_sd(contrast_column(boot, fit, x, y));
}

ParamInterval bootstrap_contrast_ci(const BootstrapSummary& boot, const FitResult& fit,
                                    const TreatmentId& x, const TreatmentId& y) {
    const double point = fit.params.contrast(x, y);
    if (boot.completed < 2) throw MissingSE("no bootstrap replicates available");
    const auto col = contrast_column(boot, fit, x, y);
    const double sd = population_sd(col);
    if (sd <= 0.0) return {point, point};
    const double center = mean(col);
    std::vector<double> standardized(col.size());
    for (std::size_t i = 0; i < col.size(); ++i) standardized[i] = (col[i] - center) / sd;
    return {point + quantile(standardized, 0.025) * sd,
            point + quantile(standardized, 0.975) * sd};
}

}  // namespace nmaipw
