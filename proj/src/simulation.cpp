#include "nmaipw/simulation.hpp"

#include "nmaipw/errors.hpp"
#include "nmaipw/parallel.hpp"
#include "nmaipw/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace nmaipw {

SizeRegime size_regime_from_string(const std::string& s) {
    if (s == "small") return SizeRegime::Small;
    if (s == "moderate") return SizeRegime::Moderate;
    if (s == "large") return SizeRegime::Large;
    throw ValidationError("unknown size regime '" + s + "' (expected small|moderate|large)");
}

std::string to_string(SizeRegime regime) {
    switch (regime) {
        case SizeRegime::Small: return "small";
        case SizeRegime::Moderate: return "moderate";
        case SizeRegime::Large: return "large";
    }
    return "moderate";
}

std::string EstimatorSpec::label() const {
    if (!ipw) return "mre";
    std::string s = "ipw:" + selection.token();
    if (!with_ci) s += ":noci";
    return s;
}

EstimatorSpec EstimatorSpec::parse(const std::string& text, Direction direction) {
    EstimatorSpec spec;
    if (text == "mre") {
        spec.ipw = false;
        return spec;
    }
    if (text.rfind("ipw:", 0) != 0) {
        throw ValidationError("unknown estimator '" + text + "' (expected mre or ipw:<token>)");
    }
    std::string rest = text.substr(4);
    if (rest.size() > 5 && rest.substr(rest.size() - 5) == ":noci") {
        spec.with_ci = false;
        rest = rest.substr(0, rest.size() - 5);
    }
    spec.ipw = true;
    spec.selection = SelectionSpec::from_token(rest, direction);
    return spec;
}

// ---------------------------------------------------------------------------
// Data generation
// ---------------------------------------------------------------------------

namespace sim_detail {

double event_rate_from_log_or(double log_or, double control_rate) {
    const double e = std::exp(log_or);
    return e * control_rate / (1.0 - control_rate + control_rate * e);
}

ArmCells draw_cells(RngStream& rng, double pa, double pb, double pc, long arm_size,
                    bool need_a, bool need_b, bool need_c) {
    ArmCells cells;
    cells.size = arm_size;
    auto degenerate = [arm_size](long e) { return e <= 0 || e >= arm_size; };
    for (int attempt = 0; attempt < 100; ++attempt) {
        bool ok = true;
        if (need_a) {
            cells.events_a = rng.binomial(arm_size, pa);
            ok = ok && !degenerate(cells.events_a);
        }
        if (need_b) {
            cells.events_b = rng.binomial(arm_size, pb);
            ok = ok && !degenerate(cells.events_b);
        }
        if (need_c) {
            cells.events_c = rng.binomial(arm_size, pc);
            ok = ok && !degenerate(cells.events_c);
        }
        if (ok) return cells;
    }
    cells.corrected = true;
    return cells;
}

void arm_logit(long events, long size, bool corrected, double& logit, double& var) {
    const double e = corrected ? events + 0.5 : static_cast<double>(events);
    const double f = corrected ? (size - events) + 0.5 : static_cast<double>(size - events);
    logit = std::log(e / f);
    var = 1.0 / e + 1.0 / f;
}

std::vector<DesignType> simulated_designs() {
    std::vector<DesignType> designs(4);
    designs[0] = DesignType{1, {"A", "C"}, {{"A", "C"}}};
    designs[1] = DesignType{2, {"B", "C"}, {{"B", "C"}}};
    designs[2] = DesignType{3, {"A", "B"}, {{"A", "B"}}};
    designs[3] = DesignType{4, {"A", "B", "C"}, {{"A", "C"}, {"B", "C"}}};
    return designs;
}

StudyRecord study_from_cells(const std::string& study_id, const DesignType& design,
                             const ArmCells& cells) {
    double la = 0.0, va = 0.0, lb = 0.0, vb = 0.0, lc = 0.0, vc = 0.0;
    if (cells.events_a >= 0) arm_logit(cells.events_a, cells.size, cells.corrected, la, va);
    if (cells.events_b >= 0) arm_logit(cells.events_b, cells.size, cells.corrected, lb, vb);
    if (cells.events_c >= 0) arm_logit(cells.events_c, cells.size, cells.corrected, lc, vc);

    StudyRecord study;
    study.study_id = study_id;
    study.design_k = design.index;
    study.published = true;
    study.n_planned = 2 * cells.size;
    for (const auto& [x, y] : design.comparisons) {
        double logit_x = 0.0, var_x = 0.0, logit_y = 0.0, var_y = 0.0;
        auto pick = [&](const TreatmentId& t, double& l, double& v) {
            if (t == "A") {
                l = la;
                v = va;
            } else if (t == "B") {
                l = lb;
                v = vb;
            } else {
                l = lc;
                v = vc;
            }
        };
        pick(x, logit_x, var_x);
        pick(y, logit_y, var_y);
        ComparisonOutcome oc;
        oc.treat_x = x;
        oc.treat_y = y;
        oc.y = logit_x - logit_y;
        oc.se = std::sqrt(var_x + var_y);
        oc.n = 2 * cells.size;
        study.outcomes.push_back(oc);
    }
    if (design.multi_arm()) {
        // Covariance of the shared comparator arm.
        study.shared_arm_variance = vc;
    }
    return study;
}

}  // namespace sim_detail

NetworkDataset generate_complete_network(const SimConfig& cfg, std::uint64_t replicate_seed) {
    using namespace sim_detail;
    RngStream rng(replicate_seed, 0);

    NetworkDataset data;
    data.designs = simulated_designs();
    data.treatments = {"A", "C", "B"};  // first-appearance order across designs

    // Studies per design.
    std::vector<int> s_k(4, 0);
    for (int k = 0; k < 4; ++k) {
        switch (cfg.size) {
            case SizeRegime::Small:
                s_k[static_cast<std::size_t>(k)] =
                    5 + std::min(5, static_cast<int>(rng.uniform() * 6.0));
                break;
            case SizeRegime::Moderate: s_k[static_cast<std::size_t>(k)] = 10; break;
            case SizeRegime::Large: s_k[static_cast<std::size_t>(k)] = 20; break;
        }
    }

    // Root-2 factor of the compound-symmetric heterogeneity: correlated true
    // effects so that every contrast carries between-study variance tau^2.
    constexpr double kRoot3Over2 = 0.8660254037844386467637;

    for (int k = 0; k < 4; ++k) {
        const DesignType& design = data.designs[static_cast<std::size_t>(k)];
        const double tau =
            cfg.tau_mode == TauMode::Common ? cfg.tau.at(0) : cfg.tau.at(static_cast<std::size_t>(k));
        for (int i = 0; i < s_k[static_cast<std::size_t>(k)]; ++i) {
            const double z1 = rng.normal();
            const double z2 = rng.normal();
            const double mu_ac_i = cfg.mu_ac + tau * z1;
            const double mu_bc_i = cfg.mu_bc + tau * (0.5 * z1 + kRoot3Over2 * z2);

            const double pc = rng.uniform(0.2, 0.9);
            const double pa = event_rate_from_log_or(mu_ac_i, pc);
            const double pb = event_rate_from_log_or(mu_bc_i, pc);

            // One per-comparison total, floored at 20, split over two arms.
            double total = std::exp(5.0 + rng.normal());
            if (total < 20.0) total = 20.0;
            const long arm_size = static_cast<long>(std::ceil(total / 2.0));

            const bool need_a = k == 0 || k == 2 || k == 3;
            const bool need_b = k == 1 || k == 2 || k == 3;
            const bool need_c = k == 0 || k == 1 || k == 3;
            const ArmCells cells = draw_cells(rng, pa, pb, pc, arm_size, need_a, need_b, need_c);

            const std::string id = "s" + std::to_string(k + 1) + "_" + std::to_string(i + 1);
            data.studies.push_back(study_from_cells(id, design, cells));
        }
    }
    return data;
}

NetworkDataset apply_selection(const NetworkDataset& data, const SelectionSpec& spec,
                               const SelectionParams& beta_true, std::uint64_t seed) {
    for (const auto& study : data.studies) {
        if (!study.published) {
            throw ValidationError("apply_selection expects a fully published dataset");
        }
    }
    RngStream rng(seed, 0);
    NetworkDataset out = data;
    for (auto& study : out.studies) {
        const double t = study_t_statistic(study, spec.direction);
        const double pi = publish_probability(spec, beta_true, study.design_k, t);
        if (rng.uniform() < pi) continue;
        study.published = false;
        study.outcomes.clear();
        study.shared_arm_variance.reset();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo harness
// ---------------------------------------------------------------------------

namespace {

struct ParamDraw {
    double estimate = 0.0;
    bool has_ci = false;
    ParamInterval ci;
};

/// Per-replicate, per-estimator record: param name -> draw.
using ReplicateRecord = std::map<std::string, ParamDraw>;

void record_fit(const FitResult& fit, bool with_ci, ReplicateRecord& rec) {
    for (std::size_t p = 0; p < fit.param_names.size(); ++p) {
        ParamDraw draw;
        draw.estimate = fit.estimates[static_cast<Eigen::Index>(p)];
        if (with_ci && fit.wald_available) {
            draw.has_ci = true;
            draw.ci = fit.ci[p];
        }
        rec[fit.param_names[p]] = draw;
    }
}

void record_ipw(const IpwFit& fit, bool with_ci, ReplicateRecord& rec) {
    for (std::size_t p = 0; p < fit.fit.param_names.size(); ++p) {
        ParamDraw draw;
        draw.estimate = fit.fit.estimates[static_cast<Eigen::Index>(p)];
        if (with_ci && fit.boot.completed >= 2) {
            draw.has_ci = true;
            draw.ci = fit.boot.ci[p];
        }
        rec[fit.fit.param_names[p]] = draw;
    }
}

}  // namespace

SimMetrics run_monte_carlo(const SimConfig& cfg, const std::vector<EstimatorSpec>& estimators) {
    SimConfig local = cfg;
    local.estimators = estimators;
    return run_monte_carlo(local);
}

SimMetrics run_monte_carlo(const SimConfig& cfg) {
    if (cfg.estimators.empty()) {
        throw ValidationError("monte carlo needs at least one estimator");
    }
    if (cfg.replications < 1) {
        throw ValidationError("replications must be >= 1");
    }
    const std::size_t want_tau = cfg.tau_mode == TauMode::Common ? 1 : 4;
    if (cfg.tau.size() != want_tau) {
        throw ValidationError("tau values do not match the heterogeneity structure");
    }
    for (double t : cfg.tau) {
        if (t < 0.0) throw ValidationError("tau must be non-negative");
    }
    if (cfg.beta_true.size() != cfg.selection.param_count(4)) {
        throw ValidationError("beta does not match the true selection structure");
    }

    const int R = cfg.replications;
    const int n_est = static_cast<int>(cfg.estimators.size());
    std::vector<std::vector<std::optional<ReplicateRecord>>> results(
        static_cast<std::size_t>(R));
    std::vector<double> unpub_fraction(static_cast<std::size_t>(R), 0.0);

    const SelectionParams beta_true{cfg.beta_true};

    parallel_for(R, cfg.threads, [&](int r) {
        auto& slots = results[static_cast<std::size_t>(r)];
        slots.assign(static_cast<std::size_t>(n_est), std::nullopt);

        const std::uint64_t gen_seed = stream_key(cfg.seed, static_cast<std::uint64_t>(r), 1);
        const std::uint64_t sel_seed = stream_key(cfg.seed, static_cast<std::uint64_t>(r), 2);
        const NetworkDataset complete = generate_complete_network(cfg, gen_seed);
        const NetworkDataset data = apply_selection(complete, cfg.selection, beta_true, sel_seed);
        unpub_fraction[static_cast<std::size_t>(r)] =
            static_cast<double>(data.unpublished_count()) /
            static_cast<double>(data.total_count());

        for (int e = 0; e < n_est; ++e) {
            const EstimatorSpec& est = cfg.estimators[static_cast<std::size_t>(e)];
            try {
                ReplicateRecord rec;
                if (!est.ipw) {
                    const FitResult fit = fit_mre(data, cfg.analysis_tau);
                    if (!fit.wald_available) continue;  // no usable intervals
                    record_fit(fit, true, rec);
                } else if (est.with_ci) {
                    const std::uint64_t boot_seed = stream_key(
                        cfg.seed, static_cast<std::uint64_t>(r), 3, static_cast<std::uint64_t>(e));
                    const IpwFit fit = fit_ipw_with_bootstrap(data, est.selection, cfg.analysis_tau,
                                                              {}, cfg.bootstrap, boot_seed, 1);
                    record_ipw(fit, true, rec);
                } else {
                    const IpwFit fit = fit_ipw(data, est.selection, cfg.analysis_tau);
                    record_ipw(fit, false, rec);
                }
                slots[static_cast<std::size_t>(e)] = std::move(rec);
            } catch (const Error&) {
                // replicate-level failure for this estimator; counted below
            }
        }
    });

    // Truth per parameter name.
    auto truth_of = [&](const std::string& param) {
        if (param == "mu[A]") return cfg.mu_ac;
        if (param == "mu[B]") return cfg.mu_bc;
        if (param == "tau") {
            return cfg.tau_mode == TauMode::Common ? cfg.tau[0]
                                                   : std::numeric_limits<double>::quiet_NaN();
        }
        if (param.rfind("tau[", 0) == 0) {
            const int k = std::stoi(param.substr(4, param.size() - 5));
            return cfg.tau_mode == TauMode::Common ? cfg.tau[0]
                                                   : cfg.tau.at(static_cast<std::size_t>(k - 1));
        }
        return std::numeric_limits<double>::quiet_NaN();
    };

    SimMetrics metrics;
    metrics.replications = R;
    metrics.mean_unpublished_fraction = mean(unpub_fraction);

    for (int e = 0; e < n_est; ++e) {
        const std::string label = cfg.estimators[static_cast<std::size_t>(e)].label();
        int failures = 0;
        std::vector<std::string> params;
        for (int r = 0; r < R; ++r) {
            const auto& slot = results[static_cast<std::size_t>(r)][static_cast<std::size_t>(e)];
            if (!slot) {
                ++failures;
                continue;
            }
            for (const auto& [name, draw] : *slot) {
                (void)draw;
                if (std::find(params.begin(), params.end(), name) == params.end()) {
                    params.push_back(name);
                }
            }
        }
        metrics.failures[label] = failures;
        if (failures * 20 > R) {
            throw TooManyFailures("estimator " + label + " failed on " +
                                  std::to_string(failures) + " of " + std::to_string(R) +
                                  " replicates (more than 5%)");
        }
        std::sort(params.begin(), params.end());

        for (const auto& name : params) {
            MetricRow row;
            row.estimator = label;
            row.param = name;
            row.is_tau = name.rfind("tau", 0) == 0;
            row.truth = truth_of(name);
            std::vector<double> ests;
            std::vector<double> lengths;
            int covered = 0, with_ci = 0, zeros = 0;
            for (int r = 0; r < R; ++r) {
                const auto& slot =
                    results[static_cast<std::size_t>(r)][static_cast<std::size_t>(e)];
                if (!slot) continue;
                const auto it = slot->find(name);
                if (it == slot->end()) continue;
                ests.push_back(it->second.estimate);
                if (it->second.estimate == 0.0) ++zeros;
                if (it->second.has_ci) {
                    ++with_ci;
                    lengths.push_back(it->second.ci.length());
                    if (it->second.ci.contains(row.truth)) ++covered;
                }
            }
            row.used = static_cast<int>(ests.size());
            if (ests.empty()) continue;
            row.ave = mean(ests);
            row.sd = ests.size() > 1 ? sample_sd(ests) : 0.0;
            if (with_ci > 0) {
                row.cp = static_cast<double>(covered) / static_cast<double>(with_ci);
                row.loci = mean(lengths);
            } else {
                row.cp = std::numeric_limits<double>::quiet_NaN();
                row.loci = std::numeric_limits<double>::quiet_NaN();
            }
            row.noz = row.is_tau ? zeros : -1;
            metrics.rows.push_back(std::move(row));
        }
    }
    return metrics;
}

}  // namespace nmaipw
