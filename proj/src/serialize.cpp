#include "nmaipw/serialize.hpp"

#include "nmaipw/errors.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>

namespace nmaipw {

using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json interval_json(const ParamInterval& ci) {
    return ordered_json::array({ci.lower, ci.upper});
}

ordered_json number_or_null(double v) {
    if (std::isnan(v)) return nullptr;
    return v;
}

ordered_json league_json(const std::vector<LeagueEntry>& league) {
    ordered_json arr = ordered_json::array();
    for (const auto& e : league) {
        ordered_json cell;
        cell["treat_x"] = e.treat_x;
        cell["treat_y"] = e.treat_y;
        cell["estimate"] = e.estimate;
        cell["se"] = e.se ? ordered_json(*e.se) : ordered_json(nullptr);
        cell["ci"] = e.ci ? interval_json(*e.ci) : ordered_json(nullptr);
        arr.push_back(std::move(cell));
    }
    return arr;
}

ordered_json params_json(const FitResult& fit) {
    ordered_json mu = ordered_json::array();
    for (std::size_t i = 0; i < fit.params.basic.size(); ++i) {
        ordered_json entry;
        entry["treatment"] = fit.params.basic[i];
        entry["estimate"] = fit.params.mu[static_cast<Eigen::Index>(i)];
        if (fit.wald_available) {
            entry["se"] = fit.se[i];
            entry["ci"] = interval_json(fit.ci[i]);
        } else {
            entry["se"] = nullptr;
            entry["ci"] = nullptr;
        }
        mu.push_back(std::move(entry));
    }

    ordered_json tau = ordered_json::array();
    const int n_mu = fit.mu_count();
    if (fit.params.tau.mode == TauMode::Common) {
        ordered_json entry;
        entry["design"] = nullptr;
        entry["estimate"] = fit.params.tau.values.at(0);
        entry["estimated"] = true;
        if (fit.wald_available) {
            entry["se"] = fit.se[static_cast<std::size_t>(n_mu)];
            entry["ci"] = interval_json(fit.ci[static_cast<std::size_t>(n_mu)]);
        } else {
            entry["se"] = nullptr;
            entry["ci"] = nullptr;
        }
        tau.push_back(std::move(entry));
    } else {
        for (std::size_t k = 0; k < fit.params.tau.values.size(); ++k) {
            ordered_json entry;
            entry["design"] = static_cast<int>(k + 1);
            entry["estimate"] = fit.params.tau.values[k];
            const int idx = fit.tau_param_index.at(k);
            entry["estimated"] = idx >= 0;
            if (idx >= 0 && fit.wald_available) {
                entry["se"] = fit.se[static_cast<std::size_t>(n_mu + idx)];
                entry["ci"] = interval_json(fit.ci[static_cast<std::size_t>(n_mu + idx)]);
            } else {
                entry["se"] = nullptr;
                entry["ci"] = nullptr;
            }
            tau.push_back(std::move(entry));
        }
    }

    ordered_json out;
    out["mu"] = std::move(mu);
    out["tau"] = std::move(tau);
    return out;
}

ordered_json fit_core_json(const FitResult& fit, Direction direction,
                           const std::string& method) {
    ordered_json doc;
    doc["format"] = "fit-v1";
    doc["method"] = method;
    doc["reference"] = fit.params.reference;
    doc["direction"] = to_string(direction);
    doc["tau_mode"] = to_string(fit.params.tau.mode);
    ordered_json treatments = ordered_json::array();
    for (const auto& t : fit.params.basic) treatments.push_back(t);
    treatments.push_back(fit.params.reference);
    doc["treatments"] = std::move(treatments);
    doc["loglik"] = fit.loglik;
    doc["converged"] = fit.converged;
    doc["n_evals"] = fit.n_evals;
    doc["params"] = params_json(fit);
    return doc;
}

}  // namespace

ordered_json fit_result_json(const FitResult& fit, Direction direction) {
    ordered_json doc = fit_core_json(fit, direction, "mre");
    doc["league"] = league_json(league_table(fit));
    return doc;
}

ordered_json ipw_fit_json(const IpwFit& fit, const NetworkDataset& data) {
    ordered_json doc = fit_core_json(fit.fit, fit.spec.direction, "ipw");
    doc["league"] = league_json(league_table(fit));

    ordered_json sel;
    sel["token"] = fit.spec.token();
    sel["all_published_fallback"] = fit.all_published_fallback;
    ordered_json beta = ordered_json::array();
    for (Eigen::Index i = 0; i < fit.selection.params.beta.size(); ++i) {
        beta.push_back(fit.selection.params.beta[i]);
    }
    sel["beta"] = std::move(beta);
    sel["residual_norm"] = fit.selection.diagnostics.residual_norm;
    sel["exact_root"] = fit.selection.diagnostics.exact_root;
    sel["iterations"] = fit.selection.diagnostics.iterations;
    sel["jacobian_condition"] = fit.selection.diagnostics.jacobian_condition;
    ordered_json pinned = ordered_json::array();
    for (int k : fit.selection.diagnostics.pinned_designs) pinned.push_back(k);
    sel["pinned_designs"] = std::move(pinned);
    ordered_json warnings = ordered_json::array();
    for (const auto& w : fit.selection.diagnostics.warnings) warnings.push_back(w);
    sel["warnings"] = std::move(warnings);
    doc["selection"] = std::move(sel);

    ordered_json pi = ordered_json::array();
    std::size_t pos = 0;
    for (const auto& study : data.studies) {
        if (!study.published) continue;
        ordered_json entry;
        entry["study_id"] = study.study_id;
        entry["pi"] = fit.pi_hat.at(pos++);
        pi.push_back(std::move(entry));
    }
    doc["pi_hat"] = std::move(pi);

    if (fit.boot.requested > 0) {
        ordered_json boot;
        boot["requested"] = fit.boot.requested;
        boot["completed"] = fit.boot.completed;
        boot["failed"] = fit.boot.failed;
        ordered_json params = ordered_json::array();
        for (std::size_t i = 0; i < fit.boot.param_names.size(); ++i) {
            ordered_json entry;
            entry["name"] = fit.boot.param_names[i];
            entry["sd"] = fit.boot.sd[static_cast<Eigen::Index>(i)];
            entry["ci"] = interval_json(fit.boot.ci[i]);
            params.push_back(std::move(entry));
        }
        boot["params"] = std::move(params);
        doc["bootstrap"] = std::move(boot);
    } else {
        doc["bootstrap"] = nullptr;
    }
    return doc;
}

LoadedFit read_fit_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open fit file: " + path.string());
    ordered_json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw ParseError("malformed fit JSON: " + std::string(e.what()));
    }
    return parse_fit_json(doc);
}

LoadedFit parse_fit_json(const ordered_json& doc) {
    if (!doc.contains("format") || doc["format"] != "fit-v1") {
        throw SchemaError("not a fit-v1 document");
    }

    LoadedFit loaded;
    loaded.method = doc.at("method").get<std::string>();
    loaded.direction = direction_from_string(doc.at("direction").get<std::string>());
    for (const auto& t : doc.at("treatments")) {
        loaded.treatments.push_back(t.get<std::string>());
    }

    FitResult& fit = loaded.fit;
    fit.params.reference = doc.at("reference").get<std::string>();
    fit.params.tau.mode = tau_mode_from_string(doc.at("tau_mode").get<std::string>());
    const auto& mu = doc.at("params").at("mu");
    fit.params.mu.resize(static_cast<Eigen::Index>(mu.size()));
    Eigen::Index i = 0;
    for (const auto& entry : mu) {
        fit.params.basic.push_back(entry.at("treatment").get<std::string>());
        fit.params.mu[i++] = entry.at("estimate").get<double>();
    }
    for (const auto& entry : doc.at("params").at("tau")) {
        fit.params.tau.values.push_back(entry.at("estimate").get<double>());
    }
    fit.loglik = doc.at("loglik").get<double>();
    fit.converged = doc.at("converged").get<bool>();

    for (const auto& cell : doc.at("league")) {
        LeagueEntry e;
        e.treat_x = cell.at("treat_x").get<std::string>();
        e.treat_y = cell.at("treat_y").get<std::string>();
        e.estimate = cell.at("estimate").get<double>();
        if (!cell.at("se").is_null()) e.se = cell.at("se").get<double>();
        if (!cell.at("ci").is_null()) {
            e.ci = ParamInterval{cell.at("ci")[0].get<double>(), cell.at("ci")[1].get<double>()};
        }
        loaded.league.push_back(std::move(e));
    }
    return loaded;
}

// ---------------------------------------------------------------------------

ordered_json rank_table_json(const RankTable& table) {
    ordered_json doc;
    doc["format"] = "rank-v1";
    doc["method"] = table.method;
    doc["direction"] = to_string(table.direction);
    ordered_json ranking = ordered_json::array();
    for (int idx : table.order) {
        ordered_json entry;
        entry["treatment"] = table.treatments[static_cast<std::size_t>(idx)];
        entry["pscore"] = table.pbar[static_cast<std::size_t>(idx)];
        ranking.push_back(std::move(entry));
    }
    doc["ranking"] = std::move(ranking);
    ordered_json pairwise = ordered_json::object();
    const int t = static_cast<int>(table.treatments.size());
    for (int a = 0; a < t; ++a) {
        for (int b = 0; b < t; ++b) {
            if (a == b) continue;
            pairwise[table.treatments[static_cast<std::size_t>(a)] + " vs " +
                     table.treatments[static_cast<std::size_t>(b)]] = table.pairwise(a, b);
        }
    }
    doc["pairwise"] = std::move(pairwise);
    return doc;
}

ordered_json egger_json(const EggerResult& egger) {
    ordered_json doc;
    doc["format"] = "egger-v1";
    doc["intercept"] = egger.intercept;
    doc["se"] = egger.se;
    doc["t"] = egger.t;
    doc["p"] = egger.p;
    doc["df"] = egger.df;
    doc["n_comparisons"] = egger.n_comparisons;
    return doc;
}

ordered_json sim_metrics_json(const SimMetrics& metrics, const SimConfig& cfg) {
    ordered_json doc;
    doc["format"] = "sim-v1";
    ordered_json config;
    config["mu_ac"] = cfg.mu_ac;
    config["mu_bc"] = cfg.mu_bc;
    config["tau_mode"] = to_string(cfg.tau_mode);
    ordered_json tau = ordered_json::array();
    for (double t : cfg.tau) tau.push_back(t);
    config["tau"] = std::move(tau);
    config["size"] = to_string(cfg.size);
    config["selection"] = cfg.selection.token();
    config["direction"] = to_string(cfg.selection.direction);
    ordered_json beta = ordered_json::array();
    for (Eigen::Index i = 0; i < cfg.beta_true.size(); ++i) beta.push_back(cfg.beta_true[i]);
    config["beta"] = std::move(beta);
    config["replications"] = cfg.replications;
    config["bootstrap"] = cfg.bootstrap;
    config["seed"] = cfg.seed;
    config["analysis_tau"] = to_string(cfg.analysis_tau);
    ordered_json estimators = ordered_json::array();
    for (const auto& e : cfg.estimators) estimators.push_back(e.label());
    config["estimators"] = std::move(estimators);
    doc["config"] = std::move(config);

    doc["replications"] = metrics.replications;
    doc["mean_unpublished_fraction"] = metrics.mean_unpublished_fraction;
    ordered_json failures = ordered_json::object();
    for (const auto& [label, count] : metrics.failures) failures[label] = count;
    doc["failures"] = std::move(failures);

    ordered_json rows = ordered_json::array();
    for (const auto& row : metrics.rows) {
        ordered_json r;
        r["estimator"] = row.estimator;
        r["param"] = row.param;
        r["truth"] = number_or_null(row.truth);
        r["used"] = row.used;
        r["ave"] = row.ave;
        r["sd"] = row.sd;
        r["cp"] = number_or_null(row.cp);
        r["loci"] = number_or_null(row.loci);
        r["noz"] = row.is_tau ? ordered_json(row.noz) : ordered_json(nullptr);
        rows.push_back(std::move(r));
    }
    doc["rows"] = std::move(rows);
    return doc;
}

// ---------------------------------------------------------------------------
// CSV writers
// ---------------------------------------------------------------------------

std::string format_number(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

std::string funnel_csv(const FunnelData& funnel) {
    std::string out = "kind,study_id,design_k,treat_x,treat_y,x,y\n";
    for (const auto& pt : funnel.points) {
        out += "point," + pt.study_id + "," + std::to_string(pt.design_k) + "," + pt.treat_x +
               "," + pt.treat_y + "," + format_number(pt.centered) + "," +
               format_number(pt.precision) + "\n";
    }
    for (const auto& line : funnel.overlays) {
        out += "overlay," + line.study_id + "," + std::to_string(line.design_k) + ",,,," +
               format_number(line.height) + "\n";
    }
    return out;
}

std::string sim_metrics_csv(const SimMetrics& metrics) {
    std::string out = "estimator,param,truth,used,ave,sd,cp,loci,noz\n";
    for (const auto& row : metrics.rows) {
        out += row.estimator + "," + row.param + "," + format_number(row.truth) + "," +
               std::to_string(row.used) + "," + format_number(row.ave) + "," +
               format_number(row.sd) + "," + format_number(row.cp) + "," +
               format_number(row.loci) + ",";
        if (row.is_tau && row.noz >= 0) out += std::to_string(row.noz);
        out += "\n";
    }
    return out;
}

std::string replicates_csv(const BootstrapSummary& boot) {
    std::string out;
    for (std::size_t i = 0; i < boot.param_names.size(); ++i) {
        if (i) out += ",";
        out += boot.param_names[i];
    }
    out += "\n";
    for (Eigen::Index r = 0; r < boot.replicate_estimates.rows(); ++r) {
        for (Eigen::Index c = 0; c < boot.replicate_estimates.cols(); ++c) {
            if (c) out += ",";
            out += format_number(boot.replicate_estimates(r, c));
        }
        out += "\n";
    }
    return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open file for writing: " + path.string());
    out << content;
}

}  // namespace nmaipw
