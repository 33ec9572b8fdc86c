#include "nmaipw/diagnostics.hpp"
#include "nmaipw/errors.hpp"
#include "nmaipw/ipw.hpp"
#include "nmaipw/mre_model.hpp"
#include "nmaipw/network_data.hpp"
#include "nmaipw/ranking.hpp"
#include "nmaipw/serialize.hpp"
#include "nmaipw/simulation.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

namespace {

using namespace nmaipw;

std::string default_out(const std::string& input, const char* suffix) {
    const std::filesystem::path p(input);
    return (p.parent_path() / p.stem()).string() + suffix;
}

void print_league(std::ostream& os, const std::vector<LeagueEntry>& league,
                  const std::string& method) {
    os << "Relative effects (" << method << ", log-odds ratio):\n";
    char line[160];
    std::snprintf(line, sizeof line, "  %-18s %10s %10s   %s\n", "comparison", "estimate", "se",
                  "95% CI");
    os << line;
    for (const auto& e : league) {
        const std::string pair = e.treat_x + " vs " + e.treat_y;
        if (e.se && e.ci) {
            std::snprintf(line, sizeof line, "  %-18s %10.4f %10.4f   [%.4f, %.4f]\n",
                          pair.c_str(), e.estimate, *e.se, e.ci->lower, e.ci->upper);
        } else {
            std::snprintf(line, sizeof line, "  %-18s %10.4f %10s   %s\n", pair.c_str(),
                          e.estimate, "-", "-");
        }
        os << line;
    }
}

void print_tau(std::ostream& os, const FitResult& fit) {
    os << "Heterogeneity (tau):\n";
    char line[160];
    if (fit.params.tau.mode == TauMode::Common) {
        std::snprintf(line, sizeof line, "  common             %10.4f\n",
                      fit.params.tau.values[0]);
        os << line;
        return;
    }
    for (std::size_t k = 0; k < fit.params.tau.values.size(); ++k) {
        const bool estimated = fit.tau_param_index.empty() ? true : fit.tau_param_index[k] >= 0;
        std::snprintf(line, sizeof line, "  design %-11zu %10.4f%s\n", k + 1,
                      fit.params.tau.values[k], estimated ? "" : "  (no published studies)");
        os << line;
    }
}

void emit(const std::string& format, const nlohmann::ordered_json& doc,
          const std::function<void()>& text_renderer,
          const std::function<void()>& csv_renderer = {}) {
    if (format == "json") {
        std::cout << doc.dump(2) << "\n";
    } else if (format == "csv" && csv_renderer) {
        csv_renderer();
    } else {
        text_renderer();
    }
}

void print_league_csv(const std::vector<LeagueEntry>& league) {
    std::cout << "treat_x,treat_y,estimate,se,ci_lower,ci_upper\n";
    for (const auto& e : league) {
        std::cout << e.treat_x << ',' << e.treat_y << ',' << format_number(e.estimate) << ',';
        if (e.se) std::cout << format_number(*e.se);
        std::cout << ',';
        if (e.ci) std::cout << format_number(e.ci->lower);
        std::cout << ',';
        if (e.ci) std::cout << format_number(e.ci->upper);
        std::cout << '\n';
    }
}

// ---------------------------------------------------------------------------
// simulate config file: flat key = value lines, # comments
// ---------------------------------------------------------------------------

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> values;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        values.push_back(std::stod(item));
    }
    return values;
}

SimConfig config_from_file(const std::string& path, std::uint64_t seed, int threads) {
    const auto kv = parse_kv_file(path);
    auto get = [&](const char* key) -> const std::string& {
        const auto it = kv.find(key);
        if (it == kv.end()) throw SchemaError(std::string("config misses key '") + key + "'");
        return it->second;
    };
    auto get_or = [&](const char* key, const std::string& fallback) {
        const auto it = kv.find(key);
        return it == kv.end() ? fallback : it->second;
    };

    SimConfig cfg;
    cfg.mu_ac = std::stod(get_or("mu_ac", "0.5"));
    cfg.mu_bc = std::stod(get_or("mu_bc", "0.3"));
    cfg.tau_mode = tau_mode_from_string(get_or("tau_mode", "common"));
    cfg.tau = parse_double_list(get_or("tau", "0.05"));
    cfg.size = size_regime_from_string(get_or("size", "moderate"));
    const Direction direction = direction_from_string(get_or("direction", "higher"));
    cfg.selection = SelectionSpec::from_token(get("selection"), direction);
    const auto beta = parse_double_list(get("beta"));
    cfg.beta_true.resize(static_cast<Eigen::Index>(beta.size()));
    for (std::size_t i = 0; i < beta.size(); ++i) {
        cfg.beta_true[static_cast<Eigen::Index>(i)] = beta[i];
    }
    cfg.replications = std::stoi(get("replications"));
    cfg.bootstrap = std::stoi(get_or("bootstrap", "1000"));
    cfg.analysis_tau = tau_mode_from_string(get_or("analysis_tau", "design"));
    std::stringstream ss(get("estimators"));
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) continue;
        cfg.estimators.push_back(EstimatorSpec::parse(item.substr(b, e - b + 1), direction));
    }
    cfg.seed = seed;
    cfg.threads = threads;
    return cfg;
}

// ---------------------------------------------------------------------------

struct CommonFitFlags {
    std::string tau_mode = "design";
    std::string reference;
    std::string direction = "higher";
    std::string format = "text";
    std::string out;
};

int run_fit(const std::string& input, const CommonFitFlags& flags) {
    const NetworkDataset data = load_dataset(input);
    const TreatmentId ref = flags.reference;
    const FitResult fit = fit_mre(data, tau_mode_from_string(flags.tau_mode), ref);
    const Direction direction = direction_from_string(flags.direction);
    const auto doc = fit_result_json(fit, direction);
    const std::string out = flags.out.empty() ? default_out(input, ".fit.json") : flags.out;
    write_text_file(out, doc.dump(2) + "\n");
    emit(
        flags.format, doc,
        [&] {
            std::cout << "Studies: " << data.published_count() << " published, "
                      << data.unpublished_count() << " registry-only\n";
            std::cout << "Reference: " << fit.params.reference << "\n";
            print_league(std::cout, league_table(fit), "mre");
            print_tau(std::cout, fit);
            std::printf("Log-likelihood: %.6f (converged: %s, evaluations: %d)\n", fit.loglik,
                        fit.converged ? "yes" : "no", fit.n_evals);
            std::cout << "Wrote " << out << "\n";
        },
        [&] { print_league_csv(league_table(fit)); });
    return 0;
}

int run_adjust(const std::string& input, const CommonFitFlags& flags,
               const std::string& selection_token, int bootstrap, std::uint64_t seed,
               int threads, const std::string& dump_replicates) {
    const NetworkDataset data = load_dataset(input);
    const Direction direction = direction_from_string(flags.direction);
    const SelectionSpec spec = SelectionSpec::from_token(selection_token, direction);
    const IpwFit fit = fit_ipw_with_bootstrap(data, spec, tau_mode_from_string(flags.tau_mode),
                                              flags.reference, bootstrap, seed, threads);
    const auto doc = ipw_fit_json(fit, data);
    const std::string out = flags.out.empty() ? default_out(input, ".ipw.json") : flags.out;
    write_text_file(out, doc.dump(2) + "\n");
    if (!dump_replicates.empty()) {
        write_text_file(dump_replicates, replicates_csv(fit.boot));
    }
    emit(
        flags.format, doc,
        [&] {
            std::cout << "Studies: " << data.published_count() << " published, "
                      << data.unpublished_count() << " registry-only\n";
            std::cout << "Selection model: " << spec.token() << " (direction "
                      << to_string(direction) << ")";
            if (fit.all_published_fallback) std::cout << " [all published: weights = 1]";
            std::cout << "\n";
            for (const auto& w : fit.selection.diagnostics.warnings) {
                std::cout << "warning: " << w << "\n";
            }
            print_league(std::cout, league_table(fit), "ipw");
            print_tau(std::cout, fit.fit);
            std::printf("Bootstrap: %d requested, %d completed, %d dropped\n", fit.boot.requested,
                        fit.boot.completed, fit.boot.failed);
            std::cout << "Wrote " << out << "\n";
        },
        [&] { print_league_csv(league_table(fit)); });
    return 0;
}

int run_rank(const std::string& input, const std::string& direction_override,
             const std::string& format, const std::string& out_path) {
    const LoadedFit loaded = read_fit_json(input);
    const Direction direction = direction_override.empty()
                                    ? loaded.direction
                                    : direction_from_string(direction_override);
    const RankTable table =
        p_score_from_league(loaded.treatments, loaded.league, direction, loaded.method);
    const auto doc = rank_table_json(table);
    const std::string out = out_path.empty() ? default_out(input, ".rank.json") : out_path;
    write_text_file(out, doc.dump(2) + "\n");
    emit(
        format, doc,
        [&] {
            std::cout << "P-scores (" << table.method << ", direction " << to_string(direction)
                      << "):\n";
            int place = 1;
            for (int idx : table.order) {
                std::printf("  %d. %-14s %.4f\n", place++,
                            table.treatments[static_cast<std::size_t>(idx)].c_str(),
                            table.pbar[static_cast<std::size_t>(idx)]);
            }
            std::cout << "Wrote " << out << "\n";
        },
        [&] {
            std::cout << "treatment,pscore\n";
            for (int idx : table.order) {
                std::cout << table.treatments[static_cast<std::size_t>(idx)] << ','
                          << format_number(table.pbar[static_cast<std::size_t>(idx)]) << '\n';
            }
        });
    return 0;
}

int run_simulate(const std::string& config_path, std::uint64_t seed, int threads,
                 const std::string& out_prefix, const std::string& format) {
    const SimConfig cfg = config_from_file(config_path, seed, threads);
    const SimMetrics metrics = run_monte_carlo(cfg);
    const std::string csv = sim_metrics_csv(metrics);
    const auto doc = sim_metrics_json(metrics, cfg);
    write_text_file(out_prefix + ".csv", csv);
    write_text_file(out_prefix + ".json", doc.dump(2) + "\n");
    if (format == "json") {
        std::cout << doc.dump(2) << "\n";
    } else {
        std::cout << csv;
        std::printf("mean unpublished fraction: %.4f\n", metrics.mean_unpublished_fraction);
        for (const auto& [label, count] : metrics.failures) {
            if (count > 0) std::printf("failures[%s] = %d\n", label.c_str(), count);
        }
        std::cout << "Wrote " << out_prefix << ".csv and " << out_prefix << ".json\n";
    }
    return 0;
}

int run_funnel(const std::string& studies_path, const std::string& fit_path,
               const std::string& out_path, const std::string& svg_path) {
    const NetworkDataset data = load_dataset(studies_path);
    const LoadedFit loaded = read_fit_json(fit_path);
    const FunnelData funnel = funnel_data(data, loaded.fit);
    const std::string out = out_path.empty() ? default_out(studies_path, ".funnel.csv") : out_path;
    write_text_file(out, funnel_csv(funnel));
    if (!svg_path.empty()) {
        write_text_file(svg_path, funnel_svg(funnel));
    }
    std::cout << "Funnel: " << funnel.points.size() << " points, " << funnel.overlays.size()
              << " registry overlays\n";
    std::cout << "Wrote " << out << (svg_path.empty() ? "" : " and " + svg_path) << "\n";
    return 0;
}

int run_egger(const std::string& studies_path, const std::string& fit_path,
              const std::string& out_path, const std::string& format) {
    const NetworkDataset data = load_dataset(studies_path);
    const LoadedFit loaded = read_fit_json(fit_path);
    const EggerResult egger = eggers_test(data, loaded.fit);
    const auto doc = egger_json(egger);
    const std::string out = out_path.empty() ? default_out(studies_path, ".egger.json") : out_path;
    write_text_file(out, doc.dump(2) + "\n");
    emit(format, doc, [&] {
        std::printf("Asymmetry regression: intercept %.4f (se %.4f), t = %.4f, df = %d, p = %.4f\n",
                    egger.intercept, egger.se, egger.t, egger.df, egger.p);
        std::cout << "Wrote " << out << "\n";
    });
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Network meta-analysis with registry-calibrated publication-bias adjustment"};
    app.require_subcommand(1);

    // fit ---------------------------------------------------------------
    std::string fit_input;
    CommonFitFlags fit_flags;
    auto* fit_cmd = app.add_subcommand("fit", "Fit the random-effects network model");
    fit_cmd->add_option("studies", fit_input, "studies-long-v1 CSV file")->required();
    fit_cmd->add_option("--tau", fit_flags.tau_mode, "heterogeneity structure: common|design");
    fit_cmd->add_option("--reference", fit_flags.reference, "reference treatment");
    fit_cmd->add_option("--direction", fit_flags.direction, "direction of benefit: higher|lower");
    fit_cmd->add_option("-o,--out", fit_flags.out, "output fit-v1 JSON path");
    fit_cmd->add_option("--format", fit_flags.format, "console rendering: text|json|csv");

    // adjust ------------------------------------------------------------
    std::string adj_input, adj_selection, adj_dump;
    CommonFitFlags adj_flags;
    int adj_bootstrap = 1000;
    int adj_threads = 1;
    std::uint64_t adj_seed = 0;
    auto* adj_cmd =
        app.add_subcommand("adjust", "Publication-bias-adjusted fit via inverse weighting");
    adj_cmd->add_option("studies", adj_input, "studies-long-v1 CSV file")->required();
    adj_cmd->add_option("--selection", adj_selection,
                        "selection model token: logit2|probit2|logitK1|probitK1|logit2K|probit2K")
        ->required();
    adj_cmd->add_option("--direction", adj_flags.direction,
                        "direction of benefit: higher|lower");
    adj_cmd->add_option("--bootstrap", adj_bootstrap, "bootstrap replicates (default 1000)");
    adj_cmd->add_option("--seed", adj_seed, "RNG seed (required)")->required();
    adj_cmd->add_option("--tau", adj_flags.tau_mode, "heterogeneity structure: common|design");
    adj_cmd->add_option("--reference", adj_flags.reference, "reference treatment");
    adj_cmd->add_option("--threads", adj_threads, "parallel width of the bootstrap");
    adj_cmd->add_option("-o,--out", adj_flags.out, "output fit-v1 JSON path");
    adj_cmd->add_option("--dump-replicates", adj_dump, "write the replicate matrix to CSV");
    adj_cmd->add_option("--format", adj_flags.format, "console rendering: text|json|csv");

    // rank ----------------------------------------------------------------
    std::string rank_input, rank_direction, rank_out, rank_format = "text";
    auto* rank_cmd = app.add_subcommand("rank", "P-score ranking from a fit-v1 document");
    rank_cmd->add_option("fit", rank_input, "fit-v1 JSON file")->required();
    rank_cmd->add_option("--direction", rank_direction, "override the stored direction");
    rank_cmd->add_option("-o,--out", rank_out, "output rank-v1 JSON path");
    rank_cmd->add_option("--format", rank_format, "console rendering: text|json|csv");

    // simulate -------------------------------------------------------------
    std::string sim_config, sim_out = "sim", sim_format = "text";
    std::uint64_t sim_seed = 0;
    int sim_threads = 1;
    auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo evaluation of the estimators");
    sim_cmd->add_option("config", sim_config, "flat key=value config file")->required();
    sim_cmd->add_option("--seed", sim_seed, "RNG seed (required)")->required();
    sim_cmd->add_option("--threads", sim_threads, "parallel replicate width");
    sim_cmd->add_option("--out", sim_out, "output prefix (default: sim)");
    sim_cmd->add_option("--format", sim_format, "console rendering: text|json|csv");

    // funnel ----------------------------------------------------------------
    std::string fun_studies, fun_fit, fun_out, fun_svg;
    auto* fun_cmd =
        app.add_subcommand("funnel", "Comparison-adjusted funnel data with registry overlays");
    fun_cmd->add_option("studies", fun_studies, "studies-long-v1 CSV file")->required();
    fun_cmd->add_option("fit", fun_fit, "fit-v1 JSON file")->required();
    fun_cmd->add_option("-o,--out", fun_out, "output funnel-v1 CSV path");
    fun_cmd->add_option("--svg", fun_svg, "also render a static SVG");

    // egger -------------------------------------------------------------------
    std::string egg_studies, egg_fit, egg_out, egg_format = "text";
    auto* egg_cmd = app.add_subcommand("egger", "Funnel-asymmetry regression test");
    egg_cmd->add_option("studies", egg_studies, "studies-long-v1 CSV file")->required();
    egg_cmd->add_option("fit", egg_fit, "fit-v1 JSON file")->required();
    egg_cmd->add_option("-o,--out", egg_out, "output egger-v1 JSON path");
    egg_cmd->add_option("--format", egg_format, "console rendering: text|json|csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (fit_cmd->parsed()) return run_fit(fit_input, fit_flags);
        if (adj_cmd->parsed()) {
            return run_adjust(adj_input, adj_flags, adj_selection, adj_bootstrap, adj_seed,
                              adj_threads, adj_dump);
        }
        if (rank_cmd->parsed()) return run_rank(rank_input, rank_direction, rank_format, rank_out);
        if (sim_cmd->parsed()) {
            return run_simulate(sim_config, sim_seed, sim_threads, sim_out, sim_format);
        }
        if (fun_cmd->parsed()) return run_funnel(fun_studies, fun_fit, fun_out, fun_svg);
        if (egg_cmd->parsed()) return run_egger(egg_studies, egg_fit, egg_out, egg_format);
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
