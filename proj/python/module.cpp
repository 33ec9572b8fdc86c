#include "nmaipw/diagnostics.hpp"
#include "nmaipw/errors.hpp"
#include "nmaipw/ipw.hpp"
#include "nmaipw/mre_model.hpp"
#include "nmaipw/network_data.hpp"
#include "nmaipw/ranking.hpp"
#include "nmaipw/selection.hpp"
#include "nmaipw/serialize.hpp"
#include "nmaipw/simulation.hpp"

#include <json.hpp>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace nmaipw;

namespace {

py::object json_to_py(const nlohmann::ordered_json& doc) {
    return py::module_::import("json").attr("loads")(doc.dump());
}

nlohmann::ordered_json py_to_json(const py::object& obj) {
    const std::string dumped =
        py::module_::import("json").attr("dumps")(obj).cast<std::string>();
    return nlohmann::ordered_json::parse(dumped);
}

Eigen::VectorXd to_vector(const std::vector<double>& values) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) v[static_cast<Eigen::Index>(i)] = values[i];
    return v;
}

LoadedFit fit_from_dict(const py::dict& fit) {
    return parse_fit_json(py_to_json(fit));
}

}  // namespace

PYBIND11_MODULE(nmaipw, m) {
    m.doc() = "Network meta-analysis with registry-calibrated publication-bias adjustment";

    py::register_exception<NumericalError>(m, "NumericalFailure", PyExc_RuntimeError);
    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);

    py::class_<NetworkDataset>(m, "Dataset")
        .def_property_readonly("treatments",
                               [](const NetworkDataset& d) { return d.treatments; })
        .def_property_readonly("n_published", &NetworkDataset::published_count)
        .def_property_readonly("n_unpublished", &NetworkDataset::unpublished_count)
        .def_property_readonly("n_studies", &NetworkDataset::total_count)
        .def_property_readonly("n_designs", &NetworkDataset::design_count)
        .def("save", [](const NetworkDataset& d, const std::string& path) {
            save_dataset(d, path);
        })
        .def("to_csv",
             [](const NetworkDataset& d) {
                 std::ostringstream out;
                 write_dataset_csv(d, out);
                 return out.str();
             })
        .def("__repr__", [](const NetworkDataset& d) {
            return "<nmaipw.Dataset: " + std::to_string(d.published_count()) + " published + " +
                   std::to_string(d.unpublished_count()) + " registry studies, " +
                   std::to_string(d.design_count()) + " designs>";
        });

    m.def("load_dataset",
          [](const std::string& path) { return load_dataset(path); },
          py::arg("path"), "Load a studies-long-v1 CSV file");

    m.def("read_dataset_csv",
          [](const std::string& text) {
              std::istringstream in(text);
              return read_dataset_csv(in);
          },
          py::arg("text"), "Parse studies-long-v1 CSV content from a string");

    m.def(
        "fit_mre",
        [](const NetworkDataset& data, const std::string& tau_mode,
           const std::string& reference, const std::string& direction) {
            const FitResult fit =
                fit_mre(data, tau_mode_from_string(tau_mode), reference);
            return json_to_py(fit_result_json(fit, direction_from_string(direction)));
        },
        py::arg("dataset"), py::arg("tau_mode") = "design", py::arg("reference") = "",
        py::arg("direction") = "higher",
        "Maximum-likelihood random-effects network fit; returns a fit-v1 dict");

    m.def(
        "fit_ipw",
        [](const NetworkDataset& data, const std::string& selection, std::uint64_t seed,
           const std::string& direction, const std::string& tau_mode,
           const std::string& reference, int bootstrap, int threads) {
            const SelectionSpec spec =
                SelectionSpec::from_token(selection, direction_from_string(direction));
            const IpwFit fit = fit_ipw_with_bootstrap(
                data, spec, tau_mode_from_string(tau_mode), reference, bootstrap, seed, threads);
            return json_to_py(ipw_fit_json(fit, data));
        },
        py::arg("dataset"), py::arg("selection"), py::arg("seed"),
        py::arg("direction") = "higher", py::arg("tau_mode") = "design",
        py::arg("reference") = "", py::arg("bootstrap") = 1000, py::arg("threads") = 1,
        "Publication-bias-adjusted fit with parametric-bootstrap intervals");

    m.def(
        "rank",
        [](const py::dict& fit, const std::string& direction) {
            const LoadedFit loaded = fit_from_dict(fit);
            const Direction dir = direction.empty() ? loaded.direction
                                                    : direction_from_string(direction);
            const RankTable table =
                p_score_from_league(loaded.treatments, loaded.league, dir, loaded.method);
            return json_to_py(rank_table_json(table));
        },
        py::arg("fit"), py::arg("direction") = "",
        "P-score ranking from a fit-v1 dict; returns a rank-v1 dict");

    m.def(
        "funnel",
        [](const NetworkDataset& data, const py::dict& fit, bool svg) {
            const LoadedFit loaded = fit_from_dict(fit);
            const FunnelData funnel = funnel_data(data, loaded.fit);
            py::dict out;
            py::list points, overlays;
            for (const auto& pt : funnel.points) {
                py::dict p;
                p["study_id"] = pt.study_id;
                p["design_k"] = pt.design_k;
                p["treat_x"] = pt.treat_x;
                p["treat_y"] = pt.treat_y;
                p["centered"] = pt.centered;
                p["precision"] = pt.precision;
                points.append(std::move(p));
            }
            for (const auto& line : funnel.overlays) {
                py::dict o;
                o["study_id"] = line.study_id;
                o["design_k"] = line.design_k;
                o["height"] = line.height;
                overlays.append(std::move(o));
            }
            out["points"] = std::move(points);
            out["overlays"] = std::move(overlays);
            if (svg) out["svg"] = funnel_svg(funnel);
            return out;
        },
        py::arg("dataset"), py::arg("fit"), py::arg("svg") = false,
        "Comparison-adjusted funnel data with registry overlays");

    m.def(
        "egger",
        [](const NetworkDataset& data, const py::dict& fit) {
            const LoadedFit loaded = fit_from_dict(fit);
            return json_to_py(egger_json(eggers_test(data, loaded.fit)));
        },
        py::arg("dataset"), py::arg("fit"), "Funnel-asymmetry regression test");

    m.def(
        "publish_probability",
        [](const std::string& selection, const std::vector<double>& beta, int design_k,
           double t_star, const std::string& direction) {
            const SelectionSpec spec =
                SelectionSpec::from_token(selection, direction_from_string(direction));
            return publish_probability(spec, SelectionParams{to_vector(beta)}, design_k, t_star);
        },
        py::arg("selection"), py::arg("beta"), py::arg("design_k"), py::arg("t_star"),
        py::arg("direction") = "higher");

    m.def(
        "solve_selection",
        [](const NetworkDataset& data, const std::string& selection,
           const std::string& direction) {
            const SelectionSpec spec =
                SelectionSpec::from_token(selection, direction_from_string(direction));
            const SelectionSolution sol = solve_selection(data, spec);
            py::dict out;
            std::vector<double> beta(sol.params.beta.data(),
                                     sol.params.beta.data() + sol.params.beta.size());
            out["beta"] = beta;
            out["residual_norm"] = sol.diagnostics.residual_norm;
            out["exact_root"] = sol.diagnostics.exact_root;
            out["iterations"] = sol.diagnostics.iterations;
            out["jacobian_condition"] = sol.diagnostics.jacobian_condition;
            out["pinned_designs"] = sol.diagnostics.pinned_designs;
            out["warnings"] = sol.diagnostics.warnings;
            return out;
        },
        py::arg("dataset"), py::arg("selection"), py::arg("direction") = "higher",
        "Solve the registry-calibrated estimating equations");

    m.def(
        "simulate",
        [](double mu_ac, double mu_bc, const std::string& tau_mode,
           const std::vector<double>& tau, const std::string& size,
           const std::string& selection, const std::vector<double>& beta,
           int replications, int bootstrap, std::uint64_t seed,
           const std::string& analysis_tau, const std::vector<std::string>& estimators,
           const std::string& direction, int threads) {
            SimConfig cfg;
            cfg.mu_ac = mu_ac;
            cfg.mu_bc = mu_bc;
            cfg.tau_mode = tau_mode_from_string(tau_mode);
            cfg.tau = tau;
            cfg.size = size_regime_from_string(size);
            const Direction dir = direction_from_string(direction);
            cfg.selection = SelectionSpec::from_token(selection, dir);
            cfg.beta_true = to_vector(beta);
            cfg.replications = replications;
            cfg.bootstrap = bootstrap;
            cfg.seed = seed;
            cfg.analysis_tau = tau_mode_from_string(analysis_tau);
            for (const auto& e : estimators) {
                cfg.estimators.push_back(EstimatorSpec::parse(e, dir));
            }
            cfg.threads = threads;
            const SimMetrics metrics = run_monte_carlo(cfg);
            return json_to_py(sim_metrics_json(metrics, cfg));
        },
        py::arg("mu_ac") = 0.5, py::arg("mu_bc") = 0.3, py::arg("tau_mode") = "common",
        py::arg("tau") = std::vector<double>{0.05}, py::arg("size") = "moderate",
        py::arg("selection") = "logitK1", py::arg("beta") = std::vector<double>{},
        py::arg("replications") = 100, py::arg("bootstrap") = 1000, py::arg("seed") = 0,
        py::arg("analysis_tau") = "design",
        py::arg("estimators") = std::vector<std::string>{"mre", "ipw:logit2"},
        py::arg("direction") = "higher", py::arg("threads") = 1,
        "Monte Carlo evaluation of the estimators; returns a sim-v1 dict");
}
