#pragma once

#include "nmaipw/diagnostics.hpp"
#include "nmaipw/ipw.hpp"
#include "nmaipw/mre_model.hpp"
#include "nmaipw/ranking.hpp"
#include "nmaipw/simulation.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace nmaipw {

// fit-v1 -------------------------------------------------------------------

nlohmann::ordered_json fit_result_json(const FitResult& fit, Direction direction);
nlohmann::ordered_json ipw_fit_json(const IpwFit& fit, const NetworkDataset& data);

/// The slice of a fit-v1 document the downstream commands consume.
struct LoadedFit {
    std::string method;
    Direction direction = Direction::Higher;
    std::vector<TreatmentId> treatments;  ///< basic order then reference last
    FitResult fit;                        ///< params only; Wald machinery absent
    std::vector<LeagueEntry> league;
};

LoadedFit read_fit_json(const std::filesystem::path& path);
LoadedFit parse_fit_json(const nlohmann::ordered_json& doc);

// rank-v1 / egger-v1 / funnel-v1 / sim-v1 ------------------------------------

nlohmann::ordered_json rank_table_json(const RankTable& table);
nlohmann::ordered_json egger_json(const EggerResult& egger);
nlohmann::ordered_json sim_metrics_json(const SimMetrics& metrics, const SimConfig& cfg);

std::string funnel_csv(const FunnelData& funnel);
std::string sim_metrics_csv(const SimMetrics& metrics);
std::string replicates_csv(const BootstrapSummary& boot);

/// Shortest-roundtrip decimal rendering shared by every CSV writer.
std::string format_number(double v);

void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace nmaipw
