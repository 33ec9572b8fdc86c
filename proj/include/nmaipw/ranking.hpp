#pragma once

#include "nmaipw/ipw.hpp"
#include "nmaipw/mre_model.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace nmaipw {

/// One league-table cell: the contrast of x versus y with its uncertainty.
struct LeagueEntry {
    TreatmentId treat_x;
    TreatmentId treat_y;
    double estimate = 0.0;
    std::optional<double> se;
    std::optional<ParamInterval> ci;
};

/// All unordered pairs, Wald standard errors via the delta method.
std::vector<LeagueEntry> league_table(const FitResult& fit);
/// All unordered pairs, standard errors from replicate-level differencing.
std::vector<LeagueEntry> league_table(const IpwFit& fit);

struct RankTable {
    std::string method;  ///< "mre" | "ipw"
    Direction direction = Direction::Higher;
    std::vector<TreatmentId> treatments;  ///< model order (reference included)
    Eigen::MatrixXd pairwise;             ///< P_ij in `treatments` order; diagonal 0
    std::vector<double> pbar;             ///< aligned with `treatments`
    /// Positions into `treatments`, best first; ties broken by label.
    std::vector<int> order;
};

/// P_ij = Phi(mu_ij / sigma_ij) when larger effects are beneficial, with the
/// complement for the opposite direction; pbar averages over competitors.
RankTable p_score(const FitResult& fit, Direction direction);
RankTable p_score(const IpwFit& fit, Direction direction);

/// Shared core working off a league table; `treatments` must list every
/// treatment appearing in the entries.
RankTable p_score_from_league(const std::vector<TreatmentId>& treatments,
                              const std::vector<LeagueEntry>& league, Direction direction,
                              const std::string& method);

}  // namespace nmaipw
