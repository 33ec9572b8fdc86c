#include "nmaipw/ranking.hpp"

#include "nmaipw/errors.hpp"
#include "nmaipw/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace nmaipw {

namespace {

std::vector<TreatmentId> model_treatments(const FitResult& fit) {
    std::vector<TreatmentId> all = fit.params.basic;
    all.push_back(fit.params.reference);
    return all;
}

}  // namespace

std::vector<LeagueEntry> league_table(const FitResult& fit) {
    const auto all = model_treatments(fit);
    std::vector<LeagueEntry> league;
    for (std::size_t i = 0; i < all.size(); ++i) {
        for (std::size_t j = i + 1; j < all.size(); ++j) {
            LeagueEntry e;
            e.treat_x = all[i];
            e.treat_y = all[j];
            e.estimate = fit.params.contrast(e.treat_x, e.treat_y);
            if (fit.wald_available) {
                const auto [est, se] = derived_contrast(fit, e.treat_x, e.treat_y);
                e.se = se;
                e.ci = ParamInterval{est - kZ975 * se, est + kZ975 * se};
            }
            league.push_back(std::move(e));
        }
    }
    return league;
}

std::vector<LeagueEntry> league_table(const IpwFit& fit) {
    const auto all = model_treatments(fit.fit);
    std::vector<LeagueEntry> league;
    const bool have_boot = fit.boot.completed >= 2;
    for (std::size_t i = 0; i < all.size(); ++i) {
        for (std::size_t j = i + 1; j < all.size(); ++j) {
            LeagueEntry e;
            e.treat_x = all[i];
            e.treat_y = all[j];
            e.estimate = fit.fit.params.contrast(e.treat_x, e.treat_y);
            if (have_boot) {
                e.se = bootstrap_contrast_sd(fit.boot, fit.fit, e.treat_x, e.treat_y);
                e.ci = bootstrap_contrast_ci(fit.boot, fit.fit, e.treat_x, e.treat_y);
            }
            league.push_back(std::move(e));
        }
    }
    return league;
}

RankTable p_score_from_league(const std::vector<TreatmentId>& treatments,
                              const std::vector<LeagueEntry>& league, Direction direction,
                              const std::string& method) {
    const int t = static_cast<int>(treatments.size());
    if (t < 2) throw ValidationError("ranking needs at least two treatments");
    std::map<TreatmentId, int> index;
    for (int i = 0; i < t; ++i) index[treatments[static_cast<std::size_t>(i)]] = i;

    RankTable table;
    table.method = method;
    table.direction = direction;
    table.treatments = treatments;
    table.pairwise = Eigen::MatrixXd::Zero(t, t);

    Eigen::MatrixXd seen = Eigen::MatrixXd::Zero(t, t);
    for (const auto& e : league) {
        const auto ix = index.find(e.treat_x);
        const auto iy = index.find(e.treat_y);
        if (ix == index.end() || iy == index.end()) {
            throw UnknownTreatment("league entry references treatment outside the ranking set");
        }
        if (!e.se) {
            throw MissingSE("no standard error for contrast " + e.treat_x + " vs " + e.treat_y);
        }
        if (!(*e.se > 0.0)) {
            throw MissingSE("degenerate standard error for contrast " + e.treat_x + " vs " +
                            e.treat_y);
        }
        const double z = e.estimate / *e.se;
        const double p = direction == Direction::Higher ? normal_cdf(z) : 1.0 - normal_cdf(z);
        table.pairwise(ix->second, iy->second) = p;
        table.pairwise(iy->second, ix->second) = 1.0 - p;
        seen(ix->second, iy->second) = seen(iy->second, ix->second) = 1.0;
    }
    for (int i = 0; i < t; ++i) {
        for (int j = i + 1; j < t; ++j) {
            if (seen(i, j) == 0.0) {
                throw MissingSE("league table misses the contrast " +
                                treatments[static_cast<std::size_t>(i)] + " vs " +
                                treatments[static_cast<std::size_t>(j)]);
            }
        }
    }

    table.pbar.resize(static_cast<std::size_t>(t));
    for (int i = 0; i < t; ++i) {
        double acc = 0.0;
        for (int j = 0; j < t; ++j) {
            if (j != i) acc += table.pairwise(i, j);
        }
        table.pbar[static_cast<std::size_t>(i)] = acc / static_cast<double>(t - 1);
    }

    table.order.resize(static_cast<std::size_t>(t));
    for (int i = 0; i < t; ++i) table.order[static_cast<std::size_t>(i)] = i;
    std::sort(table.order.begin(), table.order.end(), [&](int a, int b) {
        const double pa = table.pbar[static_cast<std::size_t>(a)];
        const double pb = table.pbar[static_cast<std::size_t>(b)];
        if (pa != pb) return pa > pb;
        return table.treatments[static_cast<std::size_t>(a)] <
               table.treatments[static_cast<std::size_t>(b)];
    });
    return table;
}

RankTable p_score(const FitResult& fit, Direction direction) {
    return p_score_from_league(model_treatments(fit), league_table(fit), direction, "mre");
}

RankTable p_score(const IpwFit& fit, Direction direction) {
    return p_score_from_league(model_treatments(fit.fit), league_table(fit), direction, "ipw");
}

}  // namespace nmaipw
