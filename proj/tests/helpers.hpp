#pragma once

#include "nmaipw/network_data.hpp"

#include <string>
#include <utility>
#include <vector>

namespace test_helpers {

using namespace nmaipw;

inline DesignType make_design(int index, std::vector<TreatmentId> treatments) {
    DesignType d;
    d.index = index;
    d.treatments = std::move(treatments);
    const TreatmentId comparator = d.treatments.back();
    for (std::size_t i = 0; i + 1 < d.treatments.size(); ++i) {
        d.comparisons.emplace_back(d.treatments[i], comparator);
    }
    return d;
}

inline StudyRecord two_arm(const std::string& id, int design_k, const TreatmentId& x,
                           const TreatmentId& y, double effect, double se, long n = 100) {
    StudyRecord s;
    s.study_id = id;
    s.design_k = design_k;
    s.published = true;
    s.outcomes.push_back(ComparisonOutcome{x, y, effect, se, n});
    s.n_planned = n;
    return s;
}

inline StudyRecord three_arm(const std::string& id, int design_k, const TreatmentId& a,
                             const TreatmentId& b, const TreatmentId& c, double y_ac,
                             double se_ac, double y_bc, double se_bc, double shared_var,
                             long n = 100) {
    StudyRecord s;
    s.study_id = id;
    s.design_k = design_k;
    s.published = true;
    s.outcomes.push_back(ComparisonOutcome{a, c, y_ac, se_ac, n});
    s.outcomes.push_back(ComparisonOutcome{b, c, y_bc, se_bc, n});
    s.shared_arm_variance = shared_var;
    s.n_planned = n;
    return s;
}

inline StudyRecord registry(const std::string& id, int design_k, long n) {
    StudyRecord s;
    s.study_id = id;
    s.design_k = design_k;
    s.published = false;
    s.n_planned = n;
    return s;
}

inline NetworkDataset make_dataset(std::vector<DesignType> designs,
                                   std::vector<StudyRecord> studies) {
    NetworkDataset data;
    data.designs = std::move(designs);
    data.studies = std::move(studies);
    for (const auto& d : data.designs) {
        for (const auto& t : d.treatments) {
            bool seen = false;
            for (const auto& known : data.treatments) seen = seen || known == t;
            if (!seen) data.treatments.push_back(t);
        }
    }
    return data;
}

/// Single-design pairwise network: one {A,C} design with the given studies.
inline NetworkDataset pairwise_dataset(const std::vector<std::pair<double, double>>& y_se) {
    std::vector<StudyRecord> studies;
    int i = 0;
    for (const auto& [y, se] : y_se) {
        studies.push_back(two_arm("s" + std::to_string(++i), 1, "A", "C", y, se));
    }
    return make_dataset({make_design(1, {"A", "C"})}, std::move(studies));
}

}  // namespace test_helpers
