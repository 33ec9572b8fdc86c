#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nmaipw {

using TreatmentId = std::string;

/// Direction of benefit for the whole analysis: do larger or smaller
/// t-statistics drive publication / indicate the better treatment.
enum class Direction { Higher, Lower };

Direction direction_from_string(const std::string& s);
std::string to_string(Direction d);

/// One relative effect within a study: treat_x versus treat_y.
struct ComparisonOutcome {
    TreatmentId treat_x;
    TreatmentId treat_y;
    double y = 0.0;   ///< effect estimate (log-odds ratio)
    double se = 0.0;  ///< standard error of y, > 0
    long n = 0;       ///< subjects contributing to this comparison, >= 2
};

/// A design type: the set of arms a trial contains. Comparisons are the
/// arms measured against the design's own comparator arm (listed last).
struct DesignType {
    int index = 0;  ///< k, 1-based and contiguous within a dataset
    std::vector<TreatmentId> treatments;
    std::vector<std::pair<TreatmentId, TreatmentId>> comparisons;

    int arm_count() const { return static_cast<int>(treatments.size()); }
    int comparison_count() const { return static_cast<int>(comparisons.size()); }
    bool multi_arm() const { return arm_count() > 2; }
};

struct StudyRecord {
    std::string study_id;
    int design_k = 0;
    bool published = false;
    /// Present iff published; ordered exactly as the design's comparisons.
    std::vector<ComparisonOutcome> outcomes;
    /// Variance of the shared comparator arm; present iff multi-arm and published.
    std::optional<double> shared_arm_variance;
    /// Study-level sample size consumed by the selection model. Registry
    /// records carry it directly; for published studies it is the first
    /// comparison's n.
    long n_planned = 0;
};

struct NetworkDataset {
    std::vector<TreatmentId> treatments;  ///< first-appearance order
    std::vector<DesignType> designs;      ///< sorted by index, 1..K
    std::vector<StudyRecord> studies;     ///< file order

    int design_count() const { return static_cast<int>(designs.size()); }
    int published_count() const;
    int unpublished_count() const;
    int total_count() const { return static_cast<int>(studies.size()); }

    const DesignType& design_of(const StudyRecord& study) const;
    /// 0-based position of a study's design within `designs`.
    int design_ordinal(const StudyRecord& study) const { return study.design_k - 1; }
};

// ---------------------------------------------------------------------------
// Ingestion: CSV schema `studies-long-v1`, one row per (study, comparison).
// Columns: study_id, design_k, treat_x, treat_y, y, se, shared_arm_var, n,
// published. Registry-only studies have published=0 and empty y/se.
// ---------------------------------------------------------------------------

NetworkDataset load_dataset(const std::filesystem::path& path,
                            const std::string& schema = "studies-long-v1");
NetworkDataset read_dataset_csv(std::istream& in);

void save_dataset(const NetworkDataset& data, const std::filesystem::path& path);
void write_dataset_csv(const NetworkDataset& data, std::ostream& out);

/// Enforces every dataset invariant; throws ValidationError on the first hit.
void validate_dataset(const NetworkDataset& data);

// ---------------------------------------------------------------------------
// Derived quantities
// ---------------------------------------------------------------------------

/// Within-study covariance of the comparison vector. Two-arm: [se^2].
/// Multi-arm: se^2 on the diagonal, the shared-arm variance off-diagonal.
Eigen::MatrixXd assemble_covariance(const StudyRecord& study,
                                    const DesignType& design);
Eigen::MatrixXd assemble_covariance(const NetworkDataset& data,
                                    const StudyRecord& study);

/// The t-type statistic driving publication: y/se for two-arm studies, the
/// max (direction Higher) or min (Lower) across comparisons for multi-arm.
double study_t_statistic(const StudyRecord& study, Direction direction);

}  // namespace nmaipw
