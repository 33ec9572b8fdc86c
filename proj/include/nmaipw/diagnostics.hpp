#pragma once

#include "nmaipw/mre_model.hpp"
#include "nmaipw/network_data.hpp"

#include <string>
#include <vector>

namespace nmaipw {

/// One published comparison, centered against its fitted summary effect.
struct FunnelPoint {
    std::string study_id;
    int design_k = 0;
    TreatmentId treat_x;
    TreatmentId treat_y;
    double centered = 0.0;   ///< y - fitted contrast
    double precision = 0.0;  ///< 1/se
};

/// One registry record, drawn as a horizontal line at sqrt(n_planned).
struct FunnelOverlay {
    std::string study_id;
    int design_k = 0;
    double height = 0.0;
};

struct FunnelData {
    std::vector<FunnelPoint> points;
    std::vector<FunnelOverlay> overlays;
};

/// Comparison-adjusted funnel data with registry overlays.
FunnelData funnel_data(const NetworkDataset& data, const FitResult& fit);

/// Minimal static SVG rendering: points colored by design, overlay lines.
std::string funnel_svg(const FunnelData& funnel);

struct EggerResult {
    double intercept = 0.0;
    double se = 0.0;
    double t = 0.0;
    double p = 0.0;
    int df = 0;
    int n_comparisons = 0;
};

/// Regression test for funnel asymmetry: standardized centered effects on
/// precision, weighted by 1/se^2; intercept t-test on n-2 df.
EggerResult eggers_test(const NetworkDataset& data, const FitResult& fit);

}  // namespace nmaipw
