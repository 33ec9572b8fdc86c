#include "nmaipw/diagnostics.hpp"

#include "nmaipw/errors.hpp"
#include "nmaipw/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace nmaipw {

FunnelData funnel_data(const NetworkDataset& data, const FitResult& fit) {
    FunnelData funnel;
    for (const auto& study : data.studies) {
        if (study.published) {
            for (const auto& oc : study.outcomes) {
                FunnelPoint pt;
                pt.study_id = study.study_id;
                pt.design_k = study.design_k;
                pt.treat_x = oc.treat_x;
                pt.treat_y = oc.treat_y;
                pt.centered = oc.y - fit.params.contrast(oc.treat_x, oc.treat_y);
                pt.precision = 1.0 / oc.se;
                funnel.points.push_back(std::move(pt));
            }
        } else {
            FunnelOverlay line;
            line.study_id = study.study_id;
            line.design_k = study.design_k;
            line.height = std::sqrt(static_cast<double>(study.n_planned));
            funnel.overlays.push_back(std::move(line));
        }
    }
    return funnel;
}

EggerResult eggers_test(const NetworkDataset& data, const FitResult& fit) {
    const FunnelData funnel = funnel_data(data, fit);
    const int m = static_cast<int>(funnel.points.size());
    if (m < 3) {
        throw TooFewStudies("asymmetry regression needs at least 3 published comparisons");
    }

    // z = a + b * precision, z standardized centered effect, weights 1/se^2.
    double sw = 0.0, swx = 0.0, swxx = 0.0, swz = 0.0, swxz = 0.0;
    for (const auto& pt : funnel.points) {
        const double x = pt.precision;
        const double z = pt.centered * pt.precision;
        const double w = pt.precision * pt.precision;
        sw += w;
        swx += w * x;
        swxx += w * x * x;
        swz += w * z;
        swxz += w * x * z;
    }
    const double det = sw * swxx - swx * swx;
    if (!(det > 0.0)) {
        throw NumericalError("degenerate precision design in the asymmetry regression");
    }
    const double intercept = (swxx * swz - swx * swxz) / det;
    const double slope = (sw * swxz - swx * swz) / det;

    double rss = 0.0;
    for (const auto& pt : funnel.points) {
        const double x = pt.precision;
        const double z = pt.centered * pt.precision;
        const double w = pt.precision * pt.precision;
        const double r = z - intercept - slope * x;
        rss += w * r * r;
    }
    const int df = m - 2;
    const double sigma2 = rss / static_cast<double>(df);
    const double var_intercept = sigma2 * swxx / det;

    EggerResult result;
    result.intercept = intercept;
    result.se = std::sqrt(var_intercept);
    result.t = result.se > 0.0 ? intercept / result.se
                               : std::numeric_limits<double>::infinity();
    result.df = df;
    result.n_comparisons = m;
    result.p = 2.0 * (1.0 - student_t_cdf(std::fabs(result.t), df));
    return result;
}

// ---------------------------------------------------------------------------
// SVG rendering
// ---------------------------------------------------------------------------

namespace {

const char* design_color(int design_k) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b"};
    return palette[(design_k - 1) % 6];
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

}  // namespace

std::string funnel_svg(const FunnelData& funnel) {
    constexpr double kWidth = 720.0, kHeight = 480.0, kMargin = 50.0;

    double x_min = 0.0, x_max = 0.0, y_max = 1.0;
    for (const auto& pt : funnel.points) {
        x_min = std::min(x_min, pt.centered);
        x_max = std::max(x_max, pt.centered);
        y_max = std::max(y_max, pt.precision);
    }
    for (const auto& line : funnel.overlays) y_max = std::max(y_max, line.height);
    const double pad = 0.05 * std::max(x_max - x_min, 1e-6);
    x_min -= pad;
    x_max += pad;
    y_max *= 1.05;

    auto sx = [&](double x) {
        return kMargin + (x - x_min) / (x_max - x_min) * (kWidth - 2.0 * kMargin);
    };
    auto sy = [&](double y) { return kHeight - kMargin - y / y_max * (kHeight - 2.0 * kMargin); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    // axes
    svg << "<line x1=\"" << fmt(kMargin) << "\" y1=\"" << fmt(kHeight - kMargin) << "\" x2=\""
        << fmt(kWidth - kMargin) << "\" y2=\"" << fmt(kHeight - kMargin)
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << fmt(kMargin) << "\" y1=\"" << fmt(kMargin) << "\" x2=\""
        << fmt(kMargin) << "\" y2=\"" << fmt(kHeight - kMargin) << "\" stroke=\"black\"/>\n";
    // zero reference
    if (x_min < 0.0 && x_max > 0.0) {
        svg << "<line x1=\"" << fmt(sx(0.0)) << "\" y1=\"" << fmt(kMargin) << "\" x2=\""
            << fmt(sx(0.0)) << "\" y2=\"" << fmt(kHeight - kMargin)
            << "\" stroke=\"#888888\" stroke-dasharray=\"4 3\"/>\n";
    }
    svg << "<text x=\"" << fmt(kWidth / 2.0) << "\" y=\"" << fmt(kHeight - 12.0)
        << "\" text-anchor=\"middle\" font-size=\"13\">centered effect</text>\n";
    svg << "<text x=\"14\" y=\"" << fmt(kHeight / 2.0)
        << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 14 "
        << fmt(kHeight / 2.0) << ")\">precision</text>\n";

    for (const auto& line : funnel.overlays) {
        svg << "<line x1=\"" << fmt(kMargin) << "\" y1=\"" << fmt(sy(line.height)) << "\" x2=\""
            << fmt(kWidth - kMargin) << "\" y2=\"" << fmt(sy(line.height)) << "\" stroke=\""
            << design_color(line.design_k) << "\" stroke-dasharray=\"6 4\" opacity=\"0.7\"/>\n";
    }
    for (const auto& pt : funnel.points) {
        svg << "<circle cx=\"" << fmt(sx(pt.centered)) << "\" cy=\"" << fmt(sy(pt.precision))
            << "\" r=\"3.5\" fill=\"" << design_color(pt.design_k) << "\" opacity=\"0.85\"/>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace nmaipw
