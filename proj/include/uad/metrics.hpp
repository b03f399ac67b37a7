#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uad/grid.hpp"
#include "uad/volume.hpp"

namespace uad {

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points;  // from threshold +inf downward
    double auc = 0.0;
};

/// ROC sweep over all distinct scores (ties grouped into one step); AUC by
/// trapezoid, which equals the pairwise rank statistic.
RocCurve roc_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

/// Youden's J maximizer; ties broken toward higher specificity (lower FPR),
/// then toward the higher threshold.
double choose_threshold(const RocCurve& c);

struct Counts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t tn = 0;
    std::int64_t fn = 0;
};

Counts confusion_counts(const std::vector<double>& scores,
                        const std::vector<std::uint8_t>& labels, double threshold);

struct MetricsReport {
    std::string stratum_kind;  // pathology | position | annotator | overall
    std::string stratum;
    double accuracy = 0.0;
    double precision = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double auc = 0.0;
    double threshold = 0.0;
    Counts counts;
    std::int64_t n_cases = 0;
    bool skipped = false;
    std::string note;
};

/// Fills the four ratio metrics from the counts (empty denominators give 0).
MetricsReport metrics_from_counts(const Counts& c);

/// Pools every voxel of the map stack against the mask. Positives are voxels
/// whose label is in pathology_ids; the prediction is map >= threshold. When
/// no threshold is given it is chosen from this stack's own ROC.
MetricsReport pixel_metrics(const std::vector<Grid2D>& maps, const SegmentationMask& gt,
                            const std::vector<std::int32_t>& pathology_ids,
                            std::optional<double> threshold = std::nullopt);

/// One evaluated case: z-ordered heatmaps plus per-annotator ground truth.
struct EvalCase {
    std::string case_id;
    std::vector<Grid2D> maps;
    std::map<std::string, SegmentationMask> annotations;
    CaseMetadata metadata;
};

struct EvaluateOptions {
    std::vector<std::int32_t> pathology_ids;
    std::string reference_annotator = "r1";
    std::vector<std::string> experienced_annotators;  // for the mean row

    void validate() const;
};

struct EvaluationResult {
    std::vector<MetricsReport> pathology;  // one per pathology label name
    std::vector<MetricsReport> position;   // one per version/flexion combination
    std::vector<MetricsReport> annotator;  // one per annotator (+ experienced mean)
    MetricsReport overall;                 // unweighted mean over pathology strata
    MetricsReport overall_weighted;        // case-count-weighted mean
    std::map<std::string, RocCurve> curves;  // keyed "<kind>/<stratum>"
};

/// Builds every stratified report from the scored cases. Voxels are pooled
/// per stratum into a single ROC; deterministic ordering throughout.
EvaluationResult build_report(const std::vector<EvalCase>& cases, const EvaluateOptions& opt);

/// Voxel count x voxel volume, in mL; an absent label yields 0.
double lesion_volume(const SegmentationMask& m, std::int32_t label, Spacing spacing);

}  // namespace uad
