#include "uad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "uad/errors.hpp"

namespace uad {

RocCurve roc_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    if (scores.size() != labels.size()) {
        throw ValidationError("scores and labels must have equal length");
    }
    if (scores.empty()) throw ValidationError("ROC of an empty sample is undefined");
    std::int64_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw DataError("non-finite score in ROC input");
        if (labels[i]) {
            ++pos;
        } else {
            ++neg;
        }
    }
    if (pos == 0 || neg == 0) {
        throw DataError("ROC is undefined when only one class is present");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve curve;
    curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::int64_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double s = scores[order[i]];
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == s) {
            if (labels[order[j]]) {
                ++tp;
            } else {
                ++fp;
            }
            ++j;
        }
        curve.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                                static_cast<double>(tp) / static_cast<double>(pos), s});
        i = j;
    }

    double auc = 0.0;
    for (std::size_t k = 1; k < curve.points.size(); ++k) {
        const RocPoint& a = curve.points[k - 1];
        const RocPoint& b = curve.points[k];
        auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
    }
    curve.auc = auc;
    return curve;
}

double choose_threshold(const RocCurve& c) {
    if (c.points.empty()) throw ValidationError("cannot choose a threshold on an empty curve");
    const RocPoint* best = nullptr;
    double best_j = -std::numeric_limits<double>::infinity();
    for (const RocPoint& p : c.points) {
        const double j = p.tpr - p.fpr;
        if (!best || j > best_j || (j == best_j && p.fpr < best->fpr) ||
            (j == best_j && p.fpr == best->fpr && p.threshold > best->threshold)) {
            best = &p;
            best_j = j;
        }
    }
    return best->threshold;
}

Counts confusion_counts(const std::vector<double>& scores,
                        const std::vector<std::uint8_t>& labels, double threshold) {
    if (scores.size() != labels.size()) {
        throw ValidationError("scores and labels must have equal length");
    }
    Counts c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        if (labels[i]) {
            pred ? ++c.tp : ++c.fn;
        } else {
            pred ? ++c.fp : ++c.tn;
        }
    }
    return c;
}

MetricsReport metrics_from_counts(const Counts& c) {
    MetricsReport r;
    r.counts = c;
    const auto total = static_cast<double>(c.tp + c.fp + c.tn + c.fn);
    r.accuracy = total > 0 ? static_cast<double>(c.tp + c.tn) / total : 0.0;
    r.precision = (c.tp + c.fp) > 0 ? static_cast<double>(c.tp) /
                                          static_cast<double>(c.tp + c.fp)
                                    : 0.0;
    r.sensitivity = (c.tp + c.fn) > 0 ? static_cast<double>(c.tp) /
                                            static_cast<double>(c.tp + c.fn)
                                      : 0.0;
    r.specificity = (c.tn + c.fp) > 0 ? static_cast<double>(c.tn) /
                                            static_cast<double>(c.tn + c.fp)
                                      : 0.0;
    return r;
}

namespace {

bool label_in(const std::vector<std::int32_t>& ids, std::int32_t v) {
    return std::find(ids.begin(), ids.end(), v) != ids.end();
}

void append_case_voxels(const std::vector<Grid2D>& maps, const SegmentationMask& gt,
                        const std::vector<std::int32_t>& ids, std::vector<double>& scores,
                        std::vector<std::uint8_t>& labels) {
    if (static_cast<int>(maps.size()) != gt.shape[2]) {
        throw ValidationError("heatmap stack depth does not match the mask depth");
    }
    for (int z = 0; z < gt.shape[2]; ++z) {
        const Grid2D& g = maps[z];
        if (g.w != gt.shape[0] || g.h != gt.shape[1]) {
            throw ValidationError("heatmap in-plane shape does not match the mask");
        }
        for (int y = 0; y < gt.shape[1]; ++y) {
            for (int x = 0; x < gt.shape[0]; ++x) {
                scores.push_back(g.at(x, y));
                labels.push_back(label_in(ids, gt.at(x, y, z)) ? 1 : 0);
            }
        }
    }
}

/// Scores one pooled stratum: its own ROC, Youden threshold, and counts.
MetricsReport score_pool(const std::vector<double>& scores,
                         const std::vector<std::uint8_t>& labels,
                         std::optional<double> fixed_threshold) {
    MetricsReport r;
    const bool has_pos = std::find(labels.begin(), labels.end(), std::uint8_t{1}) != labels.end();
    const bool has_neg = std::find(labels.begin(), labels.end(), std::uint8_t{0}) != labels.end();
    if (!has_pos) {
        r.skipped = true;
        r.note = "skipped: no positive voxels";
        return r;
    }
    if (!has_neg) {
        r.skipped = true;
        r.note = "skipped: no negative voxels";
        return r;
    }
    const RocCurve curve = roc_auc(scores, labels);
    const double thr = fixed_threshold ? *fixed_threshold : choose_threshold(curve);
    r = metrics_from_counts(confusion_counts(scores, labels, thr));
    r.auc = curve.auc;
    r.threshold = thr;
    return r;
}

MetricsReport mean_of_reports(const std::vector<const MetricsReport*>& rows,
                              const std::vector<double>& weights) {
    MetricsReport out;
    double wsum = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) wsum += weights[i];
    if (rows.empty() || wsum <= 0.0) {
        out.skipped = true;
        out.note = "skipped: no scored strata";
        return out;
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const MetricsReport& r = *rows[i];
        const double w = weights[i] / wsum;
        out.accuracy += w * r.accuracy;
        out.precision += w * r.precision;
        out.sensitivity += w * r.sensitivity;
        out.specificity += w * r.specificity;
        out.auc += w * r.auc;
        out.threshold += w * r.threshold;
        out.counts.tp += r.counts.tp;
        out.counts.fp += r.counts.fp;
        out.counts.tn += r.counts.tn;
        out.counts.fn += r.counts.fn;
        out.n_cases += r.n_cases;
    }
    return out;
}

}  // namespace

void EvaluateOptions::validate() const {
    if (pathology_ids.empty()) throw ValidationError("evaluate needs at least one pathology id");
    if (reference_annotator.empty()) {
        throw ValidationError("evaluate needs a reference annotator");
    }
}

MetricsReport pixel_metrics(const std::vector<Grid2D>& maps, const SegmentationMask& gt,
                            const std::vector<std::int32_t>& pathology_ids,
                            std::optional<double> threshold) {
    if (pathology_ids.empty()) throw ValidationError("pixel_metrics needs pathology ids");
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    scores.reserve(gt.size());
    labels.reserve(gt.size());
    append_case_voxels(maps, gt, pathology_ids, scores, labels);
    MetricsReport r = score_pool(scores, labels, threshold);
    r.n_cases = 1;
    return r;
}

EvaluationResult build_report(const std::vector<EvalCase>& cases, const EvaluateOptions& opt) {
    opt.validate();
    if (cases.empty()) throw DataError("evaluate received no cases");

    auto reference_mask = [&](const EvalCase& c) -> const SegmentationMask& {
        auto it = c.annotations.find(opt.reference_annotator);
        if (it == c.annotations.end()) {
            throw DataError("case '" + c.case_id + "' lacks the reference annotator '" +
                            opt.reference_annotator + "'");
        }
        return it->second;
    };

    EvaluationResult result;

    // Pathology strata: keyed by label name under the reference annotator,
    // pooling the cases that present the label.
    std::map<std::string, std::vector<std::int32_t>> pathology_names;  // name -> ids
    for (const EvalCase& c : cases) {
        const SegmentationMask& m = reference_mask(c);
        for (std::int32_t id : opt.pathology_ids) {
            auto it = m.label_names.find(id);
            if (it == m.label_names.end()) continue;
            auto& ids = pathology_names[it->second];
            if (!label_in(ids, id)) ids.push_back(id);
        }
    }
    for (const auto& [name, ids] : pathology_names) {
        std::vector<double> scores;
        std::vector<std::uint8_t> labels;
        std::int64_t n_cases = 0;
        for (const EvalCase& c : cases) {
            const SegmentationMask& m = reference_mask(c);
            bool present = false;
            for (std::int32_t id : ids) present = present || m.count_label(id) > 0;
            if (!present) continue;
            append_case_voxels(c.maps, m, ids, scores, labels);
            ++n_cases;
        }
        MetricsReport r = n_cases
                              ? score_pool(scores, labels, std::nullopt)
                              : MetricsReport{.skipped = true, .note = "skipped: no cases"};
        r.stratum_kind = "pathology";
        r.stratum = name;
        r.n_cases = n_cases;
        if (!r.skipped) result.curves["pathology/" + name] = roc_auc(scores, labels);
        result.pathology.push_back(std::move(r));
    }

    // Position strata: version/flexion combinations present in the cases.
    std::map<std::string, std::vector<const EvalCase*>> positions;
    for (const EvalCase& c : cases) {
        const std::string key = std::string(to_string(c.metadata.uterine_version)) + "/" +
                                to_string(c.metadata.uterine_flexion);
        positions[key].push_back(&c);
    }
    for (const auto& [key, group] : positions) {
        std::vector<double> scores;
        std::vector<std::uint8_t> labels;
        for (const EvalCase* c : group) {
            append_case_voxels(c->maps, reference_mask(*c), opt.pathology_ids, scores, labels);
        }
        MetricsReport r = score_pool(scores, labels, std::nullopt);
        r.stratum_kind = "position";
        r.stratum = key;
        r.n_cases = static_cast<std::int64_t>(group.size());
        if (!r.skipped) result.curves["position/" + key] = roc_auc(scores, labels);
        result.position.push_back(std::move(r));
    }

    // Annotator strata: the same maps re-scored against each annotator.
    std::set<std::string> annotators;
    for (const EvalCase& c : cases) {
        for (const auto& [name, mask] : c.annotations) annotators.insert(name);
    }
    for (const std::string& name : annotators) {
        std::vector<double> scores;
        std::vector<std::uint8_t> labels;
        std::int64_t n_cases = 0;
        for (const EvalCase& c : cases) {
            auto it = c.annotations.find(name);
            if (it == c.annotations.end()) continue;
            append_case_voxels(c.maps, it->second, opt.pathology_ids, scores, labels);
            ++n_cases;
        }
        MetricsReport r = score_pool(scores, labels, std::nullopt);
        r.stratum_kind = "annotator";
        r.stratum = name;
        r.n_cases = n_cases;
        if (!r.skipped) result.curves["annotator/" + name] = roc_auc(scores, labels);
        result.annotator.push_back(std::move(r));
    }
    if (!opt.experienced_annotators.empty()) {
        std::vector<const MetricsReport*> rows;
        std::vector<double> weights;
        for (const MetricsReport& r : result.annotator) {
            if (r.skipped) continue;
            if (std::find(opt.experienced_annotators.begin(), opt.experienced_annotators.end(),
                          r.stratum) == opt.experienced_annotators.end()) {
                continue;
            }
            rows.push_back(&r);
            weights.push_back(1.0);
        }
        MetricsReport mean = mean_of_reports(rows, weights);
        mean.stratum_kind = "annotator";
        mean.stratum = "experienced_mean";
        mean.n_cases = rows.empty() ? 0 : rows.front()->n_cases;
        result.annotator.push_back(std::move(mean));
    }

    // Overall rows: unweighted and case-count-weighted means over pathologies.
    std::vector<const MetricsReport*> rows;
    std::vector<double> unit, by_cases;
    for (const MetricsReport& r : result.pathology) {
        if (r.skipped) continue;
        rows.push_back(&r);
        unit.push_back(1.0);
        by_cases.push_back(static_cast<double>(r.n_cases));
    }
    result.overall = mean_of_reports(rows, unit);
    result.overall.stratum_kind = "overall";
    result.overall.stratum = "overall";
    result.overall_weighted = mean_of_reports(rows, by_cases);
    result.overall_weighted.stratum_kind = "overall";
    result.overall_weighted.stratum = "overall_weighted";
    return result;
}

double lesion_volume(const SegmentationMask& m, std::int32_t label, Spacing spacing) {
    for (double s : spacing) {
        if (!(s > 0.0)) throw ValidationError("spacing must be positive");
    }
    const std::int64_t count = m.count_label(label);
    return static_cast<double>(count) * spacing[0] * spacing[1] * spacing[2] / 1000.0;
}

}  // namespace uad
