#include "refcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>

#include "refcal/error.hpp"
#include "refcal/kernels.hpp"

namespace refcal {

namespace {

/// Bin index in [1, bins] for the intervals ((i-1)/M, i/M]; an exact zero
/// confidence goes to bin 1. The adjustment loops pin the result to the
/// double-precision interval edges rather than trusting the multiply.
int bin_index(double confidence, int bins) {
    int idx = static_cast<int>(std::ceil(confidence * bins));
    idx = std::clamp(idx, 1, bins);
    while (idx > 1 && confidence <= static_cast<double>(idx - 1) / bins) --idx;
    while (idx < bins && confidence > static_cast<double>(idx) / bins) ++idx;
    return idx;
}

void require_nonempty(const ProbabilityBatch& batch) {
    if (batch.probs.rows() == 0)
        throw Error(ErrorCode::empty_batch, "metric requires at least one sample");
}

struct Cell {
    std::size_t count = 0;
    std::size_t hits = 0;
    double confidence_sum = 0.0;
};

}  // namespace

ProbabilityBatch make_probability_batch(Matrix probs, std::vector<int> labels) {
    if (probs.cols() < 2)
        throw Error(ErrorCode::shape_mismatch, "probability batch needs K >= 2 classes");
    if (labels.size() != probs.rows())
        throw Error(ErrorCode::shape_mismatch, "label count does not match row count");
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        double sum = 0.0;
        for (double v : probs.row(r)) {
            if (v < 0.0)
                throw Error(ErrorCode::row_not_stochastic,
                            "row " + std::to_string(r) + " has a negative entry");
            sum += v;
        }
        if (std::fabs(sum - 1.0) > 1e-6)
            throw Error(ErrorCode::row_not_stochastic,
                        "row " + std::to_string(r) + " sums to " + std::to_string(sum));
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= static_cast<int>(probs.cols()))
            throw Error(ErrorCode::label_out_of_range,
                        "label " + std::to_string(labels[i]) + " at sample " + std::to_string(i));
    }
    return ProbabilityBatch{std::move(probs), std::move(labels)};
}

std::vector<int> predicted_classes(const ProbabilityBatch& batch) {
    std::vector<int> out(batch.probs.rows());
    for (std::size_t r = 0; r < batch.probs.rows(); ++r) {
        auto row = batch.probs.row(r);
        int best = 0;
        for (std::size_t c = 1; c < row.size(); ++c)
            if (row[c] > row[best]) best = static_cast<int>(c);
        out[r] = best;
    }
    return out;
}

std::vector<double> top_confidences(const ProbabilityBatch& batch) {
    std::vector<double> out(batch.probs.rows());
    for (std::size_t r = 0; r < batch.probs.rows(); ++r) {
        auto row = batch.probs.row(r);
        out[r] = *std::max_element(row.begin(), row.end());
    }
    return out;
}

double top1_accuracy(const ProbabilityBatch& batch) {
    require_nonempty(batch);
    auto preds = predicted_classes(batch);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == batch.labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

BinTable reliability_table(const ProbabilityBatch& batch, int bins) {
    require_nonempty(batch);
    if (bins < 1) throw Error(ErrorCode::config_invalid, "bin count must be >= 1");
    auto preds = predicted_classes(batch);
    auto confs = top_confidences(batch);
    std::vector<Cell> cells(bins);
    for (std::size_t i = 0; i < confs.size(); ++i) {
        Cell& cell = cells[bin_index(confs[i], bins) - 1];
        ++cell.count;
        if (preds[i] == batch.labels[i]) ++cell.hits;
        cell.confidence_sum += confs[i];
    }
    BinTable table;
    table.total = confs.size();
    table.bins.resize(bins);
    for (int b = 0; b < bins; ++b) {
        BinRecord& rec = table.bins[b];
        rec.lower = static_cast<double>(b) / bins;
        rec.upper = static_cast<double>(b + 1) / bins;
        rec.count = cells[b].count;
        if (cells[b].count > 0) {
            rec.accuracy =
                static_cast<double>(cells[b].hits) / static_cast<double>(cells[b].count);
            rec.mean_confidence = cells[b].confidence_sum / static_cast<double>(cells[b].count);
        }
    }
    return table;
}

double ece_from_table(const BinTable& table) {
    double total = 0.0;
    for (const BinRecord& rec : table.bins) {
        if (rec.count == 0) continue;
        total += (static_cast<double>(rec.count) / static_cast<double>(table.total)) *
                 std::fabs(rec.accuracy - rec.mean_confidence);
    }
    return total;
}

double ece(const ProbabilityBatch& batch, int bins) {
    return ece_from_table(reliability_table(batch, bins));
}

double sce(const ProbabilityBatch& batch, int bins) {
    require_nonempty(batch);
    if (bins < 1) throw Error(ErrorCode::config_invalid, "bin count must be >= 1");
    const std::size_t n = batch.probs.rows();
    const std::size_t k = batch.probs.cols();
    std::vector<Cell> cells(k * bins);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            double p = batch.probs(i, j);
            Cell& cell = cells[j * bins + (bin_index(p, bins) - 1)];
            ++cell.count;
            if (batch.labels[i] == static_cast<int>(j)) ++cell.hits;
            cell.confidence_sum += p;
        }
    }
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        for (int b = 0; b < bins; ++b) {
            const Cell& cell = cells[j * bins + b];
            if (cell.count == 0) continue;
            double acc = static_cast<double>(cell.hits) / static_cast<double>(cell.count);
            double conf = cell.confidence_sum / static_cast<double>(cell.count);
            total += (static_cast<double>(cell.count) / static_cast<double>(n)) *
                     std::fabs(acc - conf);
        }
    }
    return total / static_cast<double>(k);
}

double ace(const ProbabilityBatch& batch, int ranges) {
    require_nonempty(batch);
    if (ranges < 1) throw Error(ErrorCode::config_invalid, "range count must be >= 1");
    const std::size_t n = batch.probs.rows();
    const std::size_t k = batch.probs.cols();
    if (n < static_cast<std::size_t>(ranges))
        throw Error(ErrorCode::too_few_samples,
                    "need at least one sample per adaptive range");
    const std::size_t base = n / static_cast<std::size_t>(ranges);
    double total = 0.0;
    std::vector<std::size_t> order(n);
    for (std::size_t j = 0; j < k; ++j) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            double pa = batch.probs(a, j);
            double pb = batch.probs(b, j);
            if (pa != pb) return pa < pb;
            return a < b;  // index tie-break keeps the order reproducible
        });
        std::size_t cursor = 0;
        for (int r = 0; r < ranges; ++r) {
            std::size_t take = r == ranges - 1 ? n - cursor : base;
            std::size_t hits = 0;
            double conf_sum = 0.0;
            for (std::size_t t = 0; t < take; ++t) {
                std::size_t idx = order[cursor + t];
                if (batch.labels[idx] == static_cast<int>(j)) ++hits;
                conf_sum += batch.probs(idx, j);
            }
            cursor += take;
            double acc = static_cast<double>(hits) / static_cast<double>(take);
            double conf = conf_sum / static_cast<double>(take);
            total += std::fabs(acc - conf);
        }
    }
    return total / (static_cast<double>(k) * static_cast<double>(ranges));
}

double smece(const ProbabilityBatch& batch, double bandwidth) {
    require_nonempty(batch);
    if (bandwidth <= 0.0)
        throw Error(ErrorCode::non_positive_bandwidth, "bandwidth must be positive");
    auto confs = top_confidences(batch);
    auto preds = predicted_classes(batch);
    std::vector<std::uint8_t> correct(confs.size());
    for (std::size_t i = 0; i < confs.size(); ++i)
        correct[i] = preds[i] == batch.labels[i] ? 1 : 0;
    auto soft = kernels::smooth_accuracy(confs, correct, bandwidth);
    double total = 0.0;
    for (std::size_t i = 0; i < confs.size(); ++i) total += std::fabs(soft[i] - confs[i]);
    return total / static_cast<double>(confs.size());
}

double rank_auc(std::span<const double> positive_scores, std::span<const double> negative_scores) {
    std::vector<std::pair<double, int>> all;  // (score, is_positive)
    all.reserve(positive_scores.size() + negative_scores.size());
    for (double s : positive_scores) all.emplace_back(s, 1);
    for (double s : negative_scores) all.emplace_back(s, 0);
    std::sort(all.begin(), all.end());
    double u = 0.0;
    double negatives_below = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        std::size_t pos_at = 0, neg_at = 0;
        while (j < all.size() && all[j].first == all[i].first) {
            if (all[j].second) ++pos_at;
            else ++neg_at;
            ++j;
        }
        u += static_cast<double>(pos_at) *
             (negatives_below + 0.5 * static_cast<double>(neg_at));
        negatives_below += static_cast<double>(neg_at);
        i = j;
    }
    return u / (static_cast<double>(positive_scores.size()) *
                static_cast<double>(negative_scores.size()));
}

double auc_refinement(const ProbabilityBatch& batch) {
    require_nonempty(batch);
    auto preds = predicted_classes(batch);
    auto confs = top_confidences(batch);
    std::vector<double> correct_scores, incorrect_scores;
    for (std::size_t i = 0; i < confs.size(); ++i) {
        if (preds[i] == batch.labels[i])
            correct_scores.push_back(confs[i]);
        else
            incorrect_scores.push_back(confs[i]);
    }
    if (correct_scores.empty() || incorrect_scores.empty())
        throw Error(ErrorCode::degenerate_split,
                    "refinement score needs both correct and incorrect predictions");
    return rank_auc(correct_scores, incorrect_scores);
}

namespace {

/// Step-wise precision-recall area with positives scored descending; tied
/// scores are processed as one group.
double pr_auc(std::span<const double> positive_scores, std::span<const double> negative_scores) {
    std::vector<std::pair<double, int>> all;
    all.reserve(positive_scores.size() + negative_scores.size());
    for (double s : positive_scores) all.emplace_back(s, 1);
    for (double s : negative_scores) all.emplace_back(s, 0);
    std::sort(all.begin(), all.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    const double total_pos = static_cast<double>(positive_scores.size());
    double tp = 0.0, fp = 0.0;
    double prev_recall = 0.0;
    double area = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].first == all[i].first) {
            if (all[j].second) tp += 1.0;
            else fp += 1.0;
            ++j;
        }
        double recall = tp / total_pos;
        double precision = tp + fp > 0.0 ? tp / (tp + fp) : 1.0;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return area;
}

}  // namespace

OodReport ood_metrics(std::span<const double> id_scores, std::span<const double> ood_scores) {
    if (id_scores.empty() || ood_scores.empty())
        throw Error(ErrorCode::empty_scores, "both score lists must be non-empty");
    OodReport report;
    report.auroc = rank_auc(id_scores, ood_scores);

    // Threshold sweep over distinct score values, descending; a sample counts
    // as predicted in-distribution when score >= threshold.
    std::vector<double> id_sorted(id_scores.begin(), id_scores.end());
    std::vector<double> ood_sorted(ood_scores.begin(), ood_scores.end());
    std::sort(id_sorted.begin(), id_sorted.end(), std::greater<>());
    std::sort(ood_sorted.begin(), ood_sorted.end(), std::greater<>());
    std::vector<double> thresholds;
    thresholds.reserve(id_sorted.size() + ood_sorted.size());
    thresholds.insert(thresholds.end(), id_sorted.begin(), id_sorted.end());
    thresholds.insert(thresholds.end(), ood_sorted.begin(), ood_sorted.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    const double n_id = static_cast<double>(id_sorted.size());
    const double n_ood = static_cast<double>(ood_sorted.size());
    std::size_t id_cursor = 0, ood_cursor = 0;
    double best_detection = 0.5;  // threshold above every score: TPR 0, FPR 0
    double fpr_at_tpr95 = 1.0;
    bool tpr95_found = false;
    for (double t : thresholds) {
        while (id_cursor < id_sorted.size() && id_sorted[id_cursor] >= t) ++id_cursor;
        while (ood_cursor < ood_sorted.size() && ood_sorted[ood_cursor] >= t) ++ood_cursor;
        double tpr = static_cast<double>(id_cursor) / n_id;
        double fpr = static_cast<double>(ood_cursor) / n_ood;
        best_detection = std::min(best_detection, 0.5 * (1.0 - tpr) + 0.5 * fpr);
        if (!tpr95_found && tpr >= 0.95) {
            fpr_at_tpr95 = fpr;
            tpr95_found = true;
        }
    }
    report.fpr_at_tpr95 = fpr_at_tpr95;
    report.detection_error = best_detection;
    report.aupr_in = pr_auc(id_scores, ood_scores);
    std::vector<double> id_neg(id_scores.size()), ood_neg(ood_scores.size());
    for (std::size_t i = 0; i < id_scores.size(); ++i) id_neg[i] = -id_scores[i];
    for (std::size_t i = 0; i < ood_scores.size(); ++i) ood_neg[i] = -ood_scores[i];
    report.aupr_out = pr_auc(ood_neg, id_neg);
    return report;
}

}  // namespace refcal
