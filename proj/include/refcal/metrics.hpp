#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "refcal/matrix.hpp"

namespace refcal {

/// N rows of K-class probability vectors with ground-truth labels. Rows must
/// be non-negative and sum to 1 within 1e-6.
struct ProbabilityBatch {
    Matrix probs;             // N x K
    std::vector<int> labels;  // in [0, K)
};

ProbabilityBatch make_probability_batch(Matrix probs, std::vector<int> labels);

struct BinRecord {
    std::size_t count = 0;
    double accuracy = 0.0;         // 0 for empty bins
    double mean_confidence = 0.0;  // 0 for empty bins
    double lower = 0.0;            // bin interval (lower, upper]
    double upper = 0.0;
};

/// Reliability-diagram data: per-bin counts, accuracies, and mean top-label
/// confidences over the intervals ((i-1)/M, i/M].
struct BinTable {
    std::vector<BinRecord> bins;
    std::size_t total = 0;
};

struct OodReport {
    double fpr_at_tpr95 = 0.0;
    double detection_error = 0.0;
    double auroc = 0.0;
    double aupr_in = 0.0;
    double aupr_out = 0.0;
};

/// Predicted class per row (argmax, lowest index on ties).
std::vector<int> predicted_classes(const ProbabilityBatch& batch);

/// Top-label confidence per row.
std::vector<double> top_confidences(const ProbabilityBatch& batch);

double top1_accuracy(const ProbabilityBatch& batch);

/// Expected calibration error over M equidistant top-label confidence bins.
/// Bin membership is ((i-1)/M, i/M]; an exact 0 confidence lands in bin 1.
double ece(const ProbabilityBatch& batch, int bins);

/// Static calibration error: the binned error applied to every class's
/// probability column, averaged over classes.
double sce(const ProbabilityBatch& batch, int bins);

/// Adaptive calibration error: per class, sort that class's probability
/// column and split it into `ranges` groups of floor(N / ranges) samples (the
/// last group absorbs the remainder); average |accuracy - mean confidence|
/// over all (range, class) cells.
double ace(const ProbabilityBatch& batch, int ranges);

/// Kernel-smoothed calibration error: mean |smoothed accuracy - confidence|
/// where the smoothed accuracy uses normalized Gaussian weights of bandwidth
/// h over top-label confidences.
double smece(const ProbabilityBatch& batch, double bandwidth);

/// Refinement score: over all (correct, incorrect) prediction pairs, the
/// fraction where the correct one has the larger top-label confidence, ties
/// counting one half. Throws DegenerateSplit when the batch is all correct or
/// all incorrect.
double auc_refinement(const ProbabilityBatch& batch);

BinTable reliability_table(const ProbabilityBatch& batch, int bins);

/// ECE recomputed from a bin table; bit-identical to ece() on the same batch.
double ece_from_table(const BinTable& table);

/// Detection metrics for in-distribution vs out-of-distribution scores.
/// Higher score means more in-distribution.
OodReport ood_metrics(std::span<const double> id_scores, std::span<const double> ood_scores);

/// Rank statistic (ties at one half) of positives vs negatives; shared by
/// auc_refinement and ood_metrics.
double rank_auc(std::span<const double> positive_scores, std::span<const double> negative_scores);

}  // namespace refcal
