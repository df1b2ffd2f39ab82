#pragma once

#include <span>
#include <vector>

#include "refcal/matrix.hpp"
#include "refcal/metrics.hpp"

// Serial brute-force implementations kept alongside the OpenMP kernels. They
// are written independently (plain double loops, interval tests instead of
// index arithmetic, O(n^2) pair counts) and serve two purposes: oracles for
// the property/acceptance suites and baselines for the kernel benchmark.

namespace refcal::reference {

/// Nearest-positive minus nearest-negative half squared distances, summed
/// over anchors by exhaustive pair enumeration.
double refinement_loss(const Matrix& vectors, const std::vector<int>& labels);

/// Contrastive loss evaluated directly from the definition (no log-sum-exp
/// shift); only usable where the exponentials stay in range.
double supcon_loss(const Matrix& vectors, const std::vector<int>& labels, double tau);

/// Binned top-label calibration error via explicit interval membership tests.
double ece(const ProbabilityBatch& batch, int bins);

/// Class-conditional binned calibration error, triple loop.
double sce(const ProbabilityBatch& batch, int bins);

/// Adaptive-range per-class calibration error with its own sort.
double ace(const ProbabilityBatch& batch, int ranges);

/// Kernel-smoothed calibration error, unnormalized-then-divide double loop.
double smece(const ProbabilityBatch& batch, double bandwidth);

/// Refinement score by counting all (correct, incorrect) pairs.
double auc_refinement(const ProbabilityBatch& batch);

/// Rank statistic by exhaustive pair comparison, ties at one half.
double pairwise_auc(std::span<const double> positives, std::span<const double> negatives);

/// FPR at the smallest true-positive rate >= 0.95, by scanning every score as
/// a candidate threshold.
double fpr_at_tpr95(std::span<const double> id_scores, std::span<const double> ood_scores);

/// Minimum over candidate thresholds of the equal-prior error.
double detection_error(std::span<const double> id_scores, std::span<const double> ood_scores);

/// Step-wise precision-recall area, positives taken in descending score
/// groups.
double aupr(std::span<const double> positives, std::span<const double> negatives);

}  // namespace refcal::reference
