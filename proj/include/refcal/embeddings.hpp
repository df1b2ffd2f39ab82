#pragma once

#include <span>
#include <vector>

#include "refcal/matrix.hpp"

namespace refcal {

/// Unit-norm tolerance shared by every embedding consumer. Inputs outside
/// this tolerance are rejected, never silently renormalized.
inline constexpr double kUnitNormTolerance = 1e-9;

/// A batch of unit-hypersphere embeddings with dense integer class labels.
struct EmbeddingBatch {
    Matrix vectors;           // N x d, every row unit norm within kUnitNormTolerance
    std::vector<int> labels;  // values in [0, num_classes)
    int num_classes = 0;
};

/// Indices of the same-label (positive) and different-label (negative)
/// samples for one anchor. Together they cover every index except the anchor.
struct PartitionSets {
    std::vector<int> positives;
    std::vector<int> negatives;
};

/// Projects every row of `vectors` onto the unit hypersphere.
/// Throws ZeroVector if any row norm is below 1e-12.
Matrix normalize_to_sphere(const Matrix& vectors);

/// Validating constructor for EmbeddingBatch: rows must already be unit norm,
/// N >= 2, d >= 1, labels in range.
EmbeddingBatch make_embedding_batch(Matrix unit_vectors, std::vector<int> labels, int num_classes);

/// Inner product of two unit vectors. Rejects non-unit inputs (NotUnitNorm);
/// for unit inputs the value equals (2 - |z1 - z2|^2) / 2.
double cosine_similarity(std::span<const double> z1, std::span<const double> z2);

/// Splits the batch around an anchor into positive and negative index sets.
/// Empty sets are a legal return; callers that need non-emptiness check it.
PartitionSets partition_sets(const EmbeddingBatch& batch, int anchor);

/// Throws EmptyPositiveSet naming an offending anchor if any label value
/// present in the batch occurs exactly once. Loss and bound evaluation call
/// this up front rather than skipping anchors.
void require_two_per_class(const EmbeddingBatch& batch);

double squared_distance(std::span<const double> a, std::span<const double> b);

}  // namespace refcal
