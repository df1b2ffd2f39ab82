#include "refcal/embeddings.hpp"

#include <cmath>
#include <string>

#include "refcal/error.hpp"

namespace refcal {

namespace {

double row_norm(std::span<const double> row) {
    double s = 0.0;
    for (double v : row) s += v * v;
    return std::sqrt(s);
}

}  // namespace

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

Matrix normalize_to_sphere(const Matrix& vectors) {
    Matrix out = vectors;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        double norm = row_norm(out.row(r));
        if (norm < 1e-12)
            throw Error(ErrorCode::zero_vector,
                        "row " + std::to_string(r) + " has norm below 1e-12");
        for (double& v : out.row(r)) v /= norm;
    }
    return out;
}

EmbeddingBatch make_embedding_batch(Matrix unit_vectors, std::vector<int> labels,
                                    int num_classes) {
    if (unit_vectors.rows() < 2 || unit_vectors.cols() < 1)
        throw Error(ErrorCode::shape_mismatch, "embedding batch needs N >= 2 and d >= 1");
    if (labels.size() != unit_vectors.rows())
        throw Error(ErrorCode::shape_mismatch, "label count does not match row count");
    for (std::size_t r = 0; r < unit_vectors.rows(); ++r) {
        if (std::fabs(row_norm(unit_vectors.row(r)) - 1.0) > kUnitNormTolerance)
            throw Error(ErrorCode::not_unit_norm,
                        "row " + std::to_string(r) + " is not unit norm within 1e-9");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw Error(ErrorCode::label_out_of_range,
                        "label " + std::to_string(labels[i]) + " at sample " + std::to_string(i));
    }
    return EmbeddingBatch{std::move(unit_vectors), std::move(labels), num_classes};
}

double cosine_similarity(std::span<const double> z1, std::span<const double> z2) {
    if (z1.size() != z2.size())
        throw Error(ErrorCode::shape_mismatch, "vectors differ in dimension");
    if (std::fabs(row_norm(z1) - 1.0) > kUnitNormTolerance ||
        std::fabs(row_norm(z2) - 1.0) > kUnitNormTolerance)
        throw Error(ErrorCode::not_unit_norm, "cosine_similarity requires unit-norm inputs");
    double dot = 0.0;
    for (std::size_t i = 0; i < z1.size(); ++i) dot += z1[i] * z2[i];
    return dot;
}

PartitionSets partition_sets(const EmbeddingBatch& batch, int anchor) {
    const int n = static_cast<int>(batch.labels.size());
    if (anchor < 0 || anchor >= n)
        throw Error(ErrorCode::shape_mismatch, "anchor index out of range");
    PartitionSets sets;
    for (int j = 0; j < n; ++j) {
        if (j == anchor) continue;
        if (batch.labels[j] == batch.labels[anchor])
            sets.positives.push_back(j);
        else
            sets.negatives.push_back(j);
    }
    return sets;
}

void require_two_per_class(const EmbeddingBatch& batch) {
    std::vector<int> counts(batch.num_classes, 0);
    for (int label : batch.labels) ++counts[label];
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
        if (counts[batch.labels[i]] < 2)
            throw Error(ErrorCode::empty_positive_set,
                        "anchor " + std::to_string(i) + " is the only sample of its class");
    }
}

}  // namespace refcal
