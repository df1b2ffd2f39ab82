#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refcal/matrix.hpp"

namespace refcal {

enum class Split : std::uint8_t { train, val, test };

const char* to_string(Split split);

struct DatasetMeta {
    int num_classes = 0;
    double imbalance_factor = 1.0;
    std::uint64_t seed = 0;
    int corruption_severity = 0;  // 0 = clean
};

/// Seeded synthetic dataset: features, labels, per-sample split tags, and the
/// generation metadata.
struct SyntheticDataset {
    Matrix features;
    std::vector<int> labels;
    std::vector<Split> split;
    DatasetMeta meta;
};

struct BlobConfig {
    int num_classes = 4;
    int max_class_count = 500;    // head-class sample count
    int input_dim = 16;
    double imbalance = 0.1;       // tail/head count ratio, in (0, 1]
    double class_separation = 4.0;
    double noise_sigma = 1.0;
    std::uint64_t seed = 1234;
};

/// Per-class sample counts under exponential decay: round(n_max * rho^(k/(K-1))),
/// round half up, floored at 2 so stratified splitting always survives.
std::vector<int> imbalance_counts(int num_classes, int max_class_count, double imbalance);

/// Gaussian class blobs with centers at least class_separation apart
/// (orthogonal arrangement when the dimension allows, circle otherwise),
/// counts following the imbalance law, and a stratified 70/15/15 split with
/// at least two train samples per class.
SyntheticDataset generate_blobs(const BlobConfig& config);

/// Remaps K classes onto {0, 1} per class_to_group (one entry per class);
/// features are untouched.
SyntheticDataset binary_group(const SyntheticDataset& dataset,
                              const std::vector<int>& class_to_group);

/// Adds Gaussian noise with sigma = severity * 0.2 * (per-feature std of the
/// clean train split) to the test split only. severity in 1..5.
SyntheticDataset corrupt(const SyntheticDataset& dataset, int severity, std::uint64_t seed);

/// Out-of-distribution probe set: a Gaussian centered at three times the
/// largest class-center norm away from the origin (direction fixed), scaled
/// by the train split's per-feature std.
Matrix generate_ood(const SyntheticDataset& dataset, int count, std::uint64_t seed);

/// Text format: "# refcal-dataset v1 K=<K> d=<d> N=<N>" then one line per
/// sample "split,label,f_0,...,f_{d-1}" with 17-significant-digit floats.
/// Round-trips exactly.
void save_dataset(const SyntheticDataset& dataset, const std::string& path);
SyntheticDataset load_dataset(const std::string& path);

std::vector<std::size_t> split_indices(const SyntheticDataset& dataset, Split split);

/// Feature rows / labels restricted to one split.
Matrix split_features(const SyntheticDataset& dataset, Split split);
std::vector<int> split_labels(const SyntheticDataset& dataset, Split split);

}  // namespace refcal
