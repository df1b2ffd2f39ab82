#include "refcal/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "refcal/error.hpp"
#include "refcal/rng.hpp"

namespace refcal {

const char* to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

std::vector<int> imbalance_counts(int num_classes, int max_class_count, double imbalance) {
    if (imbalance <= 0.0 || imbalance > 1.0)
        throw Error(ErrorCode::invalid_imbalance, "imbalance factor must lie in (0, 1]");
    std::vector<int> counts(num_classes);
    for (int k = 0; k < num_classes; ++k) {
        double exponent = num_classes > 1
                              ? static_cast<double>(k) / static_cast<double>(num_classes - 1)
                              : 0.0;
        double raw = static_cast<double>(max_class_count) * std::pow(imbalance, exponent);
        counts[k] = std::max(2, static_cast<int>(std::floor(raw + 0.5)));
    }
    return counts;
}

namespace {

/// Class centers with pairwise distance >= separation: a line for d = 1,
/// scaled orthogonal axes when the dimension allows one per class, otherwise
/// a circle in the first two coordinates.
Matrix class_centers(int num_classes, int input_dim, double separation) {
    Matrix centers(num_classes, input_dim);
    if (input_dim == 1) {
        for (int k = 0; k < num_classes; ++k) centers(k, 0) = separation * k;
    } else if (num_classes <= input_dim) {
        double scale = separation / std::numbers::sqrt2;
        for (int k = 0; k < num_classes; ++k) centers(k, k) = scale;
    } else {
        double radius = separation / (2.0 * std::sin(std::numbers::pi / num_classes));
        for (int k = 0; k < num_classes; ++k) {
            double angle = 2.0 * std::numbers::pi * k / num_classes;
            centers(k, 0) = radius * std::cos(angle);
            centers(k, 1) = radius * std::sin(angle);
        }
    }
    return centers;
}

/// 70/15/15 per class; train keeps at least two samples, val/test get one
/// each as soon as the class count permits (>= 4).
void split_counts(int class_count, int& train, int& val, int& test) {
    val = static_cast<int>(0.15 * class_count);
    test = static_cast<int>(0.15 * class_count);
    if (class_count >= 4) {
        val = std::max(val, 1);
        test = std::max(test, 1);
    }
    train = class_count - val - test;
}

std::vector<double> train_feature_std(const SyntheticDataset& dataset) {
    const std::size_t d = dataset.features.cols();
    std::vector<double> mean(d, 0.0), sq(d, 0.0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < dataset.features.rows(); ++i) {
        if (dataset.split[i] != Split::train) continue;
        ++n;
        for (std::size_t f = 0; f < d; ++f) {
            mean[f] += dataset.features(i, f);
            sq[f] += dataset.features(i, f) * dataset.features(i, f);
        }
    }
    if (n == 0) throw Error(ErrorCode::empty_split, "dataset has no train samples");
    std::vector<double> out(d);
    for (std::size_t f = 0; f < d; ++f) {
        mean[f] /= static_cast<double>(n);
        out[f] = std::sqrt(std::max(0.0, sq[f] / static_cast<double>(n) - mean[f] * mean[f]));
    }
    return out;
}

}  // namespace

SyntheticDataset generate_blobs(const BlobConfig& config) {
    if (config.num_classes < 2)
        throw Error(ErrorCode::config_invalid, "need at least two classes");
    if (config.input_dim < 1)
        throw Error(ErrorCode::config_invalid, "need at least one feature dimension");
    if (config.max_class_count < 2 * config.num_classes)
        throw Error(ErrorCode::too_few_samples,
                    "head class count must be at least twice the class count");
    auto counts = imbalance_counts(config.num_classes, config.max_class_count, config.imbalance);
    Matrix centers = class_centers(config.num_classes, config.input_dim, config.class_separation);

    std::size_t total = 0;
    for (int c : counts) total += static_cast<std::size_t>(c);
    SyntheticDataset dataset;
    dataset.features = Matrix(total, config.input_dim);
    dataset.labels.resize(total);
    dataset.split.resize(total);
    dataset.meta = {config.num_classes, config.imbalance, config.seed, 0};

    Rng rng(config.seed);
    std::size_t row = 0;
    for (int k = 0; k < config.num_classes; ++k) {
        int train = 0, val = 0, test = 0;
        split_counts(counts[k], train, val, test);
        for (int s = 0; s < counts[k]; ++s, ++row) {
            for (int f = 0; f < config.input_dim; ++f)
                dataset.features(row, f) = centers(k, f) + config.noise_sigma * rng.normal();
            dataset.labels[row] = k;
            dataset.split[row] = s < train ? Split::train
                                 : s < train + val ? Split::val
                                                   : Split::test;
        }
    }
    return dataset;
}

SyntheticDataset binary_group(const SyntheticDataset& dataset,
                              const std::vector<int>& class_to_group) {
    if (class_to_group.size() != static_cast<std::size_t>(dataset.meta.num_classes))
        throw Error(ErrorCode::incomplete_map, "group map must cover every class");
    bool seen[2] = {false, false};
    for (int g : class_to_group) {
        if (g != 0 && g != 1)
            throw Error(ErrorCode::incomplete_map, "group values must be 0 or 1");
        seen[g] = true;
    }
    if (!seen[0] || !seen[1])
        throw Error(ErrorCode::empty_group, "both groups must receive at least one class");
    SyntheticDataset out = dataset;
    for (std::size_t i = 0; i < out.labels.size(); ++i)
        out.labels[i] = class_to_group[out.labels[i]];
    out.meta.num_classes = 2;
    return out;
}

SyntheticDataset corrupt(const SyntheticDataset& dataset, int severity, std::uint64_t seed) {
    if (severity < 1 || severity > 5)
        throw Error(ErrorCode::severity_out_of_range, "severity must lie in 1..5");
    auto feature_std = train_feature_std(dataset);
    SyntheticDataset out = dataset;
    Rng rng(seed);
    for (std::size_t i = 0; i < out.features.rows(); ++i) {
        if (out.split[i] != Split::test) continue;
        for (std::size_t f = 0; f < out.features.cols(); ++f)
            out.features(i, f) += severity * 0.2 * feature_std[f] * rng.normal();
    }
    out.meta.corruption_severity = severity;
    return out;
}

Matrix generate_ood(const SyntheticDataset& dataset, int count, std::uint64_t seed) {
    if (count < 1) throw Error(ErrorCode::config_invalid, "need at least one probe sample");
    const std::size_t d = dataset.features.cols();
    const int k = dataset.meta.num_classes;

    // Empirical class centers from the train split.
    Matrix centers(k, d);
    std::vector<std::size_t> per_class(k, 0);
    for (std::size_t i = 0; i < dataset.features.rows(); ++i) {
        if (dataset.split[i] != Split::train) continue;
        int label = dataset.labels[i];
        ++per_class[label];
        for (std::size_t f = 0; f < d; ++f) centers(label, f) += dataset.features(i, f);
    }
    double max_norm = 0.0;
    std::vector<double> direction(d, 0.0);
    for (int c = 0; c < k; ++c) {
        if (per_class[c] == 0) continue;
        double norm_sq = 0.0;
        for (std::size_t f = 0; f < d; ++f) {
            centers(c, f) /= static_cast<double>(per_class[c]);
            norm_sq += centers(c, f) * centers(c, f);
            direction[f] += centers(c, f);
        }
        max_norm = std::max(max_norm, std::sqrt(norm_sq));
    }

    // Probe cluster center: 3x the largest center norm along the summed
    // center direction, so the probes sit outside the hull yet equidistant
    // from the known classes. Symmetric arrangements cancel the sum; fall
    // back to the all-ones direction.
    double dir_norm = 0.0;
    for (double v : direction) dir_norm += v * v;
    dir_norm = std::sqrt(dir_norm);
    if (dir_norm < 1e-6 * max_norm) {
        direction.assign(d, 1.0);
        dir_norm = std::sqrt(static_cast<double>(d));
    }
    for (double& v : direction) v *= 3.0 * max_norm / dir_norm;

    // Spread matches the within-class residual scale of the train split.
    std::vector<double> residual_sq(d, 0.0);
    std::size_t n_train = 0;
    for (std::size_t i = 0; i < dataset.features.rows(); ++i) {
        if (dataset.split[i] != Split::train) continue;
        ++n_train;
        for (std::size_t f = 0; f < d; ++f) {
            double r = dataset.features(i, f) - centers(dataset.labels[i], f);
            residual_sq[f] += r * r;
        }
    }
    if (n_train == 0) throw Error(ErrorCode::empty_split, "dataset has no train samples");

    Rng rng(seed);
    Matrix probes(count, d);
    for (int i = 0; i < count; ++i)
        for (std::size_t f = 0; f < d; ++f)
            probes(i, f) = direction[f] +
                           std::sqrt(residual_sq[f] / static_cast<double>(n_train)) *
                               rng.normal();
    return probes;
}

void save_dataset(const SyntheticDataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::io_error, "cannot open " + path + " for writing");
    out << "# refcal-dataset v1 K=" << dataset.meta.num_classes << " d=" << dataset.features.cols()
        << " N=" << dataset.features.rows() << "\n";
    char buffer[64];
    for (std::size_t i = 0; i < dataset.features.rows(); ++i) {
        out << to_string(dataset.split[i]) << "," << dataset.labels[i];
        for (std::size_t f = 0; f < dataset.features.cols(); ++f) {
            std::snprintf(buffer, sizeof(buffer), "%.17g", dataset.features(i, f));
            out << "," << buffer;
        }
        out << "\n";
    }
    if (!out) throw Error(ErrorCode::io_error, "failed writing " + path);
}

SyntheticDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_error, "cannot open " + path);
    std::string header;
    if (!std::getline(in, header))
        throw Error(ErrorCode::parse_error, path + ":1: empty dataset file");
    int num_classes = 0;
    std::size_t dim = 0, count = 0;
    if (std::sscanf(header.c_str(), "# refcal-dataset v1 K=%d d=%zu N=%zu", &num_classes, &dim,
                    &count) != 3 ||
        num_classes < 2 || dim < 1)
        throw Error(ErrorCode::parse_error, path + ":1: bad dataset header");

    SyntheticDataset dataset;
    dataset.features = Matrix(count, dim);
    dataset.labels.resize(count);
    dataset.split.resize(count);
    dataset.meta.num_classes = num_classes;

    std::string line;
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t line_no = i + 2;
        if (!std::getline(in, line))
            throw Error(ErrorCode::parse_error,
                        path + ":" + std::to_string(line_no) + ": missing sample row");
        std::istringstream fields(line);
        std::string field;
        auto next = [&]() {
            if (!std::getline(fields, field, ','))
                throw Error(ErrorCode::parse_error,
                            path + ":" + std::to_string(line_no) + ": too few fields");
            return field;
        };
        std::string tag = next();
        if (tag == "train")
            dataset.split[i] = Split::train;
        else if (tag == "val")
            dataset.split[i] = Split::val;
        else if (tag == "test")
            dataset.split[i] = Split::test;
        else
            throw Error(ErrorCode::parse_error,
                        path + ":" + std::to_string(line_no) + ": unknown split '" + tag + "'");
        try {
            dataset.labels[i] = std::stoi(next());
        } catch (const std::exception&) {
            throw Error(ErrorCode::parse_error,
                        path + ":" + std::to_string(line_no) + ": bad label");
        }
        if (dataset.labels[i] < 0 || dataset.labels[i] >= num_classes)
            throw Error(ErrorCode::parse_error,
                        path + ":" + std::to_string(line_no) + ": label out of range");
        for (std::size_t f = 0; f < dim; ++f) {
            try {
                dataset.features(i, f) = std::stod(next());
            } catch (const Error&) {
                throw;
            } catch (const std::exception&) {
                throw Error(ErrorCode::parse_error,
                            path + ":" + std::to_string(line_no) + ": bad feature value");
            }
        }
        if (std::getline(fields, field, ','))
            throw Error(ErrorCode::parse_error,
                        path + ":" + std::to_string(line_no) + ": too many fields");
    }
    if (std::getline(in, line) && !line.empty())
        throw Error(ErrorCode::parse_error,
                    path + ": more rows than the declared N=" + std::to_string(count));
    return dataset;
}

std::vector<std::size_t> split_indices(const SyntheticDataset& dataset, Split split) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < dataset.split.size(); ++i)
        if (dataset.split[i] == split) out.push_back(i);
    return out;
}

Matrix split_features(const SyntheticDataset& dataset, Split split) {
    auto idx = split_indices(dataset, split);
    Matrix out(idx.size(), dataset.features.cols());
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t f = 0; f < dataset.features.cols(); ++f)
            out(r, f) = dataset.features(idx[r], f);
    return out;
}

std::vector<int> split_labels(const SyntheticDataset& dataset, Split split) {
    auto idx = split_indices(dataset, split);
    std::vector<int> out(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) out[r] = dataset.labels[idx[r]];
    return out;
}

}  // namespace refcal
