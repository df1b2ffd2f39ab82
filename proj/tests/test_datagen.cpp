#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "refcal/datagen.hpp"
#include "refcal/error.hpp"

using namespace refcal;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::filesystem::path scratch_dir(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("class counts follow the exponential decay law") {
    auto counts = imbalance_counts(10, 1000, 0.1);
    CHECK(counts == std::vector<int>{1000, 774, 599, 464, 359, 278, 215, 167, 129, 100});
    auto balanced = imbalance_counts(5, 40, 1.0);
    CHECK(balanced == std::vector<int>{40, 40, 40, 40, 40});
    CHECK_THROWS_AS(imbalance_counts(4, 100, 0.0), Error);
    CHECK_THROWS_AS(imbalance_counts(4, 100, 1.5), Error);
}

TEST_CASE("blob generation is deterministic and stratified") {
    BlobConfig config;
    config.num_classes = 4;
    config.max_class_count = 200;
    config.input_dim = 3;
    config.seed = 31;
    SyntheticDataset a = generate_blobs(config);
    SyntheticDataset b = generate_blobs(config);
    CHECK(a.features == b.features);
    CHECK(a.labels == b.labels);
    CHECK(a.split == b.split);

    auto counts = imbalance_counts(4, 200, 0.1);
    std::map<int, std::map<Split, int>> by_class;
    for (std::size_t i = 0; i < a.labels.size(); ++i) ++by_class[a.labels[i]][a.split[i]];
    for (int c = 0; c < 4; ++c) {
        int total = by_class[c][Split::train] + by_class[c][Split::val] + by_class[c][Split::test];
        CHECK(total == counts[c]);
        CHECK(by_class[c][Split::train] >= 2);
        if (counts[c] >= 4) {
            CHECK(by_class[c][Split::val] >= 1);
            CHECK(by_class[c][Split::test] >= 1);
        }
    }
}

TEST_CASE("blob centers respect the separation floor") {
    for (int dim : {1, 2, 3, 8}) {
        BlobConfig config;
        config.num_classes = 4;
        config.max_class_count = 64;
        config.input_dim = dim;
        config.noise_sigma = 0.0;  // samples sit exactly on the centers
        SyntheticDataset ds = generate_blobs(config);
        Matrix centers(4, dim);
        std::vector<int> counted(4, 0);
        for (std::size_t i = 0; i < ds.labels.size(); ++i) {
            if (counted[ds.labels[i]]) continue;
            counted[ds.labels[i]] = 1;
            for (int f = 0; f < dim; ++f) centers(ds.labels[i], f) = ds.features(i, f);
        }
        for (int a = 0; a < 4; ++a)
            for (int b = a + 1; b < 4; ++b) {
                double dist_sq = 0.0;
                for (int f = 0; f < dim; ++f)
                    dist_sq += (centers(a, f) - centers(b, f)) * (centers(a, f) - centers(b, f));
                CHECK(std::sqrt(dist_sq) >= config.class_separation - 1e-9);
            }
    }
}

TEST_CASE("config guards") {
    BlobConfig config;
    config.num_classes = 4;
    config.max_class_count = 7;  // < 2K
    CHECK_THROWS_AS(generate_blobs(config), Error);
}

TEST_CASE("dataset files round-trip exactly") {
    BlobConfig config;
    config.max_class_count = 50;
    config.num_classes = 3;
    config.input_dim = 2;
    SyntheticDataset ds = generate_blobs(config);
    auto dir = scratch_dir("refcal_dataset_test");
    std::string path = (dir / "d.txt").string();
    save_dataset(ds, path);
    SyntheticDataset loaded = load_dataset(path);
    CHECK(loaded.features == ds.features);
    CHECK(loaded.labels == ds.labels);
    CHECK(loaded.split == ds.split);
    std::string again = path + ".again";
    save_dataset(loaded, again);
    CHECK(read_file(path) == read_file(again));
    std::filesystem::remove_all(dir);
}

TEST_CASE("malformed dataset rows are reported with their line number") {
    auto dir = scratch_dir("refcal_dataset_bad");
    std::string path = (dir / "bad.txt").string();
    {
        std::ofstream out(path);
        out << "# refcal-dataset v1 K=2 d=2 N=2\n";
        out << "train,0,1.0,2.0\n";
        out << "train,7,1.0,2.0\n";  // label out of range
    }
    try {
        load_dataset(path);
        FAIL("expected a parse error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::parse_error);
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("binary grouping remaps labels only") {
    BlobConfig config;
    config.num_classes = 4;
    config.max_class_count = 60;
    SyntheticDataset ds = generate_blobs(config);
    SyntheticDataset grouped = binary_group(ds, {0, 0, 1, 1});
    CHECK(grouped.features == ds.features);
    CHECK(grouped.meta.num_classes == 2);
    std::map<int, int> histogram, original;
    for (int label : grouped.labels) ++histogram[label];
    for (int label : ds.labels) ++original[label];
    CHECK(histogram[0] == original[0] + original[1]);
    CHECK(histogram[1] == original[2] + original[3]);

    SyntheticDataset two = binary_group(grouped, {0, 1});
    CHECK(two.labels == grouped.labels);

    CHECK_THROWS_AS(binary_group(ds, {0, 0, 1}), Error);      // missing class 3
    CHECK_THROWS_AS(binary_group(ds, {0, 0, 0, 0}), Error);   // empty group
    CHECK_THROWS_AS(binary_group(ds, {0, 0, 1, 2}), Error);   // not a 2-group value
}

TEST_CASE("corruption scales linearly with severity and touches only the test split") {
    BlobConfig config;
    config.num_classes = 3;
    config.max_class_count = 80;
    SyntheticDataset ds = generate_blobs(config);
    SyntheticDataset sev1 = corrupt(ds, 1, 12345);
    SyntheticDataset sev1_again = corrupt(ds, 1, 12345);
    SyntheticDataset sev5 = corrupt(ds, 5, 12345);
    CHECK(sev1.features == sev1_again.features);
    CHECK(sev5.meta.corruption_severity == 5);

    for (std::size_t i = 0; i < ds.features.rows(); ++i) {
        for (std::size_t f = 0; f < ds.features.cols(); ++f) {
            double delta1 = sev1.features(i, f) - ds.features(i, f);
            double delta5 = sev5.features(i, f) - ds.features(i, f);
            if (ds.split[i] != Split::test) {
                CHECK(delta1 == 0.0);
                CHECK(delta5 == 0.0);
            } else if (delta1 != 0.0) {
                CHECK(delta5 / delta1 == doctest::Approx(5.0).epsilon(1e-9));
            }
        }
    }
    CHECK_THROWS_AS(corrupt(ds, 0, 1), Error);
    CHECK_THROWS_AS(corrupt(ds, 6, 1), Error);
}

TEST_CASE("out-of-distribution probes sit three center norms out") {
    BlobConfig config;
    config.num_classes = 4;
    config.max_class_count = 100;
    SyntheticDataset ds = generate_blobs(config);
    Matrix probes = generate_ood(ds, 2000, 9);
    Matrix again = generate_ood(ds, 2000, 9);
    CHECK(probes == again);

    // empirical max class-center norm from the train split
    Matrix centers(4, ds.features.cols());
    std::vector<int> counts(4, 0);
    for (std::size_t i = 0; i < ds.features.rows(); ++i) {
        if (ds.split[i] != Split::train) continue;
        ++counts[ds.labels[i]];
        for (std::size_t f = 0; f < ds.features.cols(); ++f)
            centers(ds.labels[i], f) += ds.features(i, f);
    }
    double max_norm = 0.0;
    for (int c = 0; c < 4; ++c) {
        double norm_sq = 0.0;
        for (std::size_t f = 0; f < ds.features.cols(); ++f) {
            centers(c, f) /= counts[c];
            norm_sq += centers(c, f) * centers(c, f);
        }
        max_norm = std::max(max_norm, std::sqrt(norm_sq));
    }
    std::vector<double> mean(ds.features.cols(), 0.0);
    for (std::size_t i = 0; i < probes.rows(); ++i)
        for (std::size_t f = 0; f < probes.cols(); ++f) mean[f] += probes(i, f) / probes.rows();
    double mean_norm = 0.0;
    for (double v : mean) mean_norm += v * v;
    CHECK(std::sqrt(mean_norm) >= 2.9 * max_norm);
}
