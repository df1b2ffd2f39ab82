#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "refcal/embeddings.hpp"
#include "refcal/error.hpp"
#include "refcal/rng.hpp"
#include "refcal/verification.hpp"

using namespace refcal;

TEST_CASE("normalize_to_sphere worked rows") {
    Matrix m = Matrix::from_rows({{3.0, 4.0}, {1.0, 0.0}});
    Matrix unit = normalize_to_sphere(m);
    CHECK(unit(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(unit(0, 1) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(unit(1, 0) == 1.0);
    CHECK(unit(1, 1) == 0.0);
}

TEST_CASE("normalize_to_sphere rejects zero rows") {
    Matrix m = Matrix::from_rows({{0.0, 0.0}});
    CHECK_THROWS_WITH_AS(normalize_to_sphere(m), doctest::Contains("norm below"), Error);
    try {
        normalize_to_sphere(m);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::zero_vector);
    }
}

TEST_CASE("normalize_to_sphere is idempotent") {
    Rng rng(31);
    Matrix m(40, 7);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = 10.0 * rng.normal();
    Matrix once = normalize_to_sphere(m);
    Matrix twice = normalize_to_sphere(once);
    for (std::size_t i = 0; i < once.size(); ++i)
        CHECK(std::fabs(once.data()[i] - twice.data()[i]) < 1e-12);
}

TEST_CASE("cosine similarity worked values") {
    double right[] = {1.0, 0.0};
    double up[] = {0.0, 1.0};
    double left[] = {-1.0, 0.0};
    CHECK(cosine_similarity(right, right) == 1.0);
    CHECK(cosine_similarity(right, up) == 0.0);
    CHECK(cosine_similarity(right, left) == -1.0);
}

TEST_CASE("cosine similarity rejects non-unit input") {
    double bad[] = {2.0, 0.0};
    double unit[] = {1.0, 0.0};
    try {
        cosine_similarity(bad, unit);
        FAIL("expected NotUnitNorm");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::not_unit_norm);
    }
}

TEST_CASE("dot product equals the squared-distance form on random unit pairs") {
    Rng rng(1207);
    for (int dim : {2, 8, 64}) {
        for (int t = 0; t < 300; ++t) {
            Matrix pair = verification::random_unit_rows(rng, 2, dim);
            double dot = cosine_similarity(pair.row(0), pair.row(1));
            double from_dist = 0.5 * (2.0 - squared_distance(pair.row(0), pair.row(1)));
            CHECK(std::fabs(dot - from_dist) < 1e-9);
            CHECK(dot >= -1.0 - 1e-12);
            CHECK(dot <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("partition_sets worked examples") {
    Matrix vectors = Matrix::from_rows(
        {{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.0}, {0.0, -1.0}});

    SUBCASE("two classes") {
        EmbeddingBatch batch = make_embedding_batch(vectors, {0, 0, 1, 1}, 2);
        PartitionSets sets = partition_sets(batch, 0);
        CHECK(sets.positives == std::vector<int>{1});
        CHECK(sets.negatives == std::vector<int>{2, 3});
    }
    SUBCASE("single-class batch has empty negatives") {
        Matrix three = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.0}});
        EmbeddingBatch batch = make_embedding_batch(three, {0, 0, 0}, 1);
        PartitionSets sets = partition_sets(batch, 1);
        CHECK(sets.positives == std::vector<int>{0, 2});
        CHECK(sets.negatives.empty());
    }
    SUBCASE("singleton class has empty positives") {
        Matrix two = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
        EmbeddingBatch batch = make_embedding_batch(two, {0, 1}, 2);
        PartitionSets sets = partition_sets(batch, 0);
        CHECK(sets.positives.empty());
        CHECK(sets.negatives == std::vector<int>{1});
    }
}

TEST_CASE("partition_sets forms a partition on random batches") {
    Rng rng(88);
    for (int t = 0; t < 50; ++t) {
        int n = rng.uniform_int(4, 40);
        int k = rng.uniform_int(2, 5);
        EmbeddingBatch batch = verification::random_embedding_batch(rng, n, 6, k);
        int anchor = rng.uniform_int(0, n - 1);
        PartitionSets sets = partition_sets(batch, anchor);
        CHECK(sets.positives.size() + sets.negatives.size() == static_cast<std::size_t>(n - 1));
        std::vector<bool> seen(n, false);
        for (int i : sets.positives) {
            CHECK(!seen[i]);
            seen[i] = true;
            CHECK(batch.labels[i] == batch.labels[anchor]);
        }
        for (int i : sets.negatives) {
            CHECK(!seen[i]);
            seen[i] = true;
            CHECK(batch.labels[i] != batch.labels[anchor]);
        }
        CHECK(!seen[anchor]);
    }
}

TEST_CASE("batch validation") {
    Matrix unit = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
    CHECK_THROWS_AS(make_embedding_batch(unit, {0}, 2), Error);            // label count
    CHECK_THROWS_AS(make_embedding_batch(unit, {0, 2}, 2), Error);         // label range
    Matrix off = Matrix::from_rows({{1.0, 1.0}, {0.0, 1.0}});
    CHECK_THROWS_AS(make_embedding_batch(off, {0, 1}, 2), Error);          // not unit
    Matrix single = Matrix::from_rows({{1.0, 0.0}});
    CHECK_THROWS_AS(make_embedding_batch(single, {0}, 1), Error);          // N < 2
}
