#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "refcal/losses.hpp"
#include "refcal/network.hpp"
#include "refcal/rng.hpp"
#include "refcal/verification.hpp"

using namespace refcal;

namespace {

NetworkParams identity_projection_net() {
    NetworkParams params;  // empty encoder: representation = input
    params.projection.weight = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
    params.projection.bias = {0.0, 0.0};
    params.classifier.weight = Matrix::from_rows({{0.0, 0.0}, {0.0, 0.0}});
    params.classifier.bias = {0.0, 0.0};
    return params;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("embedding of an identity network is plain normalization") {
    NetworkParams params = identity_projection_net();
    Matrix inputs = Matrix::from_rows({{3.0, 4.0}});
    Matrix z = embed(params, inputs);
    CHECK(z(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(z(0, 1) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("embeddings are unit rows at any parameter scale") {
    Rng rng(11);
    for (double scale : {1.0, 1e3, 1e6}) {
        NetworkShape shape{4, {16, 8}, 6, 3};
        NetworkParams params = init_network(shape, 7);
        for (DenseLayer* layer : {&params.projection})
            for (std::size_t i = 0; i < layer->weight.size(); ++i)
                layer->weight.data()[i] *= scale;
        Matrix inputs(10, 4);
        for (std::size_t i = 0; i < inputs.size(); ++i) inputs.data()[i] = rng.normal();
        Matrix z = embed(params, inputs);
        for (std::size_t r = 0; r < z.rows(); ++r) {
            double norm_sq = 0.0;
            for (double v : z.row(r)) norm_sq += v * v;
            CHECK(std::fabs(std::sqrt(norm_sq) - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("initialization and forward passes are deterministic") {
    NetworkShape shape{5, {12, 6}, 4, 3};
    NetworkParams a = init_network(shape, 99);
    NetworkParams b = init_network(shape, 99);
    CHECK(a == b);
    Rng rng(3);
    Matrix inputs(7, 5);
    for (std::size_t i = 0; i < inputs.size(); ++i) inputs.data()[i] = rng.normal();
    CHECK(embed(a, inputs) == embed(b, inputs));
    CHECK(forward_classify(a, inputs) == forward_classify(b, inputs));
}

TEST_CASE("temperature divides logits without moving the argmax") {
    NetworkShape shape{3, {8, 4}, 4, 3};
    NetworkParams params = init_network(shape, 21);
    Rng rng(4);
    Matrix inputs(6, 3);
    for (std::size_t i = 0; i < inputs.size(); ++i) inputs.data()[i] = rng.normal();
    Matrix at_unit = forward_classify(params, inputs);
    params.temperature = 2.0;
    Matrix at_two = forward_classify(params, inputs);
    for (std::size_t i = 0; i < at_unit.size(); ++i)
        CHECK(at_two.data()[i] == at_unit.data()[i] / 2.0);
}

TEST_CASE("zero classifier gives the uniform distribution") {
    NetworkParams params = identity_projection_net();
    Matrix logits = forward_classify(params, Matrix::from_rows({{1.0, 2.0}}));
    Matrix probs = softmax(logits);
    CHECK(probs(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(probs(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("parameter gradients match central differences") {
    Rng rng(31415);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        NetworkShape shape{3, {6, 4}, 3, 3};
        NetworkParams params = init_network(shape, rng.next_u64());
        Matrix inputs(6, 3);
        for (std::size_t i = 0; i < inputs.size(); ++i) inputs.data()[i] = rng.normal();
        std::vector<int> labels = {0, 0, 1, 1, 2, 2};

        LossValue loss = calibration_loss(forward_classify(params, inputs), labels,
                                          {CalibrationLossSpec::Kind::nll, 0, 0}, true);
        ParamGrads grads = backward_classify(params, inputs, *loss.gradient, false);
        auto numeric = verification::numeric_parameter_gradient(
            [&]() { return nll_loss(forward_classify(params, inputs), labels).value; }, params);
        worst = std::max(
            worst, verification::max_relative_error(verification::flatten_grads(grads), numeric));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("frozen encoder produces exactly zero encoder gradients") {
    NetworkShape shape{4, {8, 5}, 4, 3};
    NetworkParams params = init_network(shape, 5);
    Rng rng(6);
    Matrix inputs(5, 4);
    for (std::size_t i = 0; i < inputs.size(); ++i) inputs.data()[i] = rng.normal();
    Matrix upstream(5, 3);
    for (std::size_t i = 0; i < upstream.size(); ++i) upstream.data()[i] = rng.normal();
    ParamGrads grads = backward_classify(params, inputs, upstream, true);
    for (const DenseLayer& layer : grads.encoder) {
        for (std::size_t i = 0; i < layer.weight.size(); ++i)
            CHECK(layer.weight.data()[i] == 0.0);
        for (double b : layer.bias) CHECK(b == 0.0);
    }
    // the classifier still receives gradient
    double magnitude = 0.0;
    for (std::size_t i = 0; i < grads.classifier.weight.size(); ++i)
        magnitude += std::fabs(grads.classifier.weight.data()[i]);
    CHECK(magnitude > 0.0);
}

TEST_CASE("zero upstream gradient flows to zero parameter gradients") {
    NetworkShape shape{4, {8, 5}, 4, 3};
    NetworkParams params = init_network(shape, 5);
    Rng rng(7);
    Matrix inputs(5, 4);
    for (std::size_t i = 0; i < inputs.size(); ++i) inputs.data()[i] = rng.normal();
    Matrix upstream(5, 4);  // embed path output dim
    ParamGrads grads = backward_embed(params, inputs, upstream, false);
    for (double g : verification::flatten_grads(grads)) CHECK(g == 0.0);
}

TEST_CASE("momentum update follows the two-step recurrence") {
    NetworkParams params = identity_projection_net();
    NetworkParams start = params;
    ParamGrads grads;
    grads.projection.weight = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
    grads.projection.bias = {0.5, -0.5};
    grads.classifier.weight = Matrix(2, 2);
    grads.classifier.bias = {0.0, 0.0};

    SUBCASE("plain step decreases by lr * g") {
        OptimizerState state{0.1, 0.0};
        sgd_step(params, grads, state);
        CHECK(params.projection.weight(0, 1) ==
              doctest::Approx(start.projection.weight(0, 1) - 0.1 * 2.0).epsilon(1e-15));
        CHECK(state.step == 1);
    }
    SUBCASE("zero gradient from rest leaves parameters unchanged") {
        OptimizerState state{0.1, 0.9};
        ParamGrads zero = grads;
        zero.projection.weight = Matrix(2, 2);
        zero.projection.bias = {0.0, 0.0};
        sgd_step(params, zero, state);
        CHECK(params == start);
    }
    SUBCASE("two momentum steps") {
        OptimizerState state{0.1, 0.9};
        ParamGrads second = grads;
        second.projection.weight = Matrix::from_rows({{-1.0, 0.5}, {2.0, 1.0}});
        sgd_step(params, grads, state);
        sgd_step(params, second, state);
        // closed form: p2 = p0 - lr*g1 - lr*(0.9*g1 + g2)
        double expected = start.projection.weight(1, 0) - 0.1 * 3.0 - 0.1 * (0.9 * 3.0 + 2.0);
        CHECK(params.projection.weight(1, 0) == doctest::Approx(expected).epsilon(1e-15));
    }
}

TEST_CASE("temperature fit recovers the generating scale") {
    Rng rng(2718);
    const int n = 8000;
    const int k = 4;
    Matrix log_posterior(n, k);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        // calibrated by construction: labels drawn from the stated posterior
        double raw[4];
        double sum = 0.0;
        for (int c = 0; c < k; ++c) {
            raw[c] = std::max(-std::log(1.0 - rng.uniform()), 1e-6);
            sum += raw[c];
        }
        double u = rng.uniform();
        double cum = 0.0;
        labels[i] = k - 1;
        for (int c = 0; c < k; ++c) {
            cum += raw[c] / sum;
            if (u < cum) {
                labels[i] = c;
                break;
            }
        }
        for (int c = 0; c < k; ++c) log_posterior(i, c) = std::log(raw[c] / sum);
    }
    double fitted = fit_temperature(log_posterior, labels);
    CHECK(std::fabs(fitted - 1.0) < 0.05);

    Matrix scaled = log_posterior;
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled.data()[i] *= 3.0;
    double recovered = fit_temperature(scaled, labels);
    CHECK(std::fabs(recovered - 3.0) < 0.15);

    // the fit never hurts validation NLL, and rescaling keeps the argmax
    auto nll_at = [&](const Matrix& logits, double temperature) {
        Matrix t = logits;
        for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] /= temperature;
        return nll_loss(t, labels).value;
    };
    CHECK(nll_at(scaled, recovered) <= nll_at(scaled, 1.0) + 1e-9);
    CHECK_THROWS_AS(fit_temperature(Matrix(), {}), Error);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    NetworkShape shape{5, {10, 6}, 4, 3};
    NetworkParams params = init_network(shape, 424242);
    params.temperature = 1.75;
    auto dir = std::filesystem::temp_directory_path() / "refcal_ckpt_test";
    std::filesystem::create_directories(dir);
    std::string path = (dir / "model.ckpt").string();
    save_checkpoint(params, path);
    NetworkParams loaded = load_checkpoint(path);
    CHECK(loaded == params);
    std::string again = path + ".again";
    save_checkpoint(loaded, again);
    CHECK(read_file(path) == read_file(again));
    std::filesystem::remove_all(dir);
}

TEST_CASE("truncated checkpoints are rejected") {
    NetworkShape shape{3, {4}, 3, 2};
    NetworkParams params = init_network(shape, 1);
    auto dir = std::filesystem::temp_directory_path() / "refcal_ckpt_bad";
    std::filesystem::create_directories(dir);
    std::string path = (dir / "model.ckpt").string();
    save_checkpoint(params, path);
    std::string bytes = read_file(path);
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 16));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(path), Error);
    std::filesystem::remove_all(dir);
}
