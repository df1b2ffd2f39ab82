#include "refcal/verification.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "refcal/kernels.hpp"
#include "refcal/losses.hpp"
#include "refcal/reference.hpp"

namespace refcal::verification {

namespace {

std::string format_double(double v) {
    std::ostringstream out;
    out.precision(6);
    out << v;
    return out.str();
}

}  // namespace

Matrix random_unit_rows(Rng& rng, int count, int dim) {
    Matrix rows(count, dim);
    for (std::size_t i = 0; i < rows.size(); ++i) rows.data()[i] = rng.normal();
    return normalize_to_sphere(rows);
}

EmbeddingBatch random_embedding_batch(Rng& rng, int count, int dim, int num_classes) {
    std::vector<int> labels(count);
    for (int i = 0; i < 2 * num_classes && i < count; ++i) labels[i] = i / 2;
    for (int i = 2 * num_classes; i < count; ++i) labels[i] = rng.uniform_int(0, num_classes - 1);
    rng.shuffle(labels);
    return make_embedding_batch(random_unit_rows(rng, count, dim), std::move(labels),
                                num_classes);
}

ProbabilityBatch random_probability_batch(Rng& rng, int count, int num_classes) {
    Matrix probs(count, num_classes);
    for (int i = 0; i < count; ++i) {
        double sum = 0.0;
        for (int c = 0; c < num_classes; ++c) {
            double v = -std::log(1.0 - rng.uniform());
            probs(i, c) = v;
            sum += v;
        }
        for (int c = 0; c < num_classes; ++c) probs(i, c) /= sum;
    }
    std::vector<int> labels(count);
    for (int i = 0; i < count; ++i) labels[i] = rng.uniform_int(0, num_classes - 1);
    return make_probability_batch(std::move(probs), std::move(labels));
}

Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, Matrix x, double step) {
    Matrix grad(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double original = x.data()[i];
        x.data()[i] = original + step;
        double plus = f(x);
        x.data()[i] = original - step;
        double minus = f(x);
        x.data()[i] = original;
        grad.data()[i] = (plus - minus) / (2.0 * step);
    }
    return grad;
}

std::vector<double*> parameter_refs(NetworkParams& params) {
    std::vector<double*> refs;
    auto add_layer = [&refs](DenseLayer& layer) {
        for (std::size_t i = 0; i < layer.weight.size(); ++i) refs.push_back(layer.weight.data() + i);
        for (double& b : layer.bias) refs.push_back(&b);
    };
    for (DenseLayer& layer : params.encoder) add_layer(layer);
    add_layer(params.projection);
    add_layer(params.classifier);
    return refs;
}

std::vector<double> flatten_grads(const ParamGrads& grads) {
    std::vector<double> flat;
    auto add_layer = [&flat](const DenseLayer& layer) {
        flat.insert(flat.end(), layer.weight.data(), layer.weight.data() + layer.weight.size());
        flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
    };
    for (const DenseLayer& layer : grads.encoder) add_layer(layer);
    add_layer(grads.projection);
    add_layer(grads.classifier);
    return flat;
}

std::vector<double> numeric_parameter_gradient(const std::function<double()>& f,
                                               NetworkParams& params, double step) {
    auto refs = parameter_refs(params);
    std::vector<double> grad(refs.size());
    for (std::size_t i = 0; i < refs.size(); ++i) {
        double original = *refs[i];
        *refs[i] = original + step;
        double plus = f();
        *refs[i] = original - step;
        double minus = f();
        *refs[i] = original;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    return grad;
}

double relative_error(double a, double b, double floor) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

double max_relative_error(const std::vector<double>& analytic,
                          const std::vector<double>& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i)
        worst = std::max(worst, relative_error(analytic[i], numeric[i]));
    return worst;
}

PropertyResult check_cosine_identity(const Options& options) {
    Rng rng(options.seed ^ 0xa076u);
    double worst = 0.0;
    for (int dim : {2, 8, 64}) {
        for (int t = 0; t < options.identity_pairs; ++t) {
            Matrix pair = random_unit_rows(rng, 2, dim);
            double dot = cosine_similarity(pair.row(0), pair.row(1));
            double from_distance = 0.5 * (2.0 - squared_distance(pair.row(0), pair.row(1)));
            double gap = options.inject_fault ? std::fabs(dot + from_distance)
                                              : std::fabs(dot - from_distance);
            worst = std::max(worst, gap);
        }
    }
    bool passed = worst < 1e-9;
    return {"lemma-identity",
            passed,
            "3x" + std::to_string(options.identity_pairs) +
                " pairs, worst |dot - distance form| = " + format_double(worst)};
}

PropertyResult check_bound_sweep(const Options& options) {
    Rng rng(options.seed ^ 0xb0417u);
    double min_margin = std::numeric_limits<double>::infinity();
    double worst_loss_gap = 0.0;
    for (int t = 0; t < options.bound_batches; ++t) {
        int count = rng.uniform_int(4, 128);
        int dim = rng.uniform_int(2, 64);
        int num_classes = rng.uniform_int(2, std::min(10, count / 2));
        EmbeddingBatch batch = random_embedding_batch(rng, count, dim, num_classes);
        BoundReport report;
        try {
            report = verify_bound(batch);
        } catch (const BoundViolation& violation) {
            return {"bound-chain", false,
                    std::string("violation after ") + std::to_string(t) +
                        " batches: " + violation.what()};
        }
        min_margin = std::min(min_margin, report.margin);
        // Same batches double as oracle checks for the two loss values.
        worst_loss_gap = std::max(
            worst_loss_gap, std::fabs(report.refinement - reference::refinement_loss(
                                                              batch.vectors, batch.labels)));
        worst_loss_gap = std::max(
            worst_loss_gap,
            std::fabs(report.supcon_tau1 -
                      reference::supcon_loss(batch.vectors, batch.labels, 1.0)));
    }
    bool passed = min_margin > 0.0 && worst_loss_gap < 1e-9;
    return {"bound-chain",
            passed,
            std::to_string(options.bound_batches) +
                " batches, min margin = " + format_double(min_margin) +
                ", worst loss-oracle gap = " + format_double(worst_loss_gap)};
}

PropertyResult check_loss_gradients(const Options& options) {
    Rng rng(options.seed ^ 0x96adu);
    double worst = 0.0;
    auto track = [&worst](const Matrix& analytic, const Matrix& numeric) {
        for (std::size_t i = 0; i < analytic.size(); ++i)
            worst = std::max(worst,
                             relative_error(analytic.data()[i], numeric.data()[i]));
    };
    for (int t = 0; t < options.gradient_instances; ++t) {
        // contrastive loss over embeddings
        int count = rng.uniform_int(6, 20);
        int dim = rng.uniform_int(2, 8);
        int num_classes = rng.uniform_int(2, 3);
        double tau = rng.uniform(0.3, 3.0);
        EmbeddingBatch batch = random_embedding_batch(rng, count, dim, num_classes);
        LossValue loss = supcon_loss(batch, tau, true);
        Matrix numeric = numeric_gradient(
            [&](const Matrix& z) { return supcon_value(z, batch.labels, tau); }, batch.vectors);
        track(*loss.gradient, numeric);

        // softmax-head losses over logits
        Matrix logits(8, 4);
        for (std::size_t i = 0; i < logits.size(); ++i) logits.data()[i] = 2.0 * rng.normal();
        std::vector<int> labels(8);
        for (int i = 0; i < 8; ++i) labels[i] = rng.uniform_int(0, 3);
        double epsilon = rng.uniform(0.0, 0.3);
        double gamma = rng.uniform(0.0, 3.0);

        track(*nll_loss(logits, labels, true).gradient,
              numeric_gradient([&](const Matrix& l) { return nll_loss(l, labels).value; },
                               logits));
        track(*label_smoothing_loss(logits, labels, epsilon, true).gradient,
              numeric_gradient(
                  [&](const Matrix& l) { return label_smoothing_loss(l, labels, epsilon).value; },
                  logits));
        track(*focal_loss(logits, labels, gamma, true).gradient,
              numeric_gradient(
                  [&](const Matrix& l) { return focal_loss(l, labels, gamma).value; }, logits));
    }
    bool passed = worst < 1e-4;
    return {"gradients-losses",
            passed,
            std::to_string(options.gradient_instances) +
                " instances per loss, max relative error = " + format_double(worst)};
}

namespace {

/// Finite differences are meaningless at rectifier kinks or collapsed
/// (near-zero) projection rows, so the harness redraws until the sampled
/// configuration is safely differentiable. Production-sized encoders do not
/// collapse; only these deliberately tiny test nets can.
bool differentiable_at(const NetworkParams& params, const Matrix& inputs) {
    Matrix h = inputs;
    for (std::size_t l = 0; l < params.encoder.size(); ++l) {
        Matrix pre;
        kernels::dense_forward(h, params.encoder[l].weight, params.encoder[l].bias, pre);
        if (l + 1 < params.encoder.size()) {
            for (std::size_t i = 0; i < pre.size(); ++i)
                if (std::fabs(pre.data()[i]) < 1e-3) return false;
            for (std::size_t i = 0; i < pre.size(); ++i)
                if (pre.data()[i] < 0.0) pre.data()[i] = 0.0;
        }
        h = std::move(pre);
    }
    Matrix projected;
    kernels::dense_forward(h, params.projection.weight, params.projection.bias, projected);
    for (std::size_t r = 0; r < projected.rows(); ++r) {
        double norm_sq = 0.0;
        for (double v : projected.row(r)) norm_sq += v * v;
        if (norm_sq < 1e-4) return false;
    }
    return true;
}

}  // namespace

PropertyResult check_network_gradients(const Options& options) {
    Rng rng(options.seed ^ 0x4e7fu);
    double worst = 0.0;
    for (int t = 0; t < options.gradient_instances; ++t) {
        NetworkShape shape;
        shape.input_dim = 3;
        shape.encoder_dims = {5, 4};
        shape.projection_dim = 3;
        shape.num_classes = 3;
        const int batch_size = 6;
        NetworkParams params;
        Matrix inputs(batch_size, shape.input_dim);
        do {
            params = init_network(shape, rng.next_u64());
            for (std::size_t i = 0; i < inputs.size(); ++i) inputs.data()[i] = rng.normal();
        } while (!differentiable_at(params, inputs));
        params.temperature = rng.uniform(0.5, 2.0);
        std::vector<int> labels(batch_size);  // every class twice
        for (int i = 0; i < batch_size; ++i) labels[i] = i / 2;
        rng.shuffle(labels);

        // embedding path composed with the contrastive loss
        double tau = rng.uniform(0.5, 2.0);
        {
            LossValue loss = supcon_loss(
                forward_embed(params, inputs, labels, shape.num_classes), tau, true);
            ParamGrads grads = backward_embed(params, inputs, *loss.gradient, false);
            auto numeric = numeric_parameter_gradient(
                [&]() {
                    return supcon_loss(forward_embed(params, inputs, labels, shape.num_classes),
                                       tau)
                        .value;
                },
                params);
            worst = std::max(worst, max_relative_error(flatten_grads(grads), numeric));
        }

        // classification path composed with each calibration loss
        CalibrationLossSpec specs[3] = {
            {CalibrationLossSpec::Kind::nll, 0.0, 0.0},
            {CalibrationLossSpec::Kind::label_smoothing, rng.uniform(0.01, 0.3), 0.0},
            {CalibrationLossSpec::Kind::focal, 0.0, rng.uniform(0.5, 3.0)},
        };
        for (const auto& spec : specs) {
            LossValue loss =
                calibration_loss(forward_classify(params, inputs), labels, spec, true);
            ParamGrads grads = backward_classify(params, inputs, *loss.gradient, false);
            auto numeric = numeric_parameter_gradient(
                [&]() {
                    return calibration_loss(forward_classify(params, inputs), labels, spec).value;
                },
                params);
            worst = std::max(worst, max_relative_error(flatten_grads(grads), numeric));
        }
    }
    bool passed = worst < 1e-4;
    return {"gradients-network",
            passed,
            std::to_string(options.gradient_instances) +
                " compositions, max relative error = " + format_double(worst)};
}

PropertyResult check_metric_oracles(const Options& options) {
    Rng rng(options.seed ^ 0x3e7151u);
    double worst = 0.0;
    auto track = [&worst](double produced, double oracle) {
        worst = std::max(worst, std::fabs(produced - oracle));
    };
    for (int t = 0; t < options.metric_instances; ++t) {
        int count = rng.uniform_int(10, 200);
        int num_classes = rng.uniform_int(2, 6);
        ProbabilityBatch batch = random_probability_batch(rng, count, num_classes);
        int bins = rng.uniform_int(1, 20);
        int ranges = rng.uniform_int(1, 10);
        double bandwidth = rng.uniform(0.02, 0.5);

        track(ece(batch, bins), reference::ece(batch, bins));
        track(sce(batch, bins), reference::sce(batch, bins));
        track(ace(batch, ranges), reference::ace(batch, ranges));
        track(smece(batch, bandwidth), reference::smece(batch, bandwidth));

        // make the correctness split non-degenerate before ranking
        auto preds = predicted_classes(batch);
        batch.labels[0] = preds[0];
        batch.labels[1] = (preds[1] + 1) % num_classes;
        track(auc_refinement(batch), reference::auc_refinement(batch));

        int n_id = rng.uniform_int(5, 100);
        int n_ood = rng.uniform_int(5, 100);
        std::vector<double> id_scores(n_id), ood_scores(n_ood);
        for (double& s : id_scores) s = 1.0 + rng.normal();
        for (double& s : ood_scores) s = rng.normal();
        OodReport report = ood_metrics(id_scores, ood_scores);
        track(report.auroc, reference::pairwise_auc(id_scores, ood_scores));
        track(report.fpr_at_tpr95, reference::fpr_at_tpr95(id_scores, ood_scores));
        track(report.detection_error, reference::detection_error(id_scores, ood_scores));
        track(report.aupr_in, reference::aupr(id_scores, ood_scores));
        {
            std::vector<double> id_neg(id_scores), ood_neg(ood_scores);
            for (double& s : id_neg) s = -s;
            for (double& s : ood_neg) s = -s;
            track(report.aupr_out, reference::aupr(ood_neg, id_neg));
        }
    }

    // The worked four-sample case pins down the binning conventions exactly.
    Matrix probs = Matrix::from_rows({{0.9, 0.1}, {0.8, 0.2}, {0.7, 0.3}, {0.6, 0.4}});
    ProbabilityBatch worked = make_probability_batch(probs, {0, 0, 1, 0});
    double worked_ece = ece(worked, 15);
    bool worked_exact = worked_ece == 0.35;

    bool passed = worst < 1e-10 && worked_exact;
    return {"metric-oracles",
            passed,
            std::to_string(options.metric_instances) +
                " instances, worst |metric - oracle| = " + format_double(worst) +
                ", worked ECE = " + format_double(worked_ece)};
}

PropertyResult check_calibrated_simulation(const Options& options) {
    Rng rng(options.seed ^ 0xca11bu);
    const int count = 100000;
    Matrix probs(count, 2);
    std::vector<int> labels(count);
    for (int i = 0; i < count; ++i) {
        double confidence = rng.uniform(0.5, 1.0);
        bool correct = rng.uniform() < confidence;
        probs(i, 0) = confidence;
        probs(i, 1) = 1.0 - confidence;
        labels[i] = correct ? 0 : 1;
    }
    double value = ece(make_probability_batch(std::move(probs), std::move(labels)), 15);
    bool passed = value < 0.02;
    return {"calibrated-simulation", passed,
            "N=100000 Bernoulli(confidence), ECE = " + format_double(value)};
}

std::vector<PropertyResult> run_all(const Options& options) {
    return {
        check_cosine_identity(options),     check_bound_sweep(options),
        check_loss_gradients(options),      check_network_gradients(options),
        check_metric_oracles(options),      check_calibrated_simulation(options),
    };
}

}  // namespace refcal::verification
