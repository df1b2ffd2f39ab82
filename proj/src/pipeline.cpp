#include "refcal/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "refcal/error.hpp"
#include "refcal/rng.hpp"

namespace refcal {

namespace {

constexpr std::uint64_t kStageOneSamplerSalt = 0x9e3779b97f4a7c15ull;
constexpr std::uint64_t kStageTwoShuffleSalt = 0x2545f4914f6cdd1dull;

struct SplitView {
    Matrix features;
    std::vector<int> labels;
};

SplitView view_of(const SyntheticDataset& dataset, Split split) {
    return {split_features(dataset, split), split_labels(dataset, split)};
}

Matrix gather_rows(const Matrix& source, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), source.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < source.cols(); ++c) out(r, c) = source(rows[r], c);
    return out;
}

/// Class-balanced stage-1 batches: every present class contributes the same
/// number of samples (at least two), tail classes drawing with replacement.
class BalancedSampler {
  public:
    BalancedSampler(const std::vector<int>& labels, int num_classes, int batch_size,
                    std::uint64_t seed)
        : rng_(seed) {
        by_class_.resize(num_classes);
        for (std::size_t i = 0; i < labels.size(); ++i)
            by_class_[labels[i]].push_back(i);
        for (const auto& members : by_class_)
            if (!members.empty()) ++present_;
        if (present_ < 2)
            throw Error(ErrorCode::config_invalid,
                        "contrastive stage needs at least two classes in the train split");
        per_class_ = std::max(2, batch_size / present_);
        if (batch_size < 2 * present_)
            throw Error(ErrorCode::config_invalid,
                        "stage-1 batch size cannot hold two samples of each class");
        decks_.resize(num_classes);
        cursors_.assign(num_classes, 0);
    }

    int batch_size() const { return per_class_ * present_; }

    std::vector<std::size_t> next_batch() {
        std::vector<std::size_t> batch;
        batch.reserve(batch_size());
        for (std::size_t c = 0; c < by_class_.size(); ++c) {
            const auto& members = by_class_[c];
            if (members.empty()) continue;
            if (members.size() < static_cast<std::size_t>(per_class_)) {
                for (int t = 0; t < per_class_; ++t)
                    batch.push_back(members[rng_.uniform_index(members.size())]);
            } else {
                for (int t = 0; t < per_class_; ++t) batch.push_back(draw_without_replacement(c));
            }
        }
        return batch;
    }

  private:
    std::size_t draw_without_replacement(std::size_t cls) {
        auto& deck = decks_[cls];
        if (cursors_[cls] >= deck.size()) {
            deck = by_class_[cls];
            rng_.shuffle(deck);
            cursors_[cls] = 0;
        }
        return deck[cursors_[cls]++];
    }

    Rng rng_;
    std::vector<std::vector<std::size_t>> by_class_;
    std::vector<std::vector<std::size_t>> decks_;
    std::vector<std::size_t> cursors_;
    int present_ = 0;
    int per_class_ = 2;
};

void require_trainable(const SyntheticDataset& dataset) {
    std::vector<int> counts(dataset.meta.num_classes, 0);
    for (std::size_t i = 0; i < dataset.labels.size(); ++i)
        if (dataset.split[i] == Split::train) ++counts[dataset.labels[i]];
    for (int c = 0; c < dataset.meta.num_classes; ++c) {
        if (counts[c] == 1)
            throw Error(ErrorCode::empty_positive_set,
                        "class " + std::to_string(c) + " has a single train sample");
    }
}

void validate_config(const TrainConfig& config) {
    if (config.stage1.epochs < 0 || config.stage2.epochs < 0)
        throw Error(ErrorCode::config_invalid, "epoch counts must be non-negative");
    if (config.stage1.tau <= 0.0)
        throw Error(ErrorCode::non_positive_temperature, "stage-1 tau must be positive");
    if (config.stage1.batch_size < 2 || config.stage2.batch_size < 1)
        throw Error(ErrorCode::config_invalid, "batch sizes too small");
    if (config.stage1.lr <= 0.0 || config.stage2.lr <= 0.0)
        throw Error(ErrorCode::config_invalid, "learning rates must be positive");
    if (config.stage1.momentum < 0.0 || config.stage1.momentum >= 1.0)
        throw Error(ErrorCode::config_invalid, "momentum must lie in [0, 1)");
    if (config.stage2.loss.kind == CalibrationLossSpec::Kind::label_smoothing &&
        (config.stage2.loss.epsilon < 0.0 || config.stage2.loss.epsilon >= 1.0))
        throw Error(ErrorCode::epsilon_out_of_range, "label smoothing epsilon out of range");
    if (config.stage2.loss.kind == CalibrationLossSpec::Kind::focal &&
        config.stage2.loss.gamma < 0.0)
        throw Error(ErrorCode::negative_gamma, "focal gamma must be non-negative");
}

struct ValMetrics {
    double top1 = 0.0;
    double auc = 0.0;
    double ece = 0.0;
};

ValMetrics validation_metrics(const NetworkParams& params, const SplitView& val) {
    ProbabilityBatch batch =
        make_probability_batch(softmax(forward_classify(params, val.features)), val.labels);
    return {top1_accuracy(batch), auc_or_degenerate(batch), ece(batch, 15)};
}

double train_split_loss(const NetworkParams& params, const SplitView& train,
                        const CalibrationLossSpec& spec) {
    return calibration_loss(forward_classify(params, train.features), train.labels, spec).value;
}

/// Shared classifier-training loop. With frozen_encoder this is the RefCal
/// calibration stage; without it, the single-stage baseline.
void run_calibration_stage(NetworkParams& params, const SyntheticDataset& dataset,
                           const TrainConfig& config, bool frozen_encoder, TrainingLog& log) {
    SplitView train = view_of(dataset, Split::train);
    SplitView val = view_of(dataset, Split::val);
    const std::size_t n_train = train.labels.size();
    if (n_train == 0) throw Error(ErrorCode::empty_split, "train split is empty");

    OptimizerState optimizer;
    optimizer.learning_rate = config.stage2.lr;
    optimizer.momentum = 0.0;  // plain SGD for the linear stage
    Rng shuffle_rng(config.seed ^ kStageTwoShuffleSalt);

    NetworkParams best_params = params;
    int best_epoch = 0;
    double best_top1 = -1.0;

    auto record = [&](int epoch) {
        ValMetrics vm = validation_metrics(params, val);
        log.rows.push_back({epoch, 2, train_split_loss(params, train, config.stage2.loss),
                            vm.top1, vm.auc, vm.ece});
        if (config.selection == ModelSelection::best_val_top1 && vm.top1 > best_top1) {
            best_top1 = vm.top1;
            best_params = params;
            best_epoch = epoch;
        }
    };
    record(0);

    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 1; epoch <= config.stage2.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < n_train;
             start += static_cast<std::size_t>(config.stage2.batch_size)) {
            std::size_t stop =
                std::min(n_train, start + static_cast<std::size_t>(config.stage2.batch_size));
            std::vector<std::size_t> rows(order.begin() + start, order.begin() + stop);
            Matrix inputs = gather_rows(train.features, rows);
            std::vector<int> labels(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = train.labels[rows[i]];
            Matrix logits = forward_classify(params, inputs);
            LossValue loss = calibration_loss(logits, labels, config.stage2.loss, true);
            ParamGrads grads = backward_classify(params, inputs, *loss.gradient, frozen_encoder);
            sgd_step(params, grads, optimizer);
        }
        record(epoch);
    }

    if (config.selection == ModelSelection::best_val_top1) {
        params = best_params;
        log.selected_epoch = best_epoch;
    } else {
        log.selected_epoch = config.stage2.epochs;
    }

    if (config.stage2.apply_temperature_scaling) {
        if (val.labels.empty())
            throw Error(ErrorCode::empty_validation, "temperature scaling needs a val split");
        params.temperature = fit_temperature(forward_classify(params, val.features), val.labels);
    }
    log.fitted_temperature = params.temperature;
}

NetworkShape default_shape(const SyntheticDataset& dataset) {
    NetworkShape shape;
    shape.input_dim = static_cast<int>(dataset.features.cols());
    shape.encoder_dims = {64, 32};
    shape.projection_dim = 16;
    shape.num_classes = dataset.meta.num_classes;
    return shape;
}

}  // namespace

double auc_or_degenerate(const ProbabilityBatch& batch) {
    try {
        return auc_refinement(batch);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::degenerate_split) throw;
        return top1_accuracy(batch) == 1.0 ? 1.0 : 0.0;
    }
}

TrainResult train_refcal(const SyntheticDataset& dataset, const TrainConfig& config) {
    validate_config(config);
    require_trainable(dataset);
    TrainResult result;
    result.params = init_network(default_shape(dataset), config.seed);
    TrainingLog& log = result.log;

    SplitView train = view_of(dataset, Split::train);
    SplitView val = view_of(dataset, Split::val);
    const int num_classes = dataset.meta.num_classes;

    auto train_embedding = [&]() {
        return forward_embed(result.params, train.features, train.labels, num_classes);
    };
    auto stage1_row = [&](int epoch) {
        EmbeddingBatch z = train_embedding();
        double loss = supcon_loss(z, config.stage1.tau).value;
        ValMetrics vm = validation_metrics(result.params, val);
        log.rows.push_back({epoch, 1, loss, vm.top1, vm.auc, vm.ece});
        return loss;
    };

    {
        EmbeddingBatch z0 = train_embedding();
        log.initial_supcon = supcon_loss(z0, config.stage1.tau).value;
        log.initial_refinement = refinement_loss(z0).value;
    }
    {
        ValMetrics vm = validation_metrics(result.params, val);
        log.rows.push_back({0, 1, log.initial_supcon, vm.top1, vm.auc, vm.ece});
    }

    if (config.stage1.epochs > 0) {
        BalancedSampler sampler(train.labels, num_classes, config.stage1.batch_size,
                                config.seed ^ kStageOneSamplerSalt);
        const std::size_t batches_per_epoch = std::max<std::size_t>(
            1, (train.labels.size() + sampler.batch_size() - 1) / sampler.batch_size());
        OptimizerState optimizer;
        optimizer.learning_rate = config.stage1.lr;
        optimizer.momentum = config.stage1.momentum;
        for (int epoch = 1; epoch <= config.stage1.epochs; ++epoch) {
            for (std::size_t b = 0; b < batches_per_epoch; ++b) {
                auto rows = sampler.next_batch();
                Matrix inputs = gather_rows(train.features, rows);
                std::vector<int> labels(rows.size());
                for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = train.labels[rows[i]];
                EmbeddingBatch z =
                    forward_embed(result.params, inputs, std::move(labels), num_classes);
                LossValue loss = supcon_loss(z, config.stage1.tau, true);
                // Descend the per-anchor mean so the step size is independent
                // of batch size; the loss value itself stays the anchor sum.
                Matrix& gradient = *loss.gradient;
                for (std::size_t i = 0; i < gradient.size(); ++i)
                    gradient.data()[i] /= static_cast<double>(rows.size());
                ParamGrads grads = backward_embed(result.params, inputs, gradient, false);
                sgd_step(result.params, grads, optimizer);
            }
            log.final_supcon = stage1_row(epoch);
        }
    } else {
        log.final_supcon = log.initial_supcon;
    }
    log.final_refinement = refinement_loss(train_embedding()).value;

    run_calibration_stage(result.params, dataset, config, /*frozen_encoder=*/true, log);
    return result;
}

TrainResult train_baseline(const SyntheticDataset& dataset, const TrainConfig& config) {
    validate_config(config);
    require_trainable(dataset);
    TrainResult result;
    result.params = init_network(default_shape(dataset), config.seed);
    run_calibration_stage(result.params, dataset, config, /*frozen_encoder=*/false, result.log);
    return result;
}

ProbabilityBatch predict_probabilities(const NetworkParams& params,
                                       const SyntheticDataset& dataset, Split split) {
    SplitView view = view_of(dataset, split);
    if (view.labels.empty())
        throw Error(ErrorCode::empty_split,
                    std::string("split '") + to_string(split) + "' is empty");
    return make_probability_batch(softmax(forward_classify(params, view.features)), view.labels);
}

ReliabilityReport evaluate_batch(const ProbabilityBatch& batch, const MetricConfig& metric_config,
                                 std::uint64_t seed) {
    ReliabilityReport report;
    report.top1 = top1_accuracy(batch);
    report.auc = auc_or_degenerate(batch);
    report.ece = ece(batch, metric_config.bins);
    report.sce = sce(batch, metric_config.bins);
    report.ace = ace(batch, metric_config.ace_ranges);
    report.smece = smece(batch, metric_config.smece_bandwidth);
    report.bin_table = reliability_table(batch, metric_config.bins);
    std::ostringstream canonical;
    canonical << "bins=" << metric_config.bins << ";ace_ranges=" << metric_config.ace_ranges
              << ";smece_bandwidth=" << metric_config.smece_bandwidth << ";seed=" << seed;
    report.config_fingerprint = fingerprint(canonical.str());
    report.seed = seed;
    return report;
}

ReliabilityReport evaluate(const NetworkParams& params, const SyntheticDataset& dataset,
                           Split split, const MetricConfig& metric_config, std::uint64_t seed) {
    return evaluate_batch(predict_probabilities(params, dataset, split), metric_config, seed);
}

ProbabilityBatch pitfall_transform(const ProbabilityBatch& predictions,
                                   const Matrix& confusion_rows) {
    const std::size_t k = predictions.probs.cols();
    if (confusion_rows.rows() != k || confusion_rows.cols() != k)
        throw Error(ErrorCode::shape_mismatch, "need one confusion row per predicted class");
    for (std::size_t j = 0; j < k; ++j) {
        double sum = 0.0;
        std::size_t best = 0;
        for (std::size_t c = 0; c < k; ++c) {
            double v = confusion_rows(j, c);
            if (v < 0.0)
                throw Error(ErrorCode::row_not_stochastic,
                            "confusion row " + std::to_string(j) + " has a negative entry");
            sum += v;
            if (v > confusion_rows(j, best)) best = c;
        }
        if (std::fabs(sum - 1.0) > 1e-6)
            throw Error(ErrorCode::row_not_stochastic,
                        "confusion row " + std::to_string(j) + " sums to " + std::to_string(sum));
        if (best != j)
            throw Error(ErrorCode::row_argmax_mismatch,
                        "confusion row " + std::to_string(j) + " peaks at class " +
                            std::to_string(best) + "; transform would change predictions");
    }
    auto preds = predicted_classes(predictions);
    Matrix replaced(predictions.probs.rows(), k);
    for (std::size_t i = 0; i < replaced.rows(); ++i)
        for (std::size_t c = 0; c < k; ++c) replaced(i, c) = confusion_rows(preds[i], c);
    return ProbabilityBatch{std::move(replaced), predictions.labels};
}

Matrix confusion_rows_from(const ProbabilityBatch& validation) {
    const std::size_t k = validation.probs.cols();
    Matrix rows(k, k);
    std::vector<std::size_t> totals(k, 0);
    auto preds = predicted_classes(validation);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        rows(preds[i], validation.labels[i]) += 1.0;
        ++totals[preds[i]];
    }
    for (std::size_t j = 0; j < k; ++j) {
        if (totals[j] == 0) {
            rows(j, j) = 1.0;  // class never predicted: identity row
            continue;
        }
        for (std::size_t c = 0; c < k; ++c) rows(j, c) /= static_cast<double>(totals[j]);
    }
    return rows;
}

std::vector<double> decile_accuracies(const ProbabilityBatch& batch) {
    auto confs = top_confidences(batch);
    auto preds = predicted_classes(batch);
    std::vector<std::size_t> order(confs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (confs[a] != confs[b]) return confs[a] < confs[b];
        return a < b;
    });
    std::vector<double> out;
    const std::size_t n = order.size();
    for (std::size_t g = 0; g < 10; ++g) {
        std::size_t start = g * n / 10;
        std::size_t stop = g == 9 ? n : (g + 1) * n / 10;
        if (stop <= start) continue;
        std::size_t hits = 0;
        for (std::size_t t = start; t < stop; ++t)
            if (preds[order[t]] == batch.labels[order[t]]) ++hits;
        out.push_back(static_cast<double>(hits) / static_cast<double>(stop - start));
    }
    return out;
}

void save_predictions(const ProbabilityBatch& batch, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::io_error, "cannot open " + path + " for writing");
    out << "# refcal-predictions v1 K=" << batch.probs.cols() << " N=" << batch.probs.rows()
        << "\n";
    char buffer[64];
    for (std::size_t i = 0; i < batch.probs.rows(); ++i) {
        out << i << "," << batch.labels[i];
        for (std::size_t c = 0; c < batch.probs.cols(); ++c) {
            std::snprintf(buffer, sizeof(buffer), "%.17g", batch.probs(i, c));
            out << "," << buffer;
        }
        out << "\n";
    }
    if (!out) throw Error(ErrorCode::io_error, "failed writing " + path);
}

ProbabilityBatch load_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_error, "cannot open " + path);
    std::string header;
    if (!std::getline(in, header))
        throw Error(ErrorCode::parse_error, path + ":1: empty prediction dump");
    std::size_t k = 0, n = 0;
    if (std::sscanf(header.c_str(), "# refcal-predictions v1 K=%zu N=%zu", &k, &n) != 2 || k < 2)
        throw Error(ErrorCode::parse_error, path + ":1: bad prediction header");
    Matrix probs(n, k);
    std::vector<int> labels(n);
    std::string line;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t line_no = i + 2;
        auto fail = [&](const std::string& what) -> Error {
            return Error(ErrorCode::parse_error,
                         path + ":" + std::to_string(line_no) + ": " + what);
        };
        if (!std::getline(in, line)) throw fail("missing prediction row");
        std::istringstream fields(line);
        std::string field;
        auto next = [&]() {
            if (!std::getline(fields, field, ',')) throw fail("too few fields");
            return field;
        };
        next();  // sample_id (informational)
        try {
            labels[i] = std::stoi(next());
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            throw fail("bad label");
        }
        if (labels[i] < 0 || labels[i] >= static_cast<int>(k)) throw fail("label out of range");
        double sum = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            try {
                probs(i, c) = std::stod(next());
            } catch (const Error&) {
                throw;
            } catch (const std::exception&) {
                throw fail("bad probability value");
            }
            if (probs(i, c) < 0.0) throw fail("negative probability");
            sum += probs(i, c);
        }
        if (std::fabs(sum - 1.0) > 1e-6) throw fail("row is not a probability vector");
        if (std::getline(fields, field, ',')) throw fail("too many fields");
    }
    if (std::getline(in, line) && !line.empty())
        throw Error(ErrorCode::parse_error,
                    path + ": more rows than the declared N=" + std::to_string(n));
    return ProbabilityBatch{std::move(probs), std::move(labels)};
}

void save_training_log(const TrainingLog& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::io_error, "cannot open " + path + " for writing");
    out << "epoch,stage,loss,val_top1,val_auc,val_ece\n";
    char buffer[64];
    for (const LogRow& row : log.rows) {
        out << row.epoch << "," << row.stage;
        for (double v : {row.loss, row.val_top1, row.val_auc, row.val_ece}) {
            std::snprintf(buffer, sizeof(buffer), "%.17g", v);
            out << "," << buffer;
        }
        out << "\n";
    }
    if (!out) throw Error(ErrorCode::io_error, "failed writing " + path);
}

std::string fingerprint(const std::string& canonical) {
    std::uint64_t hash = 0xcbf29ce484222325ull;
    for (unsigned char c : canonical) {
        hash ^= c;
        hash *= 0x100000001b3ull;
    }
    char buffer[17];
    std::snprintf(buffer, sizeof(buffer), "%016llx", static_cast<unsigned long long>(hash));
    return buffer;
}

std::string report_to_json(const ReliabilityReport& report) {
    nlohmann::ordered_json doc;
    doc["top1"] = report.top1;
    doc["auc"] = report.auc;
    doc["ece"] = report.ece;
    doc["sce"] = report.sce;
    doc["ace"] = report.ace;
    doc["smece"] = report.smece;
    nlohmann::ordered_json bins = nlohmann::ordered_json::array();
    for (std::size_t b = 0; b < report.bin_table.bins.size(); ++b) {
        const BinRecord& rec = report.bin_table.bins[b];
        nlohmann::ordered_json entry;
        entry["bin"] = b + 1;
        entry["lower"] = rec.lower;
        entry["upper"] = rec.upper;
        entry["count"] = rec.count;
        entry["accuracy"] = rec.accuracy;
        entry["mean_confidence"] = rec.mean_confidence;
        bins.push_back(entry);
    }
    doc["bin_table"] = std::move(bins);
    doc["config_fingerprint"] = report.config_fingerprint;
    doc["seed"] = report.seed;
    return doc.dump(2) + "\n";
}

void save_report(const ReliabilityReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::io_error, "cannot open " + path + " for writing");
    out << report_to_json(report);
    if (!out) throw Error(ErrorCode::io_error, "failed writing " + path);
}

}  // namespace refcal
