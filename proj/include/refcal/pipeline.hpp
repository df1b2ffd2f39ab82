#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refcal/datagen.hpp"
#include "refcal/losses.hpp"
#include "refcal/metrics.hpp"
#include "refcal/network.hpp"

namespace refcal {

struct StageOneConfig {
    int epochs = 200;
    int batch_size = 64;
    double lr = 0.1;
    double momentum = 0.9;
    double tau = 0.1;
};

struct StageTwoConfig {
    int epochs = 50;
    int batch_size = 64;
    double lr = 0.03;
    CalibrationLossSpec loss{};
    bool apply_temperature_scaling = false;
};

enum class ModelSelection { best_val_top1, final_epoch };

struct TrainConfig {
    StageOneConfig stage1;
    StageTwoConfig stage2;
    std::uint64_t seed = 1234;
    ModelSelection selection = ModelSelection::best_val_top1;
};

struct LogRow {
    int epoch = 0;  // epoch 0 is the pre-training snapshot of a stage
    int stage = 1;
    double loss = 0.0;
    double val_top1 = 0.0;
    double val_auc = 0.0;
    double val_ece = 0.0;
};

struct TrainingLog {
    std::vector<LogRow> rows;
    double initial_supcon = 0.0;      // train-split contrastive loss, epoch 0
    double final_supcon = 0.0;        // and after the last stage-1 epoch
    double initial_refinement = 0.0;  // train-split refinement loss, epoch 0
    double final_refinement = 0.0;
    int selected_epoch = 0;  // stage-2 epoch the returned parameters come from
    double fitted_temperature = 1.0;
};

struct TrainResult {
    NetworkParams params;
    TrainingLog log;
};

struct MetricConfig {
    int bins = 15;
    int ace_ranges = 15;
    double smece_bandwidth = 0.05;
};

struct ReliabilityReport {
    double top1 = 0.0;
    double auc = 0.0;
    double ece = 0.0;
    double sce = 0.0;
    double ace = 0.0;
    double smece = 0.0;
    BinTable bin_table;
    std::string config_fingerprint;
    std::uint64_t seed = 0;
};

/// Two-stage regime: contrastive pretraining of the encoder on projection
/// outputs with class-balanced batches, then frozen-encoder classifier
/// training with the configured calibration loss, optional temperature fit on
/// the validation split afterwards.
TrainResult train_refcal(const SyntheticDataset& dataset, const TrainConfig& config);

/// Single-stage baseline: encoder and classifier trained end to end with the
/// stage-2 loss; the stage-1 block of the config is ignored.
TrainResult train_baseline(const SyntheticDataset& dataset, const TrainConfig& config);

ProbabilityBatch predict_probabilities(const NetworkParams& params,
                                       const SyntheticDataset& dataset, Split split);

ReliabilityReport evaluate(const NetworkParams& params, const SyntheticDataset& dataset,
                           Split split, const MetricConfig& metric_config, std::uint64_t seed);

/// Metric assembly for an existing prediction batch (the external-audit path).
ReliabilityReport evaluate_batch(const ProbabilityBatch& batch, const MetricConfig& metric_config,
                                 std::uint64_t seed);

/// Replaces each sample's probability vector by the confusion row of its
/// predicted class. Rows must be stochastic and keep their own class as the
/// argmax so predictions are preserved.
ProbabilityBatch pitfall_transform(const ProbabilityBatch& predictions,
                                   const Matrix& confusion_rows);

/// Row j = empirical distribution of true labels among validation samples
/// predicted as class j (one-hot fallback for classes never predicted).
Matrix confusion_rows_from(const ProbabilityBatch& validation);

/// Refinement score with the degenerate split pinned: 1 when every
/// prediction is correct, 0 when every prediction is wrong. Used wherever a
/// report must stay total.
double auc_or_degenerate(const ProbabilityBatch& batch);

/// Accuracy per confidence decile (sorted by confidence, index tie-break,
/// remainder in the last decile).
std::vector<double> decile_accuracies(const ProbabilityBatch& batch);

/// Text format: "# refcal-predictions v1 K=<K> N=<N>", rows
/// "sample_id,label,prob_0,...,prob_{K-1}". Round-trips exactly.
void save_predictions(const ProbabilityBatch& batch, const std::string& path);
ProbabilityBatch load_predictions(const std::string& path);

/// CSV "epoch,stage,loss,val_top1,val_auc,val_ece" with a header row.
void save_training_log(const TrainingLog& log, const std::string& path);

/// Flat key-value JSON document with the report fields; the bin table is the
/// one nested array. Serialization is byte-stable for identical inputs.
std::string report_to_json(const ReliabilityReport& report);
void save_report(const ReliabilityReport& report, const std::string& path);

/// FNV-1a fingerprint of a canonical configuration string, hex-encoded.
std::string fingerprint(const std::string& canonical);

}  // namespace refcal
