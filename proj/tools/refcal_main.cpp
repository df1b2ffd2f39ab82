// refcal: synthetic-data training and reliability-evaluation toolkit.
//
// Subcommands: generate, train, evaluate, verify, pitfall. Every command is a
// pure function of (flags, input files, seed); outputs are written to a
// temporary file and renamed into place so failed runs leave nothing partial.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "refcal/datagen.hpp"
#include "refcal/error.hpp"
#include "refcal/pipeline.hpp"
#include "refcal/verification.hpp"

namespace {

constexpr const char* kToolkitVersion = "refcal 1.0.0";

constexpr int kExitPropertyFailure = 1;
constexpr int kExitBadFlags = 2;
constexpr int kExitParseFailure = 3;
constexpr int kExitComputeFailure = 4;

using refcal::Error;
using refcal::ErrorCode;

int exit_code_for(const Error& error) {
    switch (error.code()) {
        case ErrorCode::parse_error:
        case ErrorCode::io_error:
            return kExitParseFailure;
        default:
            return kExitComputeFailure;
    }
}

[[noreturn]] void fail_flags(const std::string& message) {
    std::cerr << "error: " << message << "\n";
    std::exit(kExitBadFlags);
}

std::uint64_t env_seed_or(std::uint64_t fallback) {
    if (const char* env = std::getenv("REFCAL_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            fail_flags("REFCAL_SEED is not an integer");
        }
    }
    return fallback;
}

/// Writes through a temp file and renames on success.
void write_atomically(const std::string& path,
                      const std::function<void(const std::string&)>& writer) {
    std::string tmp = path + ".tmp";
    writer(tmp);
    std::filesystem::rename(tmp, path);
}

void write_text_atomically(const std::string& path, const std::string& content) {
    write_atomically(path, [&content](const std::string& tmp) {
        std::ofstream out(tmp, std::ios::binary);
        out << content;
        if (!out) throw Error(ErrorCode::io_error, "failed writing " + tmp);
    });
}

struct ManifestInfo {
    std::string command;
    std::string config_path;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::uint64_t seed = 0;
    double duration_seconds = 0.0;
};

void write_manifest(const std::string& path, const ManifestInfo& info) {
    nlohmann::ordered_json doc;
    doc["command"] = info.command;
    doc["config_path"] = info.config_path;
    doc["inputs"] = info.inputs;
    doc["outputs"] = info.outputs;
    doc["seed"] = info.seed;
    doc["version"] = kToolkitVersion;
    doc["duration_seconds"] = info.duration_seconds;
    write_text_atomically(path, doc.dump(2) + "\n");
}

class Stopwatch {
  public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------- generate

struct GenerateArgs {
    int classes = 4;
    int n_max = 500;
    double imbalance = 0.1;
    int dims = 16;
    double separation = 4.0;
    double noise = 1.0;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string out;
};

int run_generate(const GenerateArgs& args) {
    if (args.classes < 2) fail_flags("--classes must be at least 2");
    if (args.dims < 1) fail_flags("--dims must be at least 1");
    if (args.imbalance <= 0.0 || args.imbalance > 1.0)
        fail_flags("--imbalance must lie in (0, 1]");
    if (args.n_max < 2 * args.classes) fail_flags("--n-max must be at least 2 * --classes");
    if (args.separation <= 0.0) fail_flags("--separation must be positive");
    if (args.noise < 0.0) fail_flags("--noise must be non-negative");
    Stopwatch watch;
    refcal::BlobConfig config;
    config.num_classes = args.classes;
    config.max_class_count = args.n_max;
    config.input_dim = args.dims;
    config.imbalance = args.imbalance;
    config.class_separation = args.separation;
    config.noise_sigma = args.noise;
    config.seed = args.seed_given ? args.seed : env_seed_or(1234);
    refcal::SyntheticDataset dataset = refcal::generate_blobs(config);
    write_atomically(args.out,
                     [&dataset](const std::string& tmp) { refcal::save_dataset(dataset, tmp); });
    ManifestInfo info;
    info.command = "generate";
    info.outputs = {args.out};
    info.seed = config.seed;
    info.duration_seconds = watch.seconds();
    write_manifest(args.out + ".manifest.json", info);
    return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
    std::string data;
    std::string out_dir;
    std::string config_path;
    std::string regime = "refcal";
    std::string loss = "nll";
    double epsilon = 0.1;
    double gamma = 2.0;
    bool temperature_scaling = false;
    std::string select = "best";
    int stage1_epochs = -1;
    int stage1_batch = -1;
    double stage1_lr = -1.0;
    double stage1_momentum = -1.0;
    double tau = -1.0;
    int stage2_epochs = -1;
    int stage2_batch = -1;
    double stage2_lr = -1.0;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

refcal::TrainConfig config_from_json(const std::string& path, refcal::TrainConfig config) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_error, "cannot open " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::parse_error, path + ": " + e.what());
    }
    auto get = [&doc](const char* key, auto fallback) {
        using T = decltype(fallback);
        return doc.contains(key) ? doc[key].template get<T>() : fallback;
    };
    config.stage1.epochs = get("stage1_epochs", config.stage1.epochs);
    config.stage1.batch_size = get("stage1_batch_size", config.stage1.batch_size);
    config.stage1.lr = get("stage1_lr", config.stage1.lr);
    config.stage1.momentum = get("stage1_momentum", config.stage1.momentum);
    config.stage1.tau = get("stage1_tau", config.stage1.tau);
    config.stage2.epochs = get("stage2_epochs", config.stage2.epochs);
    config.stage2.batch_size = get("stage2_batch_size", config.stage2.batch_size);
    config.stage2.lr = get("stage2_lr", config.stage2.lr);
    config.stage2.loss.epsilon = get("stage2_epsilon", config.stage2.loss.epsilon);
    config.stage2.loss.gamma = get("stage2_gamma", config.stage2.loss.gamma);
    config.stage2.apply_temperature_scaling =
        get("stage2_temperature_scaling", config.stage2.apply_temperature_scaling);
    config.seed = get("seed", config.seed);
    std::string loss = get("stage2_loss", std::string("nll"));
    if (loss == "nll")
        config.stage2.loss.kind = refcal::CalibrationLossSpec::Kind::nll;
    else if (loss == "ls")
        config.stage2.loss.kind = refcal::CalibrationLossSpec::Kind::label_smoothing;
    else if (loss == "focal")
        config.stage2.loss.kind = refcal::CalibrationLossSpec::Kind::focal;
    else
        throw Error(ErrorCode::parse_error, path + ": unknown stage2_loss '" + loss + "'");
    std::string selection = get("model_selection", std::string("best_val"));
    if (selection == "best_val")
        config.selection = refcal::ModelSelection::best_val_top1;
    else if (selection == "final")
        config.selection = refcal::ModelSelection::final_epoch;
    else
        throw Error(ErrorCode::parse_error, path + ": unknown model_selection");
    return config;
}

int run_train(const TrainArgs& args, const CLI::App* cmd) {
    if (args.regime != "refcal" && args.regime != "baseline")
        fail_flags("--regime must be refcal or baseline");
    if (args.loss != "nll" && args.loss != "ls" && args.loss != "focal")
        fail_flags("--loss must be one of: nll, ls, focal");
    if (args.select != "best" && args.select != "final")
        fail_flags("--select must be best or final");

    Stopwatch watch;
    // seed priority: --seed flag, then config file, then REFCAL_SEED, then 1234
    refcal::TrainConfig config;
    config.seed = env_seed_or(config.seed);
    if (!args.config_path.empty()) config = config_from_json(args.config_path, config);

    auto overridden = [cmd](const char* flag) { return cmd->count(flag) > 0; };
    if (overridden("--loss") || args.config_path.empty()) {
        if (args.loss == "nll")
            config.stage2.loss.kind = refcal::CalibrationLossSpec::Kind::nll;
        else if (args.loss == "ls")
            config.stage2.loss.kind = refcal::CalibrationLossSpec::Kind::label_smoothing;
        else
            config.stage2.loss.kind = refcal::CalibrationLossSpec::Kind::focal;
    }
    if (overridden("--epsilon")) config.stage2.loss.epsilon = args.epsilon;
    if (overridden("--gamma")) config.stage2.loss.gamma = args.gamma;
    if (overridden("--ts")) config.stage2.apply_temperature_scaling = args.temperature_scaling;
    if (overridden("--select"))
        config.selection = args.select == "best" ? refcal::ModelSelection::best_val_top1
                                                 : refcal::ModelSelection::final_epoch;
    if (args.stage1_epochs >= 0) config.stage1.epochs = args.stage1_epochs;
    if (args.stage1_batch > 0) config.stage1.batch_size = args.stage1_batch;
    if (args.stage1_lr > 0) config.stage1.lr = args.stage1_lr;
    if (args.stage1_momentum >= 0) config.stage1.momentum = args.stage1_momentum;
    if (args.tau > 0) config.stage1.tau = args.tau;
    if (args.stage2_epochs >= 0) config.stage2.epochs = args.stage2_epochs;
    if (args.stage2_batch > 0) config.stage2.batch_size = args.stage2_batch;
    if (args.stage2_lr > 0) config.stage2.lr = args.stage2_lr;
    if (args.seed_given) config.seed = args.seed;

    refcal::SyntheticDataset dataset = refcal::load_dataset(args.data);
    refcal::TrainResult result = args.regime == "refcal"
                                     ? refcal::train_refcal(dataset, config)
                                     : refcal::train_baseline(dataset, config);

    refcal::MetricConfig metric_config;
    refcal::ProbabilityBatch predictions =
        refcal::predict_probabilities(result.params, dataset, refcal::Split::test);
    refcal::ReliabilityReport report =
        refcal::evaluate_batch(predictions, metric_config, config.seed);

    std::filesystem::create_directories(args.out_dir);
    std::string checkpoint = args.out_dir + "/model.ckpt";
    std::string log_csv = args.out_dir + "/train_log.csv";
    std::string report_json = args.out_dir + "/report.json";
    std::string dump = args.out_dir + "/predictions.txt";
    write_atomically(checkpoint, [&](const std::string& tmp) {
        refcal::save_checkpoint(result.params, tmp);
    });
    write_atomically(log_csv, [&](const std::string& tmp) {
        refcal::save_training_log(result.log, tmp);
    });
    write_atomically(report_json, [&](const std::string& tmp) {
        refcal::save_report(report, tmp);
    });
    write_atomically(dump, [&](const std::string& tmp) {
        refcal::save_predictions(predictions, tmp);
    });

    ManifestInfo info;
    info.command = "train";
    info.config_path = args.config_path;
    info.inputs = {args.data};
    info.outputs = {checkpoint, log_csv, report_json, dump};
    info.seed = config.seed;
    info.duration_seconds = watch.seconds();
    write_manifest(args.out_dir + "/manifest.json", info);

    std::cout << "top1 " << report.top1 * 100.0 << "%  auc " << report.auc * 100.0 << "%  ece "
              << report.ece * 100.0 << "%  (selected epoch " << result.log.selected_epoch
              << ", T = " << result.log.fitted_temperature << ")\n";
    return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
    std::string dump;
    std::string out;
    int bins = 15;
    int ace_ranges = 15;
    double smece_bandwidth = 0.05;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

int run_evaluate(const EvaluateArgs& args) {
    if (args.bins < 1) fail_flags("--bins must be at least 1");
    if (args.ace_ranges < 1) fail_flags("--ace-ranges must be at least 1");
    if (args.smece_bandwidth <= 0.0) fail_flags("--smece-bandwidth must be positive");
    Stopwatch watch;
    refcal::ProbabilityBatch batch = refcal::load_predictions(args.dump);
    refcal::MetricConfig metric_config{args.bins, args.ace_ranges, args.smece_bandwidth};
    std::uint64_t seed = args.seed_given ? args.seed : env_seed_or(1234);
    refcal::ReliabilityReport report = refcal::evaluate_batch(batch, metric_config, seed);
    write_atomically(args.out, [&](const std::string& tmp) { refcal::save_report(report, tmp); });
    ManifestInfo info;
    info.command = "evaluate";
    info.inputs = {args.dump};
    info.outputs = {args.out};
    info.seed = seed;
    info.duration_seconds = watch.seconds();
    write_manifest(args.out + ".manifest.json", info);
    std::cout << "top1 " << report.top1 * 100.0 << "%  auc " << report.auc * 100.0 << "%  ece "
              << report.ece * 100.0 << "%  sce " << report.sce * 100.0 << "%  ace "
              << report.ace * 100.0 << "%  smece " << report.smece * 100.0 << "%\n";
    return 0;
}

// ------------------------------------------------------------------ verify

struct VerifyArgs {
    int batches = 1000;
    int pairs = 1000;
    int instances = 100;
    std::uint64_t seed = 0;
    bool seed_given = false;
    bool self_test = false;
};

int run_verify(const VerifyArgs& args) {
    if (args.batches < 1 || args.pairs < 1 || args.instances < 1)
        fail_flags("sweep sizes must be positive");
    refcal::verification::Options options;
    options.bound_batches = args.batches;
    options.identity_pairs = args.pairs;
    options.gradient_instances = args.instances;
    options.metric_instances = args.instances;
    options.seed = args.seed_given ? args.seed : env_seed_or(options.seed);
    options.inject_fault = args.self_test;
    bool all_passed = true;
    for (const auto& result : refcal::verification::run_all(options)) {
        std::cout << (result.passed ? "PASS" : "FAIL") << " " << result.name << ": "
                  << result.detail << "\n";
        all_passed = all_passed && result.passed;
    }
    return all_passed ? 0 : kExitPropertyFailure;
}

// ----------------------------------------------------------------- pitfall

struct PitfallArgs {
    std::string test_dump;
    std::string val_dump;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

std::size_t distinct_confidences(const refcal::ProbabilityBatch& batch) {
    auto confs = refcal::top_confidences(batch);
    return std::set<double>(confs.begin(), confs.end()).size();
}

int run_pitfall(const PitfallArgs& args) {
    Stopwatch watch;
    refcal::ProbabilityBatch test = refcal::load_predictions(args.test_dump);
    refcal::ProbabilityBatch val = refcal::load_predictions(args.val_dump);
    refcal::Matrix confusion = refcal::confusion_rows_from(val);
    refcal::ProbabilityBatch transformed = refcal::pitfall_transform(test, confusion);

    refcal::MetricConfig metric_config;
    std::uint64_t seed = args.seed_given ? args.seed : env_seed_or(1234);
    refcal::ReliabilityReport before = refcal::evaluate_batch(test, metric_config, seed);
    refcal::ReliabilityReport after = refcal::evaluate_batch(transformed, metric_config, seed);

    std::filesystem::create_directories(args.out_dir);
    std::string before_path = args.out_dir + "/report_before.json";
    std::string after_path = args.out_dir + "/report_after.json";
    std::string delta_path = args.out_dir + "/delta.json";
    write_atomically(before_path,
                     [&](const std::string& tmp) { refcal::save_report(before, tmp); });
    write_atomically(after_path,
                     [&](const std::string& tmp) { refcal::save_report(after, tmp); });
    nlohmann::ordered_json delta;
    delta["delta_auc"] = after.auc - before.auc;
    delta["delta_ece"] = after.ece - before.ece;
    delta["distinct_confidences_before"] = distinct_confidences(test);
    delta["distinct_confidences_after"] = distinct_confidences(transformed);
    write_text_atomically(delta_path, delta.dump(2) + "\n");

    ManifestInfo info;
    info.command = "pitfall";
    info.inputs = {args.test_dump, args.val_dump};
    info.outputs = {before_path, after_path, delta_path};
    info.seed = seed;
    info.duration_seconds = watch.seconds();
    write_manifest(args.out_dir + "/manifest.json", info);

    std::cout << "delta auc " << (after.auc - before.auc) * 100.0 << "%  delta ece "
              << (after.ece - before.ece) * 100.0 << "%\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"classifier reliability toolkit: refinement, calibration, verification"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolkitVersion);

    GenerateArgs gen;
    CLI::App* generate = app.add_subcommand("generate", "write a synthetic blob dataset");
    generate->add_option("--classes", gen.classes, "number of classes");
    generate->add_option("--n-max", gen.n_max, "head-class sample count");
    generate->add_option("--imbalance", gen.imbalance, "tail/head count ratio in (0,1]");
    generate->add_option("--dims", gen.dims, "feature dimension");
    generate->add_option("--separation", gen.separation, "minimum class-center distance");
    generate->add_option("--noise", gen.noise, "per-class Gaussian sigma");
    auto* gen_seed = generate->add_option("--seed", gen.seed, "generation seed");
    generate->add_option("--out", gen.out, "output dataset path")->required();

    TrainArgs tr;
    CLI::App* train = app.add_subcommand("train", "run a training regime on a dataset file");
    train->add_option("--data", tr.data, "dataset file")->required();
    train->add_option("--out-dir", tr.out_dir, "output directory")->required();
    train->add_option("--config", tr.config_path, "flat JSON config (flags override)");
    train->add_option("--regime", tr.regime, "refcal | baseline");
    train->add_option("--loss", tr.loss, "stage-2 loss: nll | ls | focal");
    train->add_option("--epsilon", tr.epsilon, "label smoothing epsilon");
    train->add_option("--gamma", tr.gamma, "focal gamma");
    train->add_flag("--ts", tr.temperature_scaling, "fit temperature on the val split");
    train->add_option("--select", tr.select, "model selection: best | final");
    train->add_option("--stage1-epochs", tr.stage1_epochs, "contrastive epochs");
    train->add_option("--stage1-batch", tr.stage1_batch, "contrastive batch size");
    train->add_option("--stage1-lr", tr.stage1_lr, "contrastive learning rate");
    train->add_option("--stage1-momentum", tr.stage1_momentum, "contrastive momentum");
    train->add_option("--tau", tr.tau, "contrastive temperature");
    train->add_option("--stage2-epochs", tr.stage2_epochs, "classifier epochs");
    train->add_option("--stage2-batch", tr.stage2_batch, "classifier batch size");
    train->add_option("--stage2-lr", tr.stage2_lr, "classifier learning rate");
    auto* tr_seed = train->add_option("--seed", tr.seed, "training seed");

    EvaluateArgs ev;
    CLI::App* evaluate = app.add_subcommand("evaluate", "score a prediction dump");
    evaluate->add_option("--dump", ev.dump, "prediction dump")->required();
    evaluate->add_option("--out", ev.out, "report path")->required();
    evaluate->add_option("--bins", ev.bins, "calibration bins");
    evaluate->add_option("--ace-ranges", ev.ace_ranges, "adaptive ranges");
    evaluate->add_option("--smece-bandwidth", ev.smece_bandwidth, "kernel bandwidth");
    auto* ev_seed = evaluate->add_option("--seed", ev.seed, "report seed field");

    VerifyArgs vf;
    CLI::App* verify = app.add_subcommand("verify", "run the property sweep");
    verify->add_option("--batches", vf.batches, "bound-sweep batch count");
    verify->add_option("--pairs", vf.pairs, "identity-sweep pair count");
    verify->add_option("--instances", vf.instances, "gradient/metric instances");
    auto* vf_seed = verify->add_option("--seed", vf.seed, "sweep seed");
    verify->add_flag("--self-test", vf.self_test, "inject a sign fault; must fail");

    PitfallArgs pf;
    CLI::App* pitfall = app.add_subcommand("pitfall", "fixed-confidence post-processing demo");
    pitfall->add_option("--test-dump", pf.test_dump, "test prediction dump")->required();
    pitfall->add_option("--val-dump", pf.val_dump, "validation prediction dump")->required();
    pitfall->add_option("--out-dir", pf.out_dir, "output directory")->required();
    auto* pf_seed = pitfall->add_option("--seed", pf.seed, "report seed field");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadFlags;
    }

    gen.seed_given = gen_seed->count() > 0;
    tr.seed_given = tr_seed->count() > 0;
    ev.seed_given = ev_seed->count() > 0;
    vf.seed_given = vf_seed->count() > 0;
    pf.seed_given = pf_seed->count() > 0;

    try {
        if (generate->parsed()) return run_generate(gen);
        if (train->parsed()) return run_train(tr, train);
        if (evaluate->parsed()) return run_evaluate(ev);
        if (verify->parsed()) return run_verify(vf);
        if (pitfall->parsed()) return run_pitfall(pf);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitComputeFailure;
    }
    return kExitBadFlags;
}
