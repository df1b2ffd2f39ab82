#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "refcal/embeddings.hpp"
#include "refcal/matrix.hpp"
#include "refcal/metrics.hpp"
#include "refcal/network.hpp"
#include "refcal/rng.hpp"

// Self-contained property sweeps behind the `verify` command: similarity
// identity, bound-chain ordering, analytic-vs-numeric gradients, and metric
// implementations against their serial brute-force references.

namespace refcal::verification {

struct PropertyResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct Options {
    std::uint64_t seed = 977;
    int identity_pairs = 1000;       // per dimension in {2, 8, 64}
    int bound_batches = 1000;
    int gradient_instances = 100;    // per loss / per composition
    int metric_instances = 100;
    bool inject_fault = false;       // self-test: flips a sign internally
};

std::vector<PropertyResult> run_all(const Options& options);

PropertyResult check_cosine_identity(const Options& options);
PropertyResult check_bound_sweep(const Options& options);
PropertyResult check_loss_gradients(const Options& options);
PropertyResult check_network_gradients(const Options& options);
PropertyResult check_metric_oracles(const Options& options);
PropertyResult check_calibrated_simulation(const Options& options);

/// Random unit rows (normalized Gaussian draws).
Matrix random_unit_rows(Rng& rng, int count, int dim);

/// Random valid batch: every class present at least twice.
EmbeddingBatch random_embedding_batch(Rng& rng, int count, int dim, int num_classes);

/// Random row-stochastic batch with uniform labels.
ProbabilityBatch random_probability_batch(Rng& rng, int count, int num_classes);

/// Central finite differences of f over every entry of x.
Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, Matrix x,
                        double step = 1e-5);

/// Mutable views of every parameter scalar, in a fixed order.
std::vector<double*> parameter_refs(NetworkParams& params);

/// Gradient scalars in the order matching parameter_refs.
std::vector<double> flatten_grads(const ParamGrads& grads);

/// Central finite differences of f over every network parameter.
std::vector<double> numeric_parameter_gradient(const std::function<double()>& f,
                                               NetworkParams& params, double step = 1e-5);

/// |a - b| / max(|a|, |b|, floor).
double relative_error(double a, double b, double floor = 1e-6);

double max_relative_error(const std::vector<double>& analytic,
                          const std::vector<double>& numeric);

}  // namespace refcal::verification
