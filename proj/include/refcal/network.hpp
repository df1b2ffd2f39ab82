#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refcal/embeddings.hpp"
#include "refcal/matrix.hpp"

namespace refcal {

struct DenseLayer {
    Matrix weight;             // out x in, row-major
    std::vector<double> bias;  // out

    bool operator==(const DenseLayer&) const = default;
};

/// Encoder (rectified-linear hidden layers, linear representation layer),
/// unit-norm projection head, linear classifier, and the post-hoc logit
/// temperature. The classifier reads the representation, not the projection.
struct NetworkParams {
    std::vector<DenseLayer> encoder;  // may be empty (identity encoder)
    DenseLayer projection;
    DenseLayer classifier;
    double temperature = 1.0;

    bool operator==(const NetworkParams&) const = default;
};

/// Gradients in the same shapes as the parameters they address.
struct ParamGrads {
    std::vector<DenseLayer> encoder;
    DenseLayer projection;
    DenseLayer classifier;
};

struct NetworkShape {
    int input_dim = 16;
    std::vector<int> encoder_dims = {64, 32};  // hidden..., representation
    int projection_dim = 16;
    int num_classes = 2;
};

/// Momentum SGD state. Velocity buffers are sized from the first step.
struct OptimizerState {
    double learning_rate = 0.1;
    double momentum = 0.9;
    std::uint64_t step = 0;
    ParamGrads velocity;
    bool velocity_ready = false;
};

/// Seeded uniform initialization in +-sqrt(6 / (fan_in + fan_out)), zero
/// biases.
NetworkParams init_network(const NetworkShape& shape, std::uint64_t seed);

/// Encoder output (representation) for a batch of inputs.
Matrix encode(const NetworkParams& params, const Matrix& inputs);

/// Representation -> projection -> unit sphere. Rows of the result are unit
/// norm regardless of parameter magnitudes.
Matrix embed(const NetworkParams& params, const Matrix& inputs);

EmbeddingBatch forward_embed(const NetworkParams& params, const Matrix& inputs,
                             std::vector<int> labels, int num_classes);

/// classifier(encoder(inputs)) / temperature.
Matrix forward_classify(const NetworkParams& params, const Matrix& inputs);

/// Reverse-mode gradients of the embedding path. `upstream` is the gradient
/// with respect to the unit embeddings; the unit-normalization Jacobian
/// (I - z z^T) / |v| is applied exactly. With frozen_encoder the encoder
/// blocks are identically zero.
ParamGrads backward_embed(const NetworkParams& params, const Matrix& inputs,
                          const Matrix& upstream, bool frozen_encoder);

/// Reverse-mode gradients of the classification path; `upstream` is the
/// gradient with respect to the temperature-scaled logits.
ParamGrads backward_classify(const NetworkParams& params, const Matrix& inputs,
                             const Matrix& upstream, bool frozen_encoder);

/// v <- momentum * v + g; p <- p - lr * v.
void sgd_step(NetworkParams& params, const ParamGrads& grads, OptimizerState& state);

/// Golden-section search for the temperature minimizing validation NLL of
/// softmax(logits / T), on log T in [log 0.05, log 20] to tolerance 1e-4.
/// Falls back to T = 1 if the search cannot improve on it, so the fitted
/// temperature never increases validation NLL.
double fit_temperature(const Matrix& logits, const std::vector<int>& labels);

/// Versioned self-describing checkpoint (magic string, shape header,
/// row-major 64-bit payload). Round-trips bit-exactly.
void save_checkpoint(const NetworkParams& params, const std::string& path);
NetworkParams load_checkpoint(const std::string& path);

}  // namespace refcal
