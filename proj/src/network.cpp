#include "refcal/network.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "refcal/error.hpp"
#include "refcal/kernels.hpp"
#include "refcal/losses.hpp"
#include "refcal/rng.hpp"

namespace refcal {

namespace {

DenseLayer init_layer(int out_dim, int in_dim, Rng& rng) {
    DenseLayer layer;
    layer.weight = Matrix(out_dim, in_dim);
    double r = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
    for (std::size_t i = 0; i < layer.weight.size(); ++i)
        layer.weight.data()[i] = rng.uniform(-r, r);
    layer.bias.assign(out_dim, 0.0);
    return layer;
}

Matrix relu(const Matrix& m) {
    Matrix out = m;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (out.data()[i] < 0.0) out.data()[i] = 0.0;
    return out;
}

struct EncoderTrace {
    std::vector<Matrix> pre;         // pre-activation per layer
    std::vector<Matrix> activation;  // layer inputs: activation[l] feeds layer l
};

Matrix run_encoder(const NetworkParams& params, const Matrix& inputs, EncoderTrace* trace) {
    Matrix h = inputs;
    if (trace) trace->activation.push_back(h);
    for (std::size_t l = 0; l < params.encoder.size(); ++l) {
        Matrix pre;
        kernels::dense_forward(h, params.encoder[l].weight, params.encoder[l].bias, pre);
        if (trace) trace->pre.push_back(pre);
        bool hidden = l + 1 < params.encoder.size();
        h = hidden ? relu(pre) : pre;  // representation layer stays linear
        if (trace && hidden) trace->activation.push_back(h);
    }
    return h;
}

ParamGrads zero_grads(const NetworkParams& params) {
    ParamGrads grads;
    grads.encoder.resize(params.encoder.size());
    for (std::size_t l = 0; l < params.encoder.size(); ++l) {
        grads.encoder[l].weight =
            Matrix(params.encoder[l].weight.rows(), params.encoder[l].weight.cols());
        grads.encoder[l].bias.assign(params.encoder[l].bias.size(), 0.0);
    }
    grads.projection.weight = Matrix(params.projection.weight.rows(),
                                     params.projection.weight.cols());
    grads.projection.bias.assign(params.projection.bias.size(), 0.0);
    grads.classifier.weight = Matrix(params.classifier.weight.rows(),
                                     params.classifier.weight.cols());
    grads.classifier.bias.assign(params.classifier.bias.size(), 0.0);
    return grads;
}

/// Backpropagates d_rep through the encoder into grads (no-op when frozen).
void encoder_backward(const NetworkParams& params, const EncoderTrace& trace, Matrix d_rep,
                      ParamGrads& grads) {
    for (std::size_t l = params.encoder.size(); l-- > 0;) {
        Matrix d_pre = std::move(d_rep);
        if (l + 1 < params.encoder.size()) {
            // hidden layer: chain through the rectifier (derivative 0 at 0)
            const Matrix& pre = trace.pre[l];
            for (std::size_t i = 0; i < d_pre.size(); ++i)
                if (pre.data()[i] <= 0.0) d_pre.data()[i] = 0.0;
        }
        Matrix d_input;
        kernels::dense_backward(trace.activation[l], params.encoder[l].weight, d_pre,
                                &grads.encoder[l].weight, &grads.encoder[l].bias,
                                l > 0 ? &d_input : nullptr);
        d_rep = std::move(d_input);
    }
}

void check_input_dim(const NetworkParams& params, const Matrix& inputs) {
    std::size_t expected = params.encoder.empty() ? params.projection.weight.cols()
                                                  : params.encoder.front().weight.cols();
    if (inputs.cols() != expected)
        throw Error(ErrorCode::shape_mismatch,
                    "input dimension " + std::to_string(inputs.cols()) + ", network expects " +
                        std::to_string(expected));
}

}  // namespace

NetworkParams init_network(const NetworkShape& shape, std::uint64_t seed) {
    if (shape.input_dim < 1 || shape.projection_dim < 1 || shape.num_classes < 2)
        throw Error(ErrorCode::config_invalid, "degenerate network shape");
    Rng rng(seed);
    NetworkParams params;
    int in_dim = shape.input_dim;
    for (int out_dim : shape.encoder_dims) {
        params.encoder.push_back(init_layer(out_dim, in_dim, rng));
        in_dim = out_dim;
    }
    params.projection = init_layer(shape.projection_dim, in_dim, rng);
    params.classifier = init_layer(shape.num_classes, in_dim, rng);
    params.temperature = 1.0;
    return params;
}

Matrix encode(const NetworkParams& params, const Matrix& inputs) {
    check_input_dim(params, inputs);
    return run_encoder(params, inputs, nullptr);
}

Matrix embed(const NetworkParams& params, const Matrix& inputs) {
    Matrix rep = encode(params, inputs);
    Matrix projected;
    kernels::dense_forward(rep, params.projection.weight, params.projection.bias, projected);
    return normalize_to_sphere(projected);
}

EmbeddingBatch forward_embed(const NetworkParams& params, const Matrix& inputs,
                             std::vector<int> labels, int num_classes) {
    return make_embedding_batch(embed(params, inputs), std::move(labels), num_classes);
}

Matrix forward_classify(const NetworkParams& params, const Matrix& inputs) {
    if (params.temperature <= 0.0)
        throw Error(ErrorCode::non_positive_temperature, "temperature must be positive");
    Matrix rep = encode(params, inputs);
    Matrix logits;
    kernels::dense_forward(rep, params.classifier.weight, params.classifier.bias, logits);
    for (std::size_t i = 0; i < logits.size(); ++i) logits.data()[i] /= params.temperature;
    return logits;
}

ParamGrads backward_embed(const NetworkParams& params, const Matrix& inputs,
                          const Matrix& upstream, bool frozen_encoder) {
    check_input_dim(params, inputs);
    EncoderTrace trace;
    Matrix rep = run_encoder(params, inputs, &trace);
    Matrix projected;
    kernels::dense_forward(rep, params.projection.weight, params.projection.bias, projected);
    if (upstream.rows() != projected.rows() || upstream.cols() != projected.cols())
        throw Error(ErrorCode::shape_mismatch, "upstream gradient shape mismatch");

    // Unit-normalization Jacobian: dL/dv = (dL/dz - (dL/dz . z) z) / |v|.
    Matrix d_projected(projected.rows(), projected.cols());
    for (std::size_t b = 0; b < projected.rows(); ++b) {
        auto v = projected.row(b);
        double norm_sq = 0.0;
        for (double x : v) norm_sq += x * x;
        double norm = std::sqrt(norm_sq);
        if (norm < 1e-12)
            throw Error(ErrorCode::zero_vector,
                        "projection row " + std::to_string(b) + " has norm below 1e-12");
        double dot = 0.0;
        for (std::size_t c = 0; c < v.size(); ++c) dot += upstream(b, c) * v[c] / norm;
        for (std::size_t c = 0; c < v.size(); ++c)
            d_projected(b, c) = (upstream(b, c) - dot * v[c] / norm) / norm;
    }

    ParamGrads grads = zero_grads(params);
    Matrix d_rep;
    kernels::dense_backward(rep, params.projection.weight, d_projected, &grads.projection.weight,
                            &grads.projection.bias,
                            frozen_encoder || params.encoder.empty() ? nullptr : &d_rep);
    if (!frozen_encoder && !params.encoder.empty())
        encoder_backward(params, trace, std::move(d_rep), grads);
    return grads;
}

ParamGrads backward_classify(const NetworkParams& params, const Matrix& inputs,
                             const Matrix& upstream, bool frozen_encoder) {
    check_input_dim(params, inputs);
    EncoderTrace trace;
    Matrix rep = run_encoder(params, inputs, &trace);
    if (upstream.rows() != rep.rows() ||
        upstream.cols() != params.classifier.weight.rows())
        throw Error(ErrorCode::shape_mismatch, "upstream gradient shape mismatch");

    // logits = raw / T, so the raw-logit gradient is upstream / T.
    Matrix d_raw = upstream;
    for (std::size_t i = 0; i < d_raw.size(); ++i) d_raw.data()[i] /= params.temperature;

    ParamGrads grads = zero_grads(params);
    Matrix d_rep;
    kernels::dense_backward(rep, params.classifier.weight, d_raw, &grads.classifier.weight,
                            &grads.classifier.bias,
                            frozen_encoder || params.encoder.empty() ? nullptr : &d_rep);
    if (!frozen_encoder && !params.encoder.empty())
        encoder_backward(params, trace, std::move(d_rep), grads);
    return grads;
}

namespace {

void momentum_update(Matrix& param, const Matrix& grad, Matrix& velocity, double lr,
                     double momentum) {
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity.data()[i] = momentum * velocity.data()[i] + grad.data()[i];
        param.data()[i] -= lr * velocity.data()[i];
    }
}

void momentum_update(std::vector<double>& param, const std::vector<double>& grad,
                     std::vector<double>& velocity, double lr, double momentum) {
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grad[i];
        param[i] -= lr * velocity[i];
    }
}

}  // namespace

void sgd_step(NetworkParams& params, const ParamGrads& grads, OptimizerState& state) {
    if (state.learning_rate <= 0.0 || state.momentum < 0.0 || state.momentum >= 1.0)
        throw Error(ErrorCode::config_invalid, "optimizer needs lr > 0 and momentum in [0, 1)");
    if (!state.velocity_ready) {
        state.velocity = zero_grads(params);
        state.velocity_ready = true;
    }
    for (std::size_t l = 0; l < params.encoder.size(); ++l) {
        momentum_update(params.encoder[l].weight, grads.encoder[l].weight,
                        state.velocity.encoder[l].weight, state.learning_rate, state.momentum);
        momentum_update(params.encoder[l].bias, grads.encoder[l].bias,
                        state.velocity.encoder[l].bias, state.learning_rate, state.momentum);
    }
    momentum_update(params.projection.weight, grads.projection.weight,
                    state.velocity.projection.weight, state.learning_rate, state.momentum);
    momentum_update(params.projection.bias, grads.projection.bias,
                    state.velocity.projection.bias, state.learning_rate, state.momentum);
    momentum_update(params.classifier.weight, grads.classifier.weight,
                    state.velocity.classifier.weight, state.learning_rate, state.momentum);
    momentum_update(params.classifier.bias, grads.classifier.bias,
                    state.velocity.classifier.bias, state.learning_rate, state.momentum);
    ++state.step;
}

double fit_temperature(const Matrix& logits, const std::vector<int>& labels) {
    if (logits.rows() == 0)
        throw Error(ErrorCode::empty_validation, "temperature fit needs validation samples");
    auto nll_at = [&](double temperature) {
        Matrix scaled = logits;
        for (std::size_t i = 0; i < scaled.size(); ++i) scaled.data()[i] /= temperature;
        return nll_loss(scaled, labels).value;
    };
    double lo = std::log(0.05);
    double hi = std::log(20.0);
    const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - ratio * (hi - lo);
    double x2 = lo + ratio * (hi - lo);
    double f1 = nll_at(std::exp(x1));
    double f2 = nll_at(std::exp(x2));
    while (hi - lo > 1e-4) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = nll_at(std::exp(x1));
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = nll_at(std::exp(x2));
        }
    }
    double fitted = std::exp(0.5 * (lo + hi));
    // Never leave the caller worse off than the untempered logits.
    if (nll_at(fitted) > nll_at(1.0)) fitted = 1.0;
    return fitted;
}

void save_checkpoint(const NetworkParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io_error, "cannot open " + path + " for writing");
    std::size_t input_dim = params.encoder.empty() ? params.projection.weight.cols()
                                                   : params.encoder.front().weight.cols();
    out << "refcal-checkpoint v1\n";
    out << "layers=" << params.encoder.size() << " dims=" << input_dim;
    for (const DenseLayer& layer : params.encoder) out << "," << layer.weight.rows();
    out << " proj=" << params.projection.weight.rows()
        << " classes=" << params.classifier.weight.rows() << "\n";
    auto write_doubles = [&out](const double* data, std::size_t count) {
        out.write(reinterpret_cast<const char*>(data),
                  static_cast<std::streamsize>(count * sizeof(double)));
    };
    auto write_layer = [&](const DenseLayer& layer) {
        write_doubles(layer.weight.data(), layer.weight.size());
        write_doubles(layer.bias.data(), layer.bias.size());
    };
    for (const DenseLayer& layer : params.encoder) write_layer(layer);
    write_layer(params.projection);
    write_layer(params.classifier);
    write_doubles(&params.temperature, 1);
    if (!out) throw Error(ErrorCode::io_error, "failed writing " + path);
}

NetworkParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_error, "cannot open " + path);
    std::string magic;
    std::getline(in, magic);
    if (magic != "refcal-checkpoint v1")
        throw Error(ErrorCode::parse_error, path + ": bad checkpoint magic");
    std::string header;
    std::getline(in, header);
    std::size_t layers = 0, proj = 0, classes = 0;
    std::vector<std::size_t> dims;
    try {
        std::istringstream hs(header);
        std::string token;
        while (hs >> token) {
            if (token.rfind("layers=", 0) == 0) {
                layers = std::stoul(token.substr(7));
            } else if (token.rfind("dims=", 0) == 0) {
                std::istringstream ds(token.substr(5));
                std::string piece;
                while (std::getline(ds, piece, ',')) dims.push_back(std::stoul(piece));
            } else if (token.rfind("proj=", 0) == 0) {
                proj = std::stoul(token.substr(5));
            } else if (token.rfind("classes=", 0) == 0) {
                classes = std::stoul(token.substr(8));
            }
        }
    } catch (const std::exception&) {
        throw Error(ErrorCode::parse_error, path + ": malformed checkpoint header");
    }
    if (dims.size() != layers + 1 || proj == 0 || classes == 0)
        throw Error(ErrorCode::parse_error, path + ": inconsistent checkpoint header");
    auto read_doubles = [&in, &path](double* data, std::size_t count) {
        in.read(reinterpret_cast<char*>(data),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) throw Error(ErrorCode::parse_error, path + ": truncated checkpoint payload");
    };
    auto read_layer = [&](std::size_t out_dim, std::size_t in_dim) {
        DenseLayer layer;
        layer.weight = Matrix(out_dim, in_dim);
        layer.bias.assign(out_dim, 0.0);
        read_doubles(layer.weight.data(), layer.weight.size());
        read_doubles(layer.bias.data(), layer.bias.size());
        return layer;
    };
    NetworkParams params;
    for (std::size_t l = 0; l < layers; ++l)
        params.encoder.push_back(read_layer(dims[l + 1], dims[l]));
    params.projection = read_layer(proj, dims.back());
    params.classifier = read_layer(classes, dims.back());
    read_doubles(&params.temperature, 1);
    char extra;
    if (in.read(&extra, 1))
        throw Error(ErrorCode::parse_error, path + ": trailing bytes in checkpoint");
    return params;
}

}  // namespace refcal
