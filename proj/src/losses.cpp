#include "refcal/losses.hpp"

#include <cmath>
#include <sstream>

#include "refcal/kernels.hpp"

namespace refcal {

namespace {

constexpr double kBoundSlack = 1e-9;

void check_labels(const Matrix& logits, const std::vector<int>& labels) {
    if (labels.size() != logits.rows())
        throw Error(ErrorCode::shape_mismatch, "label count does not match logit rows");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= static_cast<int>(logits.cols()))
            throw Error(ErrorCode::label_out_of_range,
                        "label " + std::to_string(labels[i]) + " at sample " + std::to_string(i));
    }
}

}  // namespace

Matrix log_softmax(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto row = logits.row(r);
        double max_logit = row[0];
        for (double v : row) max_logit = std::max(max_logit, v);
        double sum = 0.0;
        for (double v : row) sum += std::exp(v - max_logit);
        double log_denom = max_logit + std::log(sum);
        for (std::size_t c = 0; c < logits.cols(); ++c) out(r, c) = row[c] - log_denom;
    }
    return out;
}

Matrix softmax(const Matrix& logits) {
    Matrix out = log_softmax(logits);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::exp(out.data()[i]);
    return out;
}

LossValue refinement_loss(const EmbeddingBatch& batch) {
    auto terms = kernels::refinement_terms(batch.vectors, batch.labels);
    return LossValue{kernels::fixed_order_sum(terms), std::nullopt};
}

double supcon_value(const Matrix& vectors, const std::vector<int>& labels, double tau) {
    if (tau <= 0.0)
        throw Error(ErrorCode::non_positive_temperature, "tau must be positive");
    auto terms = kernels::supcon_terms(vectors, labels, tau, nullptr);
    return kernels::fixed_order_sum(terms);
}

LossValue supcon_loss(const EmbeddingBatch& batch, double tau, bool want_gradient) {
    if (tau <= 0.0)
        throw Error(ErrorCode::non_positive_temperature, "tau must be positive");
    require_two_per_class(batch);
    LossValue result;
    if (want_gradient) {
        Matrix coefficients;
        auto terms = kernels::supcon_terms(batch.vectors, batch.labels, tau, &coefficients);
        result.value = kernels::fixed_order_sum(terms);
        result.gradient = kernels::supcon_gradient(batch.vectors, coefficients, tau);
    } else {
        auto terms = kernels::supcon_terms(batch.vectors, batch.labels, tau, nullptr);
        result.value = kernels::fixed_order_sum(terms);
    }
    return result;
}

BoundReport bound_report(const EmbeddingBatch& batch) {
    require_two_per_class(batch);
    auto terms = kernels::bound_terms(batch.vectors, batch.labels);
    BoundReport report;
    report.supcon_tau1 = kernels::fixed_order_sum(terms.supcon);
    report.chain[0] = kernels::fixed_order_sum(terms.jensen);
    report.chain[1] = kernels::fixed_order_sum(terms.drop_one);
    report.chain[2] = kernels::fixed_order_sum(terms.max_bound);
    report.refinement = kernels::fixed_order_sum(terms.refinement);
    report.margin = report.supcon_tau1 - report.refinement;
    return report;
}

BoundReport verify_bound(const EmbeddingBatch& batch) {
    BoundReport report = bound_report(batch);
    auto fail = [&report](const char* step, double lhs, double rhs) {
        std::ostringstream msg;
        msg << step << " violated: " << lhs << " < " << rhs << " (margin " << report.margin
            << ")";
        throw BoundViolation(report, msg.str());
    };
    if (report.supcon_tau1 < report.chain[0] - kBoundSlack)
        fail("contrastive >= averaging step", report.supcon_tau1, report.chain[0]);
    if (report.chain[0] < report.chain[1] - kBoundSlack)
        fail("averaging step >= drop-one step", report.chain[0], report.chain[1]);
    if (report.chain[1] < report.chain[2] - kBoundSlack)
        fail("drop-one step >= max bound step", report.chain[1], report.chain[2]);
    if (report.chain[2] < report.refinement - kBoundSlack)
        fail("max bound step >= refinement", report.chain[2], report.refinement);
    if (!(report.margin > 0.0))
        fail("strict margin", report.supcon_tau1, report.refinement);
    return report;
}

LossValue nll_loss(const Matrix& logits, const std::vector<int>& labels, bool want_gradient) {
    check_labels(logits, labels);
    const std::size_t n = logits.rows();
    Matrix log_probs = log_softmax(logits);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total -= log_probs(i, labels[i]);
    LossValue result{total / static_cast<double>(n), std::nullopt};
    if (want_gradient) {
        Matrix grad(n, logits.cols());
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < logits.cols(); ++c)
                grad(i, c) = std::exp(log_probs(i, c)) / static_cast<double>(n);
            grad(i, labels[i]) -= 1.0 / static_cast<double>(n);
        }
        result.gradient = std::move(grad);
    }
    return result;
}

LossValue label_smoothing_loss(const Matrix& logits, const std::vector<int>& labels,
                               double epsilon, bool want_gradient) {
    if (epsilon < 0.0 || epsilon >= 1.0)
        throw Error(ErrorCode::epsilon_out_of_range, "epsilon must lie in [0, 1)");
    // epsilon = 0 is exactly cross-entropy; delegating keeps the reduction
    // bit-identical, gradients included.
    if (epsilon == 0.0) return nll_loss(logits, labels, want_gradient);
    check_labels(logits, labels);
    const std::size_t n = logits.rows();
    const std::size_t k = logits.cols();
    const double off_target = k > 1 ? epsilon / static_cast<double>(k - 1) : 0.0;
    const double on_target = 1.0 - epsilon;
    Matrix log_probs = log_softmax(logits);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < k; ++c) {
            double target = static_cast<int>(c) == labels[i] ? on_target : off_target;
            if (target != 0.0) total -= target * log_probs(i, c);
        }
    }
    LossValue result{total / static_cast<double>(n), std::nullopt};
    if (want_gradient) {
        Matrix grad(n, k);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < k; ++c) {
                double target = static_cast<int>(c) == labels[i] ? on_target : off_target;
                grad(i, c) = (std::exp(log_probs(i, c)) - target) / static_cast<double>(n);
            }
        }
        result.gradient = std::move(grad);
    }
    return result;
}

LossValue focal_loss(const Matrix& logits, const std::vector<int>& labels, double gamma,
                     bool want_gradient) {
    if (gamma < 0.0) throw Error(ErrorCode::negative_gamma, "gamma must be non-negative");
    if (gamma == 0.0) return nll_loss(logits, labels, want_gradient);
    check_labels(logits, labels);
    const std::size_t n = logits.rows();
    const std::size_t k = logits.cols();
    Matrix log_probs = log_softmax(logits);
    double total = 0.0;
    Matrix grad;
    if (want_gradient) grad = Matrix(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        double log_p = log_probs(i, labels[i]);
        double p = std::exp(log_p);
        double one_minus_p = 1.0 - p;
        double focus = std::pow(one_minus_p, gamma);
        total -= focus * log_p;
        if (want_gradient) {
            // d/dp [(1-p)^g (-log p)] = g (1-p)^(g-1) log p - (1-p)^g / p
            double dp;
            if (one_minus_p <= 0.0) {
                dp = 0.0;  // saturated correct class: loss is flat here
            } else {
                dp = gamma * std::pow(one_minus_p, gamma - 1.0) * log_p - focus / p;
            }
            for (std::size_t c = 0; c < k; ++c) {
                double s = std::exp(log_probs(i, c));
                double indicator = static_cast<int>(c) == labels[i] ? 1.0 : 0.0;
                grad(i, c) = dp * p * (indicator - s) / static_cast<double>(n);
            }
        }
    }
    LossValue result{total / static_cast<double>(n), std::nullopt};
    if (want_gradient) result.gradient = std::move(grad);
    return result;
}

LossValue calibration_loss(const Matrix& logits, const std::vector<int>& labels,
                           const CalibrationLossSpec& spec, bool want_gradient) {
    switch (spec.kind) {
        case CalibrationLossSpec::Kind::nll:
            return nll_loss(logits, labels, want_gradient);
        case CalibrationLossSpec::Kind::label_smoothing:
            return label_smoothing_loss(logits, labels, spec.epsilon, want_gradient);
        case CalibrationLossSpec::Kind::focal:
            return focal_loss(logits, labels, spec.gamma, want_gradient);
    }
    throw Error(ErrorCode::config_invalid, "unknown calibration loss kind");
}

}  // namespace refcal
