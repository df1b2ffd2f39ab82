#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "refcal/embeddings.hpp"
#include "refcal/error.hpp"
#include "refcal/matrix.hpp"

namespace refcal {

/// A scalar loss, optionally with the gradient of the summed/averaged value
/// with respect to the differentiated argument (embeddings: N x d,
/// logits: N x K).
struct LossValue {
    double value = 0.0;
    std::optional<Matrix> gradient;
};

/// Stage-2 calibration loss selector. epsilon applies to label smoothing,
/// gamma to the focal loss.
struct CalibrationLossSpec {
    enum class Kind { nll, label_smoothing, focal };
    Kind kind = Kind::nll;
    double epsilon = 0.0;
    double gamma = 0.0;
};

/// Numeric record of the contrastive upper bound on the refinement loss at
/// tau = 1, with every intermediate step of the inequality chain.
struct BoundReport {
    double supcon_tau1 = 0.0;
    double refinement = 0.0;
    double margin = 0.0;  // supcon_tau1 - refinement, strictly positive
    // Chain of lower bounds in proof order: after the averaging (Jensen)
    // step, after dropping the +1 inside the log, after the max/log-sum-exp
    // step. Monotonically non-increasing from supcon_tau1 down to refinement.
    std::array<double, 3> chain{};
};

class BoundViolation : public Error {
  public:
    BoundViolation(const BoundReport& report, const std::string& message)
        : Error(ErrorCode::bound_violation, message), report_(report) {}
    const BoundReport& report() const { return report_; }

  private:
    BoundReport report_;
};

/// Sum over anchors of (nearest-positive half squared distance minus
/// nearest-negative half squared distance). Value only; this quantity is a
/// diagnostic, optimized via its contrastive surrogate.
LossValue refinement_loss(const EmbeddingBatch& batch);

/// Supervised contrastive loss over unit embeddings at temperature tau > 0.
/// The gradient is taken with respect to the unit embeddings; chaining the
/// normalization Jacobian is the network module's job.
LossValue supcon_loss(const EmbeddingBatch& batch, double tau, bool want_gradient = false);

/// Raw contrastive evaluator on arbitrary (not necessarily unit) row vectors.
/// This is the function the analytic gradient differentiates; finite
/// difference checks probe it directly.
double supcon_value(const Matrix& vectors, const std::vector<int>& labels, double tau);

/// Evaluates the bound chain and checks every inequality (slack 1e-9, margin
/// strictly positive). A violation signals an implementation bug and throws
/// BoundViolation carrying the full report.
BoundReport verify_bound(const EmbeddingBatch& batch);

/// Computes the bound chain without asserting the ordering.
BoundReport bound_report(const EmbeddingBatch& batch);

/// Mean cross-entropy of softmax(logits) against integer labels.
LossValue nll_loss(const Matrix& logits, const std::vector<int>& labels,
                   bool want_gradient = false);

/// Cross-entropy against the smoothed target: 1 - epsilon on the true class,
/// epsilon / (K - 1) elsewhere. epsilon = 0 reduces exactly to nll_loss.
LossValue label_smoothing_loss(const Matrix& logits, const std::vector<int>& labels,
                               double epsilon, bool want_gradient = false);

/// Mean of (1 - p)^gamma * (-log p) over the true-class softmax probability p.
/// gamma = 0 reduces exactly to nll_loss.
LossValue focal_loss(const Matrix& logits, const std::vector<int>& labels, double gamma,
                     bool want_gradient = false);

/// Dispatches on the spec's kind.
LossValue calibration_loss(const Matrix& logits, const std::vector<int>& labels,
                           const CalibrationLossSpec& spec, bool want_gradient = false);

/// Row-stochastic softmax with per-row max subtraction.
Matrix softmax(const Matrix& logits);

/// Per-row log softmax, same stabilization.
Matrix log_softmax(const Matrix& logits);

}  // namespace refcal
