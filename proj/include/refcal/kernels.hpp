#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "refcal/matrix.hpp"

// OpenMP-parallel kernels behind the losses, metrics, and network modules.
// Every kernel writes per-index results into preallocated storage from
// parallel loops and leaves reductions to fixed-order serial sums, so outputs
// are bit-identical for any thread count. Serial counterparts used as test
// oracles and benchmark baselines live in refcal/reference.hpp.

namespace refcal::kernels {

/// Sum in ascending index order. The reduction order is part of the library's
/// determinism contract.
double fixed_order_sum(std::span<const double> values);

/// Gram matrix of row dot products (N x N), parallel over rows.
Matrix pairwise_dot(const Matrix& vectors);

/// Per-anchor refinement terms: half the squared distance to the nearest
/// same-label row minus half the squared distance to the nearest
/// different-label row. Throws EmptyPositiveSet / EmptyNegativeSet naming the
/// anchor.
std::vector<double> refinement_terms(const Matrix& vectors, const std::vector<int>& labels);

/// Per-anchor contrastive terms at temperature tau, log-sum-exp stabilized.
/// When `coefficients` is non-null it receives the N x N matrix C with
/// C(i, a) = softmax_i(a) - [a positive for i] / |P_i| over a != i, the
/// anchor-side multipliers of the analytic gradient.
std::vector<double> supcon_terms(const Matrix& vectors, const std::vector<int>& labels,
                                 double tau, Matrix* coefficients);

/// Gradient of the summed contrastive loss with respect to the rows of
/// `vectors`: (C + C^T) * vectors / tau, parallel over output rows.
Matrix supcon_gradient(const Matrix& vectors, const Matrix& coefficients, double tau);

/// Per-anchor values of each step in the contrastive-bound chain at tau = 1.
struct BoundTerms {
    std::vector<double> supcon;      // contrastive term
    std::vector<double> jensen;      // after averaging inside the log
    std::vector<double> drop_one;    // after log(1 + x) -> log(x)
    std::vector<double> max_bound;   // after max / log-sum-exp bounds
    std::vector<double> refinement;  // nearest-neighbor form
};
BoundTerms bound_terms(const Matrix& vectors, const std::vector<int>& labels);

/// Kernel-smoothed accuracy per sample: Gaussian weights over top-label
/// confidences, normalized to sum to one per anchor.
std::vector<double> smooth_accuracy(std::span<const double> confidences,
                                    std::span<const std::uint8_t> correct, double bandwidth);

/// Batched affine map: out(b, :) = weight * in(b, :) + bias. Parallel over
/// batch rows.
void dense_forward(const Matrix& input, const Matrix& weight, std::span<const double> bias,
                   Matrix& output);

/// Backward products for a dense layer. d_input may be null when the caller
/// does not need it (first layer). Weight gradients accumulate over the batch
/// in fixed index order.
void dense_backward(const Matrix& input, const Matrix& weight, const Matrix& d_output,
                    Matrix* d_weight, std::vector<double>* d_bias, Matrix* d_input);

}  // namespace refcal::kernels
