#include "refcal/kernels.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "refcal/embeddings.hpp"
#include "refcal/error.hpp"

namespace refcal::kernels {

double fixed_order_sum(std::span<const double> values) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
}

Matrix pairwise_dot(const Matrix& vectors) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(vectors.rows());
    const std::size_t d = vectors.cols();
    Matrix dots(n, n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const double* zi = vectors.row(i).data();
        for (std::ptrdiff_t j = 0; j < n; ++j) {
            const double* zj = vectors.row(j).data();
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += zi[k] * zj[k];
            dots(i, j) = dot;
        }
    }
    return dots;
}

std::vector<double> refinement_terms(const Matrix& vectors, const std::vector<int>& labels) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(vectors.rows());
    std::vector<double> terms(n);
    int bad_positive = -1;
    int bad_negative = -1;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        double min_pos = std::numeric_limits<double>::infinity();
        double min_neg = std::numeric_limits<double>::infinity();
        for (std::ptrdiff_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double dist = squared_distance(vectors.row(i), vectors.row(j));
            if (labels[j] == labels[i])
                min_pos = std::min(min_pos, dist);
            else
                min_neg = std::min(min_neg, dist);
        }
        if (!std::isfinite(min_pos)) {
#pragma omp critical
            bad_positive = static_cast<int>(i);
        } else if (!std::isfinite(min_neg)) {
#pragma omp critical
            bad_negative = static_cast<int>(i);
        }
        terms[i] = 0.5 * min_pos - 0.5 * min_neg;
    }
    if (bad_positive >= 0)
        throw Error(ErrorCode::empty_positive_set,
                    "anchor " + std::to_string(bad_positive) + " has no positive sample");
    if (bad_negative >= 0)
        throw Error(ErrorCode::empty_negative_set,
                    "anchor " + std::to_string(bad_negative) + " has no negative sample");
    return terms;
}

std::vector<double> supcon_terms(const Matrix& vectors, const std::vector<int>& labels,
                                 double tau, Matrix* coefficients) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(vectors.rows());
    Matrix dots = pairwise_dot(vectors);
    std::vector<double> terms(n);
    if (coefficients) *coefficients = Matrix(n, n);
    int bad_positive = -1;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        int positive_count = 0;
        double max_sim = -std::numeric_limits<double>::infinity();
        for (std::ptrdiff_t a = 0; a < n; ++a) {
            if (a == i) continue;
            if (labels[a] == labels[i]) ++positive_count;
            max_sim = std::max(max_sim, dots(i, a) / tau);
        }
        if (positive_count == 0) {
#pragma omp critical
            bad_positive = static_cast<int>(i);
            continue;
        }
        double denom = 0.0;
        double positive_sim_sum = 0.0;
        for (std::ptrdiff_t a = 0; a < n; ++a) {
            if (a == i) continue;
            denom += std::exp(dots(i, a) / tau - max_sim);
            if (labels[a] == labels[i]) positive_sim_sum += dots(i, a) / tau;
        }
        double log_denom = max_sim + std::log(denom);
        terms[i] = log_denom - positive_sim_sum / positive_count;
        if (coefficients) {
            for (std::ptrdiff_t a = 0; a < n; ++a) {
                if (a == i) continue;
                double soft = std::exp(dots(i, a) / tau - max_sim) / denom;
                double pos = labels[a] == labels[i] ? 1.0 / positive_count : 0.0;
                (*coefficients)(i, a) = soft - pos;
            }
        }
    }
    if (bad_positive >= 0)
        throw Error(ErrorCode::empty_positive_set,
                    "anchor " + std::to_string(bad_positive) + " has no positive sample");
    return terms;
}

Matrix supcon_gradient(const Matrix& vectors, const Matrix& coefficients, double tau) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(vectors.rows());
    const std::size_t d = vectors.cols();
    Matrix grad(n, d);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < n; ++k) {
        for (std::ptrdiff_t j = 0; j < n; ++j) {
            double c = coefficients(k, j) + coefficients(j, k);
            if (c == 0.0) continue;
            const double* zj = vectors.row(j).data();
            double* gk = grad.row(k).data();
            for (std::size_t t = 0; t < d; ++t) gk[t] += c * zj[t];
        }
        for (double& g : grad.row(k)) g /= tau;
    }
    return grad;
}

BoundTerms bound_terms(const Matrix& vectors, const std::vector<int>& labels) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(vectors.rows());
    Matrix dots = pairwise_dot(vectors);
    BoundTerms out;
    out.supcon.resize(n);
    out.jensen.resize(n);
    out.drop_one.resize(n);
    out.max_bound.resize(n);
    out.refinement = refinement_terms(vectors, labels);
    int bad_positive = -1;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        int positive_count = 0;
        double max_pos = -std::numeric_limits<double>::infinity();
        double max_neg = -std::numeric_limits<double>::infinity();
        double max_sim = -std::numeric_limits<double>::infinity();
        for (std::ptrdiff_t a = 0; a < n; ++a) {
            if (a == i) continue;
            double sim = dots(i, a);
            max_sim = std::max(max_sim, sim);
            if (labels[a] == labels[i]) {
                ++positive_count;
                max_pos = std::max(max_pos, sim);
            } else {
                max_neg = std::max(max_neg, sim);
            }
        }
        if (positive_count == 0) {
#pragma omp critical
            bad_positive = static_cast<int>(i);
            continue;
        }
        double pos_exp_sum = 0.0;  // shifted exponential sums
        double neg_exp_sum = 0.0;
        double pos_sim_sum = 0.0;
        for (std::ptrdiff_t a = 0; a < n; ++a) {
            if (a == i) continue;
            double sim = dots(i, a);
            if (labels[a] == labels[i]) {
                pos_exp_sum += std::exp(sim - max_sim);
                pos_sim_sum += sim;
            } else {
                neg_exp_sum += std::exp(sim - max_sim);
            }
        }
        double log_all = max_sim + std::log(pos_exp_sum + neg_exp_sum);
        double log_pos = max_sim + std::log(pos_exp_sum);
        double log_neg = max_sim + std::log(neg_exp_sum);
        out.supcon[i] = log_all - pos_sim_sum / positive_count;
        out.jensen[i] = log_all - log_pos + std::log(static_cast<double>(positive_count));
        out.drop_one[i] = log_neg - log_pos + std::log(static_cast<double>(positive_count));
        out.max_bound[i] = max_neg - max_pos;
    }
    if (bad_positive >= 0)
        throw Error(ErrorCode::empty_positive_set,
                    "anchor " + std::to_string(bad_positive) + " has no positive sample");
    return out;
}

std::vector<double> smooth_accuracy(std::span<const double> confidences,
                                    std::span<const std::uint8_t> correct, double bandwidth) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(confidences.size());
    std::vector<double> out(n);
    const double inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        double weight_sum = 0.0;
        double acc_sum = 0.0;
        for (std::ptrdiff_t j = 0; j < n; ++j) {
            double diff = confidences[i] - confidences[j];
            double w = std::exp(-diff * diff * inv_two_h2);
            weight_sum += w;
            if (correct[j]) acc_sum += w;
        }
        out[i] = acc_sum / weight_sum;
    }
    return out;
}

void dense_forward(const Matrix& input, const Matrix& weight, std::span<const double> bias,
                   Matrix& output) {
    const std::ptrdiff_t batch = static_cast<std::ptrdiff_t>(input.rows());
    const std::size_t in_dim = weight.cols();
    const std::size_t out_dim = weight.rows();
    if (input.cols() != in_dim)
        throw Error(ErrorCode::shape_mismatch, "dense layer input dimension mismatch");
    output = Matrix(batch, out_dim);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < batch; ++b) {
        const double* x = input.row(b).data();
        double* y = output.row(b).data();
        for (std::size_t o = 0; o < out_dim; ++o) {
            const double* w = weight.row(o).data();
            double acc = bias[o];
            for (std::size_t i = 0; i < in_dim; ++i) acc += w[i] * x[i];
            y[o] = acc;
        }
    }
}

void dense_backward(const Matrix& input, const Matrix& weight, const Matrix& d_output,
                    Matrix* d_weight, std::vector<double>* d_bias, Matrix* d_input) {
    const std::ptrdiff_t batch = static_cast<std::ptrdiff_t>(input.rows());
    const std::size_t in_dim = weight.cols();
    const std::size_t out_dim = weight.rows();
    if (d_weight) {
        *d_weight = Matrix(out_dim, in_dim);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t o = 0; o < static_cast<std::ptrdiff_t>(out_dim); ++o) {
            double* dw = d_weight->row(o).data();
            for (std::ptrdiff_t b = 0; b < batch; ++b) {
                const double g = d_output(b, o);
                if (g == 0.0) continue;
                const double* x = input.row(b).data();
                for (std::size_t i = 0; i < in_dim; ++i) dw[i] += g * x[i];
            }
        }
    }
    if (d_bias) {
        d_bias->assign(out_dim, 0.0);
        for (std::ptrdiff_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < out_dim; ++o) (*d_bias)[o] += d_output(b, o);
    }
    if (d_input) {
        *d_input = Matrix(batch, in_dim);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t b = 0; b < batch; ++b) {
            double* dx = d_input->row(b).data();
            const double* dy = d_output.row(b).data();
            for (std::size_t o = 0; o < out_dim; ++o) {
                const double g = dy[o];
                if (g == 0.0) continue;
                const double* w = weight.row(o).data();
                for (std::size_t i = 0; i < in_dim; ++i) dx[i] += g * w[i];
            }
        }
    }
}

}  // namespace refcal::kernels
