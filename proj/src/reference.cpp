#include "refcal/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace refcal::reference {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

bool in_bin(double value, int bin, int bins) {
    double lo = static_cast<double>(bin - 1) / bins;
    double hi = static_cast<double>(bin) / bins;
    if (bin == 1) return value <= hi;  // closed at zero
    return value > lo && value <= hi;
}

int argmax_row(const Matrix& m, std::size_t r) {
    int best = 0;
    for (std::size_t c = 1; c < m.cols(); ++c)
        if (m(r, c) > m(r, best)) best = static_cast<int>(c);
    return best;
}

}  // namespace

double refinement_loss(const Matrix& vectors, const std::vector<int>& labels) {
    const std::size_t n = vectors.rows();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double best_pos = std::numeric_limits<double>::infinity();
        double best_neg = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double d = sq_dist(vectors.row(i), vectors.row(j));
            if (labels[j] == labels[i])
                best_pos = std::min(best_pos, d);
            else
                best_neg = std::min(best_neg, d);
        }
        total += 0.5 * best_pos - 0.5 * best_neg;
    }
    return total;
}

double supcon_loss(const Matrix& vectors, const std::vector<int>& labels, double tau) {
    const std::size_t n = vectors.rows();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double denom = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
            if (a == i) continue;
            double dot = 0.0;
            for (std::size_t t = 0; t < vectors.cols(); ++t)
                dot += vectors(i, t) * vectors(a, t);
            denom += std::exp(dot / tau);
        }
        double inner = 0.0;
        std::size_t positives = 0;
        for (std::size_t p = 0; p < n; ++p) {
            if (p == i || labels[p] != labels[i]) continue;
            double dot = 0.0;
            for (std::size_t t = 0; t < vectors.cols(); ++t)
                dot += vectors(i, t) * vectors(p, t);
            inner += std::log(std::exp(dot / tau) / denom);
            ++positives;
        }
        total -= inner / static_cast<double>(positives);
    }
    return total;
}

double ece(const ProbabilityBatch& batch, int bins) {
    const std::size_t n = batch.probs.rows();
    double total = 0.0;
    for (int b = 1; b <= bins; ++b) {
        std::size_t count = 0, hits = 0;
        double conf_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            int pred = argmax_row(batch.probs, i);
            double conf = batch.probs(i, pred);
            if (!in_bin(conf, b, bins)) continue;
            ++count;
            conf_sum += conf;
            if (pred == batch.labels[i]) ++hits;
        }
        if (count == 0) continue;
        double acc = static_cast<double>(hits) / count;
        double conf = conf_sum / count;
        total += (static_cast<double>(count) / n) * std::fabs(acc - conf);
    }
    return total;
}

double sce(const ProbabilityBatch& batch, int bins) {
    const std::size_t n = batch.probs.rows();
    const std::size_t k = batch.probs.cols();
    double total = 0.0;
    for (int b = 1; b <= bins; ++b) {
        for (std::size_t j = 0; j < k; ++j) {
            std::size_t count = 0, hits = 0;
            double conf_sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double p = batch.probs(i, j);
                if (!in_bin(p, b, bins)) continue;
                ++count;
                conf_sum += p;
                if (batch.labels[i] == static_cast<int>(j)) ++hits;
            }
            if (count == 0) continue;
            double acc = static_cast<double>(hits) / count;
            double conf = conf_sum / count;
            total += (static_cast<double>(count) / n) * std::fabs(acc - conf);
        }
    }
    return total / static_cast<double>(k);
}

double ace(const ProbabilityBatch& batch, int ranges) {
    const std::size_t n = batch.probs.rows();
    const std::size_t k = batch.probs.cols();
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        std::vector<std::pair<double, std::size_t>> column(n);
        for (std::size_t i = 0; i < n; ++i) column[i] = {batch.probs(i, j), i};
        std::sort(column.begin(), column.end());
        std::size_t base = n / static_cast<std::size_t>(ranges);
        std::size_t start = 0;
        for (int r = 0; r < ranges; ++r) {
            std::size_t stop = r == ranges - 1 ? n : start + base;
            std::size_t hits = 0;
            double conf_sum = 0.0;
            for (std::size_t t = start; t < stop; ++t) {
                conf_sum += column[t].first;
                if (batch.labels[column[t].second] == static_cast<int>(j)) ++hits;
            }
            double acc = static_cast<double>(hits) / static_cast<double>(stop - start);
            double conf = conf_sum / static_cast<double>(stop - start);
            total += std::fabs(acc - conf);
            start = stop;
        }
    }
    return total / (static_cast<double>(k) * static_cast<double>(ranges));
}

double smece(const ProbabilityBatch& batch, double bandwidth) {
    const std::size_t n = batch.probs.rows();
    std::vector<double> conf(n);
    std::vector<int> correct(n);
    for (std::size_t i = 0; i < n; ++i) {
        int pred = argmax_row(batch.probs, i);
        conf[i] = batch.probs(i, pred);
        correct[i] = pred == batch.labels[i] ? 1 : 0;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double w = std::exp(-(conf[i] - conf[j]) * (conf[i] - conf[j]) /
                                (2.0 * bandwidth * bandwidth));
            den += w;
            num += w * correct[j];
        }
        total += std::fabs(num / den - conf[i]);
    }
    return total / static_cast<double>(n);
}

double pairwise_auc(std::span<const double> positives, std::span<const double> negatives) {
    double wins = 0.0;
    for (double p : positives) {
        for (double q : negatives) {
            if (p > q)
                wins += 1.0;
            else if (p == q)
                wins += 0.5;
        }
    }
    return wins / (static_cast<double>(positives.size()) * static_cast<double>(negatives.size()));
}

double auc_refinement(const ProbabilityBatch& batch) {
    std::vector<double> correct, incorrect;
    for (std::size_t i = 0; i < batch.probs.rows(); ++i) {
        int pred = argmax_row(batch.probs, i);
        double conf = batch.probs(i, pred);
        if (pred == batch.labels[i])
            correct.push_back(conf);
        else
            incorrect.push_back(conf);
    }
    return pairwise_auc(correct, incorrect);
}

namespace {

std::vector<double> candidate_thresholds(std::span<const double> a, std::span<const double> b) {
    std::vector<double> t(a.begin(), a.end());
    t.insert(t.end(), b.begin(), b.end());
    std::sort(t.begin(), t.end(), std::greater<>());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return t;
}

double rate_at_least(std::span<const double> scores, double threshold) {
    std::size_t count = 0;
    for (double s : scores)
        if (s >= threshold) ++count;
    return static_cast<double>(count) / static_cast<double>(scores.size());
}

}  // namespace

double fpr_at_tpr95(std::span<const double> id_scores, std::span<const double> ood_scores) {
    for (double t : candidate_thresholds(id_scores, ood_scores)) {
        if (rate_at_least(id_scores, t) >= 0.95) return rate_at_least(ood_scores, t);
    }
    return 1.0;
}

double detection_error(std::span<const double> id_scores, std::span<const double> ood_scores) {
    double best = 0.5;
    for (double t : candidate_thresholds(id_scores, ood_scores)) {
        double tpr = rate_at_least(id_scores, t);
        double fpr = rate_at_least(ood_scores, t);
        best = std::min(best, 0.5 * (1.0 - tpr) + 0.5 * fpr);
    }
    return best;
}

double aupr(std::span<const double> positives, std::span<const double> negatives) {
    auto thresholds = candidate_thresholds(positives, negatives);
    double area = 0.0;
    double prev_recall = 0.0;
    for (double t : thresholds) {
        double tp = 0.0, fp = 0.0;
        for (double s : positives)
            if (s >= t) tp += 1.0;
        for (double s : negatives)
            if (s >= t) fp += 1.0;
        double recall = tp / static_cast<double>(positives.size());
        double precision = tp / (tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return area;
}

}  // namespace refcal::reference
