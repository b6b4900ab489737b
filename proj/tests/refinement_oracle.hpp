#pragma once

// Independent straight-line oracle for the refinement procedures, plus tiny
// random episode helpers. Plain-double re-implementation kept free of any
// library math so it can serve as an equivalence oracle in both the unit
// tests and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <vector>

#include "fsl/refinement.hpp"
#include "fsl/rng.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat class_means(const Mat& support, const std::vector<int>& labels, int n) {
    const std::size_t d = support[0].size();
    Mat p(static_cast<std::size_t>(n), std::vector<double>(d, 0.0));
    std::vector<double> cnt(static_cast<std::size_t>(n), 0.0);
    for (std::size_t i = 0; i < support.size(); ++i) {
        cnt[static_cast<std::size_t>(labels[i])] += 1.0;
        for (std::size_t k = 0; k < d; ++k)
            p[static_cast<std::size_t>(labels[i])][k] += support[i][k];
    }
    for (int c = 0; c < n; ++c)
        for (std::size_t k = 0; k < d; ++k)
            p[static_cast<std::size_t>(c)][k] /= cnt[static_cast<std::size_t>(c)];
    return p;
}

inline double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k)
        s += (a[k] - b[k]) * (a[k] - b[k]);
    return s;
}

inline Mat softmax_rows(const Mat& logits) {
    Mat out = logits;
    for (auto& row : out) {
        double mx = row[0];
        for (double v : row)
            mx = std::max(mx, v);
        double denom = 0.0;
        for (double v : row)
            denom += std::exp(v - mx);
        for (auto& v : row)
            v = std::exp(v - mx) / denom;
    }
    return out;
}

// weighted aggregation shared by the three variants
inline Mat aggregate(const Mat& support, const std::vector<int>& labels, int n, const Mat& unlabeled,
                     const Mat& weights) {
    const std::size_t d = support[0].size();
    Mat p(static_cast<std::size_t>(n), std::vector<double>(d, 0.0));
    std::vector<double> den(static_cast<std::size_t>(n), 0.0);
    for (std::size_t i = 0; i < support.size(); ++i) {
        den[static_cast<std::size_t>(labels[i])] += 1.0;
        for (std::size_t k = 0; k < d; ++k)
            p[static_cast<std::size_t>(labels[i])][k] += support[i][k];
    }
    for (std::size_t j = 0; j < unlabeled.size(); ++j)
        for (int c = 0; c < n; ++c) {
            den[static_cast<std::size_t>(c)] += weights[j][static_cast<std::size_t>(c)];
            for (std::size_t k = 0; k < d; ++k)
                p[static_cast<std::size_t>(c)][k] += unlabeled[j][k] * weights[j][static_cast<std::size_t>(c)];
        }
    for (int c = 0; c < n; ++c)
        for (std::size_t k = 0; k < d; ++k)
            p[static_cast<std::size_t>(c)][k] /= den[static_cast<std::size_t>(c)];
    return p;
}

inline Mat soft_kmeans(const Mat& support, const std::vector<int>& labels, int n, const Mat& unlabeled,
                       const Mat& centers) {
    if (unlabeled.empty())
        return centers;
    Mat logits(unlabeled.size(), std::vector<double>(static_cast<std::size_t>(n)));
    for (std::size_t j = 0; j < unlabeled.size(); ++j)
        for (int c = 0; c < n; ++c)
            logits[j][static_cast<std::size_t>(c)] = -sqdist(unlabeled[j], centers[static_cast<std::size_t>(c)]);
    return aggregate(support, labels, n, unlabeled, softmax_rows(logits));
}

struct ClusterOut {
    Mat prototypes;
    Mat assignments;  // M x (n+1)
};

inline ClusterOut with_distractor(const Mat& support, const std::vector<int>& labels, int n,
                                  const Mat& unlabeled, const Mat& centers, double log_r) {
    const std::size_t d = support[0].size();
    const double half_log_2pi = 0.5 * std::log(2.0 * 3.14159265358979323846);
    const double r = std::exp(log_r);
    std::vector<double> origin(d, 0.0);
    Mat logits(unlabeled.size(), std::vector<double>(static_cast<std::size_t>(n) + 1));
    for (std::size_t j = 0; j < unlabeled.size(); ++j) {
        for (int c = 0; c < n; ++c)
            logits[j][static_cast<std::size_t>(c)] =
                -sqdist(unlabeled[j], centers[static_cast<std::size_t>(c)]) - half_log_2pi;
        logits[j][static_cast<std::size_t>(n)] =
            -sqdist(unlabeled[j], origin) / (r * r) - (half_log_2pi + log_r);
    }
    Mat z = softmax_rows(logits);
    if (unlabeled.empty())
        return {centers, z};
    Mat zc(unlabeled.size(), std::vector<double>(static_cast<std::size_t>(n)));
    for (std::size_t j = 0; j < unlabeled.size(); ++j)
        for (int c = 0; c < n; ++c)
            zc[j][static_cast<std::size_t>(c)] = z[j][static_cast<std::size_t>(c)];
    return {aggregate(support, labels, n, unlabeled, zc), z};
}

inline std::vector<double> col_stats(const std::vector<double>& col) {
    const double m = static_cast<double>(col.size());
    double mn = col[0], mx = col[0], mu = 0.0;
    for (double v : col) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
        mu += v;
    }
    mu /= m;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : col) {
        m2 += (v - mu) * (v - mu);
        m3 += (v - mu) * (v - mu) * (v - mu);
        m4 += (v - mu) * (v - mu) * (v - mu) * (v - mu);
    }
    m2 /= m;
    m3 /= m;
    m4 /= m;
    double skew = 0.0, kurt = 0.0;
    if (m2 >= 1e-12) {
        skew = m3 / std::pow(m2, 1.5);
        kurt = m4 / (m2 * m2);
    }
    return {mn, mx, m2, skew, kurt};
}

// normalized distances with unit column mean; degenerate columns become ones
inline Mat norm_dist(const Mat& dist) {
    const std::size_t M = dist.size();
    Mat dt = dist;
    const std::size_t n = dist.empty() ? 0 : dist[0].size();
    for (std::size_t c = 0; c < n; ++c) {
        double mean = 0.0;
        for (std::size_t j = 0; j < M; ++j)
            mean += dist[j][c];
        mean /= static_cast<double>(M);
        for (std::size_t j = 0; j < M; ++j)
            dt[j][c] = mean > 1e-12 ? dist[j][c] / mean : 1.0;
    }
    return dt;
}

struct MaskedOut {
    Mat prototypes;
    Mat masks;
};

// mlp weights: w0 [5 x h], b0 [h], w1 [h x 2], b1 [2]
inline MaskedOut masked(const Mat& support, const std::vector<int>& labels, int n, const Mat& unlabeled,
                        const Mat& centers, const Mat& w0, const std::vector<double>& b0, const Mat& w1,
                        const std::vector<double>& b1, const Mat* stats_override = nullptr) {
    const std::size_t M = unlabeled.size();
    Mat dist(M, std::vector<double>(static_cast<std::size_t>(n)));
    Mat logits(M, std::vector<double>(static_cast<std::size_t>(n)));
    for (std::size_t j = 0; j < M; ++j)
        for (int c = 0; c < n; ++c) {
            dist[j][static_cast<std::size_t>(c)] = sqdist(unlabeled[j], centers[static_cast<std::size_t>(c)]);
            logits[j][static_cast<std::size_t>(c)] = -dist[j][static_cast<std::size_t>(c)];
        }
    Mat z = softmax_rows(logits);
    Mat dt = norm_dist(dist);

    Mat stats(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) {
        std::vector<double> col(M);
        for (std::size_t j = 0; j < M; ++j)
            col[j] = dt[j][static_cast<std::size_t>(c)];
        stats[static_cast<std::size_t>(c)] = col_stats(col);
    }
    if (stats_override)
        stats = *stats_override;

    const std::size_t h = b0.size();
    Mat masks(M, std::vector<double>(static_cast<std::size_t>(n)));
    for (int c = 0; c < n; ++c) {
        std::vector<double> hid(h);
        for (std::size_t u = 0; u < h; ++u) {
            double s = b0[u];
            for (std::size_t k = 0; k < 5; ++k)
                s += stats[static_cast<std::size_t>(c)][k] * w0[k][u];
            hid[u] = std::tanh(s);
        }
        double beta = b1[0], gamma = b1[1];
        for (std::size_t u = 0; u < h; ++u) {
            beta += hid[u] * w1[u][0];
            gamma += hid[u] * w1[u][1];
        }
        for (std::size_t j = 0; j < M; ++j)
            masks[j][static_cast<std::size_t>(c)] =
                1.0 / (1.0 + std::exp(gamma * (dt[j][static_cast<std::size_t>(c)] - beta)));
    }

    Mat weights = z;
    for (std::size_t j = 0; j < M; ++j)
        for (int c = 0; c < n; ++c)
            weights[j][static_cast<std::size_t>(c)] *= masks[j][static_cast<std::size_t>(c)];
    return {aggregate(support, labels, n, unlabeled, weights), masks};
}

}  // namespace oracle

namespace testutil {

inline fsl::Tensor to_tensor(const oracle::Mat& m) {
    const int r = static_cast<int>(m.size());
    const int c = r > 0 ? static_cast<int>(m[0].size()) : 0;
    fsl::Tensor t({r, c});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            t.at(i, j) = m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return t;
}

inline oracle::Mat to_mat(const fsl::Tensor& t) {
    oracle::Mat m(static_cast<std::size_t>(t.shape[0]),
                  std::vector<double>(static_cast<std::size_t>(t.shape[1])));
    for (int i = 0; i < t.shape[0]; ++i)
        for (int j = 0; j < t.shape[1]; ++j)
            m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = t.at(i, j);
    return m;
}

inline oracle::Mat random_mat(std::size_t rows, std::size_t cols, fsl::Rng& rng, double scale = 2.0) {
    oracle::Mat m(rows, std::vector<double>(cols));
    for (auto& row : m)
        for (auto& v : row)
            v = rng.uniform(-scale, scale);
    return m;
}

struct TinyEpisode {
    int n;
    oracle::Mat support;
    std::vector<int> labels;
    oracle::Mat unlabeled;
};

inline TinyEpisode random_tiny_episode(fsl::Rng& rng, int min_m = 0) {
    TinyEpisode ep;
    ep.n = 1 + static_cast<int>(rng.below(3));
    const int k = 1 + static_cast<int>(rng.below(2));
    const int m = min_m + static_cast<int>(rng.below(static_cast<std::uint64_t>(5 - min_m)));
    const std::size_t d = 1 + rng.below(3);
    ep.support = random_mat(static_cast<std::size_t>(ep.n * k), d, rng);
    for (int c = 0; c < ep.n; ++c)
        for (int i = 0; i < k; ++i)
            ep.labels.push_back(c);
    ep.unlabeled = random_mat(static_cast<std::size_t>(m), d, rng);
    return ep;
}

inline double max_diff(const fsl::Tensor& t, const oracle::Mat& m) {
    double mx = 0.0;
    for (int i = 0; i < t.shape[0]; ++i)
        for (int j = 0; j < t.shape[1]; ++j)
            mx = std::max(mx, std::abs(t.at(i, j) - m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]));
    return mx;
}

}  // namespace testutil
