#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fsl/autodiff.hpp"
#include "fsl/params.hpp"
#include "fsl/protonet.hpp"
#include "fsl/rng.hpp"
#include "fsl/tensor.hpp"

namespace fsl {

enum class RefinementVariant { NONE, SOFT_KMEANS, SOFT_KMEANS_CLUSTER, MASKED_SOFT_KMEANS };

inline const char* variant_name(RefinementVariant v) {
    switch (v) {
        case RefinementVariant::NONE: return "none";
        case RefinementVariant::SOFT_KMEANS: return "soft_kmeans";
        case RefinementVariant::SOFT_KMEANS_CLUSTER: return "soft_kmeans_cluster";
        case RefinementVariant::MASKED_SOFT_KMEANS: return "masked_soft_kmeans";
    }
    return "?";
}

inline RefinementVariant variant_from_name(const std::string& s) {
    if (s == "none") return RefinementVariant::NONE;
    if (s == "soft_kmeans") return RefinementVariant::SOFT_KMEANS;
    if (s == "soft_kmeans_cluster") return RefinementVariant::SOFT_KMEANS_CLUSTER;
    if (s == "masked_soft_kmeans") return RefinementVariant::MASKED_SOFT_KMEANS;
    throw ConfigError("unknown refinement variant: '" + s + "'");
}

// log-partition term of the length-scaled assignment
inline double length_scale_log_partition(double r) { return 0.5 * std::log(2.0 * 3.14159265358979323846) + std::log(r); }

namespace detail {

struct SupportSums {
    Var sums;       // [N x d], sum of support embeddings per class
    Tensor counts;  // [N], support count per class
};

inline SupportSums support_sums(Tape& tape, Var support_emb, const std::vector<int>& labels, int num_classes) {
    Tensor zt = class_indicator_t(labels, num_classes);
    Tensor counts({num_classes});
    for (int c = 0; c < num_classes; ++c)
        for (int i = 0; i < zt.shape[1]; ++i)
            counts.data[c] += zt.at(c, i);
    for (int c = 0; c < num_classes; ++c)
        if (counts.data[c] == 0.0)
            throw ContractError("support class " + std::to_string(c) + " is empty");
    Var sums = tape.matmul(tape.constant(std::move(zt)), support_emb);
    return {sums, std::move(counts)};
}

// Weighted aggregation shared by all variants:
// p~_c = (sum_i h(x_i) z_ic + sum_j h(x~_j) w_jc) / (sum_i z_ic + sum_j w_jc)
inline Var aggregate(Tape& tape, const SupportSums& ss, Var unlabeled_emb, Var weights) {
    Var num = tape.add(ss.sums, tape.matmul(tape.transpose(weights), unlabeled_emb));
    Var den = tape.add(tape.constant(ss.counts), tape.sum_axis(weights, 0));
    return tape.divide_rows(num, den);
}

}  // namespace detail

// Partial assignments of unlabeled points to cluster centers:
// z~_jc = softmax_c(-||h(x~_j) - p_c||^2)
inline Var soft_assignments(Tape& tape, Var unlabeled_emb, Var prototypes) {
    return tape.softmax_rows(tape.neg(tape.pairwise_sqdist(unlabeled_emb, prototypes)));
}

inline Var refine_soft_kmeans(Tape& tape, Var support_emb, const std::vector<int>& labels, int num_classes,
                              Var unlabeled_emb, Var prototypes) {
    if (tape.value(unlabeled_emb).shape[0] == 0)
        return prototypes;
    auto ss = detail::support_sums(tape, support_emb, labels, num_classes);
    Var z = soft_assignments(tape, unlabeled_emb, prototypes);
    return detail::aggregate(tape, ss, unlabeled_emb, z);
}

struct DistractorRefineResult {
    Var prototypes;   // refined class prototypes, [N x d]; distractor row stays at origin
    Var assignments;  // [M x (N+1)], last column is the distractor cluster
};

// Adds an origin-centered distractor cluster with learned length-scale
// r_{N+1} = exp(log_r); class length-scales are fixed to 1.
inline DistractorRefineResult refine_with_distractor_cluster(Tape& tape, Var support_emb,
                                                             const std::vector<int>& labels, int num_classes,
                                                             Var unlabeled_emb, Var prototypes, Var log_r) {
    const int M = tape.value(unlabeled_emb).shape[0];
    const int d = tape.value(prototypes).shape[1];
    if (tape.value(log_r).numel() != 1)
        throw ContractError("distractor length-scale must be scalar");
    Var log_r_vec = tape.reshape(log_r, {1});
    Var protos_aug = tape.concat_rows(prototypes, tape.constant(Tensor::zeros({1, d})));
    Var dist = tape.pairwise_sqdist(unlabeled_emb, protos_aug);  // [M x (N+1)]
    Var ones_n = tape.constant(Tensor::ones({num_classes}));
    Var inv_r2 = tape.concat_vec(ones_n, tape.exp(tape.scale(log_r_vec, -2.0)));
    Var log_r_all = tape.concat_vec(tape.constant(Tensor::zeros({num_classes})), log_r_vec);
    Var log_part = tape.add_const(log_r_all, 0.5 * std::log(2.0 * 3.14159265358979323846));
    Var logits = tape.sub(tape.neg(tape.scale_columns(dist, inv_r2)), tape.broadcast_rows(log_part, M));
    Var z = tape.softmax_rows(logits);
    if (M == 0)
        return {prototypes, z};
    // drop the distractor column for aggregation; its prototype never moves
    Tensor sel({num_classes + 1, num_classes});
    for (int c = 0; c < num_classes; ++c)
        sel.at(c, c) = 1.0;
    Var z_classes = tape.matmul(z, tape.constant(std::move(sel)));
    auto ss = detail::support_sums(tape, support_emb, labels, num_classes);
    return {detail::aggregate(tape, ss, unlabeled_emb, z_classes), z};
}

// d~_jc = d_jc / ((1/M) sum_j d_jc). Columns whose mean vanishes (all
// unlabeled points sitting on the prototype) become all-ones.
struct NormalizedDistances {
    Var dtilde;
    bool degenerate = false;
};

inline NormalizedDistances normalized_distances(Tape& tape, Var sqdist) {
    const Tensor& dv = tape.value(sqdist);
    require_matrix(dv, "normalized_distances");
    const int M = dv.shape[0], C = dv.shape[1];
    if (M < 1)
        throw ContractError("normalized_distances: M must be >= 1");
    Var col_mean = tape.mean_axis(sqdist, 0);
    const Tensor& mv = tape.value(col_mean);
    Tensor ok({C});
    Tensor not_ok({C});
    bool degenerate = false;
    for (int c = 0; c < C; ++c) {
        const bool good = mv.data[c] > 1e-12;
        ok.data[c] = good ? 1.0 : 0.0;
        not_ok.data[c] = good ? 0.0 : 1.0;
        degenerate |= !good;
    }
    Var ok_v = tape.constant(std::move(ok));
    Var not_ok_v = tape.constant(std::move(not_ok));
    // safe mean is 1 on degenerate columns; those columns are then forced to 1
    Var safe_mean = tape.add(tape.mul(col_mean, ok_v), not_ok_v);
    Var dt = tape.div(sqdist, tape.broadcast_rows(safe_mean, M));
    dt = tape.add(tape.mul(dt, tape.broadcast_rows(ok_v, M)), tape.broadcast_rows(not_ok_v, M));
    return {dt, degenerate};
}

// Per-column summary [min, max, var, skew, kurt] of normalized distances,
// population moments, non-excess kurtosis. Computed outside the tape: the
// statistics path carries no gradient.
inline std::vector<double> distance_stats(const std::vector<double>& column) {
    const std::size_t m = column.size();
    if (m == 0)
        throw ContractError("distance_stats: empty column");
    double mn = column[0], mx = column[0], mu = 0.0;
    for (double v : column) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
        mu += v;
    }
    mu /= static_cast<double>(m);
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : column) {
        const double c = v - mu;
        m2 += c * c;
        m3 += c * c * c;
        m4 += c * c * c * c;
    }
    m2 /= static_cast<double>(m);
    m3 /= static_cast<double>(m);
    m4 /= static_cast<double>(m);
    double skew = 0.0, kurt = 0.0;
    if (m2 >= 1e-12) {
        skew = m3 / std::pow(m2, 1.5);
        kurt = m4 / (m2 * m2);
    }
    return {mn, mx, m2, skew, kurt};
}

inline Tensor distance_stats_matrix(const Tensor& dtilde) {
    require_matrix(dtilde, "distance_stats_matrix");
    const int M = dtilde.shape[0], C = dtilde.shape[1];
    Tensor out({C, 5});
    for (int c = 0; c < C; ++c) {
        std::vector<double> col(static_cast<std::size_t>(M));
        for (int j = 0; j < M; ++j)
            col[static_cast<std::size_t>(j)] = dtilde.at(j, c);
        auto s = distance_stats(col);
        for (int k = 0; k < 5; ++k)
            out.at(c, k) = s[static_cast<std::size_t>(k)];
    }
    return out;
}

// Mask MLP: per-prototype [beta_c, gamma_c] = MLP(stats_c), shared weights,
// single tanh hidden layer (5 -> hidden -> 2).
inline ParamSet init_mask_mlp(std::uint64_t seed, int hidden = 20) {
    if (hidden < 1)
        throw ConfigError("mask MLP hidden width must be >= 1");
    Rng rng(seed);
    ParamSet p;
    p.add("mask.l0.w", fan_in_uniform({5, hidden}, 5, rng));
    p.add("mask.l0.b", Tensor::zeros({hidden}));
    p.add("mask.l1.w", fan_in_uniform({hidden, 2}, hidden, rng));
    p.add("mask.l1.b", Tensor::zeros({2}));
    return p;
}

struct MaskParams {
    Var beta;   // [N]
    Var gamma;  // [N]
};

inline MaskParams predict_mask_params(Tape& tape, Var stats, const TapeParams& mlp) {
    const Tensor& sv = tape.value(stats);
    require_matrix(sv, "predict_mask_params");
    if (sv.shape[1] != 5)
        throw ContractError("predict_mask_params: stats must have 5 columns");
    Var h = tape.tanh(tape.affine(stats, mlp["mask.l0.w"], mlp["mask.l0.b"]));
    Var out = tape.affine(h, mlp["mask.l1.w"], mlp["mask.l1.b"]);
    return {tape.slice_col(out, 0), tape.slice_col(out, 1)};
}

struct MaskedRefineResult {
    Var prototypes;  // [N x d]
    Var masks;       // [M x N], m_jc in (0,1)
    bool degenerate_distances = false;
};

// m_jc = sigmoid(-gamma_c (d~_jc - beta_c)); gradients flow through the
// distances and masks but not through the statistics fed to the MLP.
inline MaskedRefineResult masked_refine(Tape& tape, Var support_emb, const std::vector<int>& labels,
                                        int num_classes, Var unlabeled_emb, Var prototypes,
                                        const TapeParams& mlp) {
    const int M = tape.value(unlabeled_emb).shape[0];
    if (M < 1)
        throw ContractError("masked_refine: M must be >= 1");
    Var dist = tape.pairwise_sqdist(unlabeled_emb, prototypes);
    Var z = tape.softmax_rows(tape.neg(dist));
    auto nd = normalized_distances(tape, dist);
    Var stats = tape.constant(distance_stats_matrix(tape.value(nd.dtilde)));
    MaskParams mp = predict_mask_params(tape, stats, mlp);
    Var shifted = tape.sub(nd.dtilde, tape.broadcast_rows(mp.beta, M));
    Var masks = tape.sigmoid(tape.neg(tape.scale_columns(shifted, mp.gamma)));
    Var weights = tape.mul(z, masks);
    auto ss = detail::support_sums(tape, support_emb, labels, num_classes);
    return {detail::aggregate(tape, ss, unlabeled_emb, weights), masks, nd.degenerate};
}

// Variant-specific extra parameters bound on a tape.
struct RefineExtras {
    Var log_r;        // SOFT_KMEANS_CLUSTER
    TapeParams mlp;   // MASKED_SOFT_KMEANS
};

struct RefineResult {
    Var prototypes;
    Var masks;        // valid for MASKED_SOFT_KMEANS only
    Var assignments;  // valid for SOFT_KMEANS_CLUSTER only
};

// Dispatch over variants; iterates num_steps times re-using refined
// prototypes as the cluster centers.
inline RefineResult refine(Tape& tape, RefinementVariant variant, int num_steps, Var support_emb,
                           const std::vector<int>& labels, int num_classes, Var unlabeled_emb,
                           const RefineExtras& extras) {
    Var protos = compute_prototypes(tape, support_emb, labels, num_classes);
    RefineResult out{protos, Var{}, Var{}};
    if (variant == RefinementVariant::NONE)
        return out;
    if (num_steps < 1)
        throw ContractError("refine: num_steps must be >= 1");
    const int M = tape.value(unlabeled_emb).shape[0];
    for (int step = 0; step < num_steps; ++step) {
        switch (variant) {
            case RefinementVariant::SOFT_KMEANS:
                out.prototypes = refine_soft_kmeans(tape, support_emb, labels, num_classes, unlabeled_emb,
                                                    out.prototypes);
                break;
            case RefinementVariant::SOFT_KMEANS_CLUSTER: {
                auto r = refine_with_distractor_cluster(tape, support_emb, labels, num_classes, unlabeled_emb,
                                                        out.prototypes, extras.log_r);
                out.prototypes = r.prototypes;
                out.assignments = r.assignments;
                break;
            }
            case RefinementVariant::MASKED_SOFT_KMEANS: {
                if (M == 0)
                    break;
                auto r = masked_refine(tape, support_emb, labels, num_classes, unlabeled_emb, out.prototypes,
                                       extras.mlp);
                out.prototypes = r.prototypes;
                out.masks = r.masks;
                break;
            }
            case RefinementVariant::NONE:
                break;
        }
    }
    return out;
}

}  // namespace fsl
