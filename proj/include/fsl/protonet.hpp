#pragma once

#include <vector>

#include "fsl/autodiff.hpp"
#include "fsl/tensor.hpp"

namespace fsl {

// Class labels are 0-based internally: y in [0, N).

// Indicator matrix z[i][c] = 1 iff labels[i] == c, as an N x B constant
// (transposed so prototype sums are one matmul).
inline Tensor class_indicator_t(const std::vector<int>& labels, int num_classes) {
    Tensor z({num_classes, static_cast<int>(labels.size())});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw ContractError("label out of range");
        z.at(labels[i], static_cast<int>(i)) = 1.0;
    }
    return z;
}

// Per-class mean of support embeddings: p_c = sum_i h(x_i) z_ic / sum_i z_ic.
inline Var compute_prototypes(Tape& tape, Var support_emb, const std::vector<int>& labels, int num_classes) {
    const Tensor& ev = tape.value(support_emb);
    require_matrix(ev, "compute_prototypes");
    if (static_cast<int>(labels.size()) != ev.shape[0])
        throw ContractError("compute_prototypes: label count != embedding rows");
    Tensor zt = class_indicator_t(labels, num_classes);
    Tensor counts({num_classes});
    for (int c = 0; c < num_classes; ++c) {
        double s = 0.0;
        for (int i = 0; i < zt.shape[1]; ++i)
            s += zt.at(c, i);
        if (s == 0.0)
            throw ContractError("compute_prototypes: class " + std::to_string(c) + " has no support examples");
        counts.data[c] = s;
    }
    Var sums = tape.matmul(tape.constant(std::move(zt)), support_emb);
    return tape.divide_rows(sums, tape.constant(std::move(counts)));
}

// log p(c | x*) = -||h(x*) - p_c||^2 - logsumexp_c'(-||h(x*) - p_c'||^2)
inline Var class_log_probs(Tape& tape, Var query_emb, Var prototypes) {
    const Tensor& pv = tape.value(prototypes);
    require_matrix(pv, "class_log_probs");
    if (pv.shape[0] == 0)
        throw ContractError("class_log_probs: no classes");
    return tape.log_softmax_rows(tape.neg(tape.pairwise_sqdist(query_emb, prototypes)));
}

// -(1/T) sum_i log p(y*_i | x*_i)
inline Var episode_loss(Tape& tape, Var log_probs, const std::vector<int>& labels) {
    return tape.neg(tape.mean_all(tape.pick_per_row(log_probs, labels)));
}

// argmax per row; ties broken by lowest class index
inline std::vector<int> predict(const Tensor& log_probs) {
    require_matrix(log_probs, "predict");
    const int T = log_probs.shape[0], N = log_probs.shape[1];
    if (T < 1)
        throw ContractError("predict: empty query set");
    std::vector<int> out(static_cast<std::size_t>(T));
    for (int i = 0; i < T; ++i) {
        int best = 0;
        for (int c = 1; c < N; ++c)
            if (log_probs.at(i, c) > log_probs.at(i, best))
                best = c;
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
    if (predicted.size() != truth.size() || predicted.empty())
        throw ContractError("accuracy: size mismatch or empty");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        hits += predicted[i] == truth[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

}  // namespace fsl
