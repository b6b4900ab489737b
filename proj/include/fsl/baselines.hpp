#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fsl/config.hpp"
#include "fsl/dataset.hpp"
#include "fsl/episodes.hpp"
#include "fsl/train.hpp"

namespace fsl {

enum class FeatureKind { PIXEL, EMBED_RANDOM, EMBED_PRETRAINED };

inline const char* feature_name(FeatureKind f) {
    switch (f) {
        case FeatureKind::PIXEL: return "pixel";
        case FeatureKind::EMBED_RANDOM: return "embed_random";
        case FeatureKind::EMBED_PRETRAINED: return "embed_pretrained";
    }
    return "?";
}

inline FeatureKind feature_from_name(const std::string& s) {
    if (s == "pixel") return FeatureKind::PIXEL;
    if (s == "embed_random") return FeatureKind::EMBED_RANDOM;
    if (s == "embed_pretrained") return FeatureKind::EMBED_PRETRAINED;
    throw ConfigError("unknown feature kind: '" + s + "'");
}

// Frozen feature map for the non-episodic baselines: raw inputs, or an
// embedding network with fixed parameters.
class FeatureExtractor {
public:
    FeatureExtractor() = default;  // pixel
    FeatureExtractor(EmbeddingConfig cfg, ParamSet params)
        : use_embed_(true), cfg_(std::move(cfg)), params_(std::move(params)) {}

    Tensor operator()(const Tensor& batch) const {
        if (!use_embed_)
            return batch;
        Tape tape;
        TapeParams bound = bind_params(tape, params_, false);
        return tape.value(embed(tape, cfg_, bound, tape.constant(batch)));
    }

private:
    bool use_embed_ = false;
    EmbeddingConfig cfg_;
    ParamSet params_;
};

// Nearest support item in feature space, squared Euclidean, ties to the
// lowest support index.
inline std::vector<int> predict_1nn(const Tensor& support_feat, const std::vector<int>& support_y,
                                    const Tensor& query_feat) {
    require_matrix(support_feat, "predict_1nn");
    require_matrix(query_feat, "predict_1nn");
    const int S = support_feat.shape[0], T = query_feat.shape[0], D = support_feat.shape[1];
    std::vector<int> out(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        double best = 1e300;
        int best_i = 0;
        for (int s = 0; s < S; ++s) {
            double d = 0.0;
            for (int k = 0; k < D; ++k) {
                const double diff = query_feat.at(t, k) - support_feat.at(s, k);
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                best_i = s;
            }
        }
        out[static_cast<std::size_t>(t)] = support_y[static_cast<std::size_t>(best_i)];
    }
    return out;
}

// Multinomial logistic regression fit on the support set by full-batch
// gradient descent with an iteration cap.
struct LogRegOptions {
    int iters = 500;
    double lr = 0.1;
    double l2 = 1e-4;
};

struct LogRegFit {
    Tensor w;  // [D x N]
    Tensor b;  // [N]
    bool diverged = false;
};

inline LogRegFit fit_logreg(const Tensor& x, const std::vector<int>& y, int num_classes,
                            const LogRegOptions& opt) {
    require_matrix(x, "fit_logreg");
    const int S = x.shape[0], D = x.shape[1], N = num_classes;
    LogRegFit fit;
    fit.w = Tensor::zeros({D, N});
    fit.b = Tensor::zeros({N});
    std::vector<double> logits(static_cast<std::size_t>(N));
    for (int it = 0; it < opt.iters; ++it) {
        Tensor gw = Tensor::zeros({D, N});
        Tensor gb = Tensor::zeros({N});
        for (int s = 0; s < S; ++s) {
            double mx = -1e300;
            for (int c = 0; c < N; ++c) {
                double z = fit.b.data[c];
                for (int d = 0; d < D; ++d)
                    z += x.at(s, d) * fit.w.at(d, c);
                logits[static_cast<std::size_t>(c)] = z;
                mx = std::max(mx, z);
            }
            double denom = 0.0;
            for (int c = 0; c < N; ++c)
                denom += std::exp(logits[static_cast<std::size_t>(c)] - mx);
            for (int c = 0; c < N; ++c) {
                const double p = std::exp(logits[static_cast<std::size_t>(c)] - mx) / denom;
                const double err = p - (y[static_cast<std::size_t>(s)] == c ? 1.0 : 0.0);
                gb.data[c] += err / S;
                for (int d = 0; d < D; ++d)
                    gw.at(d, c) += err * x.at(s, d) / S;
            }
        }
        for (int d = 0; d < D; ++d)
            for (int c = 0; c < N; ++c)
                fit.w.at(d, c) -= opt.lr * (gw.at(d, c) + opt.l2 * fit.w.at(d, c));
        for (int c = 0; c < N; ++c)
            fit.b.data[c] -= opt.lr * gb.data[c];
        if (!fit.w.all_finite() || !fit.b.all_finite()) {
            fit.diverged = true;
            return fit;
        }
    }
    return fit;
}

inline std::vector<int> predict_logreg(const LogRegFit& fit, const Tensor& x) {
    const int T = x.shape[0], D = x.shape[1], N = fit.b.shape[0];
    std::vector<int> out(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        int best = 0;
        double best_z = -1e300;
        for (int c = 0; c < N; ++c) {
            double z = fit.b.data[c];
            for (int d = 0; d < D; ++d)
                z += x.at(t, d) * fit.w.at(d, c);
            if (z > best_z) {
                best_z = z;
                best = c;
            }
        }
        out[static_cast<std::size_t>(t)] = best;
    }
    return out;
}

struct BaselineResult {
    double accuracy = 0.0;
    int episodes = 0;
    int excluded = 0;  // diverged logistic-regression episodes
};

enum class BaselineKind { NEAREST_NEIGHBOR, LOGREG };

// Shared episode stream (seeded per episode) so all baselines and the
// trained models are compared on the same tasks.
inline BaselineResult run_baseline(BaselineKind kind, const FeatureExtractor& features, const Dataset& ds,
                                   const LabeledUnlabeledSplit& split, Partition partition,
                                   const EpisodeSpec& spec, int episodes, std::uint64_t base_seed,
                                   const LogRegOptions& lr_opt = {}) {
    BaselineResult out;
    double acc_sum = 0.0;
    for (int i = 0; i < episodes; ++i) {
        Rng rng(mix_seed(base_seed, static_cast<std::uint64_t>(i)));
        Episode ep = sample_episode(ds, split, partition, spec, rng);
        Tensor sf = features(ep.support_x);
        Tensor qf = features(ep.query_x);
        std::vector<int> pred;
        if (kind == BaselineKind::NEAREST_NEIGHBOR) {
            pred = predict_1nn(sf, ep.support_y, qf);
        } else {
            LogRegFit fit = fit_logreg(sf, ep.support_y, ep.n_way(), lr_opt);
            if (fit.diverged) {
                ++out.excluded;
                continue;
            }
            pred = predict_logreg(fit, qf);
        }
        acc_sum += accuracy(pred, ep.query_y);
        ++out.episodes;
    }
    if (out.episodes == 0)
        throw NumericError("run_baseline: every episode diverged");
    out.accuracy = acc_sum / out.episodes;
    return out;
}

// Supervised pretraining on all training classes: embedding + linear
// softmax head, minibatch Adam; the head is discarded and the embedding
// frozen for the "pre" baselines.
struct PretrainOptions {
    std::int64_t updates = 2000;
    int batch_size = 32;
    double lr = 1e-3;
};

struct PretrainResult {
    ParamSet embedding;  // frozen feature map for the "pre" baselines
    ParamSet head;       // kept only so its training-class accuracy can be checked
};

inline PretrainResult pretrain_classifier(const EmbeddingConfig& ecfg0, const Dataset& ds,
                                          const LabeledUnlabeledSplit& split, std::uint64_t seed,
                                          const PretrainOptions& opt = {}) {
    EmbeddingConfig ecfg = ecfg0;
    if (ecfg.input_shape.empty())
        ecfg.input_shape = ds.input_shape;
    const auto train_classes = ds.classes_in(Partition::TRAIN);
    if (train_classes.empty())
        throw ConfigError("pretrain_classifier: no training classes");
    // labeled items of the training split, with labels re-indexed densely
    std::vector<int> items;
    std::vector<int> labels;
    for (std::size_t ci = 0; ci < train_classes.size(); ++ci)
        for (int item : split.labeled[static_cast<std::size_t>(train_classes[ci])]) {
            items.push_back(item);
            labels.push_back(static_cast<int>(ci));
        }
    const int num_classes = static_cast<int>(train_classes.size());
    const int D = ds.input_numel();

    Rng rng(mix_seed(seed, 0x707265ULL));
    ParamSet params = init_embedding(ecfg, seed);
    params.add("head.w", fan_in_uniform({ecfg.embed_dim, num_classes}, ecfg.embed_dim, rng));
    params.add("head.b", Tensor::zeros({num_classes}));
    AdamState adam(params, AdamConfig{});

    for (std::int64_t t = 0; t < opt.updates; ++t) {
        const int bs = std::min<int>(opt.batch_size, static_cast<int>(items.size()));
        std::vector<double> bx;
        std::vector<int> by;
        for (int b = 0; b < bs; ++b) {
            const int pick = rng.index(items.size());
            detail::append_item(ds, items[static_cast<std::size_t>(pick)], bx);
            by.push_back(labels[static_cast<std::size_t>(pick)]);
        }
        Tape tape;
        TapeParams bound = bind_params(tape, params, true);
        Var h = embed(tape, ecfg, bound, tape.constant(Tensor({bs, D}, std::move(bx))));
        Var logits = tape.affine(h, bound["head.w"], bound["head.b"]);
        Var loss = episode_loss(tape, tape.log_softmax_rows(logits), by);
        tape.backward(loss);
        std::vector<Tensor> grads;
        for (Var v : bound.vars)
            grads.push_back(tape.grad(v));
        adam.apply(params, grads, opt.lr);
    }

    PretrainResult out;
    for (const auto& e : params.entries()) {
        if (e.name.rfind("embed.", 0) == 0)
            out.embedding.add(e.name, e.tensor);
        else
            out.head.add(e.name, e.tensor);
    }
    return out;
}

// Accuracy of the pretrained head on a labeled item set (sanity metric).
inline double pretrain_head_accuracy(const PretrainResult& pre, const EmbeddingConfig& ecfg0,
                                     const Dataset& ds, const LabeledUnlabeledSplit& split) {
    EmbeddingConfig ecfg = ecfg0;
    if (ecfg.input_shape.empty())
        ecfg.input_shape = ds.input_shape;
    const auto train_classes = ds.classes_in(Partition::TRAIN);
    std::vector<double> bx;
    std::vector<int> by;
    for (std::size_t ci = 0; ci < train_classes.size(); ++ci)
        for (int item : split.labeled[static_cast<std::size_t>(train_classes[ci])]) {
            detail::append_item(ds, item, bx);
            by.push_back(static_cast<int>(ci));
        }
    const int n = static_cast<int>(by.size());
    Tape tape;
    TapeParams bound_e = bind_params(tape, pre.embedding, false);
    TapeParams bound_h = bind_params(tape, pre.head, false);
    Var h = embed(tape, ecfg, bound_e, tape.constant(Tensor({n, ds.input_numel()}, std::move(bx))));
    Var logits = tape.affine(h, bound_h["head.w"], bound_h["head.b"]);
    return accuracy(predict(tape.value(logits)), by);
}

}  // namespace fsl
