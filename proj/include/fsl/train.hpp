#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "fsl/autodiff.hpp"
#include "fsl/config.hpp"
#include "fsl/dataset.hpp"
#include "fsl/embedding.hpp"
#include "fsl/episodes.hpp"
#include "fsl/optim.hpp"
#include "fsl/params.hpp"
#include "fsl/protonet.hpp"
#include "fsl/refinement.hpp"

namespace fsl {

// Embedding parameters plus variant extras (distractor length-scale,
// mask MLP), all trained jointly.
struct Model {
    EmbeddingConfig embedding;
    RefinementVariant variant = RefinementVariant::NONE;
    int refine_steps = 1;
    ParamSet params;
};

inline Model init_model(const EmbeddingConfig& ecfg, RefinementVariant variant, int refine_steps,
                        std::uint64_t seed) {
    Model m;
    m.embedding = ecfg;
    m.variant = variant;
    m.refine_steps = refine_steps;
    m.params = init_embedding(ecfg, seed);
    if (variant == RefinementVariant::SOFT_KMEANS_CLUSTER) {
        // log r_{N+1} = 0, i.e. r = 1 at init
        m.params.add("refine.log_r", Tensor::scalar(0.0));
    } else if (variant == RefinementVariant::MASKED_SOFT_KMEANS) {
        m.params.merge(init_mask_mlp(mix_seed(seed, 0x6d61736bULL)));
    }
    return m;
}

struct EpisodeForward {
    Var loss;
    Var log_probs;  // [T x N] over the N real classes
    Var masks;      // valid when the effective variant is MASKED_SOFT_KMEANS and M > 0
};

// Full differentiable path for one episode: embed, prototypes, refine,
// classify, loss. The effective variant may differ from the model's
// (semi-supervised inference applies soft k-means to a supervised model).
inline EpisodeForward episode_forward(Tape& tape, const Model& model, const TapeParams& bound,
                                      const Episode& ep, RefinementVariant effective_variant,
                                      int refine_steps) {
    Var sup = embed(tape, model.embedding, bound, tape.constant(ep.support_x));
    Var unl = embed(tape, model.embedding, bound, tape.constant(ep.unlabeled_x));
    Var qry = embed(tape, model.embedding, bound, tape.constant(ep.query_x));
    RefineExtras extras;
    if (effective_variant == RefinementVariant::SOFT_KMEANS_CLUSTER)
        extras.log_r = bound["refine.log_r"];
    if (effective_variant == RefinementVariant::MASKED_SOFT_KMEANS)
        extras.mlp = bound;
    RefineResult r = refine(tape, effective_variant, refine_steps, sup, ep.support_y, ep.n_way(), unl, extras);
    Var log_probs = class_log_probs(tape, qry, r.prototypes);
    Var loss = episode_loss(tape, log_probs, ep.query_y);
    return {loss, log_probs, r.masks};
}

// Mean query accuracy over eval episodes. Episode i draws its rng from
// mix_seed(base_seed, i), so the reduction is order-independent.
inline double evaluate_episodes(const Model& model, const Dataset& ds, const LabeledUnlabeledSplit& split,
                                Partition partition, const EpisodeSpec& spec, int episodes,
                                std::uint64_t base_seed, RefinementVariant effective_variant,
                                int refine_steps) {
    if (episodes < 1)
        throw ContractError("evaluate_episodes: need at least one episode");
    double acc_sum = 0.0;
    for (int i = 0; i < episodes; ++i) {
        Rng rng(mix_seed(base_seed, static_cast<std::uint64_t>(i)));
        Episode ep = sample_episode(ds, split, partition, spec, rng);
        Tape tape;
        TapeParams bound = bind_params(tape, model.params, false);
        EpisodeForward fwd = episode_forward(tape, model, bound, ep, effective_variant, refine_steps);
        acc_sum += accuracy(predict(tape.value(fwd.log_probs)), ep.query_y);
    }
    return acc_sum / episodes;
}

struct TrainedModel {
    Model model;
    std::int64_t updates = 0;
    double best_val_accuracy = 0.0;
    std::vector<double> loss_trace;  // one entry per update
};

// The variant actually used during training for a given mode: the two
// baselines train a plain supervised Prototypical Network.
inline RefinementVariant training_variant(const RunConfig& cfg) {
    return cfg.mode == RunMode::TRAIN_AND_REFINE ? cfg.variant : RefinementVariant::NONE;
}

inline RefinementVariant evaluation_variant(const RunConfig& cfg) {
    if (cfg.mode == RunMode::SEMI_SUPERVISED_INFERENCE)
        return RefinementVariant::SOFT_KMEANS;
    return training_variant(cfg);
}

// One Adam update per episode; periodic validation keeps the best snapshot.
// Deterministic given (split_seed, model_seed).
inline TrainedModel train_one_split(const RunConfig& cfg, const Dataset& ds,
                                    const LabeledUnlabeledSplit& split, std::uint64_t split_seed) {
    cfg.validate();
    if (cfg.mode == RunMode::SEMI_SUPERVISED_INFERENCE && cfg.variant != RefinementVariant::NONE)
        throw ContractError("semi_supervised_inference requires a model trained with variant 'none'");
    const RefinementVariant tvariant = training_variant(cfg);

    EmbeddingConfig ecfg = cfg.embedding;
    if (ecfg.input_shape.empty())
        ecfg.input_shape = ds.input_shape;

    const std::uint64_t base = mix_seed(cfg.model_seed, split_seed);
    TrainedModel out;
    out.model = init_model(ecfg, tvariant, cfg.refine_steps, base);

    // supervised training never sees unlabeled data
    EpisodeSpec tspec = cfg.train_episode_spec();
    if (tvariant == RefinementVariant::NONE) {
        tspec.m_unlabeled = 0;
        tspec.h_distractor = 0;
    }
    // validation mirrors the test-time episode shape so the kept checkpoint is
    // the one best suited to the evaluation protocol (supervised models still
    // validate without unlabeled items, like they train)
    EpisodeSpec vspec = cfg.test_episode_spec();
    if (tvariant == RefinementVariant::NONE) {
        vspec.m_unlabeled = 0;
        vspec.h_distractor = 0;
    }

    AdamState adam(out.model.params, cfg.adam);
    Rng episode_rng(mix_seed(base, 0x747261696eULL));
    const std::uint64_t val_seed = mix_seed(base, 0x76616cULL);

    ParamSet best = out.model.params;
    double best_acc = -1.0;
    out.loss_trace.reserve(static_cast<std::size_t>(cfg.total_updates));

    for (std::int64_t t = 0; t < cfg.total_updates; ++t) {
        Episode ep = sample_episode(ds, split, Partition::TRAIN, tspec, episode_rng);
        Tape tape;
        TapeParams bound = bind_params(tape, out.model.params, true);
        EpisodeForward fwd;
        try {
            fwd = episode_forward(tape, out.model, bound, ep, tvariant, cfg.refine_steps);
        } catch (const NumericError& e) {
            std::ostringstream msg;
            msg << "numeric failure at update " << t << " (classes:";
            for (int c : ep.episode_classes)
                msg << " " << c;
            msg << "): " << e.what();
            throw NumericError(msg.str());
        }
        out.loss_trace.push_back(tape.value(fwd.loss).data[0]);
        tape.backward(fwd.loss);
        std::vector<Tensor> grads;
        grads.reserve(bound.vars.size());
        for (Var v : bound.vars)
            grads.push_back(tape.grad(v));
        adam.apply(out.model.params, grads, lr_at(t, cfg.schedule));
        out.updates = t + 1;

        if ((t + 1) % cfg.eval_every == 0 || t + 1 == cfg.total_updates) {
            const double acc = evaluate_episodes(out.model, ds, split, Partition::VAL, vspec,
                                                 cfg.val_episodes, val_seed, tvariant, cfg.refine_steps);
            if (acc > best_acc) {
                best_acc = acc;
                best = out.model.params;
            }
        }
    }
    if (best_acc >= 0.0) {
        out.model.params = best;
        out.best_val_accuracy = best_acc;
    }
    return out;
}

struct RunResult {
    std::vector<std::uint64_t> split_seeds;
    std::vector<double> split_accuracy;
    double mean = 0.0;
    double stderr_mean = 0.0;  // stddev of per-split means / sqrt(num splits)
    std::string config_hash;
    double wall_seconds = 0.0;
};

inline void aggregate_result(RunResult& r) {
    const std::size_t n = r.split_accuracy.size();
    if (n == 0)
        throw ContractError("aggregate_result: no splits");
    double mu = 0.0;
    for (double a : r.split_accuracy)
        mu += a;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double a : r.split_accuracy)
        var += (a - mu) * (a - mu);
    var /= static_cast<double>(n);  // population stddev over the split means
    r.mean = mu;
    r.stderr_mean = std::sqrt(var) / std::sqrt(static_cast<double>(n));
}

// Train (per split seed) and evaluate on test episodes.
inline RunResult run_experiment(const RunConfig& cfg, const Dataset& ds) {
    cfg.validate();
    RunResult result;
    for (std::uint64_t split_seed : cfg.split_seeds) {
        LabeledUnlabeledSplit split = make_split(ds, cfg.labeled_ratio, split_seed);
        TrainedModel tm = train_one_split(cfg, ds, split, split_seed);
        const double acc =
            evaluate_episodes(tm.model, ds, split, Partition::TEST, cfg.test_episode_spec(), cfg.eval_episodes,
                              mix_seed(cfg.eval_seed, split_seed), evaluation_variant(cfg), cfg.refine_steps);
        result.split_seeds.push_back(split_seed);
        result.split_accuracy.push_back(acc);
    }
    aggregate_result(result);
    return result;
}

// ---- unlabeled-size sweep ----------------------------------------------

struct SweepResult {
    std::vector<int> m_values;
    std::vector<RunResult> per_m;  // index-aligned with m_values
};

// One training per split, shared across all M; evaluation episodes reuse
// the same per-episode seeds so the N-class draws coincide across M.
inline SweepResult sweep_unlabeled(const RunConfig& cfg, const Dataset& ds, const std::vector<int>& m_list) {
    cfg.validate();
    SweepResult out;
    out.m_values = m_list;
    out.per_m.resize(m_list.size());
    for (std::uint64_t split_seed : cfg.split_seeds) {
        LabeledUnlabeledSplit split = make_split(ds, cfg.labeled_ratio, split_seed);
        TrainedModel tm = train_one_split(cfg, ds, split, split_seed);
        for (std::size_t mi = 0; mi < m_list.size(); ++mi) {
            EpisodeSpec spec = cfg.test_episode_spec();
            spec.m_unlabeled = m_list[mi];
            // refinement with an empty R is the identity, matching M=0
            const double acc = evaluate_episodes(tm.model, ds, split, Partition::TEST, spec,
                                                 cfg.eval_episodes, mix_seed(cfg.eval_seed, split_seed),
                                                 evaluation_variant(cfg), cfg.refine_steps);
            out.per_m[mi].split_seeds.push_back(split_seed);
            out.per_m[mi].split_accuracy.push_back(acc);
        }
    }
    for (auto& r : out.per_m)
        aggregate_result(r);
    return out;
}

// ---- mask diagnostics --------------------------------------------------

struct MaskRow {
    int episode_id;
    int item_id;
    int class_id;  // episode-local prototype index
    double mask;
    bool is_distractor;
};

struct MaskHistogram {
    std::vector<MaskRow> rows;
    double mean_mask_nondistractor = 0.0;
    double mean_mask_distractor = 0.0;
};

inline MaskHistogram mask_histogram(const Model& model, const Dataset& ds, const LabeledUnlabeledSplit& split,
                                    Partition partition, const EpisodeSpec& spec, int episodes,
                                    std::uint64_t base_seed, int refine_steps) {
    if (model.variant != RefinementVariant::MASKED_SOFT_KMEANS)
        throw ContractError("mask_histogram requires a model trained with masked_soft_kmeans");
    MaskHistogram out;
    double sum_nd = 0.0, sum_d = 0.0;
    std::int64_t n_nd = 0, n_d = 0;
    for (int i = 0; i < episodes; ++i) {
        Rng rng(mix_seed(base_seed, static_cast<std::uint64_t>(i)));
        Episode ep = sample_episode(ds, split, partition, spec, rng);
        Tape tape;
        TapeParams bound = bind_params(tape, model.params, false);
        EpisodeForward fwd =
            episode_forward(tape, model, bound, ep, RefinementVariant::MASKED_SOFT_KMEANS, refine_steps);
        if (!fwd.masks.valid())
            continue;
        const Tensor& m = tape.value(fwd.masks);
        for (int j = 0; j < m.shape[0]; ++j) {
            const bool distractor = ep.is_distractor[static_cast<std::size_t>(j)];
            for (int c = 0; c < m.shape[1]; ++c) {
                out.rows.push_back(MaskRow{i, j, c, m.at(j, c), distractor});
                if (distractor) {
                    sum_d += m.at(j, c);
                    ++n_d;
                } else {
                    sum_nd += m.at(j, c);
                    ++n_nd;
                }
            }
        }
    }
    if (n_nd > 0)
        out.mean_mask_nondistractor = sum_nd / static_cast<double>(n_nd);
    if (n_d > 0)
        out.mean_mask_distractor = sum_d / static_cast<double>(n_d);
    return out;
}

}  // namespace fsl
