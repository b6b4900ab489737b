#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fsl/baselines.hpp"
#include "fsl/train.hpp"

using namespace fsl;

namespace {

Dataset easy_dataset(std::uint64_t seed = 100) {
    SyntheticSpec spec;
    spec.num_categories = 6;
    spec.classes_per_category = 3;
    spec.items_per_class = 30;
    spec.input_dim = 4;
    spec.category_center_scale = 4.0;
    spec.class_center_scale = 1.5;
    spec.within_class_noise = 0.4;
    spec.val_categories = 1;
    spec.test_categories = 1;
    spec.seed = seed;
    return gen_synthetic(spec);
}

RunConfig tiny_config() {
    RunConfig cfg;
    cfg.has_synthetic = true;  // dataset comes from the test, flag satisfies validate()
    cfg.labeled_ratio = 0.4;
    cfg.n_way = 3;
    cfg.k_shot = 1;
    cfg.m_train = 3;
    cfg.m_test = 3;
    cfg.h_train = 0;
    cfg.h_test = 0;
    cfg.q_per_class = 3;
    cfg.total_updates = 30;
    cfg.eval_every = 15;
    cfg.eval_episodes = 20;
    cfg.val_episodes = 5;
    cfg.split_seeds = {0, 1};
    cfg.embedding.input_shape = {4};
    cfg.embedding.hidden = {8};
    cfg.embedding.embed_dim = 4;
    return cfg;
}

}  // namespace

TEST_CASE("identical configs and seeds give bit-identical results") {
    Dataset ds = easy_dataset();
    RunConfig cfg = tiny_config();
    cfg.variant = RefinementVariant::SOFT_KMEANS;
    RunResult a = run_experiment(cfg, ds);
    RunResult b = run_experiment(cfg, ds);
    CHECK(a.split_accuracy == b.split_accuracy);
    CHECK(a.mean == b.mean);
    CHECK(a.stderr_mean == b.stderr_mean);
}

TEST_CASE("supervised mode and an M=0 refinement run take identical update sequences") {
    Dataset ds = easy_dataset();
    auto split = make_split(ds, 0.4, 0);

    RunConfig sup = tiny_config();
    sup.mode = RunMode::SUPERVISED_ONLY;
    sup.variant = RefinementVariant::SOFT_KMEANS;  // ignored by the supervised baseline

    RunConfig ref = tiny_config();
    ref.mode = RunMode::TRAIN_AND_REFINE;
    ref.variant = RefinementVariant::NONE;
    ref.m_train = 0;
    ref.h_train = 0;

    TrainedModel a = train_one_split(sup, ds, split, 0);
    TrainedModel b = train_one_split(ref, ds, split, 0);
    CHECK(a.loss_trace == b.loss_trace);
    for (std::size_t i = 0; i < a.model.params.size(); ++i)
        CHECK(a.model.params.entries()[i].tensor.data == b.model.params.entries()[i].tensor.data);

    // soft k-means over an empty unlabeled set is the identity refinement
    RunConfig ref2 = ref;
    ref2.variant = RefinementVariant::SOFT_KMEANS;
    TrainedModel c = train_one_split(ref2, ds, split, 0);
    CHECK(a.loss_trace == c.loss_trace);
}

TEST_CASE("reported stderr is the stddev of split means over sqrt of the split count") {
    RunResult r;
    r.split_seeds = {0, 1, 2, 3};
    r.split_accuracy = {0.5, 0.6, 0.7, 0.8};
    aggregate_result(r);
    const double mu = 0.65;
    double var = 0.0;
    for (double a : r.split_accuracy)
        var += (a - mu) * (a - mu);
    var /= 4.0;
    CHECK(r.mean == doctest::Approx(mu).epsilon(1e-15));
    CHECK(r.stderr_mean == doctest::Approx(std::sqrt(var) / 2.0).epsilon(1e-15));
    RunResult empty;
    CHECK_THROWS_AS(aggregate_result(empty), ContractError);
}

TEST_CASE("training drives the loss below ln(N)/2 on separable data") {
    Dataset ds = easy_dataset();
    auto split = make_split(ds, 0.4, 0);
    RunConfig cfg = tiny_config();
    cfg.mode = RunMode::SUPERVISED_ONLY;
    cfg.total_updates = 400;
    cfg.eval_every = 400;
    TrainedModel tm = train_one_split(cfg, ds, split, 0);
    double tail = 0.0;
    for (std::size_t i = tm.loss_trace.size() - 40; i < tm.loss_trace.size(); ++i) {
        CHECK(std::isfinite(tm.loss_trace[i]));
        tail += tm.loss_trace[i];
    }
    tail /= 40.0;
    CHECK(tail < std::log(3.0) / 2.0);
    CHECK(tm.best_val_accuracy > 1.0 / 3.0);
}

TEST_CASE("semi-supervised inference refuses a refinement-trained config") {
    Dataset ds = easy_dataset();
    auto split = make_split(ds, 0.4, 0);
    RunConfig cfg = tiny_config();
    cfg.mode = RunMode::SEMI_SUPERVISED_INFERENCE;
    cfg.variant = RefinementVariant::MASKED_SOFT_KMEANS;
    CHECK_THROWS_AS(train_one_split(cfg, ds, split, 0), ContractError);
}

TEST_CASE("semi-supervised inference with no unlabeled data equals supervised evaluation") {
    Dataset ds = easy_dataset();
    auto split = make_split(ds, 0.4, 0);
    RunConfig cfg = tiny_config();
    cfg.mode = RunMode::SEMI_SUPERVISED_INFERENCE;
    cfg.variant = RefinementVariant::NONE;
    TrainedModel tm = train_one_split(cfg, ds, split, 0);

    EpisodeSpec spec = cfg.test_episode_spec();
    spec.m_unlabeled = 0;
    spec.h_distractor = 0;
    const double ssi = evaluate_episodes(tm.model, ds, split, Partition::TEST, spec, 50, 9,
                                         RefinementVariant::SOFT_KMEANS, 1);
    const double sup = evaluate_episodes(tm.model, ds, split, Partition::TEST, spec, 50, 9,
                                         RefinementVariant::NONE, 1);
    CHECK(ssi == sup);
}

TEST_CASE("an untrained symmetric model scores near chance") {
    Dataset ds = easy_dataset();
    auto split = make_split(ds, 0.4, 0);
    EmbeddingConfig ecfg;
    ecfg.input_shape = {4};
    ecfg.hidden = {8};
    ecfg.embed_dim = 4;
    Model m = init_model(ecfg, RefinementVariant::NONE, 1, 5);
    // collapse the embedding so every input maps to the same point
    for (auto& e : m.params.entries())
        for (auto& v : e.tensor.data)
            v = 0.0;
    EpisodeSpec spec{3, 1, 0, 0, 3};
    const double acc =
        evaluate_episodes(m, ds, split, Partition::TEST, spec, 200, 1, RefinementVariant::NONE, 1);
    // constant embeddings tie every class; the tie rule then always predicts
    // class 0, which is correct for exactly one query in three
    CHECK(acc == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("unlabeled-size sweep shares trainings across M values") {
    Dataset ds = easy_dataset();
    RunConfig cfg = tiny_config();
    cfg.variant = RefinementVariant::SOFT_KMEANS;
    cfg.split_seeds = {0};
    cfg.eval_episodes = 20;
    SweepResult sweep = sweep_unlabeled(cfg, ds, {0, 3});
    REQUIRE(sweep.m_values == std::vector<int>{0, 3});
    REQUIRE(sweep.per_m.size() == 2);
    CHECK(sweep.per_m[0].split_accuracy.size() == 1);

    // M=0 row equals a supervised evaluation of the same trained embedding
    auto split = make_split(ds, cfg.labeled_ratio, 0);
    TrainedModel tm = train_one_split(cfg, ds, split, 0);
    EpisodeSpec spec = cfg.test_episode_spec();
    spec.m_unlabeled = 0;
    const double sup = evaluate_episodes(tm.model, ds, split, Partition::TEST, spec, cfg.eval_episodes,
                                         mix_seed(cfg.eval_seed, 0), RefinementVariant::SOFT_KMEANS, 1);
    CHECK(sweep.per_m[0].split_accuracy[0] == sup);
}

TEST_CASE("mask histogram requires a masked model and reports every mask") {
    Dataset ds = easy_dataset();
    auto split = make_split(ds, 0.4, 0);
    EmbeddingConfig ecfg;
    ecfg.input_shape = {4};
    ecfg.hidden = {8};
    ecfg.embed_dim = 4;

    Model plain = init_model(ecfg, RefinementVariant::NONE, 1, 3);
    EpisodeSpec spec{2, 1, 2, 1, 2};
    CHECK_THROWS_AS(mask_histogram(plain, ds, split, Partition::TEST, spec, 3, 1, 1), ContractError);

    Model masked = init_model(ecfg, RefinementVariant::MASKED_SOFT_KMEANS, 1, 3);
    // zero the mask MLP: every mask must come out exactly 0.5
    for (auto& e : masked.params.entries())
        if (e.name.rfind("mask.", 0) == 0)
            for (auto& v : e.tensor.data)
                v = 0.0;
    MaskHistogram h = mask_histogram(masked, ds, split, Partition::TEST, spec, 4, 1, 1);
    // 4 episodes x (M * (N+H) = 6 unlabeled rows) x N=2 prototypes
    CHECK(h.rows.size() == 4 * 6 * 2);
    for (const auto& row : h.rows)
        CHECK(row.mask == 0.5);
    CHECK(h.mean_mask_nondistractor == doctest::Approx(0.5));
    CHECK(h.mean_mask_distractor == doctest::Approx(0.5));
}

TEST_CASE("nearest-neighbor baseline basics") {
    Tensor support = Tensor::mat(2, 2, {0.0, 0.0, 2.0, 0.0});
    SUBCASE("query on a support item takes its label") {
        Tensor q = Tensor::mat(1, 2, {2.0, 0.0});
        CHECK(predict_1nn(support, {0, 1}, q) == std::vector<int>{1});
    }
    SUBCASE("midpoint ties to the lowest support index") {
        Tensor q = Tensor::mat(1, 2, {1.0, 0.0});
        CHECK(predict_1nn(support, {0, 1}, q) == std::vector<int>{0});
    }
}

TEST_CASE("logistic-regression baseline basics") {
    SUBCASE("single class is always right") {
        Tensor x = Tensor::mat(2, 2, {0.1, 0.2, -0.3, 0.4});
        LogRegFit fit = fit_logreg(x, {0, 0}, 1, LogRegOptions{});
        CHECK_FALSE(fit.diverged);
        CHECK(predict_logreg(fit, Tensor::mat(1, 2, {5.0, -2.0})) == std::vector<int>{0});
    }
    SUBCASE("separable support is fit correctly") {
        Tensor x = Tensor::mat(4, 1, {-2.0, -1.5, 1.5, 2.0});
        LogRegFit fit = fit_logreg(x, {0, 0, 1, 1}, 2, LogRegOptions{});
        CHECK(predict_logreg(fit, Tensor::mat(2, 1, {-3.0, 3.0})) == std::vector<int>{0, 1});
    }
}

TEST_CASE("baselines run on the shared episode stream") {
    Dataset ds = easy_dataset();
    auto split = make_split(ds, 0.4, 0);
    EpisodeSpec spec{3, 1, 0, 0, 3};
    BaselineResult nn =
        run_baseline(BaselineKind::NEAREST_NEIGHBOR, FeatureExtractor{}, ds, split, Partition::TEST, spec, 50, 77);
    CHECK(nn.episodes == 50);
    CHECK(nn.accuracy > 1.0 / 3.0);  // raw inputs separate this easy benchmark

    BaselineResult lr = run_baseline(BaselineKind::LOGREG, FeatureExtractor{}, ds, split, Partition::TEST,
                                     spec, 50, 77, LogRegOptions{});
    CHECK(lr.episodes + lr.excluded == 50);
    CHECK(lr.accuracy > 1.0 / 3.0);
}

TEST_CASE("pretraining yields a frozen embedding and an above-chance head") {
    Dataset ds = easy_dataset();
    auto split = make_split(ds, 0.4, 0);
    EmbeddingConfig ecfg;
    ecfg.hidden = {8};
    ecfg.embed_dim = 4;
    PretrainOptions opt;
    opt.updates = 300;
    PretrainResult pre = pretrain_classifier(ecfg, ds, split, 11, opt);
    CHECK(pre.embedding.has("embed.out.w"));
    CHECK(pre.head.has("head.w"));

    EmbeddingConfig bound = ecfg;
    bound.input_shape = {4};
    FeatureExtractor fx(bound, pre.embedding);
    Tensor probe = Tensor::mat(2, 4, {0.1, -0.2, 0.3, 0.4, 1.0, 0.0, -1.0, 0.5});
    CHECK(fx(probe).data == fx(probe).data);

    const double chance = 1.0 / static_cast<double>(ds.classes_in(Partition::TRAIN).size());
    CHECK(pretrain_head_accuracy(pre, ecfg, ds, split) > 2.0 * chance);
}
