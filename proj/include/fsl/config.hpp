#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsl/dataset.hpp"
#include "fsl/embedding.hpp"
#include "fsl/episodes.hpp"
#include "fsl/optim.hpp"
#include "fsl/refinement.hpp"

namespace fsl {

enum class RunMode { TRAIN_AND_REFINE, SUPERVISED_ONLY, SEMI_SUPERVISED_INFERENCE };

inline const char* mode_name(RunMode m) {
    switch (m) {
        case RunMode::TRAIN_AND_REFINE: return "train_and_refine";
        case RunMode::SUPERVISED_ONLY: return "supervised_only";
        case RunMode::SEMI_SUPERVISED_INFERENCE: return "semi_supervised_inference";
    }
    return "?";
}

inline RunMode mode_from_name(const std::string& s) {
    if (s == "train_and_refine") return RunMode::TRAIN_AND_REFINE;
    if (s == "supervised_only") return RunMode::SUPERVISED_ONLY;
    if (s == "semi_supervised_inference") return RunMode::SEMI_SUPERVISED_INFERENCE;
    throw ConfigError("unknown mode: '" + s + "'");
}

// Full experiment configuration. Parsed strictly: unknown JSON keys are
// hard errors so config typos cannot pass silently.
struct RunConfig {
    std::string run_id = "run";
    std::string dataset_path;  // FSLDS1 file; empty when synthetic is set
    bool has_synthetic = false;
    SyntheticSpec synthetic;
    double labeled_ratio = 0.1;

    RefinementVariant variant = RefinementVariant::NONE;
    RunMode mode = RunMode::TRAIN_AND_REFINE;
    int refine_steps = 1;

    int n_way = 5;
    int k_shot = 1;
    int m_train = 5;
    int m_test = 20;
    int h_train = 0;
    int h_test = 0;
    int q_per_class = 5;

    LrSchedule schedule;
    AdamConfig adam;

    std::int64_t total_updates = 5000;
    std::int64_t eval_every = 500;
    int eval_episodes = 600;
    int val_episodes = 100;

    std::vector<std::uint64_t> split_seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::uint64_t model_seed = 1;
    std::uint64_t eval_seed = 1234;

    EmbeddingConfig embedding;

    // logistic-regression baseline settings
    int logreg_iters = 500;
    double logreg_lr = 0.1;
    double logreg_l2 = 1e-4;

    EpisodeSpec train_episode_spec() const {
        return EpisodeSpec{n_way, k_shot, m_train, h_train, q_per_class};
    }
    EpisodeSpec test_episode_spec() const { return EpisodeSpec{n_way, k_shot, m_test, h_test, q_per_class}; }

    void validate() const {
        if (n_way < 1 || k_shot < 1 || q_per_class < 1 || m_train < 0 || m_test < 0 || h_train < 0 ||
            h_test < 0)
            throw ConfigError("episode: counts must be positive (m/h may be 0)");
        if (refine_steps < 1)
            throw ConfigError("refine_steps must be >= 1");
        if (total_updates < 0 || eval_every < 1 || eval_episodes < 1 || val_episodes < 1)
            throw ConfigError("training: counts must be positive");
        if (split_seeds.empty())
            throw ConfigError("seeds.split_seeds must be non-empty");
        if (dataset_path.empty() && !has_synthetic)
            throw ConfigError("config must set dataset (path) or dataset.synthetic");
        embedding.validate();
    }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                                const std::string& ctx) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k)
                ok = true;
        if (!ok)
            throw ConfigError("unknown config key '" + (ctx.empty() ? it.key() : ctx + "." + it.key()) + "'");
    }
}

inline SyntheticSpec parse_synthetic(const nlohmann::json& j) {
    reject_unknown_keys(j,
                        {"num_categories", "classes_per_category", "items_per_class", "input_dim",
                         "noisy_dims", "noisy_center_scale", "noisy_within_noise",
                         "nuisance_dims", "nuisance_scale", "category_center_scale", "class_center_scale",
                         "within_class_noise", "val_categories", "test_categories", "seed"},
                        "dataset.synthetic");
    SyntheticSpec s;
    s.num_categories = j.value("num_categories", s.num_categories);
    s.classes_per_category = j.value("classes_per_category", s.classes_per_category);
    s.items_per_class = j.value("items_per_class", s.items_per_class);
    s.input_dim = j.value("input_dim", s.input_dim);
    s.noisy_dims = j.value("noisy_dims", s.noisy_dims);
    s.noisy_center_scale = j.value("noisy_center_scale", s.noisy_center_scale);
    s.noisy_within_noise = j.value("noisy_within_noise", s.noisy_within_noise);
    s.nuisance_dims = j.value("nuisance_dims", s.nuisance_dims);
    s.nuisance_scale = j.value("nuisance_scale", s.nuisance_scale);
    s.category_center_scale = j.value("category_center_scale", s.category_center_scale);
    s.class_center_scale = j.value("class_center_scale", s.class_center_scale);
    s.within_class_noise = j.value("within_class_noise", s.within_class_noise);
    s.val_categories = j.value("val_categories", s.val_categories);
    s.test_categories = j.value("test_categories", s.test_categories);
    s.seed = j.value("seed", s.seed);
    return s;
}

inline EmbeddingConfig parse_embedding(const nlohmann::json& j) {
    reject_unknown_keys(j, {"kind", "input_shape", "hidden", "embed_dim", "nonlinearity"}, "embedding");
    EmbeddingConfig e;
    const std::string kind = j.value("kind", std::string("mlp"));
    if (kind == "mlp")
        e.kind = EmbeddingConfig::Kind::MLP;
    else if (kind == "conv")
        e.kind = EmbeddingConfig::Kind::CONV;
    else
        throw ConfigError("embedding.kind must be 'mlp' or 'conv', got '" + kind + "'");
    if (j.contains("input_shape"))
        e.input_shape = j.at("input_shape").get<std::vector<int>>();
    e.hidden = j.value("hidden", e.hidden);
    e.embed_dim = j.value("embed_dim", e.embed_dim);
    const std::string nl = j.value("nonlinearity", std::string("relu"));
    if (nl == "relu")
        e.nonlin = EmbeddingConfig::Nonlin::RELU;
    else if (nl == "tanh")
        e.nonlin = EmbeddingConfig::Nonlin::TANH;
    else
        throw ConfigError("embedding.nonlinearity must be 'relu' or 'tanh', got '" + nl + "'");
    return e;
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j, {"run_id", "dataset", "labeled_ratio", "variant", "mode", "episode", "optimizer", "training",
            "seeds", "embedding", "logreg"},
        "");
    RunConfig c;
    c.run_id = j.value("run_id", c.run_id);
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        if (d.is_string()) {
            c.dataset_path = d.get<std::string>();
        } else {
            detail::reject_unknown_keys(d, {"path", "synthetic"}, "dataset");
            c.dataset_path = d.value("path", std::string());
            if (d.contains("synthetic")) {
                c.has_synthetic = true;
                c.synthetic = detail::parse_synthetic(d.at("synthetic"));
            }
        }
    }
    c.labeled_ratio = j.value("labeled_ratio", c.labeled_ratio);
    if (j.contains("variant"))
        c.variant = variant_from_name(j.at("variant").get<std::string>());
    if (j.contains("mode"))
        c.mode = mode_from_name(j.at("mode").get<std::string>());
    if (j.contains("episode")) {
        const auto& e = j.at("episode");
        detail::reject_unknown_keys(
            e, {"n_way", "k_shot", "m_train", "m_test", "h_train", "h_test", "q_per_class"}, "episode");
        c.n_way = e.value("n_way", c.n_way);
        c.k_shot = e.value("k_shot", c.k_shot);
        c.m_train = e.value("m_train", c.m_train);
        c.m_test = e.value("m_test", c.m_test);
        c.h_train = e.value("h_train", c.h_train);
        c.h_test = e.value("h_test", c.h_test);
        c.q_per_class = e.value("q_per_class", c.q_per_class);
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        detail::reject_unknown_keys(o, {"lr", "decay_every", "decay_start", "beta1", "beta2", "epsilon"},
                                    "optimizer");
        c.schedule.base = o.value("lr", c.schedule.base);
        c.schedule.decay_every = o.value("decay_every", c.schedule.decay_every);
        c.schedule.start_at = o.value("decay_start", c.schedule.start_at);
        c.adam.beta1 = o.value("beta1", c.adam.beta1);
        c.adam.beta2 = o.value("beta2", c.adam.beta2);
        c.adam.epsilon = o.value("epsilon", c.adam.epsilon);
    }
    if (j.contains("training")) {
        const auto& t = j.at("training");
        detail::reject_unknown_keys(
            t, {"total_updates", "eval_every", "eval_episodes", "val_episodes", "refine_steps"}, "training");
        c.total_updates = t.value("total_updates", c.total_updates);
        c.eval_every = t.value("eval_every", c.eval_every);
        c.eval_episodes = t.value("eval_episodes", c.eval_episodes);
        c.val_episodes = t.value("val_episodes", c.val_episodes);
        c.refine_steps = t.value("refine_steps", c.refine_steps);
    }
    if (j.contains("seeds")) {
        const auto& s = j.at("seeds");
        detail::reject_unknown_keys(s, {"split_seeds", "model_seed", "eval_seed"}, "seeds");
        if (s.contains("split_seeds"))
            c.split_seeds = s.at("split_seeds").get<std::vector<std::uint64_t>>();
        c.model_seed = s.value("model_seed", c.model_seed);
        c.eval_seed = s.value("eval_seed", c.eval_seed);
    }
    if (j.contains("embedding"))
        c.embedding = detail::parse_embedding(j.at("embedding"));
    if (j.contains("logreg")) {
        const auto& l = j.at("logreg");
        detail::reject_unknown_keys(l, {"iters", "lr", "l2"}, "logreg");
        c.logreg_iters = l.value("iters", c.logreg_iters);
        c.logreg_lr = l.value("lr", c.logreg_lr);
        c.logreg_l2 = l.value("l2", c.logreg_l2);
    }
    return c;
}

// key=value with dotted keys, e.g. "episode.m_train=5". The value is parsed
// as JSON when possible, otherwise taken as a string.
inline void apply_override(nlohmann::json& j, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must be key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string val = kv.substr(eq + 1);
    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(val);
    } catch (const nlohmann::json::exception&) {
        parsed = val;
    }
    nlohmann::json* cur = &j;
    std::size_t pos = 0;
    while (true) {
        const auto dot = key.find('.', pos);
        const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (part.empty())
            throw ConfigError("empty key segment in override '" + kv + "'");
        if (dot == std::string::npos) {
            (*cur)[part] = parsed;
            break;
        }
        cur = &(*cur)[part];
        pos = dot + 1;
    }
}

inline nlohmann::json load_config_json(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw ConfigError("cannot open config: " + path);
    try {
        nlohmann::json j;
        f >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config JSON in " + path + ": " + e.what());
    }
}

// FNV-1a over the canonical dump; used for result provenance.
inline std::string config_hash(const nlohmann::json& j) {
    const std::string s = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace fsl
