// Command-line front end: data generation, splitting, training, evaluation,
// sweeps, baselines, mask diagnostics, and results export.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fsl/fsl.hpp"

namespace {

using nlohmann::json;

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

json load_with_overrides(const std::string& path, const std::vector<std::string>& overrides) {
    json j = fsl::load_config_json(path);
    for (const auto& kv : overrides)
        fsl::apply_override(j, kv);
    return j;
}

// Opens the dataset, defaults the embedding input shape from it, and
// validates the completed config.
fsl::Dataset open_dataset(fsl::RunConfig& cfg) {
    fsl::Dataset ds;
    if (!cfg.dataset_path.empty())
        ds = fsl::load_dataset(cfg.dataset_path);
    else if (cfg.has_synthetic)
        ds = fsl::gen_synthetic(cfg.synthetic);
    else
        throw fsl::ConfigError("config must set dataset.path or dataset.synthetic");
    if (cfg.embedding.input_shape.empty())
        cfg.embedding.input_shape = ds.input_shape;
    cfg.validate();
    return ds;
}

std::string run_base(const std::string& out_dir, const fsl::RunConfig& cfg) {
    std::filesystem::create_directories(out_dir);
    return (std::filesystem::path(out_dir) / cfg.run_id).string();
}

// The manifest goes to disk before any work so interrupted runs stay
// attributable; it is rewritten with the wall time on success.
void write_manifest(const std::string& base, const fsl::RunConfig& cfg, const json& raw,
                    const std::string& command, double wall_seconds) {
    fsl::write_file_atomic(base + ".manifest.json",
                           fsl::run_manifest(cfg, raw, command, wall_seconds).dump(2) + "\n");
}

// Provenance for commands whose outputs are not standard results CSVs
// (sweeps, mask dumps); kept out of the export scan.
void write_meta(const std::string& base, const fsl::RunConfig& cfg, const json& raw,
                const std::string& command, double wall_seconds) {
    fsl::write_file_atomic(base + ".meta.json",
                           fsl::run_manifest(cfg, raw, command, wall_seconds).dump(2) + "\n");
}

std::string checkpoint_base(const std::string& base, std::uint64_t split_seed) {
    return base + ".split" + std::to_string(split_seed);
}

fsl::Model load_model(const fsl::RunConfig& cfg, const fsl::Dataset& ds, const std::string& base,
                      std::uint64_t split_seed) {
    fsl::Model m;
    m.embedding = cfg.embedding;
    if (m.embedding.input_shape.empty())
        m.embedding.input_shape = ds.input_shape;
    m.variant = fsl::training_variant(cfg);
    m.refine_steps = cfg.refine_steps;
    m.params = fsl::load_params(checkpoint_base(base, split_seed));
    return m;
}

// Evaluate previously written checkpoints with the current episode settings.
fsl::RunResult evaluate_checkpoints(const fsl::RunConfig& cfg, const fsl::Dataset& ds,
                                    const std::string& base, fsl::RefinementVariant effective) {
    fsl::RunResult result;
    for (std::uint64_t split_seed : cfg.split_seeds) {
        fsl::LabeledUnlabeledSplit split = fsl::make_split(ds, cfg.labeled_ratio, split_seed);
        fsl::Model model = load_model(cfg, ds, base, split_seed);
        const double acc = fsl::evaluate_episodes(model, ds, split, fsl::Partition::TEST,
                                                  cfg.test_episode_spec(), cfg.eval_episodes,
                                                  fsl::mix_seed(cfg.eval_seed, split_seed), effective,
                                                  cfg.refine_steps);
        result.split_seeds.push_back(split_seed);
        result.split_accuracy.push_back(acc);
    }
    fsl::aggregate_result(result);
    return result;
}

int cmd_gen_data(const std::string& config_path, const std::vector<std::string>& overrides,
                 const std::string& out) {
    json j = load_with_overrides(config_path, overrides);
    fsl::SyntheticSpec spec = fsl::detail::parse_synthetic(j);
    fsl::Dataset ds = fsl::gen_synthetic(spec);
    fsl::save_dataset(ds, out);
    std::cout << "wrote " << out << ": " << ds.num_items() << " items, " << ds.num_classes()
              << " classes\n";
    return 0;
}

int cmd_split(const std::string& data_path, double ratio, std::uint64_t seed, const std::string& out) {
    fsl::Dataset ds = fsl::load_dataset(data_path);
    fsl::LabeledUnlabeledSplit split = fsl::make_split(ds, ratio, seed);
    json j;
    j["labeled_ratio"] = ratio;
    j["seed"] = seed;
    j["labeled"] = split.labeled;
    j["unlabeled"] = split.unlabeled;
    fsl::write_file_atomic(out, j.dump(2) + "\n");
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& out_dir, const std::string& command) {
    Timer timer;
    json raw = load_with_overrides(config_path, overrides);
    fsl::RunConfig cfg = fsl::parse_run_config(raw);
    fsl::Dataset ds = open_dataset(cfg);
    const std::string base = run_base(out_dir, cfg);
    write_manifest(base, cfg, raw, command, 0.0);

    fsl::RunResult result;
    for (std::uint64_t split_seed : cfg.split_seeds) {
        fsl::LabeledUnlabeledSplit split = fsl::make_split(ds, cfg.labeled_ratio, split_seed);
        fsl::TrainedModel tm = fsl::train_one_split(cfg, ds, split, split_seed);
        fsl::save_params(tm.model.params, checkpoint_base(base, split_seed));
        const double acc = fsl::evaluate_episodes(
            tm.model, ds, split, fsl::Partition::TEST, cfg.test_episode_spec(), cfg.eval_episodes,
            fsl::mix_seed(cfg.eval_seed, split_seed), fsl::evaluation_variant(cfg), cfg.refine_steps);
        result.split_seeds.push_back(split_seed);
        result.split_accuracy.push_back(acc);
        std::cout << "split " << split_seed << ": test accuracy " << acc << "\n";
    }
    fsl::aggregate_result(result);
    result.config_hash = fsl::config_hash(raw);
    fsl::write_file_atomic(base + ".results.csv", fsl::results_csv(cfg, result));
    write_manifest(base, cfg, raw, command, timer.seconds());
    std::cout << "mean " << result.mean << " +/- " << result.stderr_mean << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::vector<std::string>& overrides,
             const std::string& out_dir, const std::string& command, bool ssi) {
    Timer timer;
    json raw = load_with_overrides(config_path, overrides);
    fsl::RunConfig cfg = fsl::parse_run_config(raw);
    if (ssi) {
        if (cfg.variant != fsl::RefinementVariant::NONE)
            throw fsl::ConfigError("ssi-eval requires variant 'none' (key: variant)");
        cfg.mode = fsl::RunMode::SEMI_SUPERVISED_INFERENCE;
    }
    fsl::Dataset ds = open_dataset(cfg);
    const std::string base = run_base(out_dir, cfg);
    // eval artifacts get their own run id so they coexist with the
    // training run in the same directory and in exports
    fsl::RunConfig ecfg = cfg;
    ecfg.run_id += ssi ? ".ssi-eval" : ".eval";
    const std::string ebase = run_base(out_dir, ecfg);
    write_manifest(ebase, ecfg, raw, command, 0.0);
    fsl::RunResult result = evaluate_checkpoints(cfg, ds, base, fsl::evaluation_variant(cfg));
    result.config_hash = fsl::config_hash(raw);
    fsl::write_file_atomic(ebase + ".results.csv", fsl::results_csv(ecfg, result));
    write_manifest(ebase, ecfg, raw, command, timer.seconds());
    std::cout << "mean " << result.mean << " +/- " << result.stderr_mean << "\n";
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& out_dir, const std::string& command, std::vector<int> m_list) {
    Timer timer;
    json raw = load_with_overrides(config_path, overrides);
    fsl::RunConfig cfg = fsl::parse_run_config(raw);
    if (m_list.empty())
        m_list = {0, 1, 2, 5, 10, 25};
    fsl::Dataset ds = open_dataset(cfg);
    const std::string base = run_base(out_dir, cfg);
    write_meta(base + ".sweep", cfg, raw, command, 0.0);
    fsl::SweepResult sweep = fsl::sweep_unlabeled(cfg, ds, m_list);
    fsl::write_file_atomic(base + ".sweep.csv", fsl::sweep_csv(cfg, sweep));
    write_meta(base + ".sweep", cfg, raw, command, timer.seconds());
    for (std::size_t i = 0; i < m_list.size(); ++i)
        std::cout << "M=" << m_list[i] << ": " << sweep.per_m[i].mean << " +/- "
                  << sweep.per_m[i].stderr_mean << "\n";
    return 0;
}

int cmd_baseline(const std::string& config_path, const std::vector<std::string>& overrides,
                 const std::string& out_dir, const std::string& command, const std::string& kind_name,
                 const std::string& features_name) {
    Timer timer;
    json raw = load_with_overrides(config_path, overrides);
    fsl::RunConfig cfg = fsl::parse_run_config(raw);
    fsl::BaselineKind kind;
    if (kind_name == "1nn")
        kind = fsl::BaselineKind::NEAREST_NEIGHBOR;
    else if (kind_name == "logreg")
        kind = fsl::BaselineKind::LOGREG;
    else
        throw fsl::ConfigError("baseline kind must be '1nn' or 'logreg' (flag: --kind)");
    const fsl::FeatureKind features = fsl::feature_from_name(features_name);

    fsl::Dataset ds = open_dataset(cfg);
    const std::string base = run_base(out_dir, cfg);
    write_manifest(base, cfg, raw, command, 0.0);

    fsl::LogRegOptions lr_opt{cfg.logreg_iters, cfg.logreg_lr, cfg.logreg_l2};
    fsl::RunResult result;
    for (std::uint64_t split_seed : cfg.split_seeds) {
        fsl::LabeledUnlabeledSplit split = fsl::make_split(ds, cfg.labeled_ratio, split_seed);
        fsl::EmbeddingConfig ecfg = cfg.embedding;
        if (ecfg.input_shape.empty())
            ecfg.input_shape = ds.input_shape;
        fsl::FeatureExtractor fx;
        if (features == fsl::FeatureKind::EMBED_RANDOM) {
            fx = fsl::FeatureExtractor(ecfg, fsl::init_embedding(ecfg, fsl::mix_seed(cfg.model_seed, split_seed)));
        } else if (features == fsl::FeatureKind::EMBED_PRETRAINED) {
            fsl::PretrainResult pre =
                fsl::pretrain_classifier(ecfg, ds, split, fsl::mix_seed(cfg.model_seed, split_seed));
            fx = fsl::FeatureExtractor(ecfg, std::move(pre.embedding));
        }
        fsl::BaselineResult br =
            fsl::run_baseline(kind, fx, ds, split, fsl::Partition::TEST, cfg.test_episode_spec(),
                              cfg.eval_episodes, fsl::mix_seed(cfg.eval_seed, split_seed), lr_opt);
        result.split_seeds.push_back(split_seed);
        result.split_accuracy.push_back(br.accuracy);
        if (br.excluded > 0)
            std::cout << "split " << split_seed << ": " << br.excluded << " diverged episodes excluded\n";
    }
    fsl::aggregate_result(result);
    result.config_hash = fsl::config_hash(raw);
    fsl::write_file_atomic(base + ".results.csv", fsl::results_csv(cfg, result));
    write_manifest(base, cfg, raw, command, timer.seconds());
    std::cout << "mean " << result.mean << " +/- " << result.stderr_mean << "\n";
    return 0;
}

int cmd_mask_hist(const std::string& config_path, const std::vector<std::string>& overrides,
                  const std::string& out_dir, const std::string& command, int episodes) {
    Timer timer;
    json raw = load_with_overrides(config_path, overrides);
    fsl::RunConfig cfg = fsl::parse_run_config(raw);
    fsl::Dataset ds = open_dataset(cfg);
    const std::string base = run_base(out_dir, cfg);
    write_meta(base + ".mask-hist", cfg, raw, command, 0.0);

    std::string out;
    double nd = 0.0, d = 0.0;
    int splits = 0;
    for (std::uint64_t split_seed : cfg.split_seeds) {
        fsl::LabeledUnlabeledSplit split = fsl::make_split(ds, cfg.labeled_ratio, split_seed);
        fsl::Model model = load_model(cfg, ds, base, split_seed);
        fsl::MaskHistogram h =
            fsl::mask_histogram(model, ds, split, fsl::Partition::TEST, cfg.test_episode_spec(), episodes,
                                fsl::mix_seed(cfg.eval_seed, split_seed), cfg.refine_steps);
        if (out.empty())
            out = fsl::mask_histogram_csv(h);
        else {
            std::string body = fsl::mask_histogram_csv(h);
            out += body.substr(body.find('\n') + 1);
        }
        nd += h.mean_mask_nondistractor;
        d += h.mean_mask_distractor;
        ++splits;
    }
    fsl::write_file_atomic(base + ".masks.csv", out);
    write_meta(base + ".mask-hist", cfg, raw, command, timer.seconds());
    std::cout << "mean mask: non-distractor " << nd / splits << ", distractor " << d / splits << "\n";
    return 0;
}

int cmd_export(const std::string& run_dir, const std::string& out) {
    fsl::write_file_atomic(out, fsl::export_runs(run_dir));
    std::cout << "wrote " << out << "\n";
    return 0;
}

std::string joined_command(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i)
            s += ' ';
        s += argv[i];
    }
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string(fsl::kVersion) +
                 " - semi-supervised prototypical networks on episodic few-shot tasks"};
    app.require_subcommand(1);

    std::string config_path, out, out_dir = "runs", data_path, run_dir;
    std::vector<std::string> overrides;
    double ratio = 0.1;
    std::uint64_t seed = 0;
    std::vector<int> m_list;
    std::string baseline_kind = "1nn", baseline_features = "pixel";
    int hist_episodes = 100;

    auto add_config = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file")->required();
        cmd->add_option("--override", overrides, "dotted key=value config overrides");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset file");
    add_config(gen);
    gen->add_option("--out", out, "output dataset path")->required();

    CLI::App* spl = app.add_subcommand("split", "write a labeled/unlabeled split as JSON");
    spl->add_option("--data", data_path, "dataset file")->required();
    spl->add_option("--ratio", ratio, "labeled ratio in (0,1)");
    spl->add_option("--seed", seed, "split seed");
    spl->add_option("--out", out, "output JSON path")->required();

    CLI::App* train = app.add_subcommand("train", "train per split seed, checkpoint, evaluate on test");
    add_config(train);
    train->add_option("--out-dir", out_dir, "artifact directory");

    CLI::App* eval = app.add_subcommand("eval", "re-evaluate checkpoints with the current settings");
    add_config(eval);
    eval->add_option("--out-dir", out_dir, "artifact directory holding the checkpoints");

    CLI::App* ssi = app.add_subcommand("ssi-eval",
                                       "evaluate supervised checkpoints with one soft k-means step");
    add_config(ssi);
    ssi->add_option("--out-dir", out_dir, "artifact directory holding the checkpoints");

    CLI::App* sweep = app.add_subcommand("sweep-m", "accuracy as a function of the test-time unlabeled count");
    add_config(sweep);
    sweep->add_option("--out-dir", out_dir, "artifact directory");
    sweep->add_option("--m-list", m_list, "test-time M values (default 0,1,2,5,10,25)");

    CLI::App* baseline = app.add_subcommand("baseline", "episodic nearest-neighbor / logistic-regression baselines");
    add_config(baseline);
    baseline->add_option("--out-dir", out_dir, "artifact directory");
    baseline->add_option("--kind", baseline_kind, "1nn or logreg");
    baseline->add_option("--features", baseline_features, "pixel, embed_random, or embed_pretrained");

    CLI::App* hist = app.add_subcommand("mask-hist", "dump mask values with hidden distractor flags");
    add_config(hist);
    hist->add_option("--out-dir", out_dir, "artifact directory holding the checkpoints");
    hist->add_option("--episodes", hist_episodes, "episodes per split");

    CLI::App* exp = app.add_subcommand("export", "consolidate results CSVs across runs");
    exp->add_option("--run-dir", run_dir, "directory of run manifests")->required();
    exp->add_option("--out", out, "output CSV path")->required();

    try {
        app.parse(argc, argv);
        const std::string command = joined_command(argc, argv);
        if (gen->parsed())
            return cmd_gen_data(config_path, overrides, out);
        if (spl->parsed())
            return cmd_split(data_path, ratio, seed, out);
        if (train->parsed())
            return cmd_train(config_path, overrides, out_dir, command);
        if (eval->parsed())
            return cmd_eval(config_path, overrides, out_dir, command, false);
        if (ssi->parsed())
            return cmd_eval(config_path, overrides, out_dir, command, true);
        if (sweep->parsed())
            return cmd_sweep(config_path, overrides, out_dir, command, m_list);
        if (baseline->parsed())
            return cmd_baseline(config_path, overrides, out_dir, command, baseline_kind, baseline_features);
        if (hist->parsed())
            return cmd_mask_hist(config_path, overrides, out_dir, command, hist_episodes);
        if (exp->parsed())
            return cmd_export(run_dir, out);
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const fsl::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
