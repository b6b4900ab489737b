#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsl/config.hpp"
#include "fsl/train.hpp"

namespace fsl {

inline constexpr const char* kVersion = "fsl 0.1.0";
inline constexpr const char* kResultsCsvHeader =
    "run_id,variant,mode,n_way,k_shot,m_train,m_test,h,split_seed,accuracy,stderr";

// Partial outputs go to a temp name and are renamed only on success.
inline void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f)
            throw IoError("cannot open for write: " + tmp);
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!f)
            throw IoError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10f", v);
    return buf;
}

// One row per split, then an aggregate row (split_seed = "aggregate").
inline std::string results_csv(const RunConfig& cfg, const RunResult& result, int m_test_override = -1) {
    const int m_test = m_test_override >= 0 ? m_test_override : cfg.m_test;
    std::string prefix = cfg.run_id + "," + variant_name(cfg.variant) + "," + mode_name(cfg.mode) + "," +
                         std::to_string(cfg.n_way) + "," + std::to_string(cfg.k_shot) + "," +
                         std::to_string(cfg.m_train) + "," + std::to_string(m_test) + "," +
                         std::to_string(cfg.h_test) + ",";
    std::string out = std::string(kResultsCsvHeader) + "\n";
    for (std::size_t i = 0; i < result.split_seeds.size(); ++i)
        out += prefix + std::to_string(result.split_seeds[i]) + "," +
               format_double(result.split_accuracy[i]) + ",0.0000000000\n";
    out += prefix + "aggregate," + format_double(result.mean) + "," + format_double(result.stderr_mean) + "\n";
    return out;
}

inline nlohmann::json run_manifest(const RunConfig& cfg, const nlohmann::json& raw_config,
                                   const std::string& command, double wall_seconds) {
    nlohmann::json m;
    m["run_id"] = cfg.run_id;
    m["command"] = command;
    m["config"] = raw_config;
    m["config_hash"] = config_hash(raw_config);
    m["version"] = kVersion;
    m["wall_seconds"] = wall_seconds;
    return m;
}

// Consolidate per-run results CSVs found next to manifests under run_dir:
// one row per (run, split), aggregate rows recomputed from the split rows.
inline std::string export_runs(const std::string& run_dir) {
    namespace fs = std::filesystem;
    struct Row {
        std::string prefix;  // columns before split_seed
        std::string split_seed;
        double accuracy;
    };
    std::vector<std::string> run_ids;
    std::vector<Row> rows;
    std::vector<fs::path> manifests;
    if (fs::exists(run_dir))
        for (const auto& entry : fs::directory_iterator(run_dir))
            if (entry.path().string().ends_with(".manifest.json"))
                manifests.push_back(entry.path());
    std::sort(manifests.begin(), manifests.end());
    for (const auto& mpath : manifests) {
        std::ifstream mf(mpath);
        nlohmann::json m;
        try {
            mf >> m;
        } catch (const nlohmann::json::exception& e) {
            throw IoError("malformed manifest " + mpath.string() + ": " + e.what());
        }
        const std::string run_id = m.at("run_id").get<std::string>();
        for (const auto& seen : run_ids)
            if (seen == run_id)
                throw IoError("conflicting manifests for run id '" + run_id + "' under " + run_dir);
        run_ids.push_back(run_id);
        std::string base = mpath.string();
        base.resize(base.size() - std::string(".manifest.json").size());
        std::ifstream cf(base + ".results.csv");
        if (!cf)
            throw IoError("missing results CSV for run '" + run_id + "'");
        std::string line;
        std::getline(cf, line);
        if (line != kResultsCsvHeader)
            throw IoError("unexpected results CSV header in run '" + run_id + "'");
        while (std::getline(cf, line)) {
            if (line.empty())
                continue;
            // split off the last three columns
            std::vector<std::size_t> commas;
            for (std::size_t i = 0; i < line.size(); ++i)
                if (line[i] == ',')
                    commas.push_back(i);
            if (commas.size() < 10)
                throw IoError("malformed results row in run '" + run_id + "': " + line);
            const std::size_t c8 = commas[commas.size() - 3];
            const std::size_t c9 = commas[commas.size() - 2];
            const std::size_t c10 = commas[commas.size() - 1];
            Row r;
            r.prefix = line.substr(0, c8);
            r.split_seed = line.substr(c8 + 1, c9 - c8 - 1);
            r.accuracy = std::stod(line.substr(c9 + 1, c10 - c9 - 1));
            if (r.split_seed != "aggregate")
                rows.push_back(std::move(r));
        }
    }
    std::string out = std::string(kResultsCsvHeader) + "\n";
    std::string current;
    std::vector<double> accs;
    auto flush = [&]() {
        if (accs.empty())
            return;
        double mu = 0.0;
        for (double a : accs)
            mu += a;
        mu /= static_cast<double>(accs.size());
        double var = 0.0;
        for (double a : accs)
            var += (a - mu) * (a - mu);
        var /= static_cast<double>(accs.size());
        out += current + ",aggregate," + format_double(mu) + "," +
               format_double(std::sqrt(var) / std::sqrt(static_cast<double>(accs.size()))) + "\n";
        accs.clear();
    };
    for (const auto& r : rows) {
        if (r.prefix != current) {
            flush();
            current = r.prefix;
        }
        out += r.prefix + "," + r.split_seed + "," + format_double(r.accuracy) + ",0.0000000000\n";
        accs.push_back(r.accuracy);
    }
    flush();
    return out;
}

inline std::string mask_histogram_csv(const MaskHistogram& h) {
    std::string out = "episode_id,item_id,class_id,mask,is_distractor\n";
    for (const auto& r : h.rows)
        out += std::to_string(r.episode_id) + "," + std::to_string(r.item_id) + "," +
               std::to_string(r.class_id) + "," + format_double(r.mask) + "," +
               (r.is_distractor ? "1" : "0") + "\n";
    return out;
}

inline std::string sweep_csv(const RunConfig& cfg, const SweepResult& sweep) {
    std::string out = "run_id,variant,m_test,accuracy,stderr\n";
    for (std::size_t i = 0; i < sweep.m_values.size(); ++i)
        out += cfg.run_id + "," + variant_name(cfg.variant) + "," + std::to_string(sweep.m_values[i]) + "," +
               format_double(sweep.per_m[i].mean) + "," + format_double(sweep.per_m[i].stderr_mean) + "\n";
    return out;
}

}  // namespace fsl
