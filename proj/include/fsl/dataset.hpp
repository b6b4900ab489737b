#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsl/rng.hpp"
#include "fsl/tensor.hpp"

namespace fsl {

enum class Partition { TRAIN, VAL, TEST };

inline const char* partition_name(Partition p) {
    switch (p) {
        case Partition::TRAIN: return "train";
        case Partition::VAL: return "val";
        case Partition::TEST: return "test";
    }
    return "?";
}

inline Partition partition_from_name(const std::string& s) {
    if (s == "train") return Partition::TRAIN;
    if (s == "val") return Partition::VAL;
    if (s == "test") return Partition::TEST;
    throw ConfigError("unknown partition: '" + s + "'");
}

struct ClassInfo {
    std::string name;
    Partition partition = Partition::TRAIN;
};

// Immutable after load/generation. Inputs are stored flat, row-major, one
// row of input_numel() values per item.
struct Dataset {
    std::string name;
    Shape input_shape;
    std::vector<ClassInfo> classes;
    std::vector<double> inputs;
    std::vector<std::uint32_t> class_ids;

    int input_numel() const { return static_cast<int>(shape_numel(input_shape)); }
    int num_items() const { return static_cast<int>(class_ids.size()); }
    int num_classes() const { return static_cast<int>(classes.size()); }

    const double* item(int i) const { return inputs.data() + static_cast<std::size_t>(i) * input_numel(); }

    std::vector<int> classes_in(Partition p) const {
        std::vector<int> out;
        for (int c = 0; c < num_classes(); ++c)
            if (classes[static_cast<std::size_t>(c)].partition == p)
                out.push_back(c);
        return out;
    }

    std::vector<std::vector<int>> items_by_class() const {
        std::vector<std::vector<int>> by(static_cast<std::size_t>(num_classes()));
        for (int i = 0; i < num_items(); ++i) {
            const std::uint32_t c = class_ids[static_cast<std::size_t>(i)];
            if (c >= static_cast<std::uint32_t>(num_classes()))
                throw ContractError("item references unknown class");
            by[c].push_back(i);
        }
        return by;
    }

    void validate() const {
        if (static_cast<std::int64_t>(inputs.size()) !=
            static_cast<std::int64_t>(class_ids.size()) * input_numel())
            throw ContractError("dataset: inputs length inconsistent with item count");
    }
};

// ---- FSLDS1 file format ------------------------------------------------
// magic "FSLDS1" | u32 header_len | JSON header | f32 inputs (LE, row-major)
// | u32 class ids (LE) | u32 CRC32 of all preceding bytes (LE)

namespace detail {

class Crc32 {
public:
    Crc32() {
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table_[i] = c;
        }
    }
    void update(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i)
            state_ = table_[(state_ ^ p[i]) & 0xFF] ^ (state_ >> 8);
    }
    std::uint32_t value() const { return state_ ^ 0xFFFFFFFFu; }

private:
    std::array<std::uint32_t, 256> table_{};
    std::uint32_t state_ = 0xFFFFFFFFu;
};

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}
inline std::uint32_t get_u32(const std::string& buf, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    return v;
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::string& path) {
    ds.validate();
    nlohmann::json header;
    header["name"] = ds.name;
    header["input_shape"] = ds.input_shape;
    header["num_items"] = ds.num_items();
    nlohmann::json cls = nlohmann::json::array();
    for (const auto& c : ds.classes)
        cls.push_back({{"name", c.name}, {"partition", partition_name(c.partition)}});
    header["classes"] = cls;
    const std::string hj = header.dump();

    std::string buf;
    buf += "FSLDS1";
    detail::put_u32(buf, static_cast<std::uint32_t>(hj.size()));
    buf += hj;
    for (double v : ds.inputs)
        detail::put_f32(buf, static_cast<float>(v));
    for (std::uint32_t id : ds.class_ids)
        detail::put_u32(buf, id);
    detail::Crc32 crc;
    crc.update(buf.data(), buf.size());
    detail::put_u32(buf, crc.value());

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw IoError("cannot open for write: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f)
        throw IoError("write failed: " + path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw IoError("cannot open dataset: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() < 14 || buf.compare(0, 6, "FSLDS1") != 0)
        throw IoError("bad magic in " + path + " (byte offset 0)");
    detail::Crc32 crc;
    crc.update(buf.data(), buf.size() - 4);
    if (crc.value() != detail::get_u32(buf, buf.size() - 4))
        throw IoError("checksum mismatch in " + path + " (byte offset " + std::to_string(buf.size() - 4) + ")");
    const std::uint32_t hlen = detail::get_u32(buf, 6);
    std::size_t off = 10;
    if (off + hlen > buf.size() - 4)
        throw IoError("truncated header in " + path + " (byte offset " + std::to_string(off) + ")");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.substr(off, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed header in " + path + ": " + e.what());
    }
    off += hlen;

    Dataset ds;
    ds.name = header.at("name").get<std::string>();
    ds.input_shape = header.at("input_shape").get<Shape>();
    const int n = header.at("num_items").get<int>();
    for (const auto& c : header.at("classes"))
        ds.classes.push_back(
            ClassInfo{c.at("name").get<std::string>(), partition_from_name(c.at("partition").get<std::string>())});

    const std::size_t want = off + static_cast<std::size_t>(n) * ds.input_numel() * 4 +
                             static_cast<std::size_t>(n) * 4 + 4;
    if (buf.size() != want)
        throw IoError("truncated blob in " + path + " (byte offset " + std::to_string(buf.size()) + ", expected " +
                      std::to_string(want) + ")");
    ds.inputs.resize(static_cast<std::size_t>(n) * ds.input_numel());
    for (auto& v : ds.inputs) {
        const std::uint32_t bits = detail::get_u32(buf, off);
        float fv;
        std::memcpy(&fv, &bits, 4);
        v = fv;
        off += 4;
    }
    ds.class_ids.resize(static_cast<std::size_t>(n));
    for (auto& id : ds.class_ids) {
        id = detail::get_u32(buf, off);
        off += 4;
    }
    ds.validate();
    return ds;
}

// ---- synthetic hierarchical generator ----------------------------------

// Classes are grouped into categories; categories never straddle the
// train/val/test partition. Two optional kinds of extra dimensions shape
// how informative the raw input metric is:
//  - noisy dims carry genuine class signal (a per-class center offset) but
//    with per-item noise much larger than the offset, so a single example
//    is a poor estimate there; useful to a many-sample classifier, harmful
//    to one-shot nearest-neighbor unless the metric down-weights them
//  - nuisance dims carry pure per-item noise and no class signal at all
struct SyntheticSpec {
    int num_categories = 12;
    int classes_per_category = 6;
    int items_per_class = 60;
    int input_dim = 10;
    int noisy_dims = 0;
    double noisy_center_scale = 2.0;
    double noisy_within_noise = 4.0;
    int nuisance_dims = 0;
    double nuisance_scale = 1.0;
    double category_center_scale = 3.0;
    double class_center_scale = 1.0;
    double within_class_noise = 1.0;
    int val_categories = 2;
    int test_categories = 2;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_categories < 1 || classes_per_category < 1 || items_per_class < 1 || input_dim < 1)
            throw ConfigError("synthetic: counts must be >= 1");
        if (nuisance_dims < 0 || noisy_dims < 0)
            throw ConfigError("synthetic: nuisance_dims and noisy_dims must be >= 0");
        if (noisy_center_scale <= 0 || noisy_within_noise <= 0)
            throw ConfigError("synthetic: noisy-dim scales must be > 0");
        if (category_center_scale <= 0 || class_center_scale <= 0 || within_class_noise <= 0)
            throw ConfigError("synthetic: noise scales must be > 0");
        if (val_categories + test_categories >= num_categories)
            throw ConfigError("synthetic: val+test categories must leave at least one training category");
    }
};

inline Dataset gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Dataset ds;
    ds.name = "synthetic";
    const int dim = spec.input_dim + spec.noisy_dims + spec.nuisance_dims;
    ds.input_shape = {dim};
    const int train_cats = spec.num_categories - spec.val_categories - spec.test_categories;
    for (int cat = 0; cat < spec.num_categories; ++cat) {
        std::vector<double> cat_center(static_cast<std::size_t>(spec.input_dim));
        for (auto& v : cat_center)
            v = rng.gaussian(0.0, spec.category_center_scale);
        Partition part = cat < train_cats                          ? Partition::TRAIN
                         : cat < train_cats + spec.val_categories ? Partition::VAL
                                                                  : Partition::TEST;
        for (int k = 0; k < spec.classes_per_category; ++k) {
            const int class_id = static_cast<int>(ds.classes.size());
            ds.classes.push_back(
                ClassInfo{"cat" + std::to_string(cat) + ".class" + std::to_string(k), part});
            std::vector<double> cls_center(cat_center);
            for (auto& v : cls_center)
                v += rng.gaussian(0.0, spec.class_center_scale);
            std::vector<double> noisy_center(static_cast<std::size_t>(spec.noisy_dims));
            for (auto& v : noisy_center)
                v = rng.gaussian(0.0, spec.noisy_center_scale);
            for (int it = 0; it < spec.items_per_class; ++it) {
                for (int d = 0; d < spec.input_dim; ++d)
                    ds.inputs.push_back(cls_center[static_cast<std::size_t>(d)] +
                                        rng.gaussian(0.0, spec.within_class_noise));
                for (int d = 0; d < spec.noisy_dims; ++d)
                    ds.inputs.push_back(noisy_center[static_cast<std::size_t>(d)] +
                                        rng.gaussian(0.0, spec.noisy_within_noise));
                for (int d = 0; d < spec.nuisance_dims; ++d)
                    ds.inputs.push_back(rng.gaussian(0.0, spec.nuisance_scale));
                ds.class_ids.push_back(static_cast<std::uint32_t>(class_id));
            }
        }
    }
    ds.validate();
    return ds;
}

// ---- labeled/unlabeled split -------------------------------------------

struct LabeledUnlabeledSplit {
    std::vector<std::vector<int>> labeled;    // per class, item ids
    std::vector<std::vector<int>> unlabeled;  // per class, item ids
    double labeled_ratio = 0.0;
    std::uint64_t seed = 0;
};

// Per-class uniform sampling without replacement; |labeled| =
// round(ratio * class size), clamped so both sides are non-empty.
inline LabeledUnlabeledSplit make_split(const Dataset& ds, double labeled_ratio, std::uint64_t seed) {
    if (!(labeled_ratio > 0.0 && labeled_ratio < 1.0))
        throw ConfigError("make_split: labeled_ratio must be in (0,1)");
    Rng rng(seed);
    LabeledUnlabeledSplit split;
    split.labeled_ratio = labeled_ratio;
    split.seed = seed;
    auto by_class = ds.items_by_class();
    split.labeled.resize(by_class.size());
    split.unlabeled.resize(by_class.size());
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto items = by_class[c];
        if (items.size() < 2)
            throw ConfigError("make_split: class '" + ds.classes[c].name + "' has fewer than 2 items");
        rng.shuffle(items);
        int n_lab = static_cast<int>(std::lround(labeled_ratio * static_cast<double>(items.size())));
        n_lab = std::max(1, std::min(n_lab, static_cast<int>(items.size()) - 1));
        split.labeled[c].assign(items.begin(), items.begin() + n_lab);
        split.unlabeled[c].assign(items.begin() + n_lab, items.end());
    }
    return split;
}

}  // namespace fsl
