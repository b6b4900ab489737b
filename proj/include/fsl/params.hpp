#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsl/autodiff.hpp"
#include "fsl/tensor.hpp"

namespace fsl {

// Ordered, named collection of trainable tensors. Order is the canonical
// serialization and optimizer-state order.
class ParamSet {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
    };

    void add(std::string name, Tensor t) {
        if (find(name) >= 0)
            throw ContractError("duplicate parameter name: " + name);
        entries_.push_back(Entry{std::move(name), std::move(t)});
    }

    int find(const std::string& name) const {
        for (std::size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].name == name)
                return static_cast<int>(i);
        return -1;
    }

    Tensor& operator[](const std::string& name) {
        int i = find(name);
        if (i < 0)
            throw ContractError("unknown parameter: " + name);
        return entries_[static_cast<std::size_t>(i)].tensor;
    }
    const Tensor& operator[](const std::string& name) const {
        int i = find(name);
        if (i < 0)
            throw ContractError("unknown parameter: " + name);
        return entries_[static_cast<std::size_t>(i)].tensor;
    }

    bool has(const std::string& name) const { return find(name) >= 0; }
    std::size_t size() const { return entries_.size(); }
    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    std::int64_t numel() const {
        std::int64_t n = 0;
        for (const auto& e : entries_)
            n += e.tensor.numel();
        return n;
    }

    void merge(const ParamSet& other) {
        for (const auto& e : other.entries())
            add(e.name, e.tensor);
    }

    // Register every tensor as a tape leaf; result is index-aligned with entries().
    std::vector<Var> leaves(Tape& tape, bool requires_grad = true) const {
        std::vector<Var> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_)
            out.push_back(tape.leaf(e.tensor, requires_grad));
        return out;
    }

private:
    std::vector<Entry> entries_;
};

// A ParamSet registered on a tape: name-addressable Var handles.
struct TapeParams {
    const ParamSet* set = nullptr;
    std::vector<Var> vars;

    Var operator[](const std::string& name) const {
        int i = set->find(name);
        if (i < 0)
            throw ContractError("unknown parameter: " + name);
        return vars[static_cast<std::size_t>(i)];
    }
    bool has(const std::string& name) const { return set->find(name) >= 0; }
};

inline TapeParams bind_params(Tape& tape, const ParamSet& params, bool requires_grad = true) {
    return TapeParams{&params, params.leaves(tape, requires_grad)};
}

// Checkpoint format: <path>.json holds an ordered manifest
// [{name, shape, dtype, byte_offset}, ...]; <path>.bin is the flat blob of
// little-endian IEEE-754 values in manifest order.
inline void save_params(const ParamSet& params, const std::string& path, bool as_float32 = false) {
    nlohmann::json manifest = nlohmann::json::array();
    std::ofstream blob(path + ".bin", std::ios::binary | std::ios::trunc);
    if (!blob)
        throw IoError("cannot open for write: " + path + ".bin");
    std::int64_t offset = 0;
    const int width = as_float32 ? 4 : 8;
    for (const auto& e : params.entries()) {
        manifest.push_back({{"name", e.name},
                            {"shape", e.tensor.shape},
                            {"dtype", as_float32 ? "f32" : "f64"},
                            {"byte_offset", offset}});
        for (double v : e.tensor.data) {
            if (as_float32) {
                float f = static_cast<float>(v);
                blob.write(reinterpret_cast<const char*>(&f), 4);
            } else {
                blob.write(reinterpret_cast<const char*>(&v), 8);
            }
        }
        offset += e.tensor.numel() * width;
    }
    blob.close();
    std::ofstream mf(path + ".json", std::ios::trunc);
    if (!mf)
        throw IoError("cannot open for write: " + path + ".json");
    mf << manifest.dump(2) << "\n";
}

inline ParamSet load_params(const std::string& path) {
    std::ifstream mf(path + ".json");
    if (!mf)
        throw IoError("cannot open checkpoint manifest: " + path + ".json");
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed checkpoint manifest: " + std::string(e.what()));
    }
    std::ifstream blob(path + ".bin", std::ios::binary);
    if (!blob)
        throw IoError("cannot open checkpoint blob: " + path + ".bin");
    ParamSet out;
    for (const auto& item : manifest) {
        const std::string name = item.at("name").get<std::string>();
        const Shape shape = item.at("shape").get<Shape>();
        const std::string dtype = item.at("dtype").get<std::string>();
        const std::int64_t off = item.at("byte_offset").get<std::int64_t>();
        const std::int64_t n = shape_numel(shape);
        blob.seekg(off);
        Tensor t(shape);
        for (std::int64_t i = 0; i < n; ++i) {
            if (dtype == "f64") {
                double v;
                blob.read(reinterpret_cast<char*>(&v), 8);
                t.data[static_cast<std::size_t>(i)] = v;
            } else if (dtype == "f32") {
                float v;
                blob.read(reinterpret_cast<char*>(&v), 4);
                t.data[static_cast<std::size_t>(i)] = v;
            } else {
                throw IoError("unknown dtype in checkpoint: " + dtype);
            }
        }
        if (!blob)
            throw IoError("truncated checkpoint blob at parameter '" + name + "'");
        out.add(name, std::move(t));
    }
    return out;
}

}  // namespace fsl
