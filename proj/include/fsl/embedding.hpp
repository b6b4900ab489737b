#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsl/autodiff.hpp"
#include "fsl/params.hpp"
#include "fsl/rng.hpp"
#include "fsl/tensor.hpp"

namespace fsl {

// Configuration of the embedding network h(x).
struct EmbeddingConfig {
    enum class Kind { MLP, CONV };
    enum class Nonlin { RELU, TANH };

    Kind kind = Kind::MLP;
    std::vector<int> input_shape;        // MLP: {D}; CONV: {H, W} single-channel grid
    std::vector<int> hidden = {64, 64};  // MLP layer widths / CONV channel widths per block
    int embed_dim = 16;
    Nonlin nonlin = Nonlin::RELU;

    int input_numel() const {
        int n = 1;
        for (int d : input_shape)
            n *= d;
        return n;
    }

    void validate() const {
        if (embed_dim < 1)
            throw ConfigError("embedding: embed_dim must be >= 1");
        if (kind == Kind::MLP && input_shape.size() != 1)
            throw ConfigError("embedding: MLP input_shape must be 1-d");
        if (kind == Kind::CONV) {
            if (input_shape.size() != 2)
                throw ConfigError("embedding: CONV requires a 2-d grid input_shape");
            int h = input_shape[0], w = input_shape[1];
            for (std::size_t i = 0; i < hidden.size(); ++i) {
                h /= 2;
                w /= 2;
                if (h == 0 || w == 0)
                    throw ConfigError("embedding: grid too small for " + std::to_string(hidden.size()) +
                                      " conv blocks");
            }
        }
        for (int hdim : hidden)
            if (hdim < 1)
                throw ConfigError("embedding: hidden widths must be >= 1");
    }
};

// Deterministic given seed; parameter order is fixed (layers in depth order,
// weight before bias) and is the checkpoint/optimizer order.
inline ParamSet init_embedding(const EmbeddingConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ParamSet params;
    if (cfg.kind == EmbeddingConfig::Kind::MLP) {
        int in = cfg.input_shape[0];
        for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
            const int out = cfg.hidden[l];
            params.add("embed.l" + std::to_string(l) + ".w", fan_in_uniform({in, out}, in, rng));
            params.add("embed.l" + std::to_string(l) + ".b", Tensor::zeros({out}));
            in = out;
        }
        params.add("embed.out.w", fan_in_uniform({in, cfg.embed_dim}, in, rng));
        params.add("embed.out.b", Tensor::zeros({cfg.embed_dim}));
    } else {
        int cin = 1;
        int h = cfg.input_shape[0], w = cfg.input_shape[1];
        for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
            const int cout = cfg.hidden[l];
            params.add("embed.c" + std::to_string(l) + ".w",
                       fan_in_uniform({cout, cin, 3, 3}, cin * 9, rng));
            params.add("embed.c" + std::to_string(l) + ".b", Tensor::zeros({cout}));
            cin = cout;
            h /= 2;
            w /= 2;
        }
        const int flat = cin * h * w;
        params.add("embed.out.w", fan_in_uniform({flat, cfg.embed_dim}, flat, rng));
        params.add("embed.out.b", Tensor::zeros({cfg.embed_dim}));
    }
    return params;
}

// h(x) applied row-wise: batch [B x input_numel] -> [B x embed_dim].
inline Var embed(Tape& tape, const EmbeddingConfig& cfg, const TapeParams& params, Var batch) {
    const Tensor& bv = tape.value(batch);
    require_matrix(bv, "embed");
    if (bv.shape[1] != cfg.input_numel())
        throw ConfigError("embed: batch width " + std::to_string(bv.shape[1]) + " != input size " +
                          std::to_string(cfg.input_numel()));
    auto act = [&](Var x) {
        return cfg.nonlin == EmbeddingConfig::Nonlin::RELU ? tape.relu(x) : tape.tanh(x);
    };
    if (cfg.kind == EmbeddingConfig::Kind::MLP) {
        Var x = batch;
        for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
            const std::string p = "embed.l" + std::to_string(l);
            x = act(tape.affine(x, params[p + ".w"], params[p + ".b"]));
        }
        return tape.affine(x, params["embed.out.w"], params["embed.out.b"]);
    }
    const int B = bv.shape[0];
    int h = cfg.input_shape[0], w = cfg.input_shape[1];
    Var x = tape.reshape(batch, {B, 1, h, w});
    int cin = 1;
    for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
        const std::string p = "embed.c" + std::to_string(l);
        x = tape.maxpool2(act(tape.conv2d(x, params[p + ".w"], params[p + ".b"])));
        cin = cfg.hidden[l];
        h /= 2;
        w /= 2;
    }
    x = tape.reshape(x, {B, cin * h * w});
    return tape.affine(x, params["embed.out.w"], params["embed.out.b"]);
}

}  // namespace fsl
