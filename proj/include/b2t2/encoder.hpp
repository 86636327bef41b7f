#pragma once

// Small BERT-style transformer encoder: non-contextualized embeddings,
// masked multi-head self-attention stack, [CLS] passage embedding and a
// weight-tied MLM head.

#include <cstdint>
#include <string>
#include <vector>

#include "b2t2/adam.hpp"
#include "b2t2/common.hpp"
#include "b2t2/tensor.hpp"

namespace b2t2 {

// Reserved vocab ids.
inline constexpr int kClsId = 0;
inline constexpr int kSepId = 1;
inline constexpr int kPadId = 2;
inline constexpr int kMaskId = 3;

struct EncoderConfig {
    int num_layers = 2;
    int num_heads = 4;
    int hidden = 64;
    int ffn_dim = 256;
    int vocab_size = 512;
    int type_vocab = 2;
    int max_positions = 64;
    double dropout_rate = 0.0;

    void validate() const {
        if (num_heads < 1 || hidden % num_heads != 0)
            throw ContractError("hidden must be divisible by num_heads");
        if (max_positions < 4) throw ContractError("max_positions must be >= 4");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ContractError("dropout_rate must be in [0,1)");
    }
};

struct TokenSequence {
    std::vector<int> piece_ids;
    std::vector<int> type_ids;
    std::vector<std::uint8_t> attention_mask;  // 1 = attend, 0 = padding

    int length() const { return static_cast<int>(piece_ids.size()); }
};

namespace detail {

// Truncated normal (resampled beyond 2 sigma), the BERT init convention.
inline std::vector<double> trunc_normal_values(std::size_t n, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> out(n);
    for (auto& v : out) {
        double x;
        do {
            x = dist(rng);
        } while (std::abs(x) > 2.0 * stddev);
        v = x;
    }
    return out;
}

}  // namespace detail

class Encoder {
public:
    EncoderConfig config;
    ParamMap params;
    bool training = false;
    mutable Rng dropout_rng;
    // When set, each head's attention matrix is appended here during
    // encode_layers (diagnostics only; never read by the model itself).
    mutable std::vector<Tensor>* attention_probe = nullptr;

    Encoder() = default;

    Encoder(const EncoderConfig& cfg, std::uint64_t seed)
        : config(cfg), dropout_rng(make_rng(seed, 0x9d0b)) {
        config.validate();
        Rng rng = make_rng(seed, 0x3a1f);
        auto tn = [&](std::vector<int> shape) {
            return make_tensor(shape,
                               detail::trunc_normal_values(shape_numel(shape), 0.02, rng),
                               true);
        };
        auto zeros_p = [&](std::vector<int> shape) {
            return make_tensor(shape, std::vector<double>(shape_numel(shape), 0.0), true);
        };
        auto ones_p = [&](std::vector<int> shape) {
            return make_tensor(shape, std::vector<double>(shape_numel(shape), 1.0), true);
        };
        int h = config.hidden;
        params["enc.word"] = tn({config.vocab_size, h});
        params["enc.type"] = tn({config.type_vocab, h});
        params["enc.pos"] = tn({config.max_positions, h});
        params["enc.embed_ln.gamma"] = ones_p({h});
        params["enc.embed_ln.beta"] = zeros_p({h});
        params["enc.mlm_bias"] = zeros_p({config.vocab_size});
        for (int l = 0; l < config.num_layers; ++l) {
            std::string p = "enc.layer" + std::to_string(l) + ".";
            params[p + "attn.wq"] = tn({h, h});
            params[p + "attn.bq"] = zeros_p({h});
            params[p + "attn.wk"] = tn({h, h});
            params[p + "attn.bk"] = zeros_p({h});
            params[p + "attn.wv"] = tn({h, h});
            params[p + "attn.bv"] = zeros_p({h});
            params[p + "attn.wo"] = tn({h, h});
            params[p + "attn.bo"] = zeros_p({h});
            params[p + "ln1.gamma"] = ones_p({h});
            params[p + "ln1.beta"] = zeros_p({h});
            params[p + "ffn.w1"] = tn({h, config.ffn_dim});
            params[p + "ffn.b1"] = zeros_p({config.ffn_dim});
            params[p + "ffn.w2"] = tn({config.ffn_dim, h});
            params[p + "ffn.b2"] = zeros_p({h});
            params[p + "ln2.gamma"] = ones_p({h});
            params[p + "ln2.beta"] = zeros_p({h});
        }
    }

    // E(T)[j] = word[piece_ids[j]] + type[type_ids[j]] + position[j]
    Tensor embed_tokens(const TokenSequence& seq) const {
        int n = seq.length();
        if (n < 1 || n > config.max_positions)
            throw ContractError("token sequence length out of range");
        std::vector<int> positions(n);
        for (int j = 0; j < n; ++j) {
            positions[j] = j;
            if (seq.piece_ids[j] < 0 || seq.piece_ids[j] >= config.vocab_size)
                throw VocabError("word piece id out of range");
            if (seq.type_ids[j] < 0 || seq.type_ids[j] >= config.type_vocab)
                throw VocabError("token type id out of range");
        }
        Tensor e = embedding_rows(params.at("enc.word"), seq.piece_ids);
        e = add(e, embedding_rows(params.at("enc.type"), seq.type_ids));
        e = add(e, embedding_rows(params.at("enc.pos"), positions));
        return e;
    }

    // Run `count` layers starting at `first_layer` over an n' x h input.
    Tensor encode_layers(Tensor x, const std::vector<std::uint8_t>& mask, int first_layer,
                         int count) const {
        int n = x->shape[0];
        if (static_cast<int>(mask.size()) != n)
            throw ContractError("attention mask length mismatch");
        int h = config.hidden;
        int heads = config.num_heads;
        int dk = h / heads;
        double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

        // additive key mask: 0 for attendable keys, -1e9 for padding
        std::vector<double> mask_bias(static_cast<std::size_t>(n) * n, 0.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (!mask[j]) mask_bias[i * n + j] = -1e9;
        Tensor bias = make_tensor({n, n}, mask_bias);

        // embedding layer norm ahead of the stack, after any fused visual
        // tokens have been added to the rows
        if (first_layer == 0 && count > 0)
            x = layer_norm(dropout(x), params.at("enc.embed_ln.gamma"),
                           params.at("enc.embed_ln.beta"));

        for (int l = first_layer; l < first_layer + count; ++l) {
            std::string p = "enc.layer" + std::to_string(l) + ".";
            Tensor q = add_bias(matmul(x, params.at(p + "attn.wq")), params.at(p + "attn.bq"));
            Tensor k = add_bias(matmul(x, params.at(p + "attn.wk")), params.at(p + "attn.bk"));
            Tensor v = add_bias(matmul(x, params.at(p + "attn.wv")), params.at(p + "attn.bv"));
            std::vector<Tensor> head_outputs;
            head_outputs.reserve(heads);
            for (int hd = 0; hd < heads; ++hd) {
                Tensor qh = slice_cols(q, hd * dk, dk);
                Tensor kh = slice_cols(k, hd * dk, dk);
                Tensor vh = slice_cols(v, hd * dk, dk);
                Tensor scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt_dk), bias);
                Tensor attn = softmax(scores);
                if (attention_probe) attention_probe->push_back(attn);
                head_outputs.push_back(matmul(attn, vh));
            }
            Tensor attn_out = add_bias(matmul(concat_cols(head_outputs), params.at(p + "attn.wo")),
                                       params.at(p + "attn.bo"));
            x = layer_norm(add(x, dropout(attn_out)), params.at(p + "ln1.gamma"),
                           params.at(p + "ln1.beta"));
            Tensor ff = add_bias(matmul(x, params.at(p + "ffn.w1")), params.at(p + "ffn.b1"));
            ff = gelu(ff);
            ff = add_bias(matmul(ff, params.at(p + "ffn.w2")), params.at(p + "ffn.b2"));
            x = layer_norm(add(x, dropout(ff)), params.at(p + "ln2.gamma"),
                           params.at(p + "ln2.beta"));
        }
        return x;
    }

    // Inverted dropout, applied only while training.
    Tensor dropout(const Tensor& x) const {
        if (!training || config.dropout_rate <= 0.0) return x;
        std::bernoulli_distribution keep(1.0 - config.dropout_rate);
        double inv_keep = 1.0 / (1.0 - config.dropout_rate);
        std::vector<double> mask(x->size());
        for (auto& m : mask) m = keep(dropout_rng) ? inv_keep : 0.0;
        return mul(x, make_tensor(x->shape, std::move(mask)));
    }

    Tensor encode(const Tensor& x, const std::vector<std::uint8_t>& mask) const {
        return encode_layers(x, mask, 0, config.num_layers);
    }

    // Psi: passage embedding, the [CLS] row of the final layer.
    static Tensor psi(const Tensor& contextual) { return select_row(contextual, 0); }

    // Vocabulary logits per position; projection weights tied to the word
    // embedding table, plus a per-vocab bias.
    Tensor mlm_logits(const Tensor& contextual) const {
        return add_bias(matmul(contextual, transpose(params.at("enc.word"))),
                        params.at("enc.mlm_bias"));
    }
};

}  // namespace b2t2
