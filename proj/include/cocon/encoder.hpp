#pragma once

// Standard post-layer-norm Transformer encoder blocks: the building material
// of the early/late backbone stacks and of the pre-training head. Masked
// positions receive -1e30 attention logits, so padding never leaks into
// unmasked outputs.

#include <cmath>
#include <string>
#include <vector>

#include "cocon/rng.hpp"
#include "cocon/tensor.hpp"
#include "cocon/vocab.hpp"

namespace cocon {

struct EncoderConfig {
    size_t hidden = 64;
    size_t heads = 4;
    size_t ff = 256;
    size_t max_len = 128;
    size_t vocab_size = 0;
    double ln_eps = 1e-5;
    double init_std = 0.02;
    double dropout = 0.0;

    void validate() const {
        if (hidden == 0 || heads == 0 || ff == 0 || max_len == 0) {
            throw std::invalid_argument("encoder config: zero-sized dimension");
        }
        if (hidden % heads != 0) {
            throw std::invalid_argument("encoder config: hidden " + std::to_string(hidden) +
                                        " not divisible by heads " + std::to_string(heads));
        }
        if (vocab_size <= Vocabulary::kReserved) {
            throw std::invalid_argument("encoder config: vocab_size must exceed reserved tokens");
        }
    }
};

// One inverted-dropout draw per call; rate 0 (the default everywhere) is a
// no-op that adds nothing to the graph.
struct Dropout {
    double rate = 0.0;
    RngStream* rng = nullptr;
};

inline Tensor apply_dropout(const Tensor& x, const Dropout& dropout) {
    if (dropout.rate <= 0.0 || dropout.rng == nullptr) return x;
    double keep = 1.0 - dropout.rate;
    std::vector<double> mask(x.numel());
    for (double& m : mask) m = dropout.rng->bernoulli(keep) ? 1.0 / keep : 0.0;
    return mul(x, Tensor::from_data(x.shape(), std::move(mask)));
}

// Test instrumentation: collects attention probability matrices.
struct EncoderHooks {
    std::vector<Tensor>* attention = nullptr;
};

struct EncoderLayer {
    // No key-projection bias: a shared key offset shifts every attention
    // logit in a row equally, which row-softmax cancels exactly.
    Tensor wq, bq, wk, wv, bv, wo, bo;
    Tensor ln1_g, ln1_b;
    Tensor w1, b1, w2, b2;
    Tensor ln2_g, ln2_b;

    void init(const EncoderConfig& cfg, RngStream& rng) {
        size_t d = cfg.hidden, f = cfg.ff;
        auto w = [&](size_t r, size_t c) {
            Tensor t = Tensor::randn({r, c}, rng, cfg.init_std);
            return Tensor::param({r, c}, t.data());
        };
        wq = w(d, d); bq = Tensor::param({d});
        wk = w(d, d);
        wv = w(d, d); bv = Tensor::param({d});
        wo = w(d, d); bo = Tensor::param({d});
        ln1_g = Tensor::param({d}, std::vector<double>(d, 1.0));
        ln1_b = Tensor::param({d});
        w1 = w(d, f); b1 = Tensor::param({f});
        w2 = w(f, d); b2 = Tensor::param({d});
        ln2_g = Tensor::param({d}, std::vector<double>(d, 1.0));
        ln2_b = Tensor::param({d});
    }

    void collect(const std::string& prefix, ParameterSet& ps) const {
        ps.add(prefix + ".attn.wq", wq); ps.add(prefix + ".attn.bq", bq);
        ps.add(prefix + ".attn.wk", wk);
        ps.add(prefix + ".attn.wv", wv); ps.add(prefix + ".attn.bv", bv);
        ps.add(prefix + ".attn.wo", wo); ps.add(prefix + ".attn.bo", bo);
        ps.add(prefix + ".ln1.g", ln1_g); ps.add(prefix + ".ln1.b", ln1_b);
        ps.add(prefix + ".ff.w1", w1); ps.add(prefix + ".ff.b1", b1);
        ps.add(prefix + ".ff.w2", w2); ps.add(prefix + ".ff.b2", b2);
        ps.add(prefix + ".ln2.g", ln2_g); ps.add(prefix + ".ln2.b", ln2_b);
    }

    void restore(const std::string& prefix, const ParameterSet& ps) {
        wq = ps.get(prefix + ".attn.wq"); bq = ps.get(prefix + ".attn.bq");
        wk = ps.get(prefix + ".attn.wk");
        wv = ps.get(prefix + ".attn.wv"); bv = ps.get(prefix + ".attn.bv");
        wo = ps.get(prefix + ".attn.wo"); bo = ps.get(prefix + ".attn.bo");
        ln1_g = ps.get(prefix + ".ln1.g"); ln1_b = ps.get(prefix + ".ln1.b");
        w1 = ps.get(prefix + ".ff.w1"); b1 = ps.get(prefix + ".ff.b1");
        w2 = ps.get(prefix + ".ff.w2"); b2 = ps.get(prefix + ".ff.b2");
        ln2_g = ps.get(prefix + ".ln2.g"); ln2_b = ps.get(prefix + ".ln2.b");
    }
};

struct Embeddings {
    Tensor tok;  // vocab × hidden
    Tensor pos;  // max_len × hidden

    void init(const EncoderConfig& cfg, RngStream& rng) {
        Tensor t = Tensor::randn({cfg.vocab_size, cfg.hidden}, rng, cfg.init_std);
        tok = Tensor::param({cfg.vocab_size, cfg.hidden}, t.data());
        Tensor p = Tensor::randn({cfg.max_len, cfg.hidden}, rng, cfg.init_std);
        pos = Tensor::param({cfg.max_len, cfg.hidden}, p.data());
    }

    void collect(const std::string& prefix, ParameterSet& ps) const {
        ps.add(prefix + ".tok", tok);
        ps.add(prefix + ".pos", pos);
    }

    void restore(const std::string& prefix, const ParameterSet& ps) {
        tok = ps.get(prefix + ".tok");
        pos = ps.get(prefix + ".pos");
    }

    // Token embedding + learned absolute position embedding, per position.
    Tensor embed(const TokenSequence& seq) const {
        if (seq.ids.empty()) throw std::invalid_argument("embed: empty sequence");
        if (seq.ids.size() > pos.rows()) {
            throw std::invalid_argument("embed: sequence length " +
                                        std::to_string(seq.ids.size()) +
                                        " exceeds position table " + std::to_string(pos.rows()));
        }
        return add(rows_gather(tok, seq.ids), slice_rows(pos, 0, seq.ids.size()));
    }
};

namespace detail {

inline Tensor attention_bias(const std::vector<uint8_t>& mask) {
    size_t L = mask.size();
    std::vector<double> bias(L * L, 0.0);
    for (size_t j = 0; j < L; ++j) {
        if (!mask[j]) {
            for (size_t i = 0; i < L; ++i) bias[i * L + j] = -1e30;
        }
    }
    return Tensor::from_data({L, L}, std::move(bias));
}

}  // namespace detail

inline Tensor encoder_layer_forward(const Tensor& x, const EncoderLayer& lyr,
                                    const std::vector<uint8_t>& mask,
                                    const EncoderConfig& cfg,
                                    const Dropout& dropout = {},
                                    EncoderHooks* hooks = nullptr) {
    size_t L = x.rows();
    if (mask.size() != L) {
        throw std::invalid_argument("encoder: mask length " + std::to_string(mask.size()) +
                                    " does not match sequence length " + std::to_string(L));
    }
    size_t hd = cfg.hidden / cfg.heads;
    double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Tensor q = add_rowvec(matmul(x, lyr.wq), lyr.bq);
    Tensor k = matmul(x, lyr.wk);
    Tensor v = add_rowvec(matmul(x, lyr.wv), lyr.bv);

    bool any_masked = false;
    for (uint8_t m : mask) any_masked |= (m == 0);
    Tensor bias;
    if (any_masked) bias = detail::attention_bias(mask);

    std::vector<Tensor> head_outputs;
    head_outputs.reserve(cfg.heads);
    for (size_t h = 0; h < cfg.heads; ++h) {
        Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
        Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
        Tensor vh = slice_cols(v, h * hd, (h + 1) * hd);
        Tensor scores = scale(matmul(qh, transpose(kh)), att_scale);
        if (any_masked) scores = add(scores, bias);
        Tensor attn = softmax(scores, 1);
        if (hooks && hooks->attention) hooks->attention->push_back(attn);
        head_outputs.push_back(matmul(attn, vh));
    }

    Tensor attn_out = add_rowvec(matmul(concat_cols(head_outputs), lyr.wo), lyr.bo);
    attn_out = apply_dropout(attn_out, dropout);
    Tensor h1 = layer_norm(add(x, attn_out), lyr.ln1_g, lyr.ln1_b, cfg.ln_eps);

    Tensor ff = add_rowvec(matmul(gelu(add_rowvec(matmul(h1, lyr.w1), lyr.b1)), lyr.w2), lyr.b2);
    ff = apply_dropout(ff, dropout);
    return layer_norm(add(h1, ff), lyr.ln2_g, lyr.ln2_b, cfg.ln_eps);
}

// Applies the layers in order; zero layers is the identity.
inline Tensor encoder_stack(const Tensor& x, const std::vector<EncoderLayer>& layers,
                            const std::vector<uint8_t>& mask, const EncoderConfig& cfg,
                            const Dropout& dropout = {}, EncoderHooks* hooks = nullptr) {
    Tensor h = x;
    for (const EncoderLayer& lyr : layers) {
        h = encoder_layer_forward(h, lyr, mask, cfg, dropout, hooks);
    }
    return h;
}

// Plain backbone encoder: embeddings plus a layer stack, CLS row as the
// sequence representation. This is what fine-tuning and indexing consume.
struct Encoder {
    EncoderConfig cfg;
    Embeddings emb;
    std::vector<EncoderLayer> layers;

    void init(RngStream& rng) {
        cfg.validate();
        emb.init(cfg, rng);
        for (auto& l : layers) l.init(cfg, rng);
    }

    static Encoder make(EncoderConfig cfg, size_t n_layers, RngStream& rng) {
        Encoder e;
        e.cfg = cfg;
        e.layers.resize(n_layers);
        e.init(rng);
        return e;
    }

    void collect_params(ParameterSet& ps) const {
        emb.collect("embed", ps);
        for (size_t i = 0; i < layers.size(); ++i) {
            layers[i].collect("layer." + std::to_string(i), ps);
        }
    }

    static Encoder from_params(EncoderConfig cfg, size_t n_layers, const ParameterSet& ps) {
        cfg.validate();
        Encoder e;
        e.cfg = cfg;
        e.emb.restore("embed", ps);
        e.layers.resize(n_layers);
        for (size_t i = 0; i < n_layers; ++i) {
            e.layers[i].restore("layer." + std::to_string(i), ps);
        }
        return e;
    }

    Tensor forward(const TokenSequence& seq, const Dropout& dropout = {},
                   EncoderHooks* hooks = nullptr) const {
        return encoder_stack(emb.embed(seq), layers, seq.attention_mask, cfg, dropout, hooks);
    }

    // Last-layer CLS as a d-vector.
    Tensor cls(const TokenSequence& seq, const Dropout& dropout = {}) const {
        return reshape(slice_rows(forward(seq, dropout), 0, 1), {cfg.hidden});
    }
};

}  // namespace cocon
