#pragma once

// The Condenser architecture: an early/late backbone split plus a head that
// consumes the late CLS together with the early token representations. The
// head never sees late token rows; that short circuit is what forces the
// model to aggregate sequence information into the CLS. MLM prediction runs
// on the head output.

#include <string>
#include <vector>

#include "cocon/encoder.hpp"
#include "cocon/kvfile.hpp"
#include "cocon/rng.hpp"
#include "cocon/tensor.hpp"

namespace cocon {

struct CondenserConfig {
    size_t n_early = 2;
    size_t n_late = 2;
    size_t n_head = 2;
    size_t hidden = 64;
    size_t heads = 4;
    size_t ff = 256;
    size_t vocab_size = 0;
    size_t max_len = 128;
    double mask_rate = 0.15;
    double ln_eps = 1e-5;
    double init_std = 0.02;
    double dropout = 0.0;

    void validate() const {
        if (n_early < 1 || n_late < 1 || n_head < 1) {
            throw std::invalid_argument("condenser config: early/late/head layer counts must be >= 1");
        }
        if (!(mask_rate > 0.0 && mask_rate < 1.0)) {
            throw std::invalid_argument("condenser config: mask_rate must lie in (0,1)");
        }
        encoder_config().validate();
    }

    EncoderConfig encoder_config() const {
        return EncoderConfig{hidden, heads, ff, max_len, vocab_size, ln_eps, init_std, dropout};
    }

    std::map<std::string, std::string> to_kv() const {
        return {{"n_early", std::to_string(n_early)},
                {"n_late", std::to_string(n_late)},
                {"n_head", std::to_string(n_head)},
                {"hidden", std::to_string(hidden)},
                {"heads", std::to_string(heads)},
                {"ff", std::to_string(ff)},
                {"vocab_size", std::to_string(vocab_size)},
                {"max_len", std::to_string(max_len)},
                {"mask_rate", std::to_string(mask_rate)},
                {"ln_eps", std::to_string(ln_eps)}};
    }

    static CondenserConfig from_kv(const std::map<std::string, std::string>& kv) {
        CondenserConfig c;
        c.n_early = std::stoul(kv.at("n_early"));
        c.n_late = std::stoul(kv.at("n_late"));
        c.n_head = std::stoul(kv.at("n_head"));
        c.hidden = std::stoul(kv.at("hidden"));
        c.heads = std::stoul(kv.at("heads"));
        c.ff = std::stoul(kv.at("ff"));
        c.vocab_size = std::stoul(kv.at("vocab_size"));
        c.max_len = std::stoul(kv.at("max_len"));
        c.mask_rate = std::stod(kv.at("mask_rate"));
        if (kv.count("ln_eps")) c.ln_eps = std::stod(kv.at("ln_eps"));
        return c;
    }
};

// Representations produced by one forward pass, split into CLS rows and
// token blocks. h_cls_cd is computed but unused downstream; it is kept for
// inspection.
struct ForwardTrace {
    Tensor early_full;  // L × d, early stack output
    Tensor late_full;   // L × d, late stack output
    Tensor h_cls_early, h_early;  // d-vector, (L-1) × d
    Tensor h_cls_late, h_late;
    Tensor head_full;   // L × d, head output (after forward_head)
    Tensor h_cls_cd, h_cd;
};

struct MaskedSequence {
    TokenSequence corrupted;
    std::vector<size_t> positions;  // sequence positions, never 0 (CLS)
    std::vector<size_t> originals;  // token ids before corruption
};

using MaskedBatch = std::vector<MaskedSequence>;

struct CondenserModel {
    CondenserConfig cfg;
    Embeddings emb;
    std::vector<EncoderLayer> early;
    std::vector<EncoderLayer> late;
    std::vector<EncoderLayer> head;
    Tensor mlm_ln_g, mlm_ln_b;  // layer norm on head outputs before projection
    Tensor w;                   // hidden × vocab, untied from the embedding table

    static CondenserModel make(CondenserConfig cfg, RngStream& rng) {
        cfg.validate();
        CondenserModel m;
        m.cfg = cfg;
        EncoderConfig ec = cfg.encoder_config();
        m.emb.init(ec, rng);
        m.early.resize(cfg.n_early);
        m.late.resize(cfg.n_late);
        m.head.resize(cfg.n_head);
        for (auto& l : m.early) l.init(ec, rng);
        for (auto& l : m.late) l.init(ec, rng);
        for (auto& l : m.head) l.init(ec, rng);
        m.mlm_ln_g = Tensor::param({cfg.hidden}, std::vector<double>(cfg.hidden, 1.0));
        m.mlm_ln_b = Tensor::param({cfg.hidden});
        Tensor wr = Tensor::randn({cfg.hidden, cfg.vocab_size}, rng, cfg.init_std);
        m.w = Tensor::param({cfg.hidden, cfg.vocab_size}, wr.data());
        return m;
    }

    void collect_params(ParameterSet& ps) const {
        emb.collect("embed", ps);
        for (size_t i = 0; i < early.size(); ++i) early[i].collect("early." + std::to_string(i), ps);
        for (size_t i = 0; i < late.size(); ++i) late[i].collect("late." + std::to_string(i), ps);
        for (size_t i = 0; i < head.size(); ++i) head[i].collect("head." + std::to_string(i), ps);
        ps.add("mlm.ln.g", mlm_ln_g);
        ps.add("mlm.ln.b", mlm_ln_b);
        ps.add("mlm.w", w);
    }

    ParameterSet params() const {
        ParameterSet ps;
        collect_params(ps);
        return ps;
    }

    static CondenserModel from_params(CondenserConfig cfg, const ParameterSet& ps) {
        cfg.validate();
        CondenserModel m;
        m.cfg = cfg;
        m.emb.restore("embed", ps);
        m.early.resize(cfg.n_early);
        m.late.resize(cfg.n_late);
        m.head.resize(cfg.n_head);
        for (size_t i = 0; i < cfg.n_early; ++i) m.early[i].restore("early." + std::to_string(i), ps);
        for (size_t i = 0; i < cfg.n_late; ++i) m.late[i].restore("late." + std::to_string(i), ps);
        for (size_t i = 0; i < cfg.n_head; ++i) m.head[i].restore("head." + std::to_string(i), ps);
        m.mlm_ln_g = ps.get("mlm.ln.g");
        m.mlm_ln_b = ps.get("mlm.ln.b");
        m.w = ps.get("mlm.w");
        return m;
    }
};

// Embedding plus early and late stacks. The late stack consumes the full
// early output including its CLS row.
inline ForwardTrace forward_backbone(const TokenSequence& seq, const CondenserModel& model,
                                     const Dropout& dropout = {}) {
    if (seq.ids.empty()) throw std::invalid_argument("forward_backbone: empty sequence");
    EncoderConfig ec = model.cfg.encoder_config();
    size_t L = seq.ids.size();

    ForwardTrace trace;
    Tensor x0 = model.emb.embed(seq);
    trace.early_full = encoder_stack(x0, model.early, seq.attention_mask, ec, dropout);
    trace.late_full = encoder_stack(trace.early_full, model.late, seq.attention_mask, ec, dropout);
    trace.h_cls_early = reshape(slice_rows(trace.early_full, 0, 1), {ec.hidden});
    trace.h_early = slice_rows(trace.early_full, 1, L);
    trace.h_cls_late = reshape(slice_rows(trace.late_full, 0, 1), {ec.hidden});
    trace.h_late = slice_rows(trace.late_full, 1, L);
    return trace;
}

// Head stack over [late CLS ; early token rows]. Late token rows are
// deliberately absent from the input.
inline Tensor forward_head(ForwardTrace& trace, const CondenserModel& model,
                           const std::vector<uint8_t>& mask, const Dropout& dropout = {}) {
    if (!trace.early_full.defined() || !trace.late_full.defined()) {
        throw std::invalid_argument("forward_head: backbone trace incomplete");
    }
    EncoderConfig ec = model.cfg.encoder_config();
    size_t L = trace.early_full.rows();
    Tensor head_in = concat_rows({slice_rows(trace.late_full, 0, 1),
                                  slice_rows(trace.early_full, 1, L)});
    trace.head_full = encoder_stack(head_in, model.head, mask, ec, dropout);
    trace.h_cls_cd = reshape(slice_rows(trace.head_full, 0, 1), {ec.hidden});
    trace.h_cd = slice_rows(trace.head_full, 1, L);
    return trace.h_cd;
}

inline ForwardTrace forward_condenser(const TokenSequence& seq, const CondenserModel& model,
                                      const Dropout& dropout = {}) {
    ForwardTrace trace = forward_backbone(seq, model, dropout);
    forward_head(trace, model, seq.attention_mask, dropout);
    return trace;
}

// BERT-style corruption: each eligible position (not CLS, not PAD) is
// selected independently with probability `rate`; of the selected, 80%
// become [MASK], 10% a random vocabulary token, 10% stay unchanged. The
// draw is repeated until at least one position is selected.
inline MaskedSequence apply_masking(const TokenSequence& seq, double rate, RngStream& rng,
                                    size_t vocab_size) {
    std::vector<size_t> eligible;
    for (size_t i = 1; i < seq.ids.size(); ++i) {
        if (seq.attention_mask[i] && seq.ids[i] != Vocabulary::kPad) eligible.push_back(i);
    }
    if (eligible.empty()) {
        throw std::invalid_argument("apply_masking: sequence has no eligible positions");
    }

    std::vector<size_t> selected;
    for (int attempt = 0; attempt < 10000 && selected.empty(); ++attempt) {
        for (size_t pos : eligible) {
            if (rng.bernoulli(rate)) selected.push_back(pos);
        }
    }
    if (selected.empty()) {
        throw std::runtime_error("apply_masking: failed to select a position");
    }

    MaskedSequence ms;
    ms.corrupted = seq;
    for (size_t pos : selected) {
        ms.positions.push_back(pos);
        ms.originals.push_back(seq.ids[pos]);
        double r = rng.next_double();
        if (r < 0.8) {
            ms.corrupted.ids[pos] = Vocabulary::kMask;
        } else if (r < 0.9) {
            ms.corrupted.ids[pos] =
                Vocabulary::kReserved + rng.index_below(vocab_size - Vocabulary::kReserved);
        }  // else: keep the original token
    }
    return ms;
}

// Mean cross entropy over masked positions of W · LayerNorm(h_cd).
inline Tensor mlm_loss(const ForwardTrace& trace, const MaskedSequence& masked,
                       const CondenserModel& model) {
    if (!trace.head_full.defined()) {
        throw std::invalid_argument("mlm_loss: head output missing from trace");
    }
    if (masked.positions.empty()) {
        throw std::invalid_argument("mlm_loss: empty masked set");
    }
    Tensor picked = rows_gather(trace.head_full, masked.positions);
    Tensor normed = layer_norm(picked, model.mlm_ln_g, model.mlm_ln_b, model.cfg.ln_eps);
    Tensor logits = matmul(normed, model.w);
    return cross_entropy_rows(logits, masked.originals);
}

// Backbone-only encoder sharing the model's tensors: its CLS output equals
// h_cls_late of the full model exactly.
inline Encoder strip_head(const CondenserModel& model) {
    Encoder e;
    e.cfg = model.cfg.encoder_config();
    e.emb = model.emb;
    e.layers = model.early;
    e.layers.insert(e.layers.end(), model.late.begin(), model.late.end());
    return e;
}

}  // namespace cocon
