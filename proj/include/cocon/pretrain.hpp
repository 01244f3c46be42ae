#pragma once

// Two-stage pre-training. Stage 1 trains the full Condenser with MLM only,
// one span per document. Stage 2 warm-starts from the stage-1 model (head
// included) and trains the combined objective through the gradient cache;
// its final artifact is the stripped backbone. AdamW with linear
// learning-rate decay throughout. All sampling and masking derive from
// (seed, stream name, step, slot), so any step can be rebuilt statelessly
// and resumes are bitwise faithful.

#include <array>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cocon/checkpoint.hpp"
#include "cocon/coloss.hpp"
#include "cocon/condenser.hpp"
#include "cocon/corpus.hpp"
#include "cocon/gradcache.hpp"
#include "cocon/optim.hpp"
#include "cocon/rng.hpp"

namespace cocon {

struct PretrainConfig {
    size_t docs_per_update = 32;
    size_t total_steps = 1000;
    double lr = 1e-4;
    double weight_decay = 0.01;
    size_t warmup_steps = 0;
    size_t sub_batch = 4;        // gradient-cache sub-batch size, stage 2
    uint64_t seed = 42;
    size_t span_min = 10;
    size_t span_max = 64;
    double mask_rate = 0.15;
    size_t checkpoint_every = 0;  // 0 = no periodic snapshots
    size_t probe_every = 200;     // alignment probe cadence, stage 2

    void validate() const {
        if (docs_per_update < 1) throw std::invalid_argument("pretrain: docs_per_update >= 1");
        if (total_steps < 1) throw std::invalid_argument("pretrain: total_steps >= 1");
        if (span_min < 1 || span_max < span_min) {
            throw std::invalid_argument("pretrain: need 1 <= span_min <= span_max");
        }
        if (warmup_steps >= total_steps) {
            throw std::invalid_argument("pretrain: warmup must be shorter than the run");
        }
    }
};

inline double scheduled_lr(const PretrainConfig& cfg, size_t step) {
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
        return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
    }
    size_t rest = cfg.total_steps - cfg.warmup_steps;
    return linear_decay(step - cfg.warmup_steps, rest == 0 ? 1 : rest, cfg.lr);
}

namespace detail {

// Documents for one update: contiguous slice of a per-epoch permutation,
// uniform without replacement within the epoch. Incomplete tails are
// dropped so every update sees exactly `per_update` distinct documents.
inline std::vector<size_t> docs_for_step(size_t n_docs, size_t per_update, uint64_t seed,
                                         const char* stream, size_t step) {
    size_t k = std::min(per_update, n_docs);
    size_t batches_per_epoch = n_docs / k;
    size_t epoch = step / batches_per_epoch;
    size_t slot = step % batches_per_epoch;
    std::vector<size_t> perm(n_docs);
    for (size_t i = 0; i < n_docs; ++i) perm[i] = i;
    RngStream shuffle_rng = RngStream::substream(seed, stream, epoch);
    shuffle_rng.shuffle(perm);
    return {perm.begin() + slot * k, perm.begin() + (slot + 1) * k};
}

inline std::string format_log_line(size_t step, double lr, double loss, double mlm, double co) {
    std::ostringstream os;
    os << step << '\t' << std::setprecision(17) << lr << '\t' << loss << '\t' << mlm << '\t'
       << co;
    return os.str();
}

inline void save_snapshot(const CondenserModel& model, const AdamW& opt,
                          const std::string& path) {
    ParameterSet ps = model.params();
    opt.export_state(ps);
    save_checkpoint(ps, path);
}

}  // namespace detail

// Restores model weights and optimizer state from a snapshot written by a
// previous run, rebinding the caller's parameter set and optimizer to the
// loaded tensors. Returns the step to continue from.
inline size_t resume_from_snapshot(CondenserModel& model, ParameterSet& params, AdamW& opt,
                                   const std::string& path) {
    ParameterSet loaded = load_checkpoint(path);
    model = CondenserModel::from_params(model.cfg, loaded);
    params = model.params();
    opt = AdamW(params, opt.config());
    opt.import_state(loaded);
    return opt.step_count();
}

// Stage 1: MLM-only training of the full Condenser on single-span batches.
// Emits one log line per step: step, lr, loss, mlm, co (co is always 0).
inline void run_stage1(CondenserModel& model, ParameterSet& params, AdamW& opt,
                       const std::vector<Document>& docs, const PretrainConfig& cfg,
                       std::ostream& log, const std::string& snapshot_dir = "",
                       size_t start_step = 0) {
    cfg.validate();
    if (docs.empty()) throw std::invalid_argument("stage 1: empty corpus");

    for (size_t step = start_step; step < cfg.total_steps; ++step) {
        std::vector<size_t> idx =
            detail::docs_for_step(docs.size(), cfg.docs_per_update, cfg.seed, "shuffle1", step);
        params.zero_grads();
        Tensor mlm_sum = Tensor::scalar(0.0);
        for (size_t slot = 0; slot < idx.size(); ++slot) {
            const Document& doc = docs[idx[slot]];
            RngStream span_rng = RngStream::substream(cfg.seed, "span1", step, slot);
            Span span = sample_span(doc, span_rng, cfg.span_min, cfg.span_max,
                                    model.cfg.max_len);
            RngStream mask_rng = RngStream::substream(cfg.seed, "mask1", step, slot);
            MaskedSequence ms =
                apply_masking(span.prepared, cfg.mask_rate, mask_rng, model.cfg.vocab_size);
            ForwardTrace trace = forward_condenser(ms.corrupted, model);
            mlm_sum = add(mlm_sum, mlm_loss(trace, ms, model));
        }
        Tensor loss = scale(mlm_sum, 1.0 / static_cast<double>(idx.size()));
        backward(loss);
        double lr = scheduled_lr(cfg, step);
        opt.step(lr);
        log << detail::format_log_line(step, lr, loss.value(), loss.value(), 0.0) << '\n';

        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            !snapshot_dir.empty()) {
            std::ostringstream name;
            name << snapshot_dir << "/step" << std::setw(6) << std::setfill('0') << (step + 1)
                 << ".ckpt";
            detail::save_snapshot(model, opt, name.str());
        }
    }
}

struct AlignmentProbe {
    double in_doc = 0.0;     // mean CLS inner product of same-document span pairs
    double cross_doc = 0.0;  // mean over spans of different documents
    double gap = 0.0;
    size_t docs_used = 0;
};

// Clean (unmasked) span pairs from held-out documents, encoded with the
// current backbone. The gap is the embedding-space structure signal.
inline AlignmentProbe alignment_probe(const CondenserModel& model,
                                      const std::vector<Document>& heldout,
                                      size_t span_min, size_t span_max, uint64_t probe_seed) {
    NoGradGuard no_grad;
    std::vector<std::array<std::vector<double>, 2>> vecs;
    for (size_t i = 0; i < heldout.size(); ++i) {
        const Document& doc = heldout[i];
        if (doc.token_ids.size() < 2 * span_min) continue;
        RngStream rng = RngStream::substream(probe_seed, "probe", i);
        auto [a, b] = sample_span_pair(doc, rng, span_min, span_max, model.cfg.max_len);
        ForwardTrace ta = forward_backbone(a.prepared, model);
        ForwardTrace tb = forward_backbone(b.prepared, model);
        vecs.push_back({ta.h_cls_late.data(), tb.h_cls_late.data()});
    }
    AlignmentProbe probe;
    probe.docs_used = vecs.size();
    if (vecs.size() < 2) return probe;

    auto ip = [](const std::vector<double>& x, const std::vector<double>& y) {
        double s = 0.0;
        for (size_t j = 0; j < x.size(); ++j) s += x[j] * y[j];
        return s;
    };
    double in_sum = 0.0;
    for (const auto& pair : vecs) in_sum += ip(pair[0], pair[1]);
    probe.in_doc = in_sum / static_cast<double>(vecs.size());

    double cross_sum = 0.0;
    size_t cross_count = 0;
    for (size_t i = 0; i < vecs.size(); ++i) {
        for (size_t k = i + 1; k < vecs.size(); ++k) {
            for (int a = 0; a < 2; ++a) {
                for (int b = 0; b < 2; ++b) {
                    cross_sum += ip(vecs[i][a], vecs[k][b]);
                    ++cross_count;
                }
            }
        }
    }
    probe.cross_doc = cross_sum / static_cast<double>(cross_count);
    probe.gap = probe.in_doc - probe.cross_doc;
    return probe;
}

struct Stage2Options {
    const std::vector<Document>* heldout = nullptr;
    std::ostream* probe_log = nullptr;  // lines: step TAB gap TAB in_doc TAB cross_doc
};

// Stage 2: corpus-aware training with the combined objective via the
// gradient cache. The model keeps its stage-1 architecture (head included);
// callers strip the head for the final artifact.
inline void run_stage2(CondenserModel& model, ParameterSet& params, AdamW& opt,
                       const std::vector<Document>& docs, const PretrainConfig& cfg,
                       std::ostream& log, const Stage2Options& options = {},
                       const std::string& snapshot_dir = "", size_t start_step = 0) {
    cfg.validate();
    if (docs.empty()) throw std::invalid_argument("stage 2: empty corpus");

    SpanPairConfig span_cfg;
    span_cfg.min_len = cfg.span_min;
    span_cfg.max_len = cfg.span_max;
    span_cfg.seq_budget = model.cfg.max_len;
    span_cfg.mask_rate = cfg.mask_rate;
    span_cfg.vocab_size = model.cfg.vocab_size;

    auto emit_probe = [&](size_t step) {
        if (!options.heldout || !options.probe_log) return;
        AlignmentProbe p =
            alignment_probe(model, *options.heldout, cfg.span_min, cfg.span_max, cfg.seed);
        (*options.probe_log) << step << '\t' << std::setprecision(17) << p.gap << '\t'
                             << p.in_doc << '\t' << p.cross_doc << '\n';
    };

    if (start_step == 0) emit_probe(0);
    for (size_t step = start_step; step < cfg.total_steps; ++step) {
        std::vector<size_t> idx =
            detail::docs_for_step(docs.size(), cfg.docs_per_update, cfg.seed, "shuffle2", step);
        SpanPairBatch batch = build_span_pair_batch(docs, idx, span_cfg, cfg.seed, step);
        double lr = scheduled_lr(cfg, step);
        CachedStepResult res = cached_step(model, params, batch, cfg.sub_batch, opt, lr);
        log << detail::format_log_line(step, lr, res.loss, res.mlm_mean, res.co_mean) << '\n';

        if (cfg.probe_every > 0 && (step + 1) % cfg.probe_every == 0) emit_probe(step + 1);
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            !snapshot_dir.empty()) {
            std::ostringstream name;
            name << snapshot_dir << "/step" << std::setw(6) << std::setfill('0') << (step + 1)
                 << ".ckpt";
            detail::save_snapshot(model, opt, name.str());
        }
    }
    if (cfg.probe_every > 0 && cfg.total_steps % cfg.probe_every != 0) {
        emit_probe(cfg.total_steps);
    }
}

}  // namespace cocon
