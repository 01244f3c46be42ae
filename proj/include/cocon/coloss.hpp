#pragma once

// Span-pair batches and the corpus-aware contrastive objective. A batch is
// n documents × 2 random spans; each span's late CLS is pulled toward its
// pair mate and pushed from every other span in the batch, with no
// temperature and the positive itself present in the denominator. Combined
// with per-span MLM losses under a single 1/2n prefactor.

#include <string>
#include <utility>
#include <vector>

#include "cocon/condenser.hpp"
#include "cocon/corpus.hpp"
#include "cocon/rng.hpp"
#include "cocon/tensor.hpp"

namespace cocon {

class SpanSampleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Span {
    std::string doc_id;
    size_t start = 0;
    size_t end = 0;  // exclusive token offset
    TokenSequence prepared;  // [CLS] + span tokens
};

struct SpanPairBatch {
    size_t n = 0;
    std::vector<Span> spans;           // [s11, s12, s21, s22, ...]
    std::vector<MaskedSequence> masked;  // one per span, fixed at build time

    size_t mate_of(size_t idx) const { return idx ^ 1; }
};

inline Span sample_span(const Document& doc, RngStream& rng, size_t min_len, size_t max_len,
                        size_t seq_budget) {
    size_t n_tokens = doc.token_ids.size();
    size_t hi = std::min(max_len, n_tokens);
    if (min_len == 0 || hi < min_len) {
        throw SpanSampleError("document '" + doc.id + "' (" + std::to_string(n_tokens) +
                              " tokens) cannot fit a span of length " + std::to_string(min_len));
    }
    size_t len = min_len + rng.index_below(hi - min_len + 1);
    size_t start = rng.index_below(n_tokens - len + 1);
    Span s;
    s.doc_id = doc.id;
    s.start = start;
    s.end = start + len;
    std::vector<size_t> ids(doc.token_ids.begin() + start, doc.token_ids.begin() + s.end);
    s.prepared = sequence_from_ids(ids, seq_budget);
    return s;
}

// Two independently placed spans from one document; lengths uniform in
// [min_len, max_len], uniform valid starts, overlap permitted. Token-identical
// mates are re-drawn when the document offers an alternative.
inline std::pair<Span, Span> sample_span_pair(const Document& doc, RngStream& rng,
                                              size_t min_len, size_t max_len,
                                              size_t seq_budget) {
    if (doc.token_ids.size() < 2 * min_len) {
        throw SpanSampleError("document '" + doc.id + "' too short for a span pair: " +
                              std::to_string(doc.token_ids.size()) + " < " +
                              std::to_string(2 * min_len) + " tokens");
    }
    Span a = sample_span(doc, rng, min_len, max_len, seq_budget);
    Span b = sample_span(doc, rng, min_len, max_len, seq_budget);
    for (int attempt = 0; attempt < 16 && b.prepared.ids == a.prepared.ids; ++attempt) {
        b = sample_span(doc, rng, min_len, max_len, seq_budget);
    }
    return {std::move(a), std::move(b)};
}

struct SpanPairConfig {
    size_t min_len = 10;
    size_t max_len = 64;
    size_t seq_budget = 128;  // prepared length cap, [CLS] included
    double mask_rate = 0.15;
    size_t vocab_size = 0;
};

// Deterministic batch construction: span placement and masking depend only
// on (seed, step, slot), so the same batch can be rebuilt by any worker.
inline SpanPairBatch build_span_pair_batch(const std::vector<Document>& docs,
                                           const std::vector<size_t>& doc_indices,
                                           const SpanPairConfig& cfg,
                                           uint64_t seed, uint64_t step) {
    if (doc_indices.empty()) throw std::invalid_argument("span batch: no documents");
    SpanPairBatch batch;
    batch.n = doc_indices.size();
    for (size_t slot = 0; slot < doc_indices.size(); ++slot) {
        const Document& doc = docs.at(doc_indices[slot]);
        RngStream span_rng = RngStream::substream(seed, "span", step, slot);
        auto [a, b] = sample_span_pair(doc, span_rng, cfg.min_len, cfg.max_len, cfg.seq_budget);
        batch.spans.push_back(std::move(a));
        batch.spans.push_back(std::move(b));
    }
    for (size_t i = 0; i < batch.spans.size(); ++i) {
        RngStream mask_rng = RngStream::substream(seed, "maskseq", step, i);
        batch.masked.push_back(
            apply_masking(batch.spans[i].prepared, cfg.mask_rate, mask_rng, cfg.vocab_size));
    }
    return batch;
}

struct ContrastiveLoss {
    Tensor per_span;  // {2n} individual losses
    Tensor mean;      // scalar
};

// Over rows [h11, h12, ..., hn1, hn2] of late-CLS vectors:
//   L_ij = -log( exp<h_i1,h_i2> / sum_{kl != ij} exp<h_ij,h_kl> )
// Raw inner products; only the span itself is excluded from the denominator,
// so the mate term appears in it and every loss is non-negative.
inline ContrastiveLoss contrastive_loss(const Tensor& H) {
    if (H.ndim() != 2) throw std::invalid_argument("contrastive_loss: H must be 2-d");
    size_t rows = H.rows();
    if (rows < 2 || rows % 2 != 0) {
        throw std::invalid_argument("contrastive_loss: need an even number of spans >= 2, got " +
                                    std::to_string(rows));
    }
    Tensor scores = matmul(H, transpose(H));

    std::vector<double> self_mask(rows * rows, 0.0);
    for (size_t i = 0; i < rows; ++i) self_mask[i * rows + i] = -1e30;
    Tensor masked = add(scores, Tensor::from_data({rows, rows}, std::move(self_mask)));

    Tensor denom = logsumexp(masked, 1);  // {2n}
    std::vector<std::pair<size_t, size_t>> mate_rc(rows);
    for (size_t i = 0; i < rows; ++i) mate_rc[i] = {i, i ^ 1};
    Tensor mates = select_elements(scores, mate_rc);

    ContrastiveLoss out;
    out.per_span = sub(denom, mates);
    out.mean = mean(out.per_span);
    return out;
}

struct CombinedLoss {
    Tensor total;        // (1/2n) * (sum mlm + sum co)
    Tensor cls_matrix;   // 2n × d late CLS rows (graph-connected)
    double mlm_mean = 0.0;
    double co_mean = 0.0;
};

// One forward per span: its corrupted copy serves both the MLM loss and the
// contrastive CLS.
inline CombinedLoss combined_loss(const SpanPairBatch& batch, const CondenserModel& model,
                                  const Dropout& dropout = {}) {
    if (batch.n < 1) throw std::invalid_argument("combined_loss: empty batch");
    if (batch.spans.size() != 2 * batch.n || batch.masked.size() != batch.spans.size()) {
        throw std::invalid_argument("combined_loss: malformed batch");
    }
    std::vector<Tensor> cls_rows;
    Tensor mlm_sum = Tensor::scalar(0.0);
    for (size_t i = 0; i < batch.spans.size(); ++i) {
        const MaskedSequence& ms = batch.masked[i];
        ForwardTrace trace = forward_condenser(ms.corrupted, model, dropout);
        cls_rows.push_back(reshape(trace.h_cls_late, {1, model.cfg.hidden}));
        mlm_sum = add(mlm_sum, mlm_loss(trace, ms, model));
    }
    CombinedLoss out;
    out.cls_matrix = concat_rows(cls_rows);
    ContrastiveLoss co = contrastive_loss(out.cls_matrix);
    Tensor co_sum = sum(co.per_span);
    out.total = scale(add(mlm_sum, co_sum), 1.0 / static_cast<double>(batch.spans.size()));
    out.mlm_mean = mlm_sum.value() / static_cast<double>(batch.spans.size());
    out.co_mean = co.mean.value();
    return out;
}

}  // namespace cocon
