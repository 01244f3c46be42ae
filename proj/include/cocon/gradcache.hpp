#pragma once

// Memory-efficient large-batch training for the combined objective. The
// contrastive loss couples every span in the batch, so naive backprop needs
// the whole batch's graph at once. Instead:
//
//   1. a graph-free representation pass collects every span's late CLS
//      (and the loss values for reporting),
//   2. one small graph over the 2n×d CLS matrix yields v_ij, the gradient
//      of the summed contrastive loss w.r.t. each CLS vector,
//   3. spans are re-forwarded with graphs one sub-batch at a time, and the
//      surrogate scalar (1/2n)·(<v_ij, h_ij> + mlm_ij) is backpropagated;
//      with v_ij held constant its parameter gradient is exactly the ij-th
//      summand of the full-batch gradient.
//
// The same corrupted inputs must feed both passes; a checksum guards that.

#include <cstdint>
#include <vector>

#include "cocon/coloss.hpp"
#include "cocon/condenser.hpp"
#include "cocon/optim.hpp"
#include "cocon/tensor.hpp"

namespace cocon {

struct GradientCache {
    std::vector<std::vector<double>> v;  // one d-vector per span, batch order
    uint64_t batch_checksum = 0;
};

struct SubBatch {
    size_t begin = 0;  // span indices [begin, end)
    size_t end = 0;
};

// In-order contiguous partition of [0, 2n).
inline std::vector<SubBatch> partition_spans(size_t n_spans, size_t sub_size) {
    if (sub_size == 0) throw std::invalid_argument("sub-batch size must be >= 1");
    std::vector<SubBatch> subs;
    for (size_t b = 0; b < n_spans; b += sub_size) {
        subs.push_back({b, std::min(b + sub_size, n_spans)});
    }
    return subs;
}

inline uint64_t masked_batch_checksum(const SpanPairBatch& batch) {
    uint64_t h = 1469598103934665603ull;
    auto fold = [&h](uint64_t x) {
        h ^= x;
        h *= 1099511628211ull;
    };
    for (const MaskedSequence& ms : batch.masked) {
        fold(ms.corrupted.ids.size());
        for (size_t id : ms.corrupted.ids) fold(id);
        for (size_t p : ms.positions) fold(p ^ 0x9e3779b97f4a7c15ull);
        for (size_t o : ms.originals) fold(o ^ 0x517cc1b727220a95ull);
    }
    return h;
}

struct RepresentationResult {
    Tensor cls_matrix;               // 2n × d, detached values
    std::vector<double> mlm_values;  // per span
    uint64_t batch_checksum = 0;
};

// Forward-only evaluation of every span: no graphs are recorded, so peak
// live activations stay bounded by a single span's forward.
inline RepresentationResult representation_pass(const CondenserModel& model,
                                                const SpanPairBatch& batch,
                                                const Dropout& dropout = {}) {
    NoGradGuard no_grad;
    RepresentationResult out;
    std::vector<double> cls(batch.spans.size() * model.cfg.hidden);
    for (size_t i = 0; i < batch.spans.size(); ++i) {
        const MaskedSequence& ms = batch.masked[i];
        ForwardTrace trace = forward_condenser(ms.corrupted, model, dropout);
        const auto& row = trace.h_cls_late.data();
        std::copy(row.begin(), row.end(), cls.begin() + i * model.cfg.hidden);
        out.mlm_values.push_back(mlm_loss(trace, ms, model).value());
    }
    out.cls_matrix = Tensor::from_data({batch.spans.size(), model.cfg.hidden}, std::move(cls));
    out.batch_checksum = masked_batch_checksum(batch);
    return out;
}

// v_ij = ∂(Σ L^co_ij)/∂h_ij, computed on one small graph over the CLS matrix.
inline GradientCache compute_cache(const Tensor& cls_matrix) {
    for (double x : cls_matrix.data()) {
        if (!std::isfinite(x)) {
            throw std::invalid_argument("compute_cache: non-finite CLS value");
        }
    }
    Tensor h = Tensor::param(cls_matrix.shape(), cls_matrix.data());
    ContrastiveLoss co = contrastive_loss(h);
    backward(sum(co.per_span));

    GradientCache cache;
    size_t rows = cls_matrix.rows(), d = cls_matrix.cols();
    const auto& g = h.grad();
    cache.v.resize(rows);
    for (size_t i = 0; i < rows; ++i) {
        cache.v[i].assign(g.begin() + i * d, g.begin() + (i + 1) * d);
    }
    return cache;
}

// Re-forwards each span of `sub` with a graph and backpropagates
// scale·(<v_ij, h_ij> + mlm_ij); parameter gradients accumulate additively.
inline void accumulate_subbatch(const CondenserModel& model, const SpanPairBatch& batch,
                                const SubBatch& sub, const GradientCache& cache,
                                double span_scale, const Dropout& dropout = {}) {
    if (cache.v.size() != batch.spans.size()) {
        throw std::invalid_argument("gradient cache holds " + std::to_string(cache.v.size()) +
                                    " vectors for a batch of " +
                                    std::to_string(batch.spans.size()) + " spans");
    }
    if (cache.batch_checksum != 0 &&
        cache.batch_checksum != masked_batch_checksum(batch)) {
        throw std::invalid_argument("gradient cache was built from different corrupted inputs");
    }
    if (sub.end > batch.spans.size() || sub.begin > sub.end) {
        throw std::invalid_argument("sub-batch out of range");
    }
    for (size_t i = sub.begin; i < sub.end; ++i) {
        const MaskedSequence& ms = batch.masked[i];
        ForwardTrace trace = forward_condenser(ms.corrupted, model, dropout);
        Tensor v_const = Tensor::from_data({model.cfg.hidden},
                                           std::vector<double>(cache.v[i]));
        Tensor surrogate = add(dot(v_const, trace.h_cls_late), mlm_loss(trace, ms, model));
        backward(scale(surrogate, span_scale));
    }
}

struct CachedStepResult {
    double loss = 0.0;      // combined objective value, from cached quantities
    double mlm_mean = 0.0;
    double co_mean = 0.0;
};

// Full cached update: representation pass, cache, sub-batch accumulation,
// one optimizer step. Equivalent to a naive full-batch step up to
// floating-point reassociation.
inline CachedStepResult cached_step(const CondenserModel& model, ParameterSet& params,
                                    const SpanPairBatch& batch, size_t sub_size,
                                    AdamW& optimizer, double lr,
                                    const Dropout& dropout = {}) {
    if (sub_size == 0) throw std::invalid_argument("cached_step: sub_size must be >= 1");
    if (dropout.rate > 0.0) {
        // both passes must see byte-identical forward computations
        throw std::invalid_argument("cached_step: dropout is incompatible with cached accumulation");
    }
    RepresentationResult rep = representation_pass(model, batch, dropout);

    GradientCache cache = compute_cache(rep.cls_matrix);
    cache.batch_checksum = rep.batch_checksum;

    params.zero_grads();
    double span_scale = 1.0 / static_cast<double>(batch.spans.size());
    for (const SubBatch& sub : partition_spans(batch.spans.size(), sub_size)) {
        accumulate_subbatch(model, batch, sub, cache, span_scale, dropout);
    }
    optimizer.step(lr);

    CachedStepResult out;
    double mlm_sum = 0.0;
    for (double v : rep.mlm_values) mlm_sum += v;
    out.mlm_mean = mlm_sum / static_cast<double>(batch.spans.size());
    {
        NoGradGuard no_grad;
        out.co_mean = contrastive_loss(rep.cls_matrix).mean.value();
    }
    out.loss = out.mlm_mean + out.co_mean;
    return out;
}

}  // namespace cocon
