#pragma once

// Self-check suites on toy configurations: finite-difference verification
// of every differentiable operation and of the full model losses, plus the
// gradient-cache equivalence grid. Shared by the gradcheck command and the
// acceptance harness. The broken-gradient hook is the negative control: it
// swaps one backward rule for a deliberately wrong one and must make the
// run fail.

#include <string>
#include <vector>

#include "cocon/coloss.hpp"
#include "cocon/condenser.hpp"
#include "cocon/gradcache.hpp"
#include "cocon/gradcheck.hpp"

namespace cocon {

struct CheckResult {
    std::string suite;
    double max_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

namespace detail {

// forward = scale, backward deliberately off by 1%; only the negative
// control uses this
inline Tensor broken_scale(const Tensor& a, double c) {
    size_t n = a.numel();
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = a.data()[i] * c;
    auto ai = a.impl_ptr();
    return Tensor::make_result(a.shape(), std::move(out), {a},
        [ai, c, n](const std::vector<double>& g) {
            if (ai->requires_grad || ai->node) {
                ai->ensure_grad();
                for (size_t i = 0; i < n; ++i) ai->grad[i] += g[i] * c * 1.01;
            }
        });
}

inline Vocabulary check_vocab() {
    return Vocabulary::from_words({"ka", "ko", "ma", "mo", "na", "no", "ra", "ro"});
}

inline CondenserConfig check_model_config(size_t hidden) {
    CondenserConfig cfg;
    cfg.n_early = 1;
    cfg.n_late = 1;
    cfg.n_head = 1;
    cfg.hidden = hidden;
    cfg.heads = 2;
    cfg.ff = hidden + hidden / 2;
    cfg.vocab_size = check_vocab().size();
    cfg.max_len = 16;
    cfg.init_std = 0.2;
    return cfg;
}

inline std::vector<Document> check_docs(size_t count) {
    std::vector<Document> docs;
    size_t vocab_words = check_vocab().size() - Vocabulary::kReserved;
    for (size_t i = 0; i < count; ++i) {
        Document d;
        d.id = "cd" + std::to_string(i);
        for (size_t t = 0; t < 18 + i; ++t) {
            d.token_ids.push_back(Vocabulary::kReserved + (t * 5 + i) % vocab_words);
        }
        docs.push_back(std::move(d));
    }
    return docs;
}

inline SpanPairBatch check_batch(size_t n, uint64_t seed) {
    SpanPairConfig scfg;
    scfg.min_len = 4;
    scfg.max_len = 8;
    scfg.seq_budget = 12;
    scfg.mask_rate = 0.3;
    scfg.vocab_size = check_vocab().size();
    auto docs = check_docs(n);
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    return build_span_pair_batch(docs, idx, scfg, seed, 0);
}

}  // namespace detail

// Finite differences over a composition touching every primitive op.
inline CheckResult check_tensor_ops(bool broken_gradient = false) {
    RngStream rng(1234);
    ParameterSet ps;
    ps.add("a", Tensor::param({4, 5}, Tensor::randn({4, 5}, rng).data()));
    ps.add("b", Tensor::param({4, 5}, Tensor::randn({4, 5}, rng).data()));
    ps.add("w", Tensor::param({5, 3}, Tensor::randn({5, 3}, rng).data()));
    ps.add("v", Tensor::param({3}, Tensor::randn({3}, rng).data()));
    ps.add("g", Tensor::param({3}, std::vector<double>(3, 1.0)));
    ps.add("c", Tensor::param({3}, Tensor::randn({3}, rng).data()));
    std::vector<size_t> gather_ids{0, 2, 2, 3};

    auto f = [&]() {
        Tensor a = ps.get("a"), b = ps.get("b");
        Tensor mixed = mul(add(a, b), sub(a, scale(b, 0.5)));
        Tensor picked = rows_gather(mixed, gather_ids);                   // 4x5
        Tensor proj = matmul(picked, ps.get("w"));                        // 4x3
        if (broken_gradient) proj = detail::broken_scale(proj, 1.0);
        Tensor normed = layer_norm(gelu(proj), ps.get("g"), ps.get("c")); // 4x3
        Tensor rows = add_rowvec(normed, ps.get("v"));
        Tensor att = softmax(rows, 1);
        Tensor lse = logsumexp(transpose(rows), 1);                       // 3
        Tensor joined = concat_cols({att, slice_cols(rows, 0, 2)});       // 4x5
        Tensor gathered = select_elements(joined, {{0, 0}, {1, 4}, {3, 2}});
        Tensor ce = cross_entropy(reshape(slice_rows(rows, 1, 2), {3}), 1);
        Tensor parts = concat_rows({reshape(mean(joined), {1, 1}),
                                    reshape(sum(mul(gathered, gathered)), {1, 1}),
                                    reshape(dot(lse, ps.get("v")), {1, 1}),
                                    reshape(ce, {1, 1}),
                                    reshape(sum(exp(scale(lse, 0.1))), {1, 1}),
                                    reshape(sum(log(add(exp(lse), Tensor::full({3}, 1.0)))),
                                            {1, 1})});
        return sum(parts);
    };
    CheckResult res{"tensor_ops", grad_check(f, ps, 1e-5), 1e-6, false};
    res.pass = res.max_err < res.tolerance;
    return res;
}

inline CheckResult check_encoder_stack() {
    Vocabulary vocab = detail::check_vocab();
    CondenserConfig mc = detail::check_model_config(12);
    EncoderConfig ec = mc.encoder_config();
    RngStream rng(77);
    Encoder enc = Encoder::make(ec, 2, rng);
    TokenSequence seq = sequence_from_ids({5, 6, 7, 8, 9, 10, 11}, 12);
    ParameterSet ps;
    enc.collect_params(ps);
    Tensor probe = Tensor::randn({ec.hidden}, rng);
    auto f = [&] { return dot(enc.cls(seq), probe); };
    CheckResult res{"encoder_stack", grad_check(f, ps, 1e-4), 1e-4, false};
    res.pass = res.max_err < res.tolerance;
    return res;
}

inline CheckResult check_condenser_mlm() {
    RngStream rng(88);
    CondenserModel model = CondenserModel::make(detail::check_model_config(8), rng);
    SpanPairBatch batch = detail::check_batch(2, 9);
    ParameterSet ps = model.params();
    auto f = [&]() {
        Tensor total = Tensor::scalar(0.0);
        for (size_t i = 0; i < batch.spans.size(); ++i) {
            ForwardTrace trace = forward_condenser(batch.masked[i].corrupted, model);
            total = add(total, mlm_loss(trace, batch.masked[i], model));
        }
        return scale(total, 0.25);
    };
    CheckResult res{"condenser_mlm", grad_check(f, ps, 1e-4), 1e-4, false};
    res.pass = res.max_err < res.tolerance;
    return res;
}

inline CheckResult check_combined_loss() {
    RngStream rng(99);
    CondenserModel model = CondenserModel::make(detail::check_model_config(8), rng);
    SpanPairBatch batch = detail::check_batch(2, 11);
    ParameterSet ps = model.params();
    auto f = [&]() { return combined_loss(batch, model).total; };
    CheckResult res{"combined_loss", grad_check(f, ps, 1e-4), 1e-4, false};
    res.pass = res.max_err < res.tolerance;
    return res;
}

// v_ij against finite differences of the summed contrastive loss.
inline CheckResult check_cache_vectors() {
    RngStream rng(111);
    size_t n = 3, d = 8;
    Tensor H = Tensor::randn({2 * n, d}, rng, 0.7);
    GradientCache cache = compute_cache(H);
    NoGradGuard no_grad;
    auto loss_sum = [&](const std::vector<double>& vals) {
        Tensor m = Tensor::from_data({2 * n, d}, std::vector<double>(vals));
        return sum(contrastive_loss(m).per_span).value();
    };
    std::vector<double> vals = H.data();
    double eps = 1e-6, worst = 0.0;
    for (size_t i = 0; i < vals.size(); ++i) {
        double saved = vals[i];
        vals[i] = saved + eps;
        double up = loss_sum(vals);
        vals[i] = saved - eps;
        double down = loss_sum(vals);
        vals[i] = saved;
        worst = std::max(worst, rel_err(cache.v[i / d][i % d], (up - down) / (2 * eps)));
    }
    CheckResult res{"cache_vectors", worst, 1e-6, false};
    res.pass = res.max_err < res.tolerance;
    return res;
}

// The identity the cache exists for: cached accumulation equals naive
// full-batch backprop for every (n, hidden, sub_size) in the grid.
inline CheckResult check_gradcache_equivalence() {
    double worst = 0.0;
    for (auto [n, hidden] : std::vector<std::pair<size_t, size_t>>{
             {2, 8}, {3, 16}, {4, 32}, {8, 32}}) {
        RngStream rng(200 + n);
        CondenserModel model = CondenserModel::make(detail::check_model_config(hidden), rng);
        ParameterSet ps = model.params();
        SpanPairBatch batch = detail::check_batch(n, 300 + n);
        double span_scale = 1.0 / static_cast<double>(batch.spans.size());

        ps.zero_grads();
        backward(combined_loss(batch, model).total);
        std::map<std::string, std::vector<double>> naive;
        for (auto& [name, t] : ps) naive[name] = t.grad();

        RepresentationResult rep = representation_pass(model, batch);
        GradientCache cache = compute_cache(rep.cls_matrix);
        cache.batch_checksum = rep.batch_checksum;

        for (size_t sub_size : {size_t(1), size_t(2), size_t(3), batch.spans.size()}) {
            ps.zero_grads();
            for (const SubBatch& sub : partition_spans(batch.spans.size(), sub_size)) {
                accumulate_subbatch(model, batch, sub, cache, span_scale);
            }
            for (auto& [name, t] : ps) {
                const auto& got = t.grad();
                const auto& want = naive[name];
                for (size_t i = 0; i < got.size(); ++i) {
                    worst = std::max(worst, rel_err(want[i], got[i]));
                }
            }
        }
    }
    CheckResult res{"gradcache_equivalence", worst, 1e-8, false};
    res.pass = res.max_err < res.tolerance;
    return res;
}

inline std::vector<CheckResult> run_check_suites(bool broken_gradient = false) {
    std::vector<CheckResult> results;
    results.push_back(check_tensor_ops(broken_gradient));
    results.push_back(check_encoder_stack());
    results.push_back(check_condenser_mlm());
    results.push_back(check_combined_loss());
    results.push_back(check_cache_vectors());
    results.push_back(check_gradcache_equivalence());
    return results;
}

}  // namespace cocon
