#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cocon/checkpoint.hpp"
#include "cocon/gradcache.hpp"
#include "cocon/gradcheck.hpp"

#include "test_util.hpp"

using namespace cocon;

namespace {

Vocabulary toy_vocab() {
    return Vocabulary::from_words({"a", "b", "c", "d", "e", "f", "g", "h"});
}

CondenserConfig tiny_config(size_t vocab_size, size_t hidden = 8) {
    CondenserConfig cfg;
    cfg.n_early = 1; cfg.n_late = 1; cfg.n_head = 1;
    cfg.hidden = hidden; cfg.heads = 2; cfg.ff = 12;
    cfg.vocab_size = vocab_size; cfg.max_len = 16; cfg.init_std = 0.2;
    return cfg;
}

Document make_doc(const std::string& id, size_t n_tokens, size_t base, size_t range) {
    Document d;
    d.id = id;
    for (size_t i = 0; i < n_tokens; ++i) d.token_ids.push_back(base + (i * 3 + i / range) % range);
    return d;
}

std::vector<Document> make_docs(size_t count, size_t vocab_size) {
    std::vector<Document> docs;
    for (size_t i = 0; i < count; ++i) {
        docs.push_back(make_doc("d" + std::to_string(i), 18 + i,
                                Vocabulary::kReserved + (i % 2),
                                vocab_size - Vocabulary::kReserved - 1));
    }
    return docs;
}

SpanPairBatch make_batch(const std::vector<Document>& docs, size_t n, size_t vocab_size,
                         uint64_t seed) {
    SpanPairConfig cfg;
    cfg.min_len = 4; cfg.max_len = 8; cfg.seq_budget = 12;
    cfg.vocab_size = vocab_size; cfg.mask_rate = 0.3;
    std::vector<size_t> idx;
    for (size_t i = 0; i < n; ++i) idx.push_back(i % docs.size());
    return build_span_pair_batch(docs, idx, cfg, seed, 0);
}

std::map<std::string, std::vector<double>> snapshot_grads(const ParameterSet& ps) {
    std::map<std::string, std::vector<double>> out;
    for (const auto& [name, t] : ps) out[name] = t.grad();
    return out;
}

double max_grad_rel_err(const std::map<std::string, std::vector<double>>& a,
                        const std::map<std::string, std::vector<double>>& b) {
    double worst = 0.0;
    for (const auto& [name, ga] : a) {
        const auto& gb = b.at(name);
        for (size_t i = 0; i < ga.size(); ++i) worst = std::max(worst, rel_err(ga[i], gb[i]));
    }
    return worst;
}

}  // namespace

TEST_CASE("representation pass matches the graph forward bitwise") {
    Vocabulary vocab = toy_vocab();
    RngStream rng(1);
    CondenserModel model = CondenserModel::make(tiny_config(vocab.size()), rng);
    auto docs = make_docs(3, vocab.size());
    SpanPairBatch batch = make_batch(docs, 3, vocab.size(), 11);

    RepresentationResult rep = representation_pass(model, batch);
    RepresentationResult rep2 = representation_pass(model, batch);
    REQUIRE(rep.cls_matrix.data() == rep2.cls_matrix.data());
    REQUIRE(rep.mlm_values == rep2.mlm_values);

    CombinedLoss naive = combined_loss(batch, model);
    REQUIRE(naive.cls_matrix.data() == rep.cls_matrix.data());
    for (size_t i = 0; i < batch.spans.size(); ++i) {
        ForwardTrace t = forward_condenser(batch.masked[i].corrupted, model);
        REQUIRE(mlm_loss(t, batch.masked[i], model).value() == rep.mlm_values[i]);
    }
}

TEST_CASE("representation pass keeps live activations bounded by one span") {
    Vocabulary vocab = toy_vocab();
    RngStream rng(2);
    CondenserModel model = CondenserModel::make(tiny_config(vocab.size()), rng);
    auto docs = make_docs(4, vocab.size());
    SpanPairBatch batch = make_batch(docs, 8, vocab.size(), 3);

    // peak live tensors during a single no-grad span forward
    long before_single = live_tensor_count();
    long single_peak = 0;
    {
        NoGradGuard ng;
        ForwardTrace t = forward_condenser(batch.masked[0].corrupted, model);
        (void)mlm_loss(t, batch.masked[0], model);
        single_peak = live_tensor_count() - before_single;
    }

    long before = live_tensor_count();
    RepresentationResult rep = representation_pass(model, batch);
    long after = live_tensor_count() - before;
    // afterwards only the CLS matrix remains
    REQUIRE(after <= 2);

    // a graph-recording pass over the whole batch retains far more
    long graph_before = live_tensor_count();
    CombinedLoss naive = combined_loss(batch, model);
    long graph_live = live_tensor_count() - graph_before;
    REQUIRE(graph_live > 16 * single_peak);
}

TEST_CASE("compute_cache degenerate and symmetric cases") {
    SECTION("n=1: both cache vectors are exactly zero") {
        RngStream rng(3);
        Tensor H = Tensor::randn({2, 6}, rng, 2.0);
        GradientCache cache = compute_cache(H);
        for (const auto& v : cache.v) {
            for (double x : v) REQUIRE(x == 0.0);
        }
    }

    SECTION("all rows identical: all four vectors equal by symmetry") {
        std::vector<double> row{0.3, -0.7, 1.1};
        std::vector<double> data;
        for (int i = 0; i < 4; ++i) data.insert(data.end(), row.begin(), row.end());
        GradientCache cache = compute_cache(Tensor::from_data({4, 3}, std::move(data)));
        for (size_t i = 1; i < 4; ++i) {
            for (size_t j = 0; j < 3; ++j) {
                REQUIRE(cache.v[i][j] == Catch::Approx(cache.v[0][j]).margin(1e-15));
            }
        }
    }

    SECTION("non-finite input is rejected") {
        std::vector<double> data(8, 0.0);
        data[3] = std::numeric_limits<double>::quiet_NaN();
        REQUIRE_THROWS_WITH(compute_cache(Tensor::from_data({2, 4}, std::move(data))),
                            Catch::Matchers::ContainsSubstring("non-finite"));
    }
}

TEST_CASE("cache vectors match finite differences of the double-loop loss") {
    RngStream rng(4);
    size_t n = 3, d = 8;
    Tensor H = Tensor::randn({2 * n, d}, rng, 0.7);
    GradientCache cache = compute_cache(H);

    auto loss_sum = [&](const std::vector<double>& vals) {
        NoGradGuard ng;
        Tensor m = Tensor::from_data({2 * n, d}, std::vector<double>(vals));
        return sum(contrastive_loss(m).per_span).value();
    };

    std::vector<double> vals = H.data();
    double eps = 1e-6;
    for (size_t i = 0; i < 2 * n; ++i) {
        for (size_t j = 0; j < d; ++j) {
            size_t k = i * d + j;
            double saved = vals[k];
            vals[k] = saved + eps;
            double up = loss_sum(vals);
            vals[k] = saved - eps;
            double down = loss_sum(vals);
            vals[k] = saved;
            double numeric = (up - down) / (2 * eps);
            REQUIRE(rel_err(cache.v[i][j], numeric) < 1e-6);
        }
    }
}

TEST_CASE("one sub-batch reproduces the naive combined-loss gradient") {
    Vocabulary vocab = toy_vocab();
    RngStream rng(5);
    CondenserModel model = CondenserModel::make(tiny_config(vocab.size()), rng);
    ParameterSet ps = model.params();
    auto docs = make_docs(3, vocab.size());
    SpanPairBatch batch = make_batch(docs, 3, vocab.size(), 17);

    ps.zero_grads();
    backward(combined_loss(batch, model).total);
    auto naive = snapshot_grads(ps);

    RepresentationResult rep = representation_pass(model, batch);
    GradientCache cache = compute_cache(rep.cls_matrix);
    cache.batch_checksum = rep.batch_checksum;
    ps.zero_grads();
    accumulate_subbatch(model, batch, {0, batch.spans.size()}, cache,
                        1.0 / double(batch.spans.size()));
    auto cached = snapshot_grads(ps);

    REQUIRE(max_grad_rel_err(naive, cached) < 1e-8);
}

TEST_CASE("zero cache vectors reduce to scaled MLM gradients") {
    Vocabulary vocab = toy_vocab();
    RngStream rng(6);
    CondenserModel model = CondenserModel::make(tiny_config(vocab.size()), rng);
    ParameterSet ps = model.params();
    auto docs = make_docs(2, vocab.size());
    SpanPairBatch batch = make_batch(docs, 2, vocab.size(), 23);
    double scale_v = 1.0 / double(batch.spans.size());

    GradientCache zero_cache;
    zero_cache.v.assign(batch.spans.size(), std::vector<double>(model.cfg.hidden, 0.0));

    ps.zero_grads();
    accumulate_subbatch(model, batch, {0, batch.spans.size()}, zero_cache, scale_v);
    auto from_cache = snapshot_grads(ps);

    ps.zero_grads();
    Tensor mlm_sum = Tensor::scalar(0.0);
    for (size_t i = 0; i < batch.spans.size(); ++i) {
        ForwardTrace t = forward_condenser(batch.masked[i].corrupted, model);
        mlm_sum = add(mlm_sum, mlm_loss(t, batch.masked[i], model));
    }
    backward(scale(mlm_sum, scale_v));
    auto pure_mlm = snapshot_grads(ps);

    REQUIRE(max_grad_rel_err(from_cache, pure_mlm) < 1e-10);
}

TEST_CASE("partition invariance: singleton sub-batches equal one big sub-batch") {
    Vocabulary vocab = toy_vocab();
    RngStream rng(7);
    CondenserModel model = CondenserModel::make(tiny_config(vocab.size()), rng);
    ParameterSet ps = model.params();
    auto docs = make_docs(3, vocab.size());
    SpanPairBatch batch = make_batch(docs, 3, vocab.size(), 29);
    double scale_v = 1.0 / double(batch.spans.size());

    RepresentationResult rep = representation_pass(model, batch);
    GradientCache cache = compute_cache(rep.cls_matrix);

    ps.zero_grads();
    accumulate_subbatch(model, batch, {0, batch.spans.size()}, cache, scale_v);
    auto big = snapshot_grads(ps);

    ps.zero_grads();
    for (const SubBatch& sub : partition_spans(batch.spans.size(), 1)) {
        accumulate_subbatch(model, batch, sub, cache, scale_v);
    }
    auto singles = snapshot_grads(ps);

    double worst_abs = 0.0;
    for (const auto& [name, ga] : big) {
        const auto& gb = singles.at(name);
        for (size_t i = 0; i < ga.size(); ++i) {
            worst_abs = std::max(worst_abs, std::abs(ga[i] - gb[i]));
        }
    }
    REQUIRE(worst_abs < 1e-10);
}

TEST_CASE("misaligned cache or foreign batch is rejected") {
    Vocabulary vocab = toy_vocab();
    RngStream rng(8);
    CondenserModel model = CondenserModel::make(tiny_config(vocab.size()), rng);
    auto docs = make_docs(3, vocab.size());
    SpanPairBatch batch = make_batch(docs, 3, vocab.size(), 31);

    GradientCache short_cache;
    short_cache.v.assign(2, std::vector<double>(model.cfg.hidden, 0.0));
    REQUIRE_THROWS_WITH(accumulate_subbatch(model, batch, {0, 2}, short_cache, 0.25),
                        Catch::Matchers::ContainsSubstring("cache"));

    RepresentationResult rep = representation_pass(model, batch);
    GradientCache cache = compute_cache(rep.cls_matrix);
    cache.batch_checksum = rep.batch_checksum;
    SpanPairBatch other = make_batch(docs, 3, vocab.size(), 32);
    REQUIRE_THROWS_WITH(accumulate_subbatch(model, other, {0, 2}, cache, 0.25),
                        Catch::Matchers::ContainsSubstring("different corrupted inputs"));
}

TEST_CASE("equivalence grid: cached gradients match naive full-batch backprop") {
    Vocabulary vocab = toy_vocab();
    for (auto [n, hidden] : std::vector<std::pair<size_t, size_t>>{{2, 8}, {3, 16}, {4, 8}}) {
        RngStream rng(100 + n);
        CondenserModel model = CondenserModel::make(tiny_config(vocab.size(), hidden), rng);
        ParameterSet ps = model.params();
        auto docs = make_docs(n, vocab.size());
        SpanPairBatch batch = make_batch(docs, n, vocab.size(), 41 + n);
        double scale_v = 1.0 / double(batch.spans.size());

        ps.zero_grads();
        backward(combined_loss(batch, model).total);
        auto naive = snapshot_grads(ps);

        RepresentationResult rep = representation_pass(model, batch);
        GradientCache cache = compute_cache(rep.cls_matrix);
        cache.batch_checksum = rep.batch_checksum;

        for (size_t sub_size : {size_t(1), size_t(2), size_t(3), batch.spans.size()}) {
            ps.zero_grads();
            for (const SubBatch& sub : partition_spans(batch.spans.size(), sub_size)) {
                accumulate_subbatch(model, batch, sub, cache, scale_v);
            }
            auto cached = snapshot_grads(ps);
            INFO("n=" << n << " hidden=" << hidden << " sub_size=" << sub_size);
            REQUIRE(max_grad_rel_err(naive, cached) < 1e-8);
        }
    }
}

TEST_CASE("cached_step reports the naive loss and matches a naive update") {
    Vocabulary vocab = toy_vocab();
    RngStream rng(9);
    CondenserConfig cfg = tiny_config(vocab.size());
    CondenserModel model = CondenserModel::make(cfg, rng);

    // identically initialized twin for the naive route
    test_util::TempDir tmp("twin");
    save_checkpoint(model.params(), tmp.file("m.ckpt"));
    CondenserModel twin = CondenserModel::from_params(cfg, load_checkpoint(tmp.file("m.ckpt")));

    auto docs = make_docs(3, vocab.size());
    SpanPairBatch batch = make_batch(docs, 3, vocab.size(), 55);

    ParameterSet ps = model.params();
    AdamW opt(ps);
    CachedStepResult res = cached_step(model, ps, batch, 2, opt, 1e-3);

    ParameterSet twin_ps = twin.params();
    AdamW twin_opt(twin_ps);
    CombinedLoss naive = combined_loss(batch, twin);
    twin_ps.zero_grads();
    backward(naive.total);
    twin_opt.step(1e-3);

    REQUIRE(std::abs(res.loss - naive.total.value()) < 1e-10);
    REQUIRE(std::abs(res.mlm_mean - naive.mlm_mean) < 1e-10);
    REQUIRE(std::abs(res.co_mean - naive.co_mean) < 1e-10);

    double worst = 0.0;
    for (auto& [name, t] : ps) {
        const auto& a = t.data();
        const auto& b = twin_ps.get(name).data();
        for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
    }
    REQUIRE(worst < 1e-8);
}

TEST_CASE("sub_size larger than the batch behaves as one sub-batch") {
    Vocabulary vocab = toy_vocab();
    RngStream rng(10);
    CondenserModel model = CondenserModel::make(tiny_config(vocab.size()), rng);
    auto docs = make_docs(2, vocab.size());
    SpanPairBatch batch = make_batch(docs, 2, vocab.size(), 61);

    auto subs = partition_spans(batch.spans.size(), 100);
    REQUIRE(subs.size() == 1);
    REQUIRE(subs[0].begin == 0);
    REQUIRE(subs[0].end == batch.spans.size());

    ParameterSet ps = model.params();
    AdamW opt(ps);
    REQUIRE_NOTHROW(cached_step(model, ps, batch, 100, opt, 1e-3));
    REQUIRE_THROWS_AS(cached_step(model, ps, batch, 0, opt, 1e-3), std::invalid_argument);
}
