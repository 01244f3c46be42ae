#pragma once

// Bi-encoder fine-tuning and exact retrieval. The query and passage
// encoders start from the same stripped backbone and train as separate
// weight sets; similarity is a raw inner product of last-layer CLS vectors.
// Search is exact brute force over the full embedding matrix.

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cocon/bm25.hpp"
#include "cocon/checkpoint.hpp"
#include "cocon/corpus.hpp"
#include "cocon/encoder.hpp"
#include "cocon/ir_files.hpp"
#include "cocon/metrics.hpp"
#include "cocon/optim.hpp"
#include "cocon/rng.hpp"
#include "cocon/tensor.hpp"

namespace cocon {

inline double similarity(const std::vector<double>& q, const std::vector<double>& p) {
    if (q.size() != p.size()) {
        throw std::invalid_argument("similarity: dimension mismatch " +
                                    std::to_string(q.size()) + " vs " + std::to_string(p.size()));
    }
    double s = 0.0;
    for (size_t i = 0; i < q.size(); ++i) s += q[i] * p[i];
    return s;
}

inline Tensor similarity(const Tensor& q_emb, const Tensor& p_emb) { return dot(q_emb, p_emb); }

struct BiEncoder {
    Encoder q_enc;
    Encoder p_enc;
    bool shared = false;  // one weight set serving both roles

    const Encoder& passage_encoder() const { return shared ? q_enc : p_enc; }
    const Encoder& query_encoder() const { return q_enc; }

    static BiEncoder from_backbone(const Encoder& backbone, bool shared = false) {
        BiEncoder bi;
        bi.shared = shared;
        bi.q_enc = clone_encoder(backbone);
        if (!shared) bi.p_enc = clone_encoder(backbone);
        return bi;
    }

    void collect_params(ParameterSet& ps) const {
        ParameterSet qp;
        q_enc.collect_params(qp);
        for (auto& [name, t] : qp) ps.add("q." + name, t);
        if (!shared) {
            ParameterSet pp;
            p_enc.collect_params(pp);
            for (auto& [name, t] : pp) ps.add("p." + name, t);
        }
    }

    static BiEncoder from_params(const EncoderConfig& cfg, size_t n_layers,
                                 const ParameterSet& ps, bool shared) {
        ParameterSet qp, pp;
        for (const auto& [name, t] : ps) {
            if (name.rfind("q.", 0) == 0) qp.add(name.substr(2), t);
            else if (name.rfind("p.", 0) == 0) pp.add(name.substr(2), t);
        }
        BiEncoder bi;
        bi.shared = shared;
        bi.q_enc = Encoder::from_params(cfg, n_layers, qp);
        if (!shared) bi.p_enc = Encoder::from_params(cfg, n_layers, pp);
        return bi;
    }

private:
    static Encoder clone_encoder(const Encoder& src) {
        ParameterSet ps;
        src.collect_params(ps);
        ParameterSet copy;
        for (auto& [name, t] : ps) copy.add(name, Tensor::param(t.shape(), t.data()));
        return Encoder::from_params(src.cfg, src.layers.size(), copy);
    }
};

// Eq.-style negative log likelihood over one positive and a score pool:
//   -log( exp s+ / (exp s+ + Σ exp s-) )
inline Tensor nll_from_scores(const Tensor& scores) {
    if (scores.ndim() != 1 || scores.numel() < 1) {
        throw std::invalid_argument("nll_from_scores: need a 1-d score vector");
    }
    Tensor lse = logsumexp(scores, 0);
    Tensor pos = sum(select_elements(reshape(scores, {1, scores.numel()}), {{0, 0}}));
    return sub(lse, pos);
}

inline Tensor nll_loss(const Tensor& q_emb, const Tensor& pos_emb,
                       const std::vector<Tensor>& neg_embs,
                       const std::vector<Tensor>& in_batch_pool = {}) {
    if (neg_embs.empty() && in_batch_pool.empty()) {
        throw std::invalid_argument("nll_loss: empty negative set");
    }
    std::vector<Tensor> scores;
    scores.push_back(reshape(dot(q_emb, pos_emb), {1, 1}));
    for (const Tensor& n : neg_embs) scores.push_back(reshape(dot(q_emb, n), {1, 1}));
    for (const Tensor& n : in_batch_pool) scores.push_back(reshape(dot(q_emb, n), {1, 1}));
    return nll_from_scores(reshape(concat_rows(scores), {scores.size()}));
}

// ---------------------------------------------------------------------------
// Exact inner-product index
// ---------------------------------------------------------------------------

struct RetrievalIndex {
    std::vector<std::string> pids;      // row i ↔ pids[i]
    std::vector<double> matrix;         // N × dim, row major
    size_t dim = 0;

    size_t size() const { return pids.size(); }

    const double* row(size_t i) const { return matrix.data() + i * dim; }
};

inline RetrievalIndex build_index(const Encoder& encoder, const std::vector<Document>& docs,
                                  const Vocabulary& vocab) {
    if (docs.empty()) throw std::invalid_argument("build_index: empty corpus");
    NoGradGuard no_grad;
    RetrievalIndex index;
    index.dim = encoder.cfg.hidden;
    index.matrix.resize(docs.size() * index.dim);
    for (size_t i = 0; i < docs.size(); ++i) {
        index.pids.push_back(docs[i].id);
        TokenSequence seq = tokenize(docs[i].text, vocab, encoder.cfg.max_len);
        Tensor cls = encoder.cls(seq);
        std::copy(cls.data().begin(), cls.data().end(), index.matrix.begin() + i * index.dim);
        for (double v : cls.data()) {
            if (!std::isfinite(v)) {
                throw std::runtime_error("build_index: non-finite embedding for '" +
                                         docs[i].id + "'");
            }
        }
    }
    return index;
}

namespace detail {

constexpr char kIndexMagic[4] = {'C', 'I', 'D', 'X'};
constexpr uint32_t kIndexVersion = 1;

}  // namespace detail

inline void save_index(const RetrievalIndex& index, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("index: cannot open " + path);
    os.write(detail::kIndexMagic, 4);
    detail::write_pod<uint32_t>(os, detail::kIndexVersion);
    detail::write_pod<uint64_t>(os, index.pids.size());
    detail::write_pod<uint64_t>(os, index.dim);
    for (const auto& pid : index.pids) {
        detail::write_pod<uint32_t>(os, static_cast<uint32_t>(pid.size()));
        os.write(pid.data(), static_cast<std::streamsize>(pid.size()));
    }
    os.write(reinterpret_cast<const char*>(index.matrix.data()),
             static_cast<std::streamsize>(index.matrix.size() * sizeof(double)));
    if (!os) throw std::runtime_error("index: write failed for " + path);
}

inline RetrievalIndex load_index(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("index: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, detail::kIndexMagic, 4) != 0) {
        throw std::runtime_error("index: bad magic in " + path);
    }
    uint32_t version = detail::read_pod<uint32_t>(is);
    if (version != detail::kIndexVersion) {
        throw std::runtime_error("index: unsupported version in " + path);
    }
    uint64_t n = detail::read_pod<uint64_t>(is);
    RetrievalIndex index;
    index.dim = static_cast<size_t>(detail::read_pod<uint64_t>(is));
    for (uint64_t i = 0; i < n; ++i) {
        uint32_t len = detail::read_pod<uint32_t>(is);
        std::string pid(len, '\0');
        is.read(pid.data(), len);
        index.pids.push_back(std::move(pid));
    }
    index.matrix.resize(n * index.dim);
    is.read(reinterpret_cast<char*>(index.matrix.data()),
            static_cast<std::streamsize>(index.matrix.size() * sizeof(double)));
    if (!is) throw std::runtime_error("index: truncated data in " + path);
    return index;
}

// Exact top-k by inner product, equal to the argsort prefix. Ties break
// toward the lower passage id. k beyond the collection returns everything
// with the clamped flag set.
inline RankedList search(const RetrievalIndex& index, const std::vector<double>& q_emb,
                         size_t k, const std::string& qid = "") {
    if (k < 1) throw std::invalid_argument("search: k must be >= 1");
    if (q_emb.size() != index.dim) {
        throw std::invalid_argument("search: query dim " + std::to_string(q_emb.size()) +
                                    " vs index dim " + std::to_string(index.dim));
    }
    RankedList out;
    out.qid = qid;
    size_t n = index.size();
    if (k > n) {
        out.clamped = true;
        k = n;
    }
    std::vector<std::pair<double, size_t>> scored(n);
    for (size_t i = 0; i < n; ++i) {
        scored[i] = {similarity(q_emb, {index.row(i), index.row(i) + index.dim}), i};
    }
    auto better = [&index](const std::pair<double, size_t>& a,
                           const std::pair<double, size_t>& b) {
        if (a.first != b.first) return a.first > b.first;
        return index.pids[a.second] < index.pids[b.second];
    };
    std::partial_sort(scored.begin(), scored.begin() + k, scored.end(), better);
    for (size_t r = 0; r < k; ++r) {
        out.hits.push_back({index.pids[scored[r].second], scored[r].first});
    }
    return out;
}

inline std::vector<double> encode_query(const Encoder& enc, const Vocabulary& vocab,
                                        const std::string& text) {
    NoGradGuard no_grad;
    return enc.cls(tokenize(text, vocab, enc.cfg.max_len)).data();
}

// ---------------------------------------------------------------------------
// Fine-tuning
// ---------------------------------------------------------------------------

struct FinetuneConfig {
    size_t batch = 8;
    size_t epochs = 3;
    double lr = 3e-4;
    double weight_decay = 0.01;
    size_t negs_per_step = 4;  // negatives drawn from each triple's pool per step
    bool in_batch = false;     // other triples' passages join the denominator
    bool shared_weights = false;
    uint64_t seed = 42;
    double dropout = 0.0;
};

struct TrainRoundResult {
    BiEncoder bi;
    std::vector<double> losses;  // one per step
};

namespace detail {

inline TokenSequence prepared(const std::map<std::string, std::string>& texts,
                              const std::string& key, const Encoder& enc,
                              const Vocabulary& vocab) {
    auto it = texts.find(key);
    if (it == texts.end()) throw DataError("train_round: no text for '" + key + "'");
    return tokenize(it->second, vocab, enc.cfg.max_len);
}

// first-k of a seeded partial shuffle; identity order when k >= n
inline std::vector<size_t> sample_without_replacement(size_t n, size_t k, RngStream& rng) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    if (k >= n) return idx;
    for (size_t i = 0; i < k; ++i) {
        size_t j = i + rng.index_below(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

}  // namespace detail

// Supervised contrastive fine-tuning over (query, positive, negatives)
// triples, AdamW with linear lr decay.
inline TrainRoundResult train_round(const std::vector<TrainingTriple>& triples,
                                    const std::map<std::string, std::string>& query_text,
                                    const std::map<std::string, std::string>& passage_text,
                                    const Encoder& backbone, const Vocabulary& vocab,
                                    const FinetuneConfig& cfg, std::ostream* log = nullptr) {
    if (triples.empty()) throw std::invalid_argument("train_round: no triples");
    for (const auto& t : triples) t.validate();

    TrainRoundResult result;
    result.bi = BiEncoder::from_backbone(backbone, cfg.shared_weights);
    BiEncoder& bi = result.bi;

    ParameterSet ps;
    bi.collect_params(ps);
    AdamW opt(ps, {0.9, 0.999, 1e-8, cfg.weight_decay});

    size_t batches_per_epoch = (triples.size() + cfg.batch - 1) / cfg.batch;
    size_t total_steps = cfg.epochs * batches_per_epoch;
    size_t step = 0;
    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(triples.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        RngStream shuffle_rng = RngStream::substream(cfg.seed, "ft_shuffle", epoch);
        shuffle_rng.shuffle(order);

        for (size_t b = 0; b < batches_per_epoch; ++b, ++step) {
            size_t lo = b * cfg.batch;
            size_t hi = std::min(lo + cfg.batch, triples.size());
            ps.zero_grads();

            Dropout drop;
            RngStream drop_rng = RngStream::substream(cfg.seed, "ft_dropout", step);
            if (cfg.dropout > 0.0) {
                drop.rate = cfg.dropout;
                drop.rng = &drop_rng;
            }

            // encode the batch: queries through f_q, passages through f_p
            std::vector<Tensor> q_embs, pos_embs;
            std::vector<std::vector<Tensor>> neg_embs;
            const Encoder& penc = bi.shared ? bi.q_enc : bi.p_enc;
            for (size_t i = lo; i < hi; ++i) {
                const TrainingTriple& t = triples[order[i]];
                q_embs.push_back(
                    bi.q_enc.cls(detail::prepared(query_text, t.qid, bi.q_enc, vocab), drop));
                pos_embs.push_back(
                    penc.cls(detail::prepared(passage_text, t.pos, penc, vocab), drop));
                RngStream neg_rng = RngStream::substream(cfg.seed, "ft_negs", step, i - lo);
                std::vector<Tensor> negs;
                for (size_t pick : detail::sample_without_replacement(
                         t.negs.size(), cfg.negs_per_step, neg_rng)) {
                    negs.push_back(
                        penc.cls(detail::prepared(passage_text, t.negs[pick], penc, vocab), drop));
                }
                neg_embs.push_back(std::move(negs));
            }

            Tensor loss_sum = Tensor::scalar(0.0);
            for (size_t i = 0; i < q_embs.size(); ++i) {
                std::vector<Tensor> pool;
                if (cfg.in_batch) {
                    for (size_t j = 0; j < q_embs.size(); ++j) {
                        if (j == i) continue;
                        pool.push_back(pos_embs[j]);
                        for (const Tensor& n : neg_embs[j]) pool.push_back(n);
                    }
                }
                loss_sum = add(loss_sum, nll_loss(q_embs[i], pos_embs[i], neg_embs[i], pool));
            }
            Tensor loss = scale(loss_sum, 1.0 / static_cast<double>(q_embs.size()));
            backward(loss);
            double lr = linear_decay(step, total_steps, cfg.lr);
            opt.step(lr);
            result.losses.push_back(loss.value());
            if (log) {
                (*log) << step << '\t' << std::setprecision(17) << lr << '\t' << loss.value()
                       << '\n';
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Hard-negative mining and the two-round pipeline
// ---------------------------------------------------------------------------

struct MiningConfig {
    size_t depth = 30;      // retrieve this many candidates per query
    size_t per_query = 8;   // mined negatives appended per query
};

struct MiningStats {
    size_t queries = 0;
    size_t mined = 0;
    size_t empty = 0;  // queries that yielded no new negatives
};

// Retrieves with the round-1 encoder, removes known positives, and appends
// up to per_query new negatives to each triple's pool (complement, never
// replace).
inline MiningStats mine_hard_negatives(const BiEncoder& round1,
                                       std::vector<TrainingTriple>& triples,
                                       const std::vector<Document>& docs,
                                       const Vocabulary& vocab,
                                       const std::map<std::string, std::string>& query_text,
                                       const Qrels& qrels, const MiningConfig& cfg) {
    RetrievalIndex index = build_index(round1.passage_encoder(), docs, vocab);
    MiningStats stats;
    for (TrainingTriple& t : triples) {
        ++stats.queries;
        auto qt = query_text.find(t.qid);
        if (qt == query_text.end()) {
            throw DataError("mine: no text for query '" + t.qid + "'");
        }
        std::vector<double> q_emb = encode_query(round1.query_encoder(), vocab, qt->second);
        RankedList top = search(index, q_emb, std::min(cfg.depth, index.size()), t.qid);

        std::set<std::string> known(t.negs.begin(), t.negs.end());
        std::set<std::string> positives{t.pos};
        auto qr = qrels.find(t.qid);
        if (qr != qrels.end()) positives.insert(qr->second.begin(), qr->second.end());

        size_t added = 0;
        for (const ScoredDoc& hit : top.hits) {
            if (added >= cfg.per_query) break;
            if (positives.count(hit.pid) || known.count(hit.pid)) continue;
            t.negs.push_back(hit.pid);
            known.insert(hit.pid);
            ++added;
        }
        stats.mined += added;
        if (added == 0) ++stats.empty;
    }
    return stats;
}

struct PipelineConfig {
    FinetuneConfig finetune;
    MiningConfig mining;
    size_t bm25_negs_per_query = 8;
    size_t bm25_depth = 30;
    size_t run_depth = 1000;  // ranked-list depth for emitted runs
    Bm25Config bm25;
};

struct RoundArtifacts {
    std::vector<RankedList> run;
    MetricReport metrics;
};

struct PipelineResult {
    BiEncoder round2;
    std::vector<TrainingTriple> bm25_triples;
    std::vector<TrainingTriple> augmented_triples;
    RoundArtifacts round1_art;
    RoundArtifacts round2_art;
    MiningStats mining;
};

// BM25 first-round triples: positive = first judged passage, negatives =
// top non-relevant BM25 hits. Queries without judgments or without usable
// negatives are skipped.
inline std::vector<TrainingTriple> bm25_triples(const std::vector<Query>& queries,
                                                const Qrels& qrels, const BM25Index& bm25,
                                                size_t depth, size_t per_query) {
    std::vector<TrainingTriple> out;
    for (const Query& q : queries) {
        auto qr = qrels.find(q.qid);
        if (qr == qrels.end() || qr->second.empty()) continue;
        TrainingTriple t;
        t.qid = q.qid;
        t.pos = *qr->second.begin();
        RankedList top = bm25.topk(q.text, depth, q.qid);
        for (const ScoredDoc& hit : top.hits) {
            if (t.negs.size() >= per_query) break;
            if (qr->second.count(hit.pid)) continue;
            t.negs.push_back(hit.pid);
        }
        if (!t.negs.empty()) out.push_back(std::move(t));
    }
    return out;
}

inline std::vector<RankedList> run_queries(const BiEncoder& bi, const RetrievalIndex& index,
                                           const std::vector<Query>& queries,
                                           const Vocabulary& vocab, size_t k) {
    std::vector<RankedList> run;
    for (const Query& q : queries) {
        std::vector<double> emb = encode_query(bi.query_encoder(), vocab, q.text);
        run.push_back(search(index, emb, std::min(k, index.size()), q.qid));
    }
    return run;
}

// Round 1 trains on BM25 negatives; the round-1 retriever mines hard
// negatives to complement each pool; round 2 trains fresh from the same
// backbone on the complemented pools. Emits a run + metric report per round.
inline PipelineResult two_round_pipeline(const std::vector<Document>& docs,
                                         const std::vector<Query>& queries,
                                         const Qrels& qrels, const Encoder& backbone,
                                         const Vocabulary& vocab, const PipelineConfig& cfg,
                                         std::ostream* log = nullptr) {
    std::map<std::string, std::string> query_text, passage_text;
    for (const Query& q : queries) query_text[q.qid] = q.text;
    for (const Document& d : docs) passage_text[d.id] = d.text;

    BM25Index bm25 = BM25Index::build(docs, cfg.bm25);
    PipelineResult result;
    result.bm25_triples =
        bm25_triples(queries, qrels, bm25, cfg.bm25_depth, cfg.bm25_negs_per_query);
    if (result.bm25_triples.empty()) {
        throw DataError("pipeline: no usable training triples (check queries and qrels)");
    }

    TrainRoundResult r1 = train_round(result.bm25_triples, query_text, passage_text, backbone,
                                      vocab, cfg.finetune, log);
    RetrievalIndex idx1 = build_index(r1.bi.passage_encoder(), docs, vocab);
    result.round1_art.run = run_queries(r1.bi, idx1, queries, vocab, cfg.run_depth);
    result.round1_art.metrics = evaluate_run(result.round1_art.run, qrels);

    result.augmented_triples = result.bm25_triples;
    result.mining = mine_hard_negatives(r1.bi, result.augmented_triples, docs, vocab,
                                        query_text, qrels, cfg.mining);

    FinetuneConfig round2_cfg = cfg.finetune;
    round2_cfg.seed = mix_u64(cfg.finetune.seed ^ hash_name("round2"));
    TrainRoundResult r2 = train_round(result.augmented_triples, query_text, passage_text,
                                      backbone, vocab, round2_cfg, log);
    RetrievalIndex idx2 = build_index(r2.bi.passage_encoder(), docs, vocab);
    result.round2_art.run = run_queries(r2.bi, idx2, queries, vocab, cfg.run_depth);
    result.round2_art.metrics = evaluate_run(result.round2_art.run, qrels);
    result.round2 = std::move(r2.bi);
    return result;
}

}  // namespace cocon
