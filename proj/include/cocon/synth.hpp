#pragma once

// Synthetic topical corpus: the desk-scale stand-in for a real search
// collection. Each topic owns a disjoint keyword set; every document mixes
// a per-document subset of its topic's keywords with shared filler words.
// Queries sample keywords from an anchor document; the relevant set is the
// same-topic documents that contain every query keyword (the anchor always
// qualifies).

#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "cocon/corpus.hpp"
#include "cocon/ir_files.hpp"
#include "cocon/metrics.hpp"
#include "cocon/rng.hpp"

namespace cocon {

struct SynthConfig {
    size_t n_topics = 20;
    size_t docs_per_topic = 10;
    size_t n_queries = 40;
    size_t heldout_per_topic = 2;
    uint64_t seed = 42;

    size_t keywords_per_topic = 12;
    size_t keywords_per_doc = 8;   // per-document subset of the topic's set
    size_t filler_vocab = 120;
    size_t doc_len_min = 60;
    size_t doc_len_max = 100;
    double keyword_rate = 0.45;    // probability a token is a topic keyword
    size_t query_len = 4;          // keywords per query

    void validate() const {
        if (n_topics < 1 || docs_per_topic < 1 || n_queries < 1) {
            throw std::invalid_argument("synth: sizes must be >= 1");
        }
        if (keywords_per_doc > keywords_per_topic) {
            throw std::invalid_argument("synth: keywords_per_doc exceeds keywords_per_topic");
        }
        if (query_len > keywords_per_doc) {
            throw std::invalid_argument("synth: query_len exceeds keywords_per_doc");
        }
        if (doc_len_min < 1 || doc_len_max < doc_len_min) {
            throw std::invalid_argument("synth: bad document length range");
        }
        if (!(keyword_rate > 0.0 && keyword_rate < 1.0)) {
            throw std::invalid_argument("synth: keyword_rate must lie in (0,1)");
        }
    }
};

struct SyntheticData {
    std::vector<Document> corpus;
    std::vector<Document> heldout;  // same generative process, unjudged
    std::vector<Query> queries;
    Qrels qrels;
    std::vector<std::set<std::string>> topic_keywords;
};

namespace detail {

// Pronounceable unique word from an index: two to three CV syllables.
inline std::string synth_word(size_t index, const char* salt) {
    static const char* consonants = "bdfgklmnprstvz";
    static const char* vowels = "aeiou";
    uint64_t x = mix_u64(index * 2654435761ull + hash_name(salt));
    std::string w;
    size_t syllables = 2 + (x % 2);
    for (size_t s = 0; s < syllables; ++s) {
        w.push_back(consonants[(x >> (8 * s)) % 14]);
        w.push_back(vowels[(x >> (8 * s + 4)) % 5]);
    }
    w += std::to_string(index % 97);  // uniqueness guard
    return w;
}

}  // namespace detail

inline SyntheticData make_synthetic_corpus(const SynthConfig& cfg) {
    cfg.validate();
    SyntheticData data;

    // disjoint keyword sets and a shared filler pool, all globally unique
    size_t word_index = 0;
    std::set<std::string> seen;
    auto fresh_word = [&](const char* salt) {
        std::string w;
        do {
            w = detail::synth_word(word_index++, salt);
        } while (!seen.insert(w).second);
        return w;
    };
    std::vector<std::vector<std::string>> topic_kw(cfg.n_topics);
    for (size_t t = 0; t < cfg.n_topics; ++t) {
        for (size_t k = 0; k < cfg.keywords_per_topic; ++k) {
            topic_kw[t].push_back(fresh_word("kw"));
        }
        data.topic_keywords.emplace_back(topic_kw[t].begin(), topic_kw[t].end());
    }
    std::vector<std::string> filler;
    for (size_t f = 0; f < cfg.filler_vocab; ++f) filler.push_back(fresh_word("fill"));

    // documents; each remembers which keywords it actually contains
    struct DocInfo {
        size_t topic;
        std::set<std::string> contains;
    };
    std::vector<DocInfo> info;

    auto gen_doc = [&](size_t topic, const std::string& id, RngStream& rng) {
        std::vector<std::string> subset = topic_kw[topic];
        rng.shuffle(subset);
        subset.resize(cfg.keywords_per_doc);
        size_t len = cfg.doc_len_min + rng.index_below(cfg.doc_len_max - cfg.doc_len_min + 1);
        std::string text;
        std::set<std::string> contains;
        for (size_t i = 0; i < len; ++i) {
            const std::string& w = rng.bernoulli(cfg.keyword_rate)
                                       ? subset[rng.index_below(subset.size())]
                                       : filler[rng.index_below(filler.size())];
            if (data.topic_keywords[topic].count(w)) contains.insert(w);
            text += w;
            text += ' ';
        }
        if (!text.empty()) text.pop_back();
        Document d;
        d.id = id;
        d.text = std::move(text);
        return std::make_pair(std::move(d), std::move(contains));
    };

    for (size_t t = 0; t < cfg.n_topics; ++t) {
        for (size_t j = 0; j < cfg.docs_per_topic; ++j) {
            char id[32];
            std::snprintf(id, sizeof(id), "d%03zu", t * cfg.docs_per_topic + j);
            RngStream rng = RngStream::substream(cfg.seed, "doc", t, j);
            auto [doc, contains] = gen_doc(t, id, rng);
            data.corpus.push_back(std::move(doc));
            info.push_back({t, std::move(contains)});
        }
        for (size_t j = 0; j < cfg.heldout_per_topic; ++j) {
            char id[32];
            std::snprintf(id, sizeof(id), "h%03zu", t * cfg.heldout_per_topic + j);
            RngStream rng = RngStream::substream(cfg.seed, "heldout", t, j);
            data.heldout.push_back(gen_doc(t, id, rng).first);
        }
    }

    // queries: keywords drawn from an anchor document, topics round robin;
    // the anchor contains every query keyword, so each query has at least
    // one relevant document by construction
    for (size_t q = 0; q < cfg.n_queries; ++q) {
        size_t topic = q % cfg.n_topics;
        char qid[32];
        std::snprintf(qid, sizeof(qid), "q%03zu", q);

        bool done = false;
        for (uint64_t attempt = 0; attempt < 16 && !done; ++attempt) {
            RngStream rng = RngStream::substream(cfg.seed, "query", q, attempt);
            size_t anchor = topic * cfg.docs_per_topic + rng.index_below(cfg.docs_per_topic);
            std::vector<std::string> pool(info[anchor].contains.begin(),
                                          info[anchor].contains.end());
            if (pool.size() < cfg.query_len) continue;  // under-sampled document
            rng.shuffle(pool);
            pool.resize(cfg.query_len);

            std::string text;
            for (const auto& w : pool) {
                text += w;
                text += ' ';
            }
            text.pop_back();

            std::set<std::string> relevant;
            for (size_t d = topic * cfg.docs_per_topic; d < (topic + 1) * cfg.docs_per_topic;
                 ++d) {
                bool all = true;
                for (const auto& w : pool) all &= info[d].contains.count(w) > 0;
                if (all) relevant.insert(data.corpus[d].id);
            }
            if (relevant.empty()) continue;  // unreachable: the anchor qualifies
            data.queries.push_back({qid, std::move(text)});
            data.qrels[qid] = std::move(relevant);
            done = true;
        }
        if (!done) {
            throw std::invalid_argument(
                "synth: could not build a query for topic " + std::to_string(topic) +
                "; documents are too short for query_len " + std::to_string(cfg.query_len));
        }
    }
    return data;
}

}  // namespace cocon
