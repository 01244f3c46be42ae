#pragma once

// Okapi BM25 over an inverted index, the first-round negative source.
// idf(t) = ln((N - df + 0.5)/(df + 0.5) + 1); k1 = 0.9, b = 0.4 by default.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "cocon/corpus.hpp"
#include "cocon/metrics.hpp"
#include "cocon/vocab.hpp"

namespace cocon {

struct Bm25Config {
    double k1 = 0.9;
    double b = 0.4;
};

class BM25Index {
public:
    struct Posting {
        size_t doc = 0;  // internal index, ascending within a list
        size_t tf = 0;
    };

    static BM25Index build(const std::vector<Document>& docs, Bm25Config cfg = {}) {
        BM25Index index;
        index.cfg_ = cfg;
        index.pids_.reserve(docs.size());
        double total_len = 0.0;
        for (size_t i = 0; i < docs.size(); ++i) {
            index.pids_.push_back(docs[i].id);
            std::map<std::string, size_t> tf;
            for (const auto& w : word_tokenize(docs[i].text)) ++tf[w];
            size_t len = 0;
            for (const auto& [term, count] : tf) {
                index.postings_[term].push_back({i, count});
                len += count;
            }
            index.doc_lens_.push_back(len);
            total_len += static_cast<double>(len);
        }
        index.avg_len_ = docs.empty() ? 1.0 : total_len / static_cast<double>(docs.size());
        if (index.avg_len_ <= 0.0) index.avg_len_ = 1.0;
        return index;
    }

    size_t size() const { return pids_.size(); }
    const std::string& pid(size_t idx) const { return pids_.at(idx); }

    double idf(const std::string& term) const {
        auto it = postings_.find(term);
        double df = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
        double n = static_cast<double>(pids_.size());
        return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
    }

    // Score of one document for a tokenized query; absent terms contribute 0.
    double score(const std::vector<std::string>& query_terms, size_t doc_idx) const {
        double s = 0.0;
        for (const auto& term : query_terms) {
            auto it = postings_.find(term);
            if (it == postings_.end()) continue;
            const auto& list = it->second;
            auto p = std::lower_bound(list.begin(), list.end(), doc_idx,
                                      [](const Posting& a, size_t b) { return a.doc < b; });
            if (p == list.end() || p->doc != doc_idx) continue;
            s += term_weight(*p) * idf(term);
        }
        return s;
    }

    // Exact top-k by accumulating postings; only documents containing at
    // least one query term are candidates. Ties break toward the lower pid.
    RankedList topk(const std::string& query_text, size_t k,
                    const std::string& qid = "") const {
        RankedList out;
        out.qid = qid;
        std::vector<std::string> terms = word_tokenize(query_text);
        if (terms.empty() || k == 0) return out;

        std::unordered_map<size_t, double> acc;
        for (const auto& term : terms) {
            auto it = postings_.find(term);
            if (it == postings_.end()) continue;
            double w = idf(term);
            for (const Posting& p : it->second) acc[p.doc] += term_weight(p) * w;
        }
        std::vector<std::pair<size_t, double>> scored(acc.begin(), acc.end());
        std::sort(scored.begin(), scored.end(), [this](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return pids_[a.first] < pids_[b.first];
        });
        if (scored.size() > k) scored.resize(k);
        for (const auto& [doc, s] : scored) out.hits.push_back({pids_[doc], s});
        return out;
    }

private:
    double term_weight(const Posting& p) const {
        double tf = static_cast<double>(p.tf);
        double dl = static_cast<double>(doc_lens_[p.doc]);
        return tf * (cfg_.k1 + 1.0) /
               (tf + cfg_.k1 * (1.0 - cfg_.b + cfg_.b * dl / avg_len_));
    }

    Bm25Config cfg_;
    std::vector<std::string> pids_;
    std::vector<size_t> doc_lens_;
    double avg_len_ = 1.0;
    std::map<std::string, std::vector<Posting>> postings_;
};

}  // namespace cocon
