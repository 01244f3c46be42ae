#pragma once

// Retrieval metrics over ranked lists: MRR@k and Recall@k. Queries that have
// no relevance judgments are excluded from the averages and counted.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace cocon {

struct ScoredDoc {
    std::string pid;
    double score = 0.0;
};

struct RankedList {
    std::string qid;
    std::vector<ScoredDoc> hits;  // scores non-increasing, ties by ascending pid
    bool clamped = false;         // k exceeded the collection size
};

using Qrels = std::map<std::string, std::set<std::string>>;

// Mean over judged queries of 1/rank of the first relevant hit within the
// top k, 0 when none appears.
inline double mrr_at_k(const std::vector<RankedList>& run, const Qrels& qrels, size_t k) {
    double total = 0.0;
    size_t judged = 0;
    for (const RankedList& rl : run) {
        auto it = qrels.find(rl.qid);
        if (it == qrels.end() || it->second.empty()) continue;
        ++judged;
        size_t depth = std::min(k, rl.hits.size());
        for (size_t r = 0; r < depth; ++r) {
            if (it->second.count(rl.hits[r].pid)) {
                total += 1.0 / static_cast<double>(r + 1);
                break;
            }
        }
    }
    return judged == 0 ? 0.0 : total / static_cast<double>(judged);
}

// Mean over judged queries of |relevant ∩ top-k| / |relevant|.
inline double recall_at_k(const std::vector<RankedList>& run, const Qrels& qrels, size_t k) {
    double total = 0.0;
    size_t judged = 0;
    for (const RankedList& rl : run) {
        auto it = qrels.find(rl.qid);
        if (it == qrels.end() || it->second.empty()) continue;
        ++judged;
        size_t depth = std::min(k, rl.hits.size());
        size_t found = 0;
        for (size_t r = 0; r < depth; ++r) {
            if (it->second.count(rl.hits[r].pid)) ++found;
        }
        total += static_cast<double>(found) / static_cast<double>(it->second.size());
    }
    return judged == 0 ? 0.0 : total / static_cast<double>(judged);
}

struct MetricReport {
    double mrr10 = 0.0;
    double r5 = 0.0;
    double r20 = 0.0;
    double r100 = 0.0;
    double r1000 = 0.0;
    size_t evaluated = 0;  // judged queries
    size_t skipped = 0;    // queries with no judgments
};

inline MetricReport evaluate_run(const std::vector<RankedList>& run, const Qrels& qrels) {
    MetricReport rep;
    rep.mrr10 = mrr_at_k(run, qrels, 10);
    rep.r5 = recall_at_k(run, qrels, 5);
    rep.r20 = recall_at_k(run, qrels, 20);
    rep.r100 = recall_at_k(run, qrels, 100);
    rep.r1000 = recall_at_k(run, qrels, 1000);
    for (const RankedList& rl : run) {
        auto it = qrels.find(rl.qid);
        if (it == qrels.end() || it->second.empty()) ++rep.skipped;
        else ++rep.evaluated;
    }
    return rep;
}

}  // namespace cocon
