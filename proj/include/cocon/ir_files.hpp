#pragma once

// Retrieval file formats:
//   queries  TSV   qid <TAB> text
//   qrels    TSV   qid <TAB> pid
//   run      TREC  qid Q0 pid rank score tag   (rank from 1, full precision)
//   triples  JSONL {"qid": ..., "pos": ..., "negs": [...]}

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cocon/corpus.hpp"
#include "cocon/metrics.hpp"

namespace cocon {

struct Query {
    std::string qid;
    std::string text;
};

struct TrainingTriple {
    std::string qid;
    std::string pos;
    std::vector<std::string> negs;  // ordered pool

    void validate() const {
        if (negs.empty()) {
            throw DataError("triple for query '" + qid + "' has no negatives");
        }
        for (const auto& n : negs) {
            if (n == pos) {
                throw DataError("triple for query '" + qid + "' lists its positive '" + pos +
                                "' as a negative");
            }
        }
    }
};

inline std::vector<Query> load_queries(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("queries: cannot open " + path);
    std::vector<Query> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) {
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": expected qid<TAB>text, got '" + line + "'");
        }
        out.push_back({line.substr(0, tab), line.substr(tab + 1)});
    }
    return out;
}

inline void save_queries(const std::vector<Query>& queries, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("queries: cannot open " + path);
    for (const auto& q : queries) os << q.qid << '\t' << q.text << '\n';
}

inline Qrels load_qrels(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("qrels: cannot open " + path);
    Qrels out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size()) {
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": expected qid<TAB>pid, got '" + line + "'");
        }
        out[line.substr(0, tab)].insert(line.substr(tab + 1));
    }
    return out;
}

inline void save_qrels(const Qrels& qrels, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("qrels: cannot open " + path);
    for (const auto& [qid, pids] : qrels) {
        for (const auto& pid : pids) os << qid << '\t' << pid << '\n';
    }
}

inline void save_run(const std::vector<RankedList>& run, const std::string& path,
                     const std::string& tag) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("run: cannot open " + path);
    os << std::setprecision(17);
    for (const RankedList& rl : run) {
        for (size_t r = 0; r < rl.hits.size(); ++r) {
            os << rl.qid << " Q0 " << rl.hits[r].pid << ' ' << (r + 1) << ' '
               << rl.hits[r].score << ' ' << tag << '\n';
        }
    }
}

inline std::vector<RankedList> load_run(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("run: cannot open " + path);
    std::vector<RankedList> out;
    std::map<std::string, size_t> slot;  // qid -> index, first-seen order kept
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string qid, q0, pid, tag;
        size_t rank;
        double score;
        if (!(fields >> qid >> q0 >> pid >> rank >> score >> tag) || q0 != "Q0") {
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": expected 'qid Q0 pid rank score tag', got '" + line + "'");
        }
        auto it = slot.find(qid);
        if (it == slot.end()) {
            it = slot.emplace(qid, out.size()).first;
            out.push_back({qid, {}, false});
        }
        out[it->second].hits.push_back({pid, score});
    }
    return out;
}

inline std::vector<TrainingTriple> load_triples(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("triples: cannot open " + path);
    std::vector<TrainingTriple> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.contains("qid") || !j.contains("pos") || !j.contains("negs") ||
            !j["negs"].is_array()) {
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": expected fields qid, pos, negs[]");
        }
        TrainingTriple t;
        t.qid = j["qid"].get<std::string>();
        t.pos = j["pos"].get<std::string>();
        for (const auto& n : j["negs"]) t.negs.push_back(n.get<std::string>());
        try {
            t.validate();
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        out.push_back(std::move(t));
    }
    return out;
}

inline void save_triples(const std::vector<TrainingTriple>& triples, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("triples: cannot open " + path);
    for (const auto& t : triples) {
        nlohmann::json j{{"qid", t.qid}, {"pos", t.pos}, {"negs", t.negs}};
        os << j.dump() << '\n';
    }
}

}  // namespace cocon
