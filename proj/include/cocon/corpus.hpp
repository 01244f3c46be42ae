#pragma once

// Corpus ingestion. The corpus file is JSON lines, one object per line with
// string fields "id" and "text". Malformed lines are reported with their
// line number.

#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "cocon/vocab.hpp"

namespace cocon {

struct Document {
    std::string id;
    std::string text;
    std::vector<size_t> token_ids;  // post-tokenization, no CLS
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::vector<Document> load_corpus(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("corpus: cannot open " + path);
    std::vector<Document> docs;
    std::unordered_set<std::string> seen;
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
        if (!j.contains("id") || !j.contains("text") || !j["id"].is_string() ||
            !j["text"].is_string()) {
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": expected string fields \"id\" and \"text\"");
        }
        Document d;
        d.id = j["id"].get<std::string>();
        d.text = j["text"].get<std::string>();
        if (!seen.insert(d.id).second) {
            throw DataError(path + ":" + std::to_string(lineno) + ": duplicate id '" + d.id + "'");
        }
        docs.push_back(std::move(d));
    }
    return docs;
}

inline void save_corpus(const std::vector<Document>& docs, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("corpus: cannot open " + path);
    for (const auto& d : docs) {
        nlohmann::json j{{"id", d.id}, {"text", d.text}};
        os << j.dump() << '\n';
    }
}

inline void tokenize_documents(std::vector<Document>& docs, const Vocabulary& vocab) {
    for (auto& d : docs) {
        d.token_ids.clear();
        for (const auto& w : word_tokenize(d.text)) d.token_ids.push_back(vocab.id_of(w));
    }
}

// Pre-training eligibility: a document must fit two minimum-length spans.
// Returns the eligible subset and the number excluded.
inline std::pair<std::vector<Document>, size_t>
filter_eligible(const std::vector<Document>& docs, size_t min_span_len) {
    std::vector<Document> kept;
    size_t excluded = 0;
    for (const auto& d : docs) {
        if (d.token_ids.size() >= 2 * min_span_len) kept.push_back(d);
        else ++excluded;
    }
    return {std::move(kept), excluded};
}

}  // namespace cocon
