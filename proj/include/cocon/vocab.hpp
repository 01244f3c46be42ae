#pragma once

// Word-level vocabulary and tokenization. Reserved tokens occupy ids 0-4;
// corpus words follow in frequency order. The vocabulary file holds one
// token per line, line number = id - 5.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace cocon {

struct TokenSequence {
    std::vector<size_t> ids;
    std::vector<uint8_t> attention_mask;  // 0 on padding, 1 elsewhere

    size_t length() const { return ids.size(); }
};

inline std::vector<std::string> word_tokenize(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

class Vocabulary {
public:
    static constexpr size_t kCls = 0;
    static constexpr size_t kSep = 1;
    static constexpr size_t kMask = 2;
    static constexpr size_t kPad = 3;
    static constexpr size_t kUnk = 4;
    static constexpr size_t kReserved = 5;

    static const char* reserved_token(size_t id) {
        static const char* names[kReserved] = {"[CLS]", "[SEP]", "[MASK]", "[PAD]", "[UNK]"};
        return names[id];
    }

    Vocabulary() = default;

    // Top-N frequent words across the given texts; ties resolved
    // lexicographically so builds are deterministic.
    static Vocabulary build(const std::vector<std::string>& texts, size_t max_words) {
        std::map<std::string, size_t> freq;
        for (const auto& t : texts) {
            for (auto& w : word_tokenize(t)) ++freq[w];
        }
        std::vector<std::pair<std::string, size_t>> entries(freq.begin(), freq.end());
        std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        if (entries.size() > max_words) entries.resize(max_words);
        std::vector<std::string> words;
        words.reserve(entries.size());
        for (auto& [w, c] : entries) words.push_back(w);
        return from_words(std::move(words));
    }

    static Vocabulary from_words(std::vector<std::string> words) {
        Vocabulary v;
        v.words_ = std::move(words);
        for (size_t i = 0; i < v.words_.size(); ++i) {
            auto [it, fresh] = v.index_.emplace(v.words_[i], kReserved + i);
            if (!fresh) {
                throw std::invalid_argument("vocabulary: duplicate word '" + v.words_[i] + "'");
            }
        }
        return v;
    }

    size_t size() const { return kReserved + words_.size(); }

    // Case-folded lookup; unknown words map to [UNK].
    size_t id_of(const std::string& word) const {
        std::string folded;
        folded.reserve(word.size());
        for (unsigned char c : word) folded.push_back(static_cast<char>(std::tolower(c)));
        auto it = index_.find(folded);
        return it == index_.end() ? kUnk : it->second;
    }

    const std::string& token(size_t id) const {
        if (id < kReserved) {
            static const std::string reserved[kReserved] = {"[CLS]", "[SEP]", "[MASK]",
                                                            "[PAD]", "[UNK]"};
            return reserved[id];
        }
        if (id - kReserved >= words_.size()) {
            throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
        }
        return words_[id - kReserved];
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("vocabulary: cannot open " + path);
        for (const auto& w : words_) os << w << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("vocabulary: cannot open " + path);
        std::vector<std::string> words;
        std::string line;
        while (std::getline(is, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
            if (!line.empty()) words.push_back(line);
        }
        return from_words(std::move(words));
    }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, size_t> index_;
};

// [CLS]-prefixed id sequence from raw text, truncated to max_len. Padding
// is opt-in; training paths run unpadded and let attention masks handle
// mixed-length evaluation.
inline TokenSequence tokenize(const std::string& text, const Vocabulary& vocab,
                              size_t max_len, bool pad_to_max = false) {
    if (max_len == 0) throw std::invalid_argument("tokenize: max_len must be positive");
    TokenSequence seq;
    seq.ids.push_back(Vocabulary::kCls);
    for (const auto& w : word_tokenize(text)) {
        if (seq.ids.size() >= max_len) break;
        seq.ids.push_back(vocab.id_of(w));
    }
    seq.attention_mask.assign(seq.ids.size(), 1);
    if (pad_to_max) {
        while (seq.ids.size() < max_len) {
            seq.ids.push_back(Vocabulary::kPad);
            seq.attention_mask.push_back(0);
        }
    }
    return seq;
}

// Same preparation for an already-tokenized span of ids.
inline TokenSequence sequence_from_ids(const std::vector<size_t>& span_ids, size_t max_len) {
    TokenSequence seq;
    seq.ids.push_back(Vocabulary::kCls);
    for (size_t id : span_ids) {
        if (seq.ids.size() >= max_len) break;
        seq.ids.push_back(id);
    }
    seq.attention_mask.assign(seq.ids.size(), 1);
    return seq;
}

}  // namespace cocon
