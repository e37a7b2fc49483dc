#pragma once

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "titleforge/corpus.hpp"
#include "titleforge/text.hpp"

namespace titleforge {

/// Suffix attached to the final character of every word before merging;
/// decode turns it back into a space.
inline constexpr const char* kWordEnd = "▁";
inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kEosToken = "</s>";
inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kUnkRender = "⟨unk⟩";
inline constexpr const char* kBpeFileHeader = "#bpe-v1";

/// Token inventory with dense ids. Reserved tokens sit at the lowest ids:
/// the three control tokens (PAD=0, EOS=1, UNK=2), then any registered
/// category tags, then the `@domain:` marker, which closes the reserved
/// block so files stay self-describing.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kEos = 1;
    static constexpr int kUnk = 2;

    Vocabulary() = default;

    static Vocabulary with_reserved(const std::vector<std::string>& reserved) {
        if (reserved.size() < 3 || reserved[0] != kPadToken || reserved[1] != kEosToken ||
            reserved[2] != kUnkToken) {
            throw std::invalid_argument("reserved list must start with <pad>, </s>, <unk>");
        }
        Vocabulary v;
        for (const auto& tok : reserved) v.add(tok);
        v.reserved_count_ = reserved.size();
        return v;
    }

    static Vocabulary from_tokens(const std::vector<std::string>& tokens,
                                  std::size_t reserved_count) {
        if (reserved_count < 3 || reserved_count > tokens.size()) {
            throw std::invalid_argument("invalid reserved count");
        }
        Vocabulary v = with_reserved({tokens.begin(), tokens.begin() + 3});
        for (std::size_t i = 3; i < tokens.size(); ++i) v.add(tokens[i]);
        v.reserved_count_ = reserved_count;
        return v;
    }

    int add(const std::string& token) {
        auto [it, inserted] = token_to_id_.emplace(token, static_cast<int>(tokens_.size()));
        if (!inserted) throw std::invalid_argument("duplicate token '" + token + "'");
        tokens_.push_back(token);
        return it->second;
    }

    int id(const std::string& token) const {
        auto it = token_to_id_.find(token);
        return it == token_to_id_.end() ? -1 : it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
            throw std::out_of_range("token id " + std::to_string(id) + " out of range");
        }
        return tokens_[static_cast<std::size_t>(id)];
    }

    std::size_t size() const { return tokens_.size(); }
    std::size_t reserved_count() const { return reserved_count_; }

    bool is_reserved(const std::string& token) const {
        int i = id(token);
        return i >= 0 && static_cast<std::size_t>(i) < reserved_count_;
    }

    /// Reserved tokens that match literally in text (everything reserved
    /// except the three control tokens).
    bool is_literal_special(const std::string& token) const {
        int i = id(token);
        return i >= 3 && static_cast<std::size_t>(i) < reserved_count_;
    }

    bool is_literal_special_id(int id) const {
        return id >= 3 && static_cast<std::size_t>(id) < reserved_count_;
    }

    /// Category tags registered at build time (reserved block minus controls
    /// and marker).
    std::vector<std::string> domain_tags() const {
        std::vector<std::string> tags;
        for (std::size_t i = 3; i < reserved_count_; ++i) {
            if (tokens_[i] != kDomainMarker) tags.push_back(tokens_[i]);
        }
        return tags;
    }

    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> token_to_id_;
    std::size_t reserved_count_ = 0;
};

/// Ranked merge list; position in `merges` is the rank.
struct MergeTable {
    std::vector<std::pair<std::string, std::string>> merges;
    std::unordered_map<std::string, std::size_t> rank;  // "left right" -> rank

    void add(const std::string& left, const std::string& right) {
        std::string key = left + " " + right;
        if (!rank.emplace(key, merges.size()).second) {
            throw std::invalid_argument("duplicate merge pair " + key);
        }
        merges.emplace_back(left, right);
    }

    std::size_t lookup(const std::string& left, const std::string& right) const {
        auto it = rank.find(left + " " + right);
        return it == rank.end() ? kNoRank : it->second;
    }

    static constexpr std::size_t kNoRank = static_cast<std::size_t>(-1);
};

struct BpeModel {
    Vocabulary vocab;
    MergeTable merges;
};

/// Standard reserved list for this pipeline: controls, sorted tags, marker.
inline std::vector<std::string> make_reserved_tokens(std::vector<std::string> tags) {
    std::sort(tags.begin(), tags.end());
    tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
    std::vector<std::string> reserved = {kPadToken, kEosToken, kUnkToken};
    reserved.insert(reserved.end(), tags.begin(), tags.end());
    reserved.push_back(kDomainMarker);
    return reserved;
}

namespace detail {

inline std::vector<std::string> word_symbols(const std::string& word) {
    auto symbols = utf8_chars(word);
    if (!symbols.empty()) symbols.back() += kWordEnd;
    return symbols;
}

/// Merge all left-to-right non-overlapping occurrences of (left,right).
inline void apply_merge(std::vector<std::string>& symbols, const std::string& left,
                        const std::string& right) {
    std::vector<std::string> out;
    out.reserve(symbols.size());
    std::size_t i = 0;
    while (i < symbols.size()) {
        if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
            out.push_back(left + right);
            i += 2;
        } else {
            out.push_back(symbols[i]);
            ++i;
        }
    }
    symbols = std::move(out);
}

}  // namespace detail

/// Greedy BPE training: split words, attach word-end markers, then repeatedly
/// merge the most frequent adjacent symbol pair (ties to the lexicographically
/// smallest pair) until the vocabulary reaches `target_vocab_size` or no pair
/// occurs at least twice. Reserved tokens take the lowest ids and are never
/// merge inputs or outputs.
inline BpeModel train_bpe(const std::vector<std::string>& texts, std::size_t target_vocab_size,
                          const std::vector<std::string>& reserved) {
    BpeModel model;
    model.vocab = Vocabulary::with_reserved(reserved);
    std::unordered_set<std::string> reserved_set(reserved.begin(), reserved.end());

    // Word counts; reserved strings never enter the merge corpus.
    std::map<std::string, long long> word_counts;
    for (const auto& text : texts) {
        for (const auto& word : split_words(normalize_text(text))) {
            if (reserved_set.count(word)) continue;
            ++word_counts[word];
        }
    }

    struct WordEntry {
        std::vector<std::string> symbols;
        long long count;
    };
    std::vector<WordEntry> words;
    std::map<std::string, long long> alphabet;  // ordered for deterministic ids
    for (const auto& [word, count] : word_counts) {
        WordEntry e{detail::word_symbols(word), count};
        for (const auto& s : e.symbols) alphabet[s] += count;
        words.push_back(std::move(e));
    }

    if (target_vocab_size < model.vocab.size() + alphabet.size()) {
        throw std::invalid_argument(
            "target_vocab_size " + std::to_string(target_vocab_size) + " cannot hold " +
            std::to_string(model.vocab.size()) + " reserved tokens plus an alphabet of " +
            std::to_string(alphabet.size()));
    }
    for (const auto& [symbol, count] : alphabet) {
        if (!reserved_set.count(symbol)) model.vocab.add(symbol);
    }

    while (model.vocab.size() < target_vocab_size) {
        std::map<std::pair<std::string, std::string>, long long> pair_counts;
        for (const auto& w : words) {
            for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
                pair_counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;
            }
        }
        // Best = highest count, then lexicographically smallest pair; the map
        // iterates in pair order so the first maximum wins ties.
        const std::pair<std::string, std::string>* best = nullptr;
        long long best_count = 0;
        for (const auto& [pair, count] : pair_counts) {
            if (count < 2 || count < best_count) continue;
            if (count > best_count && !reserved_set.count(pair.first + pair.second)) {
                best = &pair;
                best_count = count;
            }
        }
        if (!best) break;
        const auto [left, right] = *best;
        model.merges.add(left, right);
        model.vocab.add(left + right);
        for (auto& w : words) detail::apply_merge(w.symbols, left, right);
    }
    return model;
}

/// Encode normalized text to token ids. Whole words equal to a registered
/// special string map straight to the reserved id; everything else goes
/// through the merge table; symbols outside the training alphabet become UNK.
/// No EOS or PAD is appended.
inline std::vector<int> encode(const std::string& text, const Vocabulary& vocab,
                               const MergeTable& merges) {
    std::vector<int> ids;
    for (const auto& word : split_words(normalize_text(text))) {
        if (vocab.is_literal_special(word)) {
            ids.push_back(vocab.id(word));
            continue;
        }
        auto symbols = detail::word_symbols(word);
        while (symbols.size() > 1) {
            std::size_t best_rank = MergeTable::kNoRank;
            std::size_t best_pos = 0;
            for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
                std::size_t r = merges.lookup(symbols[i], symbols[i + 1]);
                if (r < best_rank) {
                    best_rank = r;
                    best_pos = i;
                }
            }
            if (best_rank == MergeTable::kNoRank) break;
            const std::string left = symbols[best_pos];
            const std::string right = symbols[best_pos + 1];
            detail::apply_merge(symbols, left, right);
        }
        for (const auto& s : symbols) {
            int id = vocab.id(s);
            ids.push_back(id >= 0 && !vocab.is_reserved(s) ? id : Vocabulary::kUnk);
        }
    }
    return ids;
}

/// Inverse of encode over the training alphabet: word-end markers become
/// spaces, PAD and EOS vanish, UNK renders as a visible placeholder.
inline std::string decode(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string out;
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
            throw std::out_of_range("token id " + std::to_string(id) + " out of range");
        }
        if (id == Vocabulary::kPad || id == Vocabulary::kEos) continue;
        if (id == Vocabulary::kUnk) {
            out += kUnkRender;
        } else if (vocab.is_literal_special_id(id)) {
            out += vocab.token(id);
            out += kWordEnd;
        } else {
            out += vocab.token(id);
        }
    }
    // Word-end markers back to single spaces.
    std::string result;
    result.reserve(out.size());
    std::size_t pos = 0;
    const std::string marker = kWordEnd;
    while (pos < out.size()) {
        if (out.compare(pos, marker.size(), marker) == 0) {
            result.push_back(' ');
            pos += marker.size();
        } else {
            result.push_back(out[pos]);
            ++pos;
        }
    }
    while (!result.empty() && result.back() == ' ') result.pop_back();
    return result;
}

inline void save_vocabulary(std::ostream& out, const Vocabulary& vocab) {
    out << kBpeFileHeader << '\n';
    for (const auto& tok : vocab.tokens()) out << tok << '\n';
}

/// The reserved block is everything up to and including the `@domain:`
/// marker (merges can never produce a reserved string, so the marker line is
/// unambiguous). Files without a marker carry only the three control tokens.
inline Vocabulary load_vocabulary(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kBpeFileHeader) {
        throw std::runtime_error("vocabulary file missing " + std::string(kBpeFileHeader) + " header");
    }
    std::vector<std::string> tokens;
    while (std::getline(in, line)) tokens.push_back(line);
    while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
    for (const auto& tok : tokens) {
        if (tok.empty()) throw std::runtime_error("vocabulary file has an empty token line");
    }
    std::size_t reserved = 3;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == kDomainMarker) {
            reserved = i + 1;
            break;
        }
    }
    return Vocabulary::from_tokens(tokens, reserved);
}

inline void save_merges(std::ostream& out, const MergeTable& merges) {
    out << kBpeFileHeader << '\n';
    for (const auto& [left, right] : merges.merges) out << left << ' ' << right << '\n';
}

inline MergeTable load_merges(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kBpeFileHeader) {
        throw std::runtime_error("merge file missing " + std::string(kBpeFileHeader) + " header");
    }
    MergeTable table;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t space = line.find(' ');
        if (space == std::string::npos) {
            throw std::runtime_error("merge line missing separator: " + line);
        }
        table.add(line.substr(0, space), line.substr(space + 1));
    }
    return table;
}

}  // namespace titleforge
