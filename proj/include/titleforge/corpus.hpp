#pragma once

#include <cctype>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "titleforge/prng.hpp"
#include "titleforge/text.hpp"

namespace titleforge {

/// Marker appended between an abstract and its category tags.
inline constexpr const char* kDomainMarker = "@domain:";

/// One arXiv category tag, e.g. "math.AT" or "astro-ph".
struct DomainTag {
    std::string value;

    /// Alphanumeric segments joined by '.' or '-'.
    static bool valid(std::string_view v) {
        if (v.empty()) return false;
        bool in_segment = false;
        for (char c : v) {
            if (std::isalnum(static_cast<unsigned char>(c))) {
                in_segment = true;
            } else if (c == '.' || c == '-') {
                if (!in_segment) return false;
                in_segment = false;
            } else {
                return false;
            }
        }
        return in_segment;
    }
};

/// One metadata entry: id, title (target), abstract (input), category tags.
struct PaperRecord {
    std::string id;
    std::string title;     // normalized
    std::string abstract;  // normalized
    std::vector<DomainTag> categories;
};

/// Source/target text pair in model input format.
struct FormattedPair {
    std::string source_text;
    std::string target_text;
    bool with_domain = false;
};

struct ParseIssue {
    std::size_t line_number = 0;  // 1-based
    std::string reason;
};

enum class ErrorPolicy { Skip, Abort };

struct ParseResult {
    std::vector<PaperRecord> records;
    std::vector<ParseIssue> errors;
    bool aborted = false;
};

struct ParseLimits {
    std::size_t max_title_chars = 500;
    std::size_t max_abstract_chars = 20000;
};

namespace detail {

inline bool get_string_field(const nlohmann::json& j, const char* key, std::string& out,
                             std::string& reason) {
    auto it = j.find(key);
    if (it == j.end()) {
        reason = std::string("missing field '") + key + "'";
        return false;
    }
    if (!it->is_string()) {
        reason = std::string("field '") + key + "' is not a string";
        return false;
    }
    out = it->get<std::string>();
    return true;
}

}  // namespace detail

/// Parse one line of the metadata dump into a record. Returns false and fills
/// `reason` on any malformed input.
inline bool parse_metadata_line(std::string_view line, PaperRecord& rec, std::string& reason,
                                const ParseLimits& limits = {}) {
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        reason = "not a JSON object";
        return false;
    }
    std::string id, title, abstract, categories;
    if (!detail::get_string_field(j, "id", id, reason)) return false;
    if (!detail::get_string_field(j, "title", title, reason)) return false;
    if (!detail::get_string_field(j, "abstract", abstract, reason)) return false;
    if (!detail::get_string_field(j, "categories", categories, reason)) return false;

    rec.id = id;
    rec.title = normalize_text(title);
    rec.abstract = normalize_text(abstract);
    if (rec.id.empty()) {
        reason = "empty id";
        return false;
    }
    if (rec.title.empty()) {
        reason = "empty title";
        return false;
    }
    if (rec.abstract.empty()) {
        reason = "empty abstract";
        return false;
    }
    if (rec.title.size() > limits.max_title_chars) {
        reason = "title longer than " + std::to_string(limits.max_title_chars) + " characters";
        return false;
    }
    if (rec.abstract.size() > limits.max_abstract_chars) {
        reason = "abstract longer than " + std::to_string(limits.max_abstract_chars) + " characters";
        return false;
    }
    rec.categories.clear();
    for (const auto& tag : split_words(normalize_text(categories))) {
        if (!DomainTag::valid(tag)) {
            reason = "invalid category tag '" + tag + "'";
            return false;
        }
        rec.categories.push_back(DomainTag{tag});
    }
    if (rec.categories.empty()) {
        reason = "empty categories";
        return false;
    }
    return true;
}

/// Parse a line-delimited JSON metadata stream. Every input line is accounted
/// for exactly once: it either yields a record or an error entry. Under
/// ErrorPolicy::Abort parsing halts at the first bad line.
inline ParseResult parse_metadata(std::istream& in, ErrorPolicy policy = ErrorPolicy::Skip,
                                  const ParseLimits& limits = {}) {
    ParseResult result;
    std::unordered_set<std::string> seen_ids;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        PaperRecord rec;
        std::string reason;
        bool ok = parse_metadata_line(line, rec, reason, limits);
        if (ok && !seen_ids.insert(rec.id).second) {
            ok = false;
            reason = "duplicate id '" + rec.id + "'";
        }
        if (ok) {
            result.records.push_back(std::move(rec));
        } else {
            result.errors.push_back({line_number, reason});
            if (policy == ErrorPolicy::Abort) {
                result.aborted = true;
                return result;
            }
        }
    }
    if (in.bad()) throw std::runtime_error("metadata stream read failure");
    return result;
}

/// Build the model-facing pair: "<prefix>: <abstract>" plus, when requested,
/// the trailing " @domain: tag1 tag2 ..." control suffix.
inline FormattedPair format_source(const PaperRecord& rec, const std::string& prefix,
                                   bool with_domain) {
    FormattedPair pair;
    pair.with_domain = with_domain;
    pair.source_text = prefix + ": " + rec.abstract;
    if (with_domain) {
        pair.source_text += " ";
        pair.source_text += kDomainMarker;
        for (const auto& tag : rec.categories) {
            pair.source_text += " " + tag.value;
        }
    }
    pair.target_text = rec.title;
    return pair;
}

/// Remove the final " @domain: ..." suffix if present. Inverse of the
/// with_domain=true formatting: the abstract body is untouched.
inline std::string strip_domain_suffix(std::string_view source_text) {
    const std::string needle = std::string(" ") + kDomainMarker + " ";
    std::size_t pos = source_text.rfind(needle);
    if (pos == std::string_view::npos) return std::string(source_text);
    // Suffix must consist solely of valid tags to count as a control marker.
    std::string_view tail = source_text.substr(pos + needle.size());
    for (const auto& word : split_words(tail)) {
        if (!DomainTag::valid(word)) return std::string(source_text);
    }
    return std::string(source_text.substr(0, pos));
}

struct DatasetSplit {
    std::vector<PaperRecord> train;
    std::vector<PaperRecord> validation;
    std::uint64_t seed = 0;
    double ratio = 0.9;
};

/// Deterministic shuffled split: |train| = floor(ratio * N).
inline DatasetSplit split_dataset(const std::vector<PaperRecord>& records, double ratio,
                                  std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must be in (0,1)");
    if (records.empty()) throw std::invalid_argument("cannot split an empty record set");
    std::unordered_set<std::string> ids;
    for (const auto& r : records) {
        if (!ids.insert(r.id).second) throw std::invalid_argument("duplicate record id '" + r.id + "'");
    }
    Prng rng(seed);
    auto order = shuffled_indices(records.size(), rng);
    std::size_t n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(records.size())));
    DatasetSplit split;
    split.seed = seed;
    split.ratio = ratio;
    split.train.reserve(n_train);
    split.validation.reserve(records.size() - n_train);
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_train ? split.train : split.validation).push_back(records[order[i]]);
    }
    return split;
}

/// Pair-file line: tab-separated source and target. Normalization already
/// removed tabs and newlines from both fields.
inline void write_pair_file(std::ostream& out, const std::vector<FormattedPair>& pairs) {
    for (const auto& p : pairs) {
        if (p.source_text.find('\t') != std::string::npos ||
            p.target_text.find('\t') != std::string::npos) {
            throw std::runtime_error("pair fields must not contain tabs");
        }
        out << p.source_text << '\t' << p.target_text << '\n';
    }
}

inline std::vector<FormattedPair> read_pair_file(std::istream& in) {
    std::vector<FormattedPair> pairs;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw std::runtime_error("pair file line " + std::to_string(line_number) +
                                     ": missing tab separator");
        }
        FormattedPair p;
        p.source_text = line.substr(0, tab);
        p.target_text = line.substr(tab + 1);
        p.with_domain = p.source_text.find(std::string(" ") + kDomainMarker + " ") != std::string::npos;
        pairs.push_back(std::move(p));
    }
    return pairs;
}

}  // namespace titleforge
