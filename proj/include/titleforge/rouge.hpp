#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace titleforge {

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

inline RougeScore make_rouge_score(double precision, double recall) {
    RougeScore s;
    s.precision = precision;
    s.recall = recall;
    s.f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    return s;
}

/// Lowercase and split on runs of non-alphanumeric characters.
inline std::vector<std::string> rouge_tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

/// Clipped n-gram overlap. Precision over candidate n-grams, recall over
/// reference n-grams; empty denominators give 0 rather than an error.
inline RougeScore rouge_n(const std::vector<std::string>& candidate,
                          const std::vector<std::string>& reference, std::size_t n) {
    if (n < 1) throw std::invalid_argument("rouge_n needs n >= 1");
    auto ngrams = [n](const std::vector<std::string>& tokens) {
        std::map<std::vector<std::string>, std::size_t> counts;
        if (tokens.size() >= n) {
            for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
                counts[{tokens.begin() + i, tokens.begin() + i + n}] += 1;
            }
        }
        return counts;
    };
    const auto cand = ngrams(candidate);
    const auto ref = ngrams(reference);
    std::size_t cand_total = 0, ref_total = 0, overlap = 0;
    for (const auto& [g, c] : cand) cand_total += c;
    for (const auto& [g, c] : ref) ref_total += c;
    for (const auto& [g, c] : cand) {
        auto it = ref.find(g);
        if (it != ref.end()) overlap += std::min(c, it->second);
    }
    const double p = cand_total ? static_cast<double>(overlap) / cand_total : 0.0;
    const double r = ref_total ? static_cast<double>(overlap) / ref_total : 0.0;
    return make_rouge_score(p, r);
}

/// Longest common subsequence length via the standard DP table.
inline std::size_t lcs_length(const std::vector<std::string>& a,
                              const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline RougeScore rouge_l(const std::vector<std::string>& candidate,
                          const std::vector<std::string>& reference) {
    const std::size_t l = lcs_length(candidate, reference);
    const double p = candidate.empty() ? 0.0 : static_cast<double>(l) / candidate.size();
    const double r = reference.empty() ? 0.0 : static_cast<double>(l) / reference.size();
    return make_rouge_score(p, r);
}

struct CorpusRougeReport {
    double rouge1 = 0.0;  // mean F1 x 100
    double rougeL = 0.0;
    std::size_t n_examples = 0;
};

/// Mean per-pair F1, scaled to [0,100]. Summation order is the input order so
/// results are bit-reproducible.
inline CorpusRougeReport corpus_rouge(
    const std::vector<std::pair<std::string, std::string>>& generated_reference) {
    if (generated_reference.empty()) throw std::invalid_argument("corpus_rouge needs >= 1 pair");
    double sum1 = 0.0, sumL = 0.0;
    for (const auto& [gen, ref] : generated_reference) {
        const auto c = rouge_tokenize(gen);
        const auto r = rouge_tokenize(ref);
        sum1 += rouge_n(c, r, 1).f1;
        sumL += rouge_l(c, r).f1;
    }
    CorpusRougeReport report;
    report.n_examples = generated_reference.size();
    report.rouge1 = 100.0 * sum1 / static_cast<double>(report.n_examples);
    report.rougeL = 100.0 * sumL / static_cast<double>(report.n_examples);
    return report;
}

}  // namespace titleforge
