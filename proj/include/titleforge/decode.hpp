#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "titleforge/model.hpp"
#include "titleforge/tokenizer.hpp"

namespace titleforge {

struct DecodeConfig {
    std::size_t beam_size = 4;
    std::size_t max_target_len = 20;
    double length_alpha = 0.0;  // 0 = rank by raw cumulative log-probability

    void validate() const {
        if (beam_size < 1 || max_target_len < 1 || length_alpha < 0.0) {
            throw std::invalid_argument("invalid decode config");
        }
    }
};

/// Partial or complete decoded sequence. finished implies the last token is
/// EOS; hypotheses cut off at max_target_len stay unfinished but still rank.
struct BeamHypothesis {
    std::vector<int> token_ids;  // excludes the decoder start token
    double cum_log_prob = 0.0;
    bool finished = false;
};

inline double rank_score(const BeamHypothesis& h, double length_alpha) {
    if (length_alpha == 0.0) return h.cum_log_prob;
    const double len = static_cast<double>(std::max<std::size_t>(1, h.token_ids.size()));
    return h.cum_log_prob / std::pow(len, length_alpha);
}

/// Deterministic ordering: higher score, then shorter, then lexicographically
/// smaller token sequence.
inline bool hypothesis_better(const BeamHypothesis& a, const BeamHypothesis& b,
                              double length_alpha) {
    const double sa = rank_score(a, length_alpha);
    const double sb = rank_score(b, length_alpha);
    if (sa != sb) return sa > sb;
    if (a.token_ids.size() != b.token_ids.size()) return a.token_ids.size() < b.token_ids.size();
    return a.token_ids < b.token_ids;
}

namespace detail {

inline std::vector<double> next_token_log_probs(const std::vector<int>& generated,
                                                const Tensor& encoder_output,
                                                const std::vector<bool>& source_pad,
                                                const ModelParameters& params,
                                                const ModelConfig& cfg) {
    // Full recompute per step: decoder input is PAD followed by everything
    // generated so far.
    std::vector<int> dec_in;
    dec_in.reserve(generated.size() + 1);
    dec_in.push_back(Vocabulary::kPad);
    dec_in.insert(dec_in.end(), generated.begin(), generated.end());
    std::vector<bool> dec_pad(dec_in.size(), false);
    Tensor logits = decoder_forward(dec_in, dec_pad, encoder_output, source_pad, params, cfg);
    std::vector<double> row(logits.cols());
    for (std::size_t j = 0; j < logits.cols(); ++j) row[j] = logits(logits.rows() - 1, j);
    return log_softmax_row(row);
}

}  // namespace detail

/// Argmax decoding; stops on EOS or at max_target_len. Ties break toward the
/// lower token id.
inline std::vector<int> greedy_decode(const ModelParameters& params, const ModelConfig& cfg,
                                      const std::vector<int>& source_ids,
                                      const DecodeConfig& dcfg) {
    dcfg.validate();
    if (source_ids.empty()) throw std::invalid_argument("empty source");
    const std::vector<bool> source_pad(source_ids.size(), false);
    const Tensor encoder_output = encoder_forward(source_ids, source_pad, params, cfg);

    std::vector<int> generated;
    for (std::size_t step = 0; step < dcfg.max_target_len; ++step) {
        const auto logp =
            detail::next_token_log_probs(generated, encoder_output, source_pad, params, cfg);
        std::size_t best = 0;
        for (std::size_t j = 1; j < logp.size(); ++j) {
            if (logp[j] > logp[best]) best = j;
        }
        generated.push_back(static_cast<int>(best));
        if (static_cast<int>(best) == Vocabulary::kEos) break;
    }
    return generated;
}

struct BeamSearchResult {
    BeamHypothesis best;
    std::vector<BeamHypothesis> pool;  // final hypotheses, ranked best first
};

/// Standard beam search over the full vocabulary. Hypotheses that emit EOS
/// move to a finished pool; the search stops once no live hypothesis can
/// still beat the kept finished ones, or at max_target_len, where live
/// hypotheses force-finish. Final ranking divides the cumulative
/// log-probability by max(1,length)^length_alpha.
inline BeamSearchResult beam_search(const ModelParameters& params, const ModelConfig& cfg,
                                    const std::vector<int>& source_ids, const DecodeConfig& dcfg) {
    dcfg.validate();
    if (source_ids.empty()) throw std::invalid_argument("empty source");
    const std::vector<bool> source_pad(source_ids.size(), false);
    const Tensor encoder_output = encoder_forward(source_ids, source_pad, params, cfg);

    auto better_live = [&](const BeamHypothesis& a, const BeamHypothesis& b) {
        if (a.cum_log_prob != b.cum_log_prob) return a.cum_log_prob > b.cum_log_prob;
        if (a.token_ids.size() != b.token_ids.size()) return a.token_ids.size() < b.token_ids.size();
        return a.token_ids < b.token_ids;
    };
    auto better_final = [&](const BeamHypothesis& a, const BeamHypothesis& b) {
        return hypothesis_better(a, b, dcfg.length_alpha);
    };

    std::vector<BeamHypothesis> live{BeamHypothesis{}};
    std::vector<BeamHypothesis> pool;
    const double final_len_norm =
        std::pow(static_cast<double>(std::max<std::size_t>(1, dcfg.max_target_len)),
                 dcfg.length_alpha);

    for (std::size_t step = 0; step < dcfg.max_target_len && !live.empty(); ++step) {
        std::vector<BeamHypothesis> candidates;
        candidates.reserve(live.size() * cfg.vocab_size);
        for (const auto& hyp : live) {
            const auto logp = detail::next_token_log_probs(hyp.token_ids, encoder_output,
                                                           source_pad, params, cfg);
            for (std::size_t v = 0; v < logp.size(); ++v) {
                BeamHypothesis next = hyp;
                next.token_ids.push_back(static_cast<int>(v));
                next.cum_log_prob += logp[v];
                candidates.push_back(std::move(next));
            }
        }
        std::sort(candidates.begin(), candidates.end(), better_live);
        std::vector<BeamHypothesis> next_live;
        for (auto& c : candidates) {
            if (c.token_ids.back() == Vocabulary::kEos) {
                c.finished = true;
                pool.push_back(std::move(c));
            } else if (next_live.size() < dcfg.beam_size) {
                next_live.push_back(std::move(c));
            }
        }
        live = std::move(next_live);
        std::sort(pool.begin(), pool.end(), better_final);
        if (pool.size() > dcfg.beam_size) pool.resize(dcfg.beam_size);

        // Admissible stop: scores only fall as hypotheses grow, so the best a
        // live hypothesis can reach is its current sum over the largest
        // length normalizer.
        if (pool.size() >= dcfg.beam_size && !live.empty()) {
            double best_possible = -std::numeric_limits<double>::infinity();
            for (const auto& h : live) {
                const double bound =
                    h.cum_log_prob <= 0.0 ? h.cum_log_prob / final_len_norm : h.cum_log_prob;
                best_possible = std::max(best_possible, bound);
            }
            if (best_possible <= rank_score(pool.back(), dcfg.length_alpha)) live.clear();
        }
    }
    // Anything still live at the cap force-finishes without EOS.
    for (auto& h : live) pool.push_back(std::move(h));
    std::sort(pool.begin(), pool.end(), better_final);
    if (pool.empty()) throw std::runtime_error("beam search produced no hypotheses");
    BeamSearchResult result;
    result.best = pool.front();
    result.pool = std::move(pool);
    return result;
}

}  // namespace titleforge
