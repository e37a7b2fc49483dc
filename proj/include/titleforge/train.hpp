#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "titleforge/corpus.hpp"
#include "titleforge/model.hpp"
#include "titleforge/prng.hpp"
#include "titleforge/tokenizer.hpp"

namespace titleforge {

// ---------------------------------------------------------------------------
// Examples and batching
// ---------------------------------------------------------------------------

/// One tokenized pair, EOS-terminated on both sides.
struct TrainingExample {
    std::vector<int> source_ids;
    std::vector<int> target_ids;
    bool domain_included = false;
};

/// Tokenize a source text, EOS-terminated. Long sources are truncated from
/// the end of the abstract segment, but a trailing domain suffix is always
/// retained: the control tag must survive truncation to do its job. With
/// with_domain false the suffix is stripped before encoding.
inline std::vector<int> encode_source_ids(const std::string& source_text, const Vocabulary& vocab,
                                          const MergeTable& merges, std::size_t max_source_len,
                                          bool with_domain, bool* domain_included = nullptr) {
    if (max_source_len < 2) throw std::invalid_argument("max_source_len too small");
    const std::string source = with_domain ? source_text : strip_domain_suffix(source_text);
    std::vector<int> ids = encode(source, vocab, merges);

    const int marker_id = vocab.id(kDomainMarker);
    std::size_t suffix_start = ids.size();
    if (with_domain && marker_id >= 0) {
        for (std::size_t i = ids.size(); i-- > 0;) {
            if (ids[i] == marker_id) {
                suffix_start = i;
                break;
            }
        }
    }
    if (domain_included) *domain_included = suffix_start < ids.size();

    std::vector<int> head(ids.begin(), ids.begin() + suffix_start);
    std::vector<int> tail(ids.begin() + suffix_start, ids.end());
    if (tail.size() + 1 > max_source_len) {
        // Degenerate: the suffix alone does not fit; keep its head.
        tail.resize(max_source_len - 1);
        head.clear();
    }
    const std::size_t head_budget = max_source_len - 1 - tail.size();
    if (head.size() > head_budget) head.resize(head_budget);
    std::vector<int> out = std::move(head);
    out.insert(out.end(), tail.begin(), tail.end());
    out.push_back(Vocabulary::kEos);
    return out;
}

inline TrainingExample make_training_example(const FormattedPair& pair, const Vocabulary& vocab,
                                             const MergeTable& merges, std::size_t max_source_len,
                                             std::size_t max_target_len, bool with_domain) {
    if (max_target_len < 1) throw std::invalid_argument("max_target_len too small");
    TrainingExample ex;
    ex.source_ids = encode_source_ids(pair.source_text, vocab, merges, max_source_len,
                                      with_domain, &ex.domain_included);
    ex.target_ids = encode(pair.target_text, vocab, merges);
    if (ex.target_ids.size() > max_target_len - 1) ex.target_ids.resize(max_target_len - 1);
    ex.target_ids.push_back(Vocabulary::kEos);
    return ex;
}

inline std::vector<TrainingExample> build_examples(const std::vector<FormattedPair>& pairs,
                                                   const Vocabulary& vocab,
                                                   const MergeTable& merges,
                                                   std::size_t max_source_len,
                                                   std::size_t max_target_len, bool with_domain) {
    std::vector<TrainingExample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        out.push_back(
            make_training_example(p, vocab, merges, max_source_len, max_target_len, with_domain));
    }
    return out;
}

struct PaddedSequence {
    std::vector<int> ids;
    std::vector<bool> pad;
};

inline PaddedSequence pad_to(const std::vector<int>& ids, std::size_t length) {
    PaddedSequence s;
    s.ids = ids;
    s.ids.resize(length, Vocabulary::kPad);
    s.pad.assign(length, false);
    for (std::size_t i = ids.size(); i < length; ++i) s.pad[i] = true;
    return s;
}

/// Decoder input is the target shifted right with PAD as the start token.
inline std::vector<int> shift_right(const std::vector<int>& target_ids) {
    std::vector<int> in(target_ids.size());
    in[0] = Vocabulary::kPad;
    for (std::size_t i = 1; i < target_ids.size(); ++i) in[i] = target_ids[i - 1];
    return in;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct NllResult {
    double loss = 0.0;                        // mean over non-PAD positions
    double total = 0.0;                       // sum over non-PAD positions
    std::size_t token_count = 0;
    std::vector<double> token_log_probs;      // 0 at PAD positions
};

/// Token-level negative log-likelihood, averaged over non-PAD positions.
inline NllResult nll_loss(const Tensor& logits, const std::vector<int>& target_ids,
                          const std::vector<bool>& pad_mask) {
    if (logits.rows() != target_ids.size() || target_ids.size() != pad_mask.size()) {
        throw std::invalid_argument("nll_loss shape mismatch");
    }
    NllResult r;
    r.token_log_probs.assign(target_ids.size(), 0.0);
    const Tensor logp = log_softmax(logits);
    for (std::size_t t = 0; t < target_ids.size(); ++t) {
        if (pad_mask[t]) continue;
        const int y = target_ids[t];
        if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
            throw std::out_of_range("target id out of vocabulary");
        }
        r.token_log_probs[t] = logp(t, static_cast<std::size_t>(y));
        r.total -= r.token_log_probs[t];
        ++r.token_count;
    }
    if (r.token_count == 0) throw std::invalid_argument("all positions masked in nll_loss");
    r.loss = r.total / static_cast<double>(r.token_count);
    return r;
}

/// d(loss)/d(logits) for the summed NLL scaled by `scale`
/// (use scale = 1/token_count for the mean).
inline Tensor nll_loss_grad(const Tensor& logits, const std::vector<int>& target_ids,
                            const std::vector<bool>& pad_mask, double scale) {
    Tensor grad(logits.rows(), logits.cols());
    for (std::size_t t = 0; t < target_ids.size(); ++t) {
        if (pad_mask[t]) continue;
        double max_v = logits(t, 0);
        for (std::size_t j = 1; j < logits.cols(); ++j) max_v = std::max(max_v, logits(t, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) sum += std::exp(logits(t, j) - max_v);
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            grad(t, j) = std::exp(logits(t, j) - max_v) / sum * scale;
        }
        grad(t, static_cast<std::size_t>(target_ids[t])) -= scale;
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

namespace detail {

/// Backward of norm_rows. Adds into dx_accum and dscale_accum.
inline void norm_rows_backward(const NormTrace& tr, const Tensor& scale, const Tensor& d_out,
                               Tensor& dx_accum, Tensor& dscale_accum) {
    const std::size_t n = tr.input.rows(), d = tr.input.cols();
    for (std::size_t i = 0; i < n; ++i) {
        const double r = tr.inv_rms[i];
        double dot = 0.0;  // sum_j d_out[i,j] * scale[j] * x[i,j]
        for (std::size_t j = 0; j < d; ++j) {
            dscale_accum[j] += d_out(i, j) * tr.input(i, j) * r;
            dot += d_out(i, j) * scale[j] * tr.input(i, j);
        }
        const double k = dot * r * r * r / static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
            dx_accum(i, j) += d_out(i, j) * scale[j] * r - tr.input(i, j) * k;
        }
    }
}

enum class BiasMode { None, Bidirectional, Unidirectional };

/// Backward of the attention op. Outputs dq/dk/dv (full width) and adds into
/// the wo gradient and, when a relative bias was applied, the shared table.
inline void attention_backward(const AttnTrace& tr, const Tensor& wo, const Tensor& d_out,
                               std::size_t num_heads, bool scaled, const ModelConfig& cfg,
                               BiasMode bias_mode, Tensor& dq, Tensor& dk, Tensor& dv,
                               Tensor& dwo_accum, Tensor* dbias_table) {
    const std::size_t nq = tr.q.rows(), nk = tr.k.rows(), d = tr.q.cols();
    const std::size_t dh = d / num_heads;
    const double scale = scaled ? 1.0 / std::sqrt(static_cast<double>(dh)) : 1.0;

    add_inplace(dwo_accum, matmul_at(tr.context, d_out));
    const Tensor d_context = matmul_bt(d_out, wo);

    dq = Tensor(nq, d);
    dk = Tensor(nk, d);
    dv = Tensor(nk, d);
    for (std::size_t h = 0; h < num_heads; ++h) {
        const std::size_t off = h * dh;
        const Tensor& probs = tr.probs[h];
        // d_probs = d_context_h @ v_h^T ; dv_h = probs^T @ d_context_h
        Tensor d_probs(nq, nk);
        for (std::size_t i = 0; i < nq; ++i) {
            for (std::size_t j = 0; j < nk; ++j) {
                double acc = 0.0;
                for (std::size_t p = 0; p < dh; ++p) {
                    acc += d_context(i, off + p) * tr.v(j, off + p);
                }
                d_probs(i, j) = acc;
            }
        }
        for (std::size_t j = 0; j < nk; ++j) {
            for (std::size_t i = 0; i < nq; ++i) {
                const double w = probs(i, j);
                if (w == 0.0) continue;
                for (std::size_t p = 0; p < dh; ++p) {
                    dv(j, off + p) += w * d_context(i, off + p);
                }
            }
        }
        // Softmax backward: d_scores = probs * (d_probs - rowsum(d_probs * probs)).
        Tensor d_scores(nq, nk);
        for (std::size_t i = 0; i < nq; ++i) {
            double row_dot = 0.0;
            for (std::size_t j = 0; j < nk; ++j) row_dot += d_probs(i, j) * probs(i, j);
            for (std::size_t j = 0; j < nk; ++j) {
                d_scores(i, j) = probs(i, j) * (d_probs(i, j) - row_dot);
            }
        }
        if (dbias_table && bias_mode != BiasMode::None) {
            for (std::size_t i = 0; i < nq; ++i) {
                for (std::size_t j = 0; j < nk; ++j) {
                    const double g = d_scores(i, j);
                    if (g == 0.0) continue;
                    const int b = relative_position_bucket(
                        static_cast<long long>(j) - static_cast<long long>(i),
                        bias_mode == BiasMode::Bidirectional,
                        static_cast<int>(cfg.num_position_buckets),
                        static_cast<int>(cfg.max_relative_distance));
                    (*dbias_table)(h, static_cast<std::size_t>(b)) += g;
                }
            }
        }
        // dq_h = d_scores @ k_h * scale ; dk_h = d_scores^T @ q_h * scale
        for (std::size_t i = 0; i < nq; ++i) {
            for (std::size_t j = 0; j < nk; ++j) {
                const double g = d_scores(i, j) * scale;
                if (g == 0.0) continue;
                for (std::size_t p = 0; p < dh; ++p) {
                    dq(i, off + p) += g * tr.k(j, off + p);
                    dk(j, off + p) += g * tr.q(i, off + p);
                }
            }
        }
    }
}

inline void apply_mask_grad(Tensor& grad, const Tensor& mask) {
    if (mask.size() == 0) return;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= mask[i];
}

/// Backward of feed_forward; adds the norm-input contribution into dx_accum.
inline void feed_forward_backward(const NormTrace& norm_tr, const FfTrace& ff_tr,
                                  const Tensor& norm_scale, const Tensor& w_in,
                                  const Tensor& w_out, const Tensor& d_out, Tensor& dx_accum,
                                  Tensor& d_norm_scale, Tensor& d_w_in, Tensor& d_w_out) {
    add_inplace(d_w_out, matmul_at(ff_tr.act, d_out));
    Tensor d_act = matmul_bt(d_out, w_out);
    for (std::size_t i = 0; i < d_act.size(); ++i) {
        if (ff_tr.pre_act[i] <= 0.0) d_act[i] = 0.0;
    }
    add_inplace(d_w_in, matmul_at(norm_tr.normed, d_act));
    Tensor d_normed = matmul_bt(d_act, w_in);
    norm_rows_backward(norm_tr, norm_scale, d_normed, dx_accum, d_norm_scale);
}

}  // namespace detail

struct ForwardPass {
    PaddedSequence source;
    PaddedSequence target_in;
    std::vector<int> target_ids;          // padded, EOS-terminated
    std::vector<bool> target_loss_mask;   // true at PAD positions
    EncoderTrace enc_trace;
    DecoderTrace dec_trace;
    Tensor encoder_output;
    Tensor logits;
};

/// Teacher-forced forward over one example padded to the given lengths.
inline ForwardPass model_forward(const TrainingExample& ex, std::size_t src_len,
                                 std::size_t tgt_len, const ModelParameters& params,
                                 const ModelConfig& cfg, Prng* dropout_rng = nullptr) {
    ForwardPass fp;
    fp.source = pad_to(ex.source_ids, src_len);
    PaddedSequence tgt = pad_to(ex.target_ids, tgt_len);
    fp.target_ids = tgt.ids;
    fp.target_loss_mask = tgt.pad;
    fp.target_in.ids = shift_right(tgt.ids);
    // Position i predicts target[i]; positions past the real target are pad
    // keys. The start position is a real key even though its id is PAD.
    fp.target_in.pad = tgt.pad;

    fp.encoder_output = encoder_forward(fp.source.ids, fp.source.pad, params, cfg, &fp.enc_trace,
                                        dropout_rng);
    fp.logits = decoder_forward(fp.target_in.ids, fp.target_in.pad, fp.encoder_output,
                                fp.source.pad, params, cfg, &fp.dec_trace, dropout_rng);
    return fp;
}

/// Reverse-mode gradients for every parameter tensor. The tied embedding
/// accumulates from the output projection and from both input lookups.
inline void model_backward(const ForwardPass& fp, const Tensor& d_logits,
                           const ModelParameters& params, const ModelConfig& cfg,
                           ModelParameters& grads) {
    using detail::BiasMode;
    const double out_scale =
        cfg.scaled_tied_logits ? 1.0 / std::sqrt(static_cast<double>(cfg.d_model)) : 1.0;

    // logits = hidden @ E^T * out_scale
    Tensor d_hidden = matmul(d_logits, params.embedding);
    scale_inplace(d_hidden, out_scale);
    {
        Tensor d_emb_out = matmul_at(d_logits, fp.dec_trace.final_hidden);
        scale_inplace(d_emb_out, out_scale);
        add_inplace(grads.embedding, d_emb_out);
    }

    const std::size_t tgt_len = fp.target_in.ids.size();
    const std::size_t src_len = fp.source.ids.size();
    Tensor dx(tgt_len, cfg.d_model);
    detail::norm_rows_backward(fp.dec_trace.final_norm, params.decoder_final_norm, d_hidden, dx,
                               grads.decoder_final_norm);

    Tensor d_enc_out(src_len, cfg.d_model);
    for (std::size_t l = params.decoder.size(); l-- > 0;) {
        const auto& layer = params.decoder[l];
        const auto& lt = fp.dec_trace.layers[l];
        auto& gl = grads.decoder[l];

        // Feed-forward block.
        {
            Tensor d_branch = dx;
            detail::apply_mask_grad(d_branch, lt.ff.drop_mask);
            detail::feed_forward_backward(lt.norm_ff, lt.ff, layer.norm_ff, layer.ff_in,
                                          layer.ff_out, d_branch, dx, gl.norm_ff, gl.ff_in,
                                          gl.ff_out);
        }
        // Cross-attention block.
        {
            Tensor d_branch = dx;
            detail::apply_mask_grad(d_branch, lt.cross_attn.drop_mask);
            Tensor dq, dk, dv;
            detail::attention_backward(lt.cross_attn, layer.cross_attn.wo, d_branch,
                                       cfg.num_heads, cfg.scaled_attention, cfg, BiasMode::None,
                                       dq, dk, dv, gl.cross_attn.wo, nullptr);
            add_inplace(gl.cross_attn.wq, matmul_at(lt.norm_cross.normed, dq));
            add_inplace(gl.cross_attn.wk, matmul_at(fp.encoder_output, dk));
            add_inplace(gl.cross_attn.wv, matmul_at(fp.encoder_output, dv));
            add_inplace(d_enc_out, matmul_bt(dk, layer.cross_attn.wk));
            add_inplace(d_enc_out, matmul_bt(dv, layer.cross_attn.wv));
            Tensor d_normed = matmul_bt(dq, layer.cross_attn.wq);
            detail::norm_rows_backward(lt.norm_cross, layer.norm_cross, d_normed, dx,
                                       gl.norm_cross);
        }
        // Causal self-attention block.
        {
            Tensor d_branch = dx;
            detail::apply_mask_grad(d_branch, lt.self_attn.drop_mask);
            Tensor dq, dk, dv;
            detail::attention_backward(lt.self_attn, layer.self_attn.wo, d_branch, cfg.num_heads,
                                       cfg.scaled_attention, cfg, BiasMode::Unidirectional, dq, dk,
                                       dv, gl.self_attn.wo, &grads.relative_bias);
            Tensor d_normed = matmul_bt(dq, layer.self_attn.wq);
            add_inplace(d_normed, matmul_bt(dk, layer.self_attn.wk));
            add_inplace(d_normed, matmul_bt(dv, layer.self_attn.wv));
            add_inplace(gl.self_attn.wq, matmul_at(lt.norm_self.normed, dq));
            add_inplace(gl.self_attn.wk, matmul_at(lt.norm_self.normed, dk));
            add_inplace(gl.self_attn.wv, matmul_at(lt.norm_self.normed, dv));
            detail::norm_rows_backward(lt.norm_self, layer.norm_self, d_normed, dx, gl.norm_self);
        }
    }
    detail::apply_mask_grad(dx, fp.dec_trace.emb_drop_mask);
    for (std::size_t i = 0; i < tgt_len; ++i) {
        const auto row = static_cast<std::size_t>(fp.target_in.ids[i]);
        for (std::size_t j = 0; j < cfg.d_model; ++j) grads.embedding(row, j) += dx(i, j);
    }

    // Encoder stack, driven by the cross-attention contributions.
    Tensor dex(src_len, cfg.d_model);
    detail::norm_rows_backward(fp.enc_trace.final_norm, params.encoder_final_norm, d_enc_out, dex,
                               grads.encoder_final_norm);
    for (std::size_t l = params.encoder.size(); l-- > 0;) {
        const auto& layer = params.encoder[l];
        const auto& lt = fp.enc_trace.layers[l];
        auto& gl = grads.encoder[l];
        {
            Tensor d_branch = dex;
            detail::apply_mask_grad(d_branch, lt.ff.drop_mask);
            detail::feed_forward_backward(lt.norm_ff, lt.ff, layer.norm_ff, layer.ff_in,
                                          layer.ff_out, d_branch, dex, gl.norm_ff, gl.ff_in,
                                          gl.ff_out);
        }
        {
            Tensor d_branch = dex;
            detail::apply_mask_grad(d_branch, lt.attn.drop_mask);
            Tensor dq, dk, dv;
            detail::attention_backward(lt.attn, layer.self_attn.wo, d_branch, cfg.num_heads,
                                       cfg.scaled_attention, cfg, BiasMode::Bidirectional, dq, dk,
                                       dv, gl.self_attn.wo, &grads.relative_bias);
            Tensor d_normed = matmul_bt(dq, layer.self_attn.wq);
            add_inplace(d_normed, matmul_bt(dk, layer.self_attn.wk));
            add_inplace(d_normed, matmul_bt(dv, layer.self_attn.wv));
            add_inplace(gl.self_attn.wq, matmul_at(lt.norm_self.normed, dq));
            add_inplace(gl.self_attn.wk, matmul_at(lt.norm_self.normed, dk));
            add_inplace(gl.self_attn.wv, matmul_at(lt.norm_self.normed, dv));
            detail::norm_rows_backward(lt.norm_self, layer.norm_self, d_normed, dex, gl.norm_self);
        }
    }
    detail::apply_mask_grad(dex, fp.enc_trace.emb_drop_mask);
    for (std::size_t i = 0; i < src_len; ++i) {
        const auto row = static_cast<std::size_t>(fp.source.ids[i]);
        for (std::size_t j = 0; j < cfg.d_model; ++j) grads.embedding(row, j) += dex(i, j);
    }
}

/// Forward + loss + backward over a batch; gradients are for the mean NLL
/// over all non-PAD target tokens in the batch.
struct BatchResult {
    double loss = 0.0;
    std::size_t token_count = 0;
};

inline BatchResult train_batch(const std::vector<const TrainingExample*>& batch,
                               const ModelParameters& params, const ModelConfig& cfg,
                               ModelParameters& grads, Prng* dropout_rng = nullptr) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    std::size_t src_len = 0, tgt_len = 0, total_tokens = 0;
    for (const auto* ex : batch) {
        src_len = std::max(src_len, ex->source_ids.size());
        tgt_len = std::max(tgt_len, ex->target_ids.size());
        total_tokens += ex->target_ids.size();
    }
    const double scale = 1.0 / static_cast<double>(total_tokens);
    BatchResult result;
    result.token_count = total_tokens;
    double total = 0.0;
    for (const auto* ex : batch) {
        ForwardPass fp = model_forward(*ex, src_len, tgt_len, params, cfg, dropout_rng);
        NllResult nll = nll_loss(fp.logits, fp.target_ids, fp.target_loss_mask);
        total += nll.total;
        Tensor d_logits = nll_loss_grad(fp.logits, fp.target_ids, fp.target_loss_mask, scale);
        model_backward(fp, d_logits, params, cfg, grads);
    }
    result.loss = total * scale;
    return result;
}

/// Mean NLL over a set of examples without touching gradients.
inline double evaluate_nll(const std::vector<TrainingExample>& examples,
                           const ModelParameters& params, const ModelConfig& cfg,
                           std::size_t batch_size) {
    if (examples.empty()) throw std::invalid_argument("no examples to evaluate");
    double total = 0.0;
    std::size_t tokens = 0;
    for (std::size_t start = 0; start < examples.size(); start += batch_size) {
        const std::size_t end = std::min(examples.size(), start + batch_size);
        std::size_t src_len = 0, tgt_len = 0;
        for (std::size_t i = start; i < end; ++i) {
            src_len = std::max(src_len, examples[i].source_ids.size());
            tgt_len = std::max(tgt_len, examples[i].target_ids.size());
        }
        for (std::size_t i = start; i < end; ++i) {
            ForwardPass fp = model_forward(examples[i], src_len, tgt_len, params, cfg);
            NllResult nll = nll_loss(fp.logits, fp.target_ids, fp.target_loss_mask);
            total += nll.total;
            tokens += nll.token_count;
        }
    }
    return total / static_cast<double>(tokens);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 1e-5;
    std::size_t batch_size = 8;
    std::size_t epochs = 5;
    std::size_t max_source_len = 512;
    std::size_t max_target_len = 20;
    std::size_t eval_interval_steps = 1000;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t seed = 0;
    std::size_t max_steps = 0;        // 0 = run the configured epochs
    std::string checkpoint_dir;       // empty = no checkpoints written
    bool eval_at_start = true;

    void validate() const {
        if (learning_rate <= 0.0 || batch_size == 0 || epochs == 0 || max_source_len < 2 ||
            max_target_len < 1 || eval_interval_steps == 0) {
            throw std::invalid_argument("train config fields must be positive");
        }
    }
};

struct AdamState {
    ModelParameters m;
    ModelParameters v;
    long long step = 0;
};

inline AdamState make_adam_state(const ModelConfig& cfg) {
    return AdamState{make_parameters(cfg), make_parameters(cfg), 0};
}

struct StepReport {
    bool applied = true;
    std::string reason;
};

/// Adam with bias correction. A non-finite gradient anywhere skips the whole
/// update and reports which tensor was bad.
inline StepReport optimizer_step(ModelParameters& params, const ModelParameters& grads,
                                 AdamState& state, const TrainConfig& cfg) {
    std::string bad;
    grads.for_each_tensor([&](const std::string& name, const Tensor& g) {
        if (bad.empty() && !g.all_finite()) bad = name;
    });
    if (!bad.empty()) return {false, "non-finite gradient in " + bad};

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);

    std::vector<Tensor*> p_list, m_list, v_list;
    std::vector<const Tensor*> g_list;
    params.for_each_tensor([&](const std::string&, Tensor& x) { p_list.push_back(&x); });
    grads.for_each_tensor([&](const std::string&, const Tensor& x) { g_list.push_back(&x); });
    state.m.for_each_tensor([&](const std::string&, Tensor& x) { m_list.push_back(&x); });
    state.v.for_each_tensor([&](const std::string&, Tensor& x) { v_list.push_back(&x); });
    for (std::size_t k = 0; k < p_list.size(); ++k) {
        Tensor& p = *p_list[k];
        const Tensor& g = *g_list[k];
        Tensor& m = *m_list[k];
        Tensor& v = *v_list[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
        }
    }
    return {true, ""};
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t entries_checked = 0;
    std::string worst_tensor;
};

/// Central-difference check of the analytic gradients on a sampled subset of
/// entries covering every tensor. Requires dropout 0.
inline GradCheckResult gradient_check(const ModelParameters& params, const ModelConfig& cfg,
                                      const std::vector<TrainingExample>& examples,
                                      double epsilon = 1e-5, std::size_t min_entries = 500,
                                      std::uint64_t sample_seed = 0) {
    std::vector<const TrainingExample*> batch;
    for (const auto& ex : examples) batch.push_back(&ex);

    ModelParameters grads = make_parameters(cfg);
    ModelParameters work = params;
    train_batch(batch, work, cfg, grads);

    auto loss_at = [&](ModelParameters& p) {
        std::size_t src_len = 0, tgt_len = 0;
        std::size_t tokens = 0;
        double total = 0.0;
        for (const auto* ex : batch) {
            src_len = std::max(src_len, ex->source_ids.size());
            tgt_len = std::max(tgt_len, ex->target_ids.size());
            tokens += ex->target_ids.size();
        }
        for (const auto* ex : batch) {
            ForwardPass fp = model_forward(*ex, src_len, tgt_len, p, cfg);
            total += nll_loss(fp.logits, fp.target_ids, fp.target_loss_mask).total;
        }
        if (!std::isfinite(total)) throw std::runtime_error("non-finite loss in gradient check");
        return total / static_cast<double>(tokens);
    };

    struct Slot {
        std::string name;
        Tensor* param;
        const Tensor* grad;
    };
    std::vector<Slot> slots;
    {
        std::vector<Tensor*> ps;
        work.for_each_tensor([&](const std::string& name, Tensor& t) {
            slots.push_back({name, &t, nullptr});
        });
        std::size_t k = 0;
        grads.for_each_tensor([&](const std::string&, const Tensor& t) { slots[k++].grad = &t; });
    }
    std::size_t total_size = 0;
    for (const auto& s : slots) total_size += s.param->size();

    Prng rng(sample_seed);
    GradCheckResult result;
    for (const auto& s : slots) {
        std::size_t n = std::max<std::size_t>(
            2, (min_entries * s.param->size() + total_size - 1) / total_size);
        n = std::min(n, s.param->size());
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t idx = static_cast<std::size_t>(rng.next_below(s.param->size()));
            const double saved = (*s.param)[idx];
            (*s.param)[idx] = saved + epsilon;
            const double up = loss_at(work);
            (*s.param)[idx] = saved - epsilon;
            const double down = loss_at(work);
            (*s.param)[idx] = saved;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double analytic = (*s.grad)[idx];
            const double rel = std::fabs(analytic - numeric) /
                               std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_tensor = s.name;
            }
            ++result.entries_checked;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Metrics log and training state
// ---------------------------------------------------------------------------

struct MetricsEntry {
    std::size_t step = 0;
    std::string split;
    double nll = 0.0;
    std::optional<double> rouge1;
    std::optional<double> rougeL;
};

struct MetricsLog {
    std::vector<MetricsEntry> entries;

    void write_csv(std::ostream& out) const {
        out << "step,split,nll,rouge1,rougeL\n";
        for (const auto& e : entries) {
            out << e.step << ',' << e.split << ',' << detail::format_double(e.nll) << ',';
            if (e.rouge1) out << detail::format_double(*e.rouge1);
            out << ',';
            if (e.rougeL) out << detail::format_double(*e.rougeL);
            out << '\n';
        }
    }
};

inline constexpr const char* kTrainStateHeader = "#tfstate-v1";

/// Full-precision training state for exact resume; the float32 model
/// checkpoint next to it is the interchange format.
struct TrainState {
    ModelParameters params;
    AdamState opt;
    std::size_t step = 0;
};

namespace detail {

inline void write_f64_le(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    out.write(bytes, 8);
}

inline double read_f64_le(std::istream& in) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) throw std::runtime_error("train state truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline void write_param_block(std::ostream& out, const ModelParameters& p) {
    p.for_each_tensor([&](const std::string&, const Tensor& t) {
        for (std::size_t i = 0; i < t.size(); ++i) write_f64_le(out, t[i]);
    });
}

inline void read_param_block(std::istream& in, ModelParameters& p) {
    p.for_each_tensor([&](const std::string&, Tensor& t) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = read_f64_le(in);
    });
}

}  // namespace detail

inline void save_train_state(std::ostream& out, const TrainState& state) {
    out << kTrainStateHeader << '\n';
    out << "step=" << state.step << '\n';
    out << "adam_step=" << state.opt.step << '\n';
    detail::write_param_block(out, state.params);
    detail::write_param_block(out, state.opt.m);
    detail::write_param_block(out, state.opt.v);
}

inline TrainState load_train_state(std::istream& in, const ModelConfig& cfg) {
    std::string line;
    if (!std::getline(in, line) || line != kTrainStateHeader) {
        throw std::runtime_error("train state missing header");
    }
    TrainState state{make_parameters(cfg), make_adam_state(cfg), 0};
    if (!std::getline(in, line) || line.rfind("step=", 0) != 0) {
        throw std::runtime_error("train state missing step");
    }
    state.step = std::stoull(line.substr(5));
    if (!std::getline(in, line) || line.rfind("adam_step=", 0) != 0) {
        throw std::runtime_error("train state missing adam_step");
    }
    state.opt.step = std::stoll(line.substr(10));
    detail::read_param_block(in, state.params);
    detail::read_param_block(in, state.opt.m);
    detail::read_param_block(in, state.opt.v);
    return state;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Optional hook: evaluate corpus ROUGE on the validation set at each
/// evaluation point. Returns (rouge1, rougeL) scaled to [0,100].
using RougeEvalFn = std::function<std::pair<double, double>(const ModelParameters&)>;

struct TrainResult {
    ModelParameters params;
    AdamState opt_state;
    MetricsLog log;
    std::size_t steps = 0;
    std::size_t skipped_steps = 0;
};

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    Prng rng(base ^ (0x517cc1b727220a95ULL * (stream + 1)));
    return rng.next();
}

/// Teacher-forced training over shuffled batches. Evaluation (validation NLL
/// plus optional ROUGE) runs every eval_interval_steps and at step 0; each
/// evaluation emits a checkpoint when checkpoint_dir is set. Resume from a
/// saved TrainState reproduces the uninterrupted run exactly.
inline TrainResult train_loop(const std::vector<FormattedPair>& train_pairs,
                              const std::vector<FormattedPair>& val_pairs, const BpeModel& bpe,
                              const ModelConfig& model_cfg, const TrainConfig& cfg,
                              bool with_domain, const TrainState* resume = nullptr,
                              RougeEvalFn rouge_eval = nullptr) {
    cfg.validate();
    model_cfg.validate();
    if (train_pairs.empty()) throw std::invalid_argument("empty training set");
    if (model_cfg.vocab_size != bpe.vocab.size()) {
        throw std::invalid_argument("tokenizer/model vocabulary size mismatch: model " +
                                    std::to_string(model_cfg.vocab_size) + " vs tokenizer " +
                                    std::to_string(bpe.vocab.size()));
    }

    const auto train_examples = build_examples(train_pairs, bpe.vocab, bpe.merges,
                                               cfg.max_source_len, cfg.max_target_len, with_domain);
    const auto val_examples = val_pairs.empty()
                                  ? std::vector<TrainingExample>{}
                                  : build_examples(val_pairs, bpe.vocab, bpe.merges,
                                                   cfg.max_source_len, cfg.max_target_len,
                                                   with_domain);

    TrainResult result;
    result.params = resume ? resume->params : init_parameters(model_cfg, cfg.seed);
    result.opt_state = resume ? resume->opt : make_adam_state(model_cfg);
    std::size_t step = resume ? resume->step : 0;
    const std::size_t resume_step = step;

    double run_loss = 0.0;
    std::size_t run_tokens = 0;

    auto evaluate_at = [&](std::size_t at_step) {
        MetricsEntry train_entry{at_step, "train", 0.0, std::nullopt, std::nullopt};
        if (run_tokens > 0) {
            train_entry.nll = run_loss / static_cast<double>(run_tokens);
        } else {
            train_entry.nll = evaluate_nll(train_examples, result.params, model_cfg, cfg.batch_size);
        }
        result.log.entries.push_back(train_entry);
        run_loss = 0.0;
        run_tokens = 0;
        if (!val_examples.empty()) {
            MetricsEntry val_entry{at_step, "validation",
                                   evaluate_nll(val_examples, result.params, model_cfg,
                                                cfg.batch_size),
                                   std::nullopt, std::nullopt};
            if (rouge_eval) {
                auto [r1, rl] = rouge_eval(result.params);
                val_entry.rouge1 = r1;
                val_entry.rougeL = rl;
            }
            result.log.entries.push_back(val_entry);
        }
        if (!cfg.checkpoint_dir.empty()) {
            namespace fs = std::filesystem;
            fs::create_directories(cfg.checkpoint_dir);
            const std::string base = cfg.checkpoint_dir + "/ckpt-step" + std::to_string(at_step);
            {
                std::ofstream out(base, std::ios::binary);
                save_checkpoint(out, result.params, model_cfg);
            }
            {
                std::ofstream out(base + ".state", std::ios::binary);
                save_train_state(out, TrainState{result.params, result.opt_state, at_step});
            }
        }
    };

    if (cfg.eval_at_start && !resume) evaluate_at(0);

    const std::size_t n = train_examples.size();
    const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    bool done = false;
    for (std::size_t epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
        // Shuffle order depends only on (seed, epoch) so a resumed run sees
        // the same batches.
        Prng epoch_rng(derive_seed(cfg.seed, epoch));
        const auto order = shuffled_indices(n, epoch_rng);
        for (std::size_t b = 0; b < steps_per_epoch && !done; ++b) {
            ++step;
            if (step <= resume_step) continue;
            std::vector<const TrainingExample*> batch;
            const std::size_t start = b * cfg.batch_size;
            const std::size_t end = std::min(n, start + cfg.batch_size);
            for (std::size_t i = start; i < end; ++i) batch.push_back(&train_examples[order[i]]);

            ModelParameters grads = make_parameters(model_cfg);
            Prng dropout_rng(derive_seed(cfg.seed ^ 0x5dee2b6f0a1cULL, step));
            BatchResult br = train_batch(batch, result.params, model_cfg, grads,
                                         model_cfg.dropout_rate > 0.0 ? &dropout_rng : nullptr);
            StepReport rep = optimizer_step(result.params, grads, result.opt_state, cfg);
            if (!rep.applied) ++result.skipped_steps;
            run_loss += br.loss * static_cast<double>(br.token_count);
            run_tokens += br.token_count;

            if (step % cfg.eval_interval_steps == 0) evaluate_at(step);
            if (cfg.max_steps > 0 && step >= cfg.max_steps) done = true;
        }
    }
    result.steps = step;
    return result;
}

}  // namespace titleforge
