#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "titleforge/prng.hpp"
#include "titleforge/tensor.hpp"

namespace titleforge {

inline constexpr double kNormEpsilon = 1e-6;
inline constexpr double kMaskValue = -1e30;
inline constexpr const char* kCheckpointHeader = "#tfckpt-v1";

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 64;
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t d_ff = 256;
    std::size_t num_position_buckets = 32;
    std::size_t max_relative_distance = 128;
    double dropout_rate = 0.0;
    // Attention logits carry the 1/sqrt(d_head) factor and tied output logits
    // the d_model^(-1/2) factor; both can be switched off to test the
    // unscaled convention.
    bool scaled_attention = true;
    bool scaled_tied_logits = true;

    std::size_t d_head() const { return d_model / num_heads; }

    void validate() const {
        if (vocab_size < 3) throw std::invalid_argument("vocab_size must cover the control tokens");
        if (d_model == 0 || num_layers == 0 || num_heads == 0 || d_ff == 0) {
            throw std::invalid_argument("model dimensions must be >= 1");
        }
        if (d_model % num_heads != 0) {
            throw std::invalid_argument("d_model must be divisible by num_heads");
        }
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
            throw std::invalid_argument("dropout_rate must lie in [0,1)");
        }
        if (num_position_buckets < 4 || num_position_buckets % 2 != 0) {
            throw std::invalid_argument("num_position_buckets must be even and >= 4");
        }
        if (max_relative_distance <= num_position_buckets / 2) {
            throw std::invalid_argument("max_relative_distance must exceed num_position_buckets/2");
        }
    }
};

struct AttentionParams {
    Tensor wq, wk, wv, wo;  // all d_model x d_model
};

struct EncoderLayerParams {
    Tensor norm_self;  // d_model scale vector
    AttentionParams self_attn;
    Tensor norm_ff;
    Tensor ff_in;   // d_model x d_ff
    Tensor ff_out;  // d_ff x d_model
};

struct DecoderLayerParams {
    Tensor norm_self;
    AttentionParams self_attn;
    Tensor norm_cross;
    AttentionParams cross_attn;
    Tensor norm_ff;
    Tensor ff_in;
    Tensor ff_out;
};

/// Every trainable weight. There are no additive bias vectors anywhere, and
/// the embedding doubles as the output projection (one storage location).
struct ModelParameters {
    Tensor embedding;      // vocab_size x d_model
    Tensor relative_bias;  // num_heads x num_position_buckets, shared across layers
    std::vector<EncoderLayerParams> encoder;
    std::vector<DecoderLayerParams> decoder;
    Tensor encoder_final_norm;
    Tensor decoder_final_norm;

    template <class Self, class F>
    static void visit(Self& self, F&& f) {
        f("embedding", self.embedding);
        f("relative_bias", self.relative_bias);
        for (std::size_t l = 0; l < self.encoder.size(); ++l) {
            auto& layer = self.encoder[l];
            const std::string p = "encoder." + std::to_string(l) + ".";
            f(p + "norm_self", layer.norm_self);
            f(p + "self.wq", layer.self_attn.wq);
            f(p + "self.wk", layer.self_attn.wk);
            f(p + "self.wv", layer.self_attn.wv);
            f(p + "self.wo", layer.self_attn.wo);
            f(p + "norm_ff", layer.norm_ff);
            f(p + "ff_in", layer.ff_in);
            f(p + "ff_out", layer.ff_out);
        }
        for (std::size_t l = 0; l < self.decoder.size(); ++l) {
            auto& layer = self.decoder[l];
            const std::string p = "decoder." + std::to_string(l) + ".";
            f(p + "norm_self", layer.norm_self);
            f(p + "self.wq", layer.self_attn.wq);
            f(p + "self.wk", layer.self_attn.wk);
            f(p + "self.wv", layer.self_attn.wv);
            f(p + "self.wo", layer.self_attn.wo);
            f(p + "norm_cross", layer.norm_cross);
            f(p + "cross.wq", layer.cross_attn.wq);
            f(p + "cross.wk", layer.cross_attn.wk);
            f(p + "cross.wv", layer.cross_attn.wv);
            f(p + "cross.wo", layer.cross_attn.wo);
            f(p + "norm_ff", layer.norm_ff);
            f(p + "ff_in", layer.ff_in);
            f(p + "ff_out", layer.ff_out);
        }
        f("encoder_final_norm", self.encoder_final_norm);
        f("decoder_final_norm", self.decoder_final_norm);
    }

    template <class F>
    void for_each_tensor(F&& f) {
        visit(*this, std::forward<F>(f));
    }
    template <class F>
    void for_each_tensor(F&& f) const {
        visit(*this, std::forward<F>(f));
    }
};

/// Zero-valued parameter set with the schema implied by the config. Also the
/// gradient container: gradients always share this schema.
inline ModelParameters make_parameters(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.d_model;
    auto attn = [&] {
        AttentionParams a;
        a.wq = Tensor(d, d);
        a.wk = Tensor(d, d);
        a.wv = Tensor(d, d);
        a.wo = Tensor(d, d);
        return a;
    };
    ModelParameters p;
    p.embedding = Tensor(cfg.vocab_size, d);
    p.relative_bias = Tensor(cfg.num_heads, cfg.num_position_buckets);
    p.encoder.resize(cfg.num_layers);
    for (auto& layer : p.encoder) {
        layer.norm_self = Tensor(std::vector<std::size_t>{d});
        layer.self_attn = attn();
        layer.norm_ff = Tensor(std::vector<std::size_t>{d});
        layer.ff_in = Tensor(d, cfg.d_ff);
        layer.ff_out = Tensor(cfg.d_ff, d);
    }
    p.decoder.resize(cfg.num_layers);
    for (auto& layer : p.decoder) {
        layer.norm_self = Tensor(std::vector<std::size_t>{d});
        layer.self_attn = attn();
        layer.norm_cross = Tensor(std::vector<std::size_t>{d});
        layer.cross_attn = attn();
        layer.norm_ff = Tensor(std::vector<std::size_t>{d});
        layer.ff_in = Tensor(d, cfg.d_ff);
        layer.ff_out = Tensor(cfg.d_ff, d);
    }
    p.encoder_final_norm = Tensor(std::vector<std::size_t>{d});
    p.decoder_final_norm = Tensor(std::vector<std::size_t>{d});
    return p;
}

/// Seeded init: matrices are zero-mean normal with variance 1/fan_in,
/// normalization scales start at one, the relative bias table at zero.
inline ModelParameters init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParameters p = make_parameters(cfg);
    Prng rng(seed);
    p.for_each_tensor([&](const std::string& name, Tensor& t) {
        if (name.find("norm") != std::string::npos) {
            t.fill(1.0);
        } else if (name == "relative_bias") {
            t.fill(0.0);
        } else {
            const std::size_t fan_in = name == "embedding" ? cfg.d_model : t.rows();
            const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = stddev * rng.next_normal();
        }
    });
    return p;
}

// ---------------------------------------------------------------------------
// Core ops
// ---------------------------------------------------------------------------

/// Rescale-only normalization: y_i = x_i / sqrt(mean(x^2) + eps) * scale_i.
/// No mean subtraction, no additive term.
inline std::vector<double> rms_layer_norm(const std::vector<double>& x,
                                          const std::vector<double>& scale,
                                          double epsilon = kNormEpsilon) {
    if (x.size() != scale.size() || x.empty()) {
        throw std::invalid_argument("rms_layer_norm width mismatch");
    }
    double mean_sq = 0.0;
    for (double v : x) mean_sq += v * v;
    mean_sq /= static_cast<double>(x.size());
    const double inv_rms = 1.0 / std::sqrt(mean_sq + epsilon);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * inv_rms * scale[i];
    return y;
}

struct NormTrace {
    Tensor input;
    std::vector<double> inv_rms;  // per row
    Tensor normed;
};

inline Tensor norm_rows(const Tensor& x, const Tensor& scale, NormTrace* trace = nullptr) {
    const std::size_t n = x.rows(), d = x.cols();
    if (scale.size() != d) throw std::invalid_argument("norm scale width mismatch");
    Tensor out(n, d);
    std::vector<double> inv_rms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mean_sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean_sq += x(i, j) * x(i, j);
        mean_sq /= static_cast<double>(d);
        const double r = 1.0 / std::sqrt(mean_sq + kNormEpsilon);
        inv_rms[i] = r;
        for (std::size_t j = 0; j < d; ++j) out(i, j) = x(i, j) * r * scale[j];
    }
    if (trace) {
        trace->input = x;
        trace->inv_rms = std::move(inv_rms);
        trace->normed = out;
    }
    return out;
}

/// Map a signed relative distance (key_pos - query_pos) to a bucket id.
/// Small distances get their own bucket, larger ones share log-spaced buckets
/// up to max_distance, and everything beyond saturates into the last bucket.
/// Bidirectional mode splits the buckets between negative and positive
/// offsets; unidirectional (decoder) mode sends positive offsets to bucket 0.
inline int relative_position_bucket(long long relative_distance, bool bidirectional,
                                    int num_buckets, int max_distance) {
    int side_buckets = num_buckets;
    int bucket = 0;
    long long distance = relative_distance;
    if (bidirectional) {
        if (num_buckets < 4 || num_buckets % 2 != 0) {
            throw std::invalid_argument("bidirectional bucketing needs an even bucket count >= 4");
        }
        side_buckets = num_buckets / 2;
        if (distance > 0) bucket += side_buckets;
        distance = distance < 0 ? -distance : distance;
    } else {
        if (num_buckets < 2) throw std::invalid_argument("num_buckets must be >= 2");
        distance = distance < 0 ? -distance : 0;
    }
    const int max_exact = side_buckets / 2;
    if (max_exact < 1 || max_distance <= max_exact) {
        throw std::invalid_argument("max_distance too small for bucket layout");
    }
    if (distance < max_exact) return bucket + static_cast<int>(distance);
    const double log_ratio = std::log(static_cast<double>(distance) / max_exact) /
                             std::log(static_cast<double>(max_distance) / max_exact);
    int large = max_exact + static_cast<int>(log_ratio * (side_buckets - max_exact));
    if (large > side_buckets - 1) large = side_buckets - 1;
    return bucket + large;
}

/// Per-head additive attention bias looked up from the shared table.
inline std::vector<Tensor> build_position_bias(const Tensor& table, const ModelConfig& cfg,
                                               std::size_t n_query, std::size_t n_key,
                                               bool bidirectional) {
    std::vector<Tensor> bias(cfg.num_heads, Tensor(n_query, n_key));
    for (std::size_t i = 0; i < n_query; ++i) {
        for (std::size_t j = 0; j < n_key; ++j) {
            const int b = relative_position_bucket(
                static_cast<long long>(j) - static_cast<long long>(i), bidirectional,
                static_cast<int>(cfg.num_position_buckets),
                static_cast<int>(cfg.max_relative_distance));
            for (std::size_t h = 0; h < cfg.num_heads; ++h) {
                bias[h](i, j) = table(h, static_cast<std::size_t>(b));
            }
        }
    }
    return bias;
}

/// Numerically stable log-softmax over each row.
inline Tensor log_softmax(const Tensor& logits) {
    Tensor out(logits.rows(), logits.cols());
    const std::size_t n = logits.rows(), m = logits.cols();
    for (std::size_t i = 0; i < n; ++i) {
        double max_v = logits(i, 0);
        for (std::size_t j = 1; j < m; ++j) max_v = std::max(max_v, logits(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < m; ++j) sum += std::exp(logits(i, j) - max_v);
        const double log_z = max_v + std::log(sum);
        for (std::size_t j = 0; j < m; ++j) out(i, j) = logits(i, j) - log_z;
    }
    return out;
}

inline std::vector<double> log_softmax_row(const std::vector<double>& row) {
    Tensor t(1, row.size());
    for (std::size_t j = 0; j < row.size(); ++j) t(0, j) = row[j];
    Tensor out = log_softmax(t);
    std::vector<double> r(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) r[j] = out(0, j);
    return r;
}

inline void softmax_rows_inplace(Tensor& scores) {
    const std::size_t n = scores.rows(), m = scores.cols();
    for (std::size_t i = 0; i < n; ++i) {
        double max_v = scores(i, 0);
        for (std::size_t j = 1; j < m; ++j) max_v = std::max(max_v, scores(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double e = std::exp(scores(i, j) - max_v);
            scores(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < m; ++j) scores(i, j) /= sum;
    }
}

struct AttnTrace {
    Tensor q, k, v;             // post-projection
    std::vector<Tensor> probs;  // per head, n_query x n_key
    Tensor context;             // concatenated head outputs before wo
    Tensor drop_mask;           // empty unless dropout active
};

/// Multi-head scaled dot-product attention over already-projected q/k/v.
/// mask is additive (0 or a -inf surrogate), position_bias may be empty.
/// Head outputs are concatenated and projected through wo.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask,
                        const std::vector<Tensor>& position_bias, const Tensor& wo,
                        std::size_t num_heads, bool scaled, AttnTrace* trace = nullptr) {
    const std::size_t nq = q.rows(), nk = k.rows(), d = q.cols();
    if (k.cols() != d || v.cols() != d || v.rows() != nk) {
        throw std::invalid_argument("attention projection shape mismatch");
    }
    if (mask.rows() != nq || mask.cols() != nk) {
        throw std::invalid_argument("attention mask shape mismatch");
    }
    if (d % num_heads != 0) throw std::invalid_argument("head count must divide width");
    const std::size_t dh = d / num_heads;
    const double scale = scaled ? 1.0 / std::sqrt(static_cast<double>(dh)) : 1.0;

    Tensor context(nq, d);
    std::vector<Tensor> probs;
    probs.reserve(num_heads);
    for (std::size_t h = 0; h < num_heads; ++h) {
        const std::size_t off = h * dh;
        Tensor scores(nq, nk);
        for (std::size_t i = 0; i < nq; ++i) {
            for (std::size_t j = 0; j < nk; ++j) {
                double acc = 0.0;
                for (std::size_t p = 0; p < dh; ++p) acc += q(i, off + p) * k(j, off + p);
                acc *= scale;
                if (!position_bias.empty()) acc += position_bias[h](i, j);
                scores(i, j) = acc + mask(i, j);
            }
        }
        softmax_rows_inplace(scores);
        for (std::size_t i = 0; i < nq; ++i) {
            for (std::size_t j = 0; j < nk; ++j) {
                const double w = scores(i, j);
                if (w == 0.0) continue;
                for (std::size_t p = 0; p < dh; ++p) context(i, off + p) += w * v(j, off + p);
            }
        }
        probs.push_back(std::move(scores));
    }
    Tensor out = matmul(context, wo);
    if (trace) {
        trace->q = q;
        trace->k = k;
        trace->v = v;
        trace->probs = std::move(probs);
        trace->context = std::move(context);
    }
    return out;
}

inline Tensor pad_key_mask(std::size_t n_query, const std::vector<bool>& key_is_pad) {
    Tensor mask(n_query, key_is_pad.size());
    for (std::size_t j = 0; j < key_is_pad.size(); ++j) {
        if (!key_is_pad[j]) continue;
        for (std::size_t i = 0; i < n_query; ++i) mask(i, j) = kMaskValue;
    }
    return mask;
}

/// Causal mask (no attending forward) combined with key padding.
inline Tensor causal_mask(std::size_t n, const std::vector<bool>& key_is_pad) {
    Tensor mask(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j > i || key_is_pad[j]) mask(i, j) = kMaskValue;
        }
    }
    return mask;
}

inline Tensor embed_rows(const std::vector<int>& ids, const Tensor& embedding) {
    Tensor out(ids.size(), embedding.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= embedding.rows()) {
            throw std::out_of_range("token id " + std::to_string(ids[i]) + " out of vocabulary");
        }
        for (std::size_t j = 0; j < embedding.cols(); ++j) {
            out(i, j) = embedding(static_cast<std::size_t>(ids[i]), j);
        }
    }
    return out;
}

/// Inverted dropout; mask entries are 0 or 1/(1-rate).
inline void apply_dropout(Tensor& x, double rate, Prng& rng, Tensor* mask_out) {
    Tensor mask(x.shape());
    const double keep = 1.0 - rate;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double m = rng.next_unit() < rate ? 0.0 : 1.0 / keep;
        mask[i] = m;
        x[i] *= m;
    }
    if (mask_out) *mask_out = std::move(mask);
}

struct FfTrace {
    Tensor pre_act;
    Tensor act;
    Tensor drop_mask;
};

struct EncoderLayerTrace {
    NormTrace norm_self;
    AttnTrace attn;
    NormTrace norm_ff;
    FfTrace ff;
};

struct EncoderTrace {
    std::vector<int> ids;
    Tensor emb_drop_mask;
    std::vector<EncoderLayerTrace> layers;
    NormTrace final_norm;
};

struct DecoderLayerTrace {
    NormTrace norm_self;
    AttnTrace self_attn;
    NormTrace norm_cross;
    AttnTrace cross_attn;
    NormTrace norm_ff;
    FfTrace ff;
};

struct DecoderTrace {
    std::vector<int> ids;
    Tensor emb_drop_mask;
    std::vector<DecoderLayerTrace> layers;
    NormTrace final_norm;
    Tensor final_hidden;  // after final norm, before logits
};

namespace detail {

inline Tensor feed_forward(const Tensor& input, const Tensor& norm_scale, const Tensor& w_in,
                           const Tensor& w_out, NormTrace* norm_trace, FfTrace* ff_trace) {
    Tensor normed = norm_rows(input, norm_scale, norm_trace);
    Tensor pre = matmul(normed, w_in);
    Tensor act = pre;
    for (std::size_t i = 0; i < act.size(); ++i) act[i] = act[i] > 0.0 ? act[i] : 0.0;
    Tensor out = matmul(act, w_out);
    if (ff_trace) {
        ff_trace->pre_act = std::move(pre);
        ff_trace->act = std::move(act);
    }
    return out;
}

}  // namespace detail

/// Bidirectional self-attention encoder stack; PAD key positions are masked
/// out, so content at PAD positions cannot influence any other row.
inline Tensor encoder_forward(const std::vector<int>& source_ids,
                              const std::vector<bool>& source_pad, const ModelParameters& params,
                              const ModelConfig& cfg, EncoderTrace* trace = nullptr,
                              Prng* dropout_rng = nullptr) {
    if (source_ids.empty() || source_ids.size() != source_pad.size()) {
        throw std::invalid_argument("encoder input/pad size mismatch");
    }
    const bool drop = dropout_rng && cfg.dropout_rate > 0.0;
    Tensor x = embed_rows(source_ids, params.embedding);
    if (trace) trace->ids = source_ids;
    if (drop) apply_dropout(x, cfg.dropout_rate, *dropout_rng, trace ? &trace->emb_drop_mask : nullptr);

    const Tensor mask = pad_key_mask(source_ids.size(), source_pad);
    const auto bias = build_position_bias(params.relative_bias, cfg, source_ids.size(),
                                          source_ids.size(), /*bidirectional=*/true);
    if (trace) trace->layers.resize(params.encoder.size());
    for (std::size_t l = 0; l < params.encoder.size(); ++l) {
        const auto& layer = params.encoder[l];
        EncoderLayerTrace* lt = trace ? &trace->layers[l] : nullptr;

        Tensor normed = norm_rows(x, layer.norm_self, lt ? &lt->norm_self : nullptr);
        Tensor q = matmul(normed, layer.self_attn.wq);
        Tensor k = matmul(normed, layer.self_attn.wk);
        Tensor v = matmul(normed, layer.self_attn.wv);
        Tensor attn_out = attention(q, k, v, mask, bias, layer.self_attn.wo, cfg.num_heads,
                                    cfg.scaled_attention, lt ? &lt->attn : nullptr);
        if (drop) apply_dropout(attn_out, cfg.dropout_rate, *dropout_rng, lt ? &lt->attn.drop_mask : nullptr);
        add_inplace(x, attn_out);

        Tensor ff_out = detail::feed_forward(x, layer.norm_ff, layer.ff_in, layer.ff_out,
                                             lt ? &lt->norm_ff : nullptr, lt ? &lt->ff : nullptr);
        if (drop) apply_dropout(ff_out, cfg.dropout_rate, *dropout_rng, lt ? &lt->ff.drop_mask : nullptr);
        add_inplace(x, ff_out);
    }
    return norm_rows(x, params.encoder_final_norm, trace ? &trace->final_norm : nullptr);
}

/// Causal decoder stack with cross-attention over the encoder output;
/// returns next-token logits through the tied embedding.
inline Tensor decoder_forward(const std::vector<int>& target_input_ids,
                              const std::vector<bool>& target_pad, const Tensor& encoder_output,
                              const std::vector<bool>& source_pad, const ModelParameters& params,
                              const ModelConfig& cfg, DecoderTrace* trace = nullptr,
                              Prng* dropout_rng = nullptr) {
    if (target_input_ids.empty() || target_input_ids.size() != target_pad.size()) {
        throw std::invalid_argument("decoder input/pad size mismatch");
    }
    if (encoder_output.rows() != source_pad.size() || encoder_output.cols() != cfg.d_model) {
        throw std::invalid_argument("encoder output shape mismatch");
    }
    const bool drop = dropout_rng && cfg.dropout_rate > 0.0;
    const std::size_t n = target_input_ids.size();
    Tensor x = embed_rows(target_input_ids, params.embedding);
    if (trace) trace->ids = target_input_ids;
    if (drop) apply_dropout(x, cfg.dropout_rate, *dropout_rng, trace ? &trace->emb_drop_mask : nullptr);

    const Tensor self_mask = causal_mask(n, target_pad);
    const Tensor cross_mask = pad_key_mask(n, source_pad);
    const auto bias = build_position_bias(params.relative_bias, cfg, n, n, /*bidirectional=*/false);
    if (trace) trace->layers.resize(params.decoder.size());
    for (std::size_t l = 0; l < params.decoder.size(); ++l) {
        const auto& layer = params.decoder[l];
        DecoderLayerTrace* lt = trace ? &trace->layers[l] : nullptr;

        Tensor normed = norm_rows(x, layer.norm_self, lt ? &lt->norm_self : nullptr);
        Tensor q = matmul(normed, layer.self_attn.wq);
        Tensor k = matmul(normed, layer.self_attn.wk);
        Tensor v = matmul(normed, layer.self_attn.wv);
        Tensor self_out = attention(q, k, v, self_mask, bias, layer.self_attn.wo, cfg.num_heads,
                                    cfg.scaled_attention, lt ? &lt->self_attn : nullptr);
        if (drop) apply_dropout(self_out, cfg.dropout_rate, *dropout_rng, lt ? &lt->self_attn.drop_mask : nullptr);
        add_inplace(x, self_out);

        // Cross-attention: queries from the decoder stream, keys/values from
        // the encoder output, no relative bias.
        Tensor normed_cross = norm_rows(x, layer.norm_cross, lt ? &lt->norm_cross : nullptr);
        Tensor qc = matmul(normed_cross, layer.cross_attn.wq);
        Tensor kc = matmul(encoder_output, layer.cross_attn.wk);
        Tensor vc = matmul(encoder_output, layer.cross_attn.wv);
        Tensor cross_out = attention(qc, kc, vc, cross_mask, {}, layer.cross_attn.wo,
                                     cfg.num_heads, cfg.scaled_attention,
                                     lt ? &lt->cross_attn : nullptr);
        if (drop) apply_dropout(cross_out, cfg.dropout_rate, *dropout_rng, lt ? &lt->cross_attn.drop_mask : nullptr);
        add_inplace(x, cross_out);

        Tensor ff_out = detail::feed_forward(x, layer.norm_ff, layer.ff_in, layer.ff_out,
                                             lt ? &lt->norm_ff : nullptr, lt ? &lt->ff : nullptr);
        if (drop) apply_dropout(ff_out, cfg.dropout_rate, *dropout_rng, lt ? &lt->ff.drop_mask : nullptr);
        add_inplace(x, ff_out);
    }
    Tensor hidden = norm_rows(x, params.decoder_final_norm, trace ? &trace->final_norm : nullptr);
    if (trace) trace->final_hidden = hidden;

    // Tied output projection: logits = hidden @ embedding^T (scaled).
    Tensor logits = matmul_bt(hidden, params.embedding);
    if (cfg.scaled_tied_logits) {
        scale_inplace(logits, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
    }
    return logits;
}

// ---------------------------------------------------------------------------
// Checkpoint format: text header + config block, then named tensors as raw
// little-endian 32-bit floats. save -> load -> save is byte-identical.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline void write_f32_le(std::ostream& out, double v) {
    float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                     static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
    out.write(bytes, 4);
}

inline double read_f32_le(std::istream& in) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (!in) throw std::runtime_error("checkpoint truncated while reading tensor data");
    std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) |
                         (static_cast<std::uint32_t>(bytes[1]) << 8) |
                         (static_cast<std::uint32_t>(bytes[2]) << 16) |
                         (static_cast<std::uint32_t>(bytes[3]) << 24);
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<double>(f);
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const ModelParameters& params,
                            const ModelConfig& cfg) {
    out << kCheckpointHeader << '\n';
    out << "vocab_size=" << cfg.vocab_size << '\n';
    out << "d_model=" << cfg.d_model << '\n';
    out << "num_layers=" << cfg.num_layers << '\n';
    out << "num_heads=" << cfg.num_heads << '\n';
    out << "d_ff=" << cfg.d_ff << '\n';
    out << "num_position_buckets=" << cfg.num_position_buckets << '\n';
    out << "max_relative_distance=" << cfg.max_relative_distance << '\n';
    out << "dropout_rate=" << detail::format_double(cfg.dropout_rate) << '\n';
    out << "scaled_attention=" << (cfg.scaled_attention ? 1 : 0) << '\n';
    out << "scaled_tied_logits=" << (cfg.scaled_tied_logits ? 1 : 0) << '\n';
    std::size_t count = 0;
    params.for_each_tensor([&](const std::string&, const Tensor&) { ++count; });
    out << "tensors=" << count << '\n';
    params.for_each_tensor([&](const std::string& name, const Tensor& t) {
        out << name;
        out << ' ' << t.shape().size();
        for (std::size_t d : t.shape()) out << ' ' << d;
        out << '\n';
        for (std::size_t i = 0; i < t.size(); ++i) detail::write_f32_le(out, t[i]);
        out << '\n';
    });
}

struct Checkpoint {
    ModelConfig config;
    ModelParameters params;
};

inline Checkpoint load_checkpoint(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kCheckpointHeader) {
        throw std::runtime_error("checkpoint missing " + std::string(kCheckpointHeader) + " header");
    }
    std::map<std::string, std::string> kv;
    std::size_t tensor_count = 0;
    while (std::getline(in, line)) {
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("malformed checkpoint config line: " + line);
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "tensors") {
            tensor_count = std::stoull(value);
            break;
        }
        kv[key] = value;
    }
    auto require = [&](const char* key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw std::runtime_error("checkpoint config missing " + std::string(key));
        return it->second;
    };
    ModelConfig cfg;
    cfg.vocab_size = std::stoull(require("vocab_size"));
    cfg.d_model = std::stoull(require("d_model"));
    cfg.num_layers = std::stoull(require("num_layers"));
    cfg.num_heads = std::stoull(require("num_heads"));
    cfg.d_ff = std::stoull(require("d_ff"));
    cfg.num_position_buckets = std::stoull(require("num_position_buckets"));
    cfg.max_relative_distance = std::stoull(require("max_relative_distance"));
    cfg.dropout_rate = std::stod(require("dropout_rate"));
    cfg.scaled_attention = require("scaled_attention") != "0";
    cfg.scaled_tied_logits = require("scaled_tied_logits") != "0";

    Checkpoint ckpt{cfg, make_parameters(cfg)};
    std::map<std::string, Tensor*> slots;
    ckpt.params.for_each_tensor([&](const std::string& name, Tensor& t) { slots[name] = &t; });
    if (tensor_count != slots.size()) {
        throw std::runtime_error("checkpoint tensor count does not match the parameter schema");
    }
    std::map<std::string, bool> filled;
    for (std::size_t k = 0; k < tensor_count; ++k) {
        if (!std::getline(in, line)) throw std::runtime_error("checkpoint truncated");
        std::istringstream hdr(line);
        std::string name;
        std::size_t ndim = 0;
        hdr >> name >> ndim;
        std::vector<std::size_t> shape(ndim);
        for (auto& d : shape) hdr >> d;
        if (!hdr) throw std::runtime_error("malformed tensor header: " + line);
        auto it = slots.find(name);
        if (it == slots.end()) throw std::runtime_error("unexpected tensor '" + name + "'");
        if (filled[name]) throw std::runtime_error("duplicate tensor '" + name + "'");
        if (it->second->shape() != shape) {
            throw std::runtime_error("tensor '" + name + "' has mismatched shape");
        }
        for (std::size_t i = 0; i < it->second->size(); ++i) {
            (*it->second)[i] = detail::read_f32_le(in);
        }
        filled[name] = true;
        std::getline(in, line);  // trailing newline after the blob
    }
    return ckpt;
}

}  // namespace titleforge
