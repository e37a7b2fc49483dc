#!/usr/bin/env python3
"""Independent reference computations for the model test fixtures.

Everything here is straight-line NumPy written directly from the layer
definitions, kept deliberately separate from the C++ implementation. Run it
and paste the printed arrays into tests/test_model.cpp when fixtures change.
"""
import math

import numpy as np


# --- deterministic weight filler shared with the C++ tests -----------------
class Lcg:
    def __init__(self, seed):
        self.state = seed & 0x7FFFFFFF

    def next(self):
        self.state = (1103515245 * self.state + 12345) % (1 << 31)
        return self.state

    def value(self):
        return (self.next() % 2001 - 1000) / 1000.0

    def fill(self, shape):
        out = np.empty(shape, dtype=np.float64)
        flat = out.reshape(-1)
        for i in range(flat.size):
            flat[i] = self.value()
        return out


def relative_position_bucket(distance, bidirectional, num_buckets, max_distance):
    side = num_buckets
    bucket = 0
    if bidirectional:
        side = num_buckets // 2
        if distance > 0:
            bucket += side
        distance = abs(distance)
    else:
        distance = -min(distance, 0)
    max_exact = side // 2
    if distance < max_exact:
        return bucket + distance
    large = max_exact + int(
        math.log(distance / max_exact) / math.log(max_distance / max_exact) * (side - max_exact)
    )
    return bucket + min(large, side - 1)


def rms_norm(x, g, eps=1e-6):
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x * r * g


def softmax(x):
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def attention(q, k, v, wo, heads, mask=None, bias=None, scaled=True):
    nq, d = q.shape
    dh = d // heads
    ctx = np.zeros((nq, d))
    for h in range(heads):
        qs, ks, vs = (t[:, h * dh:(h + 1) * dh] for t in (q, k, v))
        s = qs @ ks.T * (1.0 / math.sqrt(dh) if scaled else 1.0)
        if bias is not None:
            s = s + bias[h]
        if mask is not None:
            s = s + mask
        ctx[:, h * dh:(h + 1) * dh] = softmax(s) @ vs
    return ctx @ wo


def main():
    np.set_printoptions(precision=17, floatmode="maxprec", linewidth=120)

    print("=== bucket tables (num_buckets=8, max_distance=16) ===")
    bid = [relative_position_bucket(d, True, 8, 16) for d in range(-20, 21)]
    uni = [relative_position_bucket(d, False, 8, 16) for d in range(-20, 21)]
    print("bidirectional:", bid)
    print("unidirectional:", uni)

    print("\n=== attention fixture (2 queries, 3 keys, width 2, 1 head, wo=I) ===")
    q = np.array([[1.0, 0.5], [-0.3, 0.8]])
    k = np.array([[0.2, -0.1], [0.7, 0.4], [-0.5, 0.9]])
    v = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.25]])
    out = attention(q, k, v, np.eye(2), heads=1, scaled=True)
    print(out)

    print("\n=== micro model forward ===")
    V, d, heads, dff, nb, md = 6, 4, 2, 8, 8, 16
    lcg = Lcg(2024)
    emb = lcg.fill((V, d))
    rel = lcg.fill((heads, nb))
    enc_norm_self = lcg.fill(d)
    enc_wq, enc_wk, enc_wv, enc_wo = (lcg.fill((d, d)) for _ in range(4))
    enc_norm_ff = lcg.fill(d)
    enc_ffin = lcg.fill((d, dff))
    enc_ffout = lcg.fill((dff, d))
    dec_norm_self = lcg.fill(d)
    dec_wq, dec_wk, dec_wv, dec_wo = (lcg.fill((d, d)) for _ in range(4))
    dec_norm_cross = lcg.fill(d)
    dec_cq, dec_ck, dec_cv, dec_co = (lcg.fill((d, d)) for _ in range(4))
    dec_norm_ff = lcg.fill(d)
    dec_ffin = lcg.fill((d, dff))
    dec_ffout = lcg.fill((dff, d))
    enc_final = lcg.fill(d)
    dec_final = lcg.fill(d)

    def bias_matrix(n_q, n_k, bidirectional):
        b = np.zeros((heads, n_q, n_k))
        for h in range(heads):
            for i in range(n_q):
                for j in range(n_k):
                    b[h, i, j] = rel[h, relative_position_bucket(j - i, bidirectional, nb, md)]
        return b

    src = [3, 4, 5]
    x = emb[src]
    normed = rms_norm(x, enc_norm_self)
    attn = attention(normed @ enc_wq, normed @ enc_wk, normed @ enc_wv, enc_wo, heads,
                     bias=bias_matrix(3, 3, True))
    x = x + attn
    ff = np.maximum(rms_norm(x, enc_norm_ff) @ enc_ffin, 0.0) @ enc_ffout
    x = x + ff
    enc_out = rms_norm(x, enc_final)
    print("encoder output:")
    print(enc_out)

    tgt_in = [0, 3, 4]
    y = emb[tgt_in]
    causal = np.triu(np.full((3, 3), -1e30), k=1)
    normed = rms_norm(y, dec_norm_self)
    self_attn = attention(normed @ dec_wq, normed @ dec_wk, normed @ dec_wv, dec_wo, heads,
                          mask=causal, bias=bias_matrix(3, 3, False))
    y = y + self_attn
    normed = rms_norm(y, dec_norm_cross)
    cross = attention(normed @ dec_cq, enc_out @ dec_ck, enc_out @ dec_cv, dec_co, heads)
    y = y + cross
    ff = np.maximum(rms_norm(y, dec_norm_ff) @ dec_ffin, 0.0) @ dec_ffout
    y = y + ff
    hidden = rms_norm(y, dec_final)
    logits = hidden @ emb.T / math.sqrt(d)
    print("decoder logits:")
    print(logits)


if __name__ == "__main__":
    main()
