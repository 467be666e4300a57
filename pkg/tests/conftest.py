"""Shared test oracles."""

import math

import numpy as np


def dense_attention_reference(features, offsets, head):
    """Brute-force scalar-loop window attention, independent of the library
    path: explicit per-pair logits, bias lookup, softmax, and weighted sum."""
    k, d = features.shape
    s = (head.bias_table.shape[0] + 1) // 2
    out = np.zeros_like(features)
    for p in range(k):
        logits = np.zeros(k)
        for q in range(k):
            qp = features[p] @ head.W_Q
            kq = features[q] @ head.W_K
            b = head.bias_table[
                offsets[p][0] - offsets[q][0] + s - 1,
                offsets[p][1] - offsets[q][1] + s - 1,
            ]
            logits[q] = (float(qp @ kq) + b) / math.sqrt(d)
        w = np.exp(logits - logits.max())
        w /= w.sum()
        for q in range(k):
            out[p] += w[q] * (features[q] @ head.W_V)
    return out
