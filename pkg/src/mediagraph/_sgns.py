"""Numba kernel for skip-gram training with negative sampling.

Sequential SGD in the word2vec style: for each (center, context) pair the
context and negative output vectors are updated immediately while the
center update is accumulated and applied afterwards, all with the
pre-update counterpart values.  The RNG is an inlined splitmix64 so runs
are reproducible across platforms and numba versions.
"""

from __future__ import annotations

import numpy as np
from numba import njit

U64_1 = np.uint64(1)
SPLITMIX_GAMMA = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
DOUBLE_SCALE = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True)
def _splitmix64(state):
    state[0] += SPLITMIX_GAMMA
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * MIX1
    z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _rand_double(state):
    return float(_splitmix64(state) >> np.uint64(11)) * DOUBLE_SCALE


@njit(cache=True)
def _alias_draw(state, prob, alias):
    n = prob.shape[0]
    i = int(_rand_double(state) * n)
    if i >= n:
        i = n - 1
    if _rand_double(state) < prob[i]:
        return i
    return alias[i]


@njit(cache=True)
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _train_pair(syn0, syn1, center, context, negatives, lr, neg_prob, neg_alias, state, scratch):
    """One SGD step on a (center, context) pair; returns the pair's loss."""
    dim = syn0.shape[1]
    for d in range(dim):
        scratch[d] = 0.0
    loss = 0.0
    for k in range(negatives + 1):
        if k == 0:
            target = context
            label = 1.0
        else:
            target = _alias_draw(state, neg_prob, neg_alias)
            if target == context:
                continue
            label = 0.0
        s = 0.0
        for d in range(dim):
            s += syn0[center, d] * syn1[target, d]
        p = _sigmoid(s)
        if label > 0.5:
            loss += -np.log(max(p, 1e-12))
        else:
            loss += -np.log(max(1.0 - p, 1e-12))
        g = (label - p) * lr
        for d in range(dim):
            scratch[d] += g * syn1[target, d]
        for d in range(dim):
            syn1[target, d] += g * syn0[center, d]
    for d in range(dim):
        syn0[center, d] += scratch[d]
    return loss


@njit(cache=True)
def train_sgns(
    tokens,
    offsets,
    syn0,
    syn1,
    window,
    negatives,
    epochs,
    lr0,
    lr_floor,
    neg_prob,
    neg_alias,
    seed,
    trained,
):
    """Train over the walk corpus; returns per-epoch (loss sums, pair counts)."""
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    n_walks = offsets.shape[0] - 1
    total_tokens = float(offsets[n_walks] * epochs)
    scratch = np.empty(syn0.shape[1], dtype=np.float64)
    loss_sums = np.zeros(epochs, dtype=np.float64)
    pair_counts = np.zeros(epochs, dtype=np.int64)
    processed = 0
    for epoch in range(epochs):
        for w in range(n_walks):
            start = offsets[w]
            end = offsets[w + 1]
            for pos in range(start, end):
                center = tokens[pos]
                lr = lr0 * (1.0 - processed / total_tokens)
                if lr < lr0 * lr_floor:
                    lr = lr0 * lr_floor
                processed += 1
                b = 1 + int(_splitmix64(state) % np.uint64(window))
                lo = pos - b
                if lo < start:
                    lo = start
                hi = pos + b
                if hi > end - 1:
                    hi = end - 1
                for cpos in range(lo, hi + 1):
                    if cpos == pos:
                        continue
                    loss_sums[epoch] += _train_pair(
                        syn0, syn1, center, tokens[cpos], negatives, lr,
                        neg_prob, neg_alias, state, scratch,
                    )
                    pair_counts[epoch] += 1
                    trained[center] = True
                    trained[tokens[cpos]] = True
    return loss_sums, pair_counts
