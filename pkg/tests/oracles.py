"""Independent reference implementations used only by the tests."""

import numpy as np


def mc_posterior(outcomes, A, ch, samples=10**6, seed=0, chunk=200_000):
    """Likelihood-weighted Monte-Carlo estimate of ``P(d_n = 1 | t)``.

    Defect vectors are drawn from the prior and weighted by the channel
    likelihood of the observed outcomes.
    """
    rng = np.random.default_rng(seed)
    A = np.asarray(A, dtype=bool)
    t = np.asarray(outcomes, dtype=bool)
    num = np.zeros(A.shape[1])
    den = 0.0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        d = rng.random((m, A.shape[1])) < ch.prior_delta
        status = (d.astype(np.int32) @ A.T.astype(np.int32)) > 0
        mism = (status != t).sum(axis=1)
        w = ch.crossover_p ** mism * (1 - ch.crossover_p) ** (A.shape[0] - mism)
        num += w @ d
        den += w.sum()
        done += m
    return num / den


def rank_isolated(A):
    """Clients whose basis vector lies in the row space, via matrix rank."""
    A = np.asarray(A, dtype=float)
    r = np.linalg.matrix_rank(A)
    out = []
    for n in range(A.shape[1]):
        e = np.zeros(A.shape[1])
        e[n] = 1
        if np.linalg.matrix_rank(np.vstack([A, e])) == r:
            out.append(n)
    return out


def best_two_cluster_split(scores):
    """Exhaustive threshold sweep for the 1-D single-linkage cut.

    Every split of the sorted values into a low and a high part is a
    candidate; single linkage at two clusters picks the one whose two parts
    are farthest apart (the minimum cross-pair distance). Returns the low
    set as a boolean mask.
    """
    v = np.asarray(scores, dtype=float)
    best, mask = -1.0, None
    for thr in np.unique(v)[:-1]:
        low = v <= thr
        gap = v[~low].min() - v[low].max()
        if gap > best:
            best, mask = gap, low
    return mask


def f1_brute(predicted, truth):
    p = set(np.flatnonzero(predicted))
    t = set(np.flatnonzero(truth))
    if not p and not t:
        return 1.0
    tp = len(p & t)
    prec = tp / len(p) if p else 0.0
    rec = tp / len(t) if t else 0.0
    return 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
