"""Pure-numpy enumeration kernel (fallback when the compiled one is missing)."""

import numpy as np

BLOCK_BITS = 16

if hasattr(np, "bitwise_count"):
    def _popcount(x):
        return np.bitwise_count(x).astype(np.int64)
else:  # numpy < 2.0
    _BYTE = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)

    def _popcount(x):
        x = x.astype(np.uint64)
        out = np.zeros(x.shape, dtype=np.int64)
        for shift in range(0, 64, 8):
            out += _BYTE[(x >> np.uint64(shift)) & np.uint64(0xFF)]
        return out


def _weights(lo, hi, masks, outcomes, loglik, logprior):
    d = np.arange(lo, hi, dtype=np.uint64)
    mism = np.zeros(d.shape, dtype=np.int64)
    for mask, t in zip(masks, outcomes):
        status = (d & np.uint64(mask)) != 0
        mism += status != bool(t)
    return d, loglik[mism] + logprior[_popcount(d)]


def enumerate_sums(masks, outcomes, num_clients, loglik, logprior):
    """Sum ``exp(w(d) - max w)`` over defect vectors split by each client's bit.

    ``loglik[m]`` is the channel log-likelihood of ``m`` mismatching groups
    and ``logprior[c]`` the prior log-probability of a vector with ``c``
    defectives. Returns ``(wmax, s1, s0)`` with ``s1[n]`` summing vectors where
    client ``n`` is defective and ``s0[n]`` the rest.
    """
    total = 1 << num_clients
    block = 1 << min(num_clients, BLOCK_BITS)
    wmax = -np.inf
    for lo in range(0, total, block):
        _, w = _weights(lo, lo + block, masks, outcomes, loglik, logprior)
        wmax = max(wmax, float(w.max()))
    s1 = np.zeros(num_clients)
    s0 = np.zeros(num_clients)
    if wmax == -np.inf:
        return wmax, s1, s0
    shifts = np.arange(num_clients, dtype=np.uint64)
    for lo in range(0, total, block):
        d, w = _weights(lo, lo + block, masks, outcomes, loglik, logprior)
        f = np.exp(w - wmax)
        bits = ((d[None, :] >> shifts[:, None]) & np.uint64(1)).astype(np.float64)
        part1 = bits @ f
        s1 += part1
        s0 += f.sum() - part1
    return wmax, s1, s0
