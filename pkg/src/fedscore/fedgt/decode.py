"""Group tests and exact soft decoding to per-client log-likelihood ratios.

Channel model: each client is independently malicious with probability
``prior_delta``; a group is truly positive iff it contains a malicious
client; each observed outcome is flipped independently with probability
``crossover_p``. The decoder sums over all ``2**N`` defect vectors.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import CapabilityError, ConfigurationError
from . import _decode_py

try:
    if os.environ.get("FEDSCORE_PURE_PYTHON"):
        raise ImportError("pure-python backend forced")
    from . import _decode_ext
except ImportError:
    _decode_ext = None

logger = logging.getLogger(__name__)

BACKEND = "cython" if _decode_ext is not None else "python"
MAX_ENUM_CLIENTS = 25
LLR_CLAMP = 50.0


@dataclass(frozen=True)
class ChannelModel:
    crossover_p: float = 0.05
    prior_delta: float = 0.2

    def __post_init__(self):
        if not 0 <= self.crossover_p < 0.5:
            raise ConfigurationError("crossover_p must lie in [0, 0.5)")
        if not 0 < self.prior_delta < 1:
            raise ConfigurationError("prior_delta must lie in (0, 1)")


@dataclass(frozen=True)
class LlrScores:
    """Per-client log-likelihood ratios; positive means evidence of misbehavior."""

    values: np.ndarray
    rounds: tuple = field(default=())

    def __post_init__(self):
        v = np.clip(np.asarray(self.values, dtype=np.float64), -LLR_CLAMP, LLR_CLAMP)
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("LLR scores must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "rounds", tuple(self.rounds))


def test_groups(record, epsilon=0.02):
    """Binary outcome per group: 1 iff its accuracy < median - ``epsilon``.

    ``record`` may be a round record/view carrying ``group_utilities`` or a
    plain sequence of accuracies.
    """
    utils = getattr(record, "group_utilities", record)
    if utils is None:
        raise ConfigurationError("round carries no group utilities")
    acc = np.array([getattr(u, "accuracy", u) for u in utils], dtype=np.float64)
    if acc.size < 2:
        raise ConfigurationError("group testing needs at least two groups")
    return (acc < np.median(acc) - epsilon).astype(np.int8)


test_groups.__test__ = False  # not a pytest test


def _masks(A):
    A = np.asarray(A)
    weights = np.uint64(1) << np.arange(A.shape[1], dtype=np.uint64)
    return (A.astype(np.uint64) * weights).sum(axis=1).astype(np.uint64)


def _tables(L, N, ch):
    m = np.arange(L + 1)
    if ch.crossover_p == 0:
        loglik = np.where(m == 0, 0.0, -np.inf)
    else:
        loglik = m * np.log(ch.crossover_p) + (L - m) * np.log1p(-ch.crossover_p)
    c = np.arange(N + 1)
    logprior = c * np.log(ch.prior_delta) + (N - c) * np.log1p(-ch.prior_delta)
    return loglik.astype(np.float64), logprior.astype(np.float64)


def decode_marginals(outcomes, A, ch=ChannelModel(), rounds=(), backend=None):
    """Exact per-client LLR ``log P(t | d_n = 1) - log P(t | d_n = 0)``.

    Raises :class:`CapabilityError` above ``MAX_ENUM_CLIENTS`` clients and
    :class:`ConfigurationError` when the outcomes have zero probability under
    the channel (only possible with ``crossover_p == 0``).
    """
    A = np.asarray(A)
    t = np.asarray(outcomes).astype(np.uint8)
    if A.ndim != 2 or t.shape != (A.shape[0],):
        raise ConfigurationError("outcomes must have one entry per matrix row")
    L, N = A.shape
    if N > MAX_ENUM_CLIENTS:
        raise CapabilityError(
            f"exact decoding enumerates 2**N vectors and supports N <= {MAX_ENUM_CLIENTS}; "
            "split the clients into smaller test rounds and accumulate LLRs instead"
        )
    loglik, logprior = _tables(L, N, ch)
    kernel = _select(backend)
    wmax, s1, s0 = kernel.enumerate_sums(_masks(A), t, N, loglik, logprior)
    if wmax == -np.inf:
        raise ConfigurationError("observed outcomes are impossible under a noiseless channel")
    with np.errstate(divide="ignore"):
        post_logodds = np.log(s1) - np.log(s0)
    prior_logodds = np.log(ch.prior_delta) - np.log1p(-ch.prior_delta)
    llr = np.clip(post_logodds - prior_logodds, -LLR_CLAMP, LLR_CLAMP)
    return LlrScores(llr, rounds)


def posterior_from_llr(llr, prior_delta):
    """``P(d_n = 1 | t)`` recovered from LLRs and the prior."""
    z = np.asarray(getattr(llr, "values", llr)) + np.log(prior_delta) - np.log1p(-prior_delta)
    return 1.0 / (1.0 + np.exp(-z))


def posterior_marginals(outcomes, A, ch=ChannelModel()):
    """Direct joint-probability enumeration of ``P(d_n = 1 | t)``.

    Works in probability space with explicit bit matrices, independent of
    the log-space kernels; intended for small ``N`` cross-checks.
    """
    A = np.asarray(A, dtype=bool)
    t = np.asarray(outcomes, dtype=bool)
    L, N = A.shape
    D = ((np.arange(1 << N)[:, None] >> np.arange(N)) & 1).astype(bool)
    status = (D.astype(np.int64) @ A.T.astype(np.int64)) > 0
    flips = status != t
    lik = np.prod(np.where(flips, ch.crossover_p, 1 - ch.crossover_p), axis=1)
    prior = np.prod(np.where(D, ch.prior_delta, 1 - ch.prior_delta), axis=1)
    joint = lik * prior
    return (joint @ D) / joint.sum()


def accumulate_llr(per_round):
    """Componentwise sum of per-round LLRs, clamped to the LLR range."""
    per_round = list(per_round)
    if not per_round:
        raise ConfigurationError("nothing to accumulate")
    n = per_round[0].values.shape
    if any(s.values.shape != n for s in per_round):
        raise ConfigurationError("LLR vectors differ in length")
    total = np.sum([s.values for s in per_round], axis=0)
    rounds = tuple(r for s in per_round for r in s.rounds)
    return LlrScores(total, rounds)


def _select(backend):
    backend = backend or BACKEND
    if backend == "cython":
        if _decode_ext is None:
            raise CapabilityError("compiled decoder not available; build the extension or use backend='python'")
        return _decode_ext
    if backend == "python":
        return _decode_py
    raise ConfigurationError(f"unknown backend {backend!r}")
