"""Non-private reference scores: cosine similarity (MD) and leave-one-out (CE).

Both read individual client updates, so they only accept full
:class:`~fedscore.federation.RoundRecord` objects.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .federation import require_raw
from .model import ModelSpec, evaluate, weighted_average

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BaselineScores:
    scores: np.ndarray
    method: str
    private: bool = False

    def __add__(self, other):
        if self.method != other.method:
            raise ConfigurationError("cannot add scores of different methods")
        return BaselineScores(self.scores + other.scores, self.method)


def _cosine(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cos_scores(record):
    """Cosine between each client's update and the aggregated update of the round.

    Non-participants score 0.
    """
    updates = require_raw(record)
    agg = record.global_model - record.start_model
    out = np.zeros(record.num_clients)
    for cid, m in zip(record.clients, updates):
        out[cid] = _cosine(m - record.start_model, agg)
    return BaselineScores(out, "cos")


def cos_accumulate(per_round):
    return _accumulate(per_round, "cos")


def loo_scores(record, valset, spec=ModelSpec()):
    """Accuracy of the full aggregate minus accuracy without each client.

    The remaining clients keep their shard-size weights, renormalized.
    """
    updates = require_raw(record)
    out = np.zeros(record.num_clients)
    if len(updates) < 2:
        logger.warning("round %d has a single participant; LOO contributes 0", record.round_index)
        return BaselineScores(out, "loo")
    full = evaluate(record.global_model, valset, spec).accuracy
    w = list(record.weights)
    for i, cid in enumerate(record.clients):
        rest = [u for j, u in enumerate(updates) if j != i]
        rest_w = [x for j, x in enumerate(w) if j != i]
        if sum(rest_w) == 0:
            continue
        out[cid] = full - evaluate(weighted_average(rest, rest_w), valset, spec).accuracy
    return BaselineScores(out, "loo")


def loo_accumulate(per_round):
    return _accumulate(per_round, "loo")


def _accumulate(per_round, method):
    per_round = list(per_round)
    if not per_round:
        raise ConfigurationError("nothing to accumulate")
    total = per_round[0].scores.copy()
    for s in per_round[1:]:
        if s.scores.shape != total.shape:
            raise ConfigurationError("score vectors differ in length")
        total = total + s.scores
    return BaselineScores(total, method)
