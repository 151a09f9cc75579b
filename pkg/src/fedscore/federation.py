"""Federated rounds behind a simulated secure-aggregation boundary.

The server-side artifact of a round is a :class:`RoundRecord`. Privacy-
preserving methods only ever receive its :class:`RoundView` projection,
which physically lacks the per-client updates; the non-private baselines
take the full record and fail on a view.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _rng
from .errors import ConfigurationError, PrivacyBoundaryError
from .fedgt import matrix as gtmatrix
from .model import Utility, evaluate, train_local, weighted_average

logger = logging.getLogger(__name__)

SERVERVIEW_SCHEMA = "fedscore.serverview/1"

PRIVATE_METHODS = {}


def private_method(fn):
    """Mark ``fn`` as privacy-preserving: it must work on :class:`RoundView`."""
    fn.__fedscore_private__ = True
    PRIVATE_METHODS[f"{fn.__module__}.{fn.__qualname__}"] = fn
    return fn


@dataclass(frozen=True, slots=True)
class RoundView:
    """What a secure-aggregation server legitimately observes in one round."""

    round_index: int
    clients: tuple
    num_clients: int
    start_model: np.ndarray
    start_utility: Utility
    global_model: np.ndarray
    global_utility: Utility
    assignment: Optional[np.ndarray] = None
    group_models: Optional[tuple] = None
    group_utilities: Optional[tuple] = None

    @property
    def is_test_round(self):
        return self.assignment is not None

    def members(self, group):
        """Client ids of ``group`` (row of the assignment matrix)."""
        cols = np.flatnonzero(self.assignment[group])
        return [self.clients[c] for c in cols]


@dataclass(frozen=True)
class RoundRecord:
    """Full round artifact including the per-client updates (non-private)."""

    round_index: int
    clients: tuple
    num_clients: int
    start_model: np.ndarray
    start_utility: Utility
    global_model: np.ndarray
    global_utility: Utility
    weights: tuple
    raw_updates: Optional[tuple] = field(default=None, repr=False)
    assignment: Optional[np.ndarray] = None
    group_models: Optional[tuple] = None
    group_utilities: Optional[tuple] = None

    @property
    def is_test_round(self):
        return self.assignment is not None

    def view(self):
        return RoundView(
            self.round_index, self.clients, self.num_clients, self.start_model,
            self.start_utility, self.global_model, self.global_utility,
            self.assignment, self.group_models, self.group_utilities,
        )

    def members(self, group):
        cols = np.flatnonzero(self.assignment[group])
        return [self.clients[c] for c in cols]


def as_private(round_):
    """Project a record to its private view (views pass through unchanged)."""
    if isinstance(round_, RoundRecord):
        return round_.view()
    if isinstance(round_, RoundView):
        return round_
    raise TypeError(f"expected RoundRecord or RoundView, got {type(round_).__name__}")


def require_raw(round_):
    """Return a record's raw updates, refusing private views."""
    if isinstance(round_, RoundView):
        raise PrivacyBoundaryError("non-private method invoked on a privacy-preserving round view")
    if getattr(round_, "raw_updates", None) is None:
        raise PrivacyBoundaryError("round record carries no raw client updates")
    return round_.raw_updates


def _train_all(start, shards, participants, cfg, seed, round_index, threads):
    def job(cid):
        return train_local(start, shards[cid], cfg, _rng.derive_seed(seed, _rng.TRAIN, round_index, cid))

    if threads and threads > 1 and len(participants) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(job, participants))
    return [job(c) for c in participants]


def run_round(global_model, shards, cfg, valset, round_index, seed, A=None, participants=None,
              keep_raw=True, threads=1, start_utility=None):
    """Train participants from ``global_model`` and aggregate.

    ``participants=None`` is the cross-silo case (every client trains);
    otherwise it lists the selected client ids (cross-device). When ``A`` is
    given, its columns follow the participant order and one aggregate per row
    is formed with shard-size weights.
    """
    global_model = np.asarray(global_model, dtype=np.float64)
    if participants is None:
        participants = tuple(range(len(shards)))
    participants = tuple(int(c) for c in participants)
    if not participants:
        raise ConfigurationError("a round needs at least one participant")
    if A is not None:
        A = np.asarray(A, dtype=np.int8)
        if A.ndim != 2 or A.shape[1] != len(participants):
            raise ConfigurationError(
                f"assignment matrix has {A.shape[-1]} columns for {len(participants)} participants"
            )
    spec = cfg.model
    updates = _train_all(global_model, shards, participants, cfg, seed, round_index, threads)
    weights = tuple(float(len(shards[c])) for c in participants)
    new_global = weighted_average(updates, weights)
    if start_utility is None:
        start_utility = evaluate(global_model, valset, spec)
    group_models = group_utils = None
    if A is not None:
        group_models, group_utils = [], []
        for row in A:
            cols = np.flatnonzero(row)
            if cols.size == 0:
                raise ConfigurationError("assignment matrix has an empty group")
            gm = weighted_average([updates[c] for c in cols], [weights[c] for c in cols])
            group_models.append(gm)
            group_utils.append(evaluate(gm, valset, spec))
        group_models, group_utils = tuple(group_models), tuple(group_utils)
    return RoundRecord(
        round_index=round_index,
        clients=participants,
        num_clients=len(shards),
        start_model=global_model,
        start_utility=start_utility,
        global_model=new_global,
        global_utility=evaluate(new_global, valset, spec),
        weights=weights,
        raw_updates=tuple(updates) if keep_raw else None,
        assignment=A,
        group_models=group_models,
        group_utilities=group_utils,
    )


@dataclass
class ServerView:
    """Append-only sequence of round records plus the validation set they used."""

    valset: object
    records: list = field(default_factory=list)
    excluded: dict = field(default_factory=dict)

    def append(self, record):
        if self.records and record.round_index <= self.records[-1].round_index:
            raise ConfigurationError("rounds must be appended in increasing order")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def test_records(self):
        return [r for r in self.records if r.is_test_round]

    def to_dict(self):
        return {
            "schema": SERVERVIEW_SCHEMA,
            "validation_digest": _digest(self.valset.features, self.valset.labels),
            "excluded": {str(t): sorted(ids) for t, ids in sorted(self.excluded.items())},
            "rounds": [_record_dict(r) for r in self.records],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _util(u):
    return None if u is None else {"accuracy": float(u.accuracy), "loss": float(u.loss)}


def _record_dict(r):
    return {
        "round": r.round_index,
        "clients": list(r.clients),
        "start_utility": _util(r.start_utility),
        "global_utility": _util(r.global_utility),
        "global_digest": _digest(r.global_model),
        "assignment": None if r.assignment is None else gtmatrix.dumps(r.assignment),
        "group_utilities": None if r.group_utilities is None else [_util(u) for u in r.group_utilities],
        "group_digests": None if r.group_models is None else [_digest(m) for m in r.group_models],
        "raw_update_digests": None if r.raw_updates is None else [_digest(m) for m in r.raw_updates],
    }


def selection_matrix(num_clients, rounds, k, seed, structured_from=None):
    """``rounds x num_clients`` 0/1 participation matrix with ``k`` ones per row.

    With ``structured_from`` (an assignment matrix), rows are copied from it
    cyclically instead of sampled, so each round aggregates one test group.
    """
    if not 1 <= k <= num_clients:
        raise ConfigurationError(f"K={k} must lie in 1..{num_clients}")
    S = np.zeros((rounds, num_clients), dtype=np.int8)
    if structured_from is not None:
        A = np.asarray(structured_from, dtype=np.int8)
        if A.shape[1] != num_clients:
            raise ConfigurationError("structured selection matrix has the wrong client count")
        for t in range(rounds):
            S[t] = A[t % A.shape[0]]
        return S
    rng = _rng.derive_rng(seed, _rng.SELECTION)
    for t in range(rounds):
        S[t, rng.choice(num_clients, size=k, replace=False)] = 1
    return S


def run_training(
    global_model,
    shards: Sequence,
    cfg,
    valset,
    rounds: int,
    seed: int,
    matrix_for_round: Optional[Callable] = None,
    participants_for_round: Optional[Callable] = None,
    on_round: Optional[Callable] = None,
    keep_raw: bool = True,
    threads: int = 1,
):
    """Run ``rounds`` rounds (numbered from 1) and collect a :class:`ServerView`.

    ``matrix_for_round(t, active)`` returns the assignment matrix over the
    active client ids for a test round, or ``None``. With
    ``participants_for_round(t, active)`` the run is cross-device; otherwise
    every active client trains. ``on_round(view, record)`` may return client
    ids to exclude from every later round.
    """
    if rounds < 1:
        raise ConfigurationError("need at least one round")
    view = ServerView(valset)
    active = list(range(len(shards)))
    model = np.asarray(global_model, dtype=np.float64)
    start_util = evaluate(model, valset, cfg.model)
    for t in range(1, rounds + 1):
        parts = tuple(participants_for_round(t, tuple(active))) if participants_for_round else tuple(active)
        A = matrix_for_round(t, parts) if matrix_for_round else None
        rec = run_round(model, shards, cfg, valset, t, seed, A=A, participants=parts,
                        keep_raw=keep_raw, threads=threads, start_utility=start_util)
        view.append(rec)
        model, start_util = rec.global_model, rec.global_utility
        if on_round is not None:
            drop = sorted(set(on_round(view, rec) or ()) & set(active))
            if drop:
                view.excluded[t] = drop
                active = [c for c in active if c not in drop]
                logger.info("round %d: excluding clients %s from later rounds", t, drop)
                if not active:
                    break
    return view
