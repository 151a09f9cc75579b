"""Synthetic data, client partitioning, label noise and the label-shift attack."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import _rng
from .errors import ConfigurationError
from .model import LabeledDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    mode: str = "iid"
    alpha: float = 0.5

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigurationError("num_clients must be positive")
        if self.mode not in ("iid", "dirichlet"):
            raise ConfigurationError(f"unknown partition mode {self.mode!r}")
        if self.mode == "dirichlet" and not self.alpha > 0:
            raise ConfigurationError("dirichlet alpha must be positive")


@dataclass(frozen=True)
class AttackSpec:
    attackers: tuple[int, ...] = ()
    kind: str = "label_shift"

    def __post_init__(self):
        if self.kind != "label_shift":
            raise ConfigurationError(f"unknown attack kind {self.kind!r}")
        object.__setattr__(self, "attackers", tuple(sorted({int(a) for a in self.attackers})))


def linear_noise_profile(num_clients):
    """Flip probability ``n / (N + 1)`` for clients numbered ``n = 1..N``.

    Index ``i`` of the returned array is client ``i + 1``.
    """
    n = np.arange(1, num_clients + 1, dtype=np.float64)
    return n / (num_clients + 1)


def make_synthetic(num_classes, dim, n, sep, seed):
    """Balanced Gaussian class clusters with unit variance.

    With ``dim >= num_classes`` the class means sit at ``sep / sqrt(2)`` times
    the first ``num_classes`` basis vectors, so every pair is exactly ``sep``
    apart. With fewer dimensions the means are laid out on the first axis at
    spacing ``sep``.
    """
    if num_classes < 2 or dim < 1:
        raise ConfigurationError("need at least 2 classes and 1 dimension")
    if n < num_classes:
        raise ConfigurationError(f"n={n} is smaller than the number of classes {num_classes}")
    rng = _rng.derive_rng(seed, _rng.DATA)
    means = np.zeros((num_classes, dim))
    if dim >= num_classes:
        means[np.arange(num_classes), np.arange(num_classes)] = sep / np.sqrt(2.0)
    else:
        means[:, 0] = sep * np.arange(num_classes)
    labels = rng.permutation(np.arange(n) % num_classes)
    features = means[labels] + rng.standard_normal((n, dim))
    return LabeledDataset(features, labels, num_classes)


def load_csv(path):
    """Read a dataset from CSV with a header row and an integer ``label`` column.

    All other columns are parsed as real-valued features, in file order.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigurationError(f"{path}: empty CSV file") from None
        header = [h.strip() for h in header]
        if "label" not in header:
            raise ConfigurationError(f"{path}: missing 'label' column")
        li = header.index("label")
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ConfigurationError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                labels.append(int(row[li]))
                feats.append([float(v) for j, v in enumerate(row) if j != li])
            except ValueError as exc:
                raise ConfigurationError(f"{path}:{lineno}: {exc}") from None
    if not labels:
        raise ConfigurationError(f"{path}: no data rows")
    labels = np.asarray(labels)
    if labels.min() < 0:
        raise ConfigurationError(f"{path}: labels must be nonnegative")
    return LabeledDataset(np.asarray(feats, dtype=np.float64).reshape(len(labels), -1),
                          labels, max(int(labels.max()) + 1, 2))


def train_val_split(data, val_fraction, seed):
    """Hold out ``val_fraction`` of the rows (at least one) as a validation set."""
    if not 0 < val_fraction < 1:
        raise ConfigurationError("val_fraction must lie in (0, 1)")
    n = len(data)
    n_val = max(1, int(round(n * val_fraction)))
    if n_val >= n:
        raise ConfigurationError("dataset too small for a validation split")
    perm = _rng.derive_rng(seed, _rng.VALSPLIT).permutation(n)
    return data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))


def partition(data, spec, seed):
    """Split ``data`` into ``spec.num_clients`` disjoint shards.

    IID: a random permutation cut into near-equal pieces. Dirichlet: for each
    class, client proportions are drawn from ``Dirichlet(alpha)`` and that
    class's rows are dealt out accordingly. Clients left empty receive one row
    from the currently largest client.
    """
    N = spec.num_clients
    n = len(data)
    if n < N:
        raise ConfigurationError(f"{n} rows cannot cover {N} clients")
    rng = _rng.derive_rng(seed, _rng.PARTITION)
    if spec.mode == "iid":
        parts = [np.sort(p) for p in np.array_split(rng.permutation(n), N)]
    else:
        buckets = [[] for _ in range(N)]
        for c in range(data.num_classes):
            idx = rng.permutation(np.flatnonzero(data.labels == c))
            if idx.size == 0:
                continue
            props = rng.dirichlet(np.full(N, spec.alpha))
            cuts = (np.cumsum(props)[:-1] * idx.size).astype(np.int64)
            for client, chunk in enumerate(np.split(idx, cuts)):
                buckets[client].extend(chunk.tolist())
        for client in range(N):
            if not buckets[client]:
                donor = max(range(N), key=lambda j: (len(buckets[j]), -j))
                buckets[client].append(buckets[donor].pop())
                logger.info("partition repair: moved one row from client %d to empty client %d",
                            donor, client)
        parts = [np.sort(np.asarray(b, dtype=np.int64)) for b in buckets]
    return [data.subset(p) for p in parts]


def inject_linear_noise(shards, profile, seed):
    """Flip each label of client ``i`` with probability ``profile[i]``.

    A flipped label is replaced by a uniformly chosen *different* class. The
    realized number of flips is stored under ``meta["label_flips"]`` and the
    probability under ``meta["flip_prob"]``.
    """
    profile = np.asarray(profile, dtype=np.float64)
    if profile.shape != (len(shards),):
        raise ConfigurationError("noise profile length must match the number of shards")
    if np.any(profile < 0) or np.any(profile >= 1):
        raise ConfigurationError("flip probabilities must lie in [0, 1)")
    out = []
    for i, (shard, p) in enumerate(zip(shards, profile)):
        rng = _rng.derive_rng(seed, _rng.NOISE, i)
        C = shard.num_classes
        flip = rng.random(len(shard)) < p
        offset = rng.integers(1, C, size=len(shard))
        labels = np.where(flip, (shard.labels + offset) % C, shard.labels)
        out.append(shard.with_labels(labels, label_flips=int(flip.sum()), flip_prob=float(p)))
    return out


def apply_attack(shards, spec):
    """Label shift: every label ``y`` of an attacker becomes ``(y + 1) mod C``."""
    N = len(shards)
    bad = [a for a in spec.attackers if not 0 <= a < N]
    if bad:
        raise ConfigurationError(f"attacker indices {bad} outside 0..{N - 1}")
    attackers = set(spec.attackers)
    return [
        s.with_labels((s.labels + 1) % s.num_classes, attacked=True) if i in attackers else s
        for i, s in enumerate(shards)
    ]
