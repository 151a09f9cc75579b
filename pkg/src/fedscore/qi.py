"""Quality Inference scoring from group-aggregate utilities.

Every rule firing moves the score of each member of one group by exactly
+1 or -1:

* good: the better group of a comparison, +1
* bad: the worse group of a comparison, -1
* ugly: a group that did not improve on the previous global model, -1

Cross-device rounds compare consecutive rounds' improvements; cross-silo
rounds compare the assignment-matrix groups of a round with each other
(within) and with the groups of the previous test round (across).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError
from .federation import as_private, private_method


@dataclass
class QiScores:
    """Per-client QI scores with rule-firing bookkeeping.

    ``*_firings`` count rule firings; ``*_mass`` count the per-client score
    changes they caused (a firing on a group of ``k`` clients adds ``k``).
    """

    scores: np.ndarray
    good_firings: int = 0
    bad_firings: int = 0
    ugly_firings: int = 0
    good_mass: int = 0
    bad_mass: int = 0
    ugly_mass: int = 0
    rounds: tuple = field(default=())

    @classmethod
    def zeros(cls, num_clients):
        return cls(np.zeros(num_clients))

    def fire(self, rule, members):
        members = list(members)
        sign = 1.0 if rule == "good" else -1.0
        np.add.at(self.scores, members, sign)
        setattr(self, f"{rule}_firings", getattr(self, f"{rule}_firings") + 1)
        setattr(self, f"{rule}_mass", getattr(self, f"{rule}_mass") + len(members))

    def __add__(self, other):
        if self.scores.shape != other.scores.shape:
            raise ConfigurationError("QI score vectors differ in length")
        return QiScores(
            self.scores + other.scores,
            self.good_firings + other.good_firings,
            self.bad_firings + other.bad_firings,
            self.ugly_firings + other.ugly_firings,
            self.good_mass + other.good_mass,
            self.bad_mass + other.bad_mass,
            self.ugly_mass + other.ugly_mass,
            self.rounds + other.rounds,
        )

    @property
    def net_mass(self):
        """Total score implied by the counters alone."""
        return self.good_mass - self.bad_mass - self.ugly_mass


class Comparison(NamedTuple):
    """``left`` beats ``right`` when its utility exceeds right's by more than the tolerance.

    Groups are addressed as ``(round_index, group_index)``.
    """

    kind: str
    left: tuple
    right: tuple


def within_plan(round_index, num_groups):
    """All ``L * (L - 1)`` ordered group pairs of one round."""
    return [
        Comparison("within", (round_index, i), (round_index, j))
        for i in range(num_groups) for j in range(num_groups) if i != j
    ]


def across_plan(prev_round, prev_groups, curr_round, curr_groups):
    """Ordered comparisons between every current and every previous group, both ways."""
    plan = []
    for l in range(curr_groups):
        for m in range(prev_groups):
            plan.append(Comparison("across", (curr_round, l), (prev_round, m)))
            plan.append(Comparison("across", (prev_round, m), (curr_round, l)))
    return plan


def _apply_plan(plan, views, tie_tol, out):
    for cmp in plan:
        lv, rv = views[cmp.left[0]], views[cmp.right[0]]
        ul = lv.group_utilities[cmp.left[1]].accuracy
        ur = rv.group_utilities[cmp.right[1]].accuracy
        if ul > ur + tie_tol:
            out.fire("good", lv.members(cmp.left[1]))
            out.fire("bad", rv.members(cmp.right[1]))
    return out


def qi_device_round(prev_impr, curr_impr, participants_prev, participants_curr, num_clients, ugly=True):
    """Original cross-device rules for one pair of consecutive rounds.

    Improvements are validation-utility gains over the preceding global
    model. Good/bad fire when the current round improved more than the
    previous one; ugly fires when the current round did not improve.
    """
    out = QiScores.zeros(num_clients)
    if curr_impr > prev_impr:
        out.fire("good", participants_curr)
        out.fire("bad", participants_prev)
    if ugly and curr_impr <= 0:
        out.fire("ugly", participants_curr)
    return out


def _check_test_round(v):
    if v.assignment is None or v.group_utilities is None:
        raise ConfigurationError(f"round {v.round_index} carries no group utilities")
    if v.assignment.shape[1] != len(v.clients):
        raise ConfigurationError("assignment matrix columns do not match the round's clients")


@private_method
def qi_silo_within(round_, tie_tol=1e-4, ugly=True):
    """Pairwise within-round comparisons plus the ugly rule against the start model."""
    v = as_private(round_)
    _check_test_round(v)
    L = len(v.group_utilities)
    if L < 2:
        raise ConfigurationError("within-round comparisons need at least two groups")
    out = QiScores.zeros(v.num_clients)
    out.rounds = (v.round_index,)
    _apply_plan(within_plan(v.round_index, L), {v.round_index: v}, tie_tol, out)
    if ugly:
        base = v.start_utility.accuracy
        for l, u in enumerate(v.group_utilities):
            if u.accuracy <= base:
                out.fire("ugly", v.members(l))
    return out


@private_method
def qi_silo_across(curr, prev, tie_tol=1e-4):
    """Compare every group of ``curr`` with every group of ``prev``."""
    c, p = as_private(curr), as_private(prev)
    _check_test_round(c)
    _check_test_round(p)
    if c.num_clients != p.num_clients:
        raise ConfigurationError("rounds disagree on the number of clients")
    if c.round_index == p.round_index:
        raise ConfigurationError("across-round comparison needs two distinct rounds")
    out = QiScores.zeros(c.num_clients)
    plan = across_plan(p.round_index, len(p.group_utilities), c.round_index, len(c.group_utilities))
    return _apply_plan(plan, {c.round_index: c, p.round_index: p}, tie_tol, out)


def accumulate_qi(deltas):
    deltas = list(deltas)
    if not deltas:
        raise ConfigurationError("nothing to accumulate")
    total = deltas[0]
    for d in deltas[1:]:
        total = total + d
    return total


@private_method
def multi_round_qi(rounds, tie_tol=1e-4, ugly=True):
    """Cumulative MR-QI scores after each test round.

    Each test round contributes its within-round deltas and the across-round
    deltas against the preceding test round.
    """
    views = [as_private(r) for r in rounds if r.assignment is not None]
    series = []
    total = None
    prev = None
    for v in views:
        delta = qi_silo_within(v, tie_tol, ugly)
        if prev is not None:
            delta = delta + qi_silo_across(v, prev, tie_tol)
        total = delta if total is None else total + delta
        series.append(total)
        prev = v
    return series


@private_method
def device_qi(rounds, ugly=True):
    """Cumulative cross-device QI scores after each round from the second on."""
    views = [as_private(r) for r in rounds]
    series = []
    total = None
    for prev, curr in zip(views, views[1:]):
        prev_impr = prev.global_utility.accuracy - prev.start_utility.accuracy
        curr_impr = curr.global_utility.accuracy - curr.start_utility.accuracy
        delta = qi_device_round(prev_impr, curr_impr, prev.clients, curr.clients, curr.num_clients, ugly)
        delta.rounds = (curr.round_index,)
        total = delta if total is None else total + delta
        series.append(total)
    return series
