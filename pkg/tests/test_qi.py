import numpy as np
import pytest

from fedscore.errors import ConfigurationError
from fedscore.federation import RoundView
from fedscore.model import Utility
from fedscore.qi import (
    QiScores,
    accumulate_qi,
    across_plan,
    device_qi,
    multi_round_qi,
    qi_device_round,
    qi_silo_across,
    qi_silo_within,
    within_plan,
)


def make_view(accs, A, round_index=2, start_acc=0.0, global_acc=None, clients=None, num_clients=None):
    A = np.asarray(A, dtype=np.int8)
    N = A.shape[1]
    clients = tuple(range(N)) if clients is None else tuple(clients)
    z = np.zeros(1)
    return RoundView(
        round_index, clients, num_clients or max(clients) + 1, z, Utility(start_acc, 1.0), z,
        Utility(np.mean(accs) if global_acc is None else global_acc, 1.0), A,
        tuple(z for _ in accs), tuple(Utility(a, 1.0) for a in accs),
    )


DISJOINT = np.kron(np.eye(3, dtype=int), np.ones((1, 2), dtype=int))  # groups {0,1} {2,3} {4,5}


def test_device_rule_examples():
    d = qi_device_round(0.02, 0.05, [0, 1], [2, 3], 5)
    assert d.scores.tolist() == [-1, -1, 1, 1, 0]
    d = qi_device_round(-0.05, -0.01, [0, 1], [2, 3], 5)
    assert d.scores.tolist() == [-1, -1, 0, 0, 0]
    assert (d.good_firings, d.bad_firings, d.ugly_firings) == (1, 1, 1)
    d = qi_device_round(0.03, 0.03, [0], [1], 2)
    assert d.good_firings == d.bad_firings == 0
    d = qi_device_round(0.03, 0.03, [0], [1], 2, ugly=False)
    assert d.scores.tolist() == [0, 0]


def test_within_all_equal_only_ugly():
    v = make_view([0.5, 0.5, 0.5], DISJOINT, start_acc=0.6)
    d = qi_silo_within(v, tie_tol=0)
    assert d.good_firings == d.bad_firings == 0
    assert d.ugly_firings == 3
    assert np.all(d.scores == -1)
    quiet = qi_silo_within(make_view([0.5, 0.5, 0.5], DISJOINT, start_acc=0.4), tie_tol=0)
    assert np.all(quiet.scores == 0)


def test_within_counts_ordered_pairs():
    d = qi_silo_within(make_view([0.9, 0.5, 0.5], DISJOINT), tie_tol=0.0, ugly=False)
    assert d.scores.tolist() == [2, 2, -1, -1, -1, -1]


def test_within_tie_tolerance():
    d = qi_silo_within(make_view([0.50005, 0.5, 0.3], DISJOINT), tie_tol=1e-4, ugly=False)
    assert d.scores.tolist() == [1, 1, 1, 1, -2, -2]


def test_within_needs_two_groups():
    with pytest.raises(ConfigurationError):
        qi_silo_within(make_view([0.5], np.ones((1, 3))))
    with pytest.raises(ConfigurationError):
        qi_silo_within(make_view([0.5, 0.4], DISJOINT[:2]).__class__(
            2, (0, 1), 2, np.zeros(1), Utility(0, 1), np.zeros(1), Utility(0, 1)))


def test_across_examples():
    prev = make_view([0.5, 0.5, 0.5], DISJOINT, round_index=2)
    curr = make_view([0.5, 0.5, 0.5], DISJOINT, round_index=3)
    assert np.all(qi_silo_across(curr, prev).scores == 0)
    one = np.ones((1, 3), dtype=int)
    p = make_view([0.4], one, round_index=2, clients=(0, 1, 2), num_clients=4)
    c = make_view([0.6], np.array([[1, 1, 0, 0]]), round_index=3, clients=(0, 3, 1, 2), num_clients=4)
    d = qi_silo_across(c, p)
    # current members {0, 3} gain, previous members {0, 1, 2} lose
    assert d.scores.tolist() == [0, -1, -1, 1]


def test_across_symmetric_firing():
    one = np.ones((1, 2), dtype=int)
    d = qi_silo_across(make_view([0.3], one, round_index=3), make_view([0.6], one, round_index=2))
    assert d.good_firings == 1 and d.bad_firings == 1
    assert d.scores.tolist() == [0, 0]


def test_across_rejects_mismatch():
    a = make_view([0.5, 0.5], DISJOINT[:2, :4], round_index=2)
    b = make_view([0.5, 0.5, 0.5], DISJOINT, round_index=3)
    with pytest.raises(ConfigurationError):
        qi_silo_across(b, a)
    with pytest.raises(ConfigurationError):
        qi_silo_across(b, b)


def test_plan_sizes():
    for L in range(1, 7):
        assert len(within_plan(2, L)) == L * (L - 1)
        plan = across_plan(2, L, 3, L)
        assert len(plan) == 2 * L * L
        for g in range(L):
            touching = [c for c in plan if (3, g) in (c.left, c.right)]
            assert len(touching) == 2 * L


def test_accumulate_examples():
    d = QiScores(np.array([1.0, -1.0]), good_mass=1, bad_mass=1)
    assert accumulate_qi([d]) is d
    tot = accumulate_qi([d, d])
    assert tot.scores.tolist() == [2, -2]
    assert tot.good_mass == 2
    with pytest.raises(ConfigurationError):
        accumulate_qi([])
    with pytest.raises(ConfigurationError):
        d + QiScores.zeros(3)


def test_score_mass_matches_counters():
    A = np.array([[1, 1, 0, 0, 1], [0, 1, 1, 1, 0], [1, 0, 1, 0, 1]])
    views = [make_view(acc, A, round_index=t, start_acc=0.55)
             for t, acc in [(2, [0.6, 0.5, 0.7]), (3, [0.65, 0.5, 0.52]), (4, [0.4, 0.8, 0.6])]]
    series = multi_round_qi(views)
    assert len(series) == 3
    total = series[-1]
    assert total.scores.sum() == total.net_mass
    assert total.rounds == (2, 3, 4)


def test_multi_round_equals_within_plus_across():
    A = DISJOINT
    v2 = make_view([0.6, 0.5, 0.7], A, round_index=2)
    v3 = make_view([0.65, 0.55, 0.52], A, round_index=3)
    expected = qi_silo_within(v2) + qi_silo_within(v3) + qi_silo_across(v3, v2)
    assert np.array_equal(multi_round_qi([v2, v3])[-1].scores, expected.scores)


def test_device_qi_series():
    z = np.zeros(1)
    views = [
        RoundView(t, parts, 4, z, Utility(s, 1), z, Utility(g, 1))
        for t, parts, s, g in [(1, (0, 1), 0.1, 0.3), (2, (2, 3), 0.3, 0.6), (3, (0, 2), 0.6, 0.55)]
    ]
    series = device_qi(views)
    assert len(series) == 2
    # round 2 improved more than round 1: {2,3} +1, {0,1} -1; round 3 fell: ugly on {0,2}
    assert series[0].scores.tolist() == [-1, -1, 1, 1]
    assert series[1].scores.tolist() == [-2, -1, 0, 1]
