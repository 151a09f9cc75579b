"""Seed sweeps at desk scale: 15 clients, 20 rounds, 5 label-shift attackers.

Each "seed" is one repetition with its own data, split and attacker draw.
"""

import numpy as np
import pytest

from fedscore import harness
from fedscore.config import ExperimentConfig
from fedscore.evaluation import cluster_detect, f1
from fedscore.fedgt.decode import test_groups

from .oracles import best_two_cluster_split, f1_brute

pytestmark = pytest.mark.slow

SEEDS = 10
DESK = dict(num_clients=15, rounds=20, attackers=5, repetitions=SEEDS, vary_data=True)


def desk(**kw):
    return ExperimentConfig.from_dict({**DESK, **kw})


@pytest.fixture(scope="module")
def iid_runs():
    cfg = desk(methods=["mr_qi", "1r_qi", "mr_fedgt", "1r_fedgt"])
    runs = []
    for rep in range(SEEDS):
        prep, view = harness.simulate(cfg, rep)
        channel = harness.channel_for(cfg, len(prep.attackers))
        series = harness.method_series(cfg, view.records, 15, prep.valset, channel)
        runs.append((prep, view, series))
    return cfg, runs


def _gap(scores, truth):
    return scores[truth == 1].mean() - scores[truth == 0].mean()


@pytest.mark.xfail(strict=True, reason="median-minus-epsilon thresholding flags at most half of the groups, "
                                       "while 5/15 attackers touch nearly every group of a 6x15 k=5 matrix")
def test_every_attacker_group_positive(iid_runs):
    cfg, runs = iid_runs
    hits = 0
    for prep, view, _ in runs:
        rec = view.test_records[-1]
        t = test_groups(rec.view(), cfg.fedgt.epsilon)
        dirty = rec.assignment[:, list(prep.attackers)].any(axis=1)
        hits += bool(np.all(t[dirty] == 1))
    assert hits >= 8


def test_median_rule_caps_positive_groups(iid_runs):
    # the reason the sweep above cannot pass
    cfg, runs = iid_runs
    for _, view, _ in runs:
        for rec in view.test_records:
            t = test_groups(rec.view(), cfg.fedgt.epsilon)
            assert t.sum() <= len(t) // 2


def test_accumulated_llr_gap_wider_than_any_round(iid_runs):
    _, runs = iid_runs
    wins = 0
    for prep, _, series in runs:
        truth = prep.md_truth
        single = max(_gap(s, truth) for _, s, _ in series["1r_fedgt"])
        wins += _gap(series["mr_fedgt"][-1][1], truth) > single
    assert wins >= 8


def test_single_round_qi_favours_benign(iid_runs):
    _, runs = iid_runs
    wins = 0
    for prep, _, series in runs:
        total = np.sum([s for _, s, _ in series["1r_qi"]], axis=0)
        wins += _gap(total, prep.md_truth) < 0
    assert wins >= 9


def test_mr_qi_beats_best_single_round_every_seed(iid_runs):
    _, runs = iid_runs
    for prep, _, series in runs:
        truth = prep.md_truth
        mr = harness.cluster_f1(series["mr_qi"][-1][1], "low_is_malicious", truth)
        best = max(harness.cluster_f1(s, "low_is_malicious", truth) for _, s, _ in series["1r_qi"])
        assert mr >= best


def test_mr_qi_clustering_matches_threshold_oracle(iid_runs):
    _, runs = iid_runs
    for prep, _, series in runs:
        scores = series["mr_qi"][-1][1]
        predicted = cluster_detect(scores, "low_is_malicious").predicted
        oracle = best_two_cluster_split(scores).astype(int)
        assert np.array_equal(predicted, oracle)
        assert abs(f1(predicted, prep.md_truth) - f1_brute(oracle, prep.md_truth)) <= 1e-12


def test_loo_tracks_noise_profile():
    cfg = desk(attackers=0, noise=True, methods=["loo"])
    table = harness.run_experiment(cfg)
    rhos = [r.spearman for r in table.rows if r.round == cfg.rounds]
    assert len(rhos) == SEEDS
    assert sum(r > 0 for r in rhos) >= 8


def test_comprehensive_exclusion_keeps_accuracy():
    plain = harness.run_experiment(desk(methods=["mr_qi"]))
    defended = harness.run_comprehensive(desk(methods=["mr_qi"], pipeline="comprehensive", md_round=6))
    assert defended.errors == []
    wins = 0
    for rep in range(SEEDS):
        a = defended.extras["repetitions"][str(rep)]["final_accuracy"]
        b = plain.extras["repetitions"][str(rep)]["final_accuracy"]
        wins += a >= b
    assert wins >= 8

