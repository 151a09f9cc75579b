import dataclasses
import inspect
import json

import numpy as np
import pytest

from fedscore import _rng, baselines, qi
from fedscore.data import PartitionSpec, make_synthetic, partition
from fedscore.errors import ConfigurationError, PrivacyBoundaryError
from fedscore.federation import (
    PRIVATE_METHODS,
    RoundRecord,
    RoundView,
    ServerView,
    as_private,
    require_raw,
    run_round,
    run_training,
    selection_matrix,
)
from fedscore.fedgt.matrix import FIVE_CLIENT_EXAMPLE, build_assignment
from fedscore.model import ModelSpec, TrainConfig, init_params, train_local, weighted_average

CFG = TrainConfig(local_epochs=1, batch_size=16, learning_rate=0.05, momentum=0.9)


def _setup(N=5, n=500, mode="iid"):
    data = make_synthetic(3, 4, n, 2.0, seed=0)
    val = make_synthetic(3, 4, 150, 2.0, seed=1)
    shards = partition(data, PartitionSpec(N, mode), seed=0)
    return shards, val, init_params(ModelSpec(), 4, 3, seed=0)


def test_single_client_global_is_local_model():
    shards, val, w0 = _setup(N=1)
    rec = run_round(w0, shards, CFG, val, 1, seed=3)
    local = train_local(w0, shards[0], CFG, _rng.derive_seed(3, _rng.TRAIN, 1, 0))
    assert np.array_equal(rec.global_model, local)


def test_identity_groups_are_client_models():
    shards, val, w0 = _setup(N=4)
    rec = run_round(w0, shards, CFG, val, 2, seed=0, A=np.eye(4, dtype=int))
    for g, u in zip(rec.group_models, rec.raw_updates):
        assert np.array_equal(g, u)


def test_five_client_example_group_aggregate():
    shards, val, w0 = _setup(N=5)
    rec = run_round(w0, shards, CFG, val, 2, seed=0, A=FIVE_CLIENT_EXAMPLE)
    assert rec.members(0) == [0, 2, 3]
    expected = np.mean([rec.raw_updates[i] for i in (0, 2, 3)], axis=0)
    np.testing.assert_allclose(rec.group_models[0], expected, rtol=1e-13, atol=1e-15)
    assert len(rec.group_utilities) == 3


def test_global_model_ignores_grouping():
    shards, val, w0 = _setup(N=5, mode="dirichlet")
    plain = run_round(w0, shards, CFG, val, 2, seed=0)
    grouped = run_round(w0, shards, CFG, val, 2, seed=0, A=FIVE_CLIENT_EXAMPLE)
    assert np.array_equal(plain.global_model, grouped.global_model)
    np.testing.assert_array_equal(grouped.global_model,
                                  weighted_average(grouped.raw_updates, [len(s) for s in shards]))


def test_column_mismatch():
    shards, val, w0 = _setup(N=4)
    with pytest.raises(ConfigurationError):
        run_round(w0, shards, CFG, val, 2, seed=0, A=FIVE_CLIENT_EXAMPLE)


def test_device_round_trains_only_participants():
    shards, val, w0 = _setup(N=5)
    rec = run_round(w0, shards, CFG, val, 1, seed=0, participants=(1, 3))
    assert rec.clients == (1, 3)
    assert len(rec.raw_updates) == 2
    with pytest.raises(ConfigurationError):
        run_round(w0, shards, CFG, val, 1, seed=0, participants=())


def test_threads_do_not_change_results():
    shards, val, w0 = _setup(N=5)
    a = run_round(w0, shards, CFG, val, 1, seed=0, threads=1)
    b = run_round(w0, shards, CFG, val, 1, seed=0, threads=3)
    assert a.global_model.tobytes() == b.global_model.tobytes()


def test_one_round_run():
    shards, val, w0 = _setup()
    view = run_training(w0, shards, CFG, val, rounds=1, seed=0)
    assert len(view) == 1


def test_default_test_rounds_skip_first():
    data = make_synthetic(3, 4, 1500, 2.0, seed=0)
    val = make_synthetic(3, 4, 150, 2.0, seed=1)
    shards = partition(data, PartitionSpec(15), seed=0)
    w0 = init_params(ModelSpec(), 4, 3, seed=0)
    view = run_training(w0, shards, CFG, val, rounds=20, seed=0,
                        matrix_for_round=lambda t, c: build_assignment(len(c), 6, 5, 0, round_index=t) if t > 1 else None)
    assert len(view) == 20
    assert len(view.test_records) == 19
    assert all(len(r.group_models) == 6 for r in view.test_records)
    assert view.records[0].group_models is None


def test_exclusion_removes_client_from_later_rounds():
    shards, val, w0 = _setup(N=5)
    view = run_training(w0, shards, CFG, val, rounds=4, seed=0,
                        on_round=lambda v, r: [2] if r.round_index == 2 else ())
    assert view.excluded == {2: [2]}
    for r in view.records:
        assert (2 in r.clients) == (r.round_index <= 2)
    later = view.records[3]
    np.testing.assert_array_equal(later.global_model,
                                  weighted_average(later.raw_updates, [len(shards[c]) for c in later.clients]))


def test_server_view_order_and_json():
    shards, val, w0 = _setup(N=5)
    mf = lambda t, c: FIVE_CLIENT_EXAMPLE if t == 2 else None  # noqa: E731
    a = run_training(w0, shards, CFG, val, rounds=3, seed=7, matrix_for_round=mf)
    b = run_training(w0, shards, CFG, val, rounds=3, seed=7, matrix_for_round=mf)
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json())
    assert d["schema"] == "fedscore.serverview/1"
    assert [r["round"] for r in d["rounds"]] == [1, 2, 3]
    assert d["rounds"][1]["assignment"].startswith("3 5 3\n")
    assert len(d["rounds"][1]["group_digests"]) == 3
    with pytest.raises(ConfigurationError):
        a.append(a.records[0])


def test_selection_matrix():
    S = selection_matrix(10, 6, 4, seed=0)
    assert S.shape == (6, 10) and np.all(S.sum(axis=1) == 4)
    A = build_assignment(10, 3, 4, 0)
    S2 = selection_matrix(10, 6, 4, seed=0, structured_from=A)
    assert np.array_equal(S2[:3], A) and np.array_equal(S2[3:], A)
    with pytest.raises(ConfigurationError):
        selection_matrix(3, 2, 4, seed=0)


# -- the secure-aggregation boundary --------------------------------------

def _record():
    shards, val, w0 = _setup(N=5)
    return run_round(w0, shards, CFG, val, 2, seed=0, A=FIVE_CLIENT_EXAMPLE), val


def test_view_has_no_raw_updates():
    fields = {f.name for f in dataclasses.fields(RoundView)}
    assert "raw_updates" not in fields and "weights" not in fields
    rec, _ = _record()
    view = rec.view()
    assert not hasattr(view, "raw_updates")
    with pytest.raises((AttributeError, TypeError)):
        object.__setattr__(view, "raw_updates", rec.raw_updates)
    assert as_private(view) is view
    assert isinstance(as_private(rec), RoundView)
    with pytest.raises(TypeError):
        as_private(object())


def test_private_methods_never_touch_raw_updates():
    assert {"fedscore.qi.qi_silo_within", "fedscore.qi.qi_silo_across",
            "fedscore.qi.multi_round_qi", "fedscore.qi.device_qi"} <= set(PRIVATE_METHODS)
    for name, fn in PRIVATE_METHODS.items():
        src = inspect.getsource(fn)
        assert "raw_updates" not in src and "require_raw" not in src, name
        assert "as_private" in src, name


def test_private_methods_run_on_views():
    rec, _ = _record()
    view = rec.view()
    assert np.array_equal(qi.qi_silo_within(view).scores, qi.qi_silo_within(rec).scores)


def test_non_private_methods_refuse_views():
    rec, val = _record()
    with pytest.raises(PrivacyBoundaryError):
        baselines.cos_scores(rec.view())
    with pytest.raises(PrivacyBoundaryError):
        baselines.loo_scores(rec.view(), val)
    stripped = dataclasses.replace(rec, raw_updates=None)
    with pytest.raises(PrivacyBoundaryError):
        require_raw(stripped)
    assert isinstance(rec, RoundRecord)
    assert baselines.cos_scores(rec).private is False


def test_server_view_json_is_reproducible_file(tmp_path):
    shards, val, w0 = _setup(N=3)
    view = run_training(w0, shards, CFG, val, rounds=2, seed=1)
    assert isinstance(view, ServerView)
    p = tmp_path / "sv.json"
    p.write_text(view.to_json())
    assert json.loads(p.read_text())["rounds"][0]["raw_update_digests"]
