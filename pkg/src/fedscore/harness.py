"""Experiment runner: seeded repetitions, scoring, pipelines and output files."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__, _rng
from . import baselines, evaluation, federation, qi
from .config import ExperimentConfig
from .data import (
    AttackSpec,
    PartitionSpec,
    apply_attack,
    inject_linear_noise,
    linear_noise_profile,
    load_csv,
    make_synthetic,
    partition,
    train_val_split,
)
from .errors import ConfigurationError, ConstructionError, FedScoreError, PipelineError
from .fedgt import decode as gtdecode
from .fedgt import matrix as gtmatrix
from .model import init_params

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA = "fedscore.manifest/1"
RESULT_COLUMNS = ["experiment_id", "method", "repetition", "round", "f1", "l2", "spearman", "wallclock_ms"]
PLOT_COLUMNS = ["method", "round", "mean_f1", "std_f1"]
SUMMARY_COLUMNS = [
    "method", "n", "final_round", "final_f1_mean", "final_f1_std", "best_round",
    "best_f1_mean", "best_f1_std", "l2_mean", "l2_std", "spearman_mean", "spearman_std",
]

POLARITY = {
    "mr_qi": "low_is_malicious",
    "1r_qi": "low_is_malicious",
    "mr_fedgt": "high_is_malicious",
    "1r_fedgt": "high_is_malicious",
    "cos": "low_is_malicious",
    "loo": "low_is_malicious",
}
GROUP_METHODS = {"mr_qi", "1r_qi", "mr_fedgt", "1r_fedgt"}


@dataclass
class PreparedData:
    shards: list
    valset: object
    attackers: tuple
    flip_probs: np.ndarray
    data_seed: int

    @property
    def num_clients(self):
        return len(self.shards)

    @property
    def md_truth(self):
        t = np.zeros(self.num_clients, dtype=np.int8)
        t[list(self.attackers)] = 1
        return t

    def ce_truth_probs(self):
        """Effective flip probabilities; a label-shifted client counts as fully flipped."""
        p = self.flip_probs.copy()
        p[list(self.attackers)] = 1.0
        return p


@dataclass
class Row:
    experiment_id: str
    method: str
    repetition: int
    round: int
    f1: float = math.nan
    l2: float = math.nan
    spearman: float = math.nan
    wallclock_ms: float = math.nan


@dataclass
class ResultsTable:
    config: ExperimentConfig
    seeds: dict
    rows: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    aggregates: dict = field(default_factory=dict)

    @property
    def experiment_id(self):
        return self.config.experiment_id

    def sort(self):
        self.rows.sort(key=lambda r: (r.method, r.repetition, r.round))

    def methods(self):
        return sorted({r.method for r in self.rows})

    def compute_aggregates(self):
        """Mean and population std of every metric per (method, round)."""
        groups = {}
        for r in self.rows:
            groups.setdefault((r.method, r.round), []).append(r)
        agg = {}
        for key, rows in sorted(groups.items()):
            entry = {"n": len(rows)}
            for metric in ("f1", "l2", "spearman"):
                vals = np.array([getattr(r, metric) for r in rows if not math.isnan(getattr(r, metric))])
                entry[f"{metric}_mean"] = float(vals.mean()) if vals.size else math.nan
                entry[f"{metric}_std"] = float(vals.std()) if vals.size else math.nan
            agg[key] = entry
        self.aggregates = agg
        return agg

    def series(self, method):
        """``[(round, mean_f1, std_f1)]`` for one method, rounds ascending."""
        return [(rnd, a["f1_mean"], a["f1_std"]) for (m, rnd), a in sorted(self.aggregates.items())
                if m == method and not math.isnan(a["f1_mean"])]

    def summary(self):
        out = []
        for m in self.methods():
            keys = sorted(rnd for (mm, rnd) in self.aggregates if mm == m)
            if not keys:
                continue
            final = self.aggregates[(m, keys[-1])]
            f1_rounds = [(rnd, self.aggregates[(m, rnd)]) for rnd in keys
                         if not math.isnan(self.aggregates[(m, rnd)]["f1_mean"])]
            best_rnd, best = (max(f1_rounds, key=lambda kv: (kv[1]["f1_mean"], -kv[0]))
                              if f1_rounds else (None, {"f1_mean": math.nan, "f1_std": math.nan}))
            out.append({
                "method": m, "n": final["n"], "final_round": keys[-1],
                "final_f1_mean": final["f1_mean"], "final_f1_std": final["f1_std"],
                "best_round": best_rnd, "best_f1_mean": best["f1_mean"], "best_f1_std": best["f1_std"],
                "l2_mean": final["l2_mean"], "l2_std": final["l2_std"],
                "spearman_mean": final["spearman_mean"], "spearman_std": final["spearman_std"],
            })
        return out

    def final_f1(self, method):
        """Per-repetition F1 at the last scored round of ``method``."""
        rows = [r for r in self.rows if r.method == method and not math.isnan(r.f1)]
        last = max((r.round for r in rows), default=None)
        return np.array([r.f1 for r in sorted(rows, key=lambda r: r.repetition) if r.round == last])


def _data_seed(cfg, rep):
    if cfg.vary_data:
        return _rng.derive_seed(cfg.seed, _rng.DATA, rep)
    return _rng.derive_seed(cfg.seed, _rng.DATA)


def prepare_data(cfg, rep=0):
    """Dataset, split, partition, attack and noise for one repetition.

    Without ``cfg.vary_data`` the result does not depend on ``rep``.
    """
    data_seed = _data_seed(cfg, rep)
    ds = cfg.dataset
    if ds.kind == "synthetic":
        data = make_synthetic(ds.classes, ds.dim, ds.samples, ds.sep, data_seed)
    else:
        data = load_csv(ds.path)
    train, val = train_val_split(data, cfg.val_fraction, data_seed)
    N = cfg.num_clients
    shards = partition(train, PartitionSpec(N, cfg.partition, cfg.alpha), data_seed)
    if isinstance(cfg.attackers, tuple):
        attackers = cfg.attackers
    else:
        rng = _rng.derive_rng(data_seed, _rng.REPETITION)
        attackers = tuple(sorted(int(a) for a in rng.choice(N, size=int(cfg.attackers), replace=False)))
    flip = np.zeros(N)
    if cfg.noise:
        flip = linear_noise_profile(N)
        # attackers carry the attack only
        flip[list(attackers)] = 0.0
        shards = inject_linear_noise(shards, flip, data_seed)
    shards = apply_attack(shards, AttackSpec(attackers))
    return PreparedData(shards, val, attackers, flip, data_seed)


def channel_for(cfg, num_attackers):
    delta = cfg.fedgt.prior_delta
    if delta is None:
        delta = num_attackers / cfg.num_clients if num_attackers else 0.2
    return gtdecode.ChannelModel(cfg.fedgt.crossover_p, delta)


def _matrix_factory(cfg, seed, needed):
    if not needed or cfg.mode != "silo":
        return None
    test_rounds = set(cfg.effective_test_rounds)
    f = cfg.fedgt

    def factory(t, clients):
        n = len(clients)
        if t not in test_rounds or n < 3:
            return None
        # small or shrunken client sets cannot host the configured shape:
        # a full-rank matrix always isolates someone, so keep L below n
        k = min(f.group_size, n - 1)
        L = min(max(f.groups, -(-n // k)), n - 1)
        while True:
            try:
                return gtmatrix.build_assignment(n, L, k, seed, f.strategy, round_index=t)
            except ConstructionError:
                if L <= -(-n // k):
                    raise
                L -= 1

    return factory


def _participants_factory(cfg, seed, structured_A=None):
    if cfg.mode != "device":
        return None

    def factory(t, active):
        K = min(cfg.participants, len(active))
        if structured_A is not None and len(active) == structured_A.shape[1]:
            row = structured_A[(t - 1) % structured_A.shape[0]]
            return tuple(a for a, bit in zip(active, row) if bit)
        rng = _rng.derive_rng(seed, _rng.SELECTION, t)
        return tuple(sorted(int(c) for c in rng.choice(active, size=K, replace=False)))

    return factory


def _to_full(values, clients, num_clients):
    out = np.zeros(num_clients)
    out[list(clients)] = values
    return out


def method_series(cfg, records, num_clients, valset, channel, methods=None):
    """Score vectors per method after each scored round.

    Returns ``{method: [(round, scores, elapsed_ms)]}``. Scores are length-N
    with zeros for clients absent from the scored rounds; FedGT entries are
    LLRs (positive = suspicious).
    """
    methods = tuple(methods if methods is not None else cfg.methods)
    spec = cfg.train.to_train_config().model
    test_set = set(cfg.effective_test_rounds)
    scored = [r for r in records if r.round_index in test_set]
    out = {m: [] for m in methods}
    acc = {}

    def timed(fn):
        t0 = time.perf_counter()
        res = fn()
        return res, (time.perf_counter() - t0) * 1e3

    if cfg.mode == "device":
        dev = qi.device_qi([r.view() for r in records], cfg.qi.ugly)
        by_round = {s.rounds[-1]: s for s in dev}
        prev_total = None
        for r in scored:
            if r.round_index not in by_round:
                continue
            total = by_round[r.round_index]
            single = total.scores - (prev_total.scores if prev_total is not None else 0.0)
            prev_total = total
            if "mr_qi" in methods:
                out["mr_qi"].append((r.round_index, total.scores.copy(), math.nan))
            if "1r_qi" in methods:
                out["1r_qi"].append((r.round_index, single, math.nan))
    prev_view = None
    for r in scored:
        view = r.view()
        has_groups = view.assignment is not None
        for m in methods:
            if m in GROUP_METHODS and not has_groups:
                continue
            if m == "1r_qi" and cfg.mode == "silo":
                res, ms = timed(lambda: qi.qi_silo_within(view, cfg.qi.tie_tol, cfg.qi.ugly))
                out[m].append((r.round_index, res.scores, ms))
            elif m == "mr_qi" and cfg.mode == "silo":
                def step():
                    d = qi.qi_silo_within(view, cfg.qi.tie_tol, cfg.qi.ugly)
                    if prev_view is not None:
                        d = d + qi.qi_silo_across(view, prev_view, cfg.qi.tie_tol)
                    return d if "mr_qi" not in acc else acc["mr_qi"] + d
                acc["mr_qi"], ms = timed(step)
                out[m].append((r.round_index, acc["mr_qi"].scores.copy(), ms))
            elif m in ("1r_fedgt", "mr_fedgt"):
                if "llr" not in acc or acc["llr"][0] != r.round_index:
                    def dec():
                        t = gtdecode.test_groups(view, cfg.fedgt.epsilon)
                        llr = gtdecode.decode_marginals(t, view.assignment, channel, rounds=(r.round_index,))
                        return gtdecode.LlrScores(_to_full(llr.values, view.clients, num_clients), llr.rounds)
                    llr, ms = timed(dec)
                    acc["llr"] = (r.round_index, llr, ms)
                _, llr, ms = acc["llr"]
                if m == "1r_fedgt":
                    out[m].append((r.round_index, llr.values, ms))
                else:
                    acc["mr_fedgt"] = llr if "mr_fedgt" not in acc else gtdecode.accumulate_llr([acc["mr_fedgt"], llr])
                    out[m].append((r.round_index, acc["mr_fedgt"].values.copy(), ms))
            elif m == "cos":
                res, ms = timed(lambda: baselines.cos_scores(r))
                acc["cos"] = res if "cos" not in acc else acc["cos"] + res
                out[m].append((r.round_index, acc["cos"].scores.copy(), ms))
            elif m == "loo":
                res, ms = timed(lambda: baselines.loo_scores(r, valset, spec))
                acc["loo"] = res if "loo" not in acc else acc["loo"] + res
                out[m].append((r.round_index, acc["loo"].scores.copy(), ms))
        if has_groups:
            prev_view = view
    return out


def _ce_scores(method, scores):
    return -scores if method in ("mr_fedgt", "1r_fedgt") else scores


def _rows_from_series(cfg, rep, series, clients, md_truth, ce_truth, timing, prefix="", with_f1=True):
    rows = []
    clients = list(clients)
    for m in sorted(series):
        entries = series[m]
        for i, (rnd, scores, ms) in enumerate(entries):
            row = Row(cfg.experiment_id, prefix + m, rep, rnd, wallclock_ms=ms if timing else math.nan)
            s = scores[clients]
            if with_f1:
                row.f1 = cluster_f1(s, POLARITY[m], md_truth[clients])
            if ce_truth is not None and i == len(entries) - 1:
                if len(clients) >= 3:
                    res = evaluation.ce_metrics(_ce_scores(m, s), ce_truth)
                    row.l2, row.spearman = res.l2, res.spearman
                else:
                    # too few survivors for a rank correlation; leave both empty
                    logger.warning("repetition %d: %d clients left, CE metrics skipped", rep, len(clients))
            rows.append(row)
    return rows


def cluster_f1(scores, polarity, truth):
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", evaluation.DegenerateScoresWarning)
        return evaluation.cluster_detect(scores, polarity, truth).f1


def _ce_truth(cfg, prep, clients):
    if not cfg.noise:
        return None
    return evaluation.ce_ground_truth(prep.ce_truth_probs()[list(clients)])


def _train(cfg, prep, rep_seed, on_round=None, mode_override=None):
    tc = cfg.train.to_train_config()
    C = prep.valset.num_classes
    d = prep.valset.dim
    model0 = init_params(tc.model, d, C, _rng.derive_seed(rep_seed, _rng.MODEL_INIT))
    needs_groups = bool(GROUP_METHODS & set(cfg.methods)) or (
        cfg.pipeline == "comprehensive" and cfg.md_method in GROUP_METHODS)
    matrix_seed = _rng.derive_seed(rep_seed, _rng.MATRIX)
    mf = _matrix_factory(cfg, matrix_seed, needs_groups)
    structured = None
    if cfg.mode == "device" and cfg.structured_selection:
        f = cfg.fedgt
        structured = gtmatrix.build_assignment(cfg.num_clients, f.groups, min(f.group_size, cfg.num_clients - 1),
                                               matrix_seed, "same")
    pf = _participants_factory(cfg, rep_seed, structured)
    if cfg.pipeline == "comprehensive":
        # group tests (MD) run on all active clients up to md_round; afterwards
        # the configured mode (silo groups or device sampling) takes over
        inner_pf, inner_mf = pf, mf
        md_mf = _matrix_factory(cfg.replace(mode="silo"), matrix_seed, True)

        def pf(t, active):
            return active if t <= cfg.md_round or inner_pf is None else inner_pf(t, active)

        def mf(t, clients):
            if t <= cfg.md_round:
                return md_mf(t, clients) if cfg.md_method in GROUP_METHODS else None
            return inner_mf(t, clients) if inner_mf is not None else None

        if cfg.mode == "silo":
            pf = None
    return federation.run_training(
        model0, prep.shards, tc, prep.valset, cfg.rounds, rep_seed,
        matrix_for_round=mf, participants_for_round=pf, on_round=on_round,
    )


def simulate(cfg, rep=0, prep=None):
    """Train one plain repetition; returns ``(prep, ServerView)`` for inspection."""
    prep = prep or prepare_data(cfg, rep)
    return prep, _train(cfg, prep, _rng.derive_seed(cfg.seed, _rng.REPETITION, rep))


def run_repetition(cfg, prep, rep, timing=False):
    rep_seed = _rng.derive_seed(cfg.seed, _rng.REPETITION, rep)
    view = _train(cfg, prep, rep_seed)
    channel = channel_for(cfg, len(prep.attackers))
    series = method_series(cfg, view.records, prep.num_clients, prep.valset, channel)
    clients = range(prep.num_clients)
    rows = _rows_from_series(cfg, rep, series, clients, prep.md_truth, _ce_truth(cfg, prep, clients), timing)
    extras = {"final_accuracy": view.records[-1].global_utility.accuracy, "attackers": list(prep.attackers)}
    return rows, extras


def run_comprehensive_repetition(cfg, prep, rep, timing=False, detector=None):
    """MD with ``md_method`` up to ``md_round``, exclusion, then CE on survivors.

    ``detector(scores, polarity)`` may replace clustering; it returns a 0/1
    vector over all clients.
    """
    rep_seed = _rng.derive_seed(cfg.seed, _rng.REPETITION, rep)
    channel = channel_for(cfg, len(prep.attackers))
    N = prep.num_clients
    md_cfg = cfg.replace(mode="silo", methods=[cfg.md_method],
                         test_rounds=list(range(2, cfg.md_round + 1)))
    md = {}

    def on_round(view, rec):
        if rec.round_index != cfg.md_round:
            return ()
        series = method_series(md_cfg, view.records, N, prep.valset, channel)[cfg.md_method]
        if not series:
            raise PipelineError(f"md_method {cfg.md_method} produced no scores by round {cfg.md_round}")
        scores = series[-1][1]
        pol = POLARITY[cfg.md_method]
        if detector is not None:
            predicted = np.asarray(detector(scores, pol), dtype=np.int8)
        else:
            import warnings
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", evaluation.DegenerateScoresWarning)
                predicted = evaluation.cluster_detect(scores, pol).predicted
        if predicted.all():
            raise PipelineError("every client was flagged; nothing left to train")
        md["predicted"] = predicted
        md["f1"] = evaluation.f1(predicted, prep.md_truth)
        return np.flatnonzero(predicted).tolist()

    view = _train(cfg, prep, rep_seed, on_round=on_round)
    excluded = sorted(int(c) for c in np.flatnonzero(md["predicted"]))
    survivors = [c for c in range(N) if c not in excluded]
    rows = [Row(cfg.experiment_id, "md:" + cfg.md_method, rep, cfg.md_round, f1=md["f1"])]
    post_cfg = cfg.replace(test_rounds=[t for t in cfg.effective_test_rounds if t > cfg.md_round])
    post = [r for r in view.records if r.round_index > cfg.md_round]
    ce_methods = [m for m in cfg.methods if not (cfg.mode == "device" and m in ("mr_fedgt", "1r_fedgt"))]
    series = method_series(post_cfg, post, N, prep.valset, channel, ce_methods)
    series = {m: s[-1:] for m, s in series.items() if s}
    rows += _rows_from_series(cfg, rep, series, survivors, prep.md_truth,
                              _ce_truth(cfg, prep, survivors), timing, prefix="ce:", with_f1=False)
    extras = {"final_accuracy": view.records[-1].global_utility.accuracy, "excluded": excluded,
              "attackers": list(prep.attackers)}
    return rows, extras


def _seeds(cfg):
    reps = range(cfg.repetitions)
    return {
        "master": cfg.seed,
        "data": [_data_seed(cfg, r) for r in reps] if cfg.vary_data else _data_seed(cfg, 0),
        "repetitions": [_rng.derive_seed(cfg.seed, _rng.REPETITION, r) for r in reps],
    }


def run_experiment(cfg, threads=1, timing=False, detector=None):
    """Run every repetition of ``cfg`` and collect a :class:`ResultsTable`.

    A repetition that raises a package error is recorded in ``errors`` and
    the others still run.
    """
    shared = None if cfg.vary_data else prepare_data(cfg)
    table = ResultsTable(cfg, _seeds(cfg))
    table.extras["combined_mode"] = cfg.combined

    def one(rep):
        try:
            prep = shared or prepare_data(cfg, rep)
            if cfg.pipeline == "comprehensive":
                return rep, run_comprehensive_repetition(cfg, prep, rep, timing, detector), None
            return rep, run_repetition(cfg, prep, rep, timing), None
        except FedScoreError as exc:
            logger.error("repetition %d failed: %s", rep, exc)
            return rep, None, {"repetition": rep, "error": type(exc).__name__, "message": str(exc)}

    reps = range(cfg.repetitions)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, reps))
    else:
        results = [one(r) for r in reps]
    per_rep = {}
    for rep, res, err in sorted(results, key=lambda x: x[0]):
        if err is not None:
            table.errors.append(err)
            continue
        rows, extras = res
        table.rows.extend(rows)
        per_rep[rep] = extras
    table.extras["repetitions"] = {str(k): v for k, v in sorted(per_rep.items())}
    table.sort()
    table.compute_aggregates()
    return table


def run_comprehensive(cfg, threads=1, timing=False, detector=None):
    if cfg.pipeline != "comprehensive":
        raise ConfigurationError("config pipeline is not 'comprehensive'")
    return run_experiment(cfg, threads, timing, detector)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else format(x, ".10g")


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def results_csv(table):
    return _csv_text(RESULT_COLUMNS, (
        [r.experiment_id, r.method, r.repetition, r.round, _fmt(r.f1), _fmt(r.l2), _fmt(r.spearman),
         _fmt(r.wallclock_ms)]
        for r in table.rows
    ))


def plot_csv(table):
    rows = []
    for (m, rnd), a in sorted(table.aggregates.items()):
        if not math.isnan(a["f1_mean"]):
            rows.append([m, rnd, _fmt(a["f1_mean"]), _fmt(a["f1_std"])])
    return _csv_text(PLOT_COLUMNS, rows)


def summary_csv(table):
    return _csv_text(SUMMARY_COLUMNS, ([_fmt(s[c]) if c != "method" else s[c] for c in SUMMARY_COLUMNS]
                                       for s in table.summary()))


def _sha(text):
    return hashlib.sha256(text.encode()).hexdigest()


def manifest_dict(table, files):
    return {
        "schema": MANIFEST_SCHEMA,
        "code_version": __version__,
        "decoder_backend": gtdecode.BACKEND,
        "config": table.config.to_dict(),
        "seeds": table.seeds,
        "errors": table.errors,
        "extras": _jsonable(table.extras),
        "digests": {name: _sha(text) for name, text in sorted(files.items())},
    }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(_fmt(x)) if _fmt(x) else None
    return x


def emit_outputs(table, out_dir):
    """Write results.csv, plot.csv, summary.csv and manifest.json under ``out_dir``."""
    for (m, rnd), a in table.aggregates.items():
        rows = [r.f1 for r in table.rows if r.method == m and r.round == rnd and not math.isnan(r.f1)]
        if rows and abs(float(np.mean(rows)) - a["f1_mean"]) > 1e-12:
            raise FedScoreError(f"aggregate for {m} round {rnd} is stale")
    files = {
        "results.csv": results_csv(table),
        "plot.csv": plot_csv(table),
        "summary.csv": summary_csv(table),
    }
    manifest = json.dumps(manifest_dict(table, files), indent=2, sort_keys=True) + "\n"
    try:
        os.makedirs(out_dir, exist_ok=True)
        paths = {}
        for name, text in [*files.items(), ("manifest.json", manifest)]:
            path = os.path.join(out_dir, name)
            with open(path, "w", newline="") as fh:
                fh.write(text)
            paths[name] = path
    except OSError as exc:
        raise ConfigurationError(f"cannot write outputs to {out_dir}: {exc}") from None
    return paths


def load_manifest(path):
    with open(path) as fh:
        m = json.load(fh)
    if m.get("schema") != MANIFEST_SCHEMA:
        raise ConfigurationError(f"{path}: not a fedscore manifest")
    return m


def replay(manifest_path, out_dir, threads=1):
    """Re-run the experiment recorded in a manifest.

    Returns ``(table, paths, matches)`` where ``matches`` tells whether the
    regenerated results.csv has the recorded digest.
    """
    m = load_manifest(manifest_path)
    cfg = ExperimentConfig.from_dict(m["config"])
    table = run_experiment(cfg, threads=threads)
    paths = emit_outputs(table, out_dir)
    with open(paths["results.csv"]) as fh:
        matches = _sha(fh.read()) == m["digests"].get("results.csv")
    return table, paths, matches
