"""Command-line entry point: ``fedscore run|replay|matrix``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .config import load_config
from .errors import FedScoreError
from .fedgt import decode, matrix

log = logging.getLogger("fedscore")


def _common(p):
    p.add_argument("--out-dir", default="out", help="directory for output files (default: out)")
    p.add_argument("--threads", type=int, default=1, help="repetitions run in parallel")
    p.add_argument("--verbose", "-v", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="fedscore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment described by a JSON config")
    run.add_argument("config")
    run.add_argument("--timing", action="store_true", help="fill wallclock_ms (outputs stop being byte-stable)")
    _common(run)

    rep = sub.add_parser("replay", help="re-run from a manifest and compare results digests")
    rep.add_argument("manifest")
    _common(rep)

    mat = sub.add_parser("matrix", help="assignment-matrix tooling")
    msub = mat.add_subparsers(dest="action", required=True)
    gen = msub.add_parser("gen", help="sample a valid matrix and write it")
    gen.add_argument("file")
    gen.add_argument("--clients", "-n", type=int, required=True)
    gen.add_argument("--groups", "-l", type=int, required=True)
    gen.add_argument("--size", "-k", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--round", type=int, default=0)
    gen.add_argument("--strategy", choices=("prefixed", "same"), default="prefixed")
    _common(gen)
    chk = msub.add_parser("check", help="validate a matrix file")
    chk.add_argument("file")
    _common(chk)
    return parser


def _run(args):
    cfg = load_config(args.config)
    if cfg.combined:
        log.warning("attack and noise are both configured; this is a non-reference combined mode")
    table = harness.run_experiment(cfg, threads=args.threads, timing=args.timing)
    paths = harness.emit_outputs(table, args.out_dir)
    for s in table.summary():
        print(f"{s['method']:>12}  final F1 {s['final_f1_mean']:.3f} ± {s['final_f1_std']:.3f}"
              f"  best F1 {s['best_f1_mean']:.3f} (round {s['best_round']})")
    for e in table.errors:
        print(f"repetition {e['repetition']} failed: {e['error']}: {e['message']}", file=sys.stderr)
    print(f"wrote {', '.join(sorted(paths.values()))}")
    return 1 if table.errors else 0


def _replay(args):
    _, paths, ok = harness.replay(args.manifest, args.out_dir, threads=args.threads)
    print(f"results {'match' if ok else 'DIFFER from'} the manifest ({paths['results.csv']})")
    return 0 if ok else 1


def _matrix(args):
    if args.action == "gen":
        A = matrix.build_assignment(args.clients, args.groups, args.size, args.seed, args.strategy, args.round)
        matrix.write(args.file, A)
        print(f"wrote {args.groups}x{args.clients} matrix to {args.file}")
        return 0
    A = matrix.read(args.file)
    problems = matrix.validate(A)
    if problems:
        for p in problems:
            print(f"invalid: {p}")
        return 1
    print(f"ok: {A.shape[0]}x{A.shape[1]}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.info("decoder backend: %s", decode.BACKEND)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "replay":
            return _replay(args)
        return _matrix(args)
    except (FedScoreError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
