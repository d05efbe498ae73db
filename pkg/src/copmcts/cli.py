"""``copmcts`` command line: generate | train | solve | bench | topk.

Exit status: 0 on success, 2 on a configuration error (bad flags, missing
files, malformed inputs), 3 on a runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench as B
from .core import RbParams, load_instance
from .errors import CopError, FormatError, ParamError
from .search import DEFAULT_CUTOFF, DEFAULT_PROPAGATION, PROPAGATIONS
from .trainer import RECORD_MODES, TrainConfig

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _k_value(tok: str) -> float:
    if tok in ("inf", "all"):
        return float("inf")
    v = int(tok)
    if v < 1:
        raise argparse.ArgumentTypeError("k must be at least 1")
    return v


def _int_list(tok: str) -> list[int]:
    try:
        return [int(x) for x in tok.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {tok!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("--out", type=Path, help="output file or directory")
    common.add_argument("--propagation", choices=PROPAGATIONS, default=DEFAULT_PROPAGATION)
    common.add_argument("-v", "--verbose", action="store_true")

    solving = argparse.ArgumentParser(add_help=False)
    solving.add_argument("--cutoff", type=int, default=DEFAULT_CUTOFF, help="search node budget")
    solving.add_argument("--weights", type=Path, help="trained weights for --var-heur neural")

    p = argparse.ArgumentParser(prog="copmcts", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write random RB-model instances")
    g.add_argument("--m", type=int, default=2, help="constraint arity")
    g.add_argument("--n", type=int, default=15, help="number of variables")
    g.add_argument("--gamma", type=float, default=0.7)
    g.add_argument("--beta", type=float, default=3.0)
    g.add_argument("--rho", type=float, default=0.21)
    g.add_argument("--delta", type=float, default=0)
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--repeat-scopes", action="store_true",
                   help="allow repeated scopes when e exceeds the number of distinct scopes")
    g.add_argument("--normalize", action="store_true", help="divide weights by delta")

    t = sub.add_parser("train", parents=[common], help="MCTS self-play training")
    t.add_argument("instance_dir", type=Path)
    d = TrainConfig()
    t.add_argument("--t-max", type=int, default=d.t_max)
    t.add_argument("--n-sim", type=int, default=d.n_sim)
    t.add_argument("--capacity", type=int, default=d.capacity)
    t.add_argument("--batch", type=int, default=d.batch_size)
    t.add_argument("--lr", type=float, default=d.lr)
    t.add_argument("--c1", type=float, default=d.c1)
    t.add_argument("--c3", type=float, default=d.c3)
    t.add_argument("--c4", type=float, default=d.c4)
    t.add_argument("--alpha-step", type=float, default=d.alpha_step)
    t.add_argument("--sync-every", type=int, default=d.sync_every, help="0 disables step syncs")
    t.add_argument("--no-instance-sync", action="store_true")
    t.add_argument("--p", type=int, default=d.p, help="embedding width")
    t.add_argument("--K", type=int, default=d.K, help="message-passing rounds")
    t.add_argument("--hidden", type=int, default=d.hidden)
    t.add_argument("--record", choices=RECORD_MODES, default=d.record,
                   help="store one transition per iteration (leaf) or per path decision (path)")
    t.add_argument("--log", type=Path, help="training log CSV")
    t.add_argument("--checkpoint", type=Path)
    t.add_argument("--checkpoint-every", type=int, default=0, help="instances between checkpoints")
    t.add_argument("--resume", action="store_true")

    s = sub.add_parser("solve", parents=[common, solving], help="backtracking solve of one instance")
    s.add_argument("instance", type=Path)
    s.add_argument("--var-heur", choices=B.METHODS, default="domtdeg")
    s.add_argument("--k", type=_k_value, default=1, help="solutions to record (inf for all)")

    b = sub.add_parser("bench", parents=[common, solving], help="paired heuristic comparison")
    b.add_argument("instance_dir", type=Path)
    b.add_argument("--methods", default="mindom,domddeg,domtdeg,impact")
    b.add_argument("--k", type=_k_value, default=1)
    b.add_argument("--oracle-cutoff", type=int, default=2_000_000, help="0 skips the oracle")

    k = sub.add_parser("topk", parents=[common, solving], help="best-of-first-k gap table")
    k.add_argument("instance_dir", type=Path)
    k.add_argument("--k", type=_int_list, default=[1, 5, 10, 20])
    k.add_argument("--var-heur", choices=B.METHODS, default="neural")
    k.add_argument("--oracle-cutoff", type=int, default=2_000_000)
    return p


def _cmd_generate(a) -> int:
    params = RbParams(a.m, a.n, a.gamma, a.beta, a.rho, a.delta, seed=a.seed,
                      repeat_scopes=a.repeat_scopes, normalize=a.normalize)
    paths = B.generate_instances(params, a.count, a.out or Path("instances"))
    print(f"wrote {len(paths)} instances")
    return EXIT_OK


def _cmd_train(a) -> int:
    cfg = TrainConfig(t_max=a.t_max, n_sim=a.n_sim, capacity=a.capacity, batch_size=a.batch,
                      c1=a.c1, c3=a.c3, c4=a.c4, alpha_step=a.alpha_step, sync_every=a.sync_every,
                      sync_per_instance=not a.no_instance_sync, lr=a.lr, seed=a.seed, p=a.p, K=a.K,
                      hidden=a.hidden, propagation=a.propagation, checkpoint_every=a.checkpoint_every,
                      record=a.record)
    out = a.out or Path("weights.cqnw")
    B.train_dir(a.instance_dir, cfg, out, log_path=a.log, checkpoint=a.checkpoint, resume=a.resume)
    print(f"weights written to {out}")
    return EXIT_OK


def _weights(a):
    return B.load_weights(a.weights) if a.weights is not None else None


def _cmd_solve(a) -> int:
    if not a.instance.exists():
        raise ParamError(f"instance file not found: {a.instance}")
    inst = load_instance(a.instance)
    rep = B.solve(inst, a.var_heur, _weights(a), a.cutoff, a.k, a.propagation)
    if a.out:
        rep.write_csv(a.out)
    status = "cutoff" if rep.cutoff_hit else "complete"
    print(f"solutions={len(rep.solutions)} best={B.fmt_num(rep.best_objective)} "
          f"nodes_first={rep.nodes_to_first} nodes_total={rep.total_nodes} ({status})")
    return EXIT_OK


def _cmd_bench(a) -> int:
    methods = [m for m in a.methods.split(",") if m]
    insts = B.load_dir(a.instance_dir)
    recs = B.bench(insts, methods, _weights(a), a.cutoff, a.k, a.oracle_cutoff, a.threads, a.propagation)
    summary = B.summarize(recs)
    if a.out:
        B.write_records(recs, a.out)
        B.write_dicts(summary, B.SUMMARY_FIELDS, B.summary_path(a.out))
    print(f"{'method':<10} {'mean nodes':>11} {'reduction':>10} {'#cutoff':>8} {'mean gap':>9}")
    for r in summary:
        mg = "-" if r["mean_gap"] is None else f"{r['mean_gap']:.2f}%"
        print(f"{r['method']:<10} {r['mean_nodes_first']:>11.2f} {r['reduction_pct']:>9.2f}% "
              f"{r['cutoffs']:>8} {mg:>9}")
    return EXIT_OK


def _cmd_topk(a) -> int:
    insts = B.load_dir(a.instance_dir)
    rows = B.topk(insts, a.k, _weights(a), a.var_heur, a.cutoff, a.oracle_cutoff, a.threads,
                  a.propagation)
    summary = B.topk_summary(rows)
    if a.out:
        B.write_dicts(B.topk_rows_for_csv(rows), B.TOPK_FIELDS, a.out)
        B.write_dicts(summary, B.TOPK_SUMMARY_FIELDS, B.summary_path(a.out))
    print(f"{'n':>3} {'k':>4} {'mean gap':>9} {'at 0%':>6} {'excluded':>9}")
    for r in summary:
        mg = "-" if r["mean_gap"] is None else f"{r['mean_gap']:.2f}%"
        print(f"{r['n']:>3} {r['k']:>4} {mg:>9} {r['zero_gap']:>4}/{r['instances']:<2} {r['excluded']:>8}")
    return EXIT_OK


COMMANDS = {"generate": _cmd_generate, "train": _cmd_train, "solve": _cmd_solve,
            "bench": _cmd_bench, "topk": _cmd_topk}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[a.command](a)
    except (ParamError, FormatError, FileNotFoundError) as exc:
        print(f"copmcts: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CopError as exc:
        print(f"copmcts: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # keep the documented exit code for anything unexpected
        print(f"copmcts: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
