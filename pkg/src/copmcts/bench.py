"""Experiment harness behind the CLI: instance directories, paired solver
comparisons, oracle gaps and top-k tables.

Result files are plain CSV. The main files hold only deterministic fields;
wall-clock timings go to a ``*.timing.csv`` sidecar so that reruns with the
same seeds are byte-identical.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from .core import INFEASIBLE, CopInstance, RbParams, load_instance, rb_generate, save_instance
from .errors import CutoffUnknown, ParamError
from .heuristics import VAR_HEURISTICS, make_var_heuristic
from .neural import NeuralHeuristic, ScorerParams, load_params, save_params
from .search import DEFAULT_PROPAGATION, SolveReport, backtrack_solve, exact_optimum, gap
from .trainer import TrainConfig, Trainer

INSTANCE_SUFFIX = ".cop"
METHODS = tuple(VAR_HEURISTICS) + ("neural",)
RESULT_FIELDS = ["instance", "method", "nodes_first", "nodes_total", "best_objective",
                 "optimum", "gap", "cutoff"]
SUMMARY_FIELDS = ["method", "instances", "mean_nodes_first", "mean_nodes_total",
                  "reduction_pct", "cutoffs", "mean_gap", "gap_instances"]
TOPK_FIELDS = ["instance", "n", "k", "best_of_k", "optimum", "gap"]
TOPK_SUMMARY_FIELDS = ["n", "k", "mean_gap", "instances", "zero_gap", "excluded"]


@dataclass
class BenchRecord:
    instance: str
    method: str
    nodes_first: int
    nodes_total: int
    best_objective: float
    optimum: float | None  # None: oracle gave up; inf: proven infeasible
    gap: float | None
    wall_time: float
    cutoff: bool

    def row(self) -> list:
        return [self.instance, self.method, self.nodes_first, self.nodes_total,
                fmt_num(self.best_objective), fmt_opt(self.optimum),
                "" if self.gap is None else f"{self.gap:.6f}", int(self.cutoff)]


def fmt_num(x: float) -> str:
    if x == INFEASIBLE:
        return "inf"
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def fmt_opt(x: float | None) -> str:
    return "" if x is None else fmt_num(x)


def parse_num(tok: str) -> float | None:
    if tok == "":
        return None
    return math.inf if tok == "inf" else float(tok)


# -- instance directories ------------------------------------------------
def instance_name(params: RbParams) -> str:
    return f"rb_n{params.n}_d{fmt_num(params.delta)}_s{params.seed:06d}"


def generate_instances(params: RbParams, count: int, out_dir) -> list[Path]:
    """Write ``count`` instances with seeds params.seed .. params.seed+count-1."""
    if count < 0:
        raise ParamError("count must be non-negative")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        p = replace(params, seed=params.seed + i)
        path = out / (instance_name(p) + INSTANCE_SUFFIX)
        save_instance(rb_generate(p), path)
        paths.append(path)
    return paths


def load_dir(path) -> list[tuple[str, CopInstance]]:
    """All instance files of a directory, sorted by file name."""
    d = Path(path)
    if not d.is_dir():
        raise ParamError(f"instance directory not found: {d}")
    files = sorted(d.glob("*" + INSTANCE_SUFFIX))
    if not files:
        raise ParamError(f"no *{INSTANCE_SUFFIX} files in {d}")
    return [(f.stem, load_instance(f)) for f in files]


# -- training ------------------------------------------------------------
def train_dir(instance_dir, config: TrainConfig, out_weights, log_path=None,
              checkpoint=None, resume: bool = False) -> ScorerParams:
    instances = [inst for _, inst in load_dir(instance_dir)]
    if resume:
        if checkpoint is None or not Path(checkpoint).exists():
            raise ParamError("resume needs an existing checkpoint file")
        trainer = Trainer.from_checkpoint(checkpoint)
    else:
        trainer = Trainer(config)
    params = trainer.run(instances, checkpoint_path=checkpoint)
    save_params(params, out_weights)
    if log_path is not None:
        trainer.write_log(log_path)
    return params


# -- solving -------------------------------------------------------------
def make_heuristic(method: str, weights: ScorerParams | None = None):
    if method == "neural":
        if weights is None:
            raise ParamError("the neural heuristic needs a weights file")
        return NeuralHeuristic(weights)
    return make_var_heuristic(method)


def solve(instance: CopInstance, method: str, weights: ScorerParams | None = None,
          cutoff: int = 500_000, k: int = 1, propagation: str = DEFAULT_PROPAGATION) -> SolveReport:
    return backtrack_solve(instance, make_heuristic(method, weights), node_cutoff=cutoff, k=k,
                           propagation=propagation)


def oracle(instance: CopInstance, budget: int, propagation: str = DEFAULT_PROPAGATION) -> float | None:
    """Proven optimum, inf when infeasible, None when the budget ran out."""
    try:
        opt = exact_optimum(instance, node_cutoff=budget, propagation=propagation)
    except CutoffUnknown:
        return None
    return INFEASIBLE if opt is None else opt.objective


def _gap(best: float, optimum: float | None) -> float | None:
    if optimum is None or optimum == INFEASIBLE or best == INFEASIBLE:
        return None
    return gap(best, optimum)


def _bench_job(job):
    name, instance, methods, weights, cutoff, k, oracle_budget, propagation = job
    opt = oracle(instance, oracle_budget, propagation) if oracle_budget else None
    records = []
    for method in methods:
        t0 = time.perf_counter()
        rep = solve(instance, method, weights, cutoff, k, propagation)
        records.append(BenchRecord(name, method, rep.nodes_to_first, rep.total_nodes,
                                   rep.best_objective, opt, _gap(rep.best_objective, opt),
                                   time.perf_counter() - t0, rep.cutoff_hit))
    return records


def _run_jobs(fn, jobs: list, threads: int) -> list:
    if threads < 1:
        raise ParamError("threads must be at least 1")
    if threads == 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))  # map keeps submission order


def bench(instances: Sequence[tuple[str, CopInstance]], methods: Sequence[str],
          weights: ScorerParams | None = None, cutoff: int = 500_000, k: int = 1,
          oracle_budget: int = 2_000_000, threads: int = 1,
          propagation: str = DEFAULT_PROPAGATION) -> list[BenchRecord]:
    """Run every method on every instance (paired); ``oracle_budget=0`` skips the oracle."""
    for m in methods:
        if m not in METHODS:
            raise ParamError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    if "neural" in methods and weights is None:
        raise ParamError("the neural heuristic needs a weights file")
    jobs = [(name, inst, list(methods), weights, cutoff, k, oracle_budget, propagation)
            for name, inst in instances]
    out = []
    for recs in _run_jobs(_bench_job, jobs, threads):
        out.extend(recs)
    return out


def summarize(records: Iterable[BenchRecord]) -> list[dict]:
    """Per-method means, cutoff counts and reduction vs the best mean.

    reduction_pct = 100 * (1 - best_mean / method_mean), so the best method
    reads 0 and weaker baselines show how much the best one saves.
    """
    by_method: dict[str, list[BenchRecord]] = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r)
    if not by_method:
        return []
    means = {m: sum(r.nodes_first for r in rs) / len(rs) for m, rs in by_method.items()}
    best = min(means.values())
    rows = []
    for m, rs in by_method.items():
        gaps = [r.gap for r in rs if r.gap is not None]
        rows.append({
            "method": m, "instances": len(rs),
            "mean_nodes_first": means[m],
            "mean_nodes_total": sum(r.nodes_total for r in rs) / len(rs),
            "reduction_pct": reduction(best, means[m]),
            "cutoffs": sum(r.cutoff for r in rs),
            "mean_gap": sum(gaps) / len(gaps) if gaps else None,
            "gap_instances": len(gaps),
        })
    return rows


def reduction(reference: float, mean: float) -> float:
    return 0.0 if mean == 0 else 100.0 * (1.0 - reference / mean)


def write_records(records: Sequence[BenchRecord], path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_FIELDS)
        for r in records:
            w.writerow(r.row())
    with open(timing_path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance", "method", "wall_time"])
        for r in records:
            w.writerow([r.instance, r.method, f"{r.wall_time:.6f}"])


def timing_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".timing.csv")


def summary_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".summary.csv")


def read_records(path) -> list[BenchRecord]:
    """Inverse of write_records; wall times are re-attached from the sidecar if present."""
    path = Path(path)
    walls = {}
    tp = timing_path(path)
    if tp.exists():
        with open(tp, newline="") as fh:
            for row in csv.DictReader(fh):
                walls[(row["instance"], row["method"])] = float(row["wall_time"])
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(BenchRecord(
                row["instance"], row["method"], int(row["nodes_first"]), int(row["nodes_total"]),
                parse_num(row["best_objective"]), parse_num(row["optimum"]),
                parse_num(row["gap"]), walls.get((row["instance"], row["method"]), 0.0),
                row["cutoff"] == "1"))
    return out


def write_dicts(rows: Sequence[dict], fields: Sequence[str], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for row in rows:
            w.writerow([_cell(row[f]) for f in fields])


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6f}" if math.isfinite(x) else "inf"
    return str(x)


# -- top-k ---------------------------------------------------------------
def _topk_job(job):
    name, instance, method, weights, ks, cutoff, oracle_budget, propagation = job
    opt = oracle(instance, oracle_budget, propagation)
    rep = solve(instance, method, weights, cutoff, max(ks), propagation)
    rows = []
    for k in ks:
        b = rep.best_of_first(k)
        rows.append({"instance": name, "n": instance.num_variables, "k": k, "best_of_k": b,
                     "optimum": opt, "gap": _gap(b, opt)})
    return rows


def topk(instances: Sequence[tuple[str, CopInstance]], ks: Sequence[int],
         weights: ScorerParams | None = None, method: str = "neural", cutoff: int = 500_000,
         oracle_budget: int = 2_000_000, threads: int = 1,
         propagation: str = DEFAULT_PROPAGATION) -> list[dict]:
    """Per-instance best-of-first-k objective and its gap to the oracle optimum."""
    ks = sorted(set(ks))
    if not ks or ks[0] < 1:
        raise ParamError("k values must be positive")
    if method == "neural" and weights is None:
        raise ParamError("the neural heuristic needs a weights file")
    jobs = [(name, inst, method, weights, ks, cutoff, oracle_budget, propagation)
            for name, inst in instances]
    out = []
    for rows in _run_jobs(_topk_job, jobs, threads):
        out.extend(rows)
    return out


def topk_summary(rows: Iterable[dict]) -> list[dict]:
    """Average gap per (n, k); instances without a proven finite optimum or
    without any solution are excluded and counted."""
    cells: dict[tuple[int, int], dict] = {}
    for r in rows:
        c = cells.setdefault((r["n"], r["k"]), {"gaps": [], "excluded": 0})
        if r["gap"] is None:
            c["excluded"] += 1
        else:
            c["gaps"].append(r["gap"])
    out = []
    for (n, k), c in sorted(cells.items()):
        g = c["gaps"]
        out.append({"n": n, "k": k, "mean_gap": sum(g) / len(g) if g else None,
                    "instances": len(g), "zero_gap": sum(1 for x in g if x == 0),
                    "excluded": c["excluded"]})
    return out


def topk_rows_for_csv(rows: Iterable[dict]) -> list[dict]:
    return [{**r, "best_of_k": fmt_num(r["best_of_k"]), "optimum": fmt_opt(r["optimum"]),
             "gap": None if r["gap"] is None else float(r["gap"])} for r in rows]


def load_weights(path) -> ScorerParams:
    if not Path(path).exists():
        raise ParamError(f"weights file not found: {path}")
    return load_params(path)
