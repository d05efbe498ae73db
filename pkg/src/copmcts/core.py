"""
copmcts.core
Data model for weighted table-constraint problems (COP / CSP / WGCP).

An instance is a triple (variables, domains, constraints). Every constraint is
a table: a map from allowed value tuples of its scope to a non-negative weight;
tuples missing from the table are forbidden. The objective of a complete
assignment is the sum of the selected tuple weights.

Also provides the RB-model random generator and a small line-oriented text
format for instances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import FormatError, ParamError, UnboundVariable

INFEASIBLE = math.inf


def _trusted(cls, **fields):
    # skips __post_init__; only for data that is valid by construction
    obj = object.__new__(cls)
    for name, value in fields.items():
        object.__setattr__(obj, name, value)
    return obj


@dataclass(frozen=True, eq=True)
class Constraint:
    scope: tuple[int, ...]
    relation: Mapping[tuple, float]

    def __post_init__(self):
        object.__setattr__(self, "scope", tuple(int(v) for v in self.scope))
        object.__setattr__(self, "relation", {tuple(k): w for k, w in self.relation.items()})
        if len(set(self.scope)) != len(self.scope):
            raise ParamError(f"constraint scope has repeated variables: {self.scope}")
        bad = [key for key in self.relation if len(key) != len(self.scope)]
        if bad:
            raise ParamError(f"tuple {bad[0]} does not match scope {self.scope}")

    @property
    def arity(self) -> int:
        return len(self.scope)

    def weight(self, values: tuple) -> float:
        """Weight of a value tuple, or INFEASIBLE when the tuple is forbidden."""
        return self.relation.get(tuple(values), INFEASIBLE)


@dataclass(frozen=True, eq=True)
class CopInstance:
    """Immutable (X, D, C) triple.

    ``arity`` is the largest scope size; generated instances use it for every
    constraint while hand-built ones (unary costs plus binary all-different)
    may mix smaller scopes. ``delta`` bounds every tuple weight.
    """

    num_variables: int
    domains: tuple[tuple[int, ...], ...]
    constraints: tuple[Constraint, ...]
    arity: int
    delta: float = 0

    def __post_init__(self):
        object.__setattr__(self, "domains", tuple(tuple(int(v) for v in d) for d in self.domains))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if len(self.domains) != self.num_variables:
            raise ParamError(f"expected {self.num_variables} domains, got {len(self.domains)}")
        for i, dom in enumerate(self.domains):
            if not dom:
                raise ParamError(f"variable {i} has an empty domain")
            if len(set(dom)) != len(dom):
                raise ParamError(f"variable {i} has repeated domain values")
        if self.delta < 0:
            raise ParamError("delta must be non-negative")
        domain_sets = [set(d) for d in self.domains]
        for j, c in enumerate(self.constraints):
            if not 1 <= c.arity <= self.arity:
                raise ParamError(f"constraint {j} has arity {c.arity}, instance arity is {self.arity}")
            for v in c.scope:
                if not 0 <= v < self.num_variables:
                    raise ParamError(f"constraint {j} references unknown variable {v}")
            if not c.relation:
                continue
            # column-wise checks: much cheaper than testing every tuple
            for pos, v in enumerate(c.scope):
                stray = {key[pos] for key in c.relation} - domain_sets[v]
                if stray:
                    key = next(k for k in c.relation if k[pos] in stray)
                    raise ParamError(f"constraint {j}: tuple {key} outside the scoped domains")
            if not all(0 <= w <= self.delta for w in c.relation.values()):
                w = next(w for w in c.relation.values() if not 0 <= w <= self.delta)
                raise ParamError(f"constraint {j}: weight {w} outside [0, {self.delta}]")

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    @cached_property
    def compiled(self) -> "CompiledInstance":
        return CompiledInstance(self)


def evaluate_objective(instance: CopInstance, assignment: Mapping[int, int]) -> float:
    """Sum of selected tuple weights; ``INFEASIBLE`` if any tuple is forbidden."""
    missing = [i for i in range(instance.num_variables) if i not in assignment]
    if missing:
        raise UnboundVariable(f"variables {missing} are unbound")
    total = 0
    for c in instance.constraints:
        w = c.relation.get(tuple(assignment[v] for v in c.scope))
        if w is None:
            return INFEASIBLE
        total += w
    return total


class CompiledInstance:
    """Index-based view of an instance used by the search machinery.

    Values of variable ``i`` are addressed by their position in
    ``instance.domains[i]``; current domains are int bitmasks over positions.
    Binary constraints get per-value support masks so forward checking is a
    single AND per neighbour.
    """

    def __init__(self, instance: CopInstance):
        self.n = instance.num_variables
        self.values = instance.domains
        self.dsize = [len(d) for d in instance.domains]
        self.full_mask = [(1 << k) - 1 for k in self.dsize]
        self.index_of = [{v: k for k, v in enumerate(d)} for d in instance.domains]
        self.scopes = [c.scope for c in instance.constraints]
        self.var_ctrs: list[list[tuple[int, int]]] = [[] for _ in range(self.n)]
        for j, scope in enumerate(self.scopes):
            for pos, v in enumerate(scope):
                self.var_ctrs[v].append((j, pos))
        self.neighbors = [sorted({u for j, _ in self.var_ctrs[v] for u in self.scopes[j] if u != v})
                          for v in range(self.n)]

        self.tuples: list[list[tuple[int, ...]]] = []
        self.weights: list[dict[tuple[int, ...], float]] = []
        self.max_weight: list[float] = []
        # supports[j][pos][k] = mask over the other position's values (binary only)
        self.supports: list[tuple[list[int], list[int]] | None] = []
        for j, c in enumerate(instance.constraints):
            idx = [self.index_of[v] for v in c.scope]
            wt = {tuple(idx[p][val] for p, val in enumerate(key)): w for key, w in c.relation.items()}
            self.weights.append(wt)
            self.tuples.append(sorted(wt))
            self.max_weight.append(max(wt.values()) if wt else 0)
            if c.arity == 2:
                a, b = c.scope
                s0 = [0] * self.dsize[a]
                s1 = [0] * self.dsize[b]
                for ia, ib in wt:
                    s0[ia] |= 1 << ib
                    s1[ib] |= 1 << ia
                self.supports.append((s0, s1))
            else:
                self.supports.append(None)


@dataclass(frozen=True)
class RbParams:
    """Parameters of the RB random model.

    d = round(n**gamma) values per variable, e = round(beta * n * ln n)
    constraints, floor(rho * d**m) forbidden tuples per constraint and integer
    weights uniform in [0, delta] on the rest.

    ``repeat_scopes`` lets two constraints share a scope (the classic RB
    drawing); without it, e must not exceed C(n, m).
    """

    m: int
    n: int
    gamma: float
    beta: float
    rho: float
    delta: float
    seed: int = 0
    repeat_scopes: bool = False
    normalize: bool = False

    def __post_init__(self):
        if self.m < 2 or self.n < 2:
            raise ParamError("RB model needs m >= 2 and n >= 2")
        if self.m > self.n:
            raise ParamError("arity cannot exceed the number of variables")
        if not (self.gamma > 0 and self.beta > 0):
            raise ParamError("gamma and beta must be positive")
        if not 0 <= self.rho < 1:
            raise ParamError("rho must lie in [0, 1)")
        if self.delta < 0:
            raise ParamError("delta must be non-negative")
        if self.delta != int(self.delta):
            raise ParamError("delta must be integral; use normalize for fractional weights")

    @property
    def domain_size(self) -> int:
        return _round_half_up(self.n ** self.gamma)

    @property
    def num_constraints(self) -> int:
        return _round_half_up(self.beta * self.n * math.log(self.n))

    @property
    def num_disallowed(self) -> int:
        return math.floor(self.rho * self.domain_size ** self.m)


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def rb_generate(params: RbParams) -> CopInstance:
    m, n = params.m, params.n
    d, e, forbid = params.domain_size, params.num_constraints, params.num_disallowed
    if not params.repeat_scopes and e > math.comb(n, m):
        raise ParamError(f"{e} constraints requested but only {math.comb(n, m)} distinct scopes exist")
    rng = np.random.default_rng(params.seed)
    delta = int(params.delta)

    scopes = []
    seen = set()
    while len(scopes) < e:
        scope = tuple(sorted(rng.choice(n, size=m, replace=False).tolist()))
        if not params.repeat_scopes:
            if scope in seen:
                continue
            seen.add(scope)
        scopes.append(scope)

    all_tuples = list(itertools.product(range(d), repeat=m))
    constraints = []
    for scope in scopes:
        drop = set(rng.choice(len(all_tuples), size=forbid, replace=False).tolist()) if forbid else set()
        kept = [t for k, t in enumerate(all_tuples) if k not in drop] if drop else all_tuples
        weights = rng.integers(0, delta + 1, size=len(kept)).tolist()
        if params.normalize and delta > 0:
            weights = [w / delta for w in weights]
        constraints.append(_trusted(Constraint, scope=scope, relation=dict(zip(kept, weights))))

    out_delta = 1 if params.normalize and delta > 0 else delta
    return _trusted(CopInstance, num_variables=n, domains=tuple(tuple(range(d)) for _ in range(n)),
                    constraints=tuple(constraints), arity=m, delta=out_delta)


def assignment_problem(costs: Sequence[Sequence[float]]) -> CopInstance:
    """Workers-to-tasks instance: one variable per row, values are task columns.

    Pairwise all-different binary constraints carry weight 0; a unary
    constraint per worker carries that row's task costs.
    """
    costs = [list(row) for row in costs]
    n, k = len(costs), len(costs[0])
    tasks = tuple(range(k))
    cons = []
    for a, b in itertools.combinations(range(n), 2):
        cons.append(Constraint((a, b), {(s, t): 0 for s in tasks for t in tasks if s != t}))
    for a in range(n):
        cons.append(Constraint((a,), {(t,): costs[a][t] for t in tasks}))
    delta = max(max(row) for row in costs)
    return CopInstance(n, tuple(tasks for _ in range(n)), tuple(cons), 2, delta)


# --------------------------------------------------------------------------
# text format
#   cop <m> <n> <d> <e> <delta>
#   var <idx> <values...>
#   ctr <idx> <scope...>
#   tup <v1> ... <vk> <weight>
# --------------------------------------------------------------------------

def _fmt_num(x) -> str:
    if isinstance(x, (int, np.integer)) or float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def _parse_num(tok: str, lineno: int, what: str):
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        val = float(tok)
    except ValueError:
        raise FormatError(f"line {lineno}: {what} {tok!r} is not a number") from None
    if not math.isfinite(val):
        raise FormatError(f"line {lineno}: {what} {tok!r} is not finite")
    return val


def dumps_instance(instance: CopInstance) -> str:
    d = max(len(dom) for dom in instance.domains)
    lines = [f"cop {instance.arity} {instance.num_variables} {d} {instance.num_constraints} "
             f"{_fmt_num(instance.delta)}"]
    for i, dom in enumerate(instance.domains):
        lines.append(f"var {i} " + " ".join(map(str, dom)))
    for j, c in enumerate(instance.constraints):
        lines.append(f"ctr {j} " + " ".join(map(str, c.scope)))
        for key, w in c.relation.items():
            lines.append("tup " + " ".join(map(str, key)) + " " + _fmt_num(w))
    return "\n".join(lines) + "\n"


def save_instance(instance: CopInstance, path) -> None:
    Path(path).write_text(dumps_instance(instance), encoding="utf-8")


def loads_instance(text: str) -> CopInstance:
    lines = [(k + 1, ln.split()) for k, ln in enumerate(text.splitlines()) if ln.strip()]
    if not lines:
        raise FormatError("line 1: empty instance file")
    lineno, head = lines[0]
    if head[0] != "cop" or len(head) != 6:
        raise FormatError(f"line {lineno}: expected header 'cop <m> <n> <d> <e> <delta>'")
    try:
        m, n, d, e = (int(t) for t in head[1:5])
    except ValueError:
        raise FormatError(f"line {lineno}: header counts must be integers") from None
    delta = _parse_num(head[5], lineno, "delta")

    domains: list[tuple[int, ...]] = []
    constraints = []
    scope = None
    relation: dict = {}
    ctr_line = 0

    def close_constraint():
        if scope is not None:
            try:
                constraints.append(Constraint(scope, relation))
            except ParamError as exc:
                raise FormatError(f"line {ctr_line}: {exc}") from None

    for lineno, toks in lines[1:]:
        kind = toks[0]
        try:
            if kind == "var":
                if scope is not None:
                    raise FormatError(f"line {lineno}: 'var' after constraints")
                idx = int(toks[1])
                if idx != len(domains):
                    raise FormatError(f"line {lineno}: variable index {idx}, expected {len(domains)}")
                dom = tuple(int(t) for t in toks[2:])
                if len(dom) > d:
                    raise FormatError(f"line {lineno}: domain larger than header d={d}")
                domains.append(dom)
            elif kind == "ctr":
                close_constraint()
                idx = int(toks[1])
                if idx != len(constraints):
                    raise FormatError(f"line {lineno}: constraint index {idx}, expected {len(constraints)}")
                scope = tuple(int(t) for t in toks[2:])
                if not 1 <= len(scope) <= m:
                    raise FormatError(f"line {lineno}: scope size {len(scope)} not in [1, {m}]")
                relation, ctr_line = {}, lineno
            elif kind == "tup":
                if scope is None:
                    raise FormatError(f"line {lineno}: 'tup' before any 'ctr'")
                if len(toks) != len(scope) + 2:
                    raise FormatError(f"line {lineno}: tuple needs {len(scope)} values and a weight")
                key = tuple(int(t) for t in toks[1:-1])
                w = _parse_num(toks[-1], lineno, "weight")
                if not 0 <= w <= delta:
                    raise FormatError(f"line {lineno}: weight {w} outside [0, {delta}]")
                if key in relation:
                    raise FormatError(f"line {lineno}: duplicate tuple {key}")
                relation[key] = w
            else:
                raise FormatError(f"line {lineno}: unknown record {kind!r}")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"line {lineno}: malformed {kind!r} record") from None
    close_constraint()

    if len(domains) != n:
        raise FormatError(f"truncated file: {len(domains)} of {n} variables")
    if len(constraints) != e:
        raise FormatError(f"truncated file: {len(constraints)} of {e} constraints")
    try:
        return CopInstance(n, tuple(domains), tuple(constraints), m, delta)
    except ParamError as exc:
        raise FormatError(str(exc)) from None


def load_instance(path) -> CopInstance:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 text ({exc})") from None
    return loads_instance(text)
