"""Depth-first backtracking with constraint propagation, top-k enumeration
and an exact branch-and-bound oracle.

Propagation after each binding is either forward checking (``"fc"``) or
forward checking followed by AC-3 over the binary constraints (``"mac"``, the
default everywhere).

A *search node* is one value-binding attempt, including attempts that wipe a
domain out. All heuristics are charged the same way.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .core import INFEASIBLE, CopInstance
from .errors import CutoffUnknown, ParamError

DEFAULT_CUTOFF = 500_000
PROPAGATIONS = ("fc", "mac")
DEFAULT_PROPAGATION = "mac"


def iter_bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


class SearchState:
    """Current domains, bindings and running cost with an undo trail.

    Domains are int bitmasks over value positions (see ``CompiledInstance``).
    ``assign`` always opens a decision level, even when it wipes out, so every
    ``assign`` must be paired with an ``undo``.
    """

    def __init__(self, instance: CopInstance, propagation: str = DEFAULT_PROPAGATION):
        if propagation not in PROPAGATIONS:
            raise ParamError(f"unknown propagation {propagation!r}")
        comp = instance.compiled
        self.propagation = propagation
        self.instance = instance
        self.comp = comp
        self.dom = list(comp.full_mask)
        self.assigned = [-1] * comp.n
        self.unbound_count = [len(s) for s in comp.scopes]
        self.partial_cost = 0
        self.n_unbound = comp.n
        self._trail: list[tuple[int, int]] = []
        self._levels: list[tuple[int, int, float]] = []
        self.root_consistent = True
        # node consistency for unary tables
        for j, scope in enumerate(comp.scopes):
            if len(scope) == 1:
                allowed = 0
                for (k,) in comp.weights[j]:
                    allowed |= 1 << k
                self.dom[scope[0]] &= allowed
        if any(m == 0 for m in self.dom):
            self.root_consistent = False

    # -- queries ---------------------------------------------------------
    def domain_size(self, var: int) -> int:
        return self.dom[var].bit_count()

    def is_bound(self, var: int) -> bool:
        return self.assigned[var] >= 0

    def unbound_vars(self) -> list[int]:
        return [i for i, k in enumerate(self.assigned) if k < 0]

    def current_indices(self, var: int) -> list[int]:
        return list(iter_bits(self.dom[var]))

    def current_values(self, var: int) -> list[int]:
        vals = self.comp.values[var]
        return [vals[k] for k in iter_bits(self.dom[var])]

    @property
    def depth(self) -> int:
        return len(self._levels)

    @property
    def bound(self) -> dict[int, int]:
        vals = self.comp.values
        return {i: vals[i][k] for i, k in enumerate(self.assigned) if k >= 0}

    def bindings(self) -> list[tuple[int, int]]:
        """(var, value index) pairs in binding order."""
        return [(lvl[1], self.assigned[lvl[1]]) for lvl in self._levels]

    def log_space_size(self) -> float:
        """log of the product of current domain sizes (``-inf`` on wipeout)."""
        total = 0.0
        for m in self.dom:
            size = m.bit_count()
            if size == 0:
                return -math.inf
            total += math.log(size)
        return total

    def snapshot(self) -> tuple:
        return tuple(self.dom), tuple(self.assigned), self.partial_cost

    # -- mutation --------------------------------------------------------
    def assign(self, var: int, k: int) -> bool:
        """Bind ``var`` to value position ``k`` and propagate. False means wipeout."""
        comp = self.comp
        dom = self.dom
        trail = self._trail
        self._levels.append((len(trail), var, self.partial_cost))
        trail.append((var, dom[var]))
        dom[var] = 1 << k
        assigned = self.assigned
        assigned[var] = k
        self.n_unbound -= 1
        ucount = self.unbound_count
        ctrs = comp.var_ctrs[var]
        for j, _ in ctrs:
            ucount[j] -= 1

        scopes = comp.scopes
        supports = comp.supports
        for j, pos in ctrs:
            sup = supports[j]
            if sup is not None:
                other = scopes[j][1 - pos]
                if ucount[j] == 0:
                    key = (k, assigned[other]) if pos == 0 else (assigned[other], k)
                    w = comp.weights[j].get(key)
                    if w is None:
                        return False
                    self.partial_cost += w
                else:
                    mask = dom[other]
                    new = mask & sup[pos][k]
                    if new != mask:
                        trail.append((other, mask))
                        dom[other] = new
                        if not new:
                            return False
            elif ucount[j] == 0:
                w = comp.weights[j].get(tuple(assigned[v] for v in scopes[j]))
                if w is None:
                    return False
                self.partial_cost += w
            elif not self._revise_nary(j):
                return False
        if self.propagation == "mac":
            return self._arc_consistency(mark_from=self._levels[-1][0] + 1)
        return True

    def _arc_consistency(self, mark_from: int) -> bool:
        """AC-3 seeded with every variable pruned since ``mark_from``."""
        comp = self.comp
        dom = self.dom
        trail = self._trail
        assigned = self.assigned
        queue = list(dict.fromkeys(v for v, _ in trail[mark_from:]))
        queued = set(queue)
        while queue:
            y = queue.pop()
            queued.discard(y)
            for j, pos in comp.var_ctrs[y]:
                sup = comp.supports[j]
                if sup is None:
                    if len(comp.scopes[j]) > 1 and self.unbound_count[j]:
                        before = [dom[v] for v in comp.scopes[j]]
                        if not self._revise_nary(j):
                            return False
                        for v, m in zip(comp.scopes[j], before):
                            if dom[v] != m and v not in queued:
                                queue.append(v)
                                queued.add(v)
                    continue
                x = comp.scopes[j][1 - pos]
                if assigned[x] >= 0:
                    continue
                side = sup[1 - pos]
                my = dom[y]
                mx = dom[x]
                new = 0
                for a in iter_bits(mx):
                    if side[a] & my:
                        new |= 1 << a
                if new != mx:
                    trail.append((x, mx))
                    dom[x] = new
                    if not new:
                        return False
                    if x not in queued:
                        queue.append(x)
                        queued.add(x)
        return True

    def _revise_nary(self, j: int) -> bool:
        scope = self.comp.scopes[j]
        dom = self.dom
        masks = [dom[v] for v in scope]
        support = [0] * len(scope)
        for t in self.comp.tuples[j]:
            if all(masks[p] >> t[p] & 1 for p in range(len(scope))):
                for p in range(len(scope)):
                    support[p] |= 1 << t[p]
        for p, v in enumerate(scope):
            if self.assigned[v] >= 0:
                if not support[p]:
                    return False
                continue
            new = masks[p] & support[p]
            if new != masks[p]:
                self._trail.append((v, masks[p]))
                dom[v] = new
                if not new:
                    return False
        return True

    def undo(self) -> None:
        mark, var, cost = self._levels.pop()
        trail = self._trail
        dom = self.dom
        while len(trail) > mark:
            v, m = trail.pop()
            dom[v] = m
        self.assigned[var] = -1
        self.n_unbound += 1
        self.partial_cost = cost
        ucount = self.unbound_count
        for j, _ in self.comp.var_ctrs[var]:
            ucount[j] += 1

    def undo_all(self) -> None:
        while self._levels:
            self.undo()


def propagate(state: SearchState, var: int, value) -> bool:
    """Bind ``var = value`` and propagate. False means wipeout.

    A decision level is recorded either way; call ``state.undo()`` to retract.
    """
    if state.is_bound(var):
        raise ParamError(f"variable {var} is already bound")
    k = state.comp.index_of[var].get(value)
    if k is None or not state.dom[var] >> k & 1:
        raise ParamError(f"value {value!r} is not in the current domain of variable {var}")
    return state.assign(var, k)


# ---------------------------------------------------------------------------
# value ordering
# ---------------------------------------------------------------------------

def value_costs(state: SearchState, var: int) -> dict[int, float]:
    """Cost each current value of ``var`` adds through constraints it would complete."""
    comp = state.comp
    assigned = state.assigned
    completing = [j for j, _ in comp.var_ctrs[var] if state.unbound_count[j] == 1]
    out = {}
    for k in iter_bits(state.dom[var]):
        total = 0
        for j in completing:
            key = tuple(k if v == var else assigned[v] for v in comp.scopes[j])
            w = comp.weights[j].get(key)
            total += INFEASIBLE if w is None else w
        out[k] = total
    return out


def min_cost_values(state: SearchState, var: int) -> list[int]:
    """Value positions ordered cheapest first, ties by ascending value."""
    costs = value_costs(state, var)
    vals = state.comp.values[var]
    return sorted(costs, key=lambda k: (costs[k], vals[k]))


def lexical_values(state: SearchState, var: int) -> list[int]:
    vals = state.comp.values[var]
    return sorted(iter_bits(state.dom[var]), key=lambda k: vals[k])


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class Solution:
    assignment: dict[int, int]
    objective: float
    nodes: int
    wall_time: float


@dataclass
class SolveReport:
    solutions: list[Solution] = field(default_factory=list)
    total_nodes: int = 0
    cutoff_hit: bool = False
    wall_time: float = 0.0

    @property
    def nodes_to_first(self) -> int:
        return self.solutions[0].nodes if self.solutions else self.total_nodes

    @property
    def best_objective(self) -> float:
        return min((s.objective for s in self.solutions), default=INFEASIBLE)

    def best_of_first(self, k: int) -> float:
        return min((s.objective for s in self.solutions[:k]), default=INFEASIBLE)

    def write_csv(self, path) -> None:
        """One row per solution: index, objective, nodes, millis."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "objective", "nodes", "millis"])
            for i, s in enumerate(self.solutions):
                w.writerow([i, _num(s.objective), s.nodes, f"{s.wall_time * 1000:.3f}"])


def _num(x) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{"index": int(r["index"]), "objective": float(r["objective"]),
             "nodes": int(r["nodes"]), "millis": float(r["millis"])} for r in rows]


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

VarHeuristic = Callable[[SearchState], int]
ValueHeuristic = Callable[[SearchState, int], Iterable[int]]


def backtrack_solve(instance: CopInstance, var_heuristic: VarHeuristic,
                    value_heuristic: ValueHeuristic = min_cost_values,
                    node_cutoff: int = DEFAULT_CUTOFF, k: int | float = 1,
                    propagation: str = DEFAULT_PROPAGATION) -> SolveReport:
    """DFS that records the first ``k`` feasible solutions in discovery order.

    ``var_heuristic`` may expose ``observe(state, var, k, log_before, log_after)``
    (impact-style learners) and ``reset(instance)``; both are optional.
    """
    if k < 1 or node_cutoff < 1:
        raise ParamError("k and node_cutoff must be at least 1")
    state = SearchState(instance, propagation)
    report = SolveReport()
    if hasattr(var_heuristic, "reset"):
        var_heuristic.reset(instance)
    observe = getattr(var_heuristic, "observe", None)
    start = time.perf_counter()
    nodes = 0
    values = instance.domains

    def dfs() -> bool:
        nonlocal nodes
        if state.n_unbound == 0:
            a = {i: values[i][j] for i, j in enumerate(state.assigned)}
            report.solutions.append(Solution(a, state.partial_cost, nodes, time.perf_counter() - start))
            return len(report.solutions) >= k
        var = var_heuristic(state)
        for idx in value_heuristic(state, var):
            if nodes >= node_cutoff:
                report.cutoff_hit = True
                return True
            nodes += 1
            before = state.log_space_size() if observe else 0.0
            ok = state.assign(var, idx)
            if observe:
                observe(state, var, idx, before, state.log_space_size() if ok else -math.inf)
            if ok and dfs():
                state.undo()
                return True
            state.undo()
        return False

    if state.root_consistent:
        dfs()
    report.total_nodes = nodes
    report.wall_time = time.perf_counter() - start
    return report


@dataclass
class Optimum:
    objective: float
    assignment: dict[int, int]
    nodes: int


def exact_optimum(instance: CopInstance, node_cutoff: int = 10_000_000,
                  var_heuristic: VarHeuristic | None = None,
                  lower_bound: Callable[[SearchState], float] | None = None,
                  propagation: str = DEFAULT_PROPAGATION) -> Optimum | None:
    """Depth-first branch and bound. Returns None when the instance is unsatisfiable.

    The default bound is the running cost of completed constraints; pass
    ``lower_bound`` for anything stronger (it must never overestimate).
    Raises CutoffUnknown when the budget runs out before the proof.
    """
    from .heuristics import dom_ddeg

    pick = var_heuristic or dom_ddeg
    bound = lower_bound or (lambda s: s.partial_cost)
    state = SearchState(instance, propagation)
    best = [INFEASIBLE, None]
    nodes = 0
    values = instance.domains

    def dfs():
        nonlocal nodes
        if state.n_unbound == 0:
            if state.partial_cost < best[0]:
                best[0] = state.partial_cost
                best[1] = {i: values[i][j] for i, j in enumerate(state.assigned)}
            return
        var = pick(state)
        for idx in min_cost_values(state, var):
            if nodes >= node_cutoff:
                raise CutoffUnknown(f"node budget {node_cutoff} exhausted",
                                    best=best[0] if best[1] else None, nodes=nodes)
            nodes += 1
            if state.assign(var, idx) and bound(state) < best[0]:
                dfs()
            state.undo()

    if state.root_consistent:
        dfs()
    if best[1] is None:
        return None
    return Optimum(best[0], best[1], nodes)


def gap(cost: float, optimal: float) -> float:
    """Percentage excess of ``cost`` over ``optimal`` (denominator floored at 1)."""
    return 100.0 * (cost - optimal) / max(optimal, 1)
