"""
copmcts.mcts
Search tree over variable choices with interleaved value nodes.

Value-kind nodes (the root and every ``x_i = j`` node) hold a state; their
children are variable nodes, one per unbound variable (the actions). A
variable node's children are the values tried for it. One iteration is

    select  -> descend by argmin Q - c1*U - alpha to a leaf variable node
    expand  -> bind the leaf to a random untried value, propagate
    simulate (N_sim times) from the new variable children, random completion
    mirror  -> on success, swap the last two bindings and graft that path
    backup  -> visits, successes and best objective along the path

Statistics per node: N (visits), successes (r = successes / N), tau (best
objective seen below, +inf until a success), alpha (steering bonus).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import INFEASIBLE, CopInstance
from .errors import DeadTree, EmptyDomain, TreeExhausted
from .search import DEFAULT_PROPAGATION, SearchState, iter_bits

ROOT, VAR, VAL = "root", "var", "val"


class Node:
    __slots__ = ("kind", "var", "value", "parent", "children", "N", "successes", "tau",
                 "alpha", "sims", "sim_tau", "status", "exhausted", "complete", "untried", "q_cache", "depth")

    def __init__(self, kind: str, var: int = -1, value: int = -1, parent: "Node | None" = None):
        self.kind = kind
        self.var = var
        self.value = value
        self.parent = parent
        self.children: dict[int, Node] = {}
        self.N = 0
        self.successes = 0
        self.tau = INFEASIBLE
        self.alpha = 0.0
        self.sims = 0
        self.sim_tau = INFEASIBLE  # best objective of simulations started here
        self.status = None  # None | "dead" | "terminal"
        self.exhausted = False
        self.complete = False
        self.untried = 0
        self.q_cache = None
        self.depth = 0 if parent is None else parent.depth + 1

    @property
    def r(self) -> float:
        return self.successes / self.N if self.N else 0.0

    @property
    def is_value_kind(self) -> bool:
        return self.kind != VAR

    def __repr__(self):
        label = f"x{self.var}" if self.kind == VAR else (f"x{self.var}={self.value}" if self.kind == VAL else "root")
        return f"<{label} N={self.N} r={self.r:.2f} tau={self.tau} alpha={self.alpha}>"


@dataclass
class SimOutcome:
    success: bool
    solution: dict[int, int] | None = None
    objective: float = INFEASIBLE
    order: list[tuple[int, int]] = field(default_factory=list)  # (var, value index) from the root


@dataclass
class IterationInfo:
    leaf: Node
    path: list[Node]
    value_node: Node
    outcomes: list[SimOutcome]
    mirrored: list[list[Node]]
    encoding: object = None
    path_encodings: list | None = None


class QScorer:
    """Scores actions with a fixed parameter snapshot.

    ``version`` must change whenever ``params`` does; per-node Q caches are
    keyed on it.
    """

    def __init__(self, params, version: int = 0):
        self.params = params
        self.version = version

    def update(self, params) -> None:
        self.params = params
        self.version += 1

    def __call__(self, state: SearchState, actions: list[int]) -> list[float]:
        from .neural import encode_state, q_values_encoded
        return q_values_encoded(self.params, encode_state(state), actions).tolist()


class MctsTree:
    def __init__(self, instance: CopInstance, scorer: Callable | None = None, c1: float = 1.0,
                 alpha_step: float = 0.1, propagation: str = DEFAULT_PROPAGATION):
        self.instance = instance
        self.scorer = scorer
        self.c1 = c1
        self.alpha_step = alpha_step
        self.state = SearchState(instance, propagation)
        self._scratch = SearchState(instance, propagation)
        self.path_encodings: list = []
        self.root = Node(ROOT)
        self.best_objective = INFEASIBLE
        self.best_solution: dict[int, int] | None = None
        if not self.state.root_consistent:
            self.root.status = "dead"
            self.root.exhausted = True
        else:
            self._complete(self.root, self.state)

    # -- structure helpers ----------------------------------------------
    def _complete(self, node: Node, state: SearchState) -> None:
        """Give a value-kind node one variable child per unbound variable."""
        if node.complete:
            return
        for v in state.unbound_vars():
            if v not in node.children:
                child = Node(VAR, v, parent=node)
                child.untried = state.dom[v]
                node.children[v] = child
        node.children = dict(sorted(node.children.items()))
        node.complete = True

    def _refresh(self, path: list[Node]) -> None:
        for node in reversed(path):
            if node.exhausted:
                continue
            kids = list(node.children.values())
            if node.kind == VAR:
                if node.untried == 0 and all(c.exhausted for c in kids):
                    node.exhausted = True
                    if all(c.status == "dead" for c in kids):
                        node.status = "dead"
            elif node.status is not None:
                node.exhausted = True
            elif node.complete:
                if any(c.status == "dead" for c in kids):
                    node.status = "dead"
                    node.exhausted = True
                elif all(c.exhausted for c in kids):
                    node.exhausted = True

    def _q(self, node: Node, state: SearchState) -> dict[int, float]:
        if self.scorer is None:
            return {}
        version = getattr(self.scorer, "version", None)
        if node.q_cache is not None and version is not None and node.q_cache[0] == version:
            return node.q_cache[1]
        actions = list(node.children)
        q = dict(zip(actions, self.scorer(state, actions)))
        node.q_cache = (version, q)
        return q

    def _pick(self, parent: Node, options: list[Node], score: Callable[[Node], float]) -> Node:
        unvisited = [c for c in options if c.N == 0]
        if unvisited:
            return min(unvisited, key=_label)
        total = sum(c.N for c in parent.children.values())
        best, best_val = None, math.inf
        for c in sorted(options, key=_label):
            val = score(c) - self.c1 * exploration(total, c.N) - c.alpha
            if val < best_val:
                best, best_val = c, val
        return best

    def reset(self) -> None:
        self.state.undo_all()

    # -- phases ----------------------------------------------------------
    def select(self, encoder: Callable | None = None) -> tuple[Node, list[Node]]:
        """Descend from the root; ``self.state`` ends synchronised with the leaf's parent.

        With an ``encoder``, ``self.path_encodings`` receives ``encoder(state)``
        for the state preceding each variable node of the returned path.
        """
        while True:
            found = self._descend(encoder)
            if found is not None:
                return found

    def _descend(self, encoder: Callable | None) -> tuple[Node, list[Node]] | None:
        self.path_encodings = []
        self.reset()
        if self.root.exhausted:
            if self.root.status == "dead":
                raise DeadTree("root proven infeasible")
            raise TreeExhausted("search space fully explored")
        state = self.state
        node = self.root
        path = [node]
        while True:
            self._complete(node, state)
            options = [c for c in node.children.values() if not c.exhausted]
            if not options:
                # a mirrored node can become complete with every child already
                # exhausted; record that and start over
                self._refresh(path)
                return None
            q = self._q(node, state)
            var_node = self._pick(node, options, lambda c: q.get(c.var, 0.0))
            path.append(var_node)
            if encoder is not None:
                self.path_encodings.append(encoder(state))
            live = [c for c in var_node.children.values() if not c.exhausted]
            if not live:
                if var_node.untried == 0:
                    self._refresh(path)
                    return None
                return var_node, path
            val_node = self._pick(var_node, live, lambda c: 1.0 - c.r)
            if not state.assign(var_node.var, val_node.value):
                raise AssertionError("replayed binding wiped out")
            path.append(val_node)
            node = val_node

    def expand(self, leaf: Node, rng: np.random.Generator) -> tuple[Node, SimOutcome | None]:
        """Bind the leaf variable to a uniformly drawn untried value.

        Returns the new value node and, when the binding wipes out or completes
        the assignment, the resulting (deterministic) outcome.
        """
        choices = list(iter_bits(leaf.untried))
        if not choices:
            raise EmptyDomain(f"no untried value left for x{leaf.var}")
        k = choices[int(rng.integers(len(choices)))]
        leaf.untried &= ~(1 << k)
        val = Node(VAL, leaf.var, k, parent=leaf)
        leaf.children[k] = val
        state = self.state
        if not state.assign(leaf.var, k):
            val.status = "dead"
            val.exhausted = True
            return val, SimOutcome(False)
        if state.n_unbound == 0:
            val.status = "terminal"
            val.exhausted = True
            val.complete = True
            return val, SimOutcome(True, state.bound, state.partial_cost, state.bindings())
        self._complete(val, state)
        return val, None

    def backup(self, path: list[Node], outcome: SimOutcome) -> None:
        ok = outcome.success
        for node in path:
            node.N += 1
            if ok:
                node.successes += 1
                if outcome.objective < node.tau:
                    node.tau = outcome.objective
        end = path[-1]
        end.sims += 1
        if ok and outcome.objective < end.sim_tau:
            end.sim_tau = outcome.objective
        if ok and outcome.objective < self.best_objective:
            self.best_objective = outcome.objective
            self.best_solution = dict(outcome.solution)

    def mirror(self, order: list[tuple[int, int]], alpha_step: float | None = None) -> list[Node]:
        """Swap the last two bindings of a solution path and graft it into the tree.

        Missing nodes along the mirrored path are created; if the swapped-in
        variable node already existed its alpha grows by ``alpha_step``.
        Returns the mirrored path (root first).
        """
        if len(order) < 2:
            return []
        step = self.alpha_step if alpha_step is None else alpha_step
        mirrored = order[:-2] + [order[-1], order[-2]]
        swap_at = len(mirrored) - 2
        scratch = self._scratch
        node = self.root
        path = [node]
        try:
            for pos, (v, k) in enumerate(mirrored):
                child = node.children.get(v)
                if child is None:
                    child = Node(VAR, v, parent=node)
                    child.untried = scratch.dom[v]
                    node.children[v] = child
                elif pos == swap_at:
                    child.alpha += step
                path.append(child)
                if not scratch.assign(v, k):
                    raise AssertionError("mirrored path is infeasible")
                val = child.children.get(k)
                if val is None:
                    val = Node(VAL, v, k, parent=child)
                    child.untried &= ~(1 << k)
                    child.children[k] = val
                    if scratch.n_unbound == 0:
                        val.status = "terminal"
                        val.exhausted = True
                        val.complete = True
                path.append(val)
                node = val
        finally:
            scratch.undo_all()
        self._refresh(path)
        return path

    def iterate(self, rng: np.random.Generator, n_sim: int = 10, encode: bool | str = False) -> IterationInfo:
        """One select/expand/simulate/mirror/backup round.

        ``encode=True`` attaches the leaf state's encoding; ``encode="path"``
        also attaches one encoding per variable node on the selection path.
        """
        encoding = path_encodings = None
        if encode:
            from .neural import encode_state
        if encode == "path":
            leaf, path = self.select(encode_state)
            path_encodings = self.path_encodings
            encoding = path_encodings[-1]
        else:
            leaf, path = self.select()
            if encode:
                encoding = encode_state(self.state)
        val, outcome = self.expand(leaf, rng)
        path = path + [val]
        outcomes, mirrored = [], []
        if outcome is not None:
            if outcome.success:
                mirrored.append(self.mirror(outcome.order))
            self.backup(path, outcome)
            outcomes.append(outcome)
        else:
            kids = list(val.children.values())
            for _ in range(n_sim):
                child = kids[int(rng.integers(len(kids)))]
                out = simulate(self.state, rng, first_var=child.var)
                if out.success:
                    mirrored.append(self.mirror(out.order))
                self.backup(path + [child], out)
                outcomes.append(out)
        self._refresh(path)
        self.reset()
        return IterationInfo(leaf, path, val, outcomes, mirrored, encoding, path_encodings)

    # -- diagnostics -----------------------------------------------------
    def nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(node.children.values())

    def dump_stats(self, path) -> None:
        """Per-node N, r, tau, alpha and depth as CSV."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["depth", "kind", "var", "value", "N", "r", "tau", "alpha"])
            for node in self.nodes():
                w.writerow([node.depth, node.kind, node.var, node.value, node.N,
                            f"{node.r:.6f}", node.tau, node.alpha])


def exploration(parent_total: int, visits: int) -> float:
    """UCT exploration term sqrt(ln(parent_total) / visits)."""
    return math.sqrt(math.log(parent_total) / visits)


def _label(node: Node) -> int:
    return node.var if node.kind == VAR else node.value


def simulate(state: SearchState, rng: np.random.Generator, first_var: int | None = None) -> SimOutcome:
    """Random completion: uniform unbound variable, uniform current value, until done or wipeout.

    The state is restored before returning.
    """
    made = 0
    success = True
    while state.n_unbound:
        if made == 0 and first_var is not None:
            v = first_var
        else:
            free = state.unbound_vars()
            v = free[int(rng.integers(len(free)))]
        ks = list(iter_bits(state.dom[v]))
        k = ks[int(rng.integers(len(ks)))]
        made += 1
        if not state.assign(v, k):
            success = False
            break
    if success:
        out = SimOutcome(True, state.bound, state.partial_cost, state.bindings())
    else:
        out = SimOutcome(False)
    for _ in range(made):
        state.undo()
    return out


def check_node(node: Node) -> None:
    """Assert the per-node invariants (kind alternation, visit conservation, r, tau).

    Simulations started at a node act as extra children for both the visit
    count and tau.
    """
    kids = list(node.children.values())
    want = VAL if node.kind == VAR else VAR
    assert all(c.kind == want for c in kids), f"{node}: child kinds break alternation"
    assert all(c.parent is node for c in kids), f"{node}: broken parent link"
    assert node.N == sum(c.N for c in kids) + node.sims, f"{node}: visit count not conserved"
    assert 0 <= node.successes <= node.N, f"{node}: successes out of range"
    finite = [c.tau for c in kids if c.tau < INFEASIBLE]
    if node.sim_tau < INFEASIBLE:
        finite.append(node.sim_tau)
    if finite:
        assert node.tau == min(finite), f"{node}: tau {node.tau} != min child tau {min(finite)}"
    else:
        assert node.tau == INFEASIBLE, f"{node}: finite tau with no source below it"


def check_tree(tree: MctsTree) -> int:
    count = 0
    for node in tree.nodes():
        check_node(node)
        count += 1
    return count
