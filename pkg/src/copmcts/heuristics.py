"""Classic variable-ordering heuristics and the raw node features shared with
the neural scorer.

Every selector takes a ``SearchState`` and returns an unbound variable index;
ties always go to the smallest index.
"""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from .errors import NoUnbound, ParamError
from .search import SearchState, iter_bits, value_costs

VAR_FEATURES = 2
CTR_FEATURES = 3


def _unbound(state: SearchState) -> list[int]:
    free = state.unbound_vars()
    if not free:
        raise NoUnbound("every variable is bound")
    return free


def _argmin(scores, keys):
    best, best_key = None, None
    for key, s in zip(keys, scores):
        if best is None or s < best:
            best, best_key = s, key
    return best_key


def min_dom(state: SearchState) -> int:
    free = _unbound(state)
    return _argmin([state.domain_size(v) for v in free], free)


def active_degree(state: SearchState, var: int) -> int:
    """Constraints on ``var`` that still involve another unbound variable."""
    ucount = state.unbound_count
    own = 0 if state.is_bound(var) else 1
    return sum(1 for j, _ in state.comp.var_ctrs[var] if ucount[j] - own >= 1)


def dom_ddeg(state: SearchState) -> int:
    free = _unbound(state)
    scores = []
    for v in free:
        deg = active_degree(state, v)
        scores.append(state.domain_size(v) / deg if deg else math.inf)
    return _argmin(scores, free)


def tightness_degree(state: SearchState, var: int, cache: dict | None = None) -> float:
    """Sum of (1 + dynamic tightness) over the active constraints on ``var``."""
    ucount = state.unbound_count
    total = 0.0
    for j, _ in state.comp.var_ctrs[var]:
        if ucount[j] >= 2:
            if cache is None:
                t = dyn_tightness(state, j)
            else:
                t = cache.get(j)
                if t is None:
                    t = cache[j] = dyn_tightness(state, j)
            total += 1.0 + t
    return total


def dom_tdeg(state: SearchState) -> int:
    free = _unbound(state)
    cache: dict[int, float] = {}
    scores = []
    for v in free:
        w = tightness_degree(state, v, cache)
        scores.append(state.domain_size(v) / w if w else math.inf)
    return _argmin(scores, free)


def max_regret(state: SearchState) -> int:
    """Variable whose two cheapest values differ the most (greedy cost order).

    Tie-break on smaller domain, then index. Single-valued variables have
    regret 0.
    """
    free = _unbound(state)
    best, best_key = None, None
    for v in free:
        costs = sorted(value_costs(state, v).values())
        regret = costs[1] - costs[0] if len(costs) > 1 else 0.0
        if math.isnan(regret):
            regret = 0.0
        key = (-regret, len(costs), v)
        if best is None or key < best:
            best, best_key = key, v
    return best_key


class Impact:
    """Refalo-style impact heuristic with its own statistics table.

    The impact of binding (var, value) is 1 - P_after / P_before where P is the
    product of current domain sizes; the solver feeds observations through
    ``observe``. Variables are ranked by the mean impact of their current
    values, highest first; unseen pairs count as 0.
    """

    def __init__(self):
        self.table: dict[tuple[int, int], list[float]] = defaultdict(lambda: [0.0, 0])

    def reset(self, instance=None):
        self.table.clear()

    def observe(self, state, var, k, log_before, log_after):
        if log_after == -math.inf:
            value = 1.0
        else:
            value = 1.0 - math.exp(log_after - log_before)
        cell = self.table[(var, k)]
        cell[0] += value
        cell[1] += 1

    def value_impact(self, var: int, k: int) -> float:
        cell = self.table.get((var, k))
        return cell[0] / cell[1] if cell and cell[1] else 0.0

    def __call__(self, state: SearchState) -> int:
        return impact(state, self)


def impact(state: SearchState, stats: Impact) -> int:
    free = _unbound(state)
    scores = []
    for v in free:
        ks = state.current_indices(v)
        scores.append(-sum(stats.value_impact(v, k) for k in ks) / len(ks))
    return _argmin(scores, free)


# ---------------------------------------------------------------------------
# raw features
# ---------------------------------------------------------------------------

def supported_tuples(state: SearchState, j: int) -> int:
    comp = state.comp
    dom = state.dom
    scope = comp.scopes[j]
    sup = comp.supports[j]
    if sup is not None:
        mb = dom[scope[1]]
        return sum((sup[0][ia] & mb).bit_count() for ia in iter_bits(dom[scope[0]]))
    masks = [dom[v] for v in scope]
    return sum(1 for t in comp.tuples[j] if all(masks[p] >> t[p] & 1 for p in range(len(t))))


def dyn_tightness(state: SearchState, j: int) -> float:
    """1 - supported tuples / product of current scope domain sizes."""
    space = 1
    for v in state.comp.scopes[j]:
        space *= state.dom[v].bit_count()
    if space == 0:
        return 1.0
    return min(1.0, max(0.0, 1.0 - supported_tuples(state, j) / space))


def cost_ratio(state: SearchState, j: int) -> float:
    """Cheapest currently supported weight over the constraint's largest weight."""
    comp = state.comp
    dom = state.dom
    scope = comp.scopes[j]
    lo = math.inf
    for t, w in comp.weights[j].items():
        if w < lo and all(dom[v] >> t[p] & 1 for p, v in enumerate(scope)):
            lo = w
            if lo == 0:
                break
    if lo == math.inf:
        return 1.0
    top = comp.max_weight[j]
    return lo / top if top > 0 else 0.0


def var_features(state: SearchState) -> np.ndarray:
    """(n, 2): current domain size over original size, bound flag."""
    comp = state.comp
    out = np.empty((comp.n, VAR_FEATURES))
    for i in range(comp.n):
        out[i, 0] = state.dom[i].bit_count() / comp.dsize[i]
        out[i, 1] = 1.0 if state.assigned[i] >= 0 else 0.0
    return out


def ctr_features(state: SearchState) -> np.ndarray:
    """(e, 3): bound fraction of the scope, dynamic tightness, cost ratio."""
    comp = state.comp
    out = np.empty((len(comp.scopes), CTR_FEATURES))
    for j, scope in enumerate(comp.scopes):
        out[j, 0] = (len(scope) - state.unbound_count[j]) / len(scope)
        out[j, 1] = dyn_tightness(state, j)
        out[j, 2] = cost_ratio(state, j)
    return out


VAR_HEURISTICS = {
    "mindom": lambda: min_dom,
    "domddeg": lambda: dom_ddeg,
    "domtdeg": lambda: dom_tdeg,
    "impact": Impact,
    "maxregret": lambda: max_regret,
}


def make_var_heuristic(name: str):
    """Fresh selector for a CLI name (``neural`` is built by the neural module)."""
    try:
        return VAR_HEURISTICS[name]()
    except KeyError:
        raise ParamError(f"unknown heuristic {name!r}") from None
