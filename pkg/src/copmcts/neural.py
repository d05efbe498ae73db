"""
copmcts.neural
Message-passing Q-scorer over the variable/constraint graph.

    h_x0 = F_x w_x                      h_c0 = F_c w_c
    h_c  = MLP_c([sum_{x in c} h_x(prev) : h_c(prev) : F_c])     (constraints first)
    h_x  = MLP_x([sum_{c ∋ x} h_c(new)  : h_x(prev) : F_x])
    Q(s, a) = MLP_q([sum_x h_x(K) : h_a(K)])

All MLPs have three layers (hidden width ``hidden``, ReLU, linear output) and
are shared across the K rounds. Forward and backward passes are written out by
hand in numpy; graphs from different states are batched as a disjoint union.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (ActionBound, DimensionMismatch, FormatError, NoUnbound,
                     NonFiniteLoss, VersionMismatch)
from .heuristics import CTR_FEATURES, VAR_FEATURES, ctr_features, var_features
from .search import SearchState

MLP_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")
MAGIC = b"CQNW"
VERSION = 1


@dataclass
class ScorerParams:
    p: int
    K: int
    hidden: int
    tensors: dict[str, np.ndarray]
    px: int = VAR_FEATURES
    pc: int = CTR_FEATURES

    @staticmethod
    def shapes(p: int, hidden: int, px: int = VAR_FEATURES, pc: int = CTR_FEATURES):
        """Tensor names and shapes in declaration (serialisation) order."""
        out = [("w_x", (px, p)), ("w_c", (pc, p))]
        for name, n_in, n_out in (("mlp_x", 2 * p + px, p), ("mlp_c", 2 * p + pc, p), ("mlp_q", 2 * p, 1)):
            out += [(f"{name}.W1", (n_in, hidden)), (f"{name}.b1", (hidden,)),
                    (f"{name}.W2", (hidden, hidden)), (f"{name}.b2", (hidden,)),
                    (f"{name}.W3", (hidden, n_out)), (f"{name}.b3", (n_out,))]
        return out

    @classmethod
    def initialize(cls, p: int = 128, K: int = 5, hidden: int = 64, seed=0) -> "ScorerParams":
        """Glorot-uniform matrices, zero biases."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        tensors = {}
        for name, shape in cls.shapes(p, hidden):
            if len(shape) == 2:
                bound = np.sqrt(6.0 / (shape[0] + shape[1]))
                tensors[name] = rng.uniform(-bound, bound, size=shape)
            else:
                tensors[name] = np.zeros(shape)
        return cls(p, K, hidden, tensors)

    @classmethod
    def zeros(cls, p: int = 128, K: int = 5, hidden: int = 64) -> "ScorerParams":
        return cls(p, K, hidden, {n: np.zeros(s) for n, s in cls.shapes(p, hidden)})

    def copy(self) -> "ScorerParams":
        return ScorerParams(self.p, self.K, self.hidden,
                            {k: v.copy() for k, v in self.tensors.items()}, self.px, self.pc)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def validate(self) -> None:
        expected = self.shapes(self.p, self.hidden, self.px, self.pc)
        if [n for n, _ in expected] != list(self.tensors):
            raise DimensionMismatch("tensor names differ from the architecture")
        for name, shape in expected:
            if self.tensors[name].shape != shape:
                raise DimensionMismatch(f"{name}: shape {self.tensors[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise DimensionMismatch(f"{name} holds non-finite values")

    def equals(self, other: "ScorerParams") -> bool:
        return (self.p, self.K, self.hidden) == (other.p, other.K, other.hidden) and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors)


# ---------------------------------------------------------------------------
# graph encoding of a search state
# ---------------------------------------------------------------------------

class GraphTopology:
    """Variable/constraint incidence of one instance (shared by all its states)."""

    def __init__(self, scopes: Sequence[Sequence[int]], n: int):
        self.n = n
        self.e = len(scopes)
        self.edge_var = np.array([v for s in scopes for v in s], dtype=np.int64)
        self.edge_ctr = np.array([j for j, s in enumerate(scopes) for _ in s], dtype=np.int64)


def topology_of(instance) -> GraphTopology:
    comp = instance.compiled
    topo = getattr(comp, "_topology", None)
    if topo is None:
        topo = comp._topology = GraphTopology(comp.scopes, comp.n)
    return topo


@dataclass
class StateEncoding:
    """Raw features and topology captured at one decision point."""

    topology: GraphTopology
    fx: np.ndarray
    fc: np.ndarray
    unbound: np.ndarray = field(repr=False)


def encode_state(state: SearchState) -> StateEncoding:
    return StateEncoding(topology_of(state.instance), var_features(state), ctr_features(state),
                         np.array([k < 0 for k in state.assigned]))


class _Batch:
    """Disjoint union of several encodings."""

    def __init__(self, encodings: Sequence[StateEncoding]):
        counts_x = [enc.topology.n for enc in encodings]
        counts_c = [enc.topology.e for enc in encodings]
        self.x_start = np.concatenate([[0], np.cumsum(counts_x)[:-1]]).astype(np.int64)
        c_start = np.concatenate([[0], np.cumsum(counts_c)[:-1]]).astype(np.int64)
        self.counts_x = np.array(counts_x)
        self.n, self.e = int(sum(counts_x)), int(sum(counts_c))
        self.X = np.vstack([enc.fx for enc in encodings])
        self.C = np.vstack([enc.fc for enc in encodings]) if self.e else np.zeros((0, encodings[0].fc.shape[1]))
        rows = np.concatenate([enc.topology.edge_var + o for enc, o in zip(encodings, self.x_start)])
        cols = np.concatenate([enc.topology.edge_ctr + o for enc, o in zip(encodings, c_start)])
        self.A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n, self.e))
        self.AT = self.A.T.tocsr()


def _check_dims(params: ScorerParams, batch: _Batch):
    if batch.X.shape[1] != params["w_x"].shape[0] or batch.C.shape[1] != params["w_c"].shape[0]:
        raise DimensionMismatch(
            f"features ({batch.X.shape[1]}, {batch.C.shape[1]}) do not match weights "
            f"({params['w_x'].shape[0]}, {params['w_c'].shape[0]})")


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _mlp(T, prefix, x):
    a1 = x @ T[prefix + ".W1"] + T[prefix + ".b1"]
    np.maximum(a1, 0, out=a1)
    a2 = a1 @ T[prefix + ".W2"] + T[prefix + ".b2"]
    np.maximum(a2, 0, out=a2)
    return a2 @ T[prefix + ".W3"] + T[prefix + ".b3"], (x, a1, a2)


def _mlp_back(T, prefix, cache, dout, grads):
    x, a1, a2 = cache
    grads[prefix + ".W3"] += a2.T @ dout
    grads[prefix + ".b3"] += dout.sum(axis=0)
    d = (dout @ T[prefix + ".W3"].T) * (a2 > 0)
    grads[prefix + ".W2"] += a1.T @ d
    grads[prefix + ".b2"] += d.sum(axis=0)
    d = (d @ T[prefix + ".W2"].T) * (a1 > 0)
    grads[prefix + ".W1"] += x.T @ d
    grads[prefix + ".b1"] += d.sum(axis=0)
    return d @ T[prefix + ".W1"].T


def _encode(params: ScorerParams, b: _Batch):
    T = params.tensors
    hx = b.X @ T["w_x"]
    hc = b.C @ T["w_c"]
    rounds = []
    for _ in range(params.K):
        hc, cc = _mlp(T, "mlp_c", np.hstack([b.AT @ hx, hc, b.C]))
        hx, cx = _mlp(T, "mlp_x", np.hstack([b.A @ hc, hx, b.X]))
        rounds.append((cc, cx))
    return hx, rounds


def _encode_back(params: ScorerParams, b: _Batch, rounds, dhx, grads):
    T = params.tensors
    p = params.p
    dhc = np.zeros((b.e, p))
    for cc, cx in reversed(rounds):
        din = _mlp_back(T, "mlp_x", cx, dhx, grads)
        dhc = dhc + b.AT @ din[:, :p]
        dhx = din[:, p:2 * p]
        din = _mlp_back(T, "mlp_c", cc, dhc, grads)
        dhx = dhx + b.A @ din[:, :p]
        dhc = din[:, p:2 * p]
    grads["w_x"] += b.X.T @ dhx
    grads["w_c"] += b.C.T @ dhc


def embed(params: ScorerParams, enc: StateEncoding) -> np.ndarray:
    """Variable embeddings after K rounds, shape (n, p)."""
    b = _Batch([enc])
    _check_dims(params, b)
    return _encode(params, b)[0]


def init_embeddings(params: ScorerParams, enc: StateEncoding) -> tuple[np.ndarray, np.ndarray]:
    b = _Batch([enc])
    _check_dims(params, b)
    return b.X @ params["w_x"], b.C @ params["w_c"]


def message_pass(params: ScorerParams, enc: StateEncoding, hx: np.ndarray, hc: np.ndarray):
    """One round: constraints from previous variable embeddings, then variables."""
    b = _Batch([enc])
    _check_dims(params, b)
    if hx.shape != (b.n, params.p) or hc.shape != (b.e, params.p):
        raise DimensionMismatch("embedding shapes do not match the graph")
    T = params.tensors
    hc_new, _ = _mlp(T, "mlp_c", np.hstack([b.AT @ hx, hc, b.C]))
    hx_new, _ = _mlp(T, "mlp_x", np.hstack([b.A @ hc_new, hx, b.X]))
    return hx_new, hc_new


def q_values_encoded(params: ScorerParams, enc: StateEncoding, actions: Sequence[int]) -> np.ndarray:
    b = _Batch([enc])
    _check_dims(params, b)
    hx, _ = _encode(params, b)
    pooled = hx.sum(axis=0)
    acts = np.asarray(actions, dtype=np.int64)
    q_in = np.hstack([np.broadcast_to(pooled, (len(acts), params.p)), hx[acts]])
    return _mlp(params.tensors, "mlp_q", q_in)[0][:, 0]


def q_values_all(state: SearchState, params: ScorerParams) -> dict[int, float]:
    """Q for every unbound variable from a single encoding pass."""
    free = state.unbound_vars()
    if not free:
        raise NoUnbound("every variable is bound")
    q = q_values_encoded(params, encode_state(state), free)
    return dict(zip(free, q.tolist()))


def q_value(state: SearchState, action: int, params: ScorerParams) -> float:
    if state.is_bound(action):
        raise ActionBound(f"variable {action} is already bound")
    return float(q_values_encoded(params, encode_state(state), [action])[0])


def forward_batch(params: ScorerParams, encodings: Sequence[StateEncoding], actions: Sequence[int]):
    """Q for (encoding_i, action_i) pairs plus what ``backward_batch`` needs."""
    b = _Batch(encodings)
    _check_dims(params, b)
    hx, rounds = _encode(params, b)
    pooled = np.add.reduceat(hx, b.x_start, axis=0)
    rows = b.x_start + np.asarray(actions, dtype=np.int64)
    q, cq = _mlp(params.tensors, "mlp_q", np.hstack([pooled, hx[rows]]))
    return q[:, 0], (b, rounds, rows, cq)


def backward_batch(params: ScorerParams, cache, dq: np.ndarray) -> dict[str, np.ndarray]:
    b, rounds, rows, cq = cache
    p = params.p
    grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    din = _mlp_back(params.tensors, "mlp_q", cq, dq[:, None], grads)
    dhx = np.repeat(din[:, :p], b.counts_x, axis=0)
    np.add.at(dhx, rows, din[:, p:])
    _encode_back(params, b, rounds, dhx, grads)
    return grads


def loss_and_grads(params: ScorerParams, encodings, actions, targets):
    """Mean squared error and its gradient for every tensor."""
    q, cache = forward_batch(params, encodings, actions)
    err = q - np.asarray(targets, dtype=float)
    loss = float(np.mean(err ** 2))
    return loss, backward_batch(params, cache, 2.0 * err / len(err)), q


class Adam:
    def __init__(self, params: ScorerParams, lr: float = 5e-5, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.t = 0

    def step(self, params: ScorerParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params.tensors[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_step(batch: Sequence, params: ScorerParams, optimizer: Adam) -> float:
    """One Adam step on the squared loss; returns the loss before the step.

    ``batch`` holds (encoding, action, target) triples or objects with those
    attributes.
    """
    if not batch:
        raise ValueError("empty batch")
    encs, acts, ys = [], [], []
    for item in batch:
        enc, a, y = (item.encoding, item.action, item.target) if hasattr(item, "encoding") else item
        encs.append(enc)
        acts.append(a)
        ys.append(y)
    loss, grads, q = loss_and_grads(params, encs, acts, ys)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            worst = max(grads, key=lambda k: float(np.nanmax(np.abs(grads[k]))) if grads[k].size else 0.0)
            qmax = np.nanmax(np.abs(q))
        raise NonFiniteLoss(f"loss={loss}, max|Q|={qmax:.3g}, "
                            f"targets in [{min(ys):.3g}, {max(ys):.3g}], largest gradient in {worst}")
    optimizer.step(params, grads)
    return loss


class NeuralHeuristic:
    """Variable selector: the unbound variable with the smallest Q."""

    def __init__(self, params: ScorerParams):
        self.params = params

    def __call__(self, state: SearchState) -> int:
        free = state.unbound_vars()
        if not free:
            raise NoUnbound("every variable is bound")
        if len(free) == 1:
            return free[0]
        q = q_values_encoded(self.params, encode_state(state), free)
        return free[int(np.argmin(q))]


# ---------------------------------------------------------------------------
# weight files: magic, version, p, K, px, pc, hidden, tensor count, then per
# tensor (ndim, dims...), then the float64 data in declaration order
# ---------------------------------------------------------------------------

def dumps_params(params: ScorerParams) -> bytes:
    out = [MAGIC, struct.pack("<7I", VERSION, params.p, params.K, params.px, params.pc,
                              params.hidden, len(params.tensors))]
    for arr in params.tensors.values():
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
    for arr in params.tensors.values():
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def save_params(params: ScorerParams, path) -> None:
    Path(path).write_bytes(dumps_params(params))


def loads_params(data: bytes) -> ScorerParams:
    if data[:4] != MAGIC:
        raise FormatError("not a scorer weight file (bad magic)")
    try:
        version, p, K, px, pc, hidden, count = struct.unpack_from("<7I", data, 4)
    except struct.error:
        raise FormatError("truncated weight header") from None
    if version != VERSION:
        raise VersionMismatch(f"weight file version {version}, expected {VERSION}")
    expected = ScorerParams.shapes(p, hidden, px, pc)
    if count != len(expected):
        raise VersionMismatch(f"{count} tensors in file, architecture has {len(expected)}")
    offset = 4 + 28
    shapes = []
    try:
        for name, want in expected:
            (ndim,) = struct.unpack_from("<I", data, offset)
            dims = struct.unpack_from(f"<{ndim}I", data, offset + 4)
            offset += 4 + 4 * ndim
            if tuple(dims) != want:
                raise VersionMismatch(f"{name}: header shape {dims}, expected {want} for p={p}")
            shapes.append((name, want))
    except struct.error:
        raise FormatError("truncated tensor table") from None
    tensors = {}
    for name, shape in shapes:
        size = int(np.prod(shape))
        chunk = data[offset:offset + 8 * size]
        if len(chunk) != 8 * size:
            raise FormatError(f"truncated data for {name}")
        tensors[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        offset += 8 * size
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after tensor data")
    params = ScorerParams(p, K, hidden, tensors, px, pc)
    if not all(np.all(np.isfinite(t)) for t in tensors.values()):
        raise FormatError("weight file holds non-finite values")
    return params


def load_params(path) -> ScorerParams:
    return loads_params(Path(path).read_bytes())
