"""Self-play training loop: MCTS over each training instance produces
(state, action, target) transitions; the online scorer is fitted to them by
Adam on a squared loss while MCTS selection reads a periodically synced
target copy.

Target for the chosen variable node s':

    y = c3 * g(tau(s')) + c4 * (1 - r(s'))

with g the gap of tau(s') to the instance incumbent, clamped to [0, 1]
(g = 1 while s' has no successful simulation).
"""

from __future__ import annotations

import csv
import logging
import math
import pickle
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import INFEASIBLE, CopInstance
from .errors import CopError, NonFiniteLoss, ParamError, TreeExhausted, UnvisitedNode
from .mcts import VAR, MctsTree, Node, QScorer
from .neural import Adam, ScorerParams, StateEncoding, save_params, train_step
from .search import DEFAULT_PROPAGATION

log = logging.getLogger(__name__)

LOG_FIELDS = ["instance", "iteration", "loss", "incumbent", "buffer"]


RECORD_MODES = ("leaf", "path")


@dataclass
class TrainConfig:
    t_max: int = 500
    n_sim: int = 10
    capacity: int = 100_000
    batch_size: int = 16
    c1: float = 1.0
    c3: float = 1.0
    c4: float = 1.0
    alpha_step: float = 0.1
    sync_every: int = 10
    sync_per_instance: bool = True
    lr: float = 1e-3
    seed: int = 0
    p: int = 128
    K: int = 5
    hidden: int = 64
    propagation: str = DEFAULT_PROPAGATION
    checkpoint_every: int = 0
    # "leaf": one transition per iteration; "path": one per variable decision
    # on the selection path
    record: str = "leaf"

    def __post_init__(self):
        if self.record not in RECORD_MODES:
            raise ParamError(f"record must be one of {RECORD_MODES}")
        for name in ("t_max", "n_sim", "capacity", "batch_size", "p", "K", "hidden"):
            if getattr(self, name) < 1:
                raise ParamError(f"{name} must be at least 1")
        if self.sync_every < 0 or self.checkpoint_every < 0:
            raise ParamError("periods must be non-negative (0 disables)")
        for name in ("c1", "c3", "c4", "alpha_step", "lr"):
            if not math.isfinite(getattr(self, name)):
                raise ParamError(f"{name} must be finite")

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        """Full-scale settings reported for the original experiments."""
        base = dict(t_max=10_000, n_sim=10, capacity=1_000_000, batch_size=128, sync_every=10, lr=5e-5)
        base.update(overrides)
        return cls(**base)


@dataclass
class Transition:
    encoding: StateEncoding
    action: int
    target: float


class ReplayBuffer:
    """FIFO ring buffer with uniform sampling without replacement."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def __len__(self):
        return len(self._items)

    def add(self, item: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def ordered(self) -> list[Transition]:
        """Contents oldest first."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._next:] + self._items[:self._next]

    def sample(self, rng: np.random.Generator, size: int) -> list[Transition]:
        size = min(size, len(self._items))
        idx = rng.choice(len(self._items), size=size, replace=False)
        return [self._items[i] for i in idx]


def objective_gap(tau: float, best: float) -> float:
    if tau == INFEASIBLE or best == INFEASIBLE:
        return 1.0
    return min(1.0, max(0.0, (tau - best) / max(best, 1)))


def compute_target(node: Node, best: float, c3: float = 1.0, c4: float = 1.0) -> float:
    if node.N == 0:
        raise UnvisitedNode(f"{node} has no simulations")
    return c3 * objective_gap(node.tau, best) + c4 * (1.0 - node.successes / node.N)


def sync_target(online: ScorerParams, target: ScorerParams) -> None:
    """Overwrite ``target`` with a copy of ``online`` (in place, so holders see it)."""
    for name, arr in online.tensors.items():
        target.tensors[name] = arr.copy()


class Trainer:
    """Resumable driver; state between instances can be pickled as a checkpoint."""

    def __init__(self, config: TrainConfig):
        self.config = config
        seeds = np.random.SeedSequence(config.seed).spawn(2)
        self.online = ScorerParams.initialize(config.p, config.K, config.hidden,
                                              np.random.default_rng(seeds[0]))
        self.target = self.online.copy()
        self.optimizer = Adam(self.online, lr=config.lr)
        self.buffer = ReplayBuffer(config.capacity)
        self.rng = np.random.default_rng(seeds[1])
        self.steps = 0
        self.syncs = 0
        self.next_instance = 0
        self.log_rows: list[list] = []

    def sync(self) -> None:
        sync_target(self.online, self.target)
        self.syncs += 1

    def run(self, instances: Sequence[CopInstance], checkpoint_path=None,
            callback: Callable | None = None, stop_after: int | None = None) -> ScorerParams:
        """Train on ``instances`` from ``next_instance`` on; returns the online params.

        ``stop_after`` halts after that many instances in this call (used to
        exercise resumption).
        """
        if not instances:
            raise ParamError("no training instances")
        done = 0
        while self.next_instance < len(instances):
            idx = self.next_instance
            try:
                self.train_instance(idx, instances[idx], callback)
            except NonFiniteLoss:
                raise
            except CopError as exc:
                log.warning("instance %d skipped: %s", idx, exc)
            self.next_instance += 1
            done += 1
            every = self.config.checkpoint_every
            if checkpoint_path is not None and every and self.next_instance % every == 0:
                self.save_checkpoint(checkpoint_path)
            if stop_after is not None and done >= stop_after:
                break
        return self.online

    def train_instance(self, idx: int, instance: CopInstance, callback=None) -> None:
        cfg = self.config
        scorer = QScorer(self.target, self.syncs)
        tree = MctsTree(instance, scorer, cfg.c1, cfg.alpha_step, cfg.propagation)
        for t in range(cfg.t_max):
            try:
                info = tree.iterate(self.rng, cfg.n_sim, encode=True if cfg.record == "leaf" else "path")
            except TreeExhausted as exc:
                log.info("instance %d: tree closed after %d iterations (%s)", idx, t, exc)
                break
            if cfg.record == "path":
                decisions = [n for n in info.path if n.kind == VAR]
                for node, enc in zip(decisions, info.path_encodings):
                    y = compute_target(node, tree.best_objective, cfg.c3, cfg.c4)
                    self.buffer.add(Transition(enc, node.var, y))
            else:
                y = compute_target(info.leaf, tree.best_objective, cfg.c3, cfg.c4)
                self.buffer.add(Transition(info.encoding, info.leaf.var, y))
            batch = self.buffer.sample(self.rng, cfg.batch_size)
            loss = train_step(batch, self.online, self.optimizer)
            self.steps += 1
            if cfg.sync_every and self.steps % cfg.sync_every == 0:
                self.sync()
                scorer.update(self.target)
            self.log_rows.append([idx, t, repr(loss), _fmt(tree.best_objective), len(self.buffer)])
            if callback is not None:
                callback(tree, info)
        if cfg.sync_per_instance:
            self.sync()

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_FIELDS)
            w.writerows(self.log_rows)

    def save_checkpoint(self, path) -> None:
        state = {
            "config": asdict(self.config), "online": self.online, "target": self.target,
            "optimizer": self.optimizer, "buffer": self.buffer, "rng": self.rng.bit_generator.state,
            "steps": self.steps, "syncs": self.syncs, "next_instance": self.next_instance,
            "log_rows": self.log_rows,
        }
        tmp = Path(str(path) + ".tmp")
        with open(tmp, "wb") as fh:
            pickle.dump(state, fh, protocol=pickle.HIGHEST_PROTOCOL)
        tmp.replace(path)
        save_params(self.online, Path(str(path) + ".weights"))

    @classmethod
    def from_checkpoint(cls, path) -> "Trainer":
        with open(path, "rb") as fh:
            state = pickle.load(fh)
        self = cls.__new__(cls)
        self.config = TrainConfig(**state["config"])
        self.online = state["online"]
        self.target = state["target"]
        self.optimizer = state["optimizer"]
        self.buffer = state["buffer"]
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = state["rng"]
        self.steps = state["steps"]
        self.syncs = state["syncs"]
        self.next_instance = state["next_instance"]
        self.log_rows = state["log_rows"]
        return self


def _fmt(x: float) -> str:
    if x == INFEASIBLE:
        return "inf"
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def train(instances: Sequence[CopInstance], config: TrainConfig | None = None,
          callback: Callable | None = None) -> ScorerParams:
    return Trainer(config or TrainConfig()).run(instances, callback=callback)
