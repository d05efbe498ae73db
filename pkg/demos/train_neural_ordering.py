"""
Learning a variable ordering with MCTS self-play
================================================

A graph network scores each unbound variable; search trees over variable
choices produce training targets from how often random completions succeed
below each choice. This script runs a short training session and compares the
learned ordering with MinDom on fresh instances.

Expect about ten minutes on one core. Set ``TRAIN`` lower for a quicker look
(the learned ordering gets worse).
"""

import time

import numpy as np

from copmcts import RbParams, TrainConfig, Trainer, backtrack_solve, exact_optimum, rb_generate
from copmcts.bench import topk, topk_summary
from copmcts.heuristics import min_dom
from copmcts.neural import NeuralHeuristic

TRAIN = 10
params = dict(m=2, n=15, gamma=0.7, beta=3, rho=0.21, delta=0, repeat_scopes=True)

# %%
# Training instances are taken as they come; unsatisfiable ones are proven
# dead by the tree and skipped.
train = [rb_generate(RbParams(**params, seed=1000 + i)) for i in range(TRAIN)]
t0 = time.time()
trainer = Trainer(TrainConfig(t_max=500, seed=0))
weights = trainer.run(train)
losses = [float(row[2]) for row in trainer.log_rows]
print(f"{trainer.steps} gradient steps in {time.time() - t0:.0f}s; "
      f"loss {np.mean(losses[:50]):.3g} -> {np.mean(losses[-50:]):.3g}")

# %%
# Held-out satisfiable instances from the same distribution.


def satisfiable(params, count, seed):
    out = []
    while len(out) < count:
        x = rb_generate(RbParams(**params, seed=seed))
        seed += 1
        if exact_optimum(x) is not None:
            out.append(x)
    return out


held = satisfiable(params, 20, 5000)
for name, h in (("MinDom", min_dom), ("neural", NeuralHeuristic(weights))):
    nodes = [backtrack_solve(x, h).nodes_to_first for x in held]
    print(f"{name:<7} mean nodes to first solution {np.mean(nodes):.2f}")

# %%
# With weighted constraints the same model can enumerate solutions in order;
# the best of the first k gets closer to the optimum as k grows. The network
# was trained on pure CSPs, so this is also a transfer test.
cop = dict(params, delta=5)
cop_held = [(f"cop{i}", x) for i, x in enumerate(satisfiable(cop, 10, 6000))]
for row in topk_summary(topk(cop_held, [1, 5, 10, 20], weights)):
    gap = "-" if row["mean_gap"] is None else f"{row['mean_gap']:.2f}%"
    print(f"k={row['k']:<3} mean gap {gap}  optimal on {row['zero_gap']}/{row['instances']}")
