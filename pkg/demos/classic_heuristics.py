"""
Classic variable orderings on random CSPs
=========================================

Random binary CSPs from the RB model sit at the phase transition, where
instances are hardest. We count search nodes to the first solution for the
hand-crafted orderings and compare them with a random order.
"""

import numpy as np

from copmcts import RbParams, backtrack_solve, exact_optimum, rb_generate
from copmcts.heuristics import Impact, dom_ddeg, dom_tdeg, min_dom

# %%
# n=15 needs more constraints than there are distinct variable pairs, so
# scopes may repeat.
params = dict(m=2, n=15, gamma=0.7, beta=3, rho=0.21, delta=0, repeat_scopes=True)
instances, seed = [], 0
while len(instances) < 20:
    inst = rb_generate(RbParams(**params, seed=seed))
    seed += 1
    if exact_optimum(inst) is not None:  # keep satisfiable ones
        instances.append(inst)
print(f"{len(instances)} satisfiable instances out of {seed} drawn")

# %%
rng = np.random.default_rng(0)


def random_order(state):
    free = state.unbound_vars()
    return free[int(rng.integers(len(free)))]


methods = {"random": random_order, "MinDom": min_dom, "Dom/Ddeg": dom_ddeg,
           "Dom/Tdeg": dom_tdeg, "Impact": Impact()}
for name, h in methods.items():
    nodes = [backtrack_solve(x, h).nodes_to_first for x in instances]
    print(f"{name:<9} mean {np.mean(nodes):6.2f}  median {np.median(nodes):5.1f}  max {max(nodes)}")
