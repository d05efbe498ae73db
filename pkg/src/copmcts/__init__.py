"""Variable ordering for weighted constraint optimization, learned by MCTS
self-play with a message-passing Q-scorer, plus the classic baselines, a
backtracking solver and an exact branch-and-bound oracle."""

from .core import (INFEASIBLE, CompiledInstance, Constraint, CopInstance, RbParams,
                   assignment_problem, dumps_instance, evaluate_objective, load_instance,
                   loads_instance, rb_generate, save_instance)
from .errors import (ActionBound, CopError, CutoffUnknown, DeadTree, DimensionMismatch,
                     EmptyDomain, FormatError, NonFiniteLoss, NoUnbound, ParamError,
                     TreeExhausted, UnboundVariable, UnvisitedNode, VersionMismatch)
from .heuristics import (Impact, active_degree, ctr_features, dom_ddeg, dom_tdeg,
                         make_var_heuristic, max_regret, min_dom, var_features)
from .mcts import MctsTree, QScorer, check_tree, simulate
from .neural import (Adam, NeuralHeuristic, ScorerParams, encode_state, load_params,
                     q_value, q_values_all, save_params, train_step)
from .search import (SearchState, Solution, SolveReport, backtrack_solve, exact_optimum, gap,
                     min_cost_values, propagate)
from .trainer import ReplayBuffer, TrainConfig, Trainer, Transition, compute_target, sync_target, train

__version__ = "0.1.0"
