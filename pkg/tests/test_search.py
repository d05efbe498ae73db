import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copmcts.core import INFEASIBLE, Constraint, CopInstance, RbParams, assignment_problem, rb_generate
from copmcts.errors import CutoffUnknown, ParamError
from copmcts.heuristics import dom_ddeg, max_regret, min_dom
from copmcts.search import (SearchState, backtrack_solve, exact_optimum, gap, lexical_values,
                            min_cost_values, propagate, read_report_csv)

from oracles import ASSIGNMENT_COSTS, brute_all, brute_objective, brute_optimum

A, B, C = 0, 1, 2


def figure1_instance():
    # x1 in {a, b, c}, x2 in {a, b}; rel(c1) = {(a,b,2), (c,b,2)}
    c1 = Constraint((0, 1), {(A, B): 2, (C, B): 2})
    return CopInstance(2, ((A, B, C), (A, B)), (c1,), 2, 2)


def tiny(seed, rho=0.21, delta=5, n=5, propagation=None):
    return rb_generate(RbParams(2, n, 0.8, 0.8, rho, delta, seed=seed, repeat_scopes=True))


class TestPropagate:
    @pytest.mark.parametrize("mode", ["fc", "mac"])
    def test_figure1_support(self, mode):
        s = SearchState(figure1_instance(), mode)
        assert propagate(s, 0, A)
        assert s.current_values(1) == [B]

    @pytest.mark.parametrize("mode", ["fc", "mac"])
    def test_figure1_wipeout(self, mode):
        s = SearchState(figure1_instance(), mode)
        assert not propagate(s, 0, B)

    def test_last_variable_binds_to_singletons(self):
        s = SearchState(figure1_instance())
        assert propagate(s, 0, C) and propagate(s, 1, B)
        assert all(s.domain_size(v) == 1 for v in range(2))
        assert s.partial_cost == 2 and s.n_unbound == 0

    def test_rejects_bound_variable_and_foreign_value(self):
        s = SearchState(figure1_instance())
        with pytest.raises(ParamError):
            propagate(s, 1, 7)
        propagate(s, 0, A)
        with pytest.raises(ParamError):
            propagate(s, 0, C)

    def test_unknown_propagation_mode(self):
        with pytest.raises(ParamError):
            SearchState(figure1_instance(), "gac3000")

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 5000), mode=st.sampled_from(["fc", "mac"]), picks=st.lists(st.integers(0, 99), min_size=1, max_size=6))
    def test_trail_restores_domains_exactly(self, seed, mode, picks):
        inst = tiny(seed)
        s = SearchState(inst, mode)
        snaps = [s.snapshot()]
        for p in picks:
            free = s.unbound_vars()
            if not free:
                break
            v = free[p % len(free)]
            ks = s.current_indices(v)
            ok = s.assign(v, ks[p % len(ks)])
            snaps.append(s.snapshot())
            if not ok:
                break
        for snap in reversed(snaps[:-1]):
            s.undo()
            assert s.snapshot() == snap

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 5000), mode=st.sampled_from(["fc", "mac"]))
    def test_partial_cost_matches_completed_constraints(self, seed, mode):
        inst = tiny(seed)
        s = SearchState(inst, mode)
        costs = [0]
        while s.n_unbound:
            v = s.unbound_vars()[0]
            if not s.assign(v, s.current_indices(v)[0]):
                break
            bound = s.bound
            exp = sum(c.relation[tuple(bound[x] for x in c.scope)]
                      for c in inst.constraints if all(x in bound for x in c.scope))
            assert s.partial_cost == exp
            assert s.partial_cost >= costs[-1]
            costs.append(s.partial_cost)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 5000))
    def test_mac_prunes_at_least_as_much_as_fc(self, seed):
        inst = tiny(seed)
        fc, mac = SearchState(inst, "fc"), SearchState(inst, "mac")
        v = 0
        k = fc.current_indices(v)[0]
        ok_fc, ok_mac = fc.assign(v, k), mac.assign(v, k)
        if ok_mac:
            assert ok_fc
            assert all(m & f == m for m, f in zip(mac.dom, fc.dom))

    def test_values_never_leave_supported_domain(self):
        # every value left after FC has a support in each binary constraint with a bound neighbour
        inst = tiny(11, n=6)
        s = SearchState(inst, "fc")
        for k in s.current_indices(0):
            if s.assign(0, k):
                break
            s.undo()
        else:
            pytest.skip("every value of x0 wipes out")
        v0 = inst.domains[0][k]
        for c in inst.constraints:
            if 0 in c.scope and len(c.scope) == 2:
                other = c.scope[1] if c.scope[0] == 0 else c.scope[0]
                for val in s.current_values(other):
                    key = (v0, val) if c.scope[0] == 0 else (val, v0)
                    assert key in c.relation


class TestValueOrdering:
    def test_min_cost_breaks_ties_by_value(self):
        c = Constraint((0, 1), {(0, 0): 3, (0, 1): 1, (0, 2): 1, (1, 0): 0})
        inst = CopInstance(2, ((0, 1), (2, 1, 0)), (c,), 2, 3)
        s = SearchState(inst, "fc")
        s.assign(0, 0)
        vals = inst.domains[1]
        assert [vals[k] for k in min_cost_values(s, 1)] == [1, 2, 0]
        assert [vals[k] for k in lexical_values(s, 1)] == [0, 1, 2]


class TestBacktrack:
    def test_unsat_instance(self):
        dead = Constraint((0, 1), {})
        inst = CopInstance(2, ((0, 1), (0, 1)), (dead,), 2, 0)
        rep = backtrack_solve(inst, min_dom)
        assert rep.solutions == [] and not rep.cutoff_hit

    def test_assignment_greedy_trace(self):
        rep = backtrack_solve(assignment_problem(ASSIGNMENT_COSTS), max_regret)
        first = rep.solutions[0]
        assert first.objective == 13 and first.nodes <= 4
        assert first.assignment == {0: 3, 1: 1, 2: 2, 3: 0}

    def test_cutoff_one(self):
        inst = tiny(3, n=6)
        rep = backtrack_solve(inst, min_dom, node_cutoff=1, k=math.inf)
        assert rep.cutoff_hit and rep.total_nodes == 1

    def test_k_one_records_one(self):
        rep = backtrack_solve(tiny(5, rho=0.0, n=5), min_dom, k=1)
        assert len(rep.solutions) == 1

    def test_bad_arguments(self):
        with pytest.raises(ParamError):
            backtrack_solve(tiny(1), min_dom, k=0)
        with pytest.raises(ParamError):
            backtrack_solve(tiny(1), min_dom, node_cutoff=0)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10_000), rho=st.sampled_from([0.0, 0.21, 0.4]),
           delta=st.sampled_from([0, 5]), mode=st.sampled_from(["fc", "mac"]),
           heur=st.sampled_from([min_dom, dom_ddeg, max_regret]))
    def test_exhaustive_enumeration_matches_brute_force(self, seed, rho, delta, mode, heur):
        inst = tiny(seed, rho, delta)
        rep = backtrack_solve(inst, heur, k=math.inf, node_cutoff=10**7, propagation=mode)
        got = sorted((tuple(s.assignment[i] for i in range(inst.num_variables)), s.objective)
                     for s in rep.solutions)
        assert got == sorted(brute_all(inst))
        nodes = [s.nodes for s in rep.solutions]
        assert nodes == sorted(nodes)
        for s in rep.solutions:
            assert brute_objective(inst, tuple(s.assignment[i] for i in range(inst.num_variables))) == s.objective

    def test_report_csv(self, tmp_path):
        rep = backtrack_solve(tiny(2, rho=0.0), min_dom, k=3)
        path = tmp_path / "r.csv"
        rep.write_csv(path)
        rows = read_report_csv(path)
        assert [r["index"] for r in rows] == [0, 1, 2]
        assert [r["objective"] for r in rows] == [s.objective for s in rep.solutions]
        assert [r["nodes"] for r in rows] == [s.nodes for s in rep.solutions]

    def test_best_of_first_is_non_increasing(self):
        rep = backtrack_solve(tiny(9, rho=0.0, n=6), min_dom, k=25)
        seq = [rep.best_of_first(k) for k in range(1, 26)]
        assert all(a >= b for a, b in zip(seq, seq[1:]))


class TestExactOptimum:
    def test_assignment(self):
        inst = assignment_problem(ASSIGNMENT_COSTS)
        assert brute_optimum(inst) == 13
        assert exact_optimum(inst).objective == 13

    def test_single_constraint(self):
        inst = CopInstance(2, ((0, 1), (0,)), (Constraint((0, 1), {(0, 0): 3, (1, 0): 7}),), 2, 7)
        opt = exact_optimum(inst)
        assert opt.objective == 3 and opt.assignment == {0: 0, 1: 0}

    def test_satisfiable_csp_is_zero(self):
        inst = tiny(4, rho=0.0, delta=0)
        assert exact_optimum(inst).objective == 0

    def test_unsat_returns_none(self):
        inst = CopInstance(2, ((0, 1), (0, 1)), (Constraint((0, 1), {}),), 2, 0)
        assert exact_optimum(inst) is None

    def test_cutoff_unknown(self):
        inst = rb_generate(RbParams(2, 12, 0.7, 1, 0.0, 5, seed=1))
        with pytest.raises(CutoffUnknown) as err:
            exact_optimum(inst, node_cutoff=20)
        assert err.value.nodes == 20

    @settings(max_examples=80, deadline=None)
    @given(seed=st.integers(0, 10_000), rho=st.sampled_from([0.0, 0.21]),
           delta=st.sampled_from([0, 5]), mode=st.sampled_from(["fc", "mac"]))
    def test_matches_brute_force(self, seed, rho, delta, mode):
        inst = tiny(seed, rho, delta)
        opt = exact_optimum(inst, propagation=mode)
        ref = brute_optimum(inst)
        if ref == INFEASIBLE:
            assert opt is None
        else:
            assert opt.objective == ref
            assert brute_objective(inst, tuple(opt.assignment[i] for i in range(inst.num_variables))) == ref


class TestGap:
    def test_examples(self):
        assert gap(13, 13) == 0
        assert gap(15, 13) == pytest.approx(15.3846, abs=1e-4)
        assert gap(5, 0) == 500
