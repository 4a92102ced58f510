import json

import numpy as np
import pytest
from randprob import random_geometry_for, random_problem

from bankforge import sim
from bankforge.errors import BoundsBudgetExceeded, NoValidP
from bankforge.geometry import HyperplaneGeometry, select_parallelotope, validate
from bankforge.polytope import AccessKind, AffineAccess, IteratorDomain
from bankforge.program import AccessGroup
from bankforge.rewrite import build_resolution
from bankforge.search import prepare


def _flat(N, B=1, alpha=(1,), dims=(48,), ports=1):
    g = HyperplaneGeometry.flat(N, B, alpha, dims, ports)
    return g.with_P(select_parallelotope(g))


def test_stride3_valid_schemes_replay_clean(stride3):
    _, groups = prepare(stride3)
    for N, B, a in ((4, 3, 2), (5, 1, 1), (6, 1, 1)):
        t = sim.replay_groups(groups, _flat(N, B, (a,)))
        assert t.ok and not t.sampled and t.cycles == 8


def test_stride3_two_banks_conflict(stride3):
    _, groups = prepare(stride3)
    t = sim.replay_groups(groups, _flat(2))
    assert not t.ok
    r = t.report
    assert r.kind == "bank_conflict" and r.bank == 0 and r.cycle == {"k": 0}
    assert {name for name, _ in r.accesses} == {"r1", "r2"}
    assert "bank_conflict" in t.text()
    assert json.loads(t.dumps())["report"]["kind"] == "bank_conflict"


def test_dual_port_tolerates_pairs(stride3):
    _, groups = prepare(stride3)
    assert sim.replay_groups(groups, _flat(2, ports=2)).ok
    assert not sim.replay_groups(groups, _flat(1, ports=2)).ok


def _single(stop, dims):
    it = IteratorDomain("i", 0, 1, stop, counter="L", instance="L")
    a = AffineAccess("m", AccessKind.READ, ((1,),), (0,), (it,), uid=(0,), name="a")
    return [AccessGroup((a,), "m")]


def test_out_of_bounds_is_reported():
    t = sim.replay_groups(_single(10, (8,)), _flat(2, dims=(8,)))
    assert t.report.kind == "out_of_bounds" and t.report.address == [8]


def test_dag_mismatch_is_reported():
    g = _flat(4, dims=(8,))
    wrong = build_resolution(_flat(2, dims=(8,)))
    t = sim.replay_groups(_single(8, (8,)), g, dag=wrong)
    assert t.report.kind == "dag_mismatch"


def test_sampling_is_flagged(md_grid):
    _, groups = prepare(md_grid)
    g = HyperplaneGeometry.multidim((2, 2, 2, 4), (1, 1, 1, 1), (1, 1, 1, 1), (4, 4, 4, 16))
    t = sim.replay_groups(groups, g, budget=500, seed=1)
    assert t.ok and t.sampled
    assert "sampled" in t.text()


def test_recording_events(stride3):
    _, groups = prepare(stride3)
    t = sim.replay_groups(groups, _flat(6), record=True)
    assert len(t.events) == t.cycles
    assert all(len({bank for _, bank in ev}) == len(ev) for ev in t.events)


def test_dynamic_bound_needs_a_value(stride3):
    from dataclasses import replace

    from bankforge.search import Solution

    it = IteratorDomain("i", 0, 1, None, counter="L", instance="L")
    a = AffineAccess("m", AccessKind.READ, ((1,),), (0,), (it,), uid=(0,), name="a")
    g = _flat(2, dims=(256,))
    sol = Solution(g, None, build_resolution(g), {}, groups=[AccessGroup((a,), "m")])
    with pytest.raises(BoundsBudgetExceeded):
        sim.replay(replace(stride3, concrete_bounds={}), sol)
    assert sim.replay(replace(stride3, concrete_bounds={}), sol, {"i": 10}).ok


def test_replay_agrees_with_validate_on_random_problems():
    rng = np.random.default_rng(123)
    seen = 0
    while seen < 60:
        prob = random_problem(rng)
        g = random_geometry_for(rng, prob)
        try:
            g = g.with_P(select_parallelotope(g))
        except NoValidP:
            continue
        _, groups = prepare(prob)
        t = sim.replay_groups(groups, g)
        if t.sampled:
            continue
        assert t.ok == validate(groups, g), (prob.dumps(), g)
        seen += 1
