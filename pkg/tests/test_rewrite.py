import numpy as np
import pytest
from conftest import geometries, padded_points
from hypothesis import given, settings
from hypothesis import strategies as st

from bankforge.errors import NoMersenneMultiple, NotMersenne, NotRepresentable
from bankforge.geometry import HyperplaneGeometry, bank_address, bank_offset, select_parallelotope
from bankforge.rewrite import (
    Dag,
    build_resolution,
    census,
    composite_mod,
    crandall_div,
    crandall_mod,
    mersenne_multiple,
    rewrite_op,
    shift_add_mul,
    shift_add_plan,
)

WIDTH = 12
XS = np.arange(1 << WIDTH, dtype=np.int64)


def _run(build, c, width=WIDTH):
    dag = Dag()
    x = dag.input("x", (1 << width) - 1)
    root = build(x, c)
    xs = np.arange(1 << width, dtype=np.int64)
    return np.broadcast_to(dag.evaluate({"x": xs}, [root])[root.id], xs.shape), dag, root


@pytest.mark.parametrize("n", range(2, 17))
def test_crandall_exact(n):
    M = (1 << n) - 1
    got, _, _ = _run(crandall_mod, M)
    assert np.array_equal(got, XS % M)
    got, _, _ = _run(crandall_div, M)
    assert np.array_equal(got, XS // M)


@pytest.mark.parametrize("M2", [m for m in range(2, 200) if mersenne_multiple(m) and (m + 1) & m])
def test_composite_mod_exact(M2):
    got, dag, root = _run(composite_mod, M2)
    assert np.array_equal(got, XS % M2)
    assert "Mod" not in dag.census([root])


@pytest.mark.parametrize("c", [c for c in range(1, 66) if shift_add_plan(c)])
def test_shift_add_exact(c):
    got, dag, root = _run(shift_add_mul, c)
    assert np.array_equal(got, XS * c)
    assert "Mul" not in dag.census([root])


def test_shift_add_plan_preferences():
    assert shift_add_plan(7).terms == ((1, 3), (-1, 0))  # 8 - 1, not 4 + 2 + 1
    assert shift_add_plan(6).terms == ((1, 2), (1, 1))
    assert shift_add_plan(8).terms == ((1, 3),)
    assert shift_add_plan(11) is None


def test_rejections():
    dag = Dag()
    x = dag.input("x", 100)
    with pytest.raises(NotMersenne):
        crandall_mod(x, 6)
    with pytest.raises(NoMersenneMultiple):
        composite_mod(x, 11)
    with pytest.raises(NotRepresentable):
        shift_add_mul(x, 11)


def test_census_counts():
    c = census(1, 65)
    assert c.counts() == {"mersenne": 5, "mersenne_divisors": 5, "powers_of_two": 6, "shift_add": 33}
    assert c.mersenne_divisors == (5, 9, 17, 21, 51)


def test_dag_constants_nonnegative_and_hash_consed():
    dag = Dag()
    x = dag.input("x", 10)
    assert (x + 1).id == (x + 1).id
    with pytest.raises(ValueError):
        dag.const(-1)


@pytest.mark.parametrize("op,c,left", [("mod", 7, None), ("mod", 6, "Mod"), ("div", 6, "Div"),
                                       ("mul", 10, None), ("mod", 8, None)])
def test_rewrite_op_verdict(op, c, left):
    chk = rewrite_op(op, c, 10)
    assert chk.equivalent and chk.verdict() == "equivalent over [0,1024)"
    native = {"Mod", "Div", "Mul"} & set(chk.dag.census([chk.root]))
    assert native == ({left} if left else set())


@pytest.mark.parametrize("N,expect", [(4, {"And"}), (7, set()), (6, {"Mod"})])
def test_precedence_by_bank_count(N, expect):
    g = HyperplaneGeometry.flat(N, 1, (1,), (64,))
    dag = build_resolution(g.with_P(select_parallelotope(g)))
    ba_ops = set(dag.dag.census(list(dag.ba)))
    assert {"Mod", "Div", "Mul"} & ba_ops == expect - {"And"}
    if "And" in expect:
        assert ba_ops == {"And"}


@pytest.mark.parametrize("g", geometries(60, seed=5, max_elements=30000), ids=str)
def test_resolution_matches_equations(g):
    pts = padded_points(g)
    ba, bo = build_resolution(g).evaluate(pts)
    assert np.array_equal(ba, bank_address(pts, g))
    assert np.array_equal(bo, bank_offset(pts, g))


@settings(max_examples=40, deadline=None)
@given(c=st.integers(1, 300), width=st.integers(1, 14), op=st.sampled_from(["mod", "div", "mul"]))
def test_rewrite_op_always_equivalent(c, width, op):
    assert rewrite_op(op, c, width).equivalent
