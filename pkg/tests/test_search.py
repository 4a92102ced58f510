import itertools
from dataclasses import replace
from math import comb

import pytest

from bankforge import problem
from bankforge.errors import NoSolution, SchemaError
from bankforge.geometry import HyperplaneGeometry
from bankforge.polytope import AccessKind, AffineAccess, IteratorDomain
from bankforge.program import AccessGroup
from bankforge.search import (
    CandidateBudget,
    SchemeFile,
    candidates,
    lcm_of_sizes,
    multidim_candidates,
    prepare,
    project,
    solve,
    split_duplicates,
    verify,
)


@pytest.fixture(scope="module")
def stride3_result(stride3):
    return solve(stride3)


def _reads(n, name="a", kind=AccessKind.READ, offset=0):
    it = IteratorDomain("i", 0, 1, 8, counter="L", instance="L")
    return tuple(
        AffineAccess("m", kind, ((1,),), (c + offset,), (it,), uid=(c,), name=f"{name}{c}")
        for c in range(n)
    )


def _flat_Ns(groups, dims, **kw):
    out = []
    for _, g in candidates(groups, dims, CandidateBudget(**kw)):
        if not out or out[-1] != g.N[0]:
            out.append(g.N[0])
    return out


def test_stride3_lattice_order(stride3):
    _, groups = prepare(stride3)
    Ns = _flat_Ns(groups, stride3.memory.dims)
    assert Ns[:4] == [4, 8, 12, 16]  # LCM 4 multiples come first
    assert Ns.index(5) < Ns.index(7) and Ns.index(6) < Ns.index(7)


def test_single_access_starts_at_one_bank():
    groups = [AccessGroup(_reads(1), "m")]
    assert _flat_Ns(groups, (32,))[0] == 1


def test_lcm_of_mixed_group_sizes():
    groups = [AccessGroup(_reads(2), "m"), AccessGroup(_reads(3, "b"), "m")]
    assert lcm_of_sizes(groups) == 6
    first = next(candidates(groups, (64,)))
    assert first == (1, HyperplaneGeometry.flat(6, 1, (1,), (64,)))


def test_candidates_are_gcd_unique():
    groups = [AccessGroup(_reads(2), "m")]
    seen = [g.identity() for _, g in candidates(groups, (8, 8), CandidateBudget(B_max=4, alpha_max=4))]
    assert len(seen) == len(set(seen))


def test_tiers_never_decrease():
    groups = [AccessGroup(_reads(3), "m")]
    tiers = [t for t, _ in candidates(groups, (40,))]
    assert tiers == sorted(tiers) and set(tiers) == {1, 2, 3}
    md = [t for t, _ in multidim_candidates(groups, (6, 10))]
    assert md == sorted(md)


def test_budget_caps_candidates_and_rejects_bad_fields():
    groups = [AccessGroup(_reads(2), "m")]
    assert len(list(candidates(groups, (64,), CandidateBudget(max_candidates=7)))) == 7
    assert max(g.N[0] for _, g in candidates(groups, (64,), CandidateBudget(max_N=3))) == 3
    with pytest.raises(ValueError):
        CandidateBudget(per_N=0)
    b = CandidateBudget(max_N=9, duplication=[2])
    assert CandidateBudget.from_json(b.to_json() | {"unknown": 1}) == b


def test_project_spmv():
    prob = problem.load(problem.bundled("spmv"))
    _, groups = prepare(prob)
    assert [len(g.members) for g in project(groups, 0)] == [4]
    assert [len(g.members) for g in project(groups, 1)] == [12]
    g = HyperplaneGeometry.multidim((4, 3), (1, 1), (1, 1), prob.memory.dims)
    assert [len(x.members) for x in project(groups, 1, g)] == [3, 3, 3, 3]


def test_project_md_writer_lanes(md_grid):
    _, groups = prepare(md_grid)
    writer = next(grp for grp in groups if grp.members[0].kind is AccessKind.WRITE)
    lanes = project([writer], 3)
    assert len(lanes) == 1
    starts = sorted(a.iterator("l").start for a in lanes[0].members)
    assert starts == [0, 1, 2, 3]


def test_project_collapses_redundant_accesses():
    # same offset on dim 0, different on dim 1
    it = IteratorDomain("i", 0, 1, 4, counter="L", instance="L")
    accs = tuple(
        AffineAccess("m", AccessKind.READ, ((1,), (0,)), (0, c), (it,), uid=(c,), name=f"a{c}")
        for c in range(3)
    )
    assert [len(g.members) for g in project([AccessGroup(accs, "m")], 0)] == [1]
    assert [len(g.members) for g in project([AccessGroup(accs, "m")], 1)] == [3]


MD_BEST = {
    "md_grid": (2, 2, 2, 4),
    "spmv": (4, 3),
    "sgd": (4, 4),
    "tile": (2, 2),
}


@pytest.mark.parametrize("name", sorted(MD_BEST))
def test_projected_checks_do_not_exceed_flat(name):
    prob = problem.load(problem.bundled(name))
    _, groups = prepare(prob)
    N = MD_BEST[name]
    g = HyperplaneGeometry.multidim(N, (1,) * len(N), (1,) * len(N), prob.memory.dims)
    flat = sum(comb(len(x.members), 2) for x in groups)
    md = sum(comb(len(x.members), 2) for d in range(g.ndim) for x in project(groups, d, g))
    assert md <= flat


def test_split_duplicates_replicates_writers():
    grp = AccessGroup(_reads(1, "w", AccessKind.WRITE) + _reads(5), "m")
    out = split_duplicates([grp], 2)
    assert [len(g.members) for g in out] == [4, 3]
    assert all(g.members[0].name == "w0" for g in out)
    assert split_duplicates([grp], 8) is None


def test_stride3_schemes(stride3_result):
    sols = stride3_result.solutions
    plain = [s for s in sols if s.duplication == 1 and s.geometry.is_flat]
    Ns = {s.geometry.N[0] for s in plain}
    assert {4, 5, 6} <= Ns
    five = next(s for s in plain if s.geometry.N == (5,) and s.geometry.B == (1,)
                and s.geometry.alpha == (1,))
    six = next(s for s in plain if s.geometry.N == (6,))
    assert max(five.metrics.fo) == 5 and max(six.metrics.fo) == 1
    assert not any(s.geometry.N[0] < 4 for s in plain if s.geometry.ports == 1)


def test_ranking_is_sorted(stride3_result):
    keys = [s.rank_key(stride3_result.objective) for s in stride3_result.solutions]
    assert keys == sorted(keys)
    idents = [(s.geometry.identity(), s.duplication) for s in stride3_result.solutions]
    assert len(idents) == len(set(idents))


def test_solve_is_deterministic(stride3, stride3_result):
    again = solve(stride3)
    a = SchemeFile.from_result(stride3, stride3_result).to_json()
    b = SchemeFile.from_result(stride3, again).to_json()
    a["stats"].pop("seconds"), b["stats"].pop("seconds")
    assert a == b


def test_scheme_file_round_trip_and_verify(stride3, stride3_result, tmp_path):
    sf = SchemeFile.from_result(stride3, stride3_result, top=5)
    assert len(sf.alternatives) == 4
    path = tmp_path / "s.json"
    path.write_text(sf.dumps())
    back = SchemeFile.load(path)
    assert back.to_json() == sf.to_json()
    for entry in [back.chosen] + back.alternatives:
        assert verify(stride3, entry).ok


def test_verify_catches_tampering(stride3, stride3_result):
    sf = SchemeFile.from_result(stride3, stride3_result)
    entry = next(e for e in sf.alternatives if e.duplication == 1 and e.geometry.is_flat)
    bad = replace(entry, geometry=HyperplaneGeometry.flat(2, 1, (1,), stride3.memory.dims))
    v = verify(stride3, bad)
    assert not v.valid and not v.trace.ok and not v.dag_matches


def test_scheme_file_bad_version(stride3, stride3_result):
    obj = SchemeFile.from_result(stride3, stride3_result).to_json()
    obj["version"] = 99
    with pytest.raises(SchemaError):
        SchemeFile.from_json(obj)
    del obj["chosen"]
    obj["version"] = 1
    with pytest.raises(SchemaError):
        SchemeFile.from_json(obj)


def test_no_solution_within_budget(stride3):
    with pytest.raises(NoSolution):
        solve(stride3, CandidateBudget(max_N=2, duplication=()))


@pytest.mark.parametrize("name,style", [("spmv", "multidim"), ("sgd", "multidim")])
def test_bundled_prefer_multidim(name, style):
    res = solve(problem.load(problem.bundled(name)))
    assert res.best.geometry.style.value == style
    assert res.stats["solutions"] == len(res.solutions)
    flat = solve(problem.load(problem.bundled(name)), multidim=False)
    assert all(s.geometry.is_flat for s in flat.solutions)


def test_all_pairs_in_stride3_group_are_distinct_banks(stride3_result):
    g = next(s for s in stride3_result.solutions if s.geometry.N == (6,)).geometry
    _, groups = prepare(problem.load(problem.bundled("stride3")))
    from bankforge.geometry import accesses_conflict

    for a, b in itertools.combinations(groups[0].members, 2):
        assert not accesses_conflict(a, b, g)
