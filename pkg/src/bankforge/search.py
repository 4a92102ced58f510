"""Candidate enumeration, verification and ranking of banking schemes."""
from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field, fields, replace
from functools import reduce


from bankforge import costmodel
from bankforge.errors import BoundsBudgetExceeded, NoSolution, NoValidP
from bankforge.geometry import (
    HyperplaneGeometry,
    SchemeMetrics,
    metrics,
    select_parallelotope,
    validate,
)
from bankforge.polytope import DEFAULT_BUDGET, AccessKind
from bankforge.program import AccessGroup, build_program, group_accesses
from bankforge.rewrite import build_resolution, rewrite_friendly


@dataclass(frozen=True)
class CandidateBudget:
    max_N: int | None = None  # default 4 * LCM(group sizes), capped at prod(dims)
    alpha_max: int = 8
    B_max: int = 8
    multiples: int = 4  # lattice multiples of the LCM treated as preferred
    max_alpha_vectors: int = 128
    max_candidates: int = 2000
    max_solutions: int = 32
    per_N: int = 4
    multidim: bool = True
    duplication: tuple = (2, 4)
    check_budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        for f in ("alpha_max", "B_max", "multiples", "max_alpha_vectors", "max_candidates",
                  "max_solutions", "per_N", "check_budget"):
            if getattr(self, f) < 1:
                raise ValueError(f"budget field {f} must be >= 1")
        if self.max_N is not None and self.max_N < 1:
            raise ValueError("budget field max_N must be >= 1")
        object.__setattr__(self, "duplication", tuple(self.duplication))

    @classmethod
    def from_json(cls, obj):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in (obj or {}).items() if k in known})

    def to_json(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def lcm_of_sizes(groups):
    return reduce(math.lcm, (len(g.members) for g in groups if g.members), 1)


def resolved_max_N(groups, dims, budget):
    cap = math.prod(dims)
    base = budget.max_N if budget.max_N is not None else 4 * lcm_of_sizes(groups)
    return max(1, min(base, cap))


def _alpha_vectors(n, amax, cap):
    vecs = [v for v in itertools.product(range(amax + 1), repeat=n) if any(v)]
    vecs.sort(key=lambda v: (sum(v), v))
    return vecs[:cap]


def _tier(Ns, Bs, alpha, lattice):
    friendly = all(rewrite_friendly(v) for v in Ns + Bs + alpha if v)
    if not friendly:
        return 3
    return 1 if math.prod(Ns) in lattice else 2


def candidates(groups, dims, budget=CandidateBudget(), ports=1):
    """Flat geometries in priority order (tier, N, B, alpha rank), GCD-deduplicated."""
    n = len(dims)
    L = lcm_of_sizes(groups)
    lattice = {L * m for m in range(1, budget.multiples + 1)}
    max_N = resolved_max_N(groups, dims, budget)
    vecs = _alpha_vectors(n, budget.alpha_max, budget.max_alpha_vectors)
    rank = {v: i for i, v in enumerate(vecs)}
    seen = set()
    items = []
    for N in range(1, max_N + 1):
        for B in range(1, budget.B_max + 1):
            for v in vecs:
                g = reduce(math.gcd, v, B)
                key = (N, B // g, tuple(a // g for a in v)) if N > 1 else (1,)
                if key in seen:
                    continue
                seen.add(key)
                Bn, vn = (B // g, key[2]) if N > 1 else (1, vecs[0])
                if vn not in rank:
                    continue
                items.append((_tier((N,), (Bn,), vn, lattice), N, Bn, rank[vn], vn))
    items.sort(key=lambda t: t[:4])
    for tier, N, B, _, v in items[: budget.max_candidates]:
        yield tier, HyperplaneGeometry.flat(N, B, v, dims, ports)


def multidim_candidates(groups, dims, budget=CandidateBudget(), ports=1):
    """Per-dimension (N_d, B_d) combinations with unit alpha, by (tier, prod N, tuple)."""
    L = lcm_of_sizes(groups)
    lattice = {L * m for m in range(1, budget.multiples + 1)}
    max_N = resolved_max_N(groups, dims, budget)
    options = []
    for D in dims:
        opts = []
        for N in range(1, min(D, max_N) + 1):
            for B in range(1, min(budget.B_max, -(-D // N)) + 1):
                opts.append((N, B))
        options.append(opts)
    items = []
    for combo in itertools.product(*options):
        Ns = tuple(c[0] for c in combo)
        if math.prod(Ns) > max_N or math.prod(Ns) == 1:
            continue
        Bs = tuple(c[1] if c[0] > 1 else 1 for c in combo)
        items.append((_tier(Ns, Bs, (), lattice), math.prod(Ns), Ns, Bs))
    items = sorted(set(items))
    for tier, _, Ns, Bs in items[: budget.max_candidates]:
        yield tier, HyperplaneGeometry.multidim(Ns, Bs, (1,) * len(dims), dims, ports)


# ---------------------------------------------------------------------------
# projection


def _project_access(a, d):
    return replace(a, A=(a.A[d],), C=(a.C[d],), name=a.name)


def _projection_key(a):
    used = [i for i, c in enumerate(a.A[0][: len(a.iterators)]) if c]
    its = tuple(
        (a.iterators[i].name, a.iterators[i].start, a.iterators[i].step, a.iterators[i].count,
         a.iterators[i].counter, a.iterators[i].instance if not a.iterators[i].sync.shared else "*",
         a.A[0][i])
        for i in used
    )
    def dom(name):
        it = a.iterator(name)
        return (it.name, it.start, it.step, it.count, it.counter,
                it.instance if not it.sync.shared else "*")

    syms = tuple(
        (s.name, tuple(dom(x) for x in s.args), s.lo, s.hi, a.A[0][len(a.iterators) + j])
        for j, s in enumerate(a.symbols)
        if a.A[0][len(a.iterators) + j]
    )
    return (its, syms, a.C[0])


def project(groups, dim, geometry=None):
    """Per-dimension groups of 1-D projected accesses.

    Redundancy: identical projections collapse to one.  Regrouping (when
    ``geometry`` is given): members whose bank address on some other
    dimension always differs are placed in separate groups.
    """
    from bankforge.geometry import accesses_conflict

    out = []
    for grp in groups:
        uniq = {}
        for a in grp.members:
            p = _project_access(a, dim)
            uniq.setdefault(_projection_key(p), (a, p))
        pairs = list(uniq.values())
        if geometry is None or geometry.is_flat or geometry.ndim < 2:
            out.append(AccessGroup(tuple(p for _, p in pairs), grp.memory_id))
            continue
        others = [e for e in range(geometry.ndim) if e != dim and geometry.N[e] > 1]

        def may_meet(a, b):
            for e in others:
                g1 = HyperplaneGeometry.multidim(
                    (geometry.N[e],), (geometry.B[e],), (geometry.alpha[e],), (geometry.dims[e],)
                )
                if not accesses_conflict(_project_access(a, e), _project_access(b, e), g1):
                    return False
            return True

        # connected components of the "may meet on every other dimension" graph
        comp = list(range(len(pairs)))

        def root(i):
            while comp[i] != i:
                comp[i] = comp[comp[i]]
                i = comp[i]
            return i

        for i, j in itertools.combinations(range(len(pairs)), 2):
            if root(i) != root(j) and may_meet(pairs[i][0], pairs[j][0]):
                comp[root(j)] = root(i)
        buckets = {}
        for i, (_, p) in enumerate(pairs):
            buckets.setdefault(root(i), []).append(p)
        out.extend(AccessGroup(tuple(b), grp.memory_id) for _, b in sorted(buckets.items()))
    return out


# ---------------------------------------------------------------------------
# duplication


def split_duplicates(groups, d):
    """Readers dealt round-robin (UID order) into ``d`` copies; writers go to every copy."""
    out = []
    for grp in groups:
        readers = sorted(
            (a for a in grp.members if a.kind is AccessKind.READ), key=lambda a: (a.name, a.uid)
        )
        writers = [a for a in grp.members if a.kind is AccessKind.WRITE]
        if len(readers) < d:
            return None
        for i in range(d):
            out.append(AccessGroup(tuple(writers) + tuple(readers[i::d]), grp.memory_id))
    return out


# ---------------------------------------------------------------------------
# solutions


@dataclass
class Solution:
    geometry: HyperplaneGeometry
    metrics: SchemeMetrics
    dag: object  # ResolutionDag
    predicted: dict
    duplication: int = 1
    tier: int = 3
    features: list = field(default_factory=list)
    groups: list = field(default_factory=list, repr=False)

    def rank_key(self, objective="lut"):
        p = self.predicted
        return (
            round(p[objective], 9),
            round(p["lut"], 9),
            round(p["bram"], 9),
            round(p["ff"], 9),
            self.geometry.total_banks,
            json.dumps(self.geometry.to_json(), sort_keys=True),
            self.duplication,
        )

    def to_json(self):
        return {
            "geometry": self.geometry.to_json(),
            "metrics": self.metrics.to_json(),
            "dag": self.dag.to_json(),
            "predicted": {k: float(v) for k, v in sorted(self.predicted.items())},
            "duplication": self.duplication,
            "tier": self.tier,
            "features": [float(v) for v in self.features],
        }


@dataclass
class SolveResult:
    solutions: list
    groups: list
    stats: dict
    objective: str = "lut"

    @property
    def best(self):
        return self.solutions[0]


def _counts(groups):
    readers = sum(1 for g in groups for a in g.members if a.kind is AccessKind.READ)
    writers = sum(1 for g in groups for a in g.members if a.kind is AccessKind.WRITE)
    return readers, writers


def _depth(ctrl):
    return 1 + max((_depth(c) for c in ctrl.children), default=0)


def _cost(g, groups, ctx, dup, tier, models, budget):
    try:
        P = select_parallelotope(g)
    except NoValidP:
        return None
    g = g.with_P(P)
    m = metrics(groups, g, budget=budget.check_budget)
    dag = build_resolution(g)
    readers, writers = _counts(groups)
    raw = costmodel.scheme_features(
        g, m.bank_capacity, dag.census(), readers, writers,
        max(m.fo, default=1), max(m.fi, default=0), len(groups), ctx["depth"],
        ctx["element_bits"], dup,
    )
    pred = {t: float(models.models[t].predict(raw)) for t in costmodel.TARGETS}
    return Solution(g, m, dag, pred, dup, tier, raw.tolist(), groups)


def _search_stream(stream, groups, ctx, dup, budget, models, stats, limit):
    found = []
    per_N = {}
    for tier, g in stream:
        if len(found) >= limit:
            break
        key = (g.style.value, g.total_banks)
        if per_N.get(key, 0) >= budget.per_N:
            continue
        stats["candidates"] += 1
        try:
            ok = validate(groups, g, g.ports, budget.check_budget, stats)
        except BoundsBudgetExceeded:
            stats["skipped_budget"] += 1
            continue
        if not ok:
            continue
        sol = _cost(g, groups, ctx, dup, tier, models, budget)
        if sol is None:
            continue
        per_N[key] = per_N.get(key, 0) + 1
        found.append(sol)
    return found


def prepare(problem):
    """Unrolled, synchronized accesses (bounded by concrete values) and their groups."""
    program, accesses = build_program(problem.root, problem.strategy)
    bounds = problem.concrete_bounds
    bounded = []
    for a in accesses:
        its = tuple(
            replace(it, max_stop=bounds[it.name]) if it.dynamic and it.name in bounds else it
            for it in a.iterators
        )
        bounded.append(replace(a, iterators=its))
    return program, group_accesses(bounded, program)


def solve(problem, budget=None, objective=None, models=None, multidim=None):
    """Ranked valid schemes for ``problem`` (best first)."""
    t0 = time.perf_counter()
    budget = budget or CandidateBudget.from_json(problem.budget)
    if multidim is not None:
        budget = replace(budget, multidim=multidim)
    objective = objective or problem.objective
    models = models or costmodel.default_bundle()
    program, groups = prepare(problem)
    dims = problem.memory.dims
    ctx = {"depth": _depth(problem.root), "element_bits": problem.memory.element_bits}
    stats = {"candidates": 0, "checks": 0, "skipped_budget": 0}

    k = problem.memory.ports
    variants = [(k, 1)]
    variants += [(kk, 1) for kk in range(k - 1, 0, -1)]  # fewer-ported
    variants += [(k, d) for d in budget.duplication]
    solutions = []
    for ports, dup in variants:
        grp = groups if dup == 1 else split_duplicates(groups, dup)
        if grp is None:
            continue
        limit = budget.max_solutions if (ports, dup) == (k, 1) else max(1, budget.max_solutions // 4)
        streams = [candidates(grp, dims, budget, ports)]
        if budget.multidim and len(dims) >= 2:
            streams.append(multidim_candidates(grp, dims, budget, ports))
        for stream in streams:
            solutions += _search_stream(stream, grp, ctx, dup, budget, models, stats, limit)
    if not solutions:
        raise NoSolution("no valid geometry within the candidate budget")
    solutions.sort(key=lambda s: s.rank_key(objective))
    # drop GCD-equivalent duplicates that arrived through different variants
    uniq, seen = [], set()
    for s in solutions:
        ident = (s.geometry.identity(), s.duplication)
        if ident not in seen:
            seen.add(ident)
            uniq.append(s)
    stats["groups"] = [len(g.members) for g in groups]
    stats["solutions"] = len(uniq)
    stats["seconds"] = round(time.perf_counter() - t0, 3)
    return SolveResult(uniq, groups, stats, objective)


SCHEME_VERSION = 1


@dataclass
class SchemeEntry:
    """Serialized form of a :class:`Solution` (no access objects)."""

    geometry: HyperplaneGeometry
    metrics: SchemeMetrics
    dag: dict
    predicted: dict
    duplication: int = 1
    tier: int = 3
    features: list = field(default_factory=list)

    @classmethod
    def from_solution(cls, s):
        return cls.from_json(s.to_json())

    def to_json(self):
        return {
            "geometry": self.geometry.to_json(),
            "metrics": self.metrics.to_json(),
            "dag": self.dag,
            "predicted": dict(self.predicted),
            "duplication": self.duplication,
            "tier": self.tier,
            "features": list(self.features),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            HyperplaneGeometry.from_json(obj["geometry"]),
            SchemeMetrics.from_json(obj["metrics"]),
            obj["dag"],
            {k: float(v) for k, v in obj["predicted"].items()},
            int(obj.get("duplication", 1)),
            int(obj.get("tier", 3)),
            [float(v) for v in obj.get("features", [])],
        )


@dataclass
class SchemeFile:
    memory: str
    objective: str
    chosen: SchemeEntry
    alternatives: list
    stats: dict = field(default_factory=dict)
    version: int = SCHEME_VERSION

    @classmethod
    def from_result(cls, problem, result, top=None):
        entries = [SchemeEntry.from_solution(s) for s in result.solutions]
        alts = entries[1:] if top is None else entries[1:top]
        return cls(problem.memory.id, result.objective, entries[0], alts, dict(result.stats))

    def to_json(self):
        return {
            "version": self.version,
            "memory": self.memory,
            "objective": self.objective,
            "chosen": self.chosen.to_json(),
            "alternatives": [a.to_json() for a in self.alternatives],
            "stats": self.stats,
        }

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, obj):
        from bankforge.errors import SchemaError

        if obj.get("version") != SCHEME_VERSION:
            raise SchemaError("$.version", f"unsupported scheme version {obj.get('version')!r}")
        try:
            return cls(
                obj["memory"],
                obj["objective"],
                SchemeEntry.from_json(obj["chosen"]),
                [SchemeEntry.from_json(a) for a in obj.get("alternatives", [])],
                dict(obj.get("stats", {})),
                obj["version"],
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError("$", f"malformed scheme file: {e}") from None

    @classmethod
    def loads(cls, text):
        return cls.from_json(json.loads(text))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.loads(fh.read())


@dataclass
class Verdict:
    valid: bool
    dag_matches: bool
    trace: object  # sim.ReplayTrace

    @property
    def ok(self):
        return self.valid and self.dag_matches and self.trace.ok


def verify(problem, entry, concrete_bounds=None, budget=None, seed=0):
    """Re-check a stored scheme: polytope validity, DAG identity and replay."""
    from bankforge import sim

    g = entry.geometry
    groups = solution_groups(problem, entry.duplication)
    valid = validate(groups, g, g.ports)
    dag = build_resolution(g)
    same = dag.to_json() == entry.dag
    bounds = dict(problem.concrete_bounds)
    bounds.update(concrete_bounds or {})
    sol = Solution(g, entry.metrics, dag, entry.predicted, entry.duplication, entry.tier,
                   entry.features, groups)
    trace = sim.replay(problem, sol, bounds, budget or sim.DEFAULT_BUDGET, seed)
    return Verdict(valid, same, trace)


def solution_groups(problem, duplication=1):
    """Groups a scheme with ``duplication`` copies must satisfy."""
    _, groups = prepare(problem)
    if duplication == 1:
        return groups
    out = split_duplicates(groups, duplication)
    if out is None:
        raise NoSolution(f"too few readers for duplication factor {duplication}")
    return out


__all__ = [
    "CandidateBudget",
    "SchemeEntry",
    "SchemeFile",
    "Solution",
    "SolveResult",
    "Verdict",
    "candidates",
    "lcm_of_sizes",
    "multidim_candidates",
    "prepare",
    "project",
    "solution_groups",
    "solve",
    "split_duplicates",
    "verify",
]
