"""Hyperplane geometries: bank address/offset, periodicity, parallelotope choice, metrics, validity."""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field, replace
from functools import reduce

import numpy as np

from bankforge.errors import BoundsBudgetExceeded, DimensionMismatch, NoValidP, OutOfBounds
from bankforge.polytope import (
    DEFAULT_BUDGET,
    build_conflict,
    build_joint_conflict,
    is_empty_cached,
)


class Style(enum.Enum):
    FLAT = "flat"
    MULTIDIM = "multidim"


@dataclass(frozen=True)
class HyperplaneGeometry:
    """Solve parameters (N, B, alpha, P) for an array of extents ``dims``.

    Flat geometries carry one N and one B; multidimensional ones carry one of
    each per array dimension.
    """

    style: Style
    N: tuple
    B: tuple
    alpha: tuple
    dims: tuple
    ports: int = 1
    P: tuple | None = None

    def __post_init__(self):
        for name in ("N", "B", "alpha", "dims"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.P is not None:
            object.__setattr__(self, "P", tuple(int(v) for v in self.P))
        n = len(self.dims)
        want = 1 if self.style is Style.FLAT else n
        if len(self.N) != want or len(self.B) != want:
            raise DimensionMismatch(f"{self.style.value} geometry needs |N| = |B| = {want}")
        if len(self.alpha) != n:
            raise DimensionMismatch(f"alpha has {len(self.alpha)} entries, array has {n} dims")
        if any(v < 1 for v in self.N + self.B + self.dims) or self.ports < 1:
            raise ValueError("N, B, dims and ports must be positive")
        if self.P is not None and (len(self.P) != n or any(p < 1 for p in self.P)):
            raise DimensionMismatch("P must have one positive entry per dimension")

    @classmethod
    def flat(cls, N, B, alpha, dims, ports=1, P=None):
        return cls(Style.FLAT, (N,), (B,), tuple(alpha), tuple(dims), ports, P)

    @classmethod
    def multidim(cls, N, B, alpha, dims, ports=1, P=None):
        return cls(Style.MULTIDIM, tuple(N), tuple(B), tuple(alpha), tuple(dims), ports, P)

    @property
    def ndim(self):
        return len(self.dims)

    @property
    def is_flat(self):
        return self.style is Style.FLAT

    @property
    def total_banks(self):
        return math.prod(self.N)

    @property
    def delta(self):
        if self.P is None:
            return (0,) * self.ndim
        return tuple(-(-d // p) * p - d for d, p in zip(self.dims, self.P))

    @property
    def padded_dims(self):
        return tuple(d + e for d, e in zip(self.dims, self.delta))

    def with_P(self, P):
        return replace(self, P=tuple(P))

    def with_ports(self, k):
        return replace(self, ports=k)

    def normalized(self):
        """Divide (alpha, B) by their common gcd; the BA map is unchanged."""
        if self.is_flat:
            g = reduce(math.gcd, self.alpha + self.B, 0)
            if g <= 1:
                return self
            return replace(
                self, alpha=tuple(a // g for a in self.alpha), B=(self.B[0] // g,)
            )
        alpha, B = list(self.alpha), list(self.B)
        for d in range(self.ndim):
            g = math.gcd(alpha[d], B[d])
            if g > 1:
                alpha[d] //= g
                B[d] //= g
        return replace(self, alpha=tuple(alpha), B=tuple(B))

    def identity(self):
        """Key that is equal for GCD-equivalent geometries."""
        g = self.normalized()
        return (g.style.value, g.N, g.B, g.alpha, g.ports)

    def to_json(self):
        out = {
            "style": self.style.value,
            "N": list(self.N),
            "B": list(self.B),
            "alpha": list(self.alpha),
            "dims": list(self.dims),
            "ports": self.ports,
        }
        if self.P is not None:
            out["P"] = list(self.P)
            out["delta"] = list(self.delta)
        return out

    @classmethod
    def from_json(cls, obj):
        return cls(
            Style(obj["style"]),
            tuple(obj["N"]),
            tuple(obj["B"]),
            tuple(obj["alpha"]),
            tuple(obj["dims"]),
            int(obj.get("ports", 1)),
            tuple(obj["P"]) if obj.get("P") is not None else None,
        )


@dataclass
class SchemeMetrics:
    fo: list  # per access, in group order
    fi: list  # per bank, flattened bank id order
    delta: tuple
    bank_capacity: int
    capacity_bound: int = 0
    access_keys: list = field(default_factory=list)

    def to_json(self):
        return {
            "fo": list(self.fo),
            "fi": list(self.fi),
            "delta": list(self.delta),
            "capacity": self.bank_capacity,
            "capacity_bound": self.capacity_bound,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            list(obj["fo"]),
            list(obj["fi"]),
            tuple(obj["delta"]),
            int(obj["capacity"]),
            int(obj.get("capacity_bound", 0)),
        )


# ---------------------------------------------------------------------------
# bank resolution


def _as_points(x, n):
    arr = np.asarray(x, dtype=np.int64)
    single = arr.ndim == 1
    if arr.shape[-1] != n:
        raise DimensionMismatch(f"points have {arr.shape[-1]} coordinates, geometry has {n}")
    arr = arr.reshape(-1, n)
    return arr, single


def _check_bounds(pts, g):
    hi = np.array(g.padded_dims, dtype=np.int64)
    if pts.size and ((pts < 0).any() or (pts >= hi).any()):
        raise OutOfBounds(f"address outside padded array {g.padded_dims}")


def bank_address(x, g):
    """BA = floor(x.alpha / B) mod N (per dimension for multidimensional geometries).

    ``x`` is one address (length n) or an (k, n) array.  Flat geometries return
    ints, multidimensional ones tuples / (k, n) arrays.
    """
    pts, single = _as_points(x, g.ndim)
    _check_bounds(pts, g)
    alpha = np.array(g.alpha, dtype=np.int64)
    if g.is_flat:
        out = (pts @ alpha) // g.B[0] % g.N[0]
        return int(out[0]) if single else out
    out = (pts * alpha) // np.array(g.B, dtype=np.int64) % np.array(g.N, dtype=np.int64)
    return tuple(int(v) for v in out[0]) if single else out


def flat_bank_id(ba, g):
    """Mixed-radix scalar id for a (k, n) multidimensional bank-address array."""
    if g.is_flat:
        return np.asarray(ba, dtype=np.int64)
    ba = np.asarray(ba, dtype=np.int64).reshape(-1, g.ndim)
    out = np.zeros(ba.shape[0], dtype=np.int64)
    for d in range(g.ndim):
        out = out * g.N[d] + ba[:, d]
    return out


def bank_offset(x, g):
    """Intra-bank offset.

    Flat: B * sum_i floor(x_i/P_i) * prod_{j>i} ceil(D_j/P_j) + (x.alpha mod B).
    Multidimensional: per-dimension offsets B_d*floor(x_d/P_d) + (x_d*alpha_d mod B_d)
    combined in mixed radix with radices B_d*ceil(D_d/P_d).
    """
    if g.P is None:
        raise ValueError("bank_offset needs a geometry with P selected")
    pts, single = _as_points(x, g.ndim)
    _check_bounds(pts, g)
    P = np.array(g.P, dtype=np.int64)
    blocks = [-(-d // p) for d, p in zip(g.dims, g.P)]
    alpha = np.array(g.alpha, dtype=np.int64)
    if g.is_flat:
        region = np.zeros(pts.shape[0], dtype=np.int64)
        for i in range(g.ndim):
            region = region * blocks[i] + pts[:, i] // P[i]
        out = g.B[0] * region + (pts @ alpha) % g.B[0]
    else:
        out = np.zeros(pts.shape[0], dtype=np.int64)
        for d in range(g.ndim):
            radix = g.B[d] * blocks[d]
            local = g.B[d] * (pts[:, d] // P[d]) + (pts[:, d] * alpha[d]) % g.B[d]
            out = out * radix + local
    return int(out[0]) if single else out


def capacity_bound(g):
    """Closed-form bank volume B * prod ceil(D_j/P_j)."""
    blocks = [-(-d // p) for d, p in zip(g.dims, g.P)]
    if g.is_flat:
        return g.B[0] * math.prod(blocks)
    return math.prod(b * k for b, k in zip(g.B, blocks))


# ---------------------------------------------------------------------------
# periodicity and parallelotope


def periodicity(g):
    """Phi_i = lcm(alpha_i, N*B) / alpha_i; 1 for zero coefficients."""
    out = []
    for d in range(g.ndim):
        a = abs(g.alpha[d])
        nb = g.N[0] * g.B[0] if g.is_flat else g.N[d] * g.B[d]
        out.append(1 if a == 0 else math.lcm(a, nb) // a)
    return tuple(out)


def _divisors(n):
    return [d for d in range(1, n + 1) if n % d == 0]


def _region_ok(g, P):
    """Coverage check of the box [0, P) by enumeration.

    Residues x.alpha mod N*B must be distinct and reach every residue reachable
    anywhere in the array; then every reachable bank occurs between 1 and B
    times in every aligned region and (BA, BO) is injective.
    """
    nb = g.N[0] * g.B[0]
    grids = np.meshgrid(*[np.arange(p, dtype=np.int64) for p in P], indexing="ij")
    pts = np.stack([m.ravel() for m in grids], axis=1)
    s = (pts @ np.array(g.alpha, dtype=np.int64)) % nb
    step = reduce(math.gcd, [abs(a) for a in g.alpha] + [nb], 0)
    if len(np.unique(s)) != s.size or s.size != nb // step:
        return False
    banks = (s // g.B[0]) % g.N[0]
    counts = np.bincount(banks, minlength=g.N[0])
    reachable = np.unique((np.arange(0, nb, step) // g.B[0]) % g.N[0])
    hit = counts[reachable]
    return bool((hit >= 1).all() and (counts <= g.B[0]).all())


def select_parallelotope(g):
    """Smallest-capacity box P satisfying the coverage condition."""
    phi = periodicity(g)
    if not g.is_flat:
        return phi
    best = None
    for P in itertools.product(*[_divisors(f) for f in phi]):
        cap = capacity_bound(replace(g, P=P))
        padded = math.prod(-(-d // p) * p for d, p in zip(g.dims, P))
        key = (cap, padded, tuple(-p for p in P))
        if best is not None and key >= best[0]:
            continue
        if _region_ok(g, P):
            best = (key, P)
    if best is None:
        raise NoValidP(f"no parallelotope for {g}")
    return best[1]


def coverage_violations(g):
    """Count aligned P-regions of the padded array violating 1 <= count <= B per reachable bank."""
    nb = g.N[0] * g.B[0] if g.is_flat else None
    bad = 0
    blocks = [range(-(-d // p)) for d, p in zip(g.dims, g.P)]
    for corner in itertools.product(*blocks):
        grids = np.meshgrid(
            *[np.arange(c * p, (c + 1) * p, dtype=np.int64) for c, p in zip(corner, g.P)],
            indexing="ij",
        )
        pts = np.stack([m.ravel() for m in grids], axis=1)
        ids = flat_bank_id(bank_address(pts, g), g)
        counts = np.bincount(ids, minlength=g.total_banks)
        if g.is_flat:
            step = reduce(math.gcd, [abs(a) for a in g.alpha] + [nb], 0)
            reachable = np.unique((np.arange(0, nb, step) // g.B[0]) % g.N[0])
        else:
            per_dim = []
            for d in range(g.ndim):
                nbd = g.N[d] * g.B[d]
                step = math.gcd(abs(g.alpha[d]), nbd)
                per_dim.append(np.unique((np.arange(0, nbd, step) // g.B[d]) % g.N[d]))
            combos = np.array(list(itertools.product(*per_dim)), dtype=np.int64)
            reachable = flat_bank_id(combos, g)
        limit = g.B[0] if g.is_flat else math.prod(g.B)
        if (counts[reachable] < 1).any() or (counts > limit).any():
            bad += 1
    return bad


# ---------------------------------------------------------------------------
# metrics


def _padded_points(g, budget):
    shape = g.padded_dims
    total = math.prod(shape)
    if total > budget:
        raise BoundsBudgetExceeded(f"padded array has {total} elements, budget {budget}")
    grids = np.meshgrid(*[np.arange(s, dtype=np.int64) for s in shape], indexing="ij")
    return np.stack([m.ravel() for m in grids], axis=1)


def metrics(groups, g, P=None, budget=DEFAULT_BUDGET):
    """Fan-out, fan-in, padding and bank capacity for ``groups`` under ``g``."""
    if P is not None:
        g = g.with_P(P)
    if g.P is None:
        g = g.with_P(select_parallelotope(g))
    hi = np.array(g.padded_dims, dtype=np.int64)
    fo, keys = [], []
    fi = np.zeros(g.total_banks, dtype=np.int64)
    for group in groups:
        for a in group.members:
            addrs = a.addresses()
            if addrs.shape[0] > budget:
                raise BoundsBudgetExceeded(f"access {a.name} spans {addrs.shape[0]} points")
            inside = addrs[((addrs >= 0) & (addrs < hi)).all(axis=1)]
            banks = np.unique(flat_bank_id(bank_address(inside, g), g)) if inside.size else []
            fo.append(max(1, len(banks)))
            fi[np.asarray(banks, dtype=np.int64)] += 1
            keys.append(a.key)
    pts = _padded_points(g, budget)
    cap = int(bank_offset(pts, g).max()) + 1
    bound = capacity_bound(g)
    if bound < cap:
        raise AssertionError(f"closed-form capacity {bound} below enumerated {cap}")
    return SchemeMetrics(fo, fi.tolist(), g.delta, cap, bound, keys)


# ---------------------------------------------------------------------------
# validity


def accesses_conflict(a, b, g, budget=DEFAULT_BUDGET, stats=None):
    """True when the conflict polytope of (a, b) under ``g`` is non-empty."""

    def empty(p):
        if stats is not None:
            stats["checks"] = stats.get("checks", 0) + 1
        return is_empty_cached(p, budget)

    if g.is_flat:
        return not empty(build_conflict(a, b, g))
    active = [d for d in range(g.ndim) if g.N[d] > 1]
    if a.key == b.key:
        return False
    # a separating dimension proves the pair conflict-free
    for d in active:
        if empty(build_conflict(a, b, g, dims=[d])):
            return False
    if len(active) <= 1:
        return True
    return not empty(build_conflict(a, b, g))


def conflict_graph(members, g, budget=DEFAULT_BUDGET, stats=None):
    edges = set()
    for i, j in itertools.combinations(range(len(members)), 2):
        if accesses_conflict(members[i], members[j], g, budget, stats):
            edges.add((i, j))
    return edges


def _cliques(n, edges, size):
    """All cliques of ``size`` vertices (as sorted tuples) in the graph."""
    adj = {i: set() for i in range(n)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)

    def extend(clique, cand):
        if len(clique) == size:
            yield tuple(clique)
            return
        for v in sorted(cand):
            if v > (clique[-1] if clique else -1):
                yield from extend(clique + [v], cand & adj[v])

    yield from extend([], set(v for v in range(n) if len(adj[v]) >= size - 1))


def _has_clique(n, edges, size):
    return next(_cliques(n, edges, size), None) is not None


def joint_conflict(members, g, budget=DEFAULT_BUDGET, stats=None):
    """True when all ``members`` can hit one bank in one cycle."""
    if stats is not None:
        stats["checks"] = stats.get("checks", 0) + 1
    return not is_empty_cached(build_joint_conflict(tuple(members), g), budget)


def validate(groups, g, k=None, budget=DEFAULT_BUDGET, stats=None):
    """Valid iff no k+1 members of a group can share a bank in one cycle.

    Pairwise conflicts form a graph; only its (k+1)-cliques can hold a
    violation, and each clique is confirmed with a joint polytope.
    """
    k = g.ports if k is None else k
    for group in groups:
        members = list(group.members)
        if len(members) <= k:
            continue
        if k == 1:
            for i, j in itertools.combinations(range(len(members)), 2):
                if accesses_conflict(members[i], members[j], g, budget, stats):
                    return False
            continue
        edges = conflict_graph(members, g, budget, stats)
        for clique in _cliques(len(members), edges, k + 1):
            if joint_conflict([members[i] for i in clique], g, budget, stats):
                return False
    return True
