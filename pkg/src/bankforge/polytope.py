"""Affine access patterns and conflict-polytope emptiness.

A conflict polytope is a bounded integer feasibility problem over iteration
indices and symbol values.  Emptiness is decided exactly: cheap pruning
(GCD, interval, periodicity), then a bounded scan in :mod:`bankforge.kernels`.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, replace
from functools import lru_cache, reduce

import numpy as np

from bankforge import kernels
from bankforge.errors import BoundsBudgetExceeded, DimensionMismatch, MismatchedMemory

DEFAULT_BUDGET = 10**7
DEFAULT_CLAMP = (0, 256)


class Sync(enum.Enum):
    SYNCHRONIZED = "sync"
    PARTIAL = "partial"
    UNSYNCHRONIZED = "unsync"


@dataclass(frozen=True)
class SyncClass:
    kind: Sync = Sync.SYNCHRONIZED
    offset: int = 0

    @property
    def shared(self):
        return self.kind is not Sync.UNSYNCHRONIZED

    def to_json(self):
        if self.kind is Sync.PARTIAL:
            return {"kind": self.kind.value, "offset": self.offset}
        return self.kind.value

    @classmethod
    def from_json(cls, obj):
        if obj is None:
            return cls()
        if isinstance(obj, str):
            return cls(Sync(obj))
        return cls(Sync(obj["kind"]), int(obj.get("offset", 0)))


SYNCHRONIZED = SyncClass()
UNSYNCHRONIZED = SyncClass(Sync.UNSYNCHRONIZED)


@dataclass(frozen=True)
class IteratorDomain:
    """One loop counter as seen by an access.

    ``stop`` is exclusive; ``None`` marks a data-dependent bound, clamped to
    ``max_stop`` (or the default clamp).  ``counter`` names the original loop
    the iterator belongs to and ``instance`` the hardware counter producing it
    after unrolling; two accesses share an iterator variable when both match,
    or when the counter is synchronized across instances.
    """

    name: str
    start: int = 0
    step: int = 1
    stop: int | None = 1
    par: int = 1
    sync: SyncClass = SYNCHRONIZED
    counter: str = ""
    instance: str = ""
    max_stop: int | None = None

    def __post_init__(self):
        if self.step == 0:
            raise ValueError(f"iterator {self.name}: step must be nonzero")
        if self.par < 1:
            raise ValueError(f"iterator {self.name}: parallelization must be >= 1")
        if self.stop is not None and (self.stop - self.start) * self.step < 0:
            raise ValueError(f"iterator {self.name}: empty direction")

    @property
    def dynamic(self):
        return self.stop is None

    @property
    def effective_stop(self):
        if self.stop is not None:
            return self.stop
        return self.max_stop if self.max_stop is not None else DEFAULT_CLAMP[1]

    @property
    def count(self):
        span = self.effective_stop - self.start
        if self.step > 0:
            return max(0, -(-span // self.step))
        return max(0, -(-(-span) // (-self.step)))

    def value(self, t):
        return self.start + self.step * t + self.sync.offset

    def values(self):
        return [self.value(t) for t in range(self.count)]

    def shares_with(self, other):
        if self.name != other.name or self.counter != other.counter:
            return False
        if self.instance == other.instance:
            return True
        return self.sync.shared and other.sync.shared


@dataclass(frozen=True)
class Symbol:
    """Uninterpreted function value ``name(args...)`` in an address."""

    name: str
    args: tuple = ()
    lo: int = DEFAULT_CLAMP[0]
    hi: int = DEFAULT_CLAMP[1]


class AccessKind(enum.Enum):
    READ = "read"
    WRITE = "write"


@dataclass(frozen=True)
class AffineAccess:
    """x = A . [iterators, symbols] + C for one (possibly unrolled) access."""

    memory_id: str
    kind: AccessKind
    A: tuple
    C: tuple
    iterators: tuple = ()
    symbols: tuple = ()
    uid: tuple = ()
    name: str = ""
    path: tuple = ()
    cycle: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "A", tuple(tuple(int(v) for v in row) for row in self.A))
        object.__setattr__(self, "C", tuple(int(v) for v in self.C))
        object.__setattr__(self, "iterators", tuple(self.iterators))
        object.__setattr__(self, "symbols", tuple(self.symbols))
        object.__setattr__(self, "uid", tuple(self.uid))
        object.__setattr__(self, "path", tuple(self.path))
        cols = len(self.iterators) + len(self.symbols)
        if len(self.A) != len(self.C):
            raise DimensionMismatch(f"{self.name}: A has {len(self.A)} rows, C has {len(self.C)}")
        for row in self.A:
            if len(row) != cols:
                raise DimensionMismatch(
                    f"{self.name}: A row has {len(row)} columns, expected {cols}"
                )
        names = [it.name for it in self.iterators]
        for sym in self.symbols:
            for arg in sym.args:
                if arg not in names:
                    raise ValueError(f"{self.name}: symbol {sym.name} uses unknown iterator {arg}")

    @property
    def ndim(self):
        return len(self.C)

    @property
    def key(self):
        return (self.name, self.uid)

    def iterator(self, name):
        for it in self.iterators:
            if it.name == name:
                return it
        raise KeyError(name)

    def address_terms(self, dim):
        """Linear form of address component ``dim`` as (iterator coefs, symbol coefs, const).

        Iterator coefficients act on the iteration index t, not the value.
        """
        row = self.A[dim]
        m = len(self.iterators)
        const = self.C[dim]
        icoef = []
        for j, it in enumerate(self.iterators):
            icoef.append(row[j] * it.step)
            const += row[j] * (it.start + it.sync.offset)
        return tuple(icoef), tuple(row[m:]), const

    def with_bounds(self, bounds):
        """Replace dynamic stops by concrete values from ``bounds`` (name -> stop)."""
        its = []
        for it in self.iterators:
            if it.stop is None and it.name in bounds:
                it = replace(it, stop=int(bounds[it.name]))
            its.append(it)
        return replace(self, iterators=tuple(its))

    def addresses(self):
        """All concrete addresses over the iteration domain and symbol ranges (ndarray, shape (k, n))."""
        grids = [np.arange(it.count, dtype=np.int64) for it in self.iterators]
        grids += [np.arange(s.lo, s.hi, dtype=np.int64) for s in self.symbols]
        if any(g.size == 0 for g in grids):
            return np.zeros((0, self.ndim), dtype=np.int64)
        if grids:
            mesh = np.meshgrid(*grids, indexing="ij")
            pts = np.stack([g.ravel() for g in mesh], axis=1)
        else:
            pts = np.zeros((1, 0), dtype=np.int64)
        out = np.empty((pts.shape[0], self.ndim), dtype=np.int64)
        for d in range(self.ndim):
            icoef, scoef, const = self.address_terms(d)
            out[:, d] = pts @ np.array(icoef + scoef, dtype=np.int64) + const
        return out


@dataclass(frozen=True)
class Constraint:
    """floor(e1/div) - floor(e2/div) == 0 (mod ``mod``); mod 0 means equality."""

    coef1: tuple
    const1: int
    coef2: tuple
    const2: int
    div: int = 1
    mod: int = 0

    def holds(self, point):
        e1 = sum(c * v for c, v in zip(self.coef1, point)) + self.const1
        e2 = sum(c * v for c, v in zip(self.coef2, point)) + self.const2
        d = e1 // self.div - e2 // self.div
        return d == 0 if self.mod == 0 else d % self.mod == 0


@dataclass(frozen=True)
class ConflictPolytope:
    names: tuple
    lo: tuple
    size: tuple
    constraints: tuple
    canceled_symbols: frozenset = frozenset()
    excluded: bool = False

    @property
    def volume(self):
        return math.prod(self.size) if self.size else 1

    def points(self):
        ranges = [range(l, l + s) for l, s in zip(self.lo, self.size)]
        return itertools.product(*ranges)

    def with_constraint(self, con):
        return replace(self, constraints=self.constraints + (con,))

    def canonical(self):
        """Hashable form used to memoise emptiness (variable names dropped)."""
        return (self.lo, self.size, self.constraints, self.excluded)

    @classmethod
    def single(cls, bounds, coefs, const, mod=0, div=1):
        """Polytope with one constraint ``coefs . v + const == 0 (mod mod)``."""
        lo = tuple(b[0] for b in bounds)
        size = tuple(b[1] - b[0] + 1 for b in bounds)
        zero = (0,) * len(bounds)
        con = Constraint(tuple(coefs), const, zero, 0, div, mod)
        names = tuple(f"v{i}" for i in range(len(bounds)))
        return cls(names, lo, size, (con,))


# ---------------------------------------------------------------------------
# construction


def _var_table(accesses):
    """Variable list and per-access column maps honouring synchronization."""
    names, lo, size = [], [], []
    cols = [{} for _ in accesses]
    canceled = set()

    def add(label, l, n):
        names.append(label)
        lo.append(l)
        size.append(n)
        return len(names) - 1

    for k, a in enumerate(accesses):
        mark = "'" * k
        for it in a.iterators:
            idx = None
            for j in range(k):
                match = next((o for o in accesses[j].iterators if o.shares_with(it)), None)
                if match is not None:
                    idx = cols[j][("it", match.name)]
                    break
            if idx is None:
                idx = add(f"{it.name}@{it.instance}{mark}", 0, it.count)
            else:
                size[idx] = min(size[idx], it.count)
            cols[k][("it", it.name)] = idx
        for sym in a.symbols:
            key = ("sym", sym.name, sym.args)
            idx = None
            for j in range(k):
                if key in cols[j] and all(
                    accesses[j].iterator(arg).shares_with(a.iterator(arg)) for arg in sym.args
                ):
                    idx = cols[j][key]
                    canceled.add(sym.name)
                    break
            if idx is None:
                idx = add(f"{sym.name}({','.join(sym.args)}){mark}", sym.lo, sym.hi - sym.lo)
            cols[k][key] = idx
    return names, lo, size, cols, canceled


def _linear(access, cols, nvar, weights):
    """Coefficient vector and constant of sum_d weights[d] * x_d."""
    coef = [0] * nvar
    const = 0
    for d, w in weights.items():
        if w == 0:
            continue
        icoef, scoef, c = access.address_terms(d)
        const += w * c
        for it, v in zip(access.iterators, icoef):
            coef[cols[("it", it.name)]] += w * v
        for s, v in zip(access.symbols, scoef):
            coef[cols[("sym", s.name, s.args)]] += w * v
    return coef, const


def build_conflict(a1, a2, geom, dims=None):
    """Integer problem: both accesses resolve to the same bank in the same cycle.

    ``dims`` restricts a multidimensional geometry to a subset of dimensions
    (used for projections).
    """
    return build_joint_conflict((a1, a2), geom, dims)


def build_joint_conflict(accesses, geom, dims=None):
    """All of ``accesses`` resolve to one bank in the same cycle."""
    n = geom.ndim
    first = accesses[0]
    for a in accesses:
        if a.memory_id != first.memory_id:
            raise MismatchedMemory(f"{first.memory_id} vs {a.memory_id}")
        if a.ndim != n:
            raise DimensionMismatch(f"access {a.name} has {a.ndim} dims, geometry {n}")
    if len({a.key for a in accesses}) < len(accesses):
        return ConflictPolytope((), (), (), (), excluded=True)

    names, lo, size, cols, canceled = _var_table(accesses)
    nvar = len(names)
    if geom.is_flat:
        parts = [({d: geom.alpha[d] for d in range(n)}, geom.B[0], geom.N[0])]
    else:
        parts = [
            ({d: geom.alpha[d]}, geom.B[d], geom.N[d])
            for d in (range(n) if dims is None else dims)
            if geom.N[d] > 1
        ]
    cons = []
    for weights, B, N in parts:
        c0, k0 = _linear(first, cols[0], nvar, weights)
        for a, col in zip(accesses[1:], cols[1:]):
            c, k = _linear(a, col, nvar, weights)
            cons.append(Constraint(tuple(c0), k0, tuple(c), k, B, N))
    return ConflictPolytope(
        tuple(names), tuple(lo), tuple(size), tuple(cons), frozenset(canceled)
    )


# ---------------------------------------------------------------------------
# emptiness


def _gcd_all(values):
    return reduce(math.gcd, values, 0)


def _simplify(p):
    """Return (lo, size, constraints) after exact reductions, or None if provably empty."""
    lo = list(p.lo)
    size = list(p.size)
    nvar = len(lo)
    cons = []
    for c in p.constraints:
        c1, c2 = list(c.coef1), list(c.coef2)
        k1, k2 = c.const1, c.const2
        if c.div == 1:
            # floor is identity: fold into one expression so shared terms cancel
            c1 = [x - y for x, y in zip(c1, c2)]
            k1 = k1 - k2
            c2 = [0] * nvar
            k2 = 0
            if c.mod:
                c1 = [x % c.mod for x in c1]
                k1 %= c.mod
            g = _gcd_all(c1 + [c.mod])
            if g == 0:
                if k1 != 0:
                    return None
                continue
            if k1 % g:
                return None
            if c.mod == 0:
                # interval test on an equality
                lo_e = k1 + sum(min(x * lo[i], x * (lo[i] + size[i] - 1)) for i, x in enumerate(c1))
                hi_e = k1 + sum(max(x * lo[i], x * (lo[i] + size[i] - 1)) for i, x in enumerate(c1))
                if lo_e > 0 or hi_e < 0:
                    return None
        cons.append((c1, k1, c2, k2, c.div, c.mod))

    # periodicity: shifting t_i by its period leaves every constraint unchanged
    for i in range(nvar):
        used = [c for c in cons if c[0][i] or c[2][i]]
        if not used:
            size[i] = min(size[i], 1)
            continue
        period = 1
        for c1, _, c2, _, div, mod in used:
            if mod == 0:
                period = None
                break
            span = div * mod
            for x in (c1[i], c2[i]):
                period = math.lcm(period, span // math.gcd(x, span))
        if period is not None:
            size[i] = min(size[i], period)
    return lo, size, cons


def is_empty(p, budget=DEFAULT_BUDGET):
    """True iff no integer point of ``p`` satisfies every constraint."""
    if p.excluded:
        return True
    if any(s <= 0 for s in p.size):
        return True
    simplified = _simplify(p)
    if simplified is None:
        return True
    lo, size, cons = simplified
    if not cons:
        return False
    volume = math.prod(size) if size else 1
    if volume > budget:
        raise BoundsBudgetExceeded(f"enumeration volume {volume} exceeds budget {budget}")
    coef1 = np.array([c[0] for c in cons], dtype=np.int64).reshape(len(cons), len(lo))
    coef2 = np.array([c[2] for c in cons], dtype=np.int64).reshape(len(cons), len(lo))
    return (
        kernels.find_point(
            np.array(lo, dtype=np.int64),
            np.array(size, dtype=np.int64),
            coef1,
            np.array([c[1] for c in cons], dtype=np.int64),
            coef2,
            np.array([c[3] for c in cons], dtype=np.int64),
            np.array([c[4] for c in cons], dtype=np.int64),
            np.array([c[5] for c in cons], dtype=np.int64),
        )
        < 0
    )


@lru_cache(maxsize=1 << 16)
def _is_empty_cached(canon, budget):
    lo, size, cons, excluded = canon
    return is_empty(ConflictPolytope(("",) * len(lo), lo, size, cons, excluded=excluded), budget)


def is_empty_cached(p, budget=DEFAULT_BUDGET):
    """Memoised :func:`is_empty`; identical projected problems are checked once."""
    return _is_empty_cached(p.canonical(), budget)


def is_empty_naive(p):
    """Reference oracle: exhaustive enumeration, no pruning."""
    if p.excluded:
        return True
    return not any(all(c.holds(pt) for c in p.constraints) for pt in p.points())
