"""Bank-resolution expression DAGs and constant strength reduction.

Constant operations are rewritten in a fixed order: power of two (shift or
mask), Mersenne (Crandall folding), Mersenne divisor (Crandall plus a
priority mux), shift-add decomposition, and only then a native Mul/Div/Mod.
"""
from __future__ import annotations

import enum
import itertools
from collections import Counter
from dataclasses import dataclass

import numpy as np

from bankforge.errors import NoMersenneMultiple, NotMersenne, NotRepresentable

MAX_MERSENNE_BITS = 16
COMPOSITE_RADIUS = 16
SHIFT_ADD_RADIUS = 2


class Op(enum.Enum):
    INPUT = "Input"
    CONST = "Const"
    ADD = "Add"
    SUB = "Sub"
    SHL = "ShiftLeft"
    SHR = "ShiftRight"
    AND = "And"
    MUX = "Mux"
    MUL = "Mul"
    DIV = "Div"
    MOD = "Mod"


HARDWARE_OPS = (Op.ADD, Op.SUB, Op.SHL, Op.SHR, Op.AND, Op.MUX, Op.MUL, Op.DIV, Op.MOD)


@dataclass(frozen=True)
class Node:
    id: int
    op: Op
    operands: tuple = ()
    value: int | None = None  # constant value
    name: str | None = None  # input name


class Dag:
    """Hash-consed DAG; nodes are stored in topological order with value ranges."""

    def __init__(self):
        self.nodes = []
        self.lo = []
        self.hi = []
        self._memo = {}

    def _add(self, op, operands=(), value=None, name=None, lo=0, hi=0):
        key = (op, operands, value, name)
        if key in self._memo:
            return Expr(self, self._memo[key])
        nid = len(self.nodes)
        self.nodes.append(Node(nid, op, operands, value, name))
        self.lo.append(int(lo))
        self.hi.append(int(hi))
        self._memo[key] = nid
        return Expr(self, nid)

    def input(self, name, hi, lo=0):
        return self._add(Op.INPUT, name=name, lo=lo, hi=hi)

    def const(self, c):
        if c < 0:
            raise ValueError("DAG constants are nonnegative")
        return self._add(Op.CONST, value=int(c), lo=c, hi=c)

    def census(self, roots=None):
        """Count of hardware node types reachable from ``roots`` (all nodes by default)."""
        ids = range(len(self.nodes)) if roots is None else self.reachable(roots)
        return Counter(self.nodes[i].op.value for i in ids if self.nodes[i].op in HARDWARE_OPS)

    def reachable(self, roots):
        seen = set()
        stack = [r.id if isinstance(r, Expr) else r for r in roots]
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            stack.extend(self.nodes[i].operands)
        return sorted(seen)

    def evaluate(self, env, roots=None):
        """Evaluate with numpy; ``env`` maps input names to int arrays."""
        ids = range(len(self.nodes)) if roots is None else self.reachable(roots)
        vals = {}
        for i in ids:
            n = self.nodes[i]
            a = [vals[o] for o in n.operands]
            if n.op is Op.INPUT:
                v = np.asarray(env[n.name], dtype=np.int64)
            elif n.op is Op.CONST:
                v = np.int64(n.value)
            elif n.op is Op.ADD:
                v = a[0] + a[1]
            elif n.op is Op.SUB:
                v = a[0] - a[1]
            elif n.op is Op.SHL:
                v = a[0] << a[1]
            elif n.op is Op.SHR:
                v = a[0] >> a[1]
            elif n.op is Op.AND:
                v = a[0] & a[1]
            elif n.op is Op.MUX:
                v = np.where(a[0] != 0, a[1], a[2])
            elif n.op is Op.MUL:
                v = a[0] * a[1]
            elif n.op is Op.DIV:
                v = a[0] // a[1]
            else:
                v = a[0] % a[1]
            vals[i] = v
        return vals

    def to_json(self):
        out = []
        for n in self.nodes:
            item = {"id": n.id, "op": n.op.value, "operands": list(n.operands)}
            if n.value is not None:
                item["value"] = n.value
            if n.name is not None:
                item["name"] = n.name
            out.append(item)
        return out


@dataclass(frozen=True)
class Expr:
    dag: Dag
    id: int

    @property
    def lo(self):
        return self.dag.lo[self.id]

    @property
    def hi(self):
        return self.dag.hi[self.id]

    @property
    def node(self):
        return self.dag.nodes[self.id]

    def _c(self, other):
        return other if isinstance(other, Expr) else self.dag.const(other)

    def __add__(self, other):
        o = self._c(other)
        if o.node.op is Op.CONST and o.node.value == 0:
            return self
        if self.node.op is Op.CONST and self.node.value == 0:
            return o
        a, b = sorted((self.id, o.id))
        return self.dag._add(Op.ADD, (a, b), lo=self.lo + o.lo, hi=self.hi + o.hi)

    def __sub__(self, other):
        o = self._c(other)
        if o.node.op is Op.CONST and o.node.value == 0:
            return self
        return self.dag._add(Op.SUB, (self.id, o.id), lo=self.lo - o.hi, hi=self.hi - o.lo)

    def __lshift__(self, k):
        if k == 0:
            return self
        return self.dag._add(
            Op.SHL, (self.id, self.dag.const(k).id), lo=self.lo << k, hi=self.hi << k
        )

    def __rshift__(self, k):
        if k == 0:
            return self
        return self.dag._add(
            Op.SHR, (self.id, self.dag.const(k).id), lo=self.lo >> k, hi=self.hi >> k
        )

    def __and__(self, mask):
        lo = 0 if self.lo >= 0 else -(1 << 62)
        hi = min(self.hi, mask) if self.lo >= 0 else mask
        return self.dag._add(Op.AND, (self.id, self.dag.const(mask).id), lo=lo, hi=hi)

    def native(self, op, c):
        """Un-rewritten Mul/Div/Mod by a constant."""
        k = self.dag.const(c)
        if op is Op.MUL:
            lo, hi = self.lo * c, self.hi * c
        elif op is Op.DIV:
            lo, hi = self.lo // c, self.hi // c
        else:
            lo, hi = 0, min(c - 1, self.hi) if self.lo >= 0 else c - 1
        return self.dag._add(op, (self.id, k.id), lo=lo, hi=hi)


def _tighten(e, lo, hi):
    """Narrow the tracked range of ``e`` to a range known to hold exactly."""
    e.dag.lo[e.id] = max(e.lo, lo)
    e.dag.hi[e.id] = min(e.hi, hi)
    return e


def mux(cond, a, b):
    """cond ? a : b (cond is 0/1)."""
    return cond.dag._add(
        Op.MUX, (cond.id, a.id, b.id), lo=min(a.lo, b.lo), hi=max(a.hi, b.hi)
    )


# ---------------------------------------------------------------------------
# constant classification


def is_pow2(c):
    return c >= 1 and c & (c - 1) == 0


def mersenne_bits(M):
    """n with M = 2^n - 1 and 2 <= n <= 16, else None."""
    n = (M + 1).bit_length() - 1
    if M >= 3 and (1 << n) - 1 == M and n <= MAX_MERSENNE_BITS:
        return n
    return None


def mersenne_multiple(M2, radius=COMPOSITE_RADIUS):
    """Smallest (M, k) with M Mersenne, M = k * M2 and 1 < k < radius; None if none."""
    for n in range(2, MAX_MERSENNE_BITS + 1):
        M = (1 << n) - 1
        if M % M2 == 0 and 1 < M // M2 < radius:
            return M, M // M2
    return None


@dataclass(frozen=True)
class ShiftAddPlan:
    terms: tuple  # ((sign, exponent), ...) with the largest exponent first
    radius: int = SHIFT_ADD_RADIUS

    @property
    def value(self):
        return sum(s * (1 << e) for s, e in self.terms)


def shift_add_plan(c, radius=SHIFT_ADD_RADIUS):
    """Cheapest signed power-of-two sum equal to ``c`` with at most ``radius`` terms.

    Preference: fewer terms, then smaller largest exponent, then no subtraction.
    """
    if c < 1:
        return None
    top = c.bit_length()
    for m in range(1, radius + 1):
        best = None
        for exps in itertools.combinations(range(top, -1, -1), m):
            for signs in itertools.product((1, -1), repeat=m - 1):
                terms = ((1, exps[0]),) + tuple(zip(signs, exps[1:]))
                if sum(s * (1 << e) for s, e in terms) != c:
                    continue
                key = (exps[0], any(s < 0 for s, _ in terms))
                if best is None or key < best[0]:
                    best = (key, terms)
        if best is not None:
            return ShiftAddPlan(best[1], radius)
    return None


# ---------------------------------------------------------------------------
# rewrites


def crandall_mod(x, M):
    """x mod M for M = 2^n - 1 by fold-and-add plus one compare/mux correction."""
    return _crandall(x, M)[0]


def crandall_div(x, M):
    """floor(x / M) for M = 2^n - 1, accumulated alongside the fold."""
    return _crandall(x, M)[1]


def _crandall(x, M):
    n = mersenne_bits(M)
    if n is None:
        raise NotMersenne(f"{M} is not 2^n - 1 with 2 <= n <= {MAX_MERSENNE_BITS}")
    if x.lo < 0:
        raise ValueError("Crandall reduction needs a nonnegative operand")
    r = x
    q = x.dag.const(0)
    while r.hi > 2 * M - 1:
        h = r >> n
        q = q + h
        r = (r & M) + h
    if r.hi >= M:
        cond = (r + 1) >> n
        r = mux(cond, r - M, r)
        q = q + cond
    return _tighten(r, 0, M - 1), _tighten(q, x.lo // M, x.hi // M)


def composite_mod(x, M2, radius=COMPOSITE_RADIUS):
    """x mod M2 where k * M2 is Mersenne: Crandall mod, then a k-way priority mux."""
    found = mersenne_multiple(M2, radius)
    if found is None:
        raise NoMersenneMultiple(f"no Mersenne multiple k*{M2} with 1 < k < {radius}")
    M, k = found
    n = mersenne_bits(M)
    r = crandall_mod(x, M)
    out = r
    for j in range(1, k):
        cond = (r + ((1 << n) - j * M2)) >> n
        out = mux(cond, r - j * M2, out)
    return _tighten(out, 0, M2 - 1)


def shift_add_mul(a, c, radius=SHIFT_ADD_RADIUS):
    plan = shift_add_plan(c, radius)
    if plan is None:
        raise NotRepresentable(f"{c} needs more than {radius} signed powers of two")
    (_, e0), *rest = plan.terms
    out = a << e0
    for s, e in rest:
        out = out + (a << e) if s > 0 else out - (a << e)
    return _tighten(out, min(a.lo * c, a.hi * c), max(a.lo * c, a.hi * c))


def mul_const(x, c):
    if c == 0:
        return x.dag.const(0)
    if is_pow2(c):
        return x << (c.bit_length() - 1)
    if shift_add_plan(c) is not None:
        return shift_add_mul(x, c)
    return x.native(Op.MUL, c)


def div_const(x, d):
    if is_pow2(d):
        return x >> (d.bit_length() - 1)
    if mersenne_bits(d) is not None:
        return crandall_div(x, d)
    return x.native(Op.DIV, d)


def mod_const(x, m):
    if m == 1:
        return x.dag.const(0)
    if x.lo >= 0 and x.hi < m:
        return x
    if is_pow2(m):
        return x & (m - 1)
    if mersenne_bits(m) is not None:
        return crandall_mod(x, m)
    if mersenne_multiple(m) is not None:
        return composite_mod(x, m)
    return x.native(Op.MOD, m)


@dataclass
class OpCheck:
    op: str
    constant: int
    width: int
    dag: Dag
    root: Expr
    mismatch: int | None  # first input where the DAG disagrees, if any

    @property
    def equivalent(self):
        return self.mismatch is None

    def verdict(self):
        span = f"[0,{1 << self.width})"
        if self.equivalent:
            return f"equivalent over {span}"
        return f"MISMATCH at x={self.mismatch} over {span}"


_REFERENCE = {
    "mod": (mod_const, np.remainder),
    "div": (div_const, np.floor_divide),
    "mul": (mul_const, np.multiply),
}


def rewrite_op(op, c, width=16):
    """Rewrite ``x op c`` for a ``width``-bit unsigned x and check it exhaustively."""
    if op not in _REFERENCE:
        raise ValueError(f"unknown operation {op!r}")
    if c < 1 and op != "mul" or c < 0:
        raise ValueError("constant must be positive")
    if not 1 <= width <= 24:
        raise ValueError("width must be in [1, 24] for an exhaustive check")
    build, ref = _REFERENCE[op]
    dag = Dag()
    x = dag.input("x", (1 << width) - 1)
    root = build(x, c)
    xs = np.arange(1 << width, dtype=np.int64)
    got = np.broadcast_to(dag.evaluate({"x": xs}, [root])[root.id], xs.shape)
    bad = np.flatnonzero(got != ref(xs, c))
    return OpCheck(op, c, width, dag, root, int(bad[0]) if bad.size else None)


# ---------------------------------------------------------------------------
# bank resolution


@dataclass
class ResolutionDag:
    dag: Dag
    inputs: tuple  # Expr per array dimension
    ba: tuple  # Expr per bank-address component
    bo: Expr | None
    flat: bool = True

    @property
    def roots(self):
        return list(self.ba) + ([self.bo] if self.bo is not None else [])

    def census(self):
        return self.dag.census(self.roots)

    def evaluate(self, points):
        """(BA, BO) for an (m, n) array of addresses; BA is (m,) flat or (m, n) per dim."""
        pts = np.asarray(points, dtype=np.int64).reshape(-1, len(self.inputs))
        env = {e.node.name: pts[:, i] for i, e in enumerate(self.inputs)}
        vals = self.dag.evaluate(env, self.roots)
        m = pts.shape[0]
        cols = [np.broadcast_to(vals[e.id], (m,)) for e in self.ba]
        ba = cols[0].copy() if self.flat else np.stack(cols, axis=1)
        bo = None if self.bo is None else np.broadcast_to(vals[self.bo.id], (m,)).copy()
        return ba, bo

    def to_json(self):
        return {
            "nodes": self.dag.to_json(),
            "inputs": [e.id for e in self.inputs],
            "ba": [e.id for e in self.ba],
            "bo": None if self.bo is None else self.bo.id,
            "census": dict(sorted(self.census().items())),
        }


def build_resolution(g):
    """BA and (when P is set) BO logic for geometry ``g`` over array coordinates."""
    dag = Dag()
    hi = g.padded_dims
    xs = tuple(dag.input(f"x{d}", hi[d] - 1) for d in range(g.ndim))
    blocks = None if g.P is None else [-(-d // p) for d, p in zip(g.dims, g.P)]

    if g.is_flat:
        N, B = g.N[0], g.B[0]
        s = dag.const(0)
        for x, a in zip(xs, g.alpha):
            if a:
                s = s + mul_const(x, a)
        ba = (mod_const(div_const(s, B), N),)
        bo = None
        if blocks is not None:
            region = dag.const(0)
            for d, x in enumerate(xs):
                region = mul_const(region, blocks[d]) + div_const(x, g.P[d])
            bo = mul_const(region, B) + mod_const(s, B)
        return ResolutionDag(dag, xs, ba, bo)

    ba = []
    for d, x in enumerate(xs):
        ba.append(mod_const(div_const(mul_const(x, g.alpha[d]), g.B[d]), g.N[d]))
    bo = None
    if blocks is not None:
        bo = dag.const(0)
        for d, x in enumerate(xs):
            Bd = g.B[d]
            local = mul_const(div_const(x, g.P[d]), Bd) + mod_const(mul_const(x, g.alpha[d]), Bd)
            bo = mul_const(bo, Bd * blocks[d]) + local
    return ResolutionDag(dag, xs, tuple(ba), bo, flat=False)


# ---------------------------------------------------------------------------
# constant pool census


@dataclass(frozen=True)
class PoolCensus:
    mersenne: tuple
    mersenne_divisors: tuple
    powers_of_two: tuple
    shift_add: tuple
    lo: int
    hi: int

    def counts(self):
        return {
            "mersenne": len(self.mersenne),
            "mersenne_divisors": len(self.mersenne_divisors),
            "powers_of_two": len(self.powers_of_two),
            "shift_add": len(self.shift_add),
        }


def census(lo=1, hi=65, radius=COMPOSITE_RADIUS, shift_radius=SHIFT_ADD_RADIUS):
    """Rewrite-friendly constants in [lo, hi] by category.

    Mersenne divisors exclude Mersenne numbers themselves; powers of two start at 2.
    """
    rng = range(lo, hi + 1)
    mers = tuple(c for c in rng if mersenne_bits(c) is not None)
    divs = tuple(
        c for c in rng if c > 1 and c not in mers and mersenne_multiple(c, radius) is not None
    )
    pow2 = tuple(c for c in rng if c >= 2 and is_pow2(c))
    sa = tuple(c for c in rng if shift_add_plan(c, shift_radius) is not None)
    return PoolCensus(mers, divs, pow2, sa, lo, hi)


def rewrite_friendly(c):
    """True when a constant multiply, divide or modulo by ``c`` avoids a native op."""
    return (
        c == 1
        or is_pow2(c)
        or mersenne_bits(c) is not None
        or mersenne_multiple(c) is not None
        or shift_add_plan(c) is not None
    )


__all__ = [
    "OpCheck",
    "rewrite_op",
    "Dag",
    "Expr",
    "Op",
    "PoolCensus",
    "ResolutionDag",
    "ShiftAddPlan",
    "build_resolution",
    "census",
    "composite_mod",
    "crandall_div",
    "crandall_mod",
    "div_const",
    "is_pow2",
    "mersenne_bits",
    "mersenne_multiple",
    "mod_const",
    "mul_const",
    "mux",
    "rewrite_friendly",
    "shift_add_mul",
    "shift_add_plan",
]
