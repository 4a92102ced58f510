"""Cycle-level replay oracle for banking schemes.

Every logical cycle is one assignment of the shared iteration variables (and
symbol values) of a group.  Accesses whose iteration index runs past their own
trip count are idle in that cycle.  Unsynchronized iterators get one variable
per hardware instance, so all relative phase alignments are enumerated.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from bankforge import kernels
from bankforge.errors import BoundsBudgetExceeded
from bankforge.geometry import (
    bank_address,
    bank_offset,
    capacity_bound,
    flat_bank_id,
    select_parallelotope,
)
from bankforge.rewrite import build_resolution

DEFAULT_BUDGET = 10**6
CHUNK = 1 << 16


@dataclass
class ConflictReport:
    kind: str  # bank_conflict | offset_overflow | out_of_bounds | dag_mismatch
    group: int
    accesses: list
    cycle: dict  # variable -> value
    bank: int | None = None
    address: list | None = None
    detail: str = ""
    sampled: bool = False

    def to_json(self):
        return {
            "kind": self.kind,
            "group": self.group,
            "accesses": [[name, list(uid)] for name, uid in self.accesses],
            "cycle": self.cycle,
            "bank": self.bank,
            "address": self.address,
            "detail": self.detail,
            "sampled": self.sampled,
        }

    def text(self):
        who = ", ".join(f"{n}{list(u)}" for n, u in self.accesses)
        where = ", ".join(f"{k}={v}" for k, v in self.cycle.items())
        out = f"{self.kind} in group {self.group}: {who} at [{where}]"
        if self.bank is not None:
            out += f" on bank {self.bank}"
        if self.detail:
            out += f" ({self.detail})"
        if self.sampled:
            out += " [sampled, not exhaustive]"
        return out


@dataclass
class ReplayTrace:
    """Outcome of a replay; ``events`` is filled only when recording."""

    cycles: int = 0
    accesses: int = 0
    checked_sets: int = 0
    sampled: bool = False
    report: ConflictReport | None = None
    events: list = field(default_factory=list)

    @property
    def ok(self):
        return self.report is None

    def to_json(self):
        return {
            "ok": self.ok,
            "cycles": self.cycles,
            "accesses": self.accesses,
            "checked_sets": self.checked_sets,
            "sampled": self.sampled,
            "report": None if self.report is None else self.report.to_json(),
        }

    def dumps(self):
        return json.dumps(self.to_json(), sort_keys=True)

    def text(self):
        head = "clean" if self.ok else "CONFLICT"
        mode = "sampled" if self.sampled else "exhaustive"
        out = f"{head}: {self.cycles} cycles, {self.accesses} accesses, {mode}"
        if self.report is not None:
            out += "\n  " + self.report.text()
        return out


# ---------------------------------------------------------------------------
# variables


def _it_key(it):
    if it.sync.shared:
        return ("it", it.name, it.counter, "*")
    return ("it", it.name, it.counter, it.instance)


def _label(key):
    if key[0] == "it":
        return key[1] if key[3] == "*" else f"{key[1]}@{key[3]}"
    return f"{key[1]}({','.join(_label(a) for a in key[2])})"


class _Space:
    """Shared variable table for a set of accesses."""

    def __init__(self, accesses):
        self.keys = []
        self.lo = []
        self.size = []
        self.index = {}
        self.bindings = []  # per access: (iterator columns, symbol columns)
        for a in accesses:
            icol = []
            for it in a.iterators:
                icol.append(self._var(_it_key(it), 0, it.count))
            scol = []
            for s in a.symbols:
                args = tuple(_it_key(a.iterator(arg)) for arg in s.args)
                scol.append(self._var(("sym", s.name, args), s.lo, s.hi - s.lo))
            self.bindings.append((icol, scol))

    def _var(self, key, lo, size):
        if key in self.index:
            i = self.index[key]
            self.size[i] = max(self.size[i], size)
            return i
        self.index[key] = len(self.keys)
        self.keys.append(key)
        self.lo.append(lo)
        self.size.append(size)
        return len(self.keys) - 1

    @property
    def volume(self):
        return math.prod(self.size) if self.size else 1

    def points(self, flat):
        if not self.size:
            return np.zeros((flat.size, 0), dtype=np.int64)
        idx = np.unravel_index(flat, tuple(self.size))
        return np.stack(idx, axis=1).astype(np.int64) + np.asarray(self.lo, dtype=np.int64)

    def sample(self, rng, m):
        """``m`` uniformly random variable assignments."""
        cols = [rng.integers(l, l + n, size=m) for l, n in zip(self.lo, self.size)]
        return np.stack(cols, axis=1).astype(np.int64) if cols else np.zeros((m, 0), np.int64)

    def cycle(self, point):
        return {_label(k): int(v) for k, v in zip(self.keys, point)}


def _resolve(a, binding, pts):
    """Addresses (m, n) and activity mask (m,) of access ``a`` at variable points."""
    icol, scol = binding
    m = pts.shape[0]
    active = np.ones(m, dtype=bool)
    for it, c in zip(a.iterators, icol):
        active &= pts[:, c] < it.count
    addr = np.empty((m, a.ndim), dtype=np.int64)
    for d in range(a.ndim):
        icoef, scoef, const = a.address_terms(d)
        v = np.full(m, const, dtype=np.int64)
        for coef, c in zip(icoef, icol):
            if coef:
                v += coef * pts[:, c]
        for coef, c in zip(scoef, scol):
            if coef:
                v += coef * pts[:, c]
        addr[:, d] = v
    return addr, active


# ---------------------------------------------------------------------------
# replay


class _Checker:
    def __init__(self, g, dag, k, record):
        self.g = g
        self.dag = dag
        self.k = k
        self.cap = capacity_bound(g)
        self.dims = np.asarray(g.dims, dtype=np.int64)
        self.record = record

    def run(self, gi, members, space, pts, trace, sampled):
        m = pts.shape[0]
        banks = np.empty((len(members), m), dtype=np.int64)
        for ai, (a, binding) in enumerate(zip(members, space.bindings)):
            addr, active = _resolve(a, binding, pts)
            bad = active & ((addr < 0) | (addr >= self.dims)).any(axis=1)
            if bad.any():
                p = int(np.flatnonzero(bad)[0])
                return ConflictReport(
                    "out_of_bounds", gi, [a.key], space.cycle(pts[p]),
                    address=addr[p].tolist(), sampled=sampled,
                )
            live = addr[active]
            ba_dag, bo_dag = self.dag.evaluate(live)
            ba = bank_address(live, self.g)
            bo = bank_offset(live, self.g)
            if not (np.array_equal(ba_dag, ba) and np.array_equal(bo_dag, bo)):
                p = int(np.flatnonzero(active)[0])
                return ConflictReport(
                    "dag_mismatch", gi, [a.key], space.cycle(pts[p]),
                    detail="resolution logic disagrees with the bank equations",
                    sampled=sampled,
                )
            over = bo >= self.cap
            if over.any():
                p = int(np.flatnonzero(active)[np.flatnonzero(over)[0]])
                return ConflictReport(
                    "offset_overflow", gi, [a.key], space.cycle(pts[p]),
                    address=addr[p].tolist(),
                    detail=f"offset {int(bo[over][0])} >= capacity {self.cap}",
                    sampled=sampled,
                )
            ids = np.full(m, -1 - ai, dtype=np.int64)
            ids[active] = flat_bank_id(ba, self.g)
            banks[ai] = ids
            trace.accesses += int(active.sum())
        if self.record:
            for p in range(m):
                trace.events.append(
                    [(members[i].key, int(banks[i, p])) for i in range(len(members)) if banks[i, p] >= 0]
                )
        p = kernels.first_collision(banks, self.k)
        if p >= 0:
            col = banks[:, p]
            vals, counts = np.unique(col[col >= 0], return_counts=True)
            bank = int(vals[np.argmax(counts > self.k)])
            who = [members[i].key for i in range(len(members)) if col[i] == bank]
            return ConflictReport(
                "bank_conflict", gi, who, space.cycle(pts[p]), bank=bank, sampled=sampled
            )
        return None

    def sweep(self, gi, members, trace, budget, rng, force_sample=False):
        space = _Space(members)
        vol = space.volume
        sampled = force_sample or vol > budget
        if sampled:
            trace.sampled = True
            chunks = (space.sample(rng, min(CHUNK, budget - s)) for s in range(0, budget, CHUNK))
        else:
            chunks = (
                space.points(np.arange(s, min(vol, s + CHUNK), dtype=np.int64))
                for s in range(0, vol, CHUNK)
            )
        for pts in chunks:
            trace.cycles += pts.shape[0]
            rep = self.run(gi, members, space, pts, trace, sampled)
            if rep is not None:
                return rep
        return None


def replay_groups(groups, g, k=None, dag=None, budget=DEFAULT_BUDGET, seed=0, record=False):
    """Replay every group against geometry ``g``; returns a :class:`ReplayTrace`.

    A group whose joint variable space exceeds ``budget`` is checked as all of
    its (k+1)-subsets (a violation needs k+1 accesses); subsets still over
    budget are sampled and the trace is flagged.
    """
    if g.P is None:
        g = g.with_P(select_parallelotope(g))
    k = g.ports if k is None else k
    dag = dag or build_resolution(g)
    checker = _Checker(g, dag, k, record)
    trace = ReplayTrace()
    rng = np.random.default_rng(seed)
    for gi, group in enumerate(groups):
        members = list(group.members)
        if not members:
            continue
        space = _Space(members)
        if space.volume <= budget:
            rep = checker.sweep(gi, members, trace, budget, rng)
            trace.checked_sets += 1
        else:
            rep = None
            # per-access bounds, offsets and DAG agreement
            for a in members:
                rep = checker.sweep(gi, [a], trace, budget, rng)
                if rep is not None:
                    break
            if rep is None and len(members) > k:
                for subset in itertools.combinations(members, k + 1):
                    trace.checked_sets += 1
                    rep = checker.sweep(gi, list(subset), trace, budget, rng)
                    if rep is not None:
                        break
        if rep is not None:
            trace.report = rep
            return trace
    return trace


def replay(problem, solution, concrete_bounds=None, budget=DEFAULT_BUDGET, seed=0):
    """Replay a solved problem; dynamic loop bounds come from ``concrete_bounds``."""
    bounds = dict(problem.concrete_bounds)
    bounds.update(concrete_bounds or {})
    groups = [
        type(grp)(tuple(a.with_bounds(bounds) for a in grp.members), grp.memory_id)
        for grp in solution.groups
    ]
    for grp in groups:
        for a in grp.members:
            for it in a.iterators:
                if it.dynamic and it.name not in bounds and it.max_stop is None:
                    raise BoundsBudgetExceeded(
                        f"dynamic bound of {it.name} needs a concrete value for replay"
                    )
    return replay_groups(
        groups, solution.geometry, solution.geometry.ports, solution.dag, budget, seed
    )
