"""Controller hierarchy: unrolling, LCA, concurrency, access grouping, synchronization."""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace

from bankforge.errors import DisjointTrees, MissingSchedule
from bankforge.polytope import (
    SYNCHRONIZED,
    UNSYNCHRONIZED,
    AccessKind,
    AffineAccess,
    IteratorDomain,
    Symbol,
)


class Level(enum.Enum):
    INNER = "inner"
    OUTER = "outer"


class Schedule(enum.Enum):
    SEQUENTIAL = "sequential"
    PIPELINED = "pipelined"
    FORKJOIN = "forkjoin"
    FORK = "fork"
    STREAMING = "streaming"


class Strategy(enum.Enum):
    FOP = "fop"  # ForkJoin of Pipelines
    POF = "pof"  # Pipeline of ForkJoins


CONCURRENT_OUTER = (Schedule.FORKJOIN, Schedule.STREAMING)


@dataclass(frozen=True)
class AccessSpec:
    """An access as written in the program, before unrolling.

    Columns of ``A`` follow ``iterators`` then ``symbols``.
    """

    name: str
    memory_id: str
    kind: AccessKind
    iterators: tuple
    A: tuple
    C: tuple
    symbols: tuple = ()
    cycle: int | None = None


@dataclass(frozen=True)
class Controller:
    id: str
    level: Level
    schedule: Schedule = Schedule.SEQUENTIAL
    counters: tuple = ()
    children: tuple = ()
    initiation_interval: int | None = None
    latency: int | None = None
    unroll_strategy: Strategy | None = None
    accesses: tuple = ()
    origin: str = ""
    injected: bool = False

    def __post_init__(self):
        object.__setattr__(self, "counters", tuple(self.counters))
        object.__setattr__(self, "children", tuple(self.children))
        object.__setattr__(self, "accesses", tuple(self.accesses))
        if not self.origin:
            object.__setattr__(self, "origin", self.id)
        if self.level is Level.INNER and self.children:
            raise ValueError(f"inner controller {self.id} cannot have children")
        if self.level is Level.OUTER and self.accesses:
            raise ValueError(f"outer controller {self.id} cannot hold accesses")
        if self.level is Level.OUTER and (
            self.initiation_interval is not None or self.latency is not None
        ):
            raise ValueError(f"outer controller {self.id} cannot carry ii/latency")

    @property
    def lanes(self):
        out = 1
        for c in self.counters:
            out *= c.par
        return out

    def walk(self):
        yield self
        for ch in self.children:
            yield from ch.walk()


@dataclass(frozen=True)
class AccessGroup:
    members: tuple
    memory_id: str

    def __len__(self):
        return len(self.members)


# ---------------------------------------------------------------------------
# unrolling


def _lane_combos(ctrl):
    return list(itertools.product(*[range(c.par) for c in ctrl.counters]))


def _lane_domains(ctrl, combo, instance):
    out = {}
    for c, lane in zip(ctrl.counters, combo):
        out[c.name] = replace(
            c,
            start=c.start + c.step * lane,
            step=c.step * c.par,
            par=1,
            counter=ctrl.origin,
            instance=instance,
        )
    return out


def _flat_lane(ctrl, combo):
    idx = 0
    for c, lane in zip(ctrl.counters, combo):
        idx = idx * c.par + lane
    return idx


def _bind(spec, env, uid, path):
    its = tuple(env[name] for name in spec.iterators)
    return AffineAccess(
        spec.memory_id,
        spec.kind,
        spec.A,
        spec.C,
        its,
        spec.symbols,
        uid=uid,
        name=spec.name,
        path=path,
        cycle=spec.cycle,
    )


def _expand(ctrl, env, uid, path, suffix, default):
    """Unrolled replacement(s) for ``ctrl``; returns one Controller."""
    new_id = ctrl.id + suffix
    combos = _lane_combos(ctrl)
    strategy = ctrl.unroll_strategy or default

    if ctrl.level is Level.INNER:
        accs = []
        for spec in ctrl.accesses:
            for combo in combos:
                lane_env = {**env, **_lane_domains(ctrl, combo, new_id)}
                accs.append(
                    _bind(spec, lane_env, uid + (_flat_lane(ctrl, combo),), path + (new_id,))
                )
        return replace(ctrl, id=new_id, accesses=tuple(accs), counters=ctrl.counters)

    if len(combos) == 1:
        inner_env = {**env, **_lane_domains(ctrl, combos[0], new_id)}
        kids = tuple(
            _expand(ch, inner_env, uid + (0,), path + (new_id,), suffix, default)
            for ch in ctrl.children
        )
        return replace(ctrl, id=new_id, children=kids)

    if strategy is Strategy.FOP:
        stages = []
        for ch in ctrl.children:
            fj_id = f"{ch.id}{suffix}.fj"
            lanes = []
            for combo in combos:
                lane = _flat_lane(ctrl, combo)
                lane_env = {**env, **_lane_domains(ctrl, combo, f"{new_id}#{lane}")}
                lanes.append(
                    _expand(
                        ch,
                        lane_env,
                        uid + (lane,),
                        path + (new_id, fj_id),
                        f"{suffix}.{lane}",
                        default,
                    )
                )
            stages.append(
                Controller(
                    fj_id,
                    Level.OUTER,
                    Schedule.FORKJOIN,
                    children=tuple(lanes),
                    origin=ch.origin,
                    injected=True,
                )
            )
        return replace(ctrl, id=new_id, children=tuple(stages))

    # Pipeline of ForkJoins: one ForkJoin above per-lane copies of ctrl
    fj_id = f"{new_id}.fj"
    copies = []
    for combo in combos:
        lane = _flat_lane(ctrl, combo)
        copy_id = f"{new_id}.{lane}"
        lane_env = {**env, **_lane_domains(ctrl, combo, copy_id)}
        kids = tuple(
            _expand(
                ch,
                lane_env,
                uid + (lane,),
                path + (fj_id, copy_id),
                f"{suffix}.{lane}",
                default,
            )
            for ch in ctrl.children
        )
        copies.append(replace(ctrl, id=copy_id, children=kids))
    return Controller(
        fj_id,
        Level.OUTER,
        Schedule.FORKJOIN,
        children=tuple(copies),
        origin=ctrl.origin,
        injected=True,
    )


def unroll(root, strategy=Strategy.FOP):
    """Expand every parallelized counter; accesses become AffineAccess lanes with UIDs."""
    return _expand(root, {}, (), (), "", strategy)


def collect_accesses(root):
    out = []
    for node in root.walk():
        out.extend(a for a in node.accesses if isinstance(a, AffineAccess))
    return out


# ---------------------------------------------------------------------------
# tree queries


@dataclass
class Program:
    """An unrolled controller tree with lookup tables."""

    root: Controller
    access_order: dict = field(default_factory=dict)
    strategy: Strategy = Strategy.FOP

    def __post_init__(self):
        self.index = {}
        self.parents = {}
        stack = [(self.root, ())]
        while stack:
            node, anc = stack.pop()
            self.index[node.id] = node
            self.parents[node.id] = anc
            for ch in node.children:
                stack.append((ch, anc + (node.id,)))

    @property
    def accesses(self):
        return collect_accesses(self.root)

    def ancestors(self, node):
        if isinstance(node, AffineAccess):
            return tuple(node.path)
        if node.id not in self.parents:
            raise DisjointTrees(f"{node.id} not in tree")
        return self.parents[node.id]

    def lca(self, a, b):
        pa, pb = self.ancestors(a), self.ancestors(b)
        common = None
        for x, y in zip(pa, pb):
            if x != y:
                break
            common = x
        if common is None:
            raise DisjointTrees("nodes share no controller")
        return self.index[common]

    def ordered(self, accesses):
        return sorted(accesses, key=lambda a: (self.access_order.get(a.name, 0), a.uid))


def is_concurrent(lca, a, b):
    """Can ``a`` and ``b`` be active in the same cycle on the same buffer?"""
    if lca.level is Level.INNER:
        if a.cycle is None or b.cycle is None:
            return True
        if lca.initiation_interval is None:
            raise MissingSchedule(f"inner controller {lca.id} has no initiation interval")
        return abs(a.cycle - b.cycle) < lca.initiation_interval
    return lca.schedule in CONCURRENT_OUTER


def group_accesses(accesses, program):
    """Greedy placement: an access joins the first group holding a concurrent member."""
    groups = []
    for a in program.ordered(accesses):
        placed = False
        for g in groups:
            if any(is_concurrent(program.lca(a, b), a, b) for b in g):
                g.append(a)
                placed = True
                break
        if not placed:
            groups.append([a])
    memory = accesses[0].memory_id if accesses else ""
    return [AccessGroup(tuple(g), memory) for g in groups]


# ---------------------------------------------------------------------------
# synchronization


def sync_classes(root, strategy=Strategy.FOP):
    """Map (counter origin, iterator name) -> SyncClass for a pre-unroll tree.

    Counters with an explicit class in the input keep it.
    """
    out = {}

    def subtree_counters(ctrl):
        for node in ctrl.walk():
            for c in node.counters:
                yield node, c

    for ctrl in root.walk():
        if ctrl.level is not Level.OUTER or ctrl.lanes == 1:
            continue
        strat = ctrl.unroll_strategy or strategy
        below = list(subtree_counters(ctrl))
        dynamic = any(c.dynamic for _, c in below)
        for node, c in below:
            key = (node.origin, c.name)
            if strat is Strategy.POF and c.dynamic and node is not ctrl:
                out[key] = UNSYNCHRONIZED
            elif strat is Strategy.FOP and dynamic:
                out[key] = UNSYNCHRONIZED
    for ctrl in root.walk():
        for c in ctrl.counters:
            if c.sync != SYNCHRONIZED:
                out[(ctrl.origin, c.name)] = c.sync
    return out


def synchronize(accesses, classes):
    """Apply per-iterator sync classes (from :func:`sync_classes`) to unrolled accesses."""
    out = []
    for a in accesses:
        its = tuple(
            replace(it, sync=classes.get((it.counter, it.name), it.sync)) for it in a.iterators
        )
        out.append(replace(a, iterators=its))
    return out


def build_program(root, strategy=Strategy.FOP):
    """Unroll ``root`` and return (Program, synchronized accesses in grouping order)."""
    order = {}
    for node in root.walk():
        for spec in node.accesses:
            order.setdefault(spec.name, len(order))
    unrolled = unroll(root, strategy)
    program = Program(unrolled, order, strategy)
    accesses = synchronize(program.ordered(program.accesses), sync_classes(root, strategy))
    return program, accesses


__all__ = [
    "AccessGroup",
    "AccessSpec",
    "Controller",
    "IteratorDomain",
    "Level",
    "Program",
    "Schedule",
    "Strategy",
    "Symbol",
    "build_program",
    "collect_accesses",
    "group_accesses",
    "is_concurrent",
    "sync_classes",
    "synchronize",
    "unroll",
]
