"""Problem file (JSON) parsing and serialization."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from bankforge.errors import MismatchedMemory, SchemaError
from bankforge.polytope import AccessKind, IteratorDomain, Symbol, SyncClass
from bankforge.program import AccessSpec, Controller, Level, Schedule, Strategy

FORMAT_VERSION = 1
OBJECTIVES = ("lut", "ff", "bram")
PROBLEM_DIR = Path(__file__).parent / "problems"


@dataclass(frozen=True)
class MemorySpec:
    id: str
    dims: tuple
    element_bits: int = 32
    ports: int = 1


@dataclass
class Problem:
    memory: MemorySpec
    root: Controller
    strategy: Strategy = Strategy.FOP
    concrete_bounds: dict = field(default_factory=dict)
    budget: dict = field(default_factory=dict)
    objective: str = "lut"
    version: int = FORMAT_VERSION

    def to_json(self):
        specs = {}
        for node in self.root.walk():
            for a in node.accesses:
                specs[a.name] = a
        return {
            "version": self.version,
            "memory": {
                "id": self.memory.id,
                "dims": list(self.memory.dims),
                "element_bits": self.memory.element_bits,
                "ports": self.memory.ports,
            },
            "unroll_strategy": self.strategy.value,
            "objective": self.objective,
            "concrete_bounds": dict(self.concrete_bounds),
            "budget": dict(self.budget),
            "controllers": _ctrl_json(self.root),
            "accesses": [_access_json(a) for a in specs.values()],
        }

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# serialization


def _counter_json(c):
    out = {"name": c.name, "start": c.start, "step": c.step, "stop": c.stop, "par": c.par}
    if c.max_stop is not None:
        out["max_stop"] = c.max_stop
    if c.sync != IteratorDomain(c.name).sync:
        out["sync"] = c.sync.to_json()
    return out


def _ctrl_json(c):
    out = {
        "id": c.id,
        "level": c.level.value,
        "schedule": c.schedule.value,
        "counters": [_counter_json(k) for k in c.counters],
    }
    if c.level is Level.INNER:
        out["accesses"] = [a.name for a in c.accesses]
        if c.initiation_interval is not None:
            out["ii"] = c.initiation_interval
        if c.latency is not None:
            out["latency"] = c.latency
    else:
        out["children"] = [_ctrl_json(ch) for ch in c.children]
    if c.unroll_strategy is not None:
        out["unroll_strategy"] = c.unroll_strategy.value
    return out


def _access_json(a):
    out = {
        "name": a.name,
        "memory": a.memory_id,
        "kind": a.kind.value,
        "iterators": list(a.iterators),
        "A": [list(r) for r in a.A],
        "C": list(a.C),
    }
    if a.symbols:
        out["symbols"] = [
            {"name": s.name, "args": list(s.args), "lo": s.lo, "hi": s.hi} for s in a.symbols
        ]
    if a.cycle is not None:
        out["cycle"] = a.cycle
    return out


# ---------------------------------------------------------------------------
# parsing


def _get(obj, key, path, kind=None, default=...):
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected an object")
    if key not in obj:
        if default is ...:
            raise SchemaError(f"{path}.{key}", "missing field")
        return default
    v = obj[key]
    if kind is not None and not isinstance(v, kind) or isinstance(v, bool) and kind is int:
        raise SchemaError(f"{path}.{key}", f"expected {getattr(kind, '__name__', kind)}")
    return v


def _int_list(v, path):
    if not isinstance(v, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
        raise SchemaError(path, "expected a list of integers")
    return tuple(v)


def _enum(cls, v, path):
    try:
        return cls(v)
    except ValueError:
        choices = ", ".join(m.value for m in cls)
        raise SchemaError(path, f"{v!r} not one of {choices}") from None


def _parse_counter(obj, path):
    stop = _get(obj, "stop", path, default=None)
    if stop is not None and (not isinstance(stop, int) or isinstance(stop, bool)):
        raise SchemaError(f"{path}.stop", "expected an integer or null")
    sync = _get(obj, "sync", path, default=None)
    try:
        return IteratorDomain(
            _get(obj, "name", path, str),
            _get(obj, "start", path, int, default=0),
            _get(obj, "step", path, int, default=1),
            stop,
            _get(obj, "par", path, int, default=1),
            SyncClass.from_json(sync),
            max_stop=_get(obj, "max_stop", path, int, default=None),
        )
    except (ValueError, KeyError, TypeError) as e:
        raise SchemaError(path, str(e)) from None


def _parse_access(obj, path, memory_id, dims):
    name = _get(obj, "name", path, str)
    mem = _get(obj, "memory", path, str, default=memory_id)
    if mem != memory_id:
        raise MismatchedMemory(f"{path}: access {name} targets {mem}, problem memory is {memory_id}")
    A = _get(obj, "A", path, list)
    A = tuple(_int_list(row, f"{path}.A[{i}]") for i, row in enumerate(A))
    C = _int_list(_get(obj, "C", path, list), f"{path}.C")
    iters = _get(obj, "iterators", path, list, default=[])
    if not all(isinstance(i, str) for i in iters):
        raise SchemaError(f"{path}.iterators", "expected a list of names")
    syms = []
    for j, s in enumerate(_get(obj, "symbols", path, list, default=[])):
        sp = f"{path}.symbols[{j}]"
        syms.append(
            Symbol(
                _get(s, "name", sp, str),
                tuple(_get(s, "args", sp, list, default=[])),
                _get(s, "lo", sp, int, default=0),
                _get(s, "hi", sp, int, default=256),
            )
        )
    if len(C) != len(dims) or len(A) != len(dims):
        raise SchemaError(path, f"address has {len(C)} components, memory has {len(dims)} dims")
    cols = len(iters) + len(syms)
    for i, row in enumerate(A):
        if len(row) != cols:
            raise SchemaError(f"{path}.A[{i}]", f"expected {cols} columns (iterators then symbols)")
    return AccessSpec(
        name,
        mem,
        _enum(AccessKind, _get(obj, "kind", path, str, default="read"), f"{path}.kind"),
        tuple(iters),
        A,
        C,
        tuple(syms),
        _get(obj, "cycle", path, int, default=None),
    )


def _parse_ctrl(obj, path, accesses, used, scope):
    cid = _get(obj, "id", path, str)
    level = _enum(Level, _get(obj, "level", path, str), f"{path}.level")
    schedule = _enum(Schedule, _get(obj, "schedule", path, str, default="sequential"), f"{path}.schedule")
    counters = tuple(
        _parse_counter(c, f"{path}.counters[{i}]")
        for i, c in enumerate(_get(obj, "counters", path, list, default=[]))
    )
    scope = scope | {c.name for c in counters}
    strat = _get(obj, "unroll_strategy", path, str, default=None)
    strat = None if strat is None else _enum(Strategy, strat, f"{path}.unroll_strategy")
    if level is Level.INNER:
        if "children" in obj and obj["children"]:
            raise SchemaError(f"{path}.children", "inner controllers cannot have children")
        names = _get(obj, "accesses", path, list, default=[])
        specs = []
        for n in names:
            if n not in accesses:
                raise SchemaError(f"{path}.accesses", f"unknown access {n!r}")
            if n in used:
                raise SchemaError(f"{path}.accesses", f"access {n!r} attached twice")
            missing = [i for i in accesses[n].iterators if i not in scope]
            if missing:
                raise SchemaError(f"{path}.accesses", f"{n!r} uses iterators {missing} not in scope")
            used.add(n)
            specs.append(accesses[n])
        return Controller(
            cid, level, schedule, counters,
            initiation_interval=_get(obj, "ii", path, int, default=None),
            latency=_get(obj, "latency", path, int, default=None),
            unroll_strategy=strat,
            accesses=tuple(specs),
        )
    if obj.get("accesses"):
        raise SchemaError(f"{path}.accesses", "outer controllers cannot hold accesses")
    if "ii" in obj or "latency" in obj:
        raise SchemaError(path, "ii/latency belong to inner controllers")
    kids = tuple(
        _parse_ctrl(ch, f"{path}.children[{i}]", accesses, used, scope)
        for i, ch in enumerate(_get(obj, "children", path, list, default=[]))
    )
    return Controller(cid, level, schedule, counters, kids, unroll_strategy=strat)


def parse_problem(obj):
    """Validate and build a :class:`Problem` from decoded JSON."""
    if not isinstance(obj, dict):
        raise SchemaError("$", "expected an object")
    version = _get(obj, "version", "$", int)
    if version != FORMAT_VERSION:
        raise SchemaError("$.version", f"unsupported version {version}")
    m = _get(obj, "memory", "$", dict)
    dims = _int_list(_get(m, "dims", "$.memory", list), "$.memory.dims")
    if not dims or any(d < 1 for d in dims):
        raise SchemaError("$.memory.dims", "dimensions must be positive")
    memory = MemorySpec(
        _get(m, "id", "$.memory", str),
        dims,
        _get(m, "element_bits", "$.memory", int, default=32),
        _get(m, "ports", "$.memory", int, default=1),
    )
    if memory.ports < 1:
        raise SchemaError("$.memory.ports", "must be >= 1")
    accesses = {}
    for i, a in enumerate(_get(obj, "accesses", "$", list)):
        spec = _parse_access(a, f"$.accesses[{i}]", memory.id, dims)
        if spec.name in accesses:
            raise SchemaError(f"$.accesses[{i}].name", f"duplicate access {spec.name!r}")
        accesses[spec.name] = spec
    used = set()
    root = _parse_ctrl(_get(obj, "controllers", "$", dict), "$.controllers", accesses, used, frozenset())
    orphans = sorted(set(accesses) - used)
    if orphans:
        raise SchemaError("$.accesses", f"accesses not attached to any controller: {orphans}")
    objective = _get(obj, "objective", "$", str, default="lut")
    if objective not in OBJECTIVES:
        raise SchemaError("$.objective", f"{objective!r} not one of {', '.join(OBJECTIVES)}")
    bounds = _get(obj, "concrete_bounds", "$", dict, default={})
    for k, v in bounds.items():
        if not isinstance(v, int) or isinstance(v, bool):
            raise SchemaError(f"$.concrete_bounds.{k}", "expected an integer")
    return Problem(
        memory,
        root,
        _enum(Strategy, _get(obj, "unroll_strategy", "$", str, default="fop"), "$.unroll_strategy"),
        dict(bounds),
        dict(_get(obj, "budget", "$", dict, default={})),
        objective,
        version,
    )


def loads(text):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError("$", f"invalid JSON: {e}") from None
    return parse_problem(obj)


def load(path):
    with open(path) as fh:
        return loads(fh.read())


def bundled(name):
    """Path of a problem shipped with the package (``stride3``, ``md_grid``, ...)."""
    p = PROBLEM_DIR / f"{name}.json"
    if not p.exists():
        raise FileNotFoundError(f"no bundled problem {name!r}")
    return p


def bundled_names():
    return sorted(p.stem for p in PROBLEM_DIR.glob("*.json"))
