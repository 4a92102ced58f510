"""Command-line driver: solve, verify, rewrite, cost."""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from bankforge import _accel, costmodel, problem, rewrite, search
from bankforge.errors import (
    BankforgeError,
    BoundsBudgetExceeded,
    DegenerateTarget,
    EmptyDataset,
    NoSolution,
    SchemaError,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NO_SOLUTION = 2
EXIT_VERIFY = 3
EXIT_BUDGET = 4


def _emit(text, out=None):
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _load_problem(path):
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = problem.bundled(str(path))
    return problem.load(p)


def cmd_solve(args):
    prob = _load_problem(args.problem)
    budget = search.CandidateBudget.from_json(prob.budget)
    if args.no_multidim:
        budget = replace(budget, multidim=False)
    result = search.solve(prob, budget, objective=args.objective)
    scheme = search.SchemeFile.from_result(prob, result, top=args.top)
    _emit(scheme.dumps(), args.out)
    best = result.best.geometry
    print(
        f"best: {best.style.value} N={list(best.N)} B={list(best.B)} alpha={list(best.alpha)} "
        f"P={list(best.P)} dup={result.best.duplication}; "
        f"{len(result.solutions)} valid schemes, {result.stats['candidates']} candidates checked",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_verify(args):
    prob = _load_problem(args.problem)
    scheme = search.SchemeFile.load(args.scheme)
    if scheme.memory != prob.memory.id:
        raise SchemaError("$.memory", f"scheme is for {scheme.memory!r}, problem has {prob.memory.id!r}")
    entries = [scheme.chosen] + scheme.alternatives
    picked = entries if args.all else [entries[args.entry]]
    failed = False
    for i, entry in enumerate(picked):
        v = search.verify(prob, entry, budget=args.budget, seed=args.seed)
        g = entry.geometry
        tag = f"{g.style.value} N={list(g.N)} B={list(g.B)} alpha={list(g.alpha)} dup={entry.duplication}"
        if args.json:
            print(json.dumps({"entry": tag, "valid": v.valid, "dag_matches": v.dag_matches,
                              "replay": v.trace.to_json()}, sort_keys=True))
        else:
            print(f"{tag}: polytope {'valid' if v.valid else 'INVALID'}, "
                  f"dag {'matches' if v.dag_matches else 'DIFFERS'}; {v.trace.text()}")
        failed |= not v.ok
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_rewrite(args):
    op, c = next((k, v) for k, v in (("mod", args.mod), ("div", args.div), ("mul", args.mul)) if v is not None)
    try:
        chk = rewrite.rewrite_op(op, c, args.width)
    except ValueError as e:
        raise SchemaError("args", str(e)) from None
    census = dict(sorted(chk.dag.census([chk.root]).items()))
    print(f"x {'%' if op == 'mod' else '/' if op == 'div' else '*'} {c}, x < 2^{args.width}")
    print(f"census: {json.dumps(census)}")
    for i in chk.dag.reachable([chk.root]):
        n = chk.dag.nodes[i]
        extra = n.name if n.name is not None else (n.value if n.value is not None else "")
        ops = ", ".join(f"%{o}" for o in n.operands)
        print(f"  %{n.id} = {n.op.value}({ops}){' ' + str(extra) if extra != '' else ''}"
              f"  [{chk.dag.lo[i]}, {chk.dag.hi[i]}]")
    print(chk.verdict())
    return EXIT_OK if chk.equivalent else EXIT_VERIFY


def _read_features(path):
    obj = json.loads(Path(path).read_text())
    rows = obj if isinstance(obj, list) and obj and isinstance(obj[0], (list, dict)) else [obj]
    out = []
    for r in rows:
        if isinstance(r, dict):
            missing = [n for n in costmodel.FEATURE_NAMES if n not in r]
            if missing:
                raise SchemaError("$", f"missing features {missing[:3]}...")
            r = [r[n] for n in costmodel.FEATURE_NAMES]
        if len(r) != costmodel.N_RAW:
            raise SchemaError("$", f"expected {costmodel.N_RAW} features, got {len(r)}")
        out.append([float(v) for v in r])
    return np.asarray(out)


def cmd_cost(args):
    if args.cost_cmd == "synth":
        X, Y = costmodel.synthetic_dataset(costmodel.SyntheticSpec(n_rows=args.rows, seed=args.seed))
        costmodel.write_dataset(args.out, X, Y)
        print(f"wrote {len(X)} rows to {args.out}", file=sys.stderr)
    elif args.cost_cmd == "train":
        X, Y = costmodel.read_dataset(args.data)
        t = costmodel.TARGETS.index(args.target)
        params = replace(costmodel.GbtParams(), random_state=args.seed)
        model = costmodel.fit_pipeline(X, Y[:, t], params, args.target)
        _emit(model.dumps(), args.out)
    elif args.cost_cmd == "predict":
        model = costmodel.GbtModel.from_json(json.loads(Path(args.model).read_text()))
        for v in model.predict(_read_features(args.features)):
            print(f"{v:.6f}")
    elif args.cost_cmd == "curves":
        X, Y = costmodel.read_dataset(args.data)
        t = costmodel.TARGETS.index(args.target)
        params = replace(costmodel.GbtParams(), random_state=args.seed)
        rows = costmodel.cross_validate(X, Y[:, t], params, n_repeats=args.repeats, seed=args.seed)
        _emit(costmodel.curves_csv(rows), args.out)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="bankforge", description="Memory banking engine")
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("solve", help="search banking schemes for a problem file")
    s.add_argument("problem", help="problem JSON (or the name of a bundled problem)")
    s.add_argument("--out", help="scheme file path (stdout if omitted)")
    s.add_argument("--top", type=int, default=None, help="keep only the N best schemes")
    s.add_argument("--objective", choices=problem.OBJECTIVES, default=None)
    s.add_argument("--no-multidim", action="store_true", help="flat geometries only")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="replay a scheme file against its problem")
    v.add_argument("problem")
    v.add_argument("scheme")
    v.add_argument("--entry", type=int, default=0, help="0 = chosen, i = i-th alternative")
    v.add_argument("--all", action="store_true", help="verify every entry")
    v.add_argument("--budget", type=int, default=None, help="replay cycle budget per group")
    v.add_argument("--json", action="store_true")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("rewrite", help="rewrite a constant mod/div/mul and check it exhaustively")
    g = r.add_mutually_exclusive_group(required=True)
    g.add_argument("--mod", type=int)
    g.add_argument("--div", type=int)
    g.add_argument("--mul", type=int)
    r.add_argument("--width", type=int, default=16)
    r.set_defaults(func=cmd_rewrite)

    c = sub.add_parser("cost", help="cost-model dataset, training and learning curves")
    csub = c.add_subparsers(dest="cost_cmd", required=True)
    t = csub.add_parser("train")
    t.add_argument("data")
    t.add_argument("--target", choices=costmodel.TARGETS, default="lut")
    t.add_argument("--out")
    t.add_argument("--seed", type=int, default=costmodel.GbtParams().random_state)
    p = csub.add_parser("predict")
    p.add_argument("model")
    p.add_argument("features")
    cv = csub.add_parser("curves")
    cv.add_argument("data")
    cv.add_argument("--target", choices=costmodel.TARGETS, default="lut")
    cv.add_argument("--out")
    cv.add_argument("--repeats", type=int, default=10)
    cv.add_argument("--seed", type=int, default=0)
    sy = csub.add_parser("synth")
    sy.add_argument("--rows", type=int, default=costmodel.SyntheticSpec().n_rows)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--out", required=True)
    c.set_defaults(func=cmd_cost)
    return ap


def _limit_threads():
    if _accel.numba is None or "BANKFORGE_THREADS" not in os.environ:
        return
    cap = min(_accel.thread_cap(), _accel.numba.config.NUMBA_NUM_THREADS)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _accel.numba.set_num_threads(cap)


def main(argv=None):
    args = build_parser().parse_args(argv)
    _limit_threads()
    try:
        return args.func(args)
    except (SchemaError, EmptyDataset, DegenerateTarget, OSError, IndexError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except BoundsBudgetExceeded as e:
        print(f"budget exceeded: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except NoSolution as e:
        print(f"no solution: {e}", file=sys.stderr)
        return EXIT_NO_SOLUTION
    except BankforgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
