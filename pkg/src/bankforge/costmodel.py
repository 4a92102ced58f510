"""Resource cost model: degree-2 polynomial features, boosted regression trees, importance re-selection."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from bankforge import kernels
from bankforge.errors import DegenerateTarget, EmptyDataset, SchemaError

SCHEMA_ID = "bankforge-features-v1"
MODEL_VERSION = 1
MAX_DIMS = 4
TARGETS = ("lut", "ff", "bram")
DATA_DIR = Path(__file__).parent / "data"

_PER_DIM = ("N", "B", "alpha", "P", "delta")
DAG_KINDS = ("add", "sub", "shift", "and", "mux", "mul", "div", "mod")
FEATURE_NAMES = tuple(
    [f"{k}{d}" for d in range(MAX_DIMS) for k in _PER_DIM]
    + ["prod_N", "bank_capacity", "ports", "element_bits", "duplication"]
    + [f"dag_{k}" for k in DAG_KINDS]
    + ["readers", "writers", "max_fo", "max_fi", "groups", "depth"]
)
N_RAW = len(FEATURE_NAMES)

_DAG_MAP = {
    "Add": "add",
    "Sub": "sub",
    "ShiftLeft": "shift",
    "ShiftRight": "shift",
    "And": "and",
    "Mux": "mux",
    "Mul": "mul",
    "Div": "div",
    "Mod": "mod",
}


# ---------------------------------------------------------------------------
# features


def scheme_features(
    g,
    capacity,
    dag_census,
    readers,
    writers,
    max_fo,
    max_fi,
    groups=1,
    depth=1,
    element_bits=32,
    duplication=1,
):
    """Raw feature vector in :data:`FEATURE_NAMES` order for geometry ``g`` (P selected)."""
    if g.ndim > MAX_DIMS:
        raise SchemaError("features", f"at most {MAX_DIMS} array dimensions are supported")
    x = np.zeros(N_RAW)
    P = g.P or (0,) * g.ndim
    for d in range(g.ndim):
        Nd = g.N[0] if g.is_flat and d == 0 else (0 if g.is_flat else g.N[d])
        Bd = g.B[0] if g.is_flat and d == 0 else (0 if g.is_flat else g.B[d])
        x[d * 5 : d * 5 + 5] = (Nd, Bd, g.alpha[d], P[d], g.delta[d])
    base = MAX_DIMS * 5
    x[base : base + 5] = (g.total_banks, capacity, g.ports, element_bits, duplication)
    dag = dict.fromkeys(DAG_KINDS, 0)
    for op, n in dag_census.items():
        if op in _DAG_MAP:
            dag[_DAG_MAP[op]] += n
    x[base + 5 : base + 13] = [dag[k] for k in DAG_KINDS]
    x[base + 13 :] = (readers, writers, max_fo, max_fi, groups, depth)
    return x


def poly_expand(X):
    """Raw columns followed by all products x_i * x_j with i <= j (row-major)."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    i, j = np.triu_indices(X.shape[1])
    out = np.concatenate([X, X[:, i] * X[:, j]], axis=1)
    return out[0] if single else out


def expanded_names(names=FEATURE_NAMES):
    i, j = np.triu_indices(len(names))
    return list(names) + [f"{names[a]}*{names[b]}" for a, b in zip(i, j)]


# ---------------------------------------------------------------------------
# boosted trees


@dataclass(frozen=True)
class GbtParams:
    n_estimators: int = 159
    max_depth: int = 3
    learning_rate: float = 0.1
    subsample: float = 0.6
    colsample_bytree: float = 1.0
    reg_lambda: float = 0.04
    reg_alpha: float = 3.0
    gamma: float = 5.0
    min_samples_split: int = 10
    random_state: int = 30


@dataclass
class Tree:
    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def depth(self):
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def apply(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            go_left = X[rows, np.maximum(f, 0)] < self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)

    def predict(self, X):
        return self.value[self.apply(X)]

    def to_json(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            np.array(obj["feature"], dtype=np.int64),
            np.array(obj["threshold"], dtype=np.float64),
            np.array(obj["left"], dtype=np.int64),
            np.array(obj["right"], dtype=np.int64),
            np.array(obj["value"], dtype=np.float64),
        )


@dataclass
class GbtModel:
    params: GbtParams
    base: float
    trees: list
    target: str = "lut"
    mask: list | None = None  # columns of the (expanded) input used by the trees
    expand: bool = False  # inputs are raw schema rows to poly-expand first
    n_features: int = 0
    degenerate: bool = False

    def transform(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.expand:
            X = poly_expand(X)
        if X.shape[1] != self.n_features:
            raise SchemaError("features", f"expected {self.n_features} columns, got {X.shape[1]}")
        if self.mask is not None:
            X = X[:, self.mask]
        return X

    def raw_predict(self, X):
        Z = self.transform(X)
        out = np.full(Z.shape[0], self.base)
        for t in self.trees:
            out += self.params.learning_rate * t.predict(Z)
        return out

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        out = np.maximum(self.raw_predict(X), 0.0)
        return float(out[0]) if X.ndim == 1 else out

    def importance(self):
        """Split count per model input column (after masking)."""
        width = len(self.mask) if self.mask is not None else self.n_features
        counts = np.zeros(width, dtype=np.int64)
        for t in self.trees:
            f = t.feature[t.feature >= 0]
            np.add.at(counts, f, 1)
        return counts

    def to_json(self):
        return {
            "schema": SCHEMA_ID,
            "version": MODEL_VERSION,
            "target": self.target,
            "params": asdict(self.params),
            "base": self.base,
            "mask": self.mask,
            "expand": self.expand,
            "n_features": self.n_features,
            "degenerate": self.degenerate,
            "trees": [t.to_json() for t in self.trees],
        }

    def dumps(self):
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, obj):
        if obj.get("schema") != SCHEMA_ID:
            raise SchemaError("schema", f"unknown feature schema {obj.get('schema')!r}")
        if obj.get("version") != MODEL_VERSION:
            raise SchemaError("version", f"unsupported model version {obj.get('version')!r}")
        return cls(
            GbtParams(**obj["params"]),
            float(obj["base"]),
            [Tree.from_json(t) for t in obj["trees"]],
            obj["target"],
            obj["mask"],
            bool(obj["expand"]),
            int(obj["n_features"]),
            bool(obj.get("degenerate", False)),
        )


def _leaf_weight(G, H, lam, alpha):
    return -np.sign(G) * np.maximum(np.abs(G) - alpha, 0.0) / (H + lam)


def _grow(X, order, vals, grad, hess, sampled, p):
    n = X.shape[0]
    feature, threshold, left, right = [-1], [0.0], [-1], [-1]
    node_of = np.where(sampled, 0, -1).astype(np.int64)  # frontier slot per row
    leaf_of = np.where(sampled, 0, -1).astype(np.int64)  # tree node per row
    frontier = [0]
    for _ in range(p.max_depth):
        if not frontier:
            break
        gain, feat, thr = kernels.best_splits(
            vals, order, grad, hess, node_of, len(frontier),
            p.reg_lambda, p.gamma, p.min_samples_split,
        )
        nxt = np.full(n, -1, dtype=np.int64)
        new_frontier = []
        for s, nid in enumerate(frontier):
            if feat[s] < 0 or not gain[s] > 0:
                continue
            f, t = int(feat[s]), float(thr[s])
            lid, rid = len(feature), len(feature) + 1
            feature += [-1, -1]
            threshold += [0.0, 0.0]
            left += [-1, -1]
            right += [-1, -1]
            feature[nid], threshold[nid], left[nid], right[nid] = f, t, lid, rid
            rows = node_of == s
            go = rows & (X[:, f] < t)
            stay = rows & ~go
            nxt[go] = len(new_frontier)
            nxt[stay] = len(new_frontier) + 1
            leaf_of[go] = lid
            leaf_of[stay] = rid
            new_frontier += [lid, rid]
        node_of = nxt
        frontier = new_frontier
    size = len(feature)
    live = leaf_of >= 0
    G = np.bincount(leaf_of[live], weights=grad[live], minlength=size)
    H = np.bincount(leaf_of[live], weights=hess[live], minlength=size)
    leaf = (np.array(feature) < 0) & (H + p.reg_lambda > 0)  # an unsampled root stays 0
    value = np.zeros(size)
    value[leaf] = _leaf_weight(G[leaf], H[leaf], p.reg_lambda, p.reg_alpha)
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        value,
    )


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDataset("training set has no rows")
    if X.shape[0] != y.shape[0]:
        raise SchemaError("dataset", "feature and target row counts differ")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise SchemaError("dataset", "non-finite values are not supported")
    return X, y


def train(X, y, params=GbtParams(), target="lut", expand=False, mask=None, strict=False):
    """Fit a boosted ensemble (squared error, g = pred - y, h = 1).

    ``expand`` poly-expands raw schema rows first; ``mask`` restricts the
    (expanded) columns used.  A constant target yields a constant model flagged
    ``degenerate`` (or raises DegenerateTarget when ``strict``).
    """
    X, y = _check_xy(X, y)
    Z = poly_expand(X) if expand else X
    n_features = Z.shape[1]
    if mask is not None:
        mask = [int(m) for m in mask]
        Z = Z[:, mask]
    base = float(np.mean(y))
    model = GbtModel(params, base, [], target, mask, expand, n_features)
    if np.all(y == y[0]):
        if strict:
            raise DegenerateTarget(f"target {target!r} has zero variance")
        model.degenerate = True
        return model
    rng = np.random.default_rng(params.random_state)
    n, d = Z.shape
    order_full = np.argsort(Z, axis=0, kind="stable").T.copy()
    vals_full = np.take_along_axis(Z.T, order_full, axis=1)
    pred = np.full(n, base)
    hess = np.ones(n)
    for _ in range(params.n_estimators):
        sampled = rng.random(n) < params.subsample if params.subsample < 1 else np.ones(n, bool)
        if params.colsample_bytree < 1:
            k = max(1, int(round(params.colsample_bytree * d)))
            cols = np.sort(rng.choice(d, size=k, replace=False))
            tree = _grow(Z[:, cols], order_full[cols], vals_full[cols], pred - y, hess, sampled, params)
            inner = tree.feature >= 0
            tree.feature[inner] = cols[tree.feature[inner]]
        else:
            tree = _grow(Z, order_full, vals_full, pred - y, hess, sampled, params)
        model.trees.append(tree)
        pred = pred + params.learning_rate * tree.predict(Z)
    return model


def select_and_retrain(model, X, y, n=36):
    """Keep the ``n`` most frequently split columns (ties by index) and refit."""
    counts = model.importance()
    cols = np.arange(counts.size) if model.mask is None else np.asarray(model.mask)
    if n >= counts.size:
        keep = cols
    else:
        rank = sorted(range(counts.size), key=lambda i: (-counts[i], i))[:n]
        keep = cols[np.sort(rank)]
    return train(
        X, y, model.params, model.target, expand=model.expand, mask=[int(c) for c in keep]
    )


def fit_pipeline(X_raw, y, params=GbtParams(), target="lut", n_select=36):
    """Poly expansion, boosting, then top-``n_select`` re-selection and refit."""
    first = train(X_raw, y, params, target, expand=True)
    if first.degenerate:
        return first
    return select_and_retrain(first, X_raw, y, n_select)


def predict(model, f):
    return model.predict(f)


# ---------------------------------------------------------------------------
# evaluation


def r2_score(y, pred):
    y = np.asarray(y, dtype=np.float64)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise DegenerateTarget("R^2 undefined for a constant target")
    return 1.0 - float(np.sum((y - pred) ** 2)) / ss_tot


DEFAULT_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass
class CurveRow:
    fraction: float
    mean_train_r2: float
    std_train_r2: float
    mean_test_r2: float
    std_test_r2: float


def cross_validate(
    X_raw,
    y,
    params=GbtParams(),
    fractions=DEFAULT_FRACTIONS,
    n_repeats=10,
    test_ratio=0.3,
    seed=0,
    n_select=36,
    fit=None,
):
    """Learning curve over ``n_repeats`` seeded 70/30 permutations."""
    X_raw, y = _check_xy(X_raw, y)
    fit = fit or (lambda Xt, yt: fit_pipeline(Xt, yt, params, n_select=n_select))
    n = X_raw.shape[0]
    n_test = int(round(test_ratio * n))
    scores = {f: ([], []) for f in fractions}
    for r in range(n_repeats):
        perm = np.random.default_rng(seed + r).permutation(n)
        test, pool = perm[:n_test], perm[n_test:]
        for f in fractions:
            tr = pool[: max(2, int(math.ceil(f * pool.size)))]
            model = fit(X_raw[tr], y[tr])
            scores[f][0].append(r2_score(y[tr], model.predict(X_raw[tr])))
            scores[f][1].append(r2_score(y[test], model.predict(X_raw[test])))
    return [
        CurveRow(f, float(np.mean(a)), float(np.std(a)), float(np.mean(b)), float(np.std(b)))
        for f, (a, b) in scores.items()
    ]


def curves_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fraction", "mean_train_r2", "std_train_r2", "mean_test_r2", "std_test_r2"])
    for r in rows:
        w.writerow(
            [f"{r.fraction:g}"]
            + [f"{v:.6f}" for v in (r.mean_train_r2, r.std_train_r2, r.mean_test_r2, r.std_test_r2)]
        )
    return buf.getvalue()


# ---------------------------------------------------------------------------
# datasets


def write_dataset(path, X, Y, names=FEATURE_NAMES, targets=TARGETS):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(names) + list(targets))
        for x, t in zip(X, Y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in t])


def read_dataset(path, targets=TARGETS):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyDataset(f"{path} is empty")
    header = rows[0]
    expect = list(FEATURE_NAMES) + list(targets)
    if header != expect:
        raise SchemaError("header", f"dataset columns do not match schema {SCHEMA_ID}")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    if data.size == 0:
        raise EmptyDataset(f"{path} has no rows")
    if not np.isfinite(data).all():
        raise SchemaError("dataset", "non-finite values are not supported")
    return data[:, :N_RAW], data[:, N_RAW:]


@dataclass
class SyntheticSpec:
    """Knobs of the analytic resource generator."""

    n_rows: int = 831
    seed: int = 0
    noise: float = 0.08  # lognormal sigma on LUT/FF
    bram_bits: int = 18432


MAX_ELEMENTS = 1 << 16  # on-chip array size cap for sampled schemes


def _sample_scheme(rng):
    from bankforge.geometry import HyperplaneGeometry, capacity_bound, select_parallelotope

    ndim = int(rng.choice([1, 2, 3, 4], p=[0.4, 0.3, 0.2, 0.1]))
    while True:
        dims = tuple(int(rng.choice([4, 8, 12, 16, 24, 32, 48, 64])) for _ in range(ndim))
        if math.prod(dims) <= MAX_ELEMENTS:
            break
    if ndim > 1 and rng.random() < 0.4:
        N = tuple(int(rng.integers(1, 5)) for _ in range(ndim))
        B = tuple(int(rng.integers(1, 3)) for _ in range(ndim))
        alpha = tuple(1 for _ in range(ndim))
        g = HyperplaneGeometry.multidim(N, B, alpha, dims)
    else:
        alpha = tuple(int(rng.integers(0, 5)) for _ in range(ndim))
        if not any(alpha):
            alpha = (1,) + alpha[1:]
        g = HyperplaneGeometry.flat(int(rng.integers(1, 17)), int(rng.integers(1, 5)), alpha, dims)
    g = g.with_ports(int(rng.choice([1, 1, 2])))
    g = g.with_P(select_parallelotope(g))
    return g, capacity_bound(g)


def synthetic_dataset(spec=SyntheticSpec()):
    """Seeded stand-in for a place-and-route resource dataset.

    Rows describe random banking schemes (real geometries, parallelotopes and
    rewritten resolution DAGs); targets follow an analytic crossbar, datapath
    and storage model with multiplicative noise.
    """
    from bankforge.rewrite import build_resolution

    rng = np.random.default_rng(spec.seed)
    X = np.zeros((spec.n_rows, N_RAW))
    Y = np.zeros((spec.n_rows, len(TARGETS)))
    for r in range(spec.n_rows):
        g, cap = _sample_scheme(rng)
        census = build_resolution(g).census()
        banks = g.total_banks
        bits = int(rng.choice([8, 16, 32, 64]))
        dup = int(rng.choice([1, 1, 1, 2, 4]))
        readers = int(rng.integers(1, max(2, min(32, 2 * banks)) + 1))
        writers = int(rng.integers(1, 5))
        fo = int(rng.integers(1, banks + 1))
        fi = int(rng.integers(1, max(1, min(banks, readers)) + 1))
        groups = int(rng.integers(1, 4))
        depth = int(rng.integers(1, 6))
        X[r] = scheme_features(
            g, cap, census, readers, writers, fo, fi, groups, depth, bits, dup
        )
        addr = max(1, math.ceil(math.log2(max(2, math.prod(g.padded_dims)))))
        logic = (
            census.get("Add", 0) + census.get("Sub", 0)
        ) * addr + census.get("Mux", 0) * addr / 2 + (
            census.get("Div", 0) + census.get("Mod", 0)
        ) * addr * addr / 2 + census.get("Mul", 0) * addr
        accessors = readers + writers
        lut = (
            30
            + readers * bits * (fo - 1) / 3
            + writers * bits * math.log2(banks + 1)
            + accessors * logic / 2
            + fi * banks * bits / 8
        ) * dup ** 0.5
        ff = (
            20
            + accessors * addr * (1 + depth / 2)
            + readers * bits * (1 + (fo > 1))
            + accessors * logic / 4
        )
        bram = dup * banks * g.ports * math.ceil(cap * bits / spec.bram_bits)
        noise = rng.lognormal(0.0, spec.noise, size=2)
        Y[r] = (lut * noise[0], ff * noise[1], bram)
    return X, Y


# ---------------------------------------------------------------------------
# bundled models


@dataclass
class ModelBundle:
    models: dict = field(default_factory=dict)  # target -> GbtModel

    def predict(self, raw):
        return {t: m.predict(raw) for t, m in self.models.items()}

    def to_json(self):
        return {
            "schema": SCHEMA_ID,
            "version": MODEL_VERSION,
            "models": {t: m.to_json() for t, m in sorted(self.models.items())},
        }

    def dumps(self):
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, obj):
        if obj.get("schema") != SCHEMA_ID:
            raise SchemaError("schema", f"unknown feature schema {obj.get('schema')!r}")
        return cls({t: GbtModel.from_json(m) for t, m in obj["models"].items()})

    @classmethod
    def load(cls, path=None):
        if path is None:
            path = DATA_DIR / "default_models.json"
        with open(path) as fh:
            text = fh.read()
        return cls.from_json(json.loads(text))


def train_bundle(X_raw, Y, params=GbtParams(), n_select=36, targets=TARGETS):
    return ModelBundle(
        {t: fit_pipeline(X_raw, Y[:, i], params, t, n_select) for i, t in enumerate(targets)}
    )


_DEFAULT = None


def default_bundle():
    """Models shipped with the package, trained on the synthetic generator."""
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = ModelBundle.load()
    return _DEFAULT
