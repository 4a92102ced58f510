import json
from dataclasses import replace

import numpy as np
import pytest

from bankforge import costmodel as cm
from bankforge.errors import DegenerateTarget, EmptyDataset, SchemaError

STUMP = cm.GbtParams(
    n_estimators=1, max_depth=1, learning_rate=1.0, subsample=1.0, colsample_bytree=1.0,
    reg_lambda=0.0, reg_alpha=0.0, gamma=0.0, min_samples_split=2, random_state=0,
)


def stump_oracle(X, y):
    """Closed-form depth-1 regression stump for squared error (h = 1, no penalties)."""
    n, d = X.shape
    base = float(np.mean(y))
    g = [base - v for v in y]
    G = sum(g)
    best = None
    for f in range(d):
        order = np.argsort(X[:, f], kind="stable")
        for q in range(n - 1):
            lo, hi = X[order[q], f], X[order[q + 1], f]
            if not hi > lo:
                continue
            GL = sum(g[r] for r in order[: q + 1])
            HL = float(q + 1)
            GR, HR = G - GL, float(n) - HL
            gain = 0.5 * (GL * GL / HL + GR * GR / HR - G * G / float(n))
            if best is None or gain > best[0]:
                best = (gain, f, 0.5 * (lo + hi))
    if best is None or not best[0] > 0:
        leaf = -G / float(n)
        return lambda Z: np.full(len(Z), base + leaf)
    _, f, thr = best
    left = X[:, f] < thr
    wl = -sum(g[r] for r in range(n) if left[r]) / float(left.sum())
    wr = -sum(g[r] for r in range(n) if not left[r]) / float((~left).sum())
    return lambda Z: np.where(Z[:, f] < thr, base + wl, base + wr)


def test_stump_matches_closed_form():
    rng = np.random.default_rng(3)
    for _ in range(300):
        n = int(rng.integers(1, 9))
        d = int(rng.integers(1, 4))
        X = rng.integers(0, 5, size=(n, d)).astype(float)
        y = rng.integers(-10, 11, size=n).astype(float)
        if np.all(y == y[0]):
            y[0] += 1.0
        model = cm.train(X, y, STUMP)
        probe = np.vstack([X, rng.integers(-1, 6, size=(5, d)).astype(float)])
        assert np.array_equal(model.raw_predict(probe), stump_oracle(X, y)(probe))


def _data(n=120, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 5))
    y = 3 * X[:, 0] ** 2 + 2 * X[:, 1] * X[:, 2] + rng.normal(scale=0.1, size=n) + 20
    return X, y


def test_training_is_byte_identical():
    X, y = _data()
    p = replace(cm.GbtParams(), n_estimators=30)
    assert cm.train(X, y, p).dumps() == cm.train(X, y, p).dumps()


def test_seed_changes_subsample():
    X, y = _data()
    p = replace(cm.GbtParams(), n_estimators=10, gamma=0.0, reg_alpha=0.0)
    a = cm.train(X, y, p).dumps()
    b = cm.train(X, y, replace(p, random_state=p.random_state + 1)).dumps()
    assert a != b


def test_model_json_round_trip():
    X, y = _data()
    m = cm.train(X, y, replace(cm.GbtParams(), n_estimators=12))
    back = cm.GbtModel.from_json(json.loads(m.dumps()))
    assert back.dumps() == m.dumps()
    assert np.array_equal(back.predict(X), m.predict(X))


def test_boosting_fits_training_data():
    X, y = _data()
    m = cm.train(X, y, replace(cm.GbtParams(), gamma=0.0, reg_alpha=0.0))
    assert cm.r2_score(y, m.predict(X)) > 0.9


def test_leaf_soft_threshold():
    w = cm._leaf_weight(np.array([5.0, -5.0, 2.0]), np.array([1.0, 1.0, 1.0]), 0.0, 3.0)
    assert w.tolist() == [-2.0, 2.0, -0.0]


def test_poly_expansion_width():
    assert cm.N_RAW == 39
    Z = cm.poly_expand(np.arange(39, dtype=float))
    assert Z.shape == (819,) and len(cm.expanded_names()) == 819
    assert Z[39] == 0.0 and Z[40] == 0.0 and Z[-1] == 38.0 * 38.0


def test_select_keeps_most_used_columns():
    X, y = _data()
    first = cm.train(X, y, replace(cm.GbtParams(), n_estimators=20, gamma=0.0), expand=True)
    second = cm.select_and_retrain(first, X, y, n=4)
    counts = first.importance()
    top = sorted(range(counts.size), key=lambda i: (-counts[i], i))[:4]
    assert second.mask == sorted(top)
    assert second.predict(X).shape == (X.shape[0],)


def test_degenerate_target():
    X = np.ones((5, 2))
    y = np.full(5, 7.0)
    m = cm.train(X, y)
    assert m.degenerate and np.all(m.predict(X) == 7.0)
    with pytest.raises(DegenerateTarget):
        cm.train(X, y, strict=True)
    with pytest.raises(DegenerateTarget):
        cm.r2_score(y, y)


def test_input_errors():
    with pytest.raises(EmptyDataset):
        cm.train(np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(SchemaError):
        cm.train(np.ones((3, 2)), np.array([1.0, np.nan, 2.0]))
    m = cm.train(*_data(), params=replace(cm.GbtParams(), n_estimators=2))
    with pytest.raises(SchemaError):
        m.predict(np.ones((1, 4)))


def test_dataset_round_trip(tmp_path):
    X, Y = cm.synthetic_dataset(cm.SyntheticSpec(n_rows=25, seed=4))
    assert X.shape == (25, cm.N_RAW) and Y.shape == (25, 3)
    assert np.isfinite(X).all() and (Y > 0).all()
    path = tmp_path / "d.csv"
    cm.write_dataset(path, X, Y)
    X2, Y2 = cm.read_dataset(path)
    assert np.array_equal(X, X2) and np.array_equal(Y, Y2)
    path.write_text("a,b\n1,2\n")
    with pytest.raises(SchemaError):
        cm.read_dataset(path)


def test_synthetic_dataset_is_seeded():
    a = cm.synthetic_dataset(cm.SyntheticSpec(n_rows=15, seed=2))
    b = cm.synthetic_dataset(cm.SyntheticSpec(n_rows=15, seed=2))
    assert all(np.array_equal(u, v) for u, v in zip(a, b))


def test_cross_validate_protocol():
    X, y = _data(60)
    calls = []

    def fit(Xt, yt):
        calls.append(len(yt))
        return cm.train(Xt, yt, replace(cm.GbtParams(), n_estimators=5, gamma=0.0))

    rows = cm.cross_validate(X, y, n_repeats=3, fit=fit)
    assert [r.fraction for r in rows] == list(cm.DEFAULT_FRACTIONS)
    assert len(calls) == 3 * len(cm.DEFAULT_FRACTIONS)
    assert max(calls) == 60 - 18  # 70/30 split
    csv = cm.curves_csv(rows).splitlines()
    assert csv[0].startswith("fraction,mean_train_r2") and len(csv) == 6


def test_bundled_models_load_and_predict():
    b = cm.default_bundle()
    X, _ = cm.synthetic_dataset(cm.SyntheticSpec(n_rows=3, seed=9))
    pred = b.predict(X[0])
    assert set(pred) == set(cm.TARGETS) and all(v >= 0 for v in pred.values())
