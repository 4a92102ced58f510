import math

import numpy as np
import pytest
from hypothesis import strategies as st

from bankforge import problem
from bankforge.errors import NoValidP
from bankforge.geometry import HyperplaneGeometry, select_parallelotope


def padded_points(g):
    grids = np.meshgrid(*[np.arange(s, dtype=np.int64) for s in g.padded_dims], indexing="ij")
    return np.stack([m.ravel() for m in grids], axis=1)


def random_geometry(rng, max_dims=3, max_extent=32, max_alpha=8, max_N=16, max_B=4):
    """A flat or multidimensional geometry with a selected parallelotope (or None)."""
    n = int(rng.integers(1, max_dims + 1))
    dims = tuple(int(v) for v in rng.integers(1, max_extent + 1, size=n))
    if n > 1 and rng.random() < 0.3:
        N = tuple(int(v) for v in rng.integers(1, 5, size=n))
        B = tuple(int(v) for v in rng.integers(1, max_B + 1, size=n))
        alpha = tuple(int(v) for v in rng.integers(1, max_alpha + 1, size=n))
        g = HyperplaneGeometry.multidim(N, B, alpha, dims)
    else:
        alpha = tuple(int(v) for v in rng.integers(0, max_alpha + 1, size=n))
        if not any(alpha):
            alpha = (1,) + alpha[1:]
        g = HyperplaneGeometry.flat(
            int(rng.integers(1, max_N + 1)), int(rng.integers(1, max_B + 1)), alpha, dims
        )
    try:
        return g.with_P(select_parallelotope(g))
    except NoValidP:
        return None


def geometries(count, seed, max_elements=None, **kw):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        g = random_geometry(rng, **kw)
        if g is None:
            continue
        if max_elements is not None and math.prod(g.padded_dims) > max_elements:
            continue
        out.append(g)
    return out


seeds = st.integers(min_value=0, max_value=2**31 - 1)


@pytest.fixture(scope="session")
def stride3():
    return problem.load(problem.bundled("stride3"))


@pytest.fixture(scope="session")
def md_grid():
    return problem.load(problem.bundled("md_grid"))


_ACCEPTANCE = []


@pytest.fixture
def criterion(capsys):
    """Context manager that records one PASS/FAIL line for an acceptance criterion."""
    import contextlib

    @contextlib.contextmanager
    def run(num, title):
        info = {}
        try:
            yield info
        except BaseException as e:
            line = f"FAIL criterion {num:2d} {title}: {info.get('detail', '')} ({type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''})"
            raise
        else:
            line = f"PASS criterion {num:2d} {title}: {info.get('detail', '')}"
        finally:
            _ACCEPTANCE.append((num, line))
            with capsys.disabled():
                print("\n" + line)

    return run


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
