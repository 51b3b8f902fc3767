import numpy as np
import pytest

from clipflip.data import ClusteredDataset


def make_dataset(seed, N=4, nj=(1, 3), M=1, q=1, intercept=True, shared=True, integers=False):
    """Small random dataset; ``q`` counts nuisance columns including the intercept."""
    rng = np.random.default_rng(seed)
    sizes = rng.integers(nj[0], nj[1] + 1, size=N)
    n = int(sizes.sum())
    draw = (lambda *s: rng.integers(-3, 4, size=s).astype(float)) if integers \
        else (lambda *s: rng.standard_normal(s))
    y = draw(n, M)
    x = draw(n) if shared else draw(n, M)
    cols = ([np.ones(n)] if intercept and q else []) + [draw(n) for _ in range(q - int(intercept and q > 0))]
    Z = np.column_stack(cols) if cols else np.zeros((n, 0))
    return ClusteredDataset.from_arrays(y, x, Z, sizes)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_ds():
    return make_dataset(3, N=6, nj=(2, 5), M=2, q=2)


# verdict lines filled in by test_acceptance.py
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
