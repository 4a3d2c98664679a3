import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_points(rng, n, dim, k, scale=1.5):
    """Points exp_o(v) with Gaussian v of typical norm ``scale`` in curvature units (sqrt(k))."""
    from hmamba import lorentz

    v = rng.normal(scale=scale * np.sqrt(k / dim), size=(n, dim))
    return lorentz.exp_map_origin(lorentz.lift(v), k)


def tangent_at(rng, x, k):
    """Random unit-norm tangent vectors at points x (projected Gaussian noise)."""
    from hmamba import lorentz

    w = rng.normal(size=x.shape)
    t = w + (lorentz.lorentz_inner(x, w) / k)[..., None] * x
    return t / lorentz.lorentz_norm(t)[..., None]


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
