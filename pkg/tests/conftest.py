import numpy as np
import pytest

from mpslab.oracle import SyntheticOracleSpec, make_synthetic_oracle


def rand_image(seed, h=8, w=8, c=3):
    # strictly positive values so no pixel equals the zero baseline
    return np.random.default_rng(seed).uniform(0.05, 1.0, size=(h, w, c))


def key_oracle(keys, h=8, w=8, c=3, **kw):
    spec = SyntheticOracleSpec("pixel_key", h, w, c, key_pixels=list(keys), **kw)
    return make_synthetic_oracle(spec)


def region_oracle(region, t, h=8, w=8, c=3):
    spec = SyntheticOracleSpec("threshold_region", h, w, c, region=list(region), threshold=t)
    return make_synthetic_oracle(spec)


def single_pixel_mask(h, w, pixels):
    m = np.zeros((h, w), dtype=bool)
    for r, c in pixels:
        m[r, c] = True
    return m


@pytest.fixture
def image8():
    return rand_image(0)


# -- acceptance summary lines ----------------------------------------------

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance outcome; the line is printed in the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
