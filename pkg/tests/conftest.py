import math
from pathlib import Path

import pytest

from vaporpairs import biphoton, pipeline
from vaporpairs.config import load_config_file

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
POINTS = {"a1": 27e-3, "b1": 9e-3, "c1": 1e-3}

_RESULTS = pytest.StashKey[dict]()


def point_config(point: str = "a1", calibrated: bool = True):
    overlays = [CONFIGS / "calibrated.yaml"] if calibrated else []
    return load_config_file(CONFIGS / f"point_{point}.yaml", overlays)


class AcceptanceLog:
    """Collects per-criterion outcomes; printed in the terminal summary."""

    def __init__(self, store: dict):
        self.store = store

    def record(self, number: int, ok: bool, detail: str) -> bool:
        self.store.setdefault(number, []).append((bool(ok), detail))
        return bool(ok)


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def acceptance(request):
    return AcceptanceLog(request.config.stash[_RESULTS])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        parts = results[n]
        ok = all(p[0] for p in parts)
        detail = "; ".join(("" if p[0] else "FAIL ") + p[1] for p in parts)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def cfg_a1():
    return point_config("a1")


@pytest.fixture(scope="session")
def operating_points():
    """Calibrated configs, waveforms and metrics at the three operating points."""
    out = {}
    for name in POINTS:
        cfg = point_config(name)
        jsa, wf, m = biphoton.simulate(cfg)
        out[name] = (cfg, jsa, wf, m)
    return out


@pytest.fixture(scope="session")
def a1_run(cfg_a1):
    """600 s simulated acquisition at the 6 mW / 27 mW point, seed 0, timed."""
    import time

    t0 = time.perf_counter()
    streams, res = pipeline.end_to_end(cfg_a1, 600.0, 0)
    return streams, res, time.perf_counter() - t0


def rel(a, b):
    return abs(a / b - 1) if b else math.inf
