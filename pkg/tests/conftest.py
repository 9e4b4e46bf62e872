import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from imps_orbits.imps import mixed_canonical, normalize, random_tensor
from imps_orbits.search import OrbitRecord

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
ARTIFACTS = ROOT / "artifacts"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def state2():
    return mixed_canonical(random_tensor(2, 2, seed=7))


@pytest.fixture
def tensor3():
    return normalize(random_tensor(3, 2, seed=11))


def load_unique_orbits(chi: int, name: str | None = None) -> list[OrbitRecord]:
    """Unique orbits stored by a census campaign, or an empty list."""
    base = ARTIFACTS / (name or f"census_chi{chi}")
    out = []
    for path in sorted(base.glob("orbit_seed*.json")):
        out.append(OrbitRecord.from_json(json.loads(path.read_text())))
    return out


@pytest.fixture(scope="session")
def chi1_orbits():
    orbits = load_unique_orbits(1)
    if not orbits:
        pytest.skip("chi=1 census artifact missing; run the search command first")
    return orbits


@pytest.fixture(scope="session")
def chi2_orbits():
    orbits = load_unique_orbits(2)
    if not orbits:
        pytest.skip("chi=2 census artifact missing; run the search command first")
    return orbits


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def acceptance(request):
    """Record the outcome of one acceptance criterion for the terminal summary."""

    def record(number: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}"
        request.config.acceptance_lines.append(line + (f": {detail}" if detail else ""))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
