from __future__ import annotations

import numpy as np
import pytest

from trajmine.cli import main as cli_main
from trajmine.simulate import MINUTES_PER_DAY, DayLog, ScenarioConfig, simulate
from trajmine.world import OFFLINE, Continent, WorldConfig

# ---------------------------------------------------------------------------
# Acceptance reporting: one PASS/FAIL line per criterion, printed in the
# terminal summary so it survives output capture.

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion():
    """Record one acceptance-criterion outcome; returns an assert helper."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        verdict = "PASS" if ok else "FAIL"
        suffix = f" ({detail})" if detail else ""
        _ACCEPTANCE_LINES.append(f"[{verdict}] {name}{suffix}")
        assert ok, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


# ---------------------------------------------------------------------------
# Shared worlds / scenarios / simulations.

@pytest.fixture(scope="session")
def small_world() -> WorldConfig:
    return WorldConfig(
        continents=(
            Continent(0, 512, 512, avg_level=10.0),
            Continent(1, 256, 256, avg_level=20.0),
        )
    )


@pytest.fixture(scope="session")
def tiny_scenario() -> ScenarioConfig:
    return ScenarioConfig(
        n_benign=6,
        n_groups=2,
        group_size_min=4,
        group_size_max=5,
        n_days=1,
        benign_anchor_pool=4,
        benign_home_radius=96,
    )


@pytest.fixture(scope="session")
def tiny_sim(small_world, tiny_scenario):
    return simulate(small_world, tiny_scenario, seed=3)


@pytest.fixture(scope="session")
def demo_run(tmp_path_factory):
    """One small end-to-end CLI run shared by store/service/CLI tests."""
    run_dir = tmp_path_factory.mktemp("demo") / "demo_run"
    rc = cli_main(["demo", "--run", str(run_dir), "--seed", "7"])
    assert rc == 0
    return run_dir


# ---------------------------------------------------------------------------
# Log construction helper.

def make_day_log(
    player_id: int,
    day: int,
    samples: list[tuple[int, int, int, int]],
) -> DayLog:
    """DayLog from (minute_1based, x, y, continent_id) samples."""
    x = np.full(MINUTES_PER_DAY, OFFLINE, dtype=np.int32)
    y = np.full(MINUTES_PER_DAY, OFFLINE, dtype=np.int32)
    c = np.full(MINUTES_PER_DAY, OFFLINE, dtype=np.int32)
    for minute, xi, yi, ci in samples:
        x[minute - 1] = xi
        y[minute - 1] = yi
        c[minute - 1] = ci
    return DayLog(player_id=player_id, day=day, x=x, y=y, continent=c)


@pytest.fixture
def day_log_factory():
    return make_day_log
