import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def lane_control_points(rng, turn=(0.3, 0.6)):
    """Control points of a lane-like cubic whose three legs all turn.

    Each leg is 5-15 m long and turns by 0.3-0.6 rad (random sign) from the
    previous one, which keeps the cubic term well away from zero.
    """
    pts = [rng.uniform(-50, 50, 2)]
    h = rng.uniform(-math.pi, math.pi)
    for _ in range(3):
        length = rng.uniform(5.0, 15.0)
        pts.append(pts[-1] + length * np.array([math.cos(h), math.sin(h)]))
        h += rng.uniform(*turn) * rng.choice([-1.0, 1.0])
    return np.array(pts)


def arc_points(radius, start, sweep, spacing=1.0, center=(0.0, 0.0)):
    n = max(int(math.ceil(abs(sweep) * radius / spacing)), 2)
    a = start + np.linspace(0.0, sweep, n + 1)
    return np.column_stack([center[0] + radius * np.cos(a), center[1] + radius * np.sin(a)])


@pytest.fixture(scope="session")
def scenarios10():
    from polytraj.synthetic import GeneratorConfig, generate_synthetic

    return generate_synthetic(GeneratorConfig(seed=1), 10)


@pytest.fixture(scope="session")
def wolike_scenarios():
    from polytraj.synthetic import CONFIG_STRAIGHT, generate_synthetic

    return generate_synthetic(CONFIG_STRAIGHT, 4)


@pytest.fixture(scope="session")
def scenario_dir(tmp_path_factory, scenarios10):
    from polytraj.scenario import save

    d = tmp_path_factory.mktemp("scenarios")
    for s in scenarios10:
        save(s, d / f"{s.scenario_id}.scn.json")
    return d


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory, scenario_dir):
    """EP-F, D=64, K=6 trained through the CLI on the 10 fixture scenarios."""
    import time

    from polytraj.cli import main

    out = tmp_path_factory.mktemp("overfit")
    argv = [
        "train", "--train", str(scenario_dir), "--variant", "ep-f", "--dim", "64", "--modes", "6",
        "--lr", "1e-3", "--warmup", "100", "--batch-size", "10", "--epochs", "2000",
        "--max-iters", "2000", "--out", str(out),
    ]
    t0 = time.perf_counter()
    rc = main(argv)
    return {"rc": rc, "out": out, "seconds": time.perf_counter() - t0}


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line and fail the test when the criterion is not met."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"ACCEPTANCE {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash.setdefault(ACCEPTANCE_KEY, []).append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
