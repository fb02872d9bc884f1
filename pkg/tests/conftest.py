import functools

import pytest

from markseq import kernels
from markseq.database import EngineConfig
from markseq.evaluation import build_database
from markseq.simulator import NoiseSpec, WorldSpec, generate_world, simulate_drive

ACCEPTANCE_LINES = []


@pytest.fixture(params=kernels.available())
def backend(request):
    return request.param


@functools.lru_cache(maxsize=None)
def loop_world(seed=0, lanes=1, laps=2, **spec):
    base = generate_world(WorldSpec(seed=seed, lanes=lanes, **spec))
    segs = tuple((0.0, base.length, base.length) for _ in range(laps - 1))
    return generate_world(WorldSpec(seed=seed, lanes=lanes, loop_segments=segs, **spec))


@functools.lru_cache(maxsize=None)
def loop_snapshot(seed=0, lanes=1, laps=2, k=4, epsilon=1.0, sigma=0.0, miss=0.0, flip=0.0, direct=True):
    world = loop_world(seed, lanes, laps)
    log = simulate_drive(world, NoiseSpec(sigma, miss, flip, seed=seed), direct=direct)
    cfg = EngineConfig(k=k, epsilon=epsilon)
    return build_database([log], cfg).snapshot(), cfg


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
