import numpy as np
import pytest

from markseq.database import EngineConfig
from markseq.errors import InvalidInputError
from markseq.evaluation import (
    LatencyReport,
    SweepRow,
    bench_query,
    latency_to_csv,
    score_candidates,
    sweep_from_csv,
    sweep_k,
    sweep_to_csv,
    synthetic_database,
)
from markseq.simulator import NoiseSpec, simulate_drive

from conftest import loop_world


def test_score_candidates():
    truth = {(0, 1), (2, 3)}
    assert score_candidates([], truth) == (0, None, None)
    n, good, bad = score_candidates([(0, 1), (1, 2), (2, 3), (0, 5)], truth)
    assert (n, good, bad) == (4, 50.0, 50.0)


@pytest.mark.parametrize("n", [0, 1, 2, 7])
def test_synthetic_database_size(n):
    db = synthetic_database(n, EngineConfig(k=4), seed=1)
    assert len(db.complete) == n


def test_sweep_csv_roundtrip():
    rows = [SweepRow(2, 10, 40.0, 60.0), SweepRow(3, 0, None, None), SweepRow(4, 3, 100.0, 0.0)]
    text = sweep_to_csv(rows)
    assert text.splitlines()[0] == "k,num_candidates,pct_correct,pct_incorrect"
    assert text.splitlines()[2] == "3,0,NA,NA"
    assert sweep_from_csv(text) == rows
    with pytest.raises(InvalidInputError):
        sweep_from_csv("a,b\n1,2\n")


def test_sweep_k_trend_on_one_seed():
    log = simulate_drive(loop_world(0, 2, 2), NoiseSpec(0.3, 0.1, 0.05, seed=0), direct=True)
    rows = sweep_k([log], range(2, 7), EngineConfig(), "loop")
    counts = [r.num_candidates for r in rows]
    assert counts == sorted(counts, reverse=True)
    assert rows[-1].pct_correct == 100.0
    with pytest.raises(InvalidInputError):
        sweep_k([log], [1], EngineConfig(), "loop")


def test_bench_query_reports():
    reps = bench_query([0, 50], EngineConfig(k=4), inquiries=5)
    assert [(r.db_size, r.path) for r in reps] == [(0, "indexed"), (0, "brute"), (50, "indexed"), (50, "brute")]
    brute50 = reps[3]
    assert brute50.comparisons == 50
    for r in reps:
        assert 0 <= r.median <= r.p99 and r.mean > 0 and r.update_mean > 0
    text = latency_to_csv(reps)
    assert text.splitlines()[0] == "N,mean,median,p99,comparisons,path,update_mean"
    with pytest.raises(InvalidInputError):
        bench_query([10], EngineConfig(), inquiries=0)


def test_latency_csv_format():
    line = latency_to_csv([LatencyReport(10, 1e-6, 2e-6, 3e-6, 4)]).splitlines()[1]
    assert line == "10,0.000001000,0.000002000,0.000003000,4,indexed,0.000000000"
