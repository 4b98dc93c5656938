import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # makes `reference` importable

from driftguard import BaseSignal, FaultSpec, MultiSeries, SensorSeries, SynthConfig, synth_series

DATA_DIR = Path(__file__).parent / "data"


def make_multiseries(values_by_var, gaps_minutes=None, labels_by_var=None, start=1_500_000_000):
    """Build a small MultiSeries from plain lists; default gap is 60 minutes."""
    first = next(iter(values_by_var.values()))
    n = len(first)
    if gaps_minutes is None:
        gaps_minutes = [60] * (n - 1)
    ts = start + 60 * np.concatenate(([0], np.cumsum(gaps_minutes))).astype(np.int64)
    series = []
    for name, vals in values_by_var.items():
        labels = labels_by_var.get(name) if labels_by_var else None
        series.append(SensorSeries(name, ts, np.asarray(vals, dtype=float), labels))
    return MultiSeries(site="test", series=tuple(series))


@pytest.fixture
def rng():
    return np.random.default_rng(20408)


@pytest.fixture
def labeled_synth():
    """Small labeled series with two clear injected faults."""
    cfg = SynthConfig(
        n_points=400,
        base={
            "turbidity": BaseSignal(20.0, 5.0, 400.0, 0.1),
            "conductivity": BaseSignal(300.0, 40.0, 600.0, 1.5),
        },
        faults=(
            FaultSpec("turbidity", 150, "spike", 150.0),
            FaultSpec("conductivity", 270, "drop", 220.0),
        ),
    )
    return synth_series(cfg, seed=7)
