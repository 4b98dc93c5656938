"""Post-detection analysis: responsible variable, direction, neighbor correction.

Differencing transforms smear a fault across two consecutive rows, so a flag
can land on the innocent neighbor; the correction step moves it to whichever
provenance timestamp deviates most from its own local surroundings.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .core import MultiSeries, SensorSeries
from .transforms import DIFFERENCING_KINDS, TransformedMatrix

MAD_EPS = 1e-9

SPIKE = "spike"
DROP = "drop"
SHIFT = "shift"
INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class Detection:
    """One reported outlier with its attribution."""

    timestamp: int
    variable: str
    direction: str
    score: float
    trigger: str  # "evt" | "rule"
    corrected_from: int | None = None
    note: str = ""


def typical_center(typical_points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension median and robust scale of the typical points.

    Scale is the MAD; one-sided transforms clip more than half a column to
    zero and collapse the MAD, so a zero MAD falls back to the mean absolute
    deviation before the epsilon floor.
    """
    med = np.median(typical_points, axis=0)
    abs_dev = np.abs(typical_points - med)
    mad = np.median(abs_dev, axis=0)
    return med, np.where(mad > 0, mad, abs_dev.mean(axis=0))


def _rank_deviation(point, med, scale, variables) -> tuple[str, str]:
    dev = np.abs(np.asarray(point) - med) / (scale + MAD_EPS)
    if not dev.any():
        return INDETERMINATE, "no deviation from typical median"
    j = int(np.argmax(dev))
    others = np.delete(dev, j)
    note = ""
    if others.size and others.max() >= dev[j] * (1.0 - 1e-9):
        note = "near-tie across variables; broken by variable order"
    return variables[j], note


def influential_variable(
    point: np.ndarray,
    typical_points: np.ndarray,
    variables: tuple[str, ...],
) -> tuple[str, str]:
    """Variable with the largest robustly scaled deviation from the typical median.

    Returns (variable, note); ties break by variable order and are noted,
    an all-zero deviation reports "indeterminate".
    """
    med, scale = typical_center(typical_points)
    return _rank_deviation(point, med, scale, variables)


def classify_direction(series: SensorSeries, index: int) -> tuple[str, str]:
    """Spike or drop, judged against the mean of the point and its two neighbors."""
    v = series.values
    if index <= 0 or index >= len(v) - 1:
        return SHIFT, "boundary point: no two-sided neighborhood"
    window = v[index - 1 : index + 2]
    if not np.isfinite(window).all():
        return SHIFT, "missing neighbor value"
    m = window.mean()
    if v[index] > m:
        return SPIKE, ""
    if v[index] < m:
        return DROP, ""
    return SHIFT, "point equals its local mean"


def _local_deviation(values: np.ndarray, index: int) -> float:
    """|y - mean of the two temporal neighbors|; -inf when not computable."""
    if index <= 0 or index >= len(values) - 1:
        return -math.inf
    trio = values[index - 1 : index + 2]
    if not np.isfinite(trio).all():
        return -math.inf
    return abs(trio[1] - 0.5 * (trio[0] + trio[2]))


def correct_neighbor(
    flagged_index: int,
    series: SensorSeries,
    provenance: tuple[int, ...],
) -> tuple[int, str]:
    """Move a detection to the provenance index that deviates most locally.

    Only meaningful for differencing-based transforms whose provenance spans
    two timestamps; ties (a clean level shift) keep the original index.
    """
    candidates = [c for c in provenance if 0 <= c < len(series)]
    if len(candidates) < 2:
        return flagged_index, ""
    devs = [_local_deviation(series.values, c) for c in candidates]
    best = max(devs)
    if best == -math.inf:
        return flagged_index, "no candidate has a two-sided neighborhood"
    winners = [c for c, d in zip(candidates, devs) if d == best]
    if len(winners) > 1:
        return flagged_index, "equal candidate deviations; kept original index"
    return winners[0], ""


def attribute_detections(
    tm: TransformedMatrix,
    ms: MultiSeries,
    evt_flags: np.ndarray,
    scores: np.ndarray,
) -> list[Detection]:
    """Turn per-row threshold flags into attributed detections.

    evt_flags/scores align with the matrix's cloud rows; the typical median
    is taken over the rows the threshold left unflagged.
    """
    flagged_rows = np.nonzero(evt_flags)[0]
    if flagged_rows.size == 0:
        return []
    points = tm.points
    typical = points[~evt_flags]
    if len(typical) == 0:
        typical = points
    med, scale = typical_center(typical)
    correct = tm.kind in DIFFERENCING_KINDS

    detections = []
    series_cache = {var: ms.get(var) for var in tm.variables}
    for row in flagged_rows:
        var, var_note = _rank_deviation(points[row], med, scale, tm.variables)
        orig_idx = int(tm.row_index[row])
        idx = orig_idx
        corr_note = ""
        if var != INDETERMINATE and correct:
            idx, corr_note = correct_neighbor(orig_idx, series_cache[var], tm.provenance(row))
        if var != INDETERMINATE:
            direction, dir_note = classify_direction(series_cache[var], idx)
        else:
            direction, dir_note = INDETERMINATE, ""
        note = "; ".join(x for x in (var_note, corr_note, dir_note) if x)
        detections.append(
            Detection(
                timestamp=int(ms.timestamps[idx]),
                variable=var,
                direction=direction,
                score=float(scores[row]),
                trigger="evt",
                corrected_from=int(ms.timestamps[orig_idx]) if idx != orig_idx else None,
                note=note,
            )
        )
    return detections


def write_detections_csv(detections, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "variable", "direction", "score", "trigger", "corrected_from"])
        for det in detections:
            writer.writerow(
                [
                    det.timestamp,
                    det.variable,
                    det.direction,
                    "" if math.isnan(det.score) else repr(det.score),
                    det.trigger,
                    "" if det.corrected_from is None else det.corrected_from,
                ]
            )
