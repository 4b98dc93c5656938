"""One-combo orchestration: rules -> transform -> score -> threshold -> attribution."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .attribution import Detection, attribute_detections
from .core import MultiSeries
from .errors import ConfigError
from .neighbors import normalize
from .rules import MISSING_GAP, NEGATIVE, OUT_OF_RANGE, RuleConfig, RuleFlags, apply_rules
from .scoring import ScoreVector, ScoringConfig, score
from .threshold import ThresholdConfig, ThresholdTrace, combine_flags, evt_flag
from .transforms import Side, TransformKind, TransformedMatrix, build_matrix


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one detection run needs; rules=None skips the rule stage."""

    variables: tuple[str, ...]
    transform: TransformKind
    scoring: ScoringConfig = ScoringConfig()
    threshold: ThresholdConfig = ThresholdConfig()
    rules: RuleConfig | None = None
    sides: Mapping[str, Side | str] | None = None

    def __post_init__(self):
        if not self.variables:
            raise ConfigError("pipeline needs at least one variable")
        object.__setattr__(self, "variables", tuple(self.variables))


@dataclass(frozen=True)
class DetectionResult:
    detections: tuple[Detection, ...]
    rule_flags: RuleFlags | None
    matrix: TransformedMatrix
    scores: ScoreVector
    evt_row_flags: np.ndarray
    trace: ThresholdTrace
    predicted: np.ndarray  # per-timestamp boolean prediction


def _rule_detections(flags: RuleFlags) -> list[Detection]:
    hits = []
    for rule, cells in ((OUT_OF_RANGE, flags.out_of_range), (NEGATIVE, flags.negative)):
        for i, j in zip(*np.nonzero(cells)):
            hits.append((int(i), flags.variables[j], rule))
    for i in np.nonzero(flags.missing_gap)[0]:
        hits.append((int(i), "", MISSING_GAP))
    hits.sort(key=lambda h: (h[0], h[1]))
    return [
        Detection(int(flags.timestamps[i]), var, f"rule:{rule}", math.nan, "rule")
        for i, var, rule in hits
    ]


def run_detection(ms: MultiSeries, cfg: PipelineConfig) -> DetectionResult:
    """Run the whole detection chain for one combo on one site's series."""
    rule_flags = None
    cleaned = ms
    if cfg.rules is not None:
        rule_flags, cleaned = apply_rules(ms, cfg.rules)

    tm = build_matrix(cleaned, cfg.transform, cfg.variables, cfg.sides)
    cloud = normalize(tm.points)
    sv = score(cloud, cfg.scoring)
    row_flags, trace = evt_flag(sv, cfg.threshold)

    detections = attribute_detections(tm, ms, row_flags, sv.scores)
    detections.extend(_rule_detections(rule_flags) if rule_flags is not None else [])

    predicted = combine_flags(
        rule_flags,
        [d.timestamp for d in detections if d.trigger == "evt"],
        ms.timestamps,
    )
    return DetectionResult(
        detections=tuple(detections),
        rule_flags=rule_flags,
        matrix=tm,
        scores=sv,
        evt_row_flags=row_flags,
        trace=trace,
        predicted=predicted,
    )
