"""Adaptive outlier-score cutoff from an exponential tail fit.

The typical set starts as the smallest half of the scores. Each round
estimates the exponential tail scale from the typical set's largest
order-statistic spacings (Weissman-style: the spacing j levels below the
running maximum is scaled by j + 1 and the window averaged, since deeper
spacings shrink in expectation), places the cutoff at max(typical) plus the
1 - alpha exponential quantile ln(1/alpha) * scale, and tests the smallest
remaining score. A score under the cutoff is absorbed and the fit refreshed;
the first score above it flags itself and everything larger.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .rules import RuleFlags

MIN_SCORES = 10


@dataclass(frozen=True)
class ThresholdConfig:
    alpha: float = 0.05
    initial_fraction: float = 0.5
    tail_count: int | None = None  # None -> min(50, max(2, ceil(0.1 * |typical|)))

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not 0 < self.initial_fraction < 1:
            raise ConfigError("initial_fraction must lie in (0, 1)")
        if self.tail_count is not None and self.tail_count < 2:
            raise ConfigError("tail_count must be at least 2")


@dataclass(frozen=True)
class ThresholdTrace:
    """Audit record of every cutoff decision, replayable from (scores, cfg)."""

    alpha: float
    initial_fraction: float
    effective_tail_count: int
    n: int
    tested_scores: np.ndarray
    cutoffs: np.ndarray
    spacing_scales: np.ndarray
    decisions: tuple[str, ...]
    flagged_indices: np.ndarray
    degenerate: bool = False
    note: str = ""
    anchor: str = "max_typical"  # cutoff = max(typical) + ln(1/alpha) * scale

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "tested_score", "cutoff", "spacing_scale", "decision"])
            for i, (s, c, g, dec) in enumerate(
                zip(self.tested_scores, self.cutoffs, self.spacing_scales, self.decisions)
            ):
                writer.writerow([i, repr(float(s)), repr(float(c)), repr(float(g)), dec])


def _effective_tail_count(cfg: ThresholdConfig, typical_size: int) -> int:
    if cfg.tail_count is not None:
        return cfg.tail_count
    return min(50, max(2, math.ceil(0.1 * typical_size)))


def evt_flag(scores, cfg: ThresholdConfig = ThresholdConfig()) -> tuple[np.ndarray, ThresholdTrace]:
    """Flag the scores an expanding exponential-tail cutoff cannot absorb.

    Accepts a ScoreVector or a plain array. Returns (flags, trace) where
    flags is a boolean vector over the input order.
    """
    s = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    n = len(s)
    if n < MIN_SCORES:
        raise DataError(f"need at least {MIN_SCORES} scores, got {n}")
    if not np.isfinite(s).all():
        raise DataError("scores must be finite")

    order = np.argsort(s, kind="stable")
    ss = s[order]
    # At least three seed scores so the tail fit has spacings to work with.
    m0 = min(max(math.ceil(cfg.initial_fraction * n), 3), n)
    tail_count = _effective_tail_count(cfg, m0)
    log_alpha = math.log(1.0 / cfg.alpha)

    # The typical set at candidate i is always ss[:i], so every window fit is
    # a pure function of the sorted scores and can be computed up front.
    candidates = np.arange(m0, n)
    ghat = np.empty(len(candidates))
    gaps = np.diff(ss)
    for pos, i in enumerate(candidates):
        tc = min(tail_count, i - 1)
        if tc == tail_count:
            break
        window = gaps[i - 1 - tc : i - 1]  # ascending: D_tc .. D_1
        weights = np.arange(tc + 1, 1, -1, dtype=np.float64)
        ghat[pos] = (weights * window).sum() / tc
    else:
        pos = len(candidates)
    if pos < len(candidates):
        tc = tail_count
        kernel = np.arange(tc + 1, 1, -1, dtype=np.float64)  # window position 0 = D_tc
        windows = np.lib.stride_tricks.sliding_window_view(gaps, tc)
        starts = candidates[pos:] - 1 - tc
        ghat[pos:] = windows[starts] @ kernel / tc

    cutoffs = ss[candidates - 1] + log_alpha * ghat
    exceed = ss[candidates] > cutoffs
    hit = int(np.argmax(exceed)) if exceed.any() else None
    stop_at = int(candidates[hit]) if hit is not None else None
    last = hit + 1 if hit is not None else len(candidates)

    flags = np.zeros(n, dtype=bool)
    if stop_at is not None:
        flags[order[stop_at:]] = True
    degenerate = n > 1 and ss[0] == ss[-1]
    trace = ThresholdTrace(
        alpha=cfg.alpha,
        initial_fraction=cfg.initial_fraction,
        effective_tail_count=tail_count,
        n=n,
        tested_scores=ss[candidates[:last]].copy(),
        cutoffs=cutoffs[:last].copy(),
        spacing_scales=ghat[:last].copy(),
        decisions=tuple(
            "stop" if stop_at is not None and i == last - 1 else "absorb"
            for i in range(last)
        ),
        flagged_indices=np.sort(order[stop_at:]) if stop_at is not None else np.empty(0, dtype=np.int64),
        degenerate=degenerate,
        note="all scores identical: no spacings to fit" if degenerate else "",
    )
    return flags, trace


def combine_flags(
    rule_flags: RuleFlags | None,
    outlier_timestamps,
    timestamps: np.ndarray,
) -> np.ndarray:
    """Per-timestamp prediction: any rule fired, or a score detection landed there."""
    n = len(timestamps)
    pred = np.zeros(n, dtype=bool)
    if rule_flags is not None:
        if len(rule_flags.timestamps) != n or not np.array_equal(
            rule_flags.timestamps, timestamps
        ):
            raise DataError("rule flags do not align with the timestamp vector")
        pred |= rule_flags.any_at_timestamp()
    wanted = np.asarray(sorted(set(int(t) for t in outlier_timestamps)), dtype=np.int64)
    if wanted.size:
        pos = np.searchsorted(timestamps, wanted)
        ok = (pos < n) & (timestamps[np.minimum(pos, n - 1)] == wanted)
        if not ok.all():
            raise DataError("detection timestamp not present in the series")
        pred[pos[ok]] = True
    return pred
