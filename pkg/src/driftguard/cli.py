"""Command line pipeline: synth, detect, evaluate, plot-data.

Configuration is a single JSON document; every field left unspecified is
filled from the documented defaults and the fully resolved result is echoed
into ``manifest.json`` so a run can be replayed exactly. Exit codes: 0 ok,
2 configuration error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    BaseSignal,
    FaultSpec,
    MultiSeries,
    SynthConfig,
    emit_csv,
    ground_truth,
    ingest_csv,
    synth_series,
)
from .errors import ConfigError, DataError, DriftguardError
from .evaluation import Combo, grid_evaluate, thread_cap, write_report_csv
from .pipeline import PipelineConfig, run_detection
from .rules import RuleConfig
from .scoring import Method, ScoringConfig
from .threshold import ThresholdConfig
from .transforms import TransformKind

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

DEFAULT_CONFIG = {
    "site": "",
    "variables": [],  # empty: every variable found in the input
    "transform": {
        "kind": "one_sided_derivative",
        "sides": {},  # variable -> keep_negative | keep_positive
    },
    "scoring": {
        "method": "KNN-SUM",
        "k": 10,
        "leader_radius": None,
        "rkof_bandwidth_scale": 1.0,
        "rkof_bandwidth_exponent": 1.0,
        "rkof_weight_sigma": 1.0,
        "inflo_empty_is_typical": True,
    },
    "threshold": {"alpha": 0.05, "initial_fraction": 0.5, "tail_count": None},
    "rules": {
        "enabled": True,
        "max_gap_minutes": 180.0,
        "ranges": {},  # variable -> [min|null, max|null]; null = unbounded
        "forbid_negative": True,
    },
    "grid": {
        "variable_sets": [],  # list of variable lists; empty: all input variables
        "transforms": ["one_sided_derivative"],
        "methods": ["KNN-SUM"],
    },
    "synth": {
        "n_points": 500,
        # stays under the default 180-minute gap rule; widen deliberately
        # (or inject long_gap_at) when exercising missingness
        "gap_minutes": [10, 170],
        "base": {
            "turbidity": {"level": 20.0, "amplitude": 5.0, "period": 400.0, "noise_sd": 0.1},
            "conductivity": {"level": 300.0, "amplitude": 40.0, "period": 600.0, "noise_sd": 1.5},
            "level": {"level": 1.5, "amplitude": 0.3, "period": 800.0, "noise_sd": 0.01},
        },
        "faults": [],  # {"variable", "index", "kind", "magnitude"}
        "long_gap_at": None,
        "long_gap_minutes": 240,
        "site": "synthetic",
    },
    "seed": 0,
    "reps": 3,
}

# Config nodes whose keys are data-dependent (variable names), not fixed.
# A user-supplied node replaces the default wholesale.
_FREE_NODES = {
    ("transform", "sides"),
    ("rules", "ranges"),
    ("synth", "base"),
}


def _merge(defaults, user, path=()):
    if path in _FREE_NODES:
        if not isinstance(user, dict):
            raise ConfigError(f"{'.'.join(path)}: expected an object")
        return copy.deepcopy(user)
    if isinstance(defaults, dict):
        if not isinstance(user, dict):
            raise ConfigError(f"{'.'.join(path) or 'config'}: expected an object")
        unknown = set(user) - set(defaults)
        if unknown:
            raise ConfigError(
                f"unknown config key(s) {sorted(unknown)} under {'.'.join(path) or 'top level'}"
            )
        return {
            key: _merge(defaults[key], user[key], path + (key,)) if key in user
            else copy.deepcopy(defaults[key])
            for key in defaults
        }
    return copy.deepcopy(user)


def load_config(path: str | None) -> dict:
    """Load and resolve a config file against the documented defaults."""
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with open(path) as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if user.get("package") == "driftguard" and isinstance(user.get("config"), dict):
        user = user["config"]  # a run manifest replays as its own config
    return _merge(DEFAULT_CONFIG, user)


def _bound(x, default: float) -> float:
    return default if x is None else float(x)


def _rule_config(cfg: dict, variables) -> RuleConfig | None:
    rules = cfg["rules"]
    if not rules["enabled"]:
        return None
    ranges = {}
    for var in variables:
        pair = rules["ranges"].get(var, [None, None])
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError(f"rules.ranges.{var}: expected [min, max]")
        ranges[var] = (_bound(pair[0], -math.inf), _bound(pair[1], math.inf))
    return RuleConfig(
        ranges=ranges,
        max_gap_minutes=float(rules["max_gap_minutes"]),
        forbid_negative=rules["forbid_negative"],
    )


def _scoring_config(cfg: dict, method: Method | None = None) -> ScoringConfig:
    s = cfg["scoring"]
    return ScoringConfig(
        method=method if method is not None else Method.parse(s["method"]),
        k=int(s["k"]),
        leader_radius=None if s["leader_radius"] is None else float(s["leader_radius"]),
        rkof_bandwidth_scale=float(s["rkof_bandwidth_scale"]),
        rkof_bandwidth_exponent=float(s["rkof_bandwidth_exponent"]),
        rkof_weight_sigma=float(s["rkof_weight_sigma"]),
        inflo_empty_is_typical=bool(s["inflo_empty_is_typical"]),
    )


def _threshold_config(cfg: dict) -> ThresholdConfig:
    t = cfg["threshold"]
    return ThresholdConfig(
        alpha=float(t["alpha"]),
        initial_fraction=float(t["initial_fraction"]),
        tail_count=None if t["tail_count"] is None else int(t["tail_count"]),
    )


def _transform_kind(text: str) -> TransformKind:
    try:
        return TransformKind(text)
    except ValueError:
        raise ConfigError(f"unknown transform kind {text!r}") from None


def _variables(cfg: dict, ms: MultiSeries) -> tuple[str, ...]:
    wanted = tuple(cfg["variables"]) or ms.variables
    for v in wanted:
        if v not in ms.variables:
            raise ConfigError(f"variable {v!r} not present in input (has {list(ms.variables)})")
    return wanted


def _pipeline_config(cfg: dict, ms: MultiSeries) -> PipelineConfig:
    variables = _variables(cfg, ms)
    return PipelineConfig(
        variables=variables,
        transform=_transform_kind(cfg["transform"]["kind"]),
        scoring=_scoring_config(cfg),
        threshold=_threshold_config(cfg),
        rules=_rule_config(cfg, ms.variables),
        sides=cfg["transform"]["sides"] or None,
    )


def _synth_config(cfg: dict) -> SynthConfig:
    s = cfg["synth"]
    base = {}
    for var, spec in s["base"].items():
        base[var] = BaseSignal(
            level=float(spec.get("level", 0.0)),
            amplitude=float(spec.get("amplitude", 0.0)),
            period=float(spec.get("period", 500.0)),
            noise_sd=float(spec.get("noise_sd", 0.0)),
        )
    faults = tuple(
        FaultSpec(
            variable=f["variable"],
            index=int(f["index"]),
            kind=f["kind"],
            magnitude=float(f["magnitude"]),
        )
        for f in s["faults"]
    )
    return SynthConfig(
        n_points=int(s["n_points"]),
        base=base,
        gap_minutes=(int(s["gap_minutes"][0]), int(s["gap_minutes"][1])),
        faults=faults,
        long_gap_at=None if s["long_gap_at"] is None else int(s["long_gap_at"]),
        long_gap_minutes=int(s["long_gap_minutes"]),
        site=s["site"],
    )


def _write_manifest(cfg: dict, out_dir: Path, extra: dict | None = None) -> None:
    manifest = {"package": "driftguard", "version": __version__, "config": cfg}
    if extra:
        manifest.update(extra)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_combo(spec: str) -> tuple[tuple[str, ...], TransformKind, Method]:
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(
            f"combo {spec!r} must look like vars,comma,separated:transform:method"
        )
    variables = tuple(v.strip() for v in parts[0].split(",") if v.strip())
    if not variables:
        raise ConfigError(f"combo {spec!r} has no variables")
    return variables, _transform_kind(parts[1].strip()), Method.parse(parts[2])


def _combos(cfg: dict, ms: MultiSeries, combo_flags) -> list[Combo]:
    combos: list[Combo] = []
    if combo_flags:
        for spec in combo_flags:
            variables, kind, method = _parse_combo(spec)
            combos.append(Combo(variables, kind, method))
    else:
        grid = cfg["grid"]
        var_sets = [tuple(vs) for vs in grid["variable_sets"]] or [ms.variables]
        kinds = [_transform_kind(t) for t in grid["transforms"]]
        methods = [Method.parse(m) for m in grid["methods"]]
        for vs in var_sets:
            for kind in kinds:
                for method in methods:
                    combos.append(Combo(vs, kind, method))
    for combo in combos:
        for v in combo.variables:
            if v not in ms.variables:
                raise ConfigError(f"combo variable {v!r} not in input")
    return combos


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg["seed"])
    ms = synth_series(_synth_config(cfg), seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    emit_csv(ms, out)
    log.info("wrote %d points to %s", len(ms), out)
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = load_config(args.config)
    ms = ingest_csv(args.input, site=cfg["site"])
    pcfg = _pipeline_config(cfg, ms)
    result = run_detection(ms, pcfg)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    from .attribution import write_detections_csv

    write_detections_csv(result.detections, out_dir / "detections.csv")
    result.trace.to_csv(out_dir / "trace.csv")
    _write_manifest(cfg, out_dir)
    log.info(
        "%d detections (%d rule, %d score-based)",
        len(result.detections),
        sum(1 for d in result.detections if d.trigger == "rule"),
        sum(1 for d in result.detections if d.trigger == "evt"),
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    ms = ingest_csv(args.input, site=cfg["site"] or "")
    if not ms.has_labels():
        raise DataError("evaluate needs label columns for every variable")
    combos = _combos(cfg, ms, args.combo)
    reps = args.reps if args.reps is not None else int(cfg["reps"])
    reports = grid_evaluate(
        ms,
        combos,
        scoring_base=_scoring_config(cfg),  # method overridden per combo
        threshold_cfg=_threshold_config(cfg),
        rule_cfg=_rule_config(cfg, ms.variables),
        repetitions=reps,
        max_workers=thread_cap(),
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(reports, out_dir / "report.csv")
    _write_manifest(cfg, out_dir, extra={"combos": [
        [list(r.combo.variables), r.combo.transform.value, r.combo.method.value]
        for r in reports
    ]})
    failures = [r for r in reports if r.error]
    for r in failures:
        log.warning("combo %s failed: %s", r.combo, r.error)
    log.info("wrote %d report rows to %s", len(reports), out_dir / "report.csv")
    return EXIT_OK


def _figure_rows(cfg: dict, ms: MultiSeries, figure: str):
    if figure == "timeseries":
        header = ["timestamp"]
        for s in ms.series:
            header.append(s.name)
        for s in ms.series:
            if s.labels is not None:
                header.append(s.name + "_label")
        rows = []
        for i in range(len(ms)):
            row = [int(ms.timestamps[i])]
            row += [float(s.values[i]) for s in ms.series]
            row += [int(s.labels[i]) for s in ms.series if s.labels is not None]
            rows.append(row)
        return header, rows

    pcfg = _pipeline_config(cfg, ms)
    result = run_detection(ms, pcfg)
    tm = result.matrix
    truth = ground_truth(ms).flags if ms.has_labels() else None
    corrected_from = {
        d.corrected_from for d in result.detections if d.corrected_from is not None
    }

    def classify(row: int) -> str:
        # final prediction (after neighbor correction); the pre-correction
        # rows are marked through the neighbor column instead
        predicted = bool(result.predicted[tm.row_index[row]])
        if truth is None:
            return "outlier" if predicted else "typical"
        actual = bool(truth[tm.row_index[row]])
        return {
            (True, True): "TP",
            (True, False): "FP",
            (False, True): "FN",
            (False, False): "TN",
        }[(predicted, actual)]

    if figure == "bivariate":
        if len(tm.variables) < 2:
            raise ConfigError("bivariate figure needs at least two variables")
        vx, vy = tm.variables[0], tm.variables[1]
        header = [f"x_{vx}", f"y_{vy}", "class", "neighbor"]
        rows = []
        for row in range(len(tm.row_index)):
            ts = int(tm.point_timestamps[row])
            rows.append(
                [
                    float(tm.points[row, 0]),
                    float(tm.points[row, 1]),
                    classify(row),
                    1 if ts in corrected_from else 0,
                ]
            )
        return header, rows

    if figure == "scores":
        header = ["timestamp", "score", "class"]
        rows = [
            [int(tm.point_timestamps[row]), float(result.scores.scores[row]), classify(row)]
            for row in range(len(tm.row_index))
        ]
        return header, rows

    raise ConfigError(f"unknown figure kind {figure!r}")


_SVG_COLORS = {
    "TP": "#d62728", "FN": "#ff9896", "FP": "#1f77b4", "TN": "#7f7f7f",
    "outlier": "#d62728", "typical": "#7f7f7f",
}


def _write_svg_scatter(header, rows, path, size: int = 640) -> None:
    xs = np.asarray([r[0] for r in rows], dtype=float)
    ys = np.asarray([r[1] for r in rows], dtype=float)
    span_x = xs.max() - xs.min() or 1.0
    span_y = ys.max() - ys.min() or 1.0
    pad = 20
    scale = size - 2 * pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for r in rows:
        px = pad + (r[0] - xs.min()) / span_x * scale
        py = size - pad - (r[1] - ys.min()) / span_y * scale
        color = _SVG_COLORS.get(r[2], "#2ca02c")
        parts.append(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="2.5" fill="{color}"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def cmd_plotdata(args) -> int:
    import csv as _csv

    cfg = load_config(args.config)
    ms = ingest_csv(args.input, site=cfg["site"] or "")
    header, rows = _figure_rows(cfg, ms, args.figure)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = out_dir / f"{args.figure}.csv"
    with open(out, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    if args.svg and args.figure == "bivariate":
        _write_svg_scatter(header, rows, out_dir / "bivariate.svg")
    log.info("wrote %d rows to %s", len(rows), out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftguard",
        description="Technical-outlier detection for irregular multivariate sensor series",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic series CSV")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect", help="run one combo and write a detection report")
    p.add_argument("--input", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="run a combo grid against expert labels")
    p.add_argument("--input", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument(
        "--combo",
        action="append",
        default=None,
        help="vars,comma,separated:transform:method (repeatable)",
    )
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot-data", help="emit figure-ready CSV (and optional SVG)")
    p.add_argument("--input", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--figure", required=True, choices=["bivariate", "scores", "timeseries"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except DriftguardError as exc:  # pragma: no cover - defensive
        log.error("error: %s", exc)
        return EXIT_INTERNAL
    except Exception:  # pragma: no cover - defensive
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
