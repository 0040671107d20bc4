"""Outlier metrics, seed-fraction sweeps and report writers."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from matplotlib import colormaps

from .core import DisparityMap, FusionParams
from .datasets import SplitSpec, StereoSample, sample_split
from .pipeline import Method, run_method

THRESHOLDS = (1.0, 2.0, 3.0)
RELATIVE_FRACTION = 0.05

CSV_FIELDS = ("dataset", "sample", "method", "fraction", "seed", "gt_eval_count",
              "err1", "err2", "err3", "ms_census", "ms_agg", "ms_fusion", "ms_total")


class EvaluationError(ValueError):
    pass


@dataclass
class ErrorReport:
    """Outlier percentages at each pixel threshold plus the stage timings (ms)."""

    method: str
    thresholds: tuple[float, ...]
    percentages: tuple[float, ...]
    count: int
    timings: dict[str, float] = field(default_factory=dict)

    def at(self, threshold: float) -> float:
        return self.percentages[self.thresholds.index(float(threshold))]


def error_rates(est: DisparityMap, gt: DisparityMap, thresholds=THRESHOLDS, *, relative: bool = False,
                method: str = "") -> ErrorReport:
    """Percentage of evaluable pixels whose error exceeds each threshold.

    Evaluable pixels are the valid pixels of ``gt``. Invalid estimates are
    outliers at every threshold. With ``relative=True`` a pixel is an outlier
    only if its error also exceeds 5% of the true disparity.
    """
    if est.shape != gt.shape:
        raise EvaluationError(f"estimate {est.shape} and ground truth {gt.shape} differ in size")
    mask = gt.valid
    n = int(mask.sum())
    if n == 0:
        raise EvaluationError("ground truth has no evaluable pixels")
    truth = gt.data[mask].astype(np.float64)
    err = np.abs(est.data[mask].astype(np.float64) - truth)  # inf where est is invalid
    percentages = []
    for t in thresholds:
        out = err > t
        if relative:
            out &= err > RELATIVE_FRACTION * truth
        percentages.append(100.0 * float(np.count_nonzero(out)) / n)
    return ErrorReport(method, tuple(float(t) for t in thresholds), tuple(percentages), n)


@dataclass
class SweepRow:
    dataset: str
    sample: str
    method: str
    fraction: float
    seed: int
    report: ErrorReport

    def sort_key(self):
        return (self.dataset, self.sample, self.method, self.fraction)


def evaluate_method(sample: StereoSample, method: Method | str, params: FusionParams, split: SplitSpec,
                    *, relative: bool = False):
    """Split, run one method and score it on the held-out pixels.

    Returns ``(report, result)``.
    """
    seeds, held_out = sample_split(sample.ground_truth, split, d_max=params.d_max)
    result = run_method(method, sample.left, sample.right, seeds, params)
    report = error_rates(result.disparity, held_out, relative=relative, method=str(Method(method)))
    report.timings = result.timings.as_ms()
    return report, result


def sample_sweep(sample: StereoSample, fractions, methods, params: FusionParams, rng_seed: int = 0, *,
                 noise: float = 0.0, noise_on: str = "disparity", relative: bool = False,
                 dataset: str = "") -> list[SweepRow]:
    """One row per (method, fraction) for a single sample."""
    fractions = [float(f) for f in fractions]
    for f in fractions:
        if not 0 < f < 1:
            raise EvaluationError(f"seed fraction must lie in (0, 1), got {f}")
    rows = []
    for method in methods:
        for frac in fractions:
            split = SplitSpec(frac, noise, rng_seed, noise_on)
            report, _ = evaluate_method(sample, method, params, split, relative=relative)
            rows.append(SweepRow(dataset, sample.name, str(Method(method)), frac, rng_seed, report))
    rows.sort(key=SweepRow.sort_key)
    return rows


def mean_rows(rows: list[SweepRow]) -> list[SweepRow]:
    """Per (dataset, method, fraction) means, labelled with sample ``mean``."""
    groups: dict[tuple, list[SweepRow]] = {}
    for row in rows:
        groups.setdefault((row.dataset, row.method, row.fraction), []).append(row)
    out = []
    for (dataset, method, frac), members in sorted(groups.items()):
        reps = [m.report for m in members]
        pct = tuple(float(np.mean([r.percentages[i] for r in reps])) for i in range(len(reps[0].thresholds)))
        timings = {k: float(np.mean([r.timings.get(k, 0.0) for r in reps])) for k in reps[0].timings}
        report = ErrorReport(method, reps[0].thresholds, pct, sum(r.count for r in reps), timings)
        out.append(SweepRow(dataset, "mean", method, frac, members[0].seed, report))
    return out


# -- writers --------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.4f}"


def rows_to_csv(rows: list[SweepRow], *, timings: bool = True) -> str:
    """CSV text in the fixed column order; timing cells are left empty when ``timings`` is False."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for row in rows:
        rep = row.report
        errs = [_fmt(rep.at(t)) for t in THRESHOLDS]
        if timings:
            t = rep.timings
            ms = [_fmt(t.get(k, 0.0)) for k in ("census", "aggregation", "fusion", "total")]
        else:
            ms = ["", "", "", ""]
        writer.writerow([row.dataset, row.sample, row.method, repr(row.fraction), row.seed, rep.count,
                         *errs, *ms])
    return buf.getvalue()


def write_csv(rows: list[SweepRow], path: str | os.PathLike, *, timings: bool = True) -> None:
    Path(path).write_text(rows_to_csv(rows, timings=timings), encoding="utf-8")


def rows_to_json(rows: list[SweepRow], *, timings: bool = True) -> str:
    items = []
    for row in rows:
        rep = row.report
        item = {
            "dataset": row.dataset, "sample": row.sample, "method": row.method, "fraction": row.fraction,
            "seed": row.seed, "gt_eval_count": rep.count,
            "errors": {f"{t:g}px": round(p, 4) for t, p in zip(rep.thresholds, rep.percentages)},
        }
        if timings:
            item["ms"] = {k: round(v, 4) for k, v in rep.timings.items()}
        items.append(item)
    return json.dumps(items, indent=2, sort_keys=True) + "\n"


def write_json(rows: list[SweepRow], path: str | os.PathLike, *, timings: bool = True) -> None:
    Path(path).write_text(rows_to_json(rows, timings=timings), encoding="utf-8")


# -- colour maps -------------------------------------------------------------------

RAMP = "viridis"
_LUT = (colormaps[RAMP](np.linspace(0.0, 1.0, 256))[:, :3] * 255.0 + 0.5).astype(np.uint8)


def colorize(disparity: DisparityMap, d_min: float, d_max: float) -> np.ndarray:
    """RGB uint8 rendering on the viridis ramp; values are clamped to ``[d_min, d_max]``, invalid is black."""
    if not d_min < d_max:
        raise ValueError(f"d_min must be below d_max (got {d_min}, {d_max})")
    data = disparity.data.astype(np.float64)
    valid = np.isfinite(data)
    t = np.clip((np.where(valid, data, d_min) - d_min) / (d_max - d_min), 0.0, 1.0)
    rgb = _LUT[np.floor(t * 255.0 + 0.5).astype(np.intp)]
    rgb[~valid] = 0
    return rgb


def write_color_png(rgb: np.ndarray, path: str | os.PathLike) -> None:
    if not cv2.imwrite(str(path), np.ascontiguousarray(rgb[..., ::-1])):
        raise OSError(f"could not write {path}")
