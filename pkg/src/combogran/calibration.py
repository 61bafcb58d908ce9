"""Normalized (0-1000) to pixel coordinate mapping and its correction.

The executor emits points on a 0-1000 grid per axis.  The naive map is
``px = extent * rel / 1000``; a per-axis quadratic fitted on measured clicks
absorbs systematic bow, and a short residual history nudges the result.
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

REL_MAX = 1000.0


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class ScreenGeometry:
    width_px: int
    height_px: int

    def __post_init__(self):
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError(f"screen must be at least 1x1, got {self.width_px}x{self.height_px}")

    def extent(self, axis: str) -> int:
        if axis == "x":
            return self.width_px
        if axis == "y":
            return self.height_px
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")


def round_half_up(value: float) -> int:
    return int(Decimal(repr(value)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def _check_rel(rel: float) -> None:
    if not 0.0 <= rel <= REL_MAX:
        raise ValueError(f"relative coordinate {rel} outside [0, {REL_MAX:g}]")


def linear_value(extent: int, rel: float) -> float:
    _check_rel(rel)
    return extent * rel / REL_MAX


def linear_map(geom: ScreenGeometry, rel: tuple[float, float]) -> tuple[int, int]:
    out = []
    for axis, r in zip("xy", rel):
        ext = geom.extent(axis)
        out.append(min(max(round_half_up(linear_value(ext, r)), 0), ext - 1))
    return out[0], out[1]


def error_bound(geom: ScreenGeometry, delta_rel: float | tuple[float, float]) -> tuple[float, float]:
    """Pixel error caused by a relative-coordinate error, per axis."""
    dx, dy = (delta_rel, delta_rel) if isinstance(delta_rel, (int, float)) else delta_rel
    return geom.width_px / REL_MAX * dx, geom.height_px / REL_MAX * dy


@dataclass(frozen=True)
class CalibrationModel:
    axis: str
    coeffs: tuple[float, ...]  # a0, a1, a2, ...
    residual_max: float
    residual_rms: float
    extent: int

    def value(self, rel: float) -> float:
        return float(sum(c * rel ** i for i, c in enumerate(self.coeffs)))

    def __call__(self, rel: float) -> int:
        return min(max(round_half_up(self.value(rel)), 0), self.extent - 1)

    def to_dict(self) -> dict:
        return {"axis": self.axis, "coeffs": list(self.coeffs), "residual_max": self.residual_max,
                "residual_rms": self.residual_rms, "extent": self.extent}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationModel":
        return cls(d["axis"], tuple(d["coeffs"]), d["residual_max"], d["residual_rms"], d["extent"])


def fit_polynomial(samples: Sequence[tuple[float, float]], degree: int = 2, axis: str = "x",
                   extent: int | None = None) -> CalibrationModel:
    """Least-squares a0 + a1 r + ... + a_deg r^deg through (relative, measured_px) samples."""
    if len(samples) < degree + 1:
        raise FitError(f"need at least {degree + 1} samples for degree {degree}, got {len(samples)}")
    r = np.array([s[0] for s in samples], dtype=float)
    y = np.array([s[1] for s in samples], dtype=float)
    # Fit on r / 1000 so the columns are comparably scaled, then undo the scaling.
    u = r / REL_MAX
    design = np.vander(u, degree + 1, increasing=True)
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < degree + 1:
        raise FitError(f"rank-deficient design ({len(set(r.tolist()))} distinct relatives "
                       f"for degree {degree})")
    coeffs = tuple(float(c / REL_MAX ** i) for i, c in enumerate(coef))
    resid = design @ coef - y
    if extent is None:
        extent = int(math.ceil(max(y.max(), 1.0))) + 1
    return CalibrationModel(axis, coeffs, float(np.max(np.abs(resid))),
                            float(np.sqrt(np.mean(resid ** 2))), extent)


@dataclass
class ClickHistory:
    """Recent (relative, pixel, residual) observations, oldest first."""

    window: int = 5
    points: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        self.points = deque(self.points, maxlen=self.window)

    def record(self, rel: float, pixel: float, residual: float) -> None:
        self.points.append((rel, pixel, residual))

    @property
    def residuals(self) -> list[float]:
        return [p[2] for p in self.points]

    def __len__(self) -> int:
        return len(self.points)


def correct(model: CalibrationModel, rel: float, history: ClickHistory | None = None,
            reversal_px: float = 2.0, margin: int = 1) -> int:
    """Polynomial value plus the sliding-mean residual, clamped inside the screen edge.

    The residual blend is dropped when the last two residual steps reverse
    direction and both exceed ``reversal_px`` (the trend is not trustworthy).
    """
    _check_rel(rel)
    value = model.value(rel)
    res = history.residuals if history is not None else []
    if res:
        blend = sum(res) / len(res)
        if len(res) >= 3:
            d1, d2 = res[-2] - res[-3], res[-1] - res[-2]
            if d1 * d2 < 0 and abs(d1) > reversal_px and abs(d2) > reversal_px:
                blend = 0.0
        value += blend
    lo = min(margin, model.extent - 1)
    hi = max(model.extent - 1 - margin, lo)
    return min(max(round_half_up(value), lo), hi)


# -- simulation -------------------------------------------------------------------

@dataclass(frozen=True)
class PrecisionStats:
    max_err: float
    rms_err: float
    hit_rate: float
    radius: float

    def to_dict(self) -> dict:
        return dict(vars(self))


def precision_sim(targets: Sequence[tuple[float, float]], mapper: Callable[[float], float],
                  radius: float = 3.0) -> PrecisionStats:
    """Error statistics of ``mapper(rel)`` against true pixel positions."""
    if not targets:
        raise ValueError("no targets")
    errs = np.array([abs(mapper(rel) - true) for rel, true in targets], dtype=float)
    return PrecisionStats(float(errs.max()), float(np.sqrt(np.mean(errs ** 2))),
                          float(np.mean(errs <= radius)), radius)


def bowed_truth(extent: int, curvature: float) -> Callable[[float], float]:
    """Linear map plus a symmetric bow that vanishes at both screen edges."""
    def truth(rel: float) -> float:
        return extent * rel / REL_MAX + curvature * rel * (REL_MAX - rel)
    return truth


def curved_benchmark(extent: int = 2360, curvature: float = 2e-5, n_fit: int = 40,
                     n_test: int = 200, noise_px: float = 0.3, seed: int = 0) -> dict:
    """Naive linear mapping vs fitted-and-corrected mapping on a bowed ground truth.

    Calibration clicks are measured with Gaussian noise; the corrected mapper
    also keeps a residual history fed by the same noisy measurements.
    """
    rng = np.random.default_rng(seed)
    truth = bowed_truth(extent, curvature)
    fit_rel = np.linspace(0, REL_MAX, n_fit)
    samples = [(float(r), truth(float(r)) + float(rng.normal(0, noise_px))) for r in fit_rel]
    model = fit_polynomial(samples, 2, "x", extent)
    test_rel = np.sort(rng.uniform(0, REL_MAX, n_test))
    targets = [(float(r), truth(float(r))) for r in test_rel]

    history = ClickHistory()

    def calibrated(rel: float) -> int:
        px = correct(model, rel, history)
        measured = truth(rel) + float(rng.normal(0, noise_px))
        history.record(rel, px, measured - model.value(rel))
        return px

    def linear(rel: float) -> int:
        return min(max(round_half_up(linear_value(extent, rel)), 0), extent - 1)

    return {
        "linear": precision_sim(targets, linear),
        "calibrated": precision_sim(targets, calibrated),
        "model": model,
    }


# -- files --------------------------------------------------------------------------

def read_samples(path: str | Path) -> dict[str, list[tuple[float, float]]]:
    """CSV with columns axis, relative, measured_px."""
    out: dict[str, list[tuple[float, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.DictReader(fh), 2):
            try:
                axis = rec["axis"].strip()
                if axis not in ("x", "y"):
                    raise ValueError(f"axis {axis!r}")
                out.setdefault(axis, []).append((float(rec["relative"]), float(rec["measured_px"])))
            except (KeyError, ValueError, AttributeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad calibration row ({exc})") from exc
    return out


def save_models(models: Sequence[CalibrationModel], path: str | Path) -> None:
    doc = {m.axis: m.to_dict() for m in models}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_models(path: str | Path) -> dict[str, CalibrationModel]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return {axis: CalibrationModel.from_dict(d) for axis, d in doc.items()}
