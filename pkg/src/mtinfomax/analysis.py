"""Tuning-curve extraction and four-way shape classification of MT cells.

A bidirectional curve plots the response of one cell against the midline of
a two-component stimulus with fixed separation. Its shape is compared with
the single-direction curve of the same cell:

* two or more prominent peaks -> ``DoublePeaked``
* one peak at the single-direction preferred direction -> ``SymmetricSinglePeak``
* one peak displaced clockwise (positive offset) -> ``ClockwiseBias``
* one peak displaced counterclockwise -> ``CounterclockwiseBias``

Peak positions are refined by a three-point parabola on the circle, so
offsets are not quantized to the grid spacing.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .model import MotionModel
from .stimulus import circular_difference

SYMMETRIC = "SymmetricSinglePeak"
CLOCKWISE = "ClockwiseBias"
COUNTERCLOCKWISE = "CounterclockwiseBias"
DOUBLE = "DoublePeaked"
UNCLASSIFIABLE = "Unclassifiable"
SHAPE_CLASSES = (SYMMETRIC, CLOCKWISE, COUNTERCLOCKWISE, DOUBLE)


@dataclass(frozen=True, eq=False)
class TuningCurve:
    cell_index: int
    kind: str                   # "unidirectional" | "bidirectional"
    abscissa_deg: np.ndarray
    responses: np.ndarray
    separation_deg: float | None = None

    @property
    def peak_rate(self) -> float:
        return float(np.max(self.responses))

    @property
    def spacing_deg(self) -> float:
        return 360.0 / len(self.responses)


@dataclass(frozen=True)
class ClassifierThresholds:
    prominence_frac: float = 0.2
    bias_tol_deg: float = 7.5
    activity_floor_frac: float = 0.01


@dataclass(frozen=True)
class ShapeClass:
    label: str
    peak_offset_deg: float
    secondary_prominence: float

    @property
    def is_biased(self) -> bool:
        return self.label in (CLOCKWISE, COUNTERCLOCKWISE)


def _check_cell(model, k):
    if int(k) != k or not 0 <= k < model.k_cells:
        raise IndexError(f"cell index {k} outside 0..{model.k_cells - 1}")


def _pair_stimuli(model: MotionModel, separation_deg):
    grid = model.grid
    if separation_deg == 0:
        raise ValueError("separation 0 deg would make the two components coincide")
    steps = grid.separation_steps(separation_deg)
    n = grid.n_dirs
    first = np.arange(n)
    S = np.zeros((n, n))
    S[first, first] = 1.0
    S[first, (first + steps) % n] = 1.0
    midline = np.mod(grid.directions_deg + separation_deg / 2.0, 360.0)
    order = np.argsort(midline, kind="stable")
    return S[order], midline[order]


def unidirectional_responses(model: MotionModel, intensity=1.0):
    """``(abscissa, R)`` with ``R[i, k]`` the response of cell k to direction i."""
    S = intensity * np.eye(model.grid.n_dirs)
    return model.grid.directions_deg, model.rates(S)


def bidirectional_responses(model: MotionModel, separation_deg, intensity=1.0):
    S, midline = _pair_stimuli(model, separation_deg)
    return midline, model.rates(intensity * S)


def unidirectional_curve(model: MotionModel, k: int, intensity=1.0) -> TuningCurve:
    _check_cell(model, k)
    x, R = unidirectional_responses(model, intensity)
    return TuningCurve(k, "unidirectional", x, R[:, k])


def bidirectional_curve(model: MotionModel, k: int, separation_deg, intensity=1.0) -> TuningCurve:
    _check_cell(model, k)
    x, R = bidirectional_responses(model, separation_deg, intensity)
    return TuningCurve(k, "bidirectional", x, R[:, k], float(separation_deg))


def circular_peaks(y):
    """Local maxima of a periodic sequence and their prominences.

    The sequence is cut at its global minimum, which makes ordinary
    (linear) prominence equal to prominence on the circle.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    shift = int(np.argmin(y))
    z = np.roll(y, -shift)
    z = np.concatenate([z, z[:1]])
    idx, props = find_peaks(z, prominence=0.0)
    idx = (idx + shift) % n
    return idx, props["prominences"]


def refine_peak(y, i, spacing_deg, x0_deg):
    """Sub-grid peak position from a parabola through ``y[i-1], y[i], y[i+1]``."""
    n = y.size
    a, b, c = y[(i - 1) % n], y[i], y[(i + 1) % n]
    denom = a - 2.0 * b + c
    delta = 0.0 if denom >= 0 else 0.5 * (a - c) / denom
    return float(np.mod(x0_deg + spacing_deg * (i + np.clip(delta, -0.5, 0.5)), 360.0))


def _peak_location(curve: TuningCurve, i):
    x0 = curve.abscissa_deg[0]
    return refine_peak(np.asarray(curve.responses, float), int(i), curve.spacing_deg, x0)


def classify_shape(uni: TuningCurve, bi: TuningCurve, thresholds=ClassifierThresholds(),
                   activity_floor=0.0) -> ShapeClass:
    """Assign one of the four response types to a cell.

    ``activity_floor`` is an absolute rate: curves whose maximum falls below
    it (or that have no peak at all) are labelled ``Unclassifiable``.
    """
    if uni.cell_index != bi.cell_index or len(uni.responses) != len(bi.responses):
        raise ValueError("curves must come from the same cell and grid")
    y = np.asarray(bi.responses, dtype=float)
    top = float(y.max())
    idx, prom = circular_peaks(y)
    if top < activity_floor or top <= 0 or idx.size == 0:
        return ShapeClass(UNCLASSIFIABLE, float("nan"), float("nan"))
    strong = prom >= thresholds.prominence_frac * top
    order = np.argsort(prom)[::-1]
    secondary = float(prom[order[1]] / top) if idx.size > 1 else 0.0
    uni_peak = _peak_location(uni, np.argmax(uni.responses))
    best = idx[np.argmax(y[idx])]
    offset = float(circular_difference(_peak_location(bi, best), uni_peak))
    if strong.sum() >= 2:
        return ShapeClass(DOUBLE, offset, secondary)
    if abs(offset) <= thresholds.bias_tol_deg:
        label = SYMMETRIC
    elif offset > 0:
        label = CLOCKWISE
    else:
        label = COUNTERCLOCKWISE
    return ShapeClass(label, offset, secondary)


def half_width(curve: TuningCurve) -> float:
    """Full width (deg) at half height above the curve minimum, around the main peak.

    Crossings are located by linear interpolation between samples, so the
    result is resolution-limited by the grid spacing. A curve that never
    drops below half height has width 360.
    """
    y = np.asarray(curve.responses, dtype=float)
    n = y.size
    lo, hi = y.min(), y.max()
    if hi - lo <= 0:
        return 360.0
    level = lo + 0.5 * (hi - lo)
    p = int(np.argmax(y))
    dist = []
    for direction in (1, -1):
        for step in range(1, n):
            j = (p + direction * step) % n
            if y[j] < level:
                prev = y[(p + direction * (step - 1)) % n]
                dist.append(step - 1 + (prev - level) / (prev - y[j]))
                break
        else:
            return 360.0
    return float(min(sum(dist) * curve.spacing_deg, 360.0))


@dataclass
class CellSummary:
    cell: int
    shape: ShapeClass
    uni_peak_rate: float
    bi_peak_rate: float
    uni_half_width: float
    bi_half_width: float
    offsets_by_separation: dict = field(default_factory=dict)
    labels_by_separation: dict = field(default_factory=dict)

    def bias_sign(self, separation) -> int:
        off = self.offsets_by_separation.get(separation, float("nan"))
        return 0 if not np.isfinite(off) else int(np.sign(off))

    def keeps_bias_side(self, reference) -> bool:
        ref = self.bias_sign(reference)
        return ref != 0 and all(self.bias_sign(s) == ref for s in self.offsets_by_separation)


@dataclass
class PopulationSummary:
    reference_separation: float
    separations: tuple
    thresholds: ClassifierThresholds
    activity_floor: float
    cells: list

    @property
    def classified(self) -> list:
        return [c for c in self.cells if c.shape.label != UNCLASSIFIABLE]

    @property
    def counts(self) -> dict:
        out = {name: 0 for name in SHAPE_CLASSES}
        for c in self.classified:
            out[c.shape.label] += 1
        return out

    @property
    def fractions(self) -> dict:
        n = len(self.classified)
        return {k: (v / n if n else 0.0) for k, v in self.counts.items()}

    @property
    def lower_peak_fraction(self) -> float:
        cells = self.classified
        if not cells:
            return float("nan")
        return sum(c.bi_peak_rate <= c.uni_peak_rate for c in cells) / len(cells)

    @property
    def mean_half_widths(self) -> tuple:
        """Population means ``(unidirectional, bidirectional)`` over classified cells."""
        cells = self.classified
        if not cells:
            return float("nan"), float("nan")
        return (float(np.mean([c.uni_half_width for c in cells])),
                float(np.mean([c.bi_half_width for c in cells])))

    @property
    def biased_cells(self) -> list:
        return [c for c in self.classified if c.shape.is_biased]

    @property
    def bias_consistency(self) -> float:
        """Fraction of reference-biased cells whose peak stays on the same side at every separation."""
        cells = self.biased_cells
        if not cells:
            return float("nan")
        return sum(c.keeps_bias_side(self.reference_separation) for c in cells) / len(cells)

    def plurality_class(self) -> str:
        counts = self.counts
        return max(SHAPE_CLASSES, key=lambda k: counts[k])

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        seps = list(self.separations)
        w.writerow(["cell", "class", "peak_offset_deg", "secondary_prominence",
                    "uni_peak_rate", "bi_peak_rate", "uni_half_width_deg", "bi_half_width_deg"]
                   + [f"offset_at_{s:g}" for s in seps] + [f"class_at_{s:g}" for s in seps])
        for c in self.cells:
            w.writerow([c.cell, c.shape.label, repr(c.shape.peak_offset_deg),
                        repr(c.shape.secondary_prominence), repr(c.uni_peak_rate),
                        repr(c.bi_peak_rate), repr(c.uni_half_width), repr(c.bi_half_width)]
                       + [repr(c.offsets_by_separation[s]) for s in seps]
                       + [c.labels_by_separation[s] for s in seps])
        return out.getvalue()

    def table(self) -> str:
        t = self.thresholds
        lines = [f"reference separation: {self.reference_separation:g} deg "
                 f"(separations: {', '.join(f'{s:g}' for s in self.separations)})",
                 f"thresholds: prominence_frac={t.prominence_frac:g} bias_tol_deg={t.bias_tol_deg:g} "
                 f"activity_floor={self.activity_floor:.4g}",
                 f"{'class':<22}{'count':>6}{'fraction':>10}"]
        counts, fracs = self.counts, self.fractions
        for name in SHAPE_CLASSES:
            lines.append(f"{name:<22}{counts[name]:>6}{fracs[name]:>10.3f}")
        n_out = len(self.cells) - len(self.classified)
        if n_out:
            lines.append(f"{UNCLASSIFIABLE:<22}{n_out:>6}")
        uw, bw = self.mean_half_widths
        lines.append(f"bidirectional peak <= unidirectional peak: {self.lower_peak_fraction:.3f} of cells")
        lines.append(f"mean half-width: unidirectional {uw:.1f} deg, bidirectional {bw:.1f} deg")
        lines.append(f"biased cells keeping their side across separations: {self.bias_consistency:.3f}")
        return "\n".join(lines) + "\n"


def population_summary(model: MotionModel, separations=(30.0, 60.0, 90.0),
                       reference_separation=60.0, thresholds=ClassifierThresholds(),
                       intensity=1.0) -> PopulationSummary:
    """Classify every MT cell and collect peak-rate, width and bias statistics."""
    seps = tuple(dict.fromkeys([float(reference_separation)] + [float(s) for s in separations]))
    ux, uR = unidirectional_responses(model, intensity)
    bi = {s: bidirectional_responses(model, s, intensity) for s in seps}
    floor = thresholds.activity_floor_frac * max(uR.max(), max(R.max() for _, R in bi.values()))
    cells = []
    for k in range(model.k_cells):
        uni = TuningCurve(k, "unidirectional", ux, uR[:, k])
        curves = {s: TuningCurve(k, "bidirectional", x, R[:, k], s) for s, (x, R) in bi.items()}
        shapes = {s: classify_shape(uni, c, thresholds, floor) for s, c in curves.items()}
        ref = curves[float(reference_separation)]
        cells.append(CellSummary(
            cell=k,
            shape=shapes[float(reference_separation)],
            uni_peak_rate=uni.peak_rate,
            bi_peak_rate=ref.peak_rate,
            uni_half_width=half_width(uni),
            bi_half_width=half_width(ref),
            offsets_by_separation={s: shapes[s].peak_offset_deg for s in seps},
            labels_by_separation={s: shapes[s].label for s in seps},
        ))
    return PopulationSummary(float(reference_separation), seps, thresholds, floor, cells)


def curves_csv(model: MotionModel, separations=(60.0,), intensity=1.0) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["cell", "kind", "separation_deg", "abscissa_deg", "response"])
    ux, uR = unidirectional_responses(model, intensity)
    for k in range(model.k_cells):
        for x, r in zip(ux, uR[:, k]):
            w.writerow([k, "unidirectional", "", f"{x:g}", repr(float(r))])
    for s in separations:
        bx, bR = bidirectional_responses(model, s, intensity)
        for k in range(model.k_cells):
            for x, r in zip(bx, bR[:, k]):
                w.writerow([k, "bidirectional", f"{s:g}", f"{x:g}", repr(float(r))])
    return out.getvalue()
