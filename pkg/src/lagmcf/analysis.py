"""Diagnostics of a flow run and the checks built on them.

The decay checks are envelope based: the constants in the curvature decay
estimates are not explicit, so a run passes when the products ``t sup|H|^2``
and ``t sup|D^3 u|^2`` stay within a fixed multiple of their value at an early
anchor time.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .flow import FlowState
from .geometry import lagrangian_angle, mean_curvature_sq, sym_eigenvalues
from .grid import ScalarField, gradient, hessian, hessian_values, third_from_hessian
from .initdata import LiftDecomposition

__all__ = [
    "DiagnosticsRecord",
    "DiagnosticsSeries",
    "CSV_COLUMNS",
    "CSVFormatError",
    "diagnostics",
    "diagnostics_many",
    "PreservationReport",
    "preservation_report",
    "first_increase",
    "DecayReport",
    "decay_report",
    "SolitonSpec",
    "special_lagrangian_residual",
    "soliton_residual",
    "ConvergenceVerdict",
    "convergence_check",
    "worker_count",
]

CSV_COLUMNS = (
    "t",
    "sup_H2",
    "sup_D3u2",
    "t_supH2",
    "t_supD3u2",
    "eig_min",
    "eig_max",
    "osc_theta",
    "sup_Du",
    "pinch_min",
)


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    sup_H2: float
    sup_D3u2: float
    t_supH2: float
    t_supD3u2: float
    eig_min: float
    eig_max: float
    osc_theta: float
    sup_Du: float
    pinch_min: float


class CSVFormatError(ValueError):
    pass


@dataclass
class DiagnosticsSeries:
    """Time-ordered diagnostics records.

    ``error`` is set when the run that produced the series was aborted.
    """

    records: List[DiagnosticsRecord] = field(default_factory=list)
    eps: float = 0.0
    error: Optional[str] = None

    def append(self, rec: DiagnosticsRecord) -> None:
        if self.records and not rec.t > self.records[-1].t:
            raise ValueError(f"sample times must increase strictly ({rec.t} after {self.records[-1].t})")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path=None) -> str:
        """Render (and optionally write) the CSV table, 17 significant digits."""
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for r in self.records:
            buf.write(",".join(f"{getattr(r, c):.17g}" for c in CSV_COLUMNS) + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text, eps: float = 0.0) -> "DiagnosticsSeries":
        text = path_or_text
        if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text):
            text = Path(path_or_text).read_text()
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise CSVFormatError("empty diagnostics file") from None
        header = [h.strip() for h in header]
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise CSVFormatError(f"missing column(s): {', '.join(missing)}")
        pos = {c: header.index(c) for c in CSV_COLUMNS}
        series = cls(eps=eps)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CSVFormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = {c: float(row[pos[c]]) for c in CSV_COLUMNS}
            except ValueError as exc:
                raise CSVFormatError(f"line {lineno}: {exc}") from None
            try:
                series.append(DiagnosticsRecord(**vals))
            except ValueError as exc:
                raise CSVFormatError(f"line {lineno}: {exc}") from None
        return series


def diagnostics(state: FlowState, eps: float = 0.0) -> DiagnosticsRecord:
    """Curvature, eigenvalue, angle and gradient summaries of one snapshot.

    ``sup_D3u2`` is the flat sum of squares of the third derivatives; ``sup_H2``
    uses the induced metric.
    """
    u = state.u
    Hp = hessian_values(u.values, u.grid.spacing)
    T = third_from_hessian(u.grid, Hp).values
    H = Hp if u.quadratic is None else Hp + u.quadratic
    lam = sym_eigenvalues(H)
    theta = np.sum(np.arctan(lam), axis=-1)
    n = u.grid.ndim
    d3 = np.sum(T.reshape(T.shape[: -3] + (n**3,)) ** 2, axis=-1)
    du = gradient(u).values
    sup_H2 = float(np.max(mean_curvature_sq(H, T)))
    sup_D3u2 = float(np.max(d3))
    t = float(state.t)
    lo, hi = float(np.min(lam[..., 0])), float(np.max(lam[..., -1]))
    return DiagnosticsRecord(
        t=t,
        sup_H2=sup_H2,
        sup_D3u2=sup_D3u2,
        t_supH2=t * sup_H2,
        t_supD3u2=t * sup_D3u2,
        eig_min=lo,
        eig_max=hi,
        osc_theta=float(np.max(theta) - np.min(theta)),
        sup_Du=float(np.max(np.sqrt(np.sum(du * du, axis=-1)))),
        # eigenvalues of S - eps g are (1 - eps) - (1 + eps) lambda^2
        pinch_min=(1.0 - eps) - (1.0 + eps) * max(lo * lo, hi * hi),
    )


def worker_count() -> int:
    """Worker cap from ``LAGMCF_THREADS``; defaults to the CPU count."""
    raw = os.environ.get("LAGMCF_THREADS")
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"LAGMCF_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"LAGMCF_THREADS must be a positive integer, got {raw!r}")
    return n


def diagnostics_many(states: Sequence[FlowState], eps: float = 0.0, workers: Optional[int] = None) -> DiagnosticsSeries:
    """Diagnostics of many snapshots, evaluated concurrently.

    Each record depends on its snapshot alone, so the result does not depend
    on the worker count.
    """
    workers = workers or worker_count()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        recs = list(pool.map(lambda s: diagnostics(s, eps), states))
    series = DiagnosticsSeries(eps=eps)
    for r in recs:
        series.append(r)
    return series


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class PreservationReport:
    passed: bool
    bound: float
    tol: float
    worst_eig: float
    worst_eig_t: float
    worst_pinch: float
    worst_pinch_t: float
    first_violation_t: Optional[float] = None
    failed_check: Optional[str] = None


def preservation_report(series: DiagnosticsSeries, delta: float, tol: float) -> PreservationReport:
    """Check ``-(1-delta) <= eig <= 1-delta`` (plus ``tol``) and ``pinch_min >= -tol``.

    The first sample violating either check is reported.
    """
    if not len(series):
        raise ValueError("preservation report needs a nonempty series")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    bound = 1.0 - delta
    t = series.column("t")
    eig = np.maximum(-series.column("eig_min"), series.column("eig_max"))
    pinch = series.column("pinch_min")
    i_eig = int(np.argmax(eig))
    i_pin = int(np.argmin(pinch))
    rep = PreservationReport(
        passed=True,
        bound=bound,
        tol=tol,
        worst_eig=float(eig[i_eig]),
        worst_eig_t=float(t[i_eig]),
        worst_pinch=float(pinch[i_pin]),
        worst_pinch_t=float(t[i_pin]),
    )
    for k in range(len(t)):
        if eig[k] > bound + tol:
            rep.passed, rep.first_violation_t, rep.failed_check = False, float(t[k]), "hessian_bound"
            break
        if pinch[k] < -tol:
            rep.passed, rep.first_violation_t, rep.failed_check = False, float(t[k]), "pinching"
            break
    return rep


def first_increase(series: DiagnosticsSeries, column: str, rate: float = 1e-8) -> Optional[float]:
    """Time of the first sample where ``column`` rose by more than ``rate`` per unit time.

    ``None`` when the column is non-increasing within that allowance.
    """
    t = series.column("t")
    v = series.column(column)
    for k in range(1, len(t)):
        if v[k] - v[k - 1] > rate * (t[k] - t[k - 1]):
            return float(t[k])
    return None


@dataclass
class DecayReport:
    t_anchor: float
    anchor_H2: float
    anchor_D3: float
    max_t_supH2: float
    max_t_supD3u2: float
    final_H2_le_anchor: bool
    final_D3_le_anchor: bool

    def envelope_ok(self, factor: float = 10.0) -> bool:
        return self.max_t_supH2 <= factor * self.anchor_H2 and self.max_t_supD3u2 <= factor * self.anchor_D3


def decay_report(series: DiagnosticsSeries, t_min: float) -> DecayReport:
    """Suprema of the decay products over samples with ``t >= t_min``.

    The anchor is the first such sample; the flags say whether the final
    products are no larger than the anchor's.
    """
    t = series.column("t")
    keep = np.nonzero(t >= t_min)[0]
    if keep.size == 0:
        raise ValueError(f"series ends at t={t[-1] if len(t) else float('nan')} before t_min={t_min}")
    pH = series.column("t_supH2")[keep]
    pD = series.column("t_supD3u2")[keep]
    return DecayReport(
        t_anchor=float(t[keep[0]]),
        anchor_H2=float(pH[0]),
        anchor_D3=float(pD[0]),
        max_t_supH2=float(pH.max()),
        max_t_supD3u2=float(pD.max()),
        final_H2_le_anchor=bool(pH[-1] <= pH[0]),
        final_D3_le_anchor=bool(pD[-1] <= pD[0]),
    )


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolitonSpec:
    """Translating vector ``T = (a, b)`` and constant ``c``."""

    a: tuple
    b: tuple
    c: float = 0.0

    def __post_init__(self):
        a = tuple(float(v) for v in np.atleast_1d(self.a))
        b = tuple(float(v) for v in np.atleast_1d(self.b))
        if len(a) != len(b):
            raise ValueError("a and b must have the same length")
        if not (all(map(math.isfinite, a + b)) and math.isfinite(self.c)):
            raise ValueError("soliton parameters must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))


def _interior(arr, ndim):
    # drop the points whose stencils wrap across the cell boundary
    return arr[(slice(1, -1),) * ndim]


def special_lagrangian_residual(u: ScalarField, Theta: float, interior: bool = False) -> float:
    """``sup |theta(D^2 u) - Theta|`` over the grid.

    With ``interior=True`` the first and last point on each axis are skipped,
    for fields sampled on an unwrapped cell.
    """
    r = np.abs(lagrangian_angle(hessian(u).values) - Theta)
    if interior:
        r = _interior(r, u.grid.ndim)
    return float(np.max(r))


def soliton_residual(u: ScalarField, spec: SolitonSpec, interior: bool = False) -> float:
    """``sup |theta + a.Du - b.x - c|`` with ``x`` the unwrapped grid coordinates."""
    n = u.grid.ndim
    if len(spec.a) != n:
        raise ValueError(f"soliton vector has {len(spec.a)} components, grid has {n} dimensions")
    r = lagrangian_angle(hessian(u).values)
    a = np.array(spec.a)
    b = np.array(spec.b)
    if a.any():
        r = r + gradient(u).values @ a
    if b.any():
        r = r - u.grid.coords() @ b
    r = np.abs(r - spec.c)
    if interior:
        r = _interior(r, n)
    return float(np.max(r))


@dataclass
class ConvergenceVerdict:
    passed: bool
    sup_hessian_dev: float
    osc_gradient_dev: float
    tol: float


def convergence_check(state: FlowState, lift: LiftDecomposition, tol: float) -> ConvergenceVerdict:
    """Has the graph become flat?

    Measures ``sup |D^2 u - A|`` (the Hessian of a flat lift is the constant
    slope matrix ``A``) and the oscillation of ``Du - A x`` per component.
    """
    u = state.u
    H = hessian(u).values
    dev = float(np.max(np.abs(H - lift.A)))
    rest = gradient(u).values - u.grid.coords() @ lift.A.T
    flat = rest.reshape(-1, u.grid.ndim)
    osc = float(np.max(flat.max(axis=0) - flat.min(axis=0)))
    return ConvergenceVerdict(dev <= tol and osc <= tol, dev, osc, tol)
