"""Initial potentials, heat-kernel mollification, parabolic rescaling and lifts.

Presets
-------
``quadratic``
    ``1/2 x^T A x`` held exactly as the field background.  Params: ``A``.
``cosine``
    ``a * sum_d cos(m kappa_d x_d)`` with ``kappa_d = 2 pi / L_d``.  Hessian
    range ``[-a m^2 kappa^2, a m^2 kappa^2]``; ``[-a, a]`` on ``2 pi`` cells
    with ``m = 1``.  Params: ``amplitude``, ``mode``.
``product_sine``
    ``a * prod_d sin(m kappa_d x_d)``.  On ``2 pi`` cells the Hessian
    eigenvalues are ``-a cos(x +- y)`` in 2D, so the range is ``[-a, a]``.
``sawtooth_c11``
    ``C^{1,1}`` periodic potential whose second derivative along each axis is
    a square wave taking the values ``+level`` on the first half period and
    ``-level`` on the second.  Params: ``level``.
``random_bandlimited``
    Random Fourier series with modes ``1 <= |k|_inf <= kmax``, rescaled so the
    analytic Hessian eigenvalues sampled on the grid fill ``[-clamp, clamp]``.
    Params: ``seed``, ``kmax``, ``hessian_clamp``, optional ``amplitude``.

Every preset accepts ``hessian_clamp``; a preset whose Hessian range exceeds
it raises :class:`PresetError`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import sympy

from .geometry import sym_eigenvalues
from .grid import TWO_PI, GridSpec, ScalarField, VectorField, gradient

__all__ = [
    "Preset",
    "PresetError",
    "PRESET_NAMES",
    "make_preset",
    "preset_expression",
    "preset_derivatives",
    "preset_hessian_range",
    "mollify",
    "heat_kernel_1d",
    "MollifierReport",
    "mollifier_sequence",
    "RescaleError",
    "parabolic_rescale",
    "rescale_expression",
    "LiftDecomposition",
    "NotALiftError",
    "lift_decompose",
]

PRESET_NAMES = ("quadratic", "cosine", "product_sine", "sawtooth_c11", "random_bandlimited")

_PARAMS = {
    "quadratic": {"A", "hessian_clamp"},
    "cosine": {"amplitude", "mode", "hessian_clamp"},
    "product_sine": {"amplitude", "mode", "hessian_clamp"},
    "sawtooth_c11": {"level", "hessian_clamp"},
    "random_bandlimited": {"seed", "kmax", "hessian_clamp", "amplitude"},
}


class PresetError(ValueError):
    pass


@dataclass
class Preset:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in PRESET_NAMES:
            raise PresetError(f"unknown preset {self.name!r}; expected one of {', '.join(PRESET_NAMES)}")
        unknown = set(self.params) - _PARAMS[self.name]
        if unknown:
            raise PresetError(f"preset {self.name!r} got unknown params: {', '.join(sorted(unknown))}")

    def get(self, key, default):
        return self.params.get(key, default)


def _symbols(ndim):
    return sympy.symbols(f"x0:{ndim}", real=True)


def _quadratic_matrix(preset, ndim):
    A = np.array(preset.get("A", np.zeros((ndim, ndim))), dtype=np.float64)
    if A.shape != (ndim, ndim):
        raise PresetError(f"quadratic preset needs a {ndim}x{ndim} matrix A")
    if not np.array_equal(A, A.T):
        raise PresetError("quadratic preset matrix A must be symmetric")
    return A


def _random_modes(preset, ndim):
    rng = np.random.default_rng(int(preset.get("seed", 0)))
    kmax = int(preset.get("kmax", 3))
    if kmax < 1:
        raise PresetError("random_bandlimited needs kmax >= 1")
    modes = []
    for k in np.ndindex(*(2 * kmax + 1,) * ndim):
        k = tuple(int(v) - kmax for v in k)
        # one representative of each +-k pair
        if max(abs(v) for v in k) == 0 or k < tuple(-v for v in k):
            continue
        modes.append(k)
    coef = rng.standard_normal((len(modes), 2))
    decay = np.array([1.0 + sum(v * v for v in k) for k in modes]) ** -1.5
    return modes, coef * decay[:, None]


def preset_expression(preset: Preset, grid: GridSpec, unit_amplitude=False):
    """Sympy expression of a smooth preset in the symbols ``x0, x1, ...``.

    Returns ``(expr, symbols)``.  ``sawtooth_c11`` is only piecewise smooth and
    has no expression here.
    """
    n = grid.ndim
    xs = _symbols(n)
    kappa = [sympy.Integer(1) if L == TWO_PI else 2 * sympy.pi / sympy.Float(L) for L in grid.extent]
    name = preset.name
    if name == "quadratic":
        A = _quadratic_matrix(preset, n)
        expr = sympy.Rational(1, 2) * sum(
            sympy.Float(A[i, j]) * xs[i] * xs[j] for i in range(n) for j in range(n)
        )
    elif name == "cosine":
        a = sympy.Float(preset.get("amplitude", 0.3))
        m = int(preset.get("mode", 1))
        expr = a * sum(sympy.cos(m * kappa[d] * xs[d]) for d in range(n))
    elif name == "product_sine":
        a = sympy.Float(preset.get("amplitude", 0.3))
        m = int(preset.get("mode", 1))
        expr = a * sympy.Mul(*(sympy.sin(m * kappa[d] * xs[d]) for d in range(n)))
    elif name == "random_bandlimited":
        modes, coef = _random_modes(preset, n)
        terms = []
        for k, (ca, cb) in zip(modes, coef):
            phase = sum(k[d] * kappa[d] * xs[d] for d in range(n))
            terms.append(sympy.Float(ca) * sympy.cos(phase) + sympy.Float(cb) * sympy.sin(phase))
        expr = sympy.Add(*terms)
        if not unit_amplitude:
            expr = sympy.Float(_bandlimited_scale(preset, grid, expr, xs)) * expr
    else:
        raise PresetError(f"preset {name!r} has no closed-form expression")
    return expr, xs


def _lambdify_derivs(expr, xs, order):
    n = len(xs)
    if order == 0:
        return [((), expr)]
    return [(idx, sympy.diff(expr, *(xs[i] for i in idx))) for idx in np.ndindex(*(n,) * order)]


def _evaluate(expr, xs, grid, order):
    x = grid.coords()
    cols = [x[..., d] for d in range(grid.ndim)]
    out = np.empty(grid.shape + (grid.ndim,) * order)
    for idx, d in _lambdify_derivs(expr, xs, order):
        f = sympy.lambdify(xs, d, "numpy")
        out[(Ellipsis,) + tuple(idx)] = np.broadcast_to(f(*cols), grid.shape)
    return out


def _sawtooth_1d(s, L, level, order):
    s = np.mod(s, L)
    first = s < 0.5 * L
    r = s - 0.5 * L
    if order == 0:
        return np.where(first, 0.5 * level * s * s - 0.25 * level * L * s, 0.25 * level * L * r - 0.5 * level * r * r)
    if order == 1:
        return np.where(first, level * s - 0.25 * level * L, 0.25 * level * L - level * r)
    if order == 2:
        return np.where(first, level, -level)
    raise PresetError("sawtooth_c11 has no classical third derivative")


def preset_derivatives(preset: Preset, grid: GridSpec, order: int) -> np.ndarray:
    """Analytic derivative tensor of order ``order`` sampled on the grid.

    Shape is ``grid.shape + (ndim,) * order``.
    """
    n = grid.ndim
    if preset.name == "sawtooth_c11":
        level = float(preset.get("level", 0.9))
        x = grid.coords()
        per_axis = [_sawtooth_1d(x[..., d], grid.extent[d], level, order) for d in range(n)]
        if order == 0:
            return sum(per_axis)
        out = np.zeros(grid.shape + (n,) * order)
        for d in range(n):
            out[(Ellipsis,) + (d,) * order] = per_axis[d]
        return out
    expr, xs = preset_expression(preset, grid)
    return _evaluate(expr, xs, grid, order)


def _bandlimited_scale(preset, grid, unit_expr, xs):
    hess = _evaluate(unit_expr, xs, grid, 2)
    lam = sym_eigenvalues(hess)
    peak = float(max(-lam[..., 0].min(), lam[..., -1].max()))
    clamp = float(preset.get("hessian_clamp", 0.9))
    amplitude = preset.get("amplitude", None)
    if amplitude is None:
        return clamp / peak
    amplitude = float(amplitude)
    if amplitude * peak > clamp:
        raise PresetError(
            f"random_bandlimited amplitude {amplitude} gives Hessian range {amplitude * peak:.6g} beyond clamp {clamp}"
        )
    return amplitude


def preset_hessian_range(preset: Preset, grid: GridSpec) -> tuple:
    """``(min, max)`` eigenvalue of the analytic Hessian over the grid points."""
    if preset.name == "quadratic":
        lam = sym_eigenvalues(_quadratic_matrix(preset, grid.ndim))
        return float(lam[0]), float(lam[-1])
    lam = sym_eigenvalues(preset_derivatives(preset, grid, 2))
    return float(lam[..., 0].min()), float(lam[..., -1].max())


def make_preset(preset: Preset, grid: GridSpec) -> ScalarField:
    """Sample a preset on ``grid``.

    Raises
    ------
    PresetError
        If params are invalid or the Hessian range exceeds ``hessian_clamp``.
    """
    clamp = preset.get("hessian_clamp", None)
    if preset.name == "quadratic":
        field_ = ScalarField(grid, np.zeros(grid.shape), quadratic=_quadratic_matrix(preset, grid.ndim))
    else:
        for key in ("mode", "kmax"):
            if key in preset.params and int(preset.params[key]) != preset.params[key]:
                raise PresetError(f"{key} must be an integer")
        field_ = ScalarField(grid, preset_derivatives(preset, grid, 0))
    if clamp is not None and preset.name != "random_bandlimited":
        lo, hi = preset_hessian_range(preset, grid)
        if max(-lo, hi) > float(clamp):
            raise PresetError(
                f"preset {preset.name!r} has Hessian range [{lo:.6g}, {hi:.6g}], infeasible for clamp {clamp}"
            )
    return field_


# ---------------------------------------------------------------------------
# mollification
# ---------------------------------------------------------------------------

TRUNCATE_SIGMAS = 8.0


def heat_kernel_1d(npts: int, h: float, tau: float) -> np.ndarray:
    """Periodized Gaussian of variance ``2 tau`` folded onto ``npts`` points.

    Truncated at eight standard deviations and renormalized to unit sum.
    Entry ``j`` is the weight of offset ``j`` (mod ``npts``).
    """
    sigma = math.sqrt(2.0 * tau)
    reach = int(math.ceil(TRUNCATE_SIGMAS * sigma / h))
    offsets = np.arange(-reach, reach + 1)
    w = np.exp(-((offsets * h) ** 2) / (4.0 * tau))
    kernel = np.zeros(npts)
    np.add.at(kernel, np.mod(offsets, npts), w)
    return kernel / kernel.sum()


def _resolved_tau(grid, tau):
    if not (np.isfinite(tau) and tau > 0):
        raise ValueError(f"tau must be positive, got {tau}")
    tau_min = 2.0 * min(grid.spacing) ** 2
    if tau < tau_min:
        warnings.warn(
            f"heat kernel with tau={tau:.3g} is narrower than two grid steps; using tau={tau_min:.3g}",
            RuntimeWarning,
            stacklevel=3,
        )
        return tau_min
    return tau


def mollify(u0: ScalarField, tau: float) -> ScalarField:
    """Convolve with the periodized heat kernel at time ``tau``.

    The periodic part is convolved axis by axis (circular convolution via
    FFT).  A quadratic background ``1/2 x^T A x`` is mapped exactly to itself
    plus the constant ``tau * tr(A)``; the linear background is unchanged.
    """
    grid = u0.grid
    tau = _resolved_tau(grid, tau)
    out = u0.values
    for d in range(grid.ndim):
        kernel = heat_kernel_1d(grid.npts[d], grid.spacing[d], tau)
        shape = [1] * grid.ndim
        shape[d] = grid.npts[d] // 2 + 1
        spec = np.fft.rfft(kernel).reshape(shape)
        out = np.fft.irfft(np.fft.rfft(out, axis=d) * spec, n=grid.npts[d], axis=d)
    if u0.quadratic is not None:
        out = out + tau * np.trace(u0.quadratic)
    return u0.with_values(out)


@dataclass
class MollifierReport:
    k_list: list
    taus: list
    fields: list
    value_errors: list
    gradient_errors: list

    @property
    def value_monotone(self) -> bool:
        return all(b <= a for a, b in zip(self.value_errors, self.value_errors[1:]))

    @property
    def gradient_monotone(self) -> bool:
        return all(b <= a for a, b in zip(self.gradient_errors, self.gradient_errors[1:]))

    @property
    def gradient_strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.gradient_errors, self.gradient_errors[1:]))


def mollifier_sequence(u0: ScalarField, k_list: Sequence[float]) -> MollifierReport:
    """Mollify at ``tau = 1/k`` for each ``k`` and measure the approach to ``u0``.

    Errors are sup norms over the grid of the potential and of its centered
    gradient.
    """
    k_list = [float(k) for k in k_list]
    if any(b <= a for a, b in zip(k_list, k_list[1:])):
        raise ValueError("k_list must be strictly increasing")
    base = u0.full_values()
    dbase = gradient(u0).values
    taus, fields, verr, gerr = [], [], [], []
    for k in k_list:
        uk = mollify(u0, 1.0 / k)
        taus.append(1.0 / k)
        fields.append(uk)
        verr.append(float(np.max(np.abs(uk.full_values() - base))))
        gerr.append(float(np.max(np.abs(gradient(uk).values - dbase))))
    return MollifierReport(k_list, taus, fields, verr, gerr)


# ---------------------------------------------------------------------------
# parabolic rescaling
# ---------------------------------------------------------------------------


class RescaleError(ValueError):
    pass


def _catmull_rom_weights(frac):
    f2 = frac * frac
    f3 = f2 * frac
    return np.stack(
        [-0.5 * f3 + f2 - 0.5 * frac, 1.5 * f3 - 2.5 * f2 + 1.0, -1.5 * f3 + 2.0 * f2 + 0.5 * frac, 0.5 * f3 - 0.5 * f2],
        axis=-1,
    )


def _sample(values, grid, x):
    """Sample ``values`` at coordinates ``x`` (shape ``(..., n)``) inside the cell.

    Points on the lattice are copied; others use tensor-product Catmull-Rom
    interpolation, which needs one lattice neighbour beyond each side.
    """
    n = grid.ndim
    pos = (x - np.array(grid.origin)) / np.array(grid.spacing)
    near = np.rint(pos)
    on_lattice = np.abs(pos - near) <= 1e-9 * np.maximum(1.0, np.abs(pos))
    out = np.empty(x.shape[:-1])
    for d in range(n):
        lo_ok = np.where(on_lattice[..., d], near[..., d] >= 0, pos[..., d] >= 1)
        hi_ok = np.where(on_lattice[..., d], near[..., d] <= grid.npts[d] - 1, pos[..., d] <= grid.npts[d] - 2)
        if not (lo_ok.all() and hi_ok.all()):
            raise RescaleError("rescaled window reaches outside the source cell; periodic wrap is not allowed")
    base = np.where(on_lattice, near, np.floor(pos)).astype(np.int64)
    frac = np.where(on_lattice, 0.0, pos - base)
    weights = [_catmull_rom_weights(frac[..., d]) for d in range(n)]
    out[...] = 0.0
    for offs in np.ndindex(*(4,) * n):
        w = np.ones(x.shape[:-1])
        idx = []
        for d, o in enumerate(offs):
            w = w * weights[d][..., o]
            idx.append(np.clip(base[..., d] + o - 1, 0, grid.npts[d] - 1))
        out += w * values[tuple(idx)]
    return out


def parabolic_rescale(snapshots, lam: float, x0_index, t0: float, out_grid: Optional[GridSpec] = None):
    """Parabolic zoom of a sequence of snapshots about ``(x0, t0)``.

    ``u_lam(y, s) = lam^2 (u(x, t) - u(x0, t0) - Du(x0, t0).(x - x0))`` with
    ``y = lam (x - x0)`` and ``s = lam^2 (t - t0)``.

    Parameters
    ----------
    snapshots : sequence of (t, ScalarField)
        Must contain a snapshot at ``t0``.
    lam : float
        Zoom factor, positive.
    x0_index : tuple of int
        Lattice index of the base point.
    out_grid : GridSpec, optional
        Lattice of ``y`` values.  Defaults to the source lattice scaled by
        ``lam`` and centred so that ``y = 0`` is ``x0``; every ``y`` then maps
        onto a source lattice point and no interpolation is needed.

    Returns
    -------
    list of (s, ScalarField)
        Quadratic backgrounds carry over unchanged; the periodic part is
        rescaled and sampled.
    """
    if not (np.isfinite(lam) and lam > 0):
        raise RescaleError(f"lam must be positive, got {lam}")
    snapshots = list(snapshots)
    if not snapshots:
        raise RescaleError("no snapshots given")
    src_grid = snapshots[0][1].grid
    n = src_grid.ndim
    x0_index = tuple(int(i) for i in np.atleast_1d(x0_index))
    if len(x0_index) != n or any(not 0 <= i < N for i, N in zip(x0_index, src_grid.npts)):
        raise RescaleError(f"x0 index {x0_index} is not a grid point")
    x0 = np.array([o + i * h for o, i, h in zip(src_grid.origin, x0_index, src_grid.spacing)])
    base = [f for t, f in snapshots if abs(t - t0) <= 1e-12 * max(1.0, abs(t0))]
    if not base:
        raise RescaleError(f"no snapshot at t0={t0}")
    base = base[0]
    w0 = base.values[x0_index]
    dw0 = gradient(ScalarField(src_grid, base.values)).values[x0_index]
    if out_grid is None:
        out_grid = GridSpec(
            src_grid.npts,
            tuple(lam * h for h in src_grid.spacing),
            tuple(lam * (o - c) for o, c in zip(src_grid.origin, x0)),
        )
    y = out_grid.coords()
    x = x0 + y / lam
    out = []
    for t, f in snapshots:
        if f.grid != src_grid:
            raise RescaleError("snapshots must share one grid")
        if f.linear is not None and f.linear.any() and not np.array_equal(f.linear, base.linear):
            raise RescaleError("snapshots must share the linear background")
        wx = _sample(f.values, src_grid, x)
        vals = lam * lam * (wx - w0 - (x - x0) @ dw0)
        out.append((lam * lam * (t - t0), ScalarField(out_grid, vals, quadratic=f.quadratic)))
    return out


def rescale_expression(expr, xs, lam, x0, t=None, t0=0):
    """Symbolic parabolic rescaling of ``expr(x[, t])``.

    Returns ``(u_lam, ys, s)`` where ``u_lam`` is an expression in the new
    symbols ``y0, y1, ...`` and ``s``.
    """
    n = len(xs)
    ys = sympy.symbols(f"y0:{n}", real=True)
    s = sympy.Symbol("s", real=True)
    lam = sympy.nsimplify(lam)
    x0 = [sympy.nsimplify(v) for v in np.atleast_1d(x0)]
    at_base = {xs[i]: x0[i] for i in range(n)}
    moved = {xs[i]: x0[i] + ys[i] / lam for i in range(n)}
    if t is not None:
        t0 = sympy.nsimplify(t0)
        at_base[t] = t0
        moved[t] = t0 + s / lam**2
    u0 = expr.subs(at_base)
    grad0 = [sympy.diff(expr, xs[i]).subs(at_base) for i in range(n)]
    u_lam = lam**2 * (expr.subs(moved) - u0 - sum(grad0[i] * ys[i] / lam for i in range(n)))
    return u_lam, ys, s


# ---------------------------------------------------------------------------
# lifts of torus maps
# ---------------------------------------------------------------------------


class NotALiftError(ValueError):
    pass


@dataclass
class LiftDecomposition:
    """``Du = A x + mean_offset + periodic_part`` with integer winding.

    ``winding[i, j]`` counts how many periods of the target axis ``i`` the
    component ``(Du)_i`` advances across one period of axis ``j``; ``A`` is
    the corresponding slope matrix (equal to ``winding`` on cubic cells).
    """

    A: np.ndarray
    winding: np.ndarray
    periodic_part: VectorField
    mean_offset: np.ndarray


def lift_decompose(du: VectorField, tol: float = 0.1) -> LiftDecomposition:
    """Split a sampled gradient map into its linear winding and a periodic part.

    The mean slope of ``(Du)_i`` along axis ``j`` is measured end to end over
    the unwrapped cell; it must be within ``tol`` of an integer number of
    target periods per domain period.
    """
    grid = du.grid
    n = grid.ndim
    if du.ncomp != n:
        raise ValueError("lift decomposition needs an n-component gradient field")
    L = np.array(grid.extent)
    slope = np.empty((n, n))
    for j in range(n):
        first = np.take(du.values, 0, axis=j)
        last = np.take(du.values, grid.npts[j] - 1, axis=j)
        run = (grid.npts[j] - 1) * grid.spacing[j]
        slope[:, j] = np.mean((last - first) / run, axis=tuple(range(n - 1)))
    scaled = slope * L[None, :] / L[:, None]
    winding = np.rint(scaled)
    if np.max(np.abs(scaled - winding)) > tol:
        raise NotALiftError(f"winding {scaled.tolist()} is not within {tol} of an integer matrix")
    A = winding * L[:, None] / L[None, :]
    rest = du.values - grid.coords() @ A.T
    mean_offset = rest.reshape(-1, n).mean(axis=0)
    return LiftDecomposition(A, winding.astype(np.int64), VectorField(grid, rest - mean_offset), mean_offset)
