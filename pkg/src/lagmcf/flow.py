"""Explicit time stepping for the potential flow and the graphical vector flow.

Potential flow::

    du/dt = theta(D^2 u) = sum_i arctan(lambda_i(D^2 u))

Vector flow for ``f : T^n -> R^m``::

    df^a/dt = g^{ij}(f) f^a_ij,   g_ij(f) = delta_ij + sum_a f^a_i f^a_j

Both are stepped with forward Euler or the explicit midpoint rule.  The
linearized diffusion matrix has spectrum in ``(0, 1]``, so the step is bounded
by ``dt <= sigma * min(h)^2 / (2 n)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import lagrangian_angle
from .grid import GridSpec, ScalarField, gradient, hessian, hessian_values

__all__ = [
    "FlowState",
    "VectorFlowState",
    "StepControl",
    "BlowupError",
    "cfl_dt",
    "angle_field",
    "potential_step",
    "vector_step",
    "gradient_components",
    "run",
    "run_vector",
]

log = logging.getLogger(__name__)

SCHEMES = ("euler", "rk2")

# relative growth of osc(theta) over its initial value that counts as unstable
OSC_ALARM = 0.1


class BlowupError(FloatingPointError):
    """Non-finite values or runaway angle oscillation during a run.

    ``state`` is the last finite state and ``series`` the diagnostics gathered
    so far (when raised from :func:`run`).
    """

    def __init__(self, message, index=None, t=None):
        super().__init__(message)
        self.index = index
        self.t = t
        self.state = None
        self.series = None


@dataclass(frozen=True)
class FlowState:
    u: ScalarField
    t: float = 0.0
    step_count: int = 0

    @property
    def grid(self) -> GridSpec:
        return self.u.grid


@dataclass(frozen=True)
class VectorFlowState:
    """Components ``f^a`` as scalar fields on one grid.

    A component may carry a linear background (the ``A x`` part of a lift);
    quadratic backgrounds are not allowed here.
    """

    f: tuple
    t: float = 0.0
    step_count: int = 0

    def __post_init__(self):
        f = tuple(self.f)
        if not f:
            raise ValueError("vector flow needs at least one component")
        grid = f[0].grid
        for comp in f:
            if comp.grid != grid:
                raise ValueError("all components must share one grid")
            if comp.quadratic is not None and comp.quadratic.any():
                raise ValueError("vector-flow components cannot carry a quadratic background")
        object.__setattr__(self, "f", f)

    @property
    def grid(self) -> GridSpec:
        return self.f[0].grid

    def values(self) -> np.ndarray:
        """Full component values, shape ``grid.shape + (m,)``."""
        return np.stack([c.full_values() for c in self.f], axis=-1)


@dataclass(frozen=True)
class StepControl:
    sigma: float = 0.5
    scheme: str = "rk2"
    t_end: float = 1.0
    sample_every: int = 10

    def __post_init__(self):
        if not (0.0 < self.sigma <= 1.0):
            raise ValueError(f"sigma must lie in (0, 1], got {self.sigma}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not (np.isfinite(self.t_end) and self.t_end >= 0.0):
            raise ValueError(f"t_end must be finite and >= 0, got {self.t_end}")
        if int(self.sample_every) != self.sample_every or self.sample_every < 1:
            raise ValueError(f"sample_every must be a positive integer, got {self.sample_every}")

    def dt(self, grid: GridSpec) -> float:
        return cfl_dt(grid, self.sigma)


def cfl_dt(grid: GridSpec, sigma: float = 1.0) -> float:
    return sigma * min(grid.spacing) ** 2 / (2 * grid.ndim)


def _check_dt(grid, dt):
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    # a hair of slack so that dt computed as cfl_dt(grid, 1) passes
    if dt > cfl_dt(grid) * (1.0 + 1e-8):
        raise ValueError(f"dt={dt:.6g} exceeds the stability bound {cfl_dt(grid):.6g}")


def _finite_or_raise(values, t, what):
    ok = np.isfinite(values)
    if not ok.all():
        bad = tuple(int(i) for i in np.unravel_index(np.argmin(ok), values.shape))
        raise BlowupError(f"blowup/instability: non-finite {what} at index {bad}, t={t:.6g}", index=bad, t=t)


def angle_field(u: ScalarField) -> np.ndarray:
    """Lagrangian angle ``theta(D^2 u)`` at every grid point."""
    return lagrangian_angle(hessian(u).values)


def _theta_of(values, u):
    H = hessian_values(values, u.grid.spacing)
    if u.quadratic is not None:
        H = H + u.quadratic
    with np.errstate(all="ignore"):
        return lagrangian_angle(H) if np.isfinite(H).all() else np.full(values.shape, np.nan)


def potential_step(state: FlowState, dt: float, scheme: str = "rk2") -> FlowState:
    """Advance ``u`` by one explicit step of ``du/dt = theta(D^2 u)``.

    Raises
    ------
    BlowupError
        When the update produces a non-finite value; the message names the
        first offending index.
    """
    u = state.u
    _check_dt(u.grid, dt)
    w = u.values
    t_new = state.t + dt
    with np.errstate(all="ignore"):
        if scheme == "euler":
            w_new = w + dt * _theta_of(w, u)
        elif scheme == "rk2":
            w_half = w + (0.5 * dt) * _theta_of(w, u)
            w_new = w + dt * _theta_of(w_half, u)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
    _finite_or_raise(w_new, t_new, "potential")
    return FlowState(u.with_values(w_new), t_new, state.step_count + 1)


def gradient_components(u: ScalarField) -> tuple:
    """The components of ``Du`` as scalar fields suitable for the vector flow.

    A quadratic background ``1/2 x^T Q x + b.x`` of ``u`` becomes the linear
    background ``Q[a] . x`` plus the constant ``b_a`` of component ``a``.
    """
    grid = u.grid
    dw = gradient(ScalarField(grid, u.values)).values
    comps = []
    for a in range(grid.ndim):
        vals = dw[..., a]
        if u.linear is not None:
            vals = vals + u.linear[a]
        lin = None if u.quadratic is None else u.quadratic[a]
        comps.append(ScalarField(grid, vals, linear=lin))
    return tuple(comps)


def _vector_rhs(comps_values, state):
    grid = state.grid
    n = grid.ndim
    Df = []
    for vals, comp in zip(comps_values, state.f):
        d = gradient(ScalarField(grid, vals)).values if np.isfinite(vals).all() else np.full(grid.shape + (n,), np.nan)
        if comp.linear is not None:
            d = d + comp.linear
        Df.append(d)
    Df = np.stack(Df, axis=-2)  # (..., m, n)
    g = np.eye(n) + np.einsum("...ai,...aj->...ij", Df, Df)
    if not np.isfinite(g).all():
        return [np.full(grid.shape, np.nan) for _ in comps_values]
    g_inv = np.linalg.inv(g)
    return [np.einsum("...ij,...ij->...", g_inv, hessian_values(vals, grid.spacing)) for vals in comps_values]


def vector_step(state: VectorFlowState, dt: float, scheme: str = "rk2") -> VectorFlowState:
    """Advance every component of ``f`` by one explicit step.

    All components are updated with the same inverse metric built from the
    centered gradients of the current (or midpoint) state.
    """
    _check_dt(state.grid, dt)
    w = [c.values for c in state.f]
    t_new = state.t + dt
    with np.errstate(all="ignore"):
        if scheme == "euler":
            w_new = [a + dt * r for a, r in zip(w, _vector_rhs(w, state))]
        elif scheme == "rk2":
            half = [a + (0.5 * dt) * r for a, r in zip(w, _vector_rhs(w, state))]
            w_new = [a + dt * r for a, r in zip(w, _vector_rhs(half, state))]
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
    for vals in w_new:
        _finite_or_raise(vals, t_new, "vector-flow component")
    f_new = tuple(c.with_values(v) for c, v in zip(state.f, w_new))
    return VectorFlowState(f_new, t_new, state.step_count + 1)


def _step_times(t0, t_end, dt):
    nsteps = max(0, int(math.ceil((t_end - t0) / dt - 1e-9)))
    return nsteps


def run(state: FlowState, control: StepControl, eps: float = 0.0, sampler: Optional[Callable] = None):
    """Integrate the potential flow to ``control.t_end``.

    Diagnostics are taken at the start, every ``sample_every`` steps and at the
    final time.  The last step is shortened to land on ``t_end``.

    Returns
    -------
    (FlowState, DiagnosticsSeries)

    Raises
    ------
    BlowupError
        Carrying the last finite ``state`` and the partial ``series`` with its
        ``error`` field set.
    """
    from .analysis import DiagnosticsSeries, diagnostics

    sampler = sampler or (lambda s: diagnostics(s, eps))
    series = DiagnosticsSeries(eps=eps)
    if control.t_end <= state.t:
        return state, series
    dt = control.dt(state.grid)
    t0 = state.t
    nsteps = _step_times(t0, control.t_end, dt)
    series.append(sampler(state))
    osc0 = series.records[0].osc_theta
    log.debug("run: %d steps of dt=%.3g to t=%.3g", nsteps, dt, control.t_end)
    for k in range(1, nsteps + 1):
        t_target = control.t_end if k == nsteps else t0 + k * dt
        try:
            new = potential_step(state, t_target - state.t, control.scheme)
        except BlowupError as exc:
            exc.state, exc.series = state, series
            series.error = str(exc)
            raise
        state = new
        if k % control.sample_every == 0 or k == nsteps:
            rec = sampler(state)
            series.append(rec)
            if rec.osc_theta > osc0 * (1.0 + OSC_ALARM) + 1e-12:
                exc = BlowupError(
                    f"blowup/instability: angle oscillation grew from {osc0:.6g} to {rec.osc_theta:.6g} at t={state.t:.6g}",
                    t=state.t,
                )
                exc.state, exc.series = state, series
                series.error = str(exc)
                raise exc
    return state, series


def run_vector(state: VectorFlowState, dt: float, t_end: float, scheme: str = "rk2", callback=None):
    """Integrate the vector flow to ``t_end`` with steps of at most ``dt``.

    ``callback(state)`` is invoked after every step.
    """
    t0 = state.t
    nsteps = _step_times(t0, t_end, dt)
    for k in range(1, nsteps + 1):
        t_target = t_end if k == nsteps else t0 + k * dt
        state = vector_step(state, t_target - state.t, scheme)
        if callback is not None:
            callback(state)
    return state
