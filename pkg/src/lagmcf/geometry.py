"""Pointwise geometry of the Lagrangian graph ``x -> (x, Du(x))``.

Every function accepts a single matrix of shape ``(n, n)`` or a stack of
them with shape ``(..., n, n)``; reductions over the leading axes are left to
the caller.  The second fundamental form is taken as ``h_ijk = -u_ijk``, so
the mean curvature form satisfies ``H_i = -d_i theta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import SymMatField

__all__ = [
    "EigenConvergenceError",
    "GeometrySample",
    "sym_eigh",
    "sym_eigenvalues",
    "lagrangian_angle",
    "angle_via_logdet",
    "graph_geometry",
    "mean_curvature_sq",
    "pinch_margin",
    "pinch_threshold",
    "hessian_eig_extremes",
    "metric_trace_of_s",
]

JACOBI_TOL = 1e-14
JACOBI_MAX_SWEEPS = 50


class EigenConvergenceError(ArithmeticError):
    pass


def _as_stack(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValueError(f"expected (..., n, n) matrices, got shape {m.shape}")
    return m


def _eigvals2(m):
    a = m[..., 0, 0]
    b = m[..., 0, 1]
    c = m[..., 1, 1]
    mean = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    return np.stack([mean - rad, mean + rad], axis=-1)


def _eigh2(m):
    a = m[..., 0, 0]
    b = m[..., 0, 1]
    c = m[..., 1, 1]
    vals = _eigvals2(m)
    # rotation angle that diagonalizes; column 1 belongs to the larger eigenvalue
    phi = 0.5 * np.arctan2(2.0 * b, a - c)
    cs, sn = np.cos(phi), np.sin(phi)
    vecs = np.empty(m.shape)
    vecs[..., 0, 1] = cs
    vecs[..., 1, 1] = sn
    vecs[..., 0, 0] = -sn
    vecs[..., 1, 0] = cs
    return vals, vecs


def _eigh_jacobi(m, vectors=True):
    A = m.reshape(-1, *m.shape[-2:]).copy()
    n = A.shape[-1]
    batch = A.shape[0]
    V = np.broadcast_to(np.eye(n), A.shape).copy()
    scale = np.sqrt(np.sum(A * A, axis=(-2, -1)))
    floor = JACOBI_TOL * np.maximum(scale, 1.0)
    rows = np.arange(batch)
    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.sqrt(2.0 * sum(A[:, p, q] ** 2 for p in range(n - 1) for q in range(p + 1, n)))
        if np.all(off <= floor):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[:, p, q]
                active = np.abs(apq) > 0.0
                if not active.any():
                    continue
                with np.errstate(over="ignore"):
                    # |tau| overflowing to inf gives t = 0, the correct limit
                    tau = np.where(active, (A[:, q, q] - A[:, p, p]) / np.where(active, 2.0 * apq, 1.0), 0.0)
                    t = np.where(active, np.sign(tau) / (np.abs(tau) + np.hypot(1.0, tau)), 0.0)
                t = np.where(active & (tau == 0.0), 1.0, t)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                J = np.broadcast_to(np.eye(n), A.shape).copy()
                J[rows, p, p] = c
                J[rows, q, q] = c
                J[rows, p, q] = s
                J[rows, q, p] = -s
                A = np.swapaxes(J, -1, -2) @ A @ J
                A[:, p, q] = 0.0
                A[:, q, p] = 0.0
                if vectors:
                    V = V @ J
    else:
        raise EigenConvergenceError(f"Jacobi iteration did not converge in {JACOBI_MAX_SWEEPS} sweeps")
    vals = np.diagonal(A, axis1=-2, axis2=-1).copy()
    order = np.argsort(vals, axis=-1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=-1)
    V = np.take_along_axis(V, order[:, None, :], axis=-1)
    return vals.reshape(m.shape[:-1]), V.reshape(m.shape)


def sym_eigh(m):
    """Ascending eigenvalues and orthonormal eigenvectors (as columns).

    Closed form for ``n <= 2``; cyclic Jacobi rotations for larger ``n``,
    iterated until the off-diagonal Frobenius norm falls below ``1e-14``
    relative to the matrix norm.
    """
    m = _as_stack(m)
    n = m.shape[-1]
    if n == 1:
        return m[..., 0].copy(), np.ones(m.shape)
    if n == 2:
        return _eigh2(m)
    return _eigh_jacobi(m)


def sym_eigenvalues(m) -> np.ndarray:
    """Ascending eigenvalues only; same algorithms as :func:`sym_eigh`."""
    m = _as_stack(m)
    n = m.shape[-1]
    if n == 1:
        return m[..., 0].copy()
    if n == 2:
        return _eigvals2(m)
    return _eigh_jacobi(m, vectors=False)[0]


def lagrangian_angle(m) -> np.ndarray:
    """``sum_i arctan(lambda_i)`` over the eigenvalues of ``m``."""
    m = _as_stack(m)
    if m.shape[-1] == 2:
        # hot path of the 2D flow; same closed-form eigenvalues without stacking
        mean = 0.5 * (m[..., 0, 0] + m[..., 1, 1])
        rad = np.hypot(0.5 * (m[..., 0, 0] - m[..., 1, 1]), m[..., 0, 1])
        return np.arctan(mean - rad) + np.arctan(mean + rad)
    return np.sum(np.arctan(sym_eigenvalues(m)), axis=-1)


def angle_via_logdet(m) -> np.ndarray:
    """``Im log[det(I + i m) / sqrt(det(I + m^2))]`` evaluated on the eigenbasis.

    The determinant ratio is the product of the unit complex numbers
    ``(1 + i lambda_k) / sqrt(1 + lambda_k^2)``.  The principal argument of
    that product is moved onto the branch lying in
    ``(-n_neg pi/2, n_pos pi/2)``; for ``n <= 3`` that interval is shorter
    than ``2 pi`` so the branch is unique.
    """
    lam = sym_eigenvalues(m)
    z = (1.0 + 1j * lam) / np.sqrt(1.0 + lam * lam)
    arg = np.angle(np.prod(z, axis=-1))
    lo = -0.5 * np.pi * np.sum(lam < 0, axis=-1)
    # shift by whole turns into [lo, lo + 2 pi)
    k = np.floor((arg - lo) / (2.0 * np.pi))
    return arg - 2.0 * np.pi * k


@dataclass
class GeometrySample:
    """Geometric quantities of the graph at one point or a stack of points.

    Attributes
    ----------
    lam : eigenvalues of D^2 u, ascending
    theta : Lagrangian angle
    g, g_inv : induced metric ``I + (D^2 u)^2`` and its inverse
    s : ``I - (D^2 u)^2``, the pull-back of the conjugation form
    h : second fundamental form ``-D^3 u``
    H : mean curvature form ``g^{jk} h_{ijk}``
    normH2, normA2 : ``|H|^2`` and ``|A|^2``, both contracted with ``g_inv``
    """

    lam: np.ndarray
    theta: np.ndarray
    g: np.ndarray
    g_inv: np.ndarray
    s: np.ndarray
    h: np.ndarray
    H: np.ndarray
    normH2: np.ndarray
    normA2: np.ndarray


def _sym_square(m):
    # batched matmul is slow for 2x2 stacks; fill the upper triangle by hand
    n = m.shape[-1]
    if n != 2:
        return m @ m
    out = np.empty(m.shape)
    for i in range(n):
        for j in range(i, n):
            v = sum(m[..., i, k] * m[..., k, j] for k in range(n))
            out[..., i, j] = v
            out[..., j, i] = v
    return out


def _inv_spd(m):
    """Inverse of a stack of small symmetric matrices with determinant >= 1."""
    n = m.shape[-1]
    if n == 1:
        return 1.0 / m
    if n == 2:
        a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 1, 1]
        det = a * c - b * b
        out = np.empty(m.shape)
        out[..., 0, 0] = c / det
        out[..., 1, 1] = a / det
        out[..., 0, 1] = out[..., 1, 0] = -b / det
        return out
    return np.linalg.inv(m)


def _trace_first_two(g_inv, h):
    n = g_inv.shape[-1]
    out = np.empty(h.shape[:-2])
    for k in range(n):
        out[..., k] = sum(g_inv[..., i, j] * h[..., i, j, k] for i in range(n) for j in range(n))
    return out


def _norm_a2(g_inv, h):
    """``g^{ip} g^{jq} g^{kr} h_ijk h_pqr``, raising one index at a time.

    Components are held as separate contiguous arrays; the small trailing axes
    make vectorized contractions slower than these explicit loops.
    """
    n = g_inv.shape[-1]
    idx = [(i, j, k) for i in range(n) for j in range(n) for k in range(n)]
    gc = [[np.ascontiguousarray(g_inv[..., i, p]) for p in range(n)] for i in range(n)]
    down = {key: np.ascontiguousarray(h[(Ellipsis,) + key]) for key in idx}
    up = down
    for _ in range(3):
        nxt = {}
        for i, j, k in idx:
            # contract the leading slot, then rotate it to the back
            acc = gc[0][i] * up[(0, j, k)]
            for q in range(1, n):
                acc += gc[q][i] * up[(q, j, k)]
            nxt[(j, k, i)] = acc
        up = nxt
    total = up[idx[0]] * down[idx[0]]
    for key in idx[1:]:
        total += up[key] * down[key]
    return total


def graph_geometry(hess, third) -> GeometrySample:
    hess = _as_stack(hess)
    third = np.asarray(third, dtype=np.float64)
    n = hess.shape[-1]
    if third.shape != hess.shape + (n,):
        raise ValueError("third-derivative tensor does not match the Hessian")
    eye = np.eye(n)
    sq = _sym_square(hess)
    g = eye + sq
    s = eye - sq
    g_inv = _inv_spd(g)
    lam = sym_eigenvalues(hess)
    theta = np.sum(np.arctan(lam), axis=-1)
    h = -third
    H = _trace_first_two(g_inv, h)
    normH2 = sum(g_inv[..., k, l] * H[..., k] * H[..., l] for k in range(n) for l in range(n))
    normA2 = _norm_a2(g_inv, h)
    return GeometrySample(lam, theta, g, g_inv, s, h, H, np.maximum(normH2, 0.0), np.maximum(normA2, 0.0))


def mean_curvature_sq(hess, third) -> np.ndarray:
    """``|H|^2`` alone; what :func:`graph_geometry` gives as ``normH2`` without the rest."""
    hess = _as_stack(hess)
    n = hess.shape[-1]
    g_inv = _inv_spd(np.eye(n) + _sym_square(hess))
    H = _trace_first_two(g_inv, -np.asarray(third, dtype=np.float64))
    return np.maximum(sum(g_inv[..., k, l] * H[..., k] * H[..., l] for k in range(n) for l in range(n)), 0.0)


def metric_trace_of_s(hess) -> np.ndarray:
    """``g^{ij} S_ij``; never exceeds ``n``."""
    hess = _as_stack(hess)
    eye = np.eye(hess.shape[-1])
    sq = hess @ hess
    return np.sum(_inv_spd(eye + sq) * (eye - sq), axis=(-2, -1))


def pinch_margin(hess, eps: float) -> np.ndarray:
    """Smallest eigenvalue of ``S - eps g`` with ``S = I - H^2``, ``g = I + H^2``.

    Nonnegative exactly when every eigenvalue of the Hessian satisfies
    ``lambda^2 <= (1 - eps) / (1 + eps)``.
    """
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must lie in [0, 1), got {eps}")
    hess = _as_stack(hess)
    eye = np.eye(hess.shape[-1])
    sq = hess @ hess
    return sym_eigenvalues((eye - sq) - eps * (eye + sq))[..., 0]


def pinch_threshold(lam_max: float) -> float:
    """The ``eps`` at which a Hessian bound ``|lambda| <= lam_max`` is exactly pinched."""
    l2 = lam_max * lam_max
    return (1.0 - l2) / (1.0 + l2)


def hessian_eig_extremes(field) -> tuple:
    """``(min lambda_min, max lambda_max)`` over a matrix field or stack."""
    values = field.values if isinstance(field, SymMatField) else _as_stack(field)
    lam = sym_eigenvalues(values)
    return float(np.min(lam[..., 0])), float(np.max(lam[..., -1]))
