"""Periodic grids, sampled fields and centered finite-difference stencils.

All fields live on a rectangular torus.  A scalar potential may additionally
carry an exact quadratic-plus-linear background,

    u(x) = w(x) + 1/2 x^T Q x + b . x,

where ``w`` is the periodic sampled part.  This is how lifts of torus maps and
exactly flat (quadratic) potentials are represented without breaking the
periodic stencils: derivatives of the background are added analytically.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from itertools import combinations_with_replacement, permutations
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "GridSpec",
    "ScalarField",
    "VectorField",
    "SymMatField",
    "Rank3Field",
    "gradient",
    "hessian",
    "third_derivatives",
    "third_from_hessian",
    "write_lgf",
    "read_lgf",
    "LGFError",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic lattice.

    Parameters
    ----------
    npts : tuple of int
        Points per axis.  Each must be even and at least 8.
    spacing : tuple of float
        Grid step per axis; the period of axis ``d`` is ``npts[d] * spacing[d]``.
    origin : tuple of float
        Coordinate of index ``(0, ..., 0)``.
    """

    npts: tuple
    spacing: tuple
    origin: tuple

    def __post_init__(self):
        npts = tuple(int(n) for n in self.npts)
        spacing = tuple(float(h) for h in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if not 1 <= len(npts) <= 3:
            raise ValueError(f"ndim must be 1, 2 or 3, got {len(npts)}")
        if len(spacing) != len(npts) or len(origin) != len(npts):
            raise ValueError("npts, spacing and origin must have equal length")
        for n in npts:
            if n < 8 or n % 2:
                raise ValueError(f"npts entries must be even and >= 8, got {n}")
        for h in spacing:
            if not (np.isfinite(h) and h > 0):
                raise ValueError(f"spacing entries must be positive, got {h}")
        if not all(np.isfinite(origin)):
            raise ValueError("origin must be finite")
        if int(np.prod(npts, dtype=np.int64)) >= np.iinfo(np.intp).max:
            raise ValueError("grid too large for the index type")
        object.__setattr__(self, "npts", npts)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def make(cls, npts, extent=TWO_PI, origin=0.0) -> "GridSpec":
        """Build a grid from points per axis and the period of each axis.

        Scalars are broadcast; ``npts`` fixes the dimension.
        """
        npts = (int(npts),) if np.isscalar(npts) else tuple(int(n) for n in npts)
        ndim = len(npts)
        extent = _broadcast(extent, ndim, "extent")
        origin = _broadcast(origin, ndim, "origin")
        for L in extent:
            if not (np.isfinite(L) and L > 0):
                raise ValueError(f"extent entries must be positive, got {L}")
        return cls(npts, tuple(L / n for L, n in zip(extent, npts)), origin)

    @property
    def ndim(self) -> int:
        return len(self.npts)

    @property
    def shape(self) -> tuple:
        return self.npts

    @property
    def size(self) -> int:
        return int(np.prod(self.npts))

    @property
    def extent(self) -> tuple:
        return tuple(n * h for n, h in zip(self.npts, self.spacing))

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing[axis] * np.arange(self.npts[axis])

    def coords(self) -> np.ndarray:
        """Coordinates of every grid point, shape ``npts + (ndim,)``."""
        mesh = np.meshgrid(*(self.axis_coords(d) for d in range(self.ndim)), indexing="ij")
        return np.stack(mesh, axis=-1)

    def zeros(self) -> "ScalarField":
        return ScalarField(self, np.zeros(self.npts))


def _broadcast(value, ndim, name):
    if np.isscalar(value):
        return (float(value),) * ndim
    value = tuple(float(v) for v in value)
    if len(value) != ndim:
        raise ValueError(f"{name} must have {ndim} entries")
    return value


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        bad = np.unravel_index(np.argmin(np.isfinite(values)), values.shape)
        raise FloatingPointError(f"{what} has a non-finite entry at index {tuple(int(i) for i in bad)}")


@dataclass(frozen=True)
class ScalarField:
    """A potential sampled on a grid, with optional exact quadratic background.

    ``values`` holds the periodic part ``w``.  ``quadratic`` (symmetric
    ``ndim x ndim``) and ``linear`` (length ``ndim``) describe the background
    ``1/2 x^T Q x + b . x`` in absolute coordinates; ``None`` means zero.
    """

    grid: GridSpec
    values: np.ndarray
    quadratic: Optional[np.ndarray] = None
    linear: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != self.grid.shape:
            raise ValueError(f"values shape {values.shape} does not match grid {self.grid.shape}")
        _check_finite(values, "scalar field")
        object.__setattr__(self, "values", values)
        n = self.grid.ndim
        if self.quadratic is not None:
            Q = np.array(self.quadratic, dtype=np.float64).reshape(n, n)
            if not np.array_equal(Q, Q.T):
                raise ValueError("quadratic background must be symmetric")
            _check_finite(Q, "quadratic background")
            object.__setattr__(self, "quadratic", Q)
        if self.linear is not None:
            b = np.array(self.linear, dtype=np.float64).reshape(n)
            _check_finite(b, "linear background")
            object.__setattr__(self, "linear", b)

    @property
    def is_periodic(self) -> bool:
        return (self.quadratic is None or not self.quadratic.any()) and (
            self.linear is None or not self.linear.any()
        )

    def with_values(self, values) -> "ScalarField":
        """Same grid and background, new periodic part."""
        return ScalarField(self.grid, values, self.quadratic, self.linear)

    def background_values(self) -> np.ndarray:
        out = np.zeros(self.grid.shape)
        if self.is_periodic:
            return out
        x = self.grid.coords()
        if self.quadratic is not None:
            out += 0.5 * np.einsum("...i,ij,...j->...", x, self.quadratic, x)
        if self.linear is not None:
            out += x @ self.linear
        return out

    def full_values(self) -> np.ndarray:
        """Samples of the whole potential, background included."""
        if self.is_periodic:
            return self.values.copy()
        return self.values + self.background_values()


@dataclass(frozen=True)
class VectorField:
    """``ncomp`` real components per grid point, shape ``npts + (ncomp,)``."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape[:-1] != self.grid.shape or values.ndim != self.grid.ndim + 1:
            raise ValueError("vector field shape does not match grid")
        _check_finite(values, "vector field")
        object.__setattr__(self, "values", values)

    @property
    def ncomp(self) -> int:
        return self.values.shape[-1]

    def component(self, a: int) -> ScalarField:
        return ScalarField(self.grid, self.values[..., a])


def _sym_pairs(n):
    return list(combinations_with_replacement(range(n), 2))


def _sym_triples(n):
    return list(combinations_with_replacement(range(n), 3))


@dataclass(frozen=True)
class SymMatField:
    """Symmetric ``n x n`` matrix per grid point, stored in full form.

    :meth:`packed` gives the ``n(n+1)/2`` upper-triangle components in the
    order ``(0,0), (0,1), ..., (1,1), ...``; :meth:`from_packed` inverts it
    exactly.
    """

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        n = self.grid.ndim
        if values.shape != self.grid.shape + (n, n):
            raise ValueError("matrix field shape does not match grid")
        _check_finite(values, "matrix field")
        object.__setattr__(self, "values", values)

    def packed(self) -> np.ndarray:
        return np.stack([self.values[..., i, j] for i, j in _sym_pairs(self.grid.ndim)], axis=-1)

    @classmethod
    def from_packed(cls, grid: GridSpec, packed: np.ndarray) -> "SymMatField":
        n = grid.ndim
        pairs = _sym_pairs(n)
        if packed.shape != grid.shape + (len(pairs),):
            raise ValueError("packed matrix field has wrong component count")
        full = np.empty(grid.shape + (n, n))
        for c, (i, j) in enumerate(pairs):
            full[..., i, j] = packed[..., c]
            full[..., j, i] = packed[..., c]
        return cls(grid, full)


@dataclass(frozen=True)
class Rank3Field:
    """Fully symmetric rank-3 tensor per grid point, stored in full form.

    ``asymmetry`` records the largest deviation of the raw difference tensor
    from its symmetrization (zero when built directly).
    """

    grid: GridSpec
    values: np.ndarray
    asymmetry: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        n = self.grid.ndim
        if values.shape != self.grid.shape + (n, n, n):
            raise ValueError("rank-3 field shape does not match grid")
        _check_finite(values, "rank-3 field")
        object.__setattr__(self, "values", values)

    def packed(self) -> np.ndarray:
        return np.stack([self.values[..., i, j, k] for i, j, k in _sym_triples(self.grid.ndim)], axis=-1)

    @classmethod
    def from_packed(cls, grid: GridSpec, packed: np.ndarray) -> "Rank3Field":
        n = grid.ndim
        triples = _sym_triples(n)
        if packed.shape != grid.shape + (len(triples),):
            raise ValueError("packed rank-3 field has wrong component count")
        full = np.empty(grid.shape + (n, n, n))
        for c, idx in enumerate(triples):
            for p in set(permutations(idx)):
                full[(Ellipsis,) + p] = packed[..., c]
        return cls(grid, full)


# ---------------------------------------------------------------------------
# stencils
# ---------------------------------------------------------------------------

def _d1(f, axis, h):
    # roll by -1 brings f[i+1] to position i
    return (np.roll(f, -1, axis) - np.roll(f, 1, axis)) / (2.0 * h)


def _d2(f, axis, h):
    return (np.roll(f, -1, axis) + np.roll(f, 1, axis) - 2.0 * f) / (h * h)


def _d11(f, a, b, ha, hb):
    fp = np.roll(f, -1, a)
    fm = np.roll(f, 1, a)
    return ((np.roll(fp, -1, b) - np.roll(fp, 1, b)) - (np.roll(fm, -1, b) - np.roll(fm, 1, b))) / (
        4.0 * ha * hb
    )


def gradient(f: ScalarField) -> VectorField:
    """Centered first differences ``(f[i+1] - f[i-1]) / 2h`` on each axis.

    The background contributes ``Q x + b`` exactly.
    """
    g = f.grid
    comps = [_d1(f.values, d, g.spacing[d]) for d in range(g.ndim)]
    out = np.stack(comps, axis=-1)
    if not f.is_periodic:
        x = g.coords()
        if f.quadratic is not None:
            out = out + x @ f.quadratic.T
        if f.linear is not None:
            out = out + f.linear
    return VectorField(g, out)


def hessian_values(values: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    """Second-difference matrix of a periodic array, shape ``values.shape + (n, n)``.

    Off-diagonal entries are computed once and mirrored, so the result is
    symmetric bit for bit.
    """
    n = values.ndim
    p = np.pad(values, 1, mode="wrap")
    centre = (slice(1, -1),) * n

    def shifted(offsets):
        return p[tuple(slice(1 + o, p.shape[d] - 1 + o) for d, o in enumerate(offsets))]

    out = np.empty(values.shape + (n, n))
    for a in range(n):
        e = [0] * n
        e[a] = 1
        plus = shifted(e)
        e[a] = -1
        minus = shifted(e)
        out[..., a, a] = (plus + minus - 2.0 * p[centre]) / (spacing[a] * spacing[a])
        for b in range(a + 1, n):
            o = [0] * n
            o[a], o[b] = 1, 1
            fpp = shifted(o)
            o[b] = -1
            fpm = shifted(o)
            o[a] = -1
            fmm = shifted(o)
            o[b] = 1
            fmp = shifted(o)
            cross = ((fpp - fpm) - (fmp - fmm)) / (4.0 * spacing[a] * spacing[b])
            out[..., a, b] = cross
            out[..., b, a] = cross
    return out


def hessian(f: ScalarField) -> SymMatField:
    """Centered second differences of ``f`` plus the background matrix."""
    out = hessian_values(f.values, f.grid.spacing)
    if f.quadratic is not None:
        out = out + f.quadratic
    return SymMatField(f.grid, out)


def _symmetrize3(raw):
    n = raw.shape[-1]
    out = np.empty_like(raw)
    defect = 0.0
    for idx in _sym_triples(n):
        perms = list(permutations(idx))
        avg = sum(raw[(Ellipsis,) + p] for p in perms) / len(perms)
        for p in set(perms):
            defect = max(defect, float(np.max(np.abs(raw[(Ellipsis,) + p] - avg))))
            out[(Ellipsis,) + p] = avg
    return out, defect


def third_derivatives(f: ScalarField) -> Rank3Field:
    """Centered first difference of the Hessian field along each axis.

    The raw tensor ``T[a, b, c] = D_c H[a, b]`` is symmetric in ``a, b`` but
    not in general under swaps with ``c``; it is replaced by its average over
    all index permutations and the largest discrepancy is kept in
    ``asymmetry``.  The background has no third derivative.
    """
    return third_from_hessian(f.grid, hessian_values(f.values, f.grid.spacing))


def third_from_hessian(g: GridSpec, H: np.ndarray) -> Rank3Field:
    """Same as :func:`third_derivatives` given the periodic part of the Hessian."""
    n = g.ndim
    raw = np.empty(g.shape + (n, n, n))
    for c in range(n):
        raw[..., c] = _d1(H, c, g.spacing[c])
    sym, defect = _symmetrize3(raw)
    return Rank3Field(g, sym, defect)


# ---------------------------------------------------------------------------
# LGF1 snapshot files
# ---------------------------------------------------------------------------

LGF_MAGIC = b"LGF1"
LGF_VERSION = 1


class LGFError(ValueError):
    """Malformed or unsupported field file."""


def write_lgf(path: Union[str, Path], f: ScalarField) -> None:
    """Write a scalar field in the LGF1 binary layout.

    The payload is the full potential, background included, as little-endian
    float64 in C order (last axis fastest).
    """
    g = f.grid
    header = struct.pack("<4sII", LGF_MAGIC, LGF_VERSION, g.ndim)
    for n, h, o in zip(g.npts, g.spacing, g.origin):
        header += struct.pack("<Qdd", n, h, o)
    payload = np.ascontiguousarray(f.full_values(), dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def read_lgf(path: Union[str, Path]) -> ScalarField:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise LGFError("file too short for an LGF1 header")
    magic, version, ndim = struct.unpack_from("<4sII", data, 0)
    if magic != LGF_MAGIC:
        raise LGFError(f"bad magic {magic!r}")
    if version != LGF_VERSION:
        raise LGFError(f"unsupported LGF version {version}")
    if not 1 <= ndim <= 3:
        raise LGFError(f"unsupported ndim {ndim}")
    off = 12
    npts, spacing, origin = [], [], []
    for _ in range(ndim):
        if len(data) < off + 24:
            raise LGFError("truncated axis header")
        n, h, o = struct.unpack_from("<Qdd", data, off)
        off += 24
        npts.append(n)
        spacing.append(h)
        origin.append(o)
    try:
        grid = GridSpec(tuple(npts), tuple(spacing), tuple(origin))
    except ValueError as exc:
        raise LGFError(str(exc)) from exc
    expected = grid.size * 8
    if len(data) - off != expected:
        raise LGFError(f"payload has {len(data) - off} bytes, expected {expected}")
    values = np.frombuffer(data, dtype="<f8", count=grid.size, offset=off).reshape(grid.shape)
    return ScalarField(grid, values.astype(np.float64))
