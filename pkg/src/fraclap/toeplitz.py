"""Multilevel Toeplitz representation of the discrete operator and its fast apply.

The matrix entry coupling interior nodes ``i`` and ``j`` is
``-c_{d,alpha} * a[|i_1 - j_1|, ..., |i_d - j_d|]``, so the whole operator is
determined by a ``d``-dimensional table of first-column entries.  Products are
computed by embedding that table in an even circulant of size ``P_k >= 2 n_k``
per axis.  The circulant is real and even, so its eigenvalues are a type-I DCT
of the table and are stored at ``(P_k/2 + 1)`` frequencies per axis only.

Vectors are flat arrays ordered x-fastest (then y, then z).  Internally they
are viewed as arrays of shape ``(n_z, n_y, n_x)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product

import numpy as np
import scipy.fft as sfft
from scipy import linalg

from .errors import CapExceeded, DomainError, ShapeMismatch

__all__ = [
    "GridSpec",
    "Field",
    "FractionalOperator",
    "assemble_operator",
    "apply_fft",
    "apply_dense",
    "dense_matrix",
    "smallest_eigen_check",
    "DENSE_CAP",
]

DENSE_CAP = 10_000
_WORKERS = None


def set_fft_workers(n):
    """Cap the number of threads used by the FFT backend (``None`` = library default)."""
    global _WORKERS
    _WORKERS = n


def _frac(x):
    if isinstance(x, Fraction):
        return x
    try:
        if isinstance(x, str):
            return Fraction(x.strip())
        return Fraction(x).limit_denominator(1 << 40)
    except (ValueError, TypeError, ZeroDivisionError, OverflowError):
        raise DomainError(f"not a valid mesh size: {x!r}") from None


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on an axis-aligned box with homogeneous exterior data.

    The longest side has ``N`` intervals with ``h = L / N``; every other axis
    gets the smallest ``N_i`` with ``a_i + N_i h >= b_i``.  Only the
    ``N_i - 1`` interior nodes per axis carry unknowns.
    """

    bounds: tuple
    h: float
    N: int
    n_interior: tuple

    @classmethod
    def from_bounds(cls, bounds, h):
        bounds = tuple((float(a), float(b)) for a, b in bounds)
        if len(bounds) not in (2, 3):
            raise DomainError("grids must be 2D or 3D")
        if any(not b > a for a, b in bounds):
            raise DomainError(f"empty axis in bounds {bounds}")
        hf = _frac(h)
        if hf <= 0:
            raise DomainError(f"h must be positive, got {h}")
        lengths = [_frac(b) - _frac(a) for a, b in bounds]
        L = max(lengths)
        ratio = L / hf
        if ratio.denominator != 1:
            raise DomainError(f"h = {hf} does not divide the longest side {L}")
        N = int(ratio)
        counts = [math.ceil(length / hf) for length in lengths]
        return cls(bounds=bounds, h=float(hf), N=N,
                   n_interior=tuple(c - 1 for c in counts))

    @classmethod
    def box(cls, lo, hi, d, h):
        return cls.from_bounds([(lo, hi)] * d, h)

    @property
    def d(self):
        return len(self.bounds)

    @property
    def L(self):
        return self.N * self.h

    @property
    def size(self):
        return int(np.prod(self.n_interior))

    @property
    def array_shape(self):
        """Shape of the field viewed as an array, slowest axis first: (n_z,) n_y, n_x."""
        return tuple(reversed(self.n_interior))

    def axes(self):
        """Interior node coordinates per axis, in x, y(, z) order."""
        return [a + self.h * np.arange(1, n + 1)
                for (a, _), n in zip(self.bounds, self.n_interior)]

    def mesh(self):
        """Coordinate arrays shaped like :attr:`array_shape`, in x, y(, z) order."""
        grids = np.meshgrid(*reversed(self.axes()), indexing="ij")
        return list(reversed(grids))

    def points(self):
        """``(M, d)`` array of interior nodes in field order."""
        return np.stack([g.ravel() for g in self.mesh()], axis=1)

    def to_dict(self):
        return {"bounds": [list(b) for b in self.bounds], "h": self.h, "N": self.N,
                "n_interior": list(self.n_interior), "ordering": "x-fastest"}


@dataclass(eq=False)
class Field:
    """Interior-node values of a scalar function, flat and x-fastest."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.size:
            raise ShapeMismatch(
                f"field has {self.values.size} values, grid has {self.grid.size} nodes")

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, fn(*grid.mesh()).ravel())

    def as_array(self):
        return self.values.reshape(self.grid.array_shape)


def _even_fast_len(n):
    size = sfft.next_fast_len(n, real=True)
    while size % 2:
        size = sfft.next_fast_len(size + 1, real=True)
    return size


@dataclass(eq=False)
class FractionalOperator:
    """Symmetric multilevel Toeplitz matrix ``A_d`` in first-column form.

    Attributes
    ----------
    first_col : ndarray
        Entries ``t[|dz|, |dy|, |dx|]`` shaped like :attr:`GridSpec.array_shape`.
    fft_shape : tuple
        Even circulant sizes per array axis.
    symbol : ndarray
        Eigenvalues of the embedded circulant at frequencies ``0..P_k/2``.
    """

    grid: GridSpec
    params: object
    first_col: np.ndarray = field(repr=False)
    fft_shape: tuple
    symbol: np.ndarray = field(repr=False)
    dense_cap: int = DENSE_CAP

    @property
    def size(self):
        return self.grid.size

    @property
    def shape(self):
        return (self.size, self.size)

    @property
    def diagonal(self):
        return float(self.first_col[(0,) * self.grid.d])

    def _coerce(self, u):
        if isinstance(u, Field):
            if u.grid != self.grid:
                raise ShapeMismatch("field lives on a different grid")
            return u.values, True, None
        arr = np.asarray(u, dtype=float)
        if arr.size != self.size:
            raise ShapeMismatch(f"expected {self.size} values, got {arr.size}")
        return arr.ravel(), False, arr.shape

    def _wrap(self, out, as_field, shape):
        if as_field:
            return Field(self.grid, out)
        return out.reshape(shape)

    def _matvec_fft(self, flat):
        shape = self.grid.array_shape
        d = len(shape)
        x = flat.reshape(shape)
        P = self.fft_shape
        X = sfft.rfft(x, n=P[-1], axis=-1, workers=_WORKERS)
        for ax in range(d - 2, -1, -1):
            X = sfft.fft(X, n=P[ax], axis=ax, overwrite_x=True, workers=_WORKERS)
        _multiply_even(X, self.symbol)
        for ax in range(d - 1):
            X = sfft.ifft(X, axis=ax, overwrite_x=True, workers=_WORKERS)
            X = X[(slice(None),) * ax + (slice(0, shape[ax]),)]
        y = sfft.irfft(X, n=P[-1], axis=-1, workers=_WORKERS)
        return np.ascontiguousarray(y[..., : shape[-1]]).ravel()

    def apply(self, u):
        """Return ``A u`` via circulant embedding (also available as ``op @ u``)."""
        flat, as_field, shape = self._coerce(u)
        return self._wrap(self._matvec_fft(flat), as_field, shape)

    matvec = apply

    def __matmul__(self, u):
        return self.apply(u)

    def apply_dense(self, u):
        """Direct ``O(M^2)`` evaluation of the sum, one output row at a time."""
        flat, as_field, shape = self._coerce(u)
        self._check_cap()
        idx = _node_indices(self.grid)
        out = np.empty_like(flat)
        for row in range(self.size):
            delta = np.abs(idx - idx[row])
            out[row] = self.first_col[tuple(delta.T)] @ flat
        return self._wrap(out, as_field, shape)

    def to_dense(self):
        self._check_cap()
        idx = _node_indices(self.grid)
        delta = np.abs(idx[:, None, :] - idx[None, :, :])
        return self.first_col[tuple(np.moveaxis(delta, -1, 0))]

    def _check_cap(self):
        if self.size > self.dense_cap:
            raise CapExceeded(
                f"dense evaluation needs M <= {self.dense_cap}, grid has M = {self.size}")


def _node_indices(grid):
    """``(M, d)`` integer node indices in array-axis order (z, y, x)."""
    return np.indices(grid.array_shape).reshape(grid.d, -1).T


def _multiply_even(X, symbol):
    """In-place ``X *= S`` where ``S`` is even along every axis except the last.

    ``symbol`` holds frequencies ``0..P/2`` on every axis; the upper half of a
    full axis of length ``P`` mirrors ``P/2 - 1 .. 1``.
    """
    lead = X.ndim - 1
    for halves in product((0, 1), repeat=lead):
        xs, ss = [], []
        for ax, upper in enumerate(halves):
            half = symbol.shape[ax] - 1
            if upper:
                xs.append(slice(half + 1, None))
                ss.append(slice(half - 1, 0, -1))
            else:
                xs.append(slice(0, half + 1))
                ss.append(slice(None))
        X[tuple(xs)] *= symbol[tuple(ss)]


def assemble_operator(stencil, grid, dense_cap=DENSE_CAP):
    """Build the Toeplitz operator for ``grid`` from a coefficient table.

    ``stencil.N`` and ``stencil.h`` must match the grid.  The matrix entries are
    ``-c_{d,alpha} a[|delta|]`` for offsets between interior nodes.
    """
    if stencil.d != grid.d:
        raise ShapeMismatch(f"{stencil.d}D stencil for a {grid.d}D grid")
    if stencil.N != grid.N or not math.isclose(stencil.h, grid.h, rel_tol=1e-12):
        raise ShapeMismatch(
            f"stencil (N={stencil.N}, h={stencil.h}) does not match grid "
            f"(N={grid.N}, h={grid.h})")
    shape = grid.array_shape
    if any(n < 1 for n in shape):
        raise ShapeMismatch("grid has no interior nodes")
    # table index order is irrelevant (coefficients are permutation symmetric),
    # but slice in array-axis order to keep the mapping explicit
    first_col = -stencil.c_norm * np.ascontiguousarray(
        stencil.coeffs[tuple(slice(0, n) for n in shape)])
    P = tuple(_even_fast_len(2 * n) for n in shape)
    padded = np.zeros(tuple(p // 2 + 1 for p in P))
    padded[tuple(slice(0, n) for n in shape)] = first_col
    symbol = sfft.dctn(padded, type=1, workers=_WORKERS)
    first_col.flags.writeable = False
    symbol.flags.writeable = False
    return FractionalOperator(grid=grid, params=stencil.params, first_col=first_col,
                              fft_shape=P, symbol=symbol, dense_cap=dense_cap)


def apply_fft(op, u):
    return op.apply(u)


def apply_dense(op, u):
    return op.apply_dense(u)


def dense_matrix(op):
    return op.to_dense()


def smallest_eigen_check(op):
    """Smallest eigenvalue of the dense matrix (must be positive)."""
    A = op.to_dense()
    return float(linalg.eigh(A, eigvals_only=True, subset_by_index=[0, 0])[0])
