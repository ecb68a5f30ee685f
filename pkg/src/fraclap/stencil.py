"""Finite difference coefficients of the discrete fractional Laplacian.

For a splitting parameter ``gamma`` in ``(alpha, 2]`` the operator at a node is

    -c_{d,alpha} * sum_k a_k u(x + k h),

summed over integer offsets ``k``.  ``a_k`` depends on ``|k_1|, ..., |k_d|``
only and is stored as a table ``coeffs[m, n(, s)]`` for indices ``0..N``.
Entries with any index equal to ``N`` multiply nodes outside the domain and
only enter the centre coefficient ``coeffs[0, ...]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations, product

import numpy as np
from scipy import special

from .errors import DomainError
from .singquad import DEFAULT_QUAD, Box, cell_weight, tail_weight, unit_cell_weights

__all__ = [
    "FracParams",
    "Stencil",
    "norm_const",
    "build_stencil",
    "coefficient_entry",
    "build_stencil_2d",
    "build_stencil_3d",
]


@dataclass(frozen=True)
class FracParams:
    """Dimension, fractional power and splitting parameter.

    ``gamma = 2`` (the default) is the choice that gives second order
    accuracy for smooth functions.
    """

    d: int
    alpha: float
    gamma: float = 2.0

    def __post_init__(self):
        if self.d not in (2, 3):
            raise DomainError(f"dimension must be 2 or 3, got {self.d}")
        if not 0.0 < self.alpha < 2.0:
            raise DomainError(f"alpha must lie in (0, 2), got {self.alpha}")
        if not self.alpha < self.gamma <= 2.0:
            raise DomainError(
                f"gamma must lie in (alpha, 2] = ({self.alpha}, 2], got {self.gamma}")

    @property
    def weight_exponent(self):
        """Decay exponent ``p`` of the weight ``|xi|^(gamma - d - alpha) = |xi|^-p``."""
        return self.d + self.alpha - self.gamma

    @property
    def corrected(self):
        """True when the origin-cell limit correction is active (``floor(gamma/2) == 1``)."""
        return math.floor(self.gamma / 2) == 1


@dataclass(frozen=True, eq=False)
class Stencil:
    params: FracParams
    N: int
    h: float
    coeffs: np.ndarray = field(repr=False)
    c_norm: float
    tail: float

    @property
    def d(self):
        return self.params.d

    @property
    def L(self):
        return self.N * self.h

    def entry(self, *idx):
        return float(self.coeffs[tuple(abs(int(i)) for i in idx)])

    def center_identity_residual(self):
        """Relative residual of the centre-coefficient sum identity.

        Re-evaluates ``a_0 + sum_{k != 0} (2^d / 2^sigma(k)) a_k + 2^d tail``
        from the stored table, which vanishes by construction.
        """
        a = self.coeffs
        mult = _multiplicity(self.d, self.N + 1)
        off = a * mult
        off[(0,) * self.d] = 0.0
        rebuilt = -off.sum() - 2**self.d * self.tail
        return abs(rebuilt - a[(0,) * self.d]) / abs(a[(0,) * self.d])


def norm_const(d, alpha):
    """Normalisation constant of the fractional Laplacian.

    ``c_{d,alpha} = 2^(alpha-1) alpha Gamma((d+alpha)/2) / (pi^(d/2) Gamma(1-alpha/2))``.
    """
    if not 0.0 < alpha < 2.0:
        raise DomainError(f"alpha must lie in (0, 2), got {alpha}")
    if d not in (1, 2, 3):
        raise DomainError(f"unsupported dimension {d}")
    # 1/Gamma(1 - alpha/2) -> 0 smoothly as alpha -> 2
    return (2.0 ** (alpha - 1) * alpha * special.gamma((d + alpha) / 2)
            * special.rgamma(1 - alpha / 2) / math.pi ** (d / 2))


def _multiplicity(d, size):
    """``2^d / 2^sigma`` on an index table, sigma = number of zero indices."""
    zeros = np.zeros((size,) * d, dtype=int)
    for ax in range(d):
        sl = [slice(None)] * d
        sl[ax] = 0
        zeros[tuple(sl)] += 1
    return 2.0 ** (d - zeros)


def _vertex_sums(W):
    """``T[k] = sum of W over the (up to 2^d) cells having vertex k``, indices 0..N."""
    T = np.pad(W, 1)
    for ax in range(W.ndim):
        lo = [slice(None)] * W.ndim
        hi = [slice(None)] * W.ndim
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        T = T[tuple(lo)] + T[tuple(hi)]
    return T


def _mirror(table):
    """Make ``table`` exactly permutation symmetric by copying the sorted-index entries."""
    d = table.ndim
    n = table.shape[0]
    if d == 2:
        low = np.tril(table)
        return low + np.tril(table, -1).T
    out = np.empty_like(table)
    for i in range(n):
        j, k = np.tril_indices(i + 1)
        vals = table[i, j, k]
        idx = (np.full(j.size, i), j, k)
        for perm in permutations(range(3)):
            out[idx[perm[0]], idx[perm[1]], idx[perm[2]]] = vals
    return out


# Origin-cell correction factors multiplying the weight integral of the origin
# cell, for offsets with entries in {0, 1}: keyed by the number of ones.
_CORRECTION = {
    2: {1: 1.0, 2: -1.0},
    3: {1: 5.0 / 3.0, 2: -1.0, 3: -1.0},
}


def build_stencil(params, N, h, cfg=DEFAULT_QUAD):
    """Assemble the coefficient table for ``L = N h``.

    Parameters
    ----------
    params : FracParams
    N : int
        Number of mesh intervals across the longest side, ``N >= 2``.
    h : float
        Mesh size.
    cfg : QuadConfig
        Quadrature tolerances used for every cell and tail integral.

    Returns
    -------
    Stencil
    """
    if int(N) != N or N < 2:
        raise DomainError(f"N must be an integer >= 2, got {N}")
    if not h > 0:
        raise DomainError(f"h must be positive, got {h}")
    N = int(N)
    d, alpha, gamma = params.d, params.alpha, params.gamma

    # Everything scales as h^-alpha, so assemble on the unit mesh.
    W = unit_cell_weights(d, params.weight_exponent, N, cfg)
    T = _vertex_sums(W)
    if params.corrected:
        origin = W[(0,) * d]
        for ones, factor in _CORRECTION[d].items():
            for k in set(permutations((1,) * ones + (0,) * (d - ones))):
                T[k] += factor * origin

    idx = np.indices((N + 1,) * d, dtype=float)
    radius = np.sqrt(np.sum(idx**2, axis=0))
    radius[(0,) * d] = 1.0
    mult = _multiplicity(d, N + 1)
    a = _mirror(T / (mult * radius**gamma))
    tail = tail_weight(d, alpha, float(N), cfg)
    off = a * mult
    off[(0,) * d] = 0.0
    a[(0,) * d] = -off.sum() - 2**d * tail
    a *= h**-alpha
    a.flags.writeable = False
    return Stencil(params=params, N=N, h=float(h), coeffs=a,
                   c_norm=norm_const(d, alpha), tail=tail * h**-alpha)


def coefficient_entry(params, N, h, k, cfg=DEFAULT_QUAD):
    """Recompute a single off-centre coefficient ``a_k`` from scalar cell integrals.

    Independent of the vectorised table used by :func:`build_stencil`; meant
    for spot checks of stored tables.
    """
    d = params.d
    k = tuple(abs(int(v)) for v in k)
    if len(k) != d or not any(k) or max(k) > N:
        raise DomainError(f"offset {k} must be nonzero with entries in [0, {N}]")
    total = 0.0
    for shift in product((-1, 0), repeat=d):
        lo = tuple(float(a + b) for a, b in zip(k, shift))
        if min(lo) < 0 or max(lo) > N - 1:
            continue
        total += cell_weight(params.weight_exponent, Box(lo, tuple(v + 1.0 for v in lo)), cfg)
    if params.corrected and max(k) == 1:
        origin = cell_weight(params.weight_exponent, Box((0.0,) * d, (1.0,) * d), cfg)
        total += _CORRECTION[d][sum(k)] * origin
    mult = 2.0 ** (d - sum(1 for v in k if v == 0))
    radius = math.sqrt(sum(v * v for v in k))
    return total / (mult * radius**params.gamma) * h**-params.alpha


def build_stencil_2d(params, N, h, cfg=DEFAULT_QUAD):
    if params.d != 2:
        raise DomainError("build_stencil_2d needs params.d == 2")
    return build_stencil(params, N, h, cfg)


def build_stencil_3d(params, N, h, cfg=DEFAULT_QUAD):
    if params.d != 3:
        raise DomainError("build_stencil_3d needs params.d == 3")
    return build_stencil(params, N, h, cfg)
