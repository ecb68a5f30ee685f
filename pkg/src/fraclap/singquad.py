"""Integrals of the radial power weight |xi|^-p over boxes and exterior tails.

Every stencil coefficient is built from integrals of ``|xi|^{-p}`` over
axis-aligned mesh cells in the first orthant, plus one improper integral over
the part of the orthant outside ``(0, L)^d``.  This module evaluates them:

* origin-corner cells are reduced analytically (polar angle in 2D, three
  apex-at-origin pyramids in 3D) so that only smooth integrands remain;
* cells away from the origin are integrated by adaptive tensor Gauss-Legendre
  cubature (:func:`cell_weight_2d`, :func:`cell_weight_3d`) or, for whole
  tables, by a vectorised fixed-order rule whose order grows as the cell
  approaches the origin (:func:`unit_cell_weights`);
* tails are split by inclusion-exclusion into closed forms and bounded
  one- or two-dimensional quadratures.
"""
from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations, product

import numpy as np
from scipy import integrate, special

from .errors import BudgetExceeded, DomainError, NonIntegrable

__all__ = [
    "QuadConfig",
    "Box",
    "cell_weight_2d",
    "cell_weight_3d",
    "cell_weight",
    "tail_weight_2d",
    "tail_weight_3d",
    "tail_weight",
    "unit_cell_weights",
]


@dataclass(frozen=True)
class QuadConfig:
    """Tolerances shared by all quadratures in this module."""

    rel_tol: float = 1e-12
    abs_tol: float = 1e-15
    max_subdivisions: int = 2**20

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise DomainError(f"rel_tol must be positive, got {self.rel_tol}")
        if not self.abs_tol >= 0:
            raise DomainError(f"abs_tol must be non-negative, got {self.abs_tol}")
        if self.max_subdivisions < 1:
            raise DomainError("max_subdivisions must be at least 1")


DEFAULT_QUAD = QuadConfig()


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi):
            raise DomainError("lo and hi must have the same length")
        for a, b in zip(lo, hi):
            if not (0.0 <= a < b):
                raise DomainError(f"invalid box extent [{a}, {b}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return len(self.lo)

    @property
    def touches_origin(self):
        return all(a == 0.0 for a in self.lo)

    def scaled(self, s):
        return Box(tuple(s * a for a in self.lo), tuple(s * b for b in self.hi))


def _as_box(cell, d):
    box = cell if isinstance(cell, Box) else Box(*cell)
    if box.dim != d:
        raise DomainError(f"expected a {d}D box, got {box.dim}D")
    return box


@lru_cache(maxsize=None)
def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _quad1d(f, a, b, cfg, **kw):
    limit = int(min(cfg.max_subdivisions, 10_000))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err, info = integrate.quad(
            f, a, b, epsabs=cfg.abs_tol, epsrel=max(cfg.rel_tol, 5e-15),
            limit=limit, full_output=1, **kw)[:3]
    tol = max(cfg.rel_tol * abs(val), cfg.abs_tol)
    if err > 10 * tol and info.get("last", 0) >= limit:
        raise BudgetExceeded(f"1D quadrature stalled: err={err:.3g} > tol={tol:.3g}")
    return val


def _adaptive_cubature(f, lo, hi, cfg, order=8):
    """Adaptive tensor Gauss-Legendre cubature of a smooth integrand.

    Each box is compared against the sum of its 2^d children; boxes whose
    discrepancy exceeds their volume share of the global tolerance are split.
    ``f`` receives an array of points of shape (d, k) and returns k values.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = lo.size
    x, w = _gauss01(order)
    grid = np.array(list(product(range(order), repeat=d)))
    nodes = x[grid].T                      # (d, order^d)
    weights = np.prod(w[grid], axis=1)     # (order^d,)
    corners = np.array(list(product((0, 1), repeat=d)), dtype=float)  # (2^d, d)
    total_vol = float(np.prod(hi - lo))

    def rule(blo, bhi):
        width = bhi - blo                                       # (k, d)
        pts = blo[:, :, None] + width[:, :, None] * nodes[None]  # (k, d, q)
        vals = f(np.moveaxis(pts, 1, 0).reshape(d, -1)).reshape(len(blo), -1)
        return vals @ weights * np.prod(width, axis=1)

    def children(blo, bhi):
        half = 0.5 * (bhi - blo)
        clo = (blo[:, None, :] + corners[None] * half[:, None, :]).reshape(-1, d)
        chi = clo + np.repeat(half, len(corners), axis=0)
        return clo, chi

    act_lo, act_hi = lo[None], hi[None]
    act_val = rule(act_lo, act_hi)
    accepted = 0.0
    n_boxes = 1
    while act_lo.shape[0]:
        clo, chi = children(act_lo, act_hi)
        cval = rule(clo, chi)
        csum = cval.reshape(-1, len(corners)).sum(axis=1)
        estimate = accepted + csum.sum()
        tol = max(cfg.rel_tol * abs(estimate), cfg.abs_tol)
        share = np.prod(act_hi - act_lo, axis=1) / total_vol
        err = np.abs(csum - act_val)
        done = err <= tol * share
        accepted += csum[done].sum()
        keep = np.repeat(~done, len(corners))
        act_lo, act_hi, act_val = clo[keep], chi[keep], cval[keep]
        n_boxes += len(clo)
        if act_lo.shape[0] and n_boxes > cfg.max_subdivisions:
            raise BudgetExceeded(
                f"adaptive cubature used {n_boxes} boxes without meeting tolerance")
    return accepted


def _power(p):
    def f(pts):
        return np.sum(pts * pts, axis=0) ** (-0.5 * p)
    return f


def _logcosh(w):
    return w + np.log1p(np.exp(-2.0 * w)) - math.log(2.0)


def _asinh_ratio(x, y):
    """``asinh(x / y)`` without overflow for extreme ratios."""
    r = x / y
    if math.isfinite(r) and r < 1e300:
        return math.asinh(r)
    return math.log(x) - math.log(y) + math.log(2.0)


def _scaled_quad(f, W, cfg):
    """``int_0^W f`` for a smooth positive ``f``, relative to its own size."""
    scale = max(abs(float(f(0.0))), abs(float(f(W))), abs(float(f(0.5 * W))))
    if not math.isfinite(scale):
        raise BudgetExceeded(f"integrand is not finite on [0, {W:g}]")
    if scale == 0.0:
        return 0.0
    return W * scale * _quad1d(lambda v: f(W * v) / scale, 0.0, 1.0, cfg)


def _cosh_power(p, W, cfg):
    """``int_0^W cosh(w)^(1-p) dw``."""
    if W == 0.0:
        return 0.0
    if (1.0 - p) * W > 700.0:
        # only for side ratios beyond ~1e300, where this piece is negligible
        return 0.0
    return _scaled_quad(lambda w: np.exp((1.0 - p) * _logcosh(w)), W, cfg)


def _origin_rect(p, a, b, cfg):
    # Polar reduction over [0, a] x [0, b], split at the corner ray.  The part
    # below the ray is int (a / cos t)^q dt; with a tan t = a sinh w this is
    # a^q int_0^asinh(b/a) cosh^(1-p), which stays smooth however thin the
    # rectangle is.  Same for the part above the ray with a and b swapped.
    q = 2.0 - p
    if a == b:
        return 2.0 * a**q / q * _cosh_power(p, math.asinh(1.0), cfg)
    lower = a**q * _cosh_power(p, _asinh_ratio(b, a), cfg)
    upper = b**q * _cosh_power(p, _asinh_ratio(a, b), cfg)
    return (lower + upper) / q


def _radial_3d(p, a, R):
    """``int_0^R (a^2 + r^2)^(-p/2) r dr``, free of cancellation for small ``R/a``."""
    e = 1.0 - 0.5 * p
    ratio = R / a
    if ratio < 1e150:
        L = math.log1p(ratio * ratio)
    else:
        L = 2.0 * (math.log(R) - math.log(a))
    if abs(e) < 1e-12:
        return 0.5 * L
    if e * L < 1.0:
        return a ** (2.0 * e) * math.expm1(e * L) / (2.0 * e)
    # (a^2 + R^2)^e - a^(2e) without forming a^(2e) * exp(e L)
    return (math.exp(e * (L + 2.0 * math.log(a))) - a ** (2.0 * e)) / (2.0 * e)


def _face_integral(p, a, b, c, cfg):
    # int_0^b int_0^c (a^2 + y^2 + z^2)^(-p/2) dz dy in polar coordinates on
    # the face; the radial part is closed form and the angle is substituted
    # as in _origin_rect, one sinh variable on each side of the corner ray
    total = 0.0
    for u, v in ((b, c), (c, b)):
        W = _asinh_ratio(v, u)
        if W > 700.0:
            continue
        total += _scaled_quad(lambda w, u=u: _radial_3d(p, a, u * math.cosh(w)) / math.cosh(w),
                              W, cfg)
    return total


def _origin_box3(p, ext, cfg):
    # three pyramids with apex at the origin and base on the far faces; the
    # radial factor along each pyramid integrates in closed form
    total = 0.0
    for axis in range(3):
        a = ext[axis]
        b, c = (ext[k] for k in range(3) if k != axis)
        total += a * _face_integral(p, a, b, c, cfg)
    return total / (3.0 - p)


def _near_origin(box):
    # boxes whose distance to the origin is small compared to their size make
    # the direct cubature crawl towards the near-singular corner
    dist = math.sqrt(sum(a * a for a in box.lo))
    return dist < max(b - a for a, b in zip(box.lo, box.hi))


def _by_origin_boxes(p, box, origin_fn, cfg):
    """Inclusion-exclusion over the 2^d boxes ``[0, c]`` with corners ``c`` of ``box``."""
    total = 0.0
    for pick in product((0, 1), repeat=box.dim):
        corner = tuple(box.hi[i] if k else box.lo[i] for i, k in enumerate(pick))
        if min(corner) == 0.0:
            continue
        sign = -1.0 if (box.dim - sum(pick)) % 2 else 1.0
        total += sign * origin_fn(p, corner, cfg)
    return total


def cell_weight_2d(p, cell, cfg=DEFAULT_QUAD):
    """Integral of ``(xi^2 + eta^2)^(-p/2)`` over a rectangle in the first quadrant.

    Parameters
    ----------
    p : float
        Decay exponent, ``p >= 0``.
    cell : Box or (lo, hi)
        Rectangle with ``0 <= lo < hi`` componentwise.
    cfg : QuadConfig

    Raises
    ------
    NonIntegrable
        If the rectangle has the origin as a corner and ``p >= 2``.
    """
    box = _as_box(cell, 2)
    if p < 0:
        raise DomainError(f"exponent p must be non-negative, got {p}")
    if box.touches_origin:
        if p >= 2:
            raise NonIntegrable(f"|xi|^-{p} is not integrable at the origin in 2D")
        return _origin_rect(p, *box.hi, cfg)
    if p < 2 and _near_origin(box):
        return _by_origin_boxes(p, box, lambda p, c, cfg: _origin_rect(p, *c, cfg), cfg)
    return _adaptive_cubature(_power(p), box.lo, box.hi, cfg)


def cell_weight_3d(p, cell, cfg=DEFAULT_QUAD):
    """Integral of ``|xi|^(-p)`` over a box in the first octant.

    A box with a corner at the origin is split into the three pyramids with
    apex at the origin and base on the far faces; on each pyramid the radial
    factor integrates in closed form, leaving a smooth integral over the unit
    square.  Boxes close to (but not touching) the origin are written as signed
    sums of such origin-anchored boxes.
    """
    box = _as_box(cell, 3)
    if p < 0:
        raise DomainError(f"exponent p must be non-negative, got {p}")
    if box.touches_origin:
        if p >= 3:
            raise NonIntegrable(f"|xi|^-{p} is not integrable at the origin in 3D")
        return _origin_box3(p, box.hi, cfg)
    if p < 3 and _near_origin(box):
        return _by_origin_boxes(p, box, _origin_box3, cfg)
    return _adaptive_cubature(_power(p), box.lo, box.hi, cfg)


def cell_weight(p, cell, cfg=DEFAULT_QUAD):
    box = cell if isinstance(cell, Box) else Box(*cell)
    if box.dim == 2:
        return cell_weight_2d(p, box, cfg)
    if box.dim == 3:
        return cell_weight_3d(p, box, cfg)
    raise DomainError(f"unsupported dimension {box.dim}")


def _check_tail_args(alpha, L):
    if not 0.0 < alpha < 2.0:
        raise DomainError(f"alpha must lie in (0, 2), got {alpha}")
    if not L > 0:
        raise DomainError(f"L must be positive, got {L}")


def _quarter_plane_corner(alpha, L, cfg):
    # integral of |xi|^-(2+alpha) over [L, inf)^2; a ray at angle t < pi/4
    # enters the corner once its smaller coordinate r sin(t) reaches L
    ang = _quad1d(lambda t: (np.sinc(t / math.pi)) ** alpha, 0.0, math.pi / 4, cfg,
                  weight="alg", wvar=(alpha, 0.0))
    return 2.0 / alpha * L**-alpha * ang


def tail_weight_2d(alpha, L, cfg=DEFAULT_QUAD):
    """Integral of ``|xi|^-(2+alpha)`` over the quadrant minus ``(0, L)^2``."""
    _check_tail_args(alpha, L)
    strip = (math.sqrt(math.pi) / (2 * alpha)
             * math.exp(special.gammaln((1 + alpha) / 2) - special.gammaln((2 + alpha) / 2))
             * L**-alpha)
    return 2.0 * strip - _quarter_plane_corner(alpha, L, cfg)


def tail_weight_3d(alpha, L, cfg=DEFAULT_QUAD):
    """Integral of ``|xi|^-(3+alpha)`` over the octant minus ``(0, L)^3``.

    Inclusion-exclusion over the slabs ``{xi_i >= L}``: ``3 S1 - 3 S2 + S3``.
    ``S1`` is closed form, ``S2`` reduces to the 2D corner integral after
    integrating out the free coordinate, and ``S3`` is a 2D integral over the
    directions in which all three coordinates exceed ``L``.
    """
    _check_tail_args(alpha, L)
    s1 = math.pi / (2 * alpha * (1 + alpha)) * L**-alpha
    free = 0.5 * math.sqrt(math.pi) * math.exp(
        special.gammaln((2 + alpha) / 2) - special.gammaln((3 + alpha) / 2))
    s2 = free * _quarter_plane_corner(alpha, L, cfg)
    expo = -(3.0 + alpha) / 2

    def inner(v):
        return _quad1d(lambda q: (1.0 + v * v * (1.0 + q * q)) ** expo, 0.0, 1.0, cfg,
                       weight="alg", wvar=(alpha, 0.0))

    s3 = 6.0 / alpha * L**-alpha * _quad1d(inner, 0.0, 1.0, cfg,
                                           weight="alg", wvar=(1.0 + alpha, 0.0))
    return 3.0 * s1 - 3.0 * s2 + s3


def tail_weight(d, alpha, L, cfg=DEFAULT_QUAD):
    if d == 2:
        return tail_weight_2d(alpha, L, cfg)
    if d == 3:
        return tail_weight_3d(alpha, L, cfg)
    raise DomainError(f"unsupported dimension {d}")


# --- whole tables of unit cells ------------------------------------------------

# Cells whose lower corner lies within this many cells of the origin go through
# the adaptive scalar routines; the rest use a fixed rule chosen by distance.
_NEAR = 4
# (min distance in cells, Gauss points per axis); the analytic-continuation
# error bound ~ (4R)^(-2n) stays below 1e-16 on each tier.
_TIERS = ((_NEAR, 8), (12, 5), (40, 4), (160, 3))
_CHUNK = 1 << 21

_table_lock = threading.Lock()
_table_cache: dict = {}
_table_events: dict = {}
_CACHE_BYTES = 768 * 2**20


def _fixed_rule(p, lo_idx, n):
    x, w = _gauss01(n)
    k, d = lo_idx.shape
    out = np.empty(k)
    step = max(1, _CHUNK // n**d)
    for s in range(0, k, step):
        sl = lo_idx[s:s + step].astype(float)
        sq = [(sl[:, a, None] + x[None, :]) ** 2 for a in range(d)]
        if d == 2:
            r2 = sq[0][:, :, None] + sq[1][:, None, :]
            out[s:s + step] = np.einsum("kab,a,b->k", r2 ** (-0.5 * p), w, w)
        else:
            r2 = sq[0][:, :, None, None] + sq[1][:, None, :, None] + sq[2][:, None, None, :]
            out[s:s + step] = np.einsum("kabc,a,b,c->k", r2 ** (-0.5 * p), w, w, w)
    return out


def _canonical(d, N):
    """Lower corners (i >= j [>= k]) of all cells of (0, N)^d, one per orbit."""
    if d == 2:
        i, j = np.tril_indices(N)
        return np.stack([i, j], axis=1)
    blocks = []
    for i in range(N):
        j, k = np.tril_indices(i + 1)
        blocks.append(np.stack([np.full(j.size, i), j, k], axis=1))
    return np.concatenate(blocks)


def _compute_table(d, p, N, cfg):
    cells = _canonical(d, N)
    dist = np.sqrt(np.sum(cells.astype(float) ** 2, axis=1))
    vals = np.empty(len(cells))
    near = dist < _NEAR
    scalar = cell_weight_2d if d == 2 else cell_weight_3d
    for idx in np.flatnonzero(near):
        lo = tuple(float(v) for v in cells[idx])
        vals[idx] = scalar(p, Box(lo, tuple(v + 1.0 for v in lo)), cfg)
    bounds = [t[0] for t in _TIERS] + [np.inf]
    for (start, n), stop in zip(_TIERS, bounds[1:]):
        sel = (dist >= start) & (dist < stop)
        if sel.any():
            vals[sel] = _fixed_rule(p, cells[sel], n)
    table = np.empty((N,) * d)
    for perm in set(permutations(range(d))):
        table[tuple(cells[:, a] for a in perm)] = vals
    table.flags.writeable = False
    return table


def unit_cell_weights(d, p, N, cfg=DEFAULT_QUAD):
    """Table ``W[i, j(, k)] = integral of |xi|^-p over the unit cell at (i, j(, k))``.

    Covers the ``N^d`` cells of ``(0, N)^d``.  Values are computed once per
    permutation orbit and mirrored, so the table is exactly symmetric.  Results
    are memoised per ``(d, p, cfg)``; a request for a smaller ``N`` than a
    cached table is served by slicing.  Concurrent callers asking for the same
    key wait for a single evaluation.
    """
    if d not in (2, 3):
        raise DomainError(f"unsupported dimension {d}")
    if N < 1:
        raise DomainError("N must be positive")
    if p >= d:
        raise NonIntegrable(f"|xi|^-{p} is not integrable at the origin in {d}D")
    key = (d, float(p), cfg)
    while True:
        with _table_lock:
            hit = _table_cache.get(key)
            if hit is not None and hit.shape[0] >= N:
                _table_cache[key] = _table_cache.pop(key)  # LRU bump
                return hit[(slice(0, N),) * d]
            event = _table_events.get(key)
            if event is None:
                event = threading.Event()
                _table_events[key] = event
                owner = True
            else:
                owner = False
        if not owner:
            event.wait()
            continue
        try:
            table = _compute_table(d, p, N, cfg)
            with _table_lock:
                _table_cache.pop(key, None)
                _table_cache[key] = table
                total = sum(t.nbytes for t in _table_cache.values())
                for old in list(_table_cache):
                    if total <= _CACHE_BYTES or old == key:
                        break
                    total -= _table_cache.pop(old).nbytes
            return table
        finally:
            with _table_lock:
                _table_events.pop(key, None)
            event.set()


def clear_cache():
    with _table_lock:
        _table_cache.clear()
