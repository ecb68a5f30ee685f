"""Applications of the discrete operator: error studies, Poisson solves, Allen-Cahn.

All problems live on boxes with homogeneous exterior data.  Mesh sizes are
handled as exact fractions so that nested grids share their nodes exactly.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DomainError, NonNestedGrids, PicardNotConverged, ShapeMismatch
from .io import cached_stencil
from .krylov import CgConfig, LinearMap, cg_solve
from .singquad import DEFAULT_QUAD
from .stencil import FracParams, build_stencil
from .toeplitz import Field, GridSpec, _frac, assemble_operator

__all__ = [
    "ManufacturedFn",
    "manufactured_eval",
    "StudyReport",
    "observed_rates",
    "fitted_rate",
    "build_operator",
    "truncation_study",
    "poisson_solve",
    "poisson_study",
    "AllenCahnConfig",
    "AllenCahnResult",
    "allen_cahn_run",
    "initial_two_bubbles",
    "bubbles_connected",
    "mass",
]

log = logging.getLogger(__name__)


# --- manufactured functions ---------------------------------------------------

@dataclass(frozen=True)
class ManufacturedFn:
    """``u(x) = (prod_i (1 - x_i^2))^s`` on ``(-1, 1)^d``, zero outside."""

    s_exp: float
    d: int = 2

    def __post_init__(self):
        if not self.s_exp >= 1:
            raise DomainError(f"exponent s must be >= 1, got {self.s_exp}")
        if self.d not in (1, 2, 3):
            raise DomainError(f"unsupported dimension {self.d}")

    def __call__(self, *coords):
        if len(coords) != self.d:
            raise ShapeMismatch(f"expected {self.d} coordinate arrays, got {len(coords)}")
        prod = np.ones(np.broadcast(*coords).shape)
        for x in coords:
            prod = prod * np.clip(1.0 - np.asarray(x, dtype=float) ** 2, 0.0, None)
        return prod ** self.s_exp


def manufactured_eval(f, x):
    """Value of ``f`` at a single point ``x``."""
    x = np.asarray(x, dtype=float).ravel()
    return float(f(*x))


# --- studies ------------------------------------------------------------------

def observed_rates(h_list, errors):
    """Rates ``log(e_i / e_{i+1}) / log(h_i / h_{i+1})`` between consecutive levels.

    For successive halvings this is ``log2(e(h) / e(h/2))``.
    """
    h = np.asarray(h_list, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.size < 2:
        return []
    with np.errstate(divide="ignore", invalid="ignore"):
        return [float(r) for r in np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])]


def fitted_rate(h_list, errors):
    """Least-squares slope of ``log e`` against ``log h``."""
    h = np.log(np.asarray(h_list, dtype=float))
    e = np.log(np.asarray(errors, dtype=float))
    if h.size < 2:
        return float("nan")
    return float(np.polyfit(h, e, 1)[0])


@dataclass
class StudyReport:
    h_list: list
    err_inf: list
    err_2: list
    metadata: dict = field(default_factory=dict)

    @property
    def rates_inf(self):
        return observed_rates(self.h_list, self.err_inf)

    @property
    def rates_2(self):
        return observed_rates(self.h_list, self.err_2)

    @property
    def fitted_rate_inf(self):
        return fitted_rate(self.h_list, self.err_inf)

    @property
    def fitted_rate_2(self):
        return fitted_rate(self.h_list, self.err_2)

    def rows(self):
        """One dict per mesh size; the first row has no rates."""
        ri = [None] + self.rates_inf
        r2 = [None] + self.rates_2
        return [{"h": h, "err_inf": ei, "rate_inf": a, "err_2": e2, "rate_2": b}
                for h, ei, a, e2, b in zip(self.h_list, self.err_inf, ri, self.err_2, r2)]


def build_operator(params, grid, cfg=DEFAULT_QUAD, cache=None):
    """Stencil plus Toeplitz assembly for ``grid``.

    With ``cache`` set to a directory, the stencil is read from (or written
    to) the on-disk cache there.
    """
    if cache is None:
        stencil = build_stencil(params, grid.N, grid.h, cfg)
    else:
        stencil = cached_stencil(params, grid.N, grid.h, cfg, root=cache)
    return assemble_operator(stencil, grid)


def _check_nested(h_list, ref_h, lo, hi):
    ref = _frac(ref_h)
    hs = [_frac(h) for h in h_list]
    if not hs:
        raise DomainError("h_list is empty")
    length = _frac(hi) - _frac(lo)
    for h in hs + [ref]:
        if h <= 0 or (length / h).denominator != 1:
            raise NonNestedGrids(f"h = {h} does not divide the domain length {length}")
    for h in hs:
        if (h / ref).denominator != 1:
            raise NonNestedGrids(f"reference h = {ref} does not divide h = {h}")
    if not ref <= min(hs) / 4:
        raise NonNestedGrids(
            f"reference h = {ref} must be at most min(h)/4 = {min(hs) / 4}")
    return hs, ref


def _restrict(fine, ratio, d):
    """Values of a fine-grid array at the nodes of a grid ``ratio`` times coarser."""
    sl = (slice(ratio - 1, None, ratio),) * d
    return fine[sl]


def _boundary_distance(grid, flat_index):
    """Distance (in units of h) from a node to the nearest face of the box."""
    idx = np.unravel_index(flat_index, grid.array_shape)
    return int(min(min(i + 1, n - i) for i, n in zip(idx, grid.array_shape)))


def _norms(e, h, d):
    return float(np.max(np.abs(e))), float(math.sqrt(h**d * float(np.sum(e * e))))


def truncation_study(params, s, h_list, ref_h, cfg=DEFAULT_QUAD, lo=-1, hi=1, cache=None):
    """Operator error on the manufactured function against a fine-mesh reference.

    For each ``h`` the error is ``(A_ref u)|coarse - A_h u`` at the coarse
    interior nodes.

    Parameters
    ----------
    params : FracParams
    s : float
        Exponent of :class:`ManufacturedFn`.
    h_list : sequence of Fraction, str or float
        Mesh sizes, coarsest first.
    ref_h : Fraction, str or float
        Reference mesh size; must divide every ``h`` and be at most ``min(h)/4``.

    Raises
    ------
    NonNestedGrids
    """
    t0 = time.perf_counter()
    hs, ref = _check_nested(h_list, ref_h, lo, hi)
    d = params.d
    u = ManufacturedFn(s, d)
    fine = GridSpec.box(lo, hi, d, ref)
    fine_op = build_operator(params, fine, cfg, cache)
    ref_vals = fine_op.apply(Field.from_function(fine, u)).as_array()
    del fine_op
    err_inf, err_2, where = [], [], []
    for h in hs:
        grid = GridSpec.box(lo, hi, d, h)
        op = build_operator(params, grid, cfg, cache)
        approx = op.apply(Field.from_function(grid, u)).as_array()
        e = _restrict(ref_vals, int(h / ref), d) - approx
        ei, e2 = _norms(e, grid.h, d)
        err_inf.append(ei)
        err_2.append(e2)
        where.append(_boundary_distance(grid, int(np.argmax(np.abs(e)))))
        log.info("truncation h=%s err_inf=%.6e err_2=%.6e", h, ei, e2)
    meta = {"study": "truncation", "d": d, "alpha": params.alpha, "gamma": params.gamma,
            "s": float(s), "ref_h": str(ref), "h": [str(h) for h in hs],
            "argmax_boundary_distance": where, "seconds": time.perf_counter() - t0}
    return StudyReport([float(h) for h in hs], err_inf, err_2, meta)


# --- Poisson ------------------------------------------------------------------

def poisson_solve(params, grid, f, cg=CgConfig(), cfg=DEFAULT_QUAD, op=None, x0=None,
                  cache=None):
    """Solve ``A u = f`` on ``grid`` by conjugate gradients.

    ``op`` may be passed to reuse an assembled operator.  The CG result
    (iterations, residual) is stored on the returned field as ``.info``.
    """
    if op is None:
        op = build_operator(params, grid, cfg, cache)
    elif op.grid != grid:
        raise ShapeMismatch("operator and grid differ")
    if not isinstance(f, Field):
        f = Field(grid, f)
    elif f.grid != grid:
        raise ShapeMismatch("right-hand side lives on a different grid")
    res = cg_solve(op, f, x0=x0, cfg=cg)
    log.info("poisson solve on M=%d: %d CG iterations, resid %.2e",
             grid.size, res.iters, res.resid)
    out = res.x
    out.info = {"iters": res.iters, "resid": res.resid, "converged": res.converged}
    return out


def _parse_rhs(rhs):
    if isinstance(rhs, str):
        kind, _, rest = rhs.partition(":")
        opts = dict(kv.split("=", 1) for kv in rest.split(",") if kv) if rest else {}
        return kind, opts
    return rhs


def poisson_study(params, h_list, ref_h=None, rhs="manufactured:s=2", cg=CgConfig(),
                  cfg=DEFAULT_QUAD, lo=-1, hi=1, cache=None, keep_solutions=False,
                  compare="reference"):
    """Poisson errors over a list of mesh sizes.

    ``rhs = "manufactured:s=<s>"``: ``f = A_ref u`` on the reference mesh,
    restricted to each coarse grid, and the error is measured against the
    exact ``u``.  ``rhs = "one"``: ``f = 1`` and the error is measured
    against another numerical solution, chosen by ``compare``:

    ``"reference"``
        the solution on the ``ref_h`` mesh;
    ``"successive"``
        the solution on the mesh ``h/2`` (``ref_h`` is not used).  The error
        at ``h`` is then ``u_h - u_{h/2}`` on the coarse nodes, which has the
        same rate as the true error but no reference-mesh contamination.

    With ``keep_solutions`` the coarse solutions are attached to the report
    as ``report.solutions``.
    """
    t0 = time.perf_counter()
    kind, opts = _parse_rhs(rhs)
    if kind not in ("manufactured", "one"):
        raise DomainError(f"unknown right-hand side {rhs!r}")
    if compare not in ("reference", "successive"):
        raise DomainError(f"compare must be 'reference' or 'successive', got {compare!r}")
    if compare == "successive" and kind != "one":
        raise DomainError("successive comparison is only meaningful without an exact solution")
    d = params.d
    if compare == "successive":
        hs = [_frac(h) for h in h_list]
        if not hs:
            raise DomainError("h_list is empty")
        length = _frac(hi) - _frac(lo)
        for h in hs:
            if h <= 0 or (length / h).denominator != 1:
                raise NonNestedGrids(f"h = {h} does not divide the domain length {length}")
        return _successive_study(params, hs, cg, cfg, lo, hi, cache, keep_solutions, t0)
    hs, ref = _check_nested(h_list, ref_h, lo, hi)
    fine = GridSpec.box(lo, hi, d, ref)
    fine_op = build_operator(params, fine, cfg, cache)
    meta = {"study": "poisson", "rhs": kind, "compare": compare, "d": d,
            "alpha": params.alpha, "gamma": params.gamma, "ref_h": str(ref),
            "h": [str(h) for h in hs]}
    if kind == "manufactured":
        s = float(opts.get("s", 2))
        u = ManufacturedFn(s, d)
        meta["s"] = s
        ref_vals = fine_op.apply(Field.from_function(fine, u)).as_array()
    else:
        sol = poisson_solve(params, fine, np.ones(fine.size), cg, op=fine_op)
        ref_vals = sol.as_array()
        meta["ref_cg_iters"] = sol.info["iters"]
    del fine_op
    err_inf, err_2, where, iters, kept = [], [], [], [], []
    for h in hs:
        grid = GridSpec.box(lo, hi, d, h)
        ratio = int(h / ref)
        if kind == "manufactured":
            f = _restrict(ref_vals, ratio, d).ravel()
            target = u(*grid.mesh())
        else:
            f = np.ones(grid.size)
            target = _restrict(ref_vals, ratio, d)
        sol = poisson_solve(params, grid, f, cg, cfg, cache=cache)
        e = sol.as_array() - target
        ei, e2 = _norms(e, grid.h, d)
        err_inf.append(ei)
        err_2.append(e2)
        where.append(_boundary_distance(grid, int(np.argmax(np.abs(e)))))
        iters.append(sol.info["iters"])
        if keep_solutions:
            kept.append(sol)
    meta.update(argmax_boundary_distance=where, cg_iters=iters,
                seconds=time.perf_counter() - t0)
    report = StudyReport([float(h) for h in hs], err_inf, err_2, meta)
    if keep_solutions:
        report.solutions = kept
    return report


def _successive_study(params, hs, cg, cfg, lo, hi, cache, keep_solutions, t0):
    d = params.d
    solved = {}

    def solve(h):
        if h not in solved:
            grid = GridSpec.box(lo, hi, d, h)
            solved[h] = poisson_solve(params, grid, np.ones(grid.size), cg, cfg, cache=cache)
        return solved[h]

    err_inf, err_2, where = [], [], []
    for h in hs:
        coarse, fine = solve(h), solve(h / 2)
        e = coarse.as_array() - _restrict(fine.as_array(), 2, d)
        ei, e2 = _norms(e, coarse.grid.h, d)
        err_inf.append(ei)
        err_2.append(e2)
        where.append(_boundary_distance(coarse.grid, int(np.argmax(np.abs(e)))))
    meta = {"study": "poisson", "rhs": "one", "compare": "successive", "d": d,
            "alpha": params.alpha, "gamma": params.gamma, "ref_h": None,
            "h": [str(h) for h in hs], "argmax_boundary_distance": where,
            "cg_iters": [solve(h).info["iters"] for h in hs],
            "seconds": time.perf_counter() - t0}
    report = StudyReport([float(h) for h in hs], err_inf, err_2, meta)
    if keep_solutions:
        report.solutions = [solve(h) for h in hs]
    return report


# --- Allen-Cahn ---------------------------------------------------------------

@dataclass(frozen=True)
class AllenCahnConfig:
    """Two-bubble Allen-Cahn run with exterior value -1.

    With ``linearize`` (the default) every Picard iteration of a step carries
    the diagonal term ``-tau/2 F'(ubar^n)`` on both sides, which leaves the
    fixed point unchanged but removes the stiff part of the reaction from the
    contraction factor.  ``linearize=False`` gives plain Picard.
    """

    alpha: float = 1.9
    delta: float = 0.03
    tau: float = 1e-3
    t_end: float = 0.05
    centers: tuple = ((0.4, 0.4), (0.6, 0.6))
    radius_offset: float = 0.12
    picard_tol: float = 1e-8
    picard_max: int = 50
    snapshot_every: int = 10
    linearize: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError(f"tau must be positive, got {self.tau}")
        if not self.delta > 0:
            raise DomainError(f"delta must be positive, got {self.delta}")
        if not self.t_end >= 0:
            raise DomainError(f"t_end must be non-negative, got {self.t_end}")
        if not 0.0 < self.alpha < 2.0:
            raise DomainError(f"alpha must lie in (0, 2), got {self.alpha}")
        if len(self.centers) != 2:
            raise DomainError("exactly two bubble centres are required")
        if not self.picard_tol > 0 or self.picard_max < 1:
            raise DomainError("picard_tol must be positive and picard_max >= 1")
        if self.snapshot_every < 1:
            raise DomainError("snapshot_every must be at least 1")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.tau))

    def check_grid(self, grid):
        for c in self.centers:
            if len(c) != grid.d:
                raise DomainError(f"centre {c} does not match the {grid.d}D grid")
            if not all(a < x < b for x, (a, b) in zip(c, grid.bounds)):
                raise DomainError(f"centre {c} lies outside the domain")


@dataclass
class AllenCahnResult:
    snapshots: list
    snapshot_times: list
    mass_series: list
    picard_iters: list
    cg_iters: list
    merged: list
    seconds: float = 0.0

    def __iter__(self):
        return iter((self.snapshots, self.mass_series))

    @property
    def max_abs(self):
        return max(float(np.max(np.abs(s.values))) for s in self.snapshots)


def initial_two_bubbles(grid, centers, delta, radius_offset=0.12):
    """``u0 = 1 - tanh(d1/delta) - tanh(d2/delta)`` with ``d_i = |x - x_i| - r``."""
    mesh = grid.mesh()
    u = np.ones(grid.array_shape)
    for c in centers:
        dist = np.sqrt(sum((x - ci) ** 2 for x, ci in zip(mesh, c))) - radius_offset
        u -= np.tanh(dist / delta)
    return Field(grid, u.ravel())


def _nearest_node(grid, point):
    # array-axis order (z, y, x)
    idx = [int(round((x - a) / grid.h)) - 1 for x, (a, _) in zip(point, grid.bounds)]
    idx = [min(max(i, 0), n - 1) for i, n in zip(idx, grid.n_interior)]
    return tuple(reversed(idx))


def bubbles_connected(u, centers):
    """True if the ``u >= 0`` region joins the nodes nearest the two centres.

    Connectivity is through faces only (4-neighbours in 2D, 6 in 3D).
    """
    labels, _ = ndimage.label(u.as_array() >= 0)
    a, b = (labels[_nearest_node(u.grid, c)] for c in centers)
    return bool(a and a == b)


def mass(u, h=None):
    """``h^d * sum |u_i|`` over the interior nodes.

    ``u`` is a :class:`Field`, or an array shaped like the grid together
    with ``h``.
    """
    if isinstance(u, Field):
        h, d, vals = u.grid.h, u.grid.d, u.values
    else:
        vals = np.asarray(u, dtype=float)
        d = vals.ndim
        if h is None:
            raise DomainError("h is required for a bare array")
    return float(h**d * np.sum(np.abs(vals)))


def allen_cahn_run(cfg, grid, params=None, quad=DEFAULT_QUAD, cg=CgConfig(), op=None,
                   callback=None, cache=None):
    """Crank-Nicolson time stepping of the two-bubble problem.

    Works with ``ubar = u + 1``, which vanishes outside the domain.  Each step
    solves

        (I + tau/2 A) ubar' = (I - tau/2 A) ubar + tau/2 (F(ubar) + F(ubar'))

    with ``F(ubar) = -(ubar - 1)((ubar - 1)^2 - 1) / delta^alpha`` by Picard
    iteration started from ``ubar`` (see :class:`AllenCahnConfig` for the
    linearised variant), each linear solve by CG warm-started from the
    previous iterate.

    Returns
    -------
    AllenCahnResult
        Snapshots hold ``u`` (not ``ubar``) at step 0, every
        ``cfg.snapshot_every`` steps and at the final step.  ``mass_series``
        holds ``(t, mass(ubar))`` for every step; ``ubar`` is the quantity that
        is integrable over the whole space.

    Raises
    ------
    PicardNotConverged
    """
    t0 = time.perf_counter()
    if params is None:
        params = FracParams(grid.d, cfg.alpha)
    if not math.isclose(params.alpha, cfg.alpha):
        raise DomainError("params.alpha and cfg.alpha differ")
    cfg.check_grid(grid)
    if op is None:
        op = build_operator(params, grid, quad, cache)
    half = 0.5 * cfg.tau
    scale = cfg.delta ** -params.alpha
    explicit = LinearMap(op, sigma=1.0, mu=-half)

    def reaction(ub):
        u = ub - 1.0
        return -scale * u * (u * u - 1.0)

    def reaction_slope(ub):
        u = ub - 1.0
        return -scale * (3.0 * u * u - 1.0)

    ubar = initial_two_bubbles(grid, cfg.centers, cfg.delta, cfg.radius_offset).values + 1.0

    def snap(t):
        u = Field(grid, ubar - 1.0)
        result.snapshots.append(u)
        result.snapshot_times.append(t)
        result.merged.append(bubbles_connected(u, cfg.centers))

    result = AllenCahnResult([], [], [(0.0, mass(Field(grid, ubar)))], [], [], [])
    snap(0.0)
    n_steps = cfg.n_steps
    for n in range(1, n_steps + 1):
        base = explicit(ubar) + half * reaction(ubar)
        if cfg.linearize:
            # any diagonal works here; keep 1 + damp >= 1/2 so the system stays SPD
            damp = np.maximum(-half * reaction_slope(ubar), -0.5)
        else:
            damp = np.zeros_like(ubar)

        def lhs(x, damp=damp):
            return x + half * op.apply(x) + damp * x

        v = ubar.copy()
        increments = []
        step_cg = 0
        for k in range(1, cfg.picard_max + 1):
            res = cg_solve(lhs, base + half * reaction(v) + damp * v, x0=v, cfg=cg)
            step_cg += res.iters
            inc = float(np.max(np.abs(res.x - v)))
            increments.append(inc)
            v = res.x
            if inc < cfg.picard_tol:
                break
        else:
            raise PicardNotConverged(
                f"Picard iteration did not reach {cfg.picard_tol:g} in {cfg.picard_max} "
                f"iterations at step {n} (last increment {increments[-1]:.3e})",
                step=n, increments=increments)
        ubar = v
        t = n * cfg.tau
        result.picard_iters.append(k)
        result.cg_iters.append(step_cg)
        result.mass_series.append((t, mass(Field(grid, ubar))))
        if n % cfg.snapshot_every == 0 or n == n_steps:
            snap(t)
        if callback is not None:
            callback(n, t, ubar)
        log.debug("step %d: %d Picard, %d CG iterations", n, k, step_cg)
    result.seconds = time.perf_counter() - t0
    return result
