"""Matrix-free conjugate gradients for SPD systems built from the operator."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import BreakdownNonSPD, DomainError, MaxIterWarning, ShapeMismatch
from .toeplitz import Field

__all__ = ["LinearMap", "CgConfig", "CgResult", "cg_solve"]

log = logging.getLogger(__name__)


class LinearMap:
    """``u -> sigma * u + mu * (A u)`` for a symmetric operator ``A``.

    ``op`` may be anything with an ``apply`` method (such as
    :class:`~fraclap.toeplitz.FractionalOperator`), a dense array, or a
    callable.  With ``mu == 0`` the operator is never touched, which gives
    the identity map used in tests.
    """

    def __init__(self, op=None, sigma=0.0, mu=1.0):
        if op is None and mu != 0:
            raise DomainError("an operator is required when mu != 0")
        self.op = op
        self.sigma = float(sigma)
        self.mu = float(mu)

    def _apply_op(self, x):
        op = self.op
        if hasattr(op, "apply"):
            return op.apply(x)
        if isinstance(op, np.ndarray):
            return op @ x
        return op(x)

    def __call__(self, x):
        out = self.sigma * x if self.sigma else np.zeros_like(x)
        if self.mu:
            out = out + self.mu * self._apply_op(x)
        return out

    matvec = __call__

    def __repr__(self):
        return f"LinearMap(sigma={self.sigma}, mu={self.mu}, op={type(self.op).__name__})"


@dataclass(frozen=True)
class CgConfig:
    tol: float = 1e-10
    max_iter: int | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise DomainError(f"CG tolerance must be positive, got {self.tol}")
        if self.max_iter is not None and self.max_iter < 1:
            raise DomainError("max_iter must be at least 1")

    def iteration_cap(self, M):
        if self.max_iter is not None:
            return self.max_iter
        return int(10 * math.sqrt(M)) + 100


@dataclass
class CgResult:
    x: object
    iters: int
    resid: float
    converged: bool

    def __iter__(self):
        # allows ``x, iters, resid = cg_solve(...)``
        return iter((self.x, self.iters, self.resid))


def cg_solve(A, b, x0=None, cfg=CgConfig(), precond=None):
    """Solve ``A x = b`` by conjugate gradients.

    Parameters
    ----------
    A : LinearMap, operator with ``apply``, ndarray or callable
        Symmetric positive definite map.
    b : ndarray or Field
    x0 : ndarray or Field, optional
        Initial guess; zero by default.
    cfg : CgConfig
        Stopping rule ``||b - A x||_2 <= tol * ||b||_2``.
    precond : callable, optional
        Applies an SPD approximation of ``A^{-1}``.  Unused by the package
        itself; plain CG is the default.

    Returns
    -------
    CgResult
        ``converged`` is False when the iteration cap was hit; a
        :class:`MaxIterWarning` is issued in that case and the last iterate
        is returned.

    Raises
    ------
    BreakdownNonSPD
        If a search direction with ``<p, A p> <= 0`` is met.
    """
    grid = b.grid if isinstance(b, Field) else None
    bv = b.values if grid else np.asarray(b, dtype=float).ravel()
    if isinstance(A, LinearMap):
        matvec = A
    elif hasattr(A, "apply"):
        matvec = A.apply
    elif isinstance(A, np.ndarray):
        matvec = A.__matmul__
    else:
        matvec = A
    if x0 is None:
        x = np.zeros_like(bv)
    else:
        x = np.array(x0.values if isinstance(x0, Field) else x0, dtype=float).ravel()
        if x.size != bv.size:
            raise ShapeMismatch("x0 and b have different sizes")

    def wrap(v):
        return Field(grid, v) if grid else v.reshape(np.shape(b))

    bnorm = np.linalg.norm(bv)
    target = cfg.tol * bnorm
    cap = cfg.iteration_cap(bv.size)
    r = bv - matvec(x) if x0 is not None else bv.copy()
    rnorm = np.linalg.norm(r)
    if bnorm == 0.0 or rnorm <= target:
        return CgResult(wrap(x), 0, float(rnorm / bnorm) if bnorm else 0.0, True)

    z = precond(r) if precond else r
    p = z.copy()
    rz = r @ z
    for it in range(1, cap + 1):
        Ap = matvec(p)
        curv = p @ Ap
        if not curv > 0:
            raise BreakdownNonSPD(f"<p, Ap> = {curv:.3e} at iteration {it}")
        step = rz / curv
        x += step * p
        r -= step * Ap
        rnorm = np.linalg.norm(r)
        if rnorm <= target:
            # the recursive residual drifts from the true one; confirm before stopping
            r = bv - matvec(x)
            rnorm = np.linalg.norm(r)
            if rnorm <= target:
                log.debug("cg converged in %d iterations (resid %.3e)", it, rnorm / bnorm)
                return CgResult(wrap(x), it, float(rnorm / bnorm), True)
        z = precond(r) if precond else r
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
    warnings.warn(f"CG stopped at the iteration cap ({cap}) with relative residual "
                  f"{rnorm / bnorm:.3e}", MaxIterWarning, stacklevel=2)
    return CgResult(wrap(x), cap, float(rnorm / bnorm), False)
