"""scikit-learn style wrapper around the discrete operator.

Each sample is a field flattened x-fastest on the interior nodes of the
grid described by the constructor arguments.  ``fit`` only checks the input
width and assembles the operator; there is nothing to learn from data.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ShapeMismatch
from .krylov import CgConfig, cg_solve
from .pde import build_operator
from .singquad import QuadConfig
from .stencil import FracParams
from .toeplitz import GridSpec

__all__ = ["FractionalLaplacian"]


class FractionalLaplacian(TransformerMixin, BaseEstimator):
    """Apply (``transform``) or invert (``inverse_transform``) the operator row-wise.

    Parameters
    ----------
    alpha : float
        Fractional power in ``(0, 2)``.
    gamma : float
        Splitting parameter in ``(alpha, 2]``.
    dim : int
        2 or 3.
    h : str, Fraction or float
        Mesh size; must divide the longest side of ``bounds``.
    bounds : sequence of (lo, hi), optional
        Box domain; ``(-1, 1)^dim`` by default.
    cg_tol, cg_max_iter : float, int
        Stopping rule for the solves in ``inverse_transform``.
    quad_rel_tol : float
        Quadrature tolerance for the stencil.

    Attributes
    ----------
    grid_ : GridSpec
    operator_ : FractionalOperator
    n_features_in_ : int
    n_iter_ : list of int
        CG iterations of the last ``inverse_transform`` call, per sample.

    Examples
    --------
    >>> est = FractionalLaplacian(alpha=1.0, h="1/8").fit(np.zeros((1, 225)))
    >>> est.transform(np.ones((2, 225))).shape
    (2, 225)
    """

    def __init__(self, alpha=1.0, gamma=2.0, dim=2, h="1/16", bounds=None,
                 cg_tol=1e-10, cg_max_iter=None, quad_rel_tol=1e-12):
        self.alpha = alpha
        self.gamma = gamma
        self.dim = dim
        self.h = h
        self.bounds = bounds
        self.cg_tol = cg_tol
        self.cg_max_iter = cg_max_iter
        self.quad_rel_tol = quad_rel_tol

    def _make_grid(self):
        bounds = self.bounds if self.bounds is not None else [(-1, 1)] * self.dim
        return GridSpec.from_bounds(bounds, self.h)

    def fit(self, X, y=None):
        params = FracParams(self.dim, self.alpha, self.gamma)
        grid = self._make_grid()
        X = check_array(X)
        if X.shape[1] != grid.size:
            raise ShapeMismatch(f"X has {X.shape[1]} columns, the grid has {grid.size} nodes")
        self.grid_ = grid
        self.operator_ = build_operator(params, grid, QuadConfig(rel_tol=self.quad_rel_tol))
        self.n_features_in_ = grid.size
        return self

    def _check(self, X):
        check_is_fitted(self, "operator_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ShapeMismatch(
                f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        return X

    def transform(self, X):
        X = self._check(X)
        return np.stack([self.operator_.apply(row) for row in X])

    def inverse_transform(self, X):
        X = self._check(X)
        cfg = CgConfig(tol=self.cg_tol, max_iter=self.cg_max_iter)
        out = np.empty_like(X)
        self.n_iter_ = []
        for i, row in enumerate(X):
            res = cg_solve(self.operator_, row, cfg=cfg)
            out[i] = res.x
            self.n_iter_.append(res.iters)
        return out
