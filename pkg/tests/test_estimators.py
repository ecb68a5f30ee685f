import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import FunctionTransformer

from fraclap.errors import DomainError, ShapeMismatch
from fraclap.estimators import FractionalLaplacian
from fraclap.pde import build_operator
from fraclap.stencil import FracParams
from fraclap.toeplitz import GridSpec


def test_params_and_clone():
    est = FractionalLaplacian(alpha=0.8, h="1/8")
    copy = clone(est)
    assert copy.get_params() == est.get_params()
    assert copy.set_params(alpha=1.2).alpha == 1.2


def test_transform_matches_operator(rng):
    est = FractionalLaplacian(alpha=1.3, h="1/8")
    X = rng.standard_normal((3, 225))
    Y = est.fit(X).transform(X)
    op = build_operator(FracParams(2, 1.3), GridSpec.box(-1, 1, 2, "1/8"))
    for x, y in zip(X, Y):
        np.testing.assert_allclose(y, op.apply(x), rtol=1e-14, atol=1e-12)


def test_inverse_round_trip(rng):
    est = FractionalLaplacian(alpha=0.6, h="1/8", cg_tol=1e-12).fit(np.zeros((1, 225)))
    X = rng.standard_normal((2, 225))
    back = est.inverse_transform(est.transform(X))
    np.testing.assert_allclose(back, X, atol=1e-8)
    assert len(est.n_iter_) == 2


def test_3d_and_bounds():
    est = FractionalLaplacian(alpha=1.0, dim=3, h="1/4", bounds=[(0, 1)] * 3)
    est.fit(np.zeros((1, 27)))
    assert est.n_features_in_ == 27 and est.grid_.d == 3


def test_errors():
    with pytest.raises(NotFittedError):
        FractionalLaplacian().transform(np.zeros((1, 961)))
    with pytest.raises(ShapeMismatch):
        FractionalLaplacian(h="1/8").fit(np.zeros((1, 10)))
    with pytest.raises(DomainError):
        FractionalLaplacian(alpha=2.5, h="1/8").fit(np.zeros((1, 225)))
    est = FractionalLaplacian(h="1/8").fit(np.zeros((1, 225)))
    with pytest.raises(ShapeMismatch):
        est.transform(np.zeros((1, 224)))


def test_in_pipeline(rng):
    pipe = make_pipeline(FunctionTransformer(lambda X: 2 * X), FractionalLaplacian(h="1/8"))
    X = rng.standard_normal((2, 225))
    out = pipe.fit_transform(X)
    ref = FractionalLaplacian(h="1/8").fit(X).transform(2 * X)
    np.testing.assert_allclose(out, ref)
