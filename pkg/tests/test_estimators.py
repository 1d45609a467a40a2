import numpy as np
import pytest
import scipy.sparse as sp
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from radopt import RiemannianMatrixCompletion, RiemannianPCA
from radopt.data import synth_lrmc, synth_pca


def subspace_gap(a, b):
    """Spectral distance between the projectors onto span(a) and span(b)."""
    qa, qb = np.linalg.qr(a)[0], np.linalg.qr(b)[0]
    return np.linalg.norm(qa @ qa.T - qb @ qb.T, 2)


def test_pca_recovers_planted_subspace():
    ds = synth_pca(10, 2, 400, noise=0.01, seed=0)
    est = RiemannianPCA(n_components=2, alpha=1e-2, batch_size=32, max_iter=1500,
                        random_state=0).fit(ds.samples)
    assert est.components_.shape == (2, 10)
    np.testing.assert_allclose(est.components_ @ est.components_.T, np.eye(2), atol=1e-12)
    assert subspace_gap(est.components_.T, ds.basis) < 0.05
    assert est.n_iter_ == 1500


def test_pca_transform_inverse_and_score():
    ds = synth_pca(6, 2, 100, noise=0.0, seed=1)
    est = RiemannianPCA(n_components=2, max_iter=800, alpha=2e-2, random_state=1)
    z = est.fit_transform(ds.samples)
    assert z.shape == (100, 2)
    back = est.inverse_transform(z)
    assert back.shape == ds.samples.shape
    assert est.score(ds.samples) <= 0
    assert -est.score(ds.samples) == pytest.approx(est.objective_, rel=1e-10, abs=1e-14)


def test_pca_centering():
    ds = synth_pca(5, 1, 200, noise=0.0, seed=2)
    shifted = ds.samples + 10.0
    est = RiemannianPCA(n_components=1, center=True, max_iter=600, random_state=0).fit(shifted)
    np.testing.assert_allclose(est.mean_, shifted.mean(axis=0))
    assert subspace_gap(est.components_.T, ds.basis) < 0.1


def test_pca_is_deterministic():
    x = synth_pca(6, 2, 50, 0.1, seed=3).samples
    a = RiemannianPCA(max_iter=100, random_state=7).fit(x).components_
    b = RiemannianPCA(max_iter=100, random_state=7).fit(x).components_
    assert a.tobytes() == b.tobytes()


def test_pca_history():
    x = synth_pca(6, 2, 50, 0.1, seed=3).samples
    est = RiemannianPCA(max_iter=100, record_every=25, random_state=0).fit(x)
    assert [h[0] for h in est.history_] == [1, 25, 50, 75, 100]


def test_pca_get_params_and_clone():
    est = RiemannianPCA(n_components=3, method="radam", alpha=0.5)
    params = est.get_params()
    assert params["n_components"] == 3 and params["method"] == "radam"
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(alpha=0.1)
    assert est.alpha == 0.1


def test_pca_errors():
    with pytest.raises(NotFittedError):
        RiemannianPCA().transform(np.ones((3, 4)))
    with pytest.raises(ValueError):
        RiemannianPCA(n_components=5).fit(np.ones((10, 4)))
    with pytest.raises(ValueError):
        RiemannianPCA(max_iter=0).fit(np.ones((10, 4)))
    est = RiemannianPCA(max_iter=5, random_state=0).fit(np.random.default_rng(0).random((8, 4)))
    with pytest.raises(ValueError):
        est.transform(np.ones((2, 5)))


def _lrmc_data(seed=0):
    r = synth_lrmc(12, 40, 2, obs_frac=0.6, noise=0.0, seed=seed)
    return r, r.to_dense().T


def test_mc_dense_nan_input_recovers():
    r, X = _lrmc_data()
    est = RiemannianMatrixCompletion(rank=2, alpha=0.1, batch_size=8, max_iter=1500,
                                     random_state=0).fit(X)
    assert est.subspace_.shape == (12, 2) and est.coef_.shape == (40, 2)
    assert est.objective_ < 1e-8
    pred = est.predict(X)
    assert pred.shape == X.shape
    obs = ~np.isnan(X)
    np.testing.assert_allclose(pred[obs], X[obs], atol=1e-3)
    assert subspace_gap(est.subspace_, r.basis) < 1e-3


def test_mc_sparse_matches_dense():
    _, X = _lrmc_data(1)
    Xs = sp.csr_matrix(np.nan_to_num(X))
    Xs.eliminate_zeros()
    kw = dict(rank=2, max_iter=50, random_state=3)
    a = RiemannianMatrixCompletion(**kw).fit(X)
    b = RiemannianMatrixCompletion(**kw).fit(Xs)
    np.testing.assert_allclose(a.subspace_, b.subspace_, atol=1e-12)
    np.testing.assert_allclose(a.transform(X), b.transform(Xs), atol=1e-10)


def test_mc_score_and_errors():
    _, X = _lrmc_data(2)
    with pytest.raises(NotFittedError):
        RiemannianMatrixCompletion().predict(X)
    with pytest.raises(ValueError):
        RiemannianMatrixCompletion(rank=20).fit(X)
    est = RiemannianMatrixCompletion(rank=2, max_iter=20, random_state=0).fit(X)
    assert est.score(X) == pytest.approx(-est.objective_)
    assert clone(est).get_params()["rank"] == 2
