"""scikit-learn compatible estimators built on the Riemannian adaptive optimizers.

Example
-------
>>> import numpy as np
>>> from radopt import RiemannianPCA
>>> X = np.random.default_rng(0).standard_normal((200, 6))
>>> Z = RiemannianPCA(n_components=2, max_iter=50, random_state=0).fit_transform(X)
>>> Z.shape
(200, 2)
"""

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .manifolds import Grassmann, Stiefel
from .optim import BatchSchedule, OptimizerSpec, StepSchedule, minimize
from .problems import LrmcProblem, PcaProblem

__all__ = ["RiemannianPCA", "RiemannianMatrixCompletion"]


class _AdaptiveFitMixin:
    """Shared optimizer plumbing for the estimators below."""

    def _optimizer_spec(self):
        return OptimizerSpec(
            method=self.method, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            step=StepSchedule(self.step, self.alpha),
            batch=BatchSchedule.parse(self.batch_schedule, self.batch_size))

    def _run(self, problem):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        spec = self._optimizer_spec()
        init_seed, batch_seed = np.random.SeedSequence(self.random_state).spawn(2)
        x0 = problem.manifold.random_point(init_seed)
        history = []

        def callback(k, x, alpha, b):
            if self.record_every and (k == 1 or k % self.record_every == 0):
                history.append((k, problem.value(x), problem.grad_norm(x)))
            return False

        x, state = minimize(problem, spec, x0, self.max_iter, seed=batch_seed,
                            callback=callback)
        self.history_ = history
        self.n_iter_ = state.k
        self.objective_ = problem.value(x)
        return x


class RiemannianPCA(_AdaptiveFitMixin, TransformerMixin, BaseEstimator):
    """Principal subspace by stochastic optimization on the Stiefel manifold.

    Minimizes the mean reconstruction error ``||x - U U^T x||^2`` over
    matrices ``U`` with orthonormal columns.

    Parameters
    ----------
    n_components : int
        Dimension of the subspace.
    method : {"rsgd", "radagrad", "rrmsprop", "radam", "ramsgrad"}
    alpha : float
        Initial step size.
    step : {"constant", "diminishing"}
        ``diminishing`` uses ``alpha / sqrt(k)``.
    batch_size : int
        (Initial) mini-batch size.
    batch_schedule : str
        ``"constant"`` or ``"exp:<delta>:<period>"``.
    max_iter : int
    beta1, beta2, eps : float
        Moment hyperparameters (ignored by the methods that do not use them).
    center : bool
        Subtract the column means before fitting. The reconstruction
        objective itself is uncentered, so the default is False.
    retraction : {"qr", "polar"}
    random_state : int or None
        Seeds the initial point and the mini-batch sampler.
    record_every : int
        Record ``(k, objective, gradient norm)`` in ``history_`` every so
        many iterations; 0 disables it.

    Attributes
    ----------
    components_ : ndarray of shape (n_components, n_features)
    mean_ : ndarray of shape (n_features,)
    objective_ : float
        Final training objective.
    n_iter_ : int
    history_ : list of tuple
    """

    def __init__(self, n_components=2, method="ramsgrad", alpha=1e-2, step="constant",
                 batch_size=64, batch_schedule="constant", max_iter=1000, beta1=0.9,
                 beta2=0.999, eps=1e-8, center=False, retraction="qr", random_state=None,
                 record_every=0):
        self.n_components = n_components
        self.method = method
        self.alpha = alpha
        self.step = step
        self.batch_size = batch_size
        self.batch_schedule = batch_schedule
        self.max_iter = max_iter
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.center = center
        self.retraction = retraction
        self.random_state = random_state
        self.record_every = record_every

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64)
        n_features = X.shape[1]
        if not 1 <= self.n_components <= n_features:
            raise ValueError(f"n_components must lie in [1, {n_features}]")
        self.mean_ = X.mean(axis=0) if self.center else np.zeros(n_features)
        manifold = Stiefel(n_features, self.n_components, retraction=self.retraction)
        problem = PcaProblem(X - self.mean_, self.n_components, manifold)
        self.components_ = self._run(problem).T
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return (X - self.mean_) @ self.components_.T

    def inverse_transform(self, X):
        check_is_fitted(self, "components_")
        return np.asarray(X, dtype=float) @ self.components_ + self.mean_

    def score(self, X, y=None):
        """Negative mean squared reconstruction error per sample."""
        Z = self.transform(X)
        resid = np.asarray(X, dtype=float) - self.inverse_transform(Z)
        return -float(np.mean(np.sum(resid ** 2, axis=1)))


class RiemannianMatrixCompletion(_AdaptiveFitMixin, BaseEstimator):
    """Low-rank matrix completion by optimization on the Grassmann manifold.

    Rows of ``X`` are samples (e.g. users) and columns are features (e.g.
    items). Missing entries are NaN in a dense array, or absent from a
    sparse matrix. The fitted model is a column space ``subspace_`` shared
    by all samples; each sample's coefficients are a least-squares fit of
    its observed entries.

    Parameters are as for :class:`RiemannianPCA`, with ``rank`` in place
    of ``n_components`` and the polar retraction by default.

    Attributes
    ----------
    subspace_ : ndarray of shape (n_features, rank)
    coef_ : ndarray of shape (n_samples, rank)
        Coefficients of the training samples.
    objective_ : float
    n_iter_ : int
    history_ : list of tuple
    """

    def __init__(self, rank=2, method="ramsgrad", alpha=1e-1, step="diminishing",
                 batch_size=16, batch_schedule="constant", max_iter=1000, beta1=0.9,
                 beta2=0.999, eps=1e-8, retraction="polar", random_state=None,
                 record_every=0):
        self.rank = rank
        self.method = method
        self.alpha = alpha
        self.step = step
        self.batch_size = batch_size
        self.batch_schedule = batch_schedule
        self.max_iter = max_iter
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.retraction = retraction
        self.random_state = random_state
        self.record_every = record_every

    def _problem(self, X, reset):
        X = validate_data(self, X, accept_sparse=("csr", "csc", "coo"), dtype=np.float64,
                          ensure_all_finite="allow-nan", reset=reset)
        if not 1 <= self.rank <= X.shape[1]:
            raise ValueError(f"rank must lie in [1, {X.shape[1]}]")
        manifold = Grassmann(X.shape[1], self.rank, retraction=self.retraction)
        values = X.T.tocsc() if sp.issparse(X) else X.T
        return LrmcProblem(values, self.rank, manifold=manifold)

    def fit(self, X, y=None):
        problem = self._problem(X, reset=True)
        self.subspace_ = self._run(problem)
        self.coef_ = problem.coefficients(self.subspace_)
        return self

    def transform(self, X):
        """Least-squares coefficients of each row's observed entries."""
        check_is_fitted(self, "subspace_")
        return self._problem(X, reset=False).coefficients(self.subspace_)

    def predict(self, X):
        """Dense completion of every row of ``X``."""
        return self.transform(X) @ self.subspace_.T

    def score(self, X, y=None):
        """Negative matrix-completion objective on the observed entries of ``X``."""
        check_is_fitted(self, "subspace_")
        return -self._problem(X, reset=False).value(self.subspace_)
