"""Finite-sum benchmark objectives with per-sample Riemannian gradients.

Both problems expose the same small surface used by the optimizer loop:
``manifold``, ``n_samples``, ``value``, ``grad``, ``sample_grad``,
``minibatch_grad`` and ``sample_batch``.
"""

import numpy as np
import scipy.sparse as sp

from .manifolds import Grassmann, Sphere, Stiefel

__all__ = ["PcaProblem", "LrmcProblem", "sample_batch"]

# Above this many entries the LRMC problem slices columns from CSC storage
# instead of caching dense copies.
_DENSE_CACHE_LIMIT = 4_000_000
_CHUNK = 512


def sample_batch(n_samples, b, rng):
    """Indices drawn i.i.d. uniformly with replacement."""
    if b < 1:
        raise ValueError("batch size must be >= 1")
    return rng.integers(0, n_samples, size=int(b))


class _FiniteSum:
    manifold = None
    n_samples = 0

    def sample_batch(self, b, rng):
        return sample_batch(self.n_samples, b, rng)

    def _batch(self, idx):
        idx = np.asarray(idx, dtype=np.intp).ravel()
        if idx.size == 0:
            raise ValueError("empty mini-batch")
        if idx.min() < 0 or idx.max() >= self.n_samples:
            raise IndexError("mini-batch index out of range")
        return idx

    def sample_grad(self, x, i):
        return self.minibatch_grad(x, [i])

    def grad(self, x):
        return self.minibatch_grad(x, np.arange(self.n_samples))

    def grad_norm(self, x):
        return float(np.linalg.norm(self.grad(x)))


class PcaProblem(_FiniteSum):
    """Mean reconstruction error ``(1/N) sum ||x_i - U U^T x_i||^2``.

    Parameters
    ----------
    data : array of shape (N, n)
        One sample per row.
    p : int
        Number of components.
    manifold : Stiefel or Sphere, optional
        Defaults to ``Stiefel(n, p)`` with the QR retraction. A ``Sphere``
        is accepted when ``p == 1``; points are then vectors.
    """

    def __init__(self, data, p, manifold=None):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError("data must be a non-empty (N, n) array")
        n = data.shape[1]
        if not 1 <= p <= n:
            raise ValueError(f"need 1 <= p <= n, got p={p}, n={n}")
        if manifold is None:
            manifold = Stiefel(n, p)
        if isinstance(manifold, Sphere):
            if p != 1 or manifold.d != n:
                raise ValueError("sphere PCA needs p == 1 and d == n")
        elif manifold.shape != (n, p):
            raise ValueError(f"manifold {manifold!r} does not match data ({n}, {p})")
        self.data = data
        self.p = int(p)
        self.manifold = manifold
        self.n_samples, self.n_features = data.shape

    def _mat(self, u):
        return self.manifold.validate_point(u).reshape(self.n_features, -1)

    def value(self, u):
        u = self._mat(u)
        resid = self.data - (self.data @ u) @ u.T
        return float(np.einsum("ij,ij->", resid, resid) / self.n_samples)

    def egrad(self, u, idx=None):
        """Euclidean gradient ``-(2/b) sum x_i x_i^T U`` over ``idx`` (all samples if None)."""
        u = self._mat(u)
        xb = self.data if idx is None else self.data[self._batch(idx)]
        return (-2.0 / xb.shape[0]) * (xb.T @ (xb @ u))

    def minibatch_grad(self, u, idx):
        eg = self.egrad(u, idx).reshape(self.manifold.shape)
        return self.manifold.project(u, eg)

    def grad(self, u):
        eg = self.egrad(u).reshape(self.manifold.shape)
        return self.manifold.project(u, eg)


class LrmcProblem(_FiniteSum):
    """Rank-p matrix completion on ``Gr(p, n)``.

    The objective is ``(1/2N) sum_i ||P_i(U q_i - x_i)||^2`` where each
    column ``x_i`` is observed on the rows ``P_i`` and ``q_i`` is the
    minimum-norm least-squares fit of the observed entries.

    Parameters
    ----------
    values : sparse or dense array of shape (n, N)
        Observed entries; unobserved entries are ignored.
    mask : array-like of bool, shape (n, N), optional
        Observation pattern. Defaults to the sparsity structure of
        ``values`` (sparse input) or its non-NaN entries (dense input).
    p : int
        Target rank.
    manifold : Grassmann, optional
        Defaults to ``Grassmann(n, p)`` with the polar retraction.
    """

    def __init__(self, values, p, mask=None, manifold=None):
        if sp.issparse(values):
            values = sp.csc_matrix(values, dtype=float)
            if mask is None:
                mask = values.copy()
                mask.data = np.ones_like(mask.data)
            mask = sp.csc_matrix(mask, dtype=float)
            mask.data = (mask.data != 0).astype(float)
        else:
            dense = np.asarray(values, dtype=float)
            if mask is None:
                mask = ~np.isnan(dense)
            mask = np.asarray(mask, dtype=bool)
            values = sp.csc_matrix(np.where(mask, np.nan_to_num(dense), 0.0))
            mask = sp.csc_matrix(mask.astype(float))
        mask.eliminate_zeros()
        n, N = values.shape
        if mask.shape != (n, N):
            raise ValueError("mask shape does not match values")
        if N < 1:
            raise ValueError("need at least one column")
        counts = np.diff(mask.indptr)
        if np.any(counts < 1):
            raise ValueError(f"columns without observations: {np.flatnonzero(counts < 1)[:10]}")
        if not np.all(np.isfinite(values.data)):
            raise ValueError("observed values must be finite")
        if not 1 <= p <= n:
            raise ValueError(f"need 1 <= p <= n, got p={p}, n={n}")
        if manifold is None:
            manifold = Grassmann(n, p)
        if manifold.shape != (n, p):
            raise ValueError(f"manifold {manifold!r} does not match ({n}, {p})")
        self.values = values
        self.mask = mask
        self.p = int(p)
        self.manifold = manifold
        self.n_features, self.n_samples = n, N
        self._dense = None
        if n * N <= _DENSE_CACHE_LIMIT:
            self._dense = (values.toarray(), mask.toarray())

    @classmethod
    def from_ratings(cls, ratings, p, manifold=None):
        """Build from a :class:`radopt.data.SparseRatings` (rows x columns)."""
        return cls(ratings.to_csc(), p, mask=ratings.mask_csc(), manifold=manifold)

    def _columns(self, idx):
        if self._dense is not None:
            v, m = self._dense
            return v[:, idx], m[:, idx]
        return self.values[:, idx].toarray(), self.mask[:, idx].toarray()

    def solve_q(self, u, i):
        """Minimum-norm least-squares coefficients for column ``i``."""
        u = self.manifold.validate_point(u)
        lo, hi = self.mask.indptr[i], self.mask.indptr[i + 1]
        rows = self.mask.indices[lo:hi]
        x = np.asarray(self.values[rows, i].todense()).ravel()
        q, *_ = np.linalg.lstsq(u[rows], x, rcond=None)
        return q

    def _fit(self, u, idx):
        """Coefficients ``Q`` (b, p) and masked residuals ``R`` (n, b) for columns ``idx``."""
        xv, m = self._columns(idx)
        a = m.T[:, :, None] * u[None, :, :]
        q = np.einsum("bpn,nb->bp", np.linalg.pinv(a), xv * m)
        r = m * (u @ q.T - xv)
        return q, r

    def coefficients(self, u):
        u = self.manifold.validate_point(u)
        out = np.empty((self.n_samples, self.p))
        for lo in range(0, self.n_samples, _CHUNK):
            idx = np.arange(lo, min(lo + _CHUNK, self.n_samples))
            out[idx] = self._fit(u, idx)[0]
        return out

    def value(self, u):
        u = self.manifold.validate_point(u)
        total = 0.0
        for lo in range(0, self.n_samples, _CHUNK):
            idx = np.arange(lo, min(lo + _CHUNK, self.n_samples))
            _, r = self._fit(u, idx)
            total += float(np.einsum("ij,ij->", r, r))
        return total / (2.0 * self.n_samples)

    def _egrad_sum(self, u, idx):
        total = np.zeros_like(u)
        for lo in range(0, idx.size, _CHUNK):
            q, r = self._fit(u, idx[lo:lo + _CHUNK])
            total += r @ q
        return total

    def egrad(self, u, idx=None):
        """Mean of ``r_i q_i^T`` over ``idx`` (all columns if None)."""
        u = self.manifold.validate_point(u)
        idx = np.arange(self.n_samples) if idx is None else self._batch(idx)
        return self._egrad_sum(u, idx) / idx.size

    def minibatch_grad(self, u, idx):
        return self.manifold.project(u, self.egrad(u, idx))

    def grad(self, u):
        return self.manifold.project(u, self.egrad(u))
