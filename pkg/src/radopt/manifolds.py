"""Embedded-submanifold geometry: sphere, Stiefel and Grassmann.

Points and tangent vectors are plain ``numpy`` arrays in ambient
coordinates. A manifold object carries the dimensions and tolerances and
supplies the projection, retraction and constraint checks; it holds no
mutable state, so a single instance may be shared between threads.

Grassmann points are stored as Stiefel representatives and tangent vectors
as horizontal lifts (``X.T @ eta == 0``).
"""

import numpy as np

from .exceptions import DimensionError, FeasibilityError, RetractionError

__all__ = ["Manifold", "Sphere", "Stiefel", "Grassmann", "make_manifold", "qf"]

DEFAULT_TOL = 1e-8


def qf(a):
    """Q-factor of the thin QR decomposition with a positive-diagonal R.

    Raises :class:`RetractionError` when ``a`` is numerically rank deficient.
    """
    q, r = np.linalg.qr(a)
    d = np.diag(r)
    scale = max(1.0, float(np.abs(d).max(initial=0.0)))
    if not np.all(np.isfinite(d)) or np.abs(d).min(initial=np.inf) <= 1e-12 * scale:
        raise RetractionError("QR retraction input is rank deficient")
    return q * np.sign(d)


def _sym(a):
    return 0.5 * (a + a.T)


def _inv_sqrt_psd(s):
    """Inverse square root of a small symmetric positive definite matrix."""
    w, v = np.linalg.eigh(s)
    if w.min() <= 0 or not np.all(np.isfinite(w)):
        raise RetractionError("polar retraction factor is not positive definite")
    return (v / np.sqrt(w)) @ v.T


class Manifold:
    """Common checks shared by the concrete manifolds.

    Parameters
    ----------
    shape : tuple of int
        Ambient array shape of a point.
    tol_feas, tol_tan : float
        Tolerances on the constraint residual of points and tangent vectors.
    """

    kind = "manifold"

    def __init__(self, shape, tol_feas=DEFAULT_TOL, tol_tan=DEFAULT_TOL):
        if tol_feas <= 0 or tol_tan <= 0:
            raise ValueError("tolerances must be positive")
        self.shape = tuple(int(s) for s in shape)
        self.tol_feas = float(tol_feas)
        self.tol_tan = float(tol_tan)

    @property
    def ambient_dim(self):
        return int(np.prod(self.shape))

    def __repr__(self):
        dims = ", ".join(str(s) for s in self.shape)
        return f"{type(self).__name__}({dims})"

    def __eq__(self, other):
        return (type(self) is type(other) and self.shape == other.shape
                and self.tol_feas == other.tol_feas
                and self.tol_tan == other.tol_tan
                and getattr(self, "retraction", None) == getattr(other, "retraction", None))

    def __hash__(self):
        return hash((type(self).__name__, self.shape))

    # -- shape / feasibility -------------------------------------------------

    def _check_shape(self, a, what="array"):
        a = np.asarray(a, dtype=float)
        if a.shape != self.shape:
            raise DimensionError(f"{what} has shape {a.shape}, expected {self.shape}")
        return a

    def feasibility_residual(self, x):
        raise NotImplementedError

    def check_point(self, x):
        """Return ``(is_feasible, residual)`` for a candidate point."""
        res = self.feasibility_residual(self._check_shape(x, "point"))
        return bool(res <= self.tol_feas), res

    def validate_point(self, x):
        x = self._check_shape(x, "point")
        res = self.feasibility_residual(x)
        if not res <= self.tol_feas:
            raise FeasibilityError(
                f"point violates {type(self).__name__} constraint (residual {res:.3e})")
        return x

    def tangent_residual(self, x, eta):
        raise NotImplementedError

    def check_tangent(self, x, eta):
        """Return ``(is_tangent, residual)`` of ``eta`` at ``x``."""
        x = self._check_shape(x, "point")
        eta = self._check_shape(eta, "tangent vector")
        res = self.tangent_residual(x, eta)
        return bool(res <= self.tol_tan), res

    # -- metric --------------------------------------------------------------

    def inner(self, x, a, b):
        """Euclidean inner product of two tangent vectors at ``x``."""
        self._check_shape(x, "point")
        a = self._check_shape(a, "tangent vector")
        b = self._check_shape(b, "tangent vector")
        return float(np.vdot(a, b))

    def norm(self, x, a):
        return float(np.linalg.norm(self._check_shape(a, "tangent vector")))

    def zero_vector(self, x):
        return np.zeros(self.shape)


class Sphere(Manifold):
    """Unit sphere in ``R^d``; retraction by normalization."""

    kind = "sphere"

    def __init__(self, d, tol_feas=DEFAULT_TOL, tol_tan=DEFAULT_TOL):
        if d < 1:
            raise DimensionError("sphere dimension must be positive")
        super().__init__((d,), tol_feas, tol_tan)
        self.d = int(d)

    def feasibility_residual(self, x):
        return abs(float(np.linalg.norm(x)) - 1.0)

    def tangent_residual(self, x, eta):
        return abs(float(x @ eta))

    def project(self, x, v):
        x = self.validate_point(x)
        v = self._check_shape(v, "ambient vector")
        return v - x * (x @ v)

    def retract(self, x, eta):
        x = self._check_shape(x, "point")
        eta = self._check_shape(eta, "tangent vector")
        if not eta.any():
            return x.copy()
        y = x + eta
        nrm = np.linalg.norm(y)
        if not np.isfinite(nrm) or nrm <= 1e-12:
            raise RetractionError(f"sphere retraction input has norm {nrm!r}")
        return y / nrm

    def random_point(self, seed=None):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(self.d)
        return x / np.linalg.norm(x)


class Stiefel(Manifold):
    """Stiefel manifold of ``n x p`` matrices with orthonormal columns.

    Parameters
    ----------
    n, p : int
        Ambient rows and number of columns, ``p <= n``.
    retraction : {"qr", "polar"}
        ``qr`` returns ``qf(X + eta)``; ``polar`` returns
        ``(X + eta)(I + eta^T eta)^{-1/2}``.
    """

    kind = "stiefel"
    retractions = ("qr", "polar")

    def __init__(self, n, p, retraction="qr", tol_feas=DEFAULT_TOL, tol_tan=DEFAULT_TOL):
        if p < 1 or n < 1:
            raise DimensionError("dimensions must be positive")
        if p > n:
            raise DimensionError(f"p={p} cannot exceed n={n}")
        if retraction not in self.retractions:
            raise ValueError(f"unknown retraction {retraction!r}")
        super().__init__((n, p), tol_feas, tol_tan)
        self.n, self.p = int(n), int(p)
        self.retraction = retraction

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, p={self.p}, retraction={self.retraction!r})"

    def feasibility_residual(self, x):
        return float(np.linalg.norm(x.T @ x - np.eye(self.p)))

    def tangent_residual(self, x, eta):
        a = x.T @ eta
        return float(np.linalg.norm(a + a.T))

    def project(self, x, v):
        x = self.validate_point(x)
        v = self._check_shape(v, "ambient matrix")
        return v - x @ _sym(x.T @ v)

    def retract(self, x, eta):
        x = self._check_shape(x, "point")
        eta = self._check_shape(eta, "tangent vector")
        if not eta.any():
            return x.copy()
        if self.retraction == "qr":
            return qf(x + eta)
        return (x + eta) @ _inv_sqrt_psd(np.eye(self.p) + eta.T @ eta)

    def random_point(self, seed=None):
        rng = np.random.default_rng(seed)
        return qf(rng.standard_normal((self.n, self.p)))


class Grassmann(Stiefel):
    """Grassmann manifold ``Gr(p, n)`` via Stiefel representatives.

    Tangent vectors are horizontal lifts; the projection is
    ``(I - X X^T) v``. The default retraction is the polar one.
    """

    kind = "grassmann"

    def __init__(self, n, p, retraction="polar", tol_feas=DEFAULT_TOL, tol_tan=DEFAULT_TOL):
        super().__init__(n, p, retraction=retraction, tol_feas=tol_feas, tol_tan=tol_tan)

    def tangent_residual(self, x, eta):
        return float(np.linalg.norm(x.T @ eta))

    def project(self, x, v):
        x = self.validate_point(x)
        v = self._check_shape(v, "ambient matrix")
        return v - x @ (x.T @ v)


def make_manifold(kind, n, p=1, **kwargs):
    """Build a manifold from its kind name (``sphere``, ``stiefel``, ``grassmann``)."""
    if kind == "sphere":
        return Sphere(n, **kwargs)
    if kind == "stiefel":
        return Stiefel(n, p, **kwargs)
    if kind == "grassmann":
        return Grassmann(n, p, **kwargs)
    raise ValueError(f"unknown manifold kind {kind!r}")
