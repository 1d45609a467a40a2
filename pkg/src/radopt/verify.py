"""Independent numerical checks: finite differences, gradient bounds and rate trends."""

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .harness import run
from .optim import AdaptiveState, psi

__all__ = [
    "AnalysisBounds",
    "RateFit",
    "fd_directional",
    "random_unit_tangent",
    "estimate_L",
    "empirical_gradient_bounds",
    "amsgrad_bound_trace",
    "rate_experiment",
    "write_report",
    "gradient_oracle_error",
    "standard_checks",
]


@dataclass(frozen=True)
class AnalysisBounds:
    """Gradient bounds ``G`` (full) and ``B`` (mini-batch) with the derived ``mu``, ``nu``.

    For AMSGrad, ``mu * I <= H_k^{-1} <= nu * I`` with
    ``mu = 1 / (B + eps)`` and ``nu = 1 / eps``.
    """

    B: float
    G: float
    eps: float = 1e-8

    @property
    def mu(self):
        return 1.0 / (self.B + self.eps)

    @property
    def nu(self):
        return 1.0 / self.eps

    def step_cap(self, L):
        """Largest constant step size admitted by the constant-step analysis."""
        return 2.0 * self.mu / (L * self.nu ** 2)


def fd_directional(fn, manifold, x, eta, t=1e-5):
    """Central difference ``(f(R_x(t eta)) - f(R_x(-t eta))) / 2t``."""
    if not t > 0:
        raise ValueError("t must be positive")
    eta = np.asarray(eta, dtype=float)
    return (fn(manifold.retract(x, t * eta)) - fn(manifold.retract(x, -t * eta))) / (2.0 * t)


def random_unit_tangent(manifold, x, rng):
    eta = manifold.project(x, rng.standard_normal(manifold.shape))
    return eta / np.linalg.norm(eta)


def estimate_L(fn, manifold, trials=20, grad=None, t=1e-2, seed=0):
    """Lower witness of the retraction smoothness constant.

    Maximum over random ``(x, eta)`` of
    ``2 |f(R_x(t eta)) - f(x) - t <grad f(x), eta>| / t^2`` for unit ``eta``.
    Without ``grad`` the directional derivative is taken by central differences.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(trials):
        x = manifold.random_point(rng)
        eta = random_unit_tangent(manifold, x, rng)
        if grad is None:
            slope = fd_directional(fn, manifold, x, eta, t=1e-6)
        else:
            slope = float(np.vdot(grad(x), eta))
        gap = fn(manifold.retract(x, t * eta)) - fn(x) - t * slope
        best = max(best, 2.0 * abs(gap) / t ** 2)
    return best


def empirical_gradient_bounds(problem, n_points=100, seed=0, eps=1e-8):
    """Max full-gradient and per-sample-gradient norms over random points.

    Per-sample norms bound every mini-batch gradient by the triangle
    inequality, so the second maximum serves as ``B``.
    """
    rng = np.random.default_rng(seed)
    G = B = 0.0
    for _ in range(n_points):
        x = problem.manifold.random_point(rng)
        G = max(G, problem.grad_norm(x))
        B = max(B, max(np.linalg.norm(problem.sample_grad(x, i))
                       for i in range(problem.n_samples)))
    return AnalysisBounds(B=B, G=G, eps=eps)


def amsgrad_bound_trace(grads, step, beta2=0.999, eps=1e-8):
    """Feed a gradient stream through the AMSGrad preconditioner.

    Returns ``(v_hat_max, worst_v_hat_excess, monotone)`` where
    ``worst_v_hat_excess`` is the largest ``v_hat_i - B_k^2`` seen against
    the running gradient-norm bound ``B_k``, and ``monotone`` tells whether
    ``alpha_k / (sqrt(v_hat_k) + eps)`` was coordinatewise nonincreasing.
    """
    grads = np.asarray(grads, dtype=float)
    state = AdaptiveState.zeros(grads.shape[1], method="ramsgrad", beta1=0.0,
                                beta2=beta2, eps=eps)
    prev = None
    monotone = True
    b_run = 0.0
    excess = -math.inf
    for k, g in enumerate(grads, start=1):
        state.k = k
        diag = psi(state, g)
        b_run = max(b_run, float(np.linalg.norm(g)))
        excess = max(excess, float(state.v_hat.max() - b_run ** 2))
        ratio = step(k) / diag
        if prev is not None and np.any(ratio > prev):
            monotone = False
        prev = ratio
    return float(state.v_hat.max()), excess, monotone


@dataclass
class RateFit:
    """Running-average squared gradient norms per batch configuration.

    ``curves[label][k-1]`` is the seed average of
    ``(1/k) sum_{j<=k} ||grad f(x_j)||^2``; ``plateaus`` holds its value at
    ``K``. ``coef`` = ``(a, c)`` fits ``a / K + c / b`` over the constant
    batch sizes.
    """

    labels: list
    plateaus: dict
    curves: dict = field(repr=False)
    coef: tuple = (math.nan, math.nan)
    diverged: dict = field(default_factory=dict)


def _label(b0, schedule):
    return f"b={b0}" if schedule in (None, "", "constant") else f"b0={b0},{schedule}"


def rate_experiment(config, batches, seeds=None, problems=None):
    """Run ``config`` with ``beta1 = 0`` for each ``(b0, schedule)`` in ``batches``.

    Metrics are taken at every iteration. Divergent seeds are reported in
    ``diverged`` and left out of the averages.
    """
    base = replace(config, beta1=0.0, cadence=1, out=None,
                   seeds=tuple(seeds) if seeds is not None else config.seeds)
    labels, plateaus, curves, diverged = [], {}, {}, {}
    fit_rows = []
    for item in batches:
        b0, schedule = (item, "constant") if np.isscalar(item) else item
        cfg = replace(base, batch=int(b0), batch_schedule=schedule)
        res = run(cfg, problems=problems)
        label = _label(b0, schedule)
        labels.append(label)
        ok = [r for r in res.values() if not r.diverged]
        diverged[label] = [r.seed for r in res.values() if r.diverged]
        if not ok:
            plateaus[label] = math.nan
            curves[label] = np.full(cfg.iters, math.nan)
            continue
        sq = np.array([[rec.gnorm_train ** 2 for rec in r.records if rec.k <= cfg.iters]
                       for r in ok])
        running = np.cumsum(sq, axis=1) / np.arange(1, sq.shape[1] + 1)
        curve = running.mean(axis=0)
        curves[label] = curve
        plateaus[label] = float(curve[-1])
        if schedule in (None, "", "constant"):
            for K in (cfg.iters // 4, cfg.iters // 2, 3 * cfg.iters // 4, cfg.iters):
                if K >= 1:
                    fit_rows.append((1.0 / K, 1.0 / b0, curve[K - 1]))
    coef = (math.nan, math.nan)
    if len({r[1] for r in fit_rows}) >= 2:
        a = np.array([[r[0], r[1]] for r in fit_rows])
        y = np.array([r[2] for r in fit_rows])
        coef = tuple(float(c) for c in np.linalg.lstsq(a, y, rcond=None)[0])
    return RateFit(labels, plateaus, curves, coef, diverged)


def write_report(path_prefix, checks):
    """Write ``checks`` (name, value, limit, passed) as ``.txt`` and ``.csv``.

    Returns True when every check passed.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path_prefix)), exist_ok=True)
    with open(path_prefix + ".csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("check", "value", "limit", "passed"))
        for name, value, limit, passed in checks:
            w.writerow((name, repr(float(value)), repr(float(limit)), int(bool(passed))))
    with open(path_prefix + ".txt", "w", encoding="utf-8") as fh:
        for name, value, limit, passed in checks:
            fh.write(f"{'PASS' if passed else 'FAIL'}  {name}: {value:.3e} (limit {limit:.3e})\n")
    return all(c[3] for c in checks)


def gradient_oracle_error(problem, n_points=5, n_dirs=20, t=1e-5, seed=0):
    """Largest relative gap between ``<grad f(x), eta>`` and its central difference."""
    rng = np.random.default_rng(seed)
    m = problem.manifold
    worst = 0.0
    for _ in range(n_points):
        x = m.random_point(rng)
        g = problem.grad(x)
        for _ in range(n_dirs):
            eta = random_unit_tangent(m, x, rng)
            exact = float(np.vdot(g, eta))
            approx = fd_directional(problem.value, m, x, eta, t)
            worst = max(worst, abs(exact - approx) / max(abs(exact), 1e-12))
    return worst


def standard_checks(seed=0, trials=200):
    """A fast battery of geometry, gradient and preconditioner checks.

    Returns a list of ``(name, value, limit, passed)`` tuples.
    """
    from .data import synth_lrmc, synth_pca
    from .manifolds import Grassmann, Sphere, Stiefel
    from .problems import LrmcProblem, PcaProblem

    rng = np.random.default_rng(seed)
    checks = []
    for m in (Sphere(10), Stiefel(5, 2), Stiefel(20, 10), Grassmann(8, 3)):
        idem = tan = zero = 0.0
        for _ in range(trials):
            x = m.random_point(rng)
            v = rng.standard_normal(m.shape)
            pv = m.project(x, v)
            idem = max(idem, float(np.linalg.norm(m.project(x, pv) - pv)))
            tan = max(tan, m.check_tangent(x, pv)[1])
            zero = max(zero, float(np.linalg.norm(m.retract(x, np.zeros(m.shape)) - x)))
        checks += [(f"{m!r} projection idempotence", idem, 1e-12, idem <= 1e-12),
                   (f"{m!r} tangency residual", tan, 1e-8, tan <= 1e-8),
                   (f"{m!r} retraction at zero", zero, 1e-14, zero <= 1e-14)]
    pca = PcaProblem(synth_pca(8, 2, 30, 0.3, seed).samples, 2)
    err = gradient_oracle_error(pca, seed=seed)
    checks.append(("PCA gradient vs finite differences", err, 1e-5, err < 1e-5))
    ratings = synth_lrmc(8, 6, 2, 0.6, 0.5, seed)
    lrmc = LrmcProblem.from_ratings(ratings, 2)
    err = gradient_oracle_error(lrmc, seed=seed)
    checks.append(("LRMC gradient vs finite differences", err, 1e-4, err < 1e-4))
    g = rng.standard_normal((2000, 6))
    g *= 3.0 / np.linalg.norm(g, axis=1, keepdims=True)
    vmax, _, mono = amsgrad_bound_trace(g, lambda k: 1e-2)
    checks.append(("AMSGrad v_hat <= B^2 (B=3)", vmax, 9.0 + 1e-12, vmax <= 9.0 + 1e-12 and mono))
    return checks
