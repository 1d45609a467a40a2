"""Riemannian adaptive optimization on embedded submanifolds.

Every method is one instance of the update

    x_{k+1} = R_{x_k}(-alpha_k * P_{x_k}(H_k^{-1} m_k)),

where ``m_k`` comes from a moment map and the diagonal ``H_k`` from a
preconditioner map, both fed the mini-batch Riemannian gradients. Moments
are kept in flattened ambient coordinates (column-major) and are never
re-projected; only the final direction is projected onto the tangent space.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .exceptions import PoisonedStateError

__all__ = [
    "METHODS",
    "AdaptiveState",
    "StepSchedule",
    "BatchSchedule",
    "OptimizerSpec",
    "phi",
    "psi",
    "step",
    "step_size",
    "batch_size",
    "minimize",
    "flatten",
    "unflatten",
]

METHODS = ("rsgd", "radagrad", "rrmsprop", "radam", "ramsgrad")


def flatten(a):
    """Column-major flattening used for every elementwise moment operation."""
    return np.asarray(a, dtype=float).ravel(order="F")


def unflatten(v, shape):
    return np.reshape(v, shape, order="F")


@dataclass
class AdaptiveState:
    """Moment accumulators of a single optimizer run.

    ``k`` is the index of the iteration whose gradient was consumed last
    (0 before the first step). ``m``, ``v`` and ``v_hat`` start at zero.
    """

    m: np.ndarray
    v: np.ndarray
    v_hat: np.ndarray
    k: int = 0
    method: str = "ramsgrad"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    standard_bias_correction: bool = False

    @classmethod
    def zeros(cls, d, **kwargs):
        return cls(m=np.zeros(d), v=np.zeros(d), v_hat=np.zeros(d), **kwargs)

    def copy(self):
        return replace(self, m=self.m.copy(), v=self.v.copy(), v_hat=self.v_hat.copy())


def _bias_exponent(state):
    # The printed Adam maps divide by 1 - beta^(k+1); standard Adam uses k.
    return state.k if state.standard_bias_correction else state.k + 1


def _check_grad(state, g):
    g = np.asarray(g, dtype=float)
    if g.shape != state.m.shape:
        raise ValueError(f"gradient has {g.shape}, state expects {state.m.shape}")
    if not np.all(np.isfinite(g)):
        raise PoisonedStateError(f"non-finite gradient at iteration {state.k}")
    return g


def phi(state, g):
    """First-moment map; updates ``state.m`` in place and returns ``m_k``.

    ``state.k`` must already hold the current iteration index (>= 1).
    """
    if state.k < 1:
        raise ValueError("iteration counter must be >= 1")
    g = _check_grad(state, g)
    method = state.method
    if method in ("rsgd", "radagrad", "rrmsprop"):
        state.m = g.copy()
        return state.m
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    if method == "radam":
        return state.m / (1.0 - state.beta1 ** _bias_exponent(state))
    if method == "ramsgrad":
        return state.m
    raise ValueError(f"unknown method {method!r}")


def psi(state, g):
    """Preconditioner map; updates ``v``/``v_hat`` and returns the diagonal of ``H_k``."""
    if state.k < 1:
        raise ValueError("iteration counter must be >= 1")
    g = _check_grad(state, g)
    method = state.method
    if method == "rsgd":
        return np.ones_like(g)
    if method == "radagrad":
        state.v = state.v + g * g
        return np.sqrt(state.v) + state.eps
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    if method == "rrmsprop":
        return np.sqrt(state.v) + state.eps
    if method == "radam":
        v_hat = state.v / (1.0 - state.beta2 ** _bias_exponent(state))
        return np.sqrt(v_hat) + state.eps
    if method == "ramsgrad":
        state.v_hat = np.maximum(state.v_hat, state.v)
        return np.sqrt(state.v_hat) + state.eps
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class StepSchedule:
    """``constant``: alpha_k = alpha; ``diminishing``: alpha_k = alpha / sqrt(k)."""

    kind: str = "constant"
    alpha: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("constant", "diminishing"):
            raise ValueError(f"unknown step schedule {self.kind!r}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def __call__(self, k):
        if k < 1:
            raise ValueError("step index must be >= 1")
        if self.kind == "constant":
            return self.alpha
        return self.alpha / math.sqrt(k)


@dataclass(frozen=True)
class BatchSchedule:
    """Mini-batch sizes, constant or multiplied by ``delta`` every ``period`` steps.

    ``exponential`` gives ``b_k = min(cap, floor(delta**(k // period) * b0))``.
    The cap defaults to the number of samples passed at call time.
    """

    kind: str = "constant"
    b0: int = 1
    delta: float = 2.0
    period: int = 1
    cap: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("constant", "exponential"):
            raise ValueError(f"unknown batch schedule {self.kind!r}")
        if self.b0 < 1:
            raise ValueError("initial batch size must be >= 1")
        if self.kind == "exponential" and not (self.delta > 1 and self.period >= 1):
            raise ValueError("exponential schedule needs delta > 1 and period >= 1")

    @classmethod
    def parse(cls, text, b0):
        """Parse ``constant`` or ``exp:<delta>:<period>`` (CLI syntax)."""
        if text in (None, "", "constant"):
            return cls("constant", int(b0))
        parts = text.split(":")
        if parts[0] not in ("exp", "exponential") or len(parts) != 3:
            raise ValueError(f"bad batch schedule {text!r}; expected exp:<delta>:<period>")
        return cls("exponential", int(b0), float(parts[1]), int(parts[2]))

    def __call__(self, k, n_samples=None):
        if k < 1:
            raise ValueError("step index must be >= 1")
        cap = min(c for c in (self.cap, n_samples, math.inf) if c is not None)
        if self.kind == "constant":
            b = self.b0
        else:
            e = k // self.period
            if e * math.log(self.delta) + math.log(self.b0) >= math.log(cap):
                b = cap
            else:
                b = math.floor(self.delta ** e * self.b0)
        return int(max(1, min(b, cap)))

    def __str__(self):
        if self.kind == "constant":
            return "constant"
        return f"exp:{self.delta:g}:{self.period}"


def step_size(schedule, k):
    return schedule(k)


def batch_size(schedule, k, n_samples=None):
    return schedule(k, n_samples)


@dataclass(frozen=True)
class OptimizerSpec:
    """Method name, hyperparameters and schedules of one optimizer.

    ``phi``/``psi`` may be given as callables ``f(state, g)`` to plug in
    custom moment and preconditioner maps; they then replace the maps of
    ``method``.
    """

    method: str = "ramsgrad"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: StepSchedule = field(default_factory=StepSchedule)
    batch: BatchSchedule = field(default_factory=BatchSchedule)
    standard_bias_correction: bool = False
    phi: Optional[Callable] = None
    psi: Optional[Callable] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    def init_state(self, d):
        return AdaptiveState.zeros(
            d, method=self.method, beta1=self.beta1, beta2=self.beta2,
            eps=self.eps, standard_bias_correction=self.standard_bias_correction)


def step(x, g, state, spec, manifold):
    """Advance one iteration; returns ``(x_next, state)``.

    ``g`` is the mini-batch Riemannian gradient at ``x``. ``state`` is
    updated in place.
    """
    state.k += 1
    alpha = spec.step(state.k)
    gf = flatten(g)
    m = (spec.phi or phi)(state, gf)
    h = (spec.psi or psi)(state, gf)
    if np.any(h <= 0):
        raise ValueError("preconditioner must be positive")
    direction = manifold.project(x, unflatten(m / h, manifold.shape))
    return manifold.retract(x, -alpha * direction), state


def minimize(problem, spec, x0, max_iter, seed=None, callback=None):
    """Run ``max_iter`` iterations from ``x0`` on ``problem``.

    Mini-batches are drawn uniformly with replacement from a generator
    seeded by ``seed``. ``callback(k, x_k, alpha_k, b_k)`` is invoked
    before each update; a truthy return stops the run. Returns the last
    iterate and the optimizer state.
    """
    manifold = problem.manifold
    rng = np.random.default_rng(seed)
    x = manifold.validate_point(x0).copy()
    state = spec.init_state(manifold.ambient_dim)
    for k in range(1, max_iter + 1):
        b = spec.batch(k, problem.n_samples)
        if callback is not None and callback(k, x, spec.step(k), b):
            break
        idx = problem.sample_batch(b, rng)
        x, state = step(x, problem.minibatch_grad(x, idx), state, spec, manifold)
    return x, state
