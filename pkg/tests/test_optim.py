import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from radopt.data import synth_pca
from radopt.exceptions import PoisonedStateError
from radopt.manifolds import Grassmann, Sphere, Stiefel
from radopt.optim import (
    METHODS,
    AdaptiveState,
    BatchSchedule,
    OptimizerSpec,
    StepSchedule,
    batch_size,
    flatten,
    minimize,
    phi,
    psi,
    step,
    step_size,
    unflatten,
)
from radopt.problems import PcaProblem


def state_for(method, d, k=1, **kw):
    s = AdaptiveState.zeros(d, method=method, **kw)
    s.k = k
    return s


# -- moment maps -------------------------------------------------------------

@pytest.mark.parametrize("method", ["rsgd", "radagrad", "rrmsprop"])
def test_phi_identity(method):
    g = np.array([0.3, -2.0, 5.0])
    np.testing.assert_array_equal(phi(state_for(method, 3), g), g)


def test_phi_adam_printed_bias_correction():
    s = state_for("radam", 2)
    out = phi(s, np.array([1.0, 0.0]))
    np.testing.assert_allclose(s.m, [0.1, 0.0], rtol=1e-15)
    np.testing.assert_allclose(out, [0.1 / 0.19, 0.0], rtol=1e-15)
    assert out[0] == pytest.approx(0.52632, abs=1e-5)


def test_phi_adam_standard_bias_correction_flag():
    s = state_for("radam", 1, standard_bias_correction=True)
    assert phi(s, np.array([1.0]))[0] == pytest.approx(1.0, rel=1e-14)


def test_phi_amsgrad_raw_ema():
    s = state_for("ramsgrad", 2, k=2)
    s.m = np.array([0.1, 0.0])
    np.testing.assert_allclose(phi(s, np.array([1.0, 1.0])), [0.19, 0.1], rtol=1e-15)


def test_phi_requires_started_counter():
    with pytest.raises(ValueError):
        phi(AdaptiveState.zeros(2), np.ones(2))


@pytest.mark.parametrize("method", METHODS)
def test_non_finite_gradient_poisons(method):
    with pytest.raises(PoisonedStateError):
        phi(state_for(method, 2), np.array([1.0, np.nan]))
    with pytest.raises(PoisonedStateError):
        psi(state_for(method, 2), np.array([np.inf, 0.0]))


# -- preconditioners ---------------------------------------------------------

def test_psi_rsgd_identity():
    np.testing.assert_array_equal(psi(state_for("rsgd", 4), np.arange(4.0)), np.ones(4))


def test_psi_amsgrad_first_step():
    s = state_for("ramsgrad", 2)
    diag = psi(s, np.array([2.0, 0.0]))
    np.testing.assert_allclose(s.v, [0.004, 0.0], rtol=1e-12)
    np.testing.assert_allclose(diag, [math.sqrt(0.004) + 1e-8, 1e-8], rtol=1e-12)


def test_psi_amsgrad_keeps_max():
    s = state_for("ramsgrad", 2, k=2)
    s.v = np.array([0.5, 0.5])
    s.v_hat = np.array([1.0, 2.0])
    psi(s, np.zeros(2))
    np.testing.assert_array_equal(s.v_hat, [1.0, 2.0])


def test_psi_adagrad_accumulates():
    s = state_for("radagrad", 1)
    psi(s, np.array([3.0]))
    s.k = 2
    diag = psi(s, np.array([4.0]))
    assert diag[0] == pytest.approx(5.0 + 1e-8, rel=1e-15)


def test_psi_rmsprop_and_adam():
    s = state_for("rrmsprop", 1, beta2=0.9)
    assert psi(s, np.array([2.0]))[0] == pytest.approx(math.sqrt(0.4) + 1e-8)
    s = state_for("radam", 1, beta2=0.9)
    # v_1 = 0.4, corrected by 1 - 0.9^2
    assert psi(s, np.array([2.0]))[0] == pytest.approx(math.sqrt(0.4 / 0.19) + 1e-8)


# -- step --------------------------------------------------------------------

@pytest.mark.parametrize("manifold, x, g", [
    (Sphere(2), np.array([1.0, 0.0]), np.array([0.0, 1.0])),
    (Stiefel(2, 1), np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]])),
])
def test_rsgd_step_example(manifold, x, g):
    spec = OptimizerSpec("rsgd", step=StepSchedule("constant", 0.5))
    x1, state = step(x, g, spec.init_state(2), spec, manifold)
    np.testing.assert_allclose(np.ravel(x1), [0.89443, -0.44721], atol=5e-6)
    np.testing.assert_allclose(np.ravel(x1), np.array([1.0, -0.5]) / math.sqrt(1.25), rtol=1e-15)
    assert state.k == 1


@pytest.mark.parametrize("method", METHODS)
def test_zero_gradient_keeps_point(method, rng):
    m = Stiefel(5, 2)
    x = m.random_point(rng)
    spec = OptimizerSpec(method, step=StepSchedule("constant", 0.3))
    x1, _ = step(x, np.zeros((5, 2)), spec.init_state(10), spec, m)
    np.testing.assert_array_equal(x1, x)


def test_ramsgrad_beta1_zero_matches_formula(rng):
    m = Stiefel(6, 3)
    for _ in range(20):
        x = m.random_point(rng)
        g = m.project(x, rng.standard_normal((6, 3)))
        spec = OptimizerSpec("ramsgrad", beta1=0.0, step=StepSchedule("constant", 0.05))
        x1, _ = step(x, g, spec.init_state(18), spec, m)
        h = np.sqrt((1 - 0.999) * g * g) + 1e-8
        expected = m.retract(x, -0.05 * m.project(x, g / h))
        np.testing.assert_allclose(x1, expected, atol=1e-14)


def test_update_norm_bounded(rng):
    m = Grassmann(7, 2)
    spec = OptimizerSpec("radam", step=StepSchedule("constant", 0.1))
    state = spec.init_state(14)
    x = m.random_point(rng)
    for _ in range(30):
        g = m.project(x, rng.standard_normal((7, 2)))
        before = state.copy()
        before.k += 1
        raw = phi(before, flatten(g)) / psi(before, flatten(g))
        x_next, state = step(x, g, state, spec, m)
        direction = m.project(x, unflatten(raw, m.shape))
        assert np.linalg.norm(direction) <= np.linalg.norm(raw) + 1e-12
        x = x_next
        assert m.check_point(x)[0]


def test_column_major_flattening():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(flatten(a), [1.0, 3.0, 2.0, 4.0])
    np.testing.assert_array_equal(unflatten(flatten(a), a.shape), a)


# -- framework subsumption ---------------------------------------------------

def _problem():
    return PcaProblem(synth_pca(8, 2, 64, 0.2, seed=3).samples, 2)


def test_identity_maps_reproduce_rsgd_bitwise():
    prob = _problem()
    x0 = prob.manifold.random_point(1)
    sched = StepSchedule("constant", 0.05)
    batch = BatchSchedule("constant", 8)
    rsgd = OptimizerSpec("rsgd", step=sched, batch=batch)
    custom = OptimizerSpec("ramsgrad", step=sched, batch=batch,
                           phi=lambda s, g: g, psi=lambda s, g: np.ones_like(g))
    traj = {}
    for name, spec in (("rsgd", rsgd), ("custom", custom)):
        pts = []
        minimize(prob, spec, x0, 100, seed=9, callback=lambda k, x, a, b: pts.append(x.copy()))
        traj[name] = np.array(pts)
    np.testing.assert_array_equal(traj["rsgd"], traj["custom"])


def test_rsgd_matches_plain_riemannian_sgd_loop():
    prob = _problem()
    m = prob.manifold
    x0 = m.random_point(2)
    spec = OptimizerSpec("rsgd", step=StepSchedule("diminishing", 0.1),
                         batch=BatchSchedule("constant", 4))
    x_fw, _ = minimize(prob, spec, x0, 50, seed=5)
    rng = np.random.default_rng(5)
    x = x0
    for k in range(1, 51):
        idx = rng.integers(0, prob.n_samples, size=4)
        g = prob.minibatch_grad(x, idx)
        x = m.retract(x, -(0.1 / math.sqrt(k)) * m.project(x, g))
    np.testing.assert_array_equal(x_fw, x)


def test_minimize_callback_stops():
    prob = _problem()
    seen = []
    _, state = minimize(prob, OptimizerSpec("rsgd"), prob.manifold.random_point(0), 100,
                        callback=lambda k, x, a, b: seen.append(k) or k == 5)
    assert seen == [1, 2, 3, 4, 5] and state.k == 4


# -- schedules ---------------------------------------------------------------

def test_step_size_examples():
    assert step_size(StepSchedule("constant", 1e-3), 57) == 1e-3
    assert step_size(StepSchedule("diminishing", 0.1), 4) == pytest.approx(0.05, rel=1e-15)
    assert step_size(StepSchedule("diminishing", 1.0), 1) == 1.0
    with pytest.raises(ValueError):
        step_size(StepSchedule("constant", 1.0), 0)


def test_batch_size_examples():
    assert all(batch_size(BatchSchedule("constant", 2 ** 10), k) == 1024 for k in (1, 50, 10 ** 6))
    exp = BatchSchedule("exponential", 2 ** 7, delta=2.0, period=100)
    assert batch_size(exp, 250, 60000) == 512
    assert batch_size(BatchSchedule("exponential", 16, 2.0, 1), 10 ** 6, 5760) == 5760
    assert batch_size(BatchSchedule("exponential", 16, 2.0, 1, cap=100), 40) == 100


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 64), st.floats(1.1, 4.0), st.integers(1, 50), st.integers(1, 10 ** 5))
def test_exponential_batch_monotone_and_bounded(b0, delta, period, n):
    s = BatchSchedule("exponential", b0, delta, period)
    sizes = [s(k, n) for k in range(1, 400)]
    assert all(1 <= b <= n for b in sizes)
    assert all(a <= b for a, b in zip(sizes, sizes[1:]))


def test_batch_schedule_parse():
    assert BatchSchedule.parse("exp:2:50", 16) == BatchSchedule("exponential", 16, 2.0, 50)
    assert BatchSchedule.parse("constant", 8) == BatchSchedule("constant", 8)
    with pytest.raises(ValueError):
        BatchSchedule.parse("exp:2", 8)


def test_spec_defaults_and_validation():
    spec = OptimizerSpec()
    assert (spec.beta1, spec.beta2, spec.eps) == (0.9, 0.999, 1e-8)
    with pytest.raises(ValueError):
        OptimizerSpec("adamw")
    with pytest.raises(ValueError):
        OptimizerSpec(beta1=1.0)


# -- AMSGrad invariants ------------------------------------------------------

grad_streams = arrays(np.float64, st.tuples(st.integers(1, 60), st.just(4)),
                      elements=st.floats(-50, 50, allow_nan=False))


@settings(max_examples=150, deadline=None)
@given(grad_streams, st.sampled_from(["constant", "diminishing"]))
def test_amsgrad_monotone_preconditioning(stream, kind):
    sched = StepSchedule(kind, 0.1)
    s = AdaptiveState.zeros(4, method="ramsgrad")
    prev_vhat, prev_ratio = s.v_hat.copy(), None
    for k, g in enumerate(stream, start=1):
        s.k = k
        diag = psi(s, g)
        assert np.all(s.v >= 0)
        assert np.all(s.v_hat >= prev_vhat)
        ratio = sched(k) / diag
        if prev_ratio is not None:
            assert np.all(ratio <= prev_ratio)
        prev_vhat, prev_ratio = s.v_hat.copy(), ratio


@settings(max_examples=150, deadline=None)
@given(grad_streams)
def test_amsgrad_bound_sandwich(stream):
    norms = np.linalg.norm(stream, axis=1)
    B = float(norms.max())
    eps = 1e-8
    s = AdaptiveState.zeros(4, method="ramsgrad", eps=eps)
    for k, g in enumerate(stream, start=1):
        s.k = k
        inv = 1.0 / psi(s, g)
        assert np.all(s.v_hat <= B ** 2 * (1 + 1e-12))
        assert np.all(inv >= (1.0 / (B + eps)) * (1 - 1e-12))
        assert np.all(inv <= 1.0 / eps)


def test_amsgrad_vhat_bound_adversarial():
    B = 3.0
    s = AdaptiveState.zeros(3, method="ramsgrad")
    for k in range(1, 5001):
        s.k = k
        g = np.zeros(3)
        g[k % 3 if k % 7 else 0] = B
        psi(s, g)
    assert s.v_hat.max() <= B ** 2
