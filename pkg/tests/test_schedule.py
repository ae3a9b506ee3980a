import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from pmcem.errors import InvalidArgumentError
from pmcem.numkit import make_rng
from pmcem.schedule import make_linear_schedule, perturb, true_score_target


def test_default_endpoints(sched):
    assert sched.T == 1000
    assert sched.beta[0] == pytest.approx(1e-4, rel=1e-12)
    assert sched.beta[-1] == pytest.approx(0.02, rel=1e-12)
    assert sched.alpha_bar[0] == pytest.approx(0.9999, rel=1e-12)
    # direct product oracle
    assert sched.alpha_bar[10] == pytest.approx(np.prod([1 - b for b in np.linspace(1e-4, 0.02, 1000)[:11]]))


def test_single_step():
    s = make_linear_schedule(1, 0.3, 0.3)
    np.testing.assert_allclose(s.alpha_bar, [0.7])


def test_arrays_read_only(sched):
    with pytest.raises(ValueError):
        sched.beta[0] = 0.5


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.02, 0.01), (10, 1e-4, 1.0)])
def test_invalid_schedules(args):
    with pytest.raises(InvalidArgumentError):
        make_linear_schedule(*args)


@settings(max_examples=50, deadline=None)
@given(T=st.integers(1, 2000), lo=st.floats(1e-6, 0.1), span=st.floats(0.0, 0.5))
def test_schedule_invariants(T, lo, span):
    s = make_linear_schedule(T, lo, min(lo + span, 0.9))
    # strictness only holds while 1 - alpha_bar is resolvable in float64
    assume(s.alpha_bar[-1] > 1e-12 and 1 - s.alpha_bar[0] > 1e-12)
    assert np.all((s.beta > 0) & (s.beta < 1))
    assert np.all(np.diff(s.beta) >= 0)
    assert np.all(np.diff(s.alpha_bar) < 0)
    if T > 1:
        assert np.all(np.diff(s.sigma) > 0)
    np.testing.assert_allclose(s.sigma, np.sqrt(1 - s.alpha_bar))


def test_perturb_no_noise_limit():
    s = make_linear_schedule(5, 1e-14, 1e-14)
    x0 = np.array([[1.0, -2.0]])
    xt, _ = perturb(x0, 0, make_rng(0), s)
    np.testing.assert_allclose(xt, x0, atol=1e-6)


def test_perturb_zero_signal(sched):
    xt, eps = perturb(np.zeros(3), sched.T - 1, make_rng(3), sched)
    np.testing.assert_array_equal(xt, np.sqrt(1 - sched.alpha_bar[-1]) * eps)


def test_perturb_variance(sched):
    t = 300
    x0 = np.full(100_000, 0.7)
    xt, _ = perturb(x0, t, make_rng(11), sched)
    v = np.var(xt - np.sqrt(sched.alpha_bar[t]) * x0)
    assert v == pytest.approx(1 - sched.alpha_bar[t], rel=0.02)


def test_perturb_per_row_steps(sched):
    x0 = np.ones((3, 2))
    t = np.array([0, 500, 999])
    xt, eps = perturb(x0, t, make_rng(2), sched)
    for i, ti in enumerate(t):
        ab = sched.alpha_bar[ti]
        np.testing.assert_allclose(xt[i], np.sqrt(ab) + np.sqrt(1 - ab) * eps[i])


def test_perturb_step_bounds(sched):
    with pytest.raises(IndexError):
        perturb(np.zeros(2), sched.T, make_rng(0), sched)


def test_score_target_at_conditional_mean(sched):
    x0 = np.array([1.0, -1.0])
    xt = np.sqrt(sched.alpha_bar[40]) * x0
    np.testing.assert_array_equal(true_score_target(xt, x0, 40, sched), np.zeros(2))


def test_score_target_hand_case():
    # schedule with alpha_bar = 0.75 at t=0
    s = make_linear_schedule(1, 0.25, 0.25)
    got = true_score_target(np.array([2.0]), np.array([2.0]), 0, s)
    assert got[0] == pytest.approx(-(2 - np.sqrt(0.75) * 2) / 0.25, rel=1e-14)
    assert got[0] == pytest.approx(-1.0718, abs=1e-4)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), t=st.integers(0, 999))
def test_perturb_then_target_recovers_eps(seed, t):
    s = make_linear_schedule()
    x0 = make_rng(seed).standard_normal((4, 2))
    xt, eps = perturb(x0, t, make_rng(seed + 1), s)
    np.testing.assert_allclose(true_score_target(xt, x0, t, s), -eps / np.sqrt(1 - s.alpha_bar[t]),
                               rtol=1e-9, atol=1e-9)
