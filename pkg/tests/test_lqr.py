import numpy as np
import pytest

from oracles import richardson_jacobian
from sts_robust import constants as C
from sts_robust.dynamics import state_derivative
from sts_robust.errors import RiccatiBlowup
from sts_robust.lqr import (
    GainSchedule,
    LinearizationSchedule,
    LqrWeights,
    closed_loop_field,
    closed_loop_input,
    riccati_residual,
    sample_weight_pool,
    simulate_closed_loop,
    solve_riccati,
)
from sts_robust.numerics import TimeGrid, Trajectory, make_rng

P = C.P_NOMINAL


def _scalar_schedule(a, b, tf=3.5, step=0.004):
    grid = TimeGrid.uniform(0.0, tf, step)
    n = len(grid)
    full = lambda v: Trajectory(grid, np.full((n, 1, 1), float(v)))  # noqa: E731
    return LinearizationSchedule(full(a), full(0.0), full(b))


def test_linearization_structure(lin):
    A, B2 = lin.A.values, lin.B2.values
    assert np.all(A[:, :3, :3] == 0)
    # a linear map differenced centrally: exact up to rounding of the step
    assert np.max(np.abs(A[:, :3, 3:] - np.eye(3))) <= 1e-9
    assert np.all(B2[:, :3, :] == 0)
    assert lin.B1.values.shape == (len(lin.A.grid), 6, 12)


def test_linearization_matches_richardson(ref, lin):
    for k in (0, 437, 875):
        x, u = ref.x_hat.values[k], ref.u_hat.values[k]
        Ax = richardson_jacobian(lambda v: state_derivative(0.0, v, P, u), x)
        Bu = richardson_jacobian(lambda v: state_derivative(0.0, x, P, v), u, h=1e-2)
        Bp = richardson_jacobian(lambda v: state_derivative(0.0, x, v, u), P, h=1e-4)
        assert np.allclose(lin.A.values[k], Ax, rtol=1e-6, atol=1e-6 * np.abs(Ax).max())
        assert np.allclose(lin.B2.values[k], Bu, rtol=1e-6, atol=1e-6 * np.abs(Bu).max())
        assert np.allclose(lin.B1.values[k], Bp, rtol=1e-5, atol=1e-6 * np.abs(Bp).max())


def test_zero_weights_give_zero_gain(lin):
    gains = solve_riccati(lin, LqrWeights(np.zeros(6), np.full(4, 1e-3), np.zeros(6)))
    assert np.all(gains.P.values == 0) and np.all(gains.K.values == 0)


@pytest.mark.parametrize("s", [0.5, 3.0, 40.0])
def test_scalar_riccati_matches_closed_form(s):
    lin = _scalar_schedule(0.0, 1.0)
    gains = solve_riccati(lin, LqrWeights(np.zeros(1), np.ones(1), np.full(1, s)))
    t = lin.A.grid.nodes
    exact = s / (1.0 + s * (t[-1] - t))
    assert np.max(np.abs(gains.P.values[:, 0, 0] - exact)) <= 1e-6
    assert np.array_equal(gains.K.values, gains.P.values)


def test_unstabilizable_blows_up():
    lin = _scalar_schedule(5.0, 0.0)
    with pytest.raises(RiccatiBlowup):
        solve_riccati(lin, LqrWeights(np.ones(1), np.ones(1), np.ones(1)))


def test_fixture_riccati_symmetric_psd(star_gains, lin):
    Pv = star_gains.P.values
    assert np.max(np.abs(Pv - Pv.transpose(0, 2, 1))) <= 1e-10
    assert np.linalg.eigvalsh(Pv).min() >= -1e-8
    r_inv = 1.0 / C.R_STAR
    K = r_inv[None, :, None] * np.einsum("kji,kjl->kil", lin.B2.values, Pv)
    assert np.array_equal(K, star_gains.K.values)
    assert np.allclose(Pv[-1], np.diag(C.S_STAR), atol=0)


def test_riccati_residual_is_difference_truncation():
    # for the exact scalar solution the central-difference residual is the
    # truncation error h^2/6 P'''(t) = h^2 s^4 / u^4, u = 1 + s (tf - t)
    s = 3.0
    w = LqrWeights(np.zeros(1), np.ones(1), np.full(1, s))
    lin = _scalar_schedule(0.0, 1.0)
    res = riccati_residual(lin, w, solve_riccati(lin, w))
    t = lin.A.grid.nodes[1:-1]
    h = lin.A.grid.step
    predicted = h**2 * s**4 / (1.0 + s * (t[-1] + h - t)) ** 4
    assert np.allclose(res, predicted, rtol=0.02, atol=1e-8)


def test_closed_loop_field_on_reference(ref, star_gains):
    for k in (0, 300, 875):
        t = ref.grid.nodes[k]
        x = ref.x_hat.values[k]
        f = closed_loop_field(t, x, P, ref, star_gains)
        assert np.array_equal(f, state_derivative(t, x, P, ref.u_hat.values[k]))


def test_zero_gain_reduces_to_open_loop(ref, rng):
    n = len(ref.grid)
    zero = GainSchedule(Trajectory(ref.grid, np.zeros((n, 4, 6))), Trajectory(ref.grid, np.zeros((n, 6, 6))))
    x = ref.x_hat.values[100] + rng.normal(scale=0.05, size=6)
    t = ref.grid.nodes[100]
    assert np.allclose(closed_loop_field(t, x, P, ref, zero), state_derivative(t, x, P, ref.u_hat.values[100]),
                       rtol=1e-14, atol=1e-12)


def test_nominal_closed_loop_tracks(ref, star_gains, star_substeps):
    xs = simulate_closed_loop(ref, star_gains, P, substeps=star_substeps)
    err = np.abs(xs.values - ref.x_hat.values)
    assert err.max() <= 1e-3
    assert np.max(np.abs(xs.values[-1] - ref.x_hat.values[-1])) <= 1e-3
    u = closed_loop_input(ref, star_gains, xs.values)
    assert np.max(np.abs(u - ref.u_hat.values)) < 1.0


def test_closed_loop_rejects_parameter_error(ref, star_gains, star_substeps):
    xs = simulate_closed_loop(ref, star_gains, C.P_HEAVY, substeps=star_substeps)
    assert np.all(np.isfinite(xs.values))
    assert np.max(np.abs(xs.values[-1, :3] - ref.x_hat.values[-1, :3])) < 5 * C.DEG


def test_weight_pool():
    pool = sample_weight_pool(300, make_rng(4))
    assert len(pool) == 300
    q = np.array([w.q for w in pool])
    r = np.array([w.r for w in pool])
    s = np.array([w.s for w in pool])
    assert np.all((q > 0) & (q < 100)) and np.all((s > 0) & (s < 100))
    assert np.all((r > 0) & (r < 0.01))
    again = sample_weight_pool(300, make_rng(4))
    assert all(np.array_equal(a.r, b.r) and np.array_equal(a.q, b.q) for a, b in zip(pool, again))


def test_weights_validation():
    with pytest.raises(ValueError):
        LqrWeights(np.ones(6), np.zeros(4), np.ones(6))
    with pytest.raises(ValueError):
        LqrWeights(-np.ones(6), np.ones(4), np.ones(6))
