from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sts_robust import constants as C
from sts_robust.errors import NonFiniteState, ZeroBaselineTerm
from sts_robust.lqr import LqrWeights, paper_weights
from sts_robust.numerics import IntervalBox, TimeGrid, make_rng
from sts_robust.reachability import (
    ClosedLoopModel,
    EnvelopeSlice,
    MetricWeights,
    ReachSettings,
    bounding_samples,
    calibrate_weights,
    containment,
    estimate_bounds,
    integrate_sensitivity,
    lemma1_envelope,
    metric_sums,
    performance_metric,
    pool_search,
    reach_envelope,
)

P = C.P_NOMINAL
GRID = TimeGrid.uniform(0.0, 1.0, 0.05)


@dataclass
class Drift:
    """x' = rho, x(0) = 0: x = rho t, dx/drho = t."""

    grid: TimeGrid = GRID

    def quantities(self):
        return ("x",)

    def simulate(self, p):
        return {"x": (p[0] * self.grid.nodes)[:, None]}

    def sensitivity(self, p):
        return {"x": np.broadcast_to(self.grid.nodes[:, None, None], (len(self.grid), 1, 1)).copy()}

    def reference(self):
        return {"x": 1.5 * self.grid.nodes[:, None]}


@dataclass
class Bilinear:
    """Two outputs with sign-changing sensitivities:
    y1 = a t - b t^2, y2 = a b t."""

    grid: TimeGrid = GRID

    def quantities(self):
        return ("y",)

    def simulate(self, p):
        a, b = p
        t = self.grid.nodes
        return {"y": np.column_stack([a * t - b * t**2, a * b * t])}

    def sensitivity(self, p):
        a, b = p
        t = self.grid.nodes
        s = np.zeros((t.size, 2, 2))
        s[:, 0, 0] = t
        s[:, 0, 1] = -(t**2)
        s[:, 1, 0] = b * t
        s[:, 1, 1] = a * t
        return {"y": s}

    def reference(self):
        return self.simulate(np.array([1.0, 1.0]))


def _toy_envelope(model, box, n=30, seed=0):
    samples = bounding_samples(box, n, make_rng(seed))
    bounds = estimate_bounds(model, samples)
    return samples, bounds, reach_envelope(bounds, model, box, GRID.nodes)


# -- toy systems --------------------------------------------------------------

def test_drift_sensitivity_bounds_are_exact():
    box = IntervalBox(np.array([1.0]), np.array([2.0]))
    _, bounds, _ = _toy_envelope(Drift(), box)
    assert np.array_equal(bounds.lower["x"][:, 0, 0], GRID.nodes)
    assert np.array_equal(bounds.upper["x"][:, 0, 0], GRID.nodes)


def test_drift_envelope_is_analytic_reach_set():
    box = IntervalBox(np.array([1.0]), np.array([2.0]))
    _, _, env = _toy_envelope(Drift(), box)
    for sl in env:
        assert sl.boxes["x"].lower[0] == pytest.approx(sl.t, abs=1e-15)
        assert sl.boxes["x"].upper[0] == pytest.approx(2 * sl.t, abs=1e-15)


def test_point_box_gives_trajectory():
    model = Bilinear()
    p = np.array([1.3, 0.7])
    box = IntervalBox.point(p)
    bounds = estimate_bounds(model, np.array([p, p]))
    for q in model.quantities():
        assert np.array_equal(bounds.lower[q], bounds.upper[q])
    traj = model.simulate(p)["y"]
    for k in (0, 7, 20):
        sl = lemma1_envelope(bounds, model, box, GRID.nodes[k])
        assert np.array_equal(sl.boxes["y"].lower, traj[k])
        assert np.array_equal(sl.boxes["y"].upper, traj[k])


def test_bilinear_containment_over_bounding_set():
    box = IntervalBox(np.array([0.5, -0.5]), np.array([1.5, 1.0]))
    samples, bounds, env = _toy_envelope(Bilinear(), box, n=40)
    rep = containment(env, Bilinear(), samples)
    assert rep["violations"] == 0 and rep["fraction"] == 0.0
    fresh = make_rng(99).uniform(box.lower, box.upper, size=(200, 2))
    assert containment(env, Bilinear(), fresh)["fraction"] <= 0.02


def test_bounds_contain_nominal():
    box = IntervalBox(np.array([0.5, -0.5]), np.array([1.5, 1.0]))
    p0 = np.array([1.0, 0.2])
    samples = bounding_samples(box, 10, make_rng(1), p0)
    assert np.array_equal(samples[-3], p0)
    bounds = estimate_bounds(Bilinear(), samples)
    s0 = Bilinear().sensitivity(p0)["y"]
    assert np.all(bounds.lower["y"] <= s0) and np.all(s0 <= bounds.upper["y"])


@settings(max_examples=25, deadline=None)
@given(shrink=st.floats(0.05, 0.95), seed=st.integers(0, 1000))
def test_envelope_monotone_in_box(shrink, seed):
    # shared samples from the inner box keep the sensitivity bounds fixed,
    # so only the box enters the comparison
    outer = IntervalBox(np.array([0.5, -0.5]), np.array([1.5, 1.0]))
    c, w = outer.center, outer.width
    inner = IntervalBox(c - 0.5 * shrink * w, c + 0.5 * shrink * w)
    model = Bilinear()
    bounds = estimate_bounds(model, bounding_samples(inner, 12, make_rng(seed)))
    for t in (0.25, 0.6, 1.0):
        a = lemma1_envelope(bounds, model, inner, t).boxes["y"]
        b = lemma1_envelope(bounds, model, outer, t).boxes["y"]
        assert np.all(b.lower <= a.lower + 1e-12) and np.all(a.upper <= b.upper + 1e-12)


# -- metric -------------------------------------------------------------------

def test_metric_terms_vanish_for_centered_and_flat_envelopes():
    model = Drift()
    ref = model.reference()["x"]
    centered = [EnvelopeSlice(t, {"x": IntervalBox(ref[k] - 0.1, ref[k] + 0.1)})
                for k, t in enumerate(GRID.nodes)]
    vol, off = metric_sums(centered, model)
    assert np.all(off == 0) and np.all(vol > 0)
    flat = [EnvelopeSlice(t, {"x": IntervalBox(ref[k] + 1.0, ref[k] + 1.0)}) for k, t in enumerate(GRID.nodes)]
    vol, off = metric_sums(flat, model)
    assert np.all(vol == 0) and np.all(off > 0)


def test_calibration_normalises_each_term_and_rejects_zeros():
    box = IntervalBox(np.array([1.0]), np.array([2.0]))
    _, _, env = _toy_envelope(Drift(), box)
    env = [sl for sl in env if sl.t > 0]
    class Shifted(Drift):
        def reference(self):
            return {"x": 0.5 * self.grid.nodes[:, None]}
    w = calibrate_weights(env, Shifted())
    # one quantity gives two terms, so the baseline scores 2
    assert performance_metric(env, Shifted(), w) == pytest.approx(2.0, rel=1e-14)
    with pytest.raises(ZeroBaselineTerm):
        calibrate_weights(env, Drift())  # centered on the reference: zero offsets


def test_metric_weights_nonnegative():
    with pytest.raises(ValueError):
        MetricWeights(np.array([-1.0, 1, 1]), np.ones(3))


# -- closed-loop model ----------------------------------------------------------

@pytest.fixture(scope="module")
def model(ref, lin):
    return ClosedLoopModel.build(ref, paper_weights(), lin=lin)


def test_frozen_parameter_forcing_gives_zero_sensitivity(ref, model):
    sol = integrate_sensitivity(model.gains, ref, P, substeps=model.substeps, freeze_p=True)
    assert np.all(sol.Sx.values == 0)
    assert np.all(sol.Su.values == 0)


def test_sensitivity_structure(ref, model):
    sol = integrate_sensitivity(model.gains, ref, P, substeps=model.substeps)
    assert np.all(sol.Sx.values[0] == 0) and np.all(sol.Su.values[0] == 0)
    Su = -np.einsum("kij,kjl->kil", model.gains.K.values, sol.Sx.values)
    assert np.array_equal(Su, sol.Su.values)


@pytest.mark.parametrize("j", [0, 2, 7, 11])
def test_sensitivity_matches_finite_difference(model, j):
    eps = 1e-5 * P[j]
    e = np.zeros(12)
    e[j] = eps
    sens = model.sensitivity(P)
    plus, minus = model.simulate(P + e), model.simulate(P - e)
    for q in model.quantities():
        fd = (plus[q] - minus[q]) / (2 * eps)
        s = sens[q][:, :, j]
        scale = np.max(np.abs(fd), axis=0)
        assert np.all(np.abs(s - fd) <= 1e-3 * scale + 1e-9)


def test_closed_loop_reach_contains_bounding_samples(model):
    box = IntervalBox(C.P_LOWER, C.P_UPPER)
    samples = bounding_samples(box, 6, make_rng(3), P)
    bounds = estimate_bounds(model, samples)
    env = reach_envelope(bounds, model, box, C.T_P)
    rep = containment(env, model, samples, tol=1e-9)
    assert rep["fraction"] == 0.0
    for sl in env:
        for q in model.quantities():
            assert np.all(sl.boxes[q].width >= 0)
    assert performance_metric(env, model, MetricWeights(np.ones(3), np.ones(3))) >= 0


# -- pool search ----------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_settings():
    return ReachSettings(n_samples=2)


def test_pool_of_one_and_determinism(ref, lin, tiny_settings):
    samples = bounding_samples(tiny_settings.p_box, 2, make_rng(0), P)
    metric = MetricWeights(np.ones(3), np.ones(3))
    pool = [paper_weights(), LqrWeights(np.full(6, 10.0), np.full(4, 0.008), np.full(6, 5.0)),
            LqrWeights(np.full(6, 90.0), np.full(4, 0.001), np.full(6, 90.0))]
    best, j, results = pool_search(pool[:1], ref, metric, tiny_settings, samples, lin)
    assert best == 0 and j == results[0].j_p
    a = pool_search(pool, ref, metric, tiny_settings, samples, lin)
    b = pool_search(pool, ref, metric, tiny_settings, samples, lin)
    assert a[0] == b[0] and a[1] == b[1]
    assert [r.j_p for r in a[2]] == [r.j_p for r in b[2]]
    assert a[1] == min(r.j_p for r in a[2])


def test_pool_search_records_failures(ref, lin, tiny_settings, monkeypatch):
    import sts_robust.reachability as reach

    calls = {"n": 0}
    real = reach.evaluate_controller

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] == 1:
            raise NonFiniteState("diverged")
        return real(*args, **kw)

    monkeypatch.setattr(reach, "evaluate_controller", flaky)
    samples = bounding_samples(tiny_settings.p_box, 2, make_rng(0), P)
    best, _, results = pool_search([paper_weights(), paper_weights()], ref,
                                   MetricWeights(np.ones(3), np.ones(3)), tiny_settings, samples, lin)
    assert not results[0].ok and "NonFiniteState" in results[0].error
    assert results[1].ok and best == 1


# -- calibration against the published magnitudes ---------------------------------

# published weights, in [x, u, y] order
PUBLISHED_W_V = np.array([6.98e7, 9.67e-7, 9.71e4])
PUBLISHED_W_O = np.array([1.85e18, 7.24, 1.07e13])


@pytest.fixture(scope="module")
def desk_calibration(ref, lin, model):
    settings = ReachSettings(n_samples=50)
    from sts_robust.reachability import baseline_weights, evaluate_controller, make_samples

    m, _, env = evaluate_controller(ref, baseline_weights(), settings, make_samples(settings, 0), lin)
    w = calibrate_weights(env, m, settings.T_P)
    order = [m.quantities().index(q) for q in ("x", "u", "y")]
    return w.w_v[order], w.w_o[order]


@pytest.mark.slow
def test_volume_weights_within_two_decades_of_published(desk_calibration):
    w_v, _ = desk_calibration
    assert np.all(np.abs(np.log10(w_v / PUBLISHED_W_V)) <= 2.0)


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="offset sums are products of per-component distances and "
                                       "land 2-5 decades below the published weights")
def test_offset_weights_within_two_decades_of_published(desk_calibration):
    _, w_o = desk_calibration
    assert np.all(np.abs(np.log10(w_o / PUBLISHED_W_O)) <= 2.0)
