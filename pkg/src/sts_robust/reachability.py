"""Sampled sensitivity bounds, interval reach envelopes and the robust
performance metric used to rank LQR weight candidates.

Everything downstream of the sensitivity integration works on a small
model interface (:class:`ReachModel`) so the same envelope code serves the
robot closed loop and simple analytic test systems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from numba import njit

from . import constants as C
from .dynamics import _com_kinematics, _state_derivative
from .errors import NonFiniteState, StsError, ZeroBaselineTerm
from .lqr import (
    GainSchedule,
    LqrWeights,
    _closed_loop_field,
    _interp,
    _simulate_closed_loop,
    linearize,
    solve_riccati,
    stiffness_substeps,
)
from .numerics import IntervalBox, TimeGrid, Trajectory, latin_hypercube, make_rng, parallel_map
from .planner import ReferenceBundle

QUANTITIES = ("x", "y", "u")
SENS_REL_STEP = 1e-6
SENS_FLOOR = 1e-8


# --------------------------------------------------------------------------
# sensitivity integration
# --------------------------------------------------------------------------

@njit(cache=True)
def _augmented_field(x, S, p, xh, uh, K, g, freeze_p):
    """State derivative and ``dphi/dx S + dphi/dp`` by one central
    directional difference per parameter column."""
    dx = _closed_loop_field(x, p, xh, uh, K, g)
    np_ = p.size
    dS = np.empty((6, np_))
    for j in range(np_):
        eps = max(SENS_REL_STEP * abs(p[j]), SENS_FLOOR)
        xp = x + eps * S[:, j]
        xm = x - eps * S[:, j]
        pp = p.copy()
        pm = p.copy()
        if not freeze_p:
            pp[j] += eps
            pm[j] -= eps
        fp = _closed_loop_field(xp, pp, xh, uh, K, g)
        fm = _closed_loop_field(xm, pm, xh, uh, K, g)
        dS[:, j] = (fp - fm) / (2.0 * eps)
    return dx, dS


@njit(cache=True)
def _integrate_sensitivity(x0, p, spans, xhat, uhat, K, substeps, g, freeze_p):
    n = xhat.shape[0]
    npar = p.size
    xs = np.empty((n, 6))
    Ss = np.empty((n, 6, npar))
    x = x0.copy()
    S = np.zeros((6, npar))
    xs[0] = x
    Ss[0] = S
    for k in range(n - 1):
        m = substeps[k]
        hs = spans[k] / m
        for j in range(m):
            f0 = j / m
            f1 = (j + 0.5) / m
            f2 = (j + 1.0) / m
            xa, ua, Ka = _interp(xhat, k, f0), _interp(uhat, k, f0), _interp(K, k, f0)
            xm, um, Km = _interp(xhat, k, f1), _interp(uhat, k, f1), _interp(K, k, f1)
            xb, ub, Kb = _interp(xhat, k, f2), _interp(uhat, k, f2), _interp(K, k, f2)
            a1, b1 = _augmented_field(x, S, p, xa, ua, Ka, g, freeze_p)
            a2, b2 = _augmented_field(x + 0.5 * hs * a1, S + 0.5 * hs * b1, p, xm, um, Km, g, freeze_p)
            a3, b3 = _augmented_field(x + 0.5 * hs * a2, S + 0.5 * hs * b2, p, xm, um, Km, g, freeze_p)
            a4, b4 = _augmented_field(x + hs * a3, S + hs * b3, p, xb, ub, Kb, g, freeze_p)
            x = x + (hs / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            S = S + (hs / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        xs[k + 1] = x
        Ss[k + 1] = S
    return xs, Ss


@njit(cache=True)
def _output_sensitivity(xs, Ss, p, freeze_p):
    """``dzeta/dx Sx + dzeta/dp`` at every node."""
    n, _, npar = Ss.shape
    Sy = np.empty((n, 4, npar))
    for k in range(n):
        for j in range(npar):
            eps = max(SENS_REL_STEP * abs(p[j]), SENS_FLOOR)
            pp = p.copy()
            pm = p.copy()
            if not freeze_p:
                pp[j] += eps
                pm[j] -= eps
            yp = _com_kinematics(xs[k] + eps * Ss[k, :, j], pp)
            ym = _com_kinematics(xs[k] - eps * Ss[k, :, j], pm)
            Sy[k, :, j] = (yp - ym) / (2.0 * eps)
    return Sy


@dataclass(frozen=True)
class SensitivitySolution:
    state_traj: Trajectory  # (n, 6)
    Sx: Trajectory          # (n, 6, 12)
    Sy: Trajectory          # (n, 4, 12)
    Su: Trajectory          # (n, 4, 12)
    p: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"x": self.Sx.values, "y": self.Sy.values, "u": self.Su.values}


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def integrate_sensitivity(gains: GainSchedule, ref: ReferenceBundle, p, x0=None,
                          substeps=None, *, freeze_p: bool = False,
                          g: float = C.GRAVITY) -> SensitivitySolution:
    """Joint RK4 of the closed loop and its parameter sensitivity.

    ``freeze_p`` drops the explicit parameter forcing; it exists as a test
    hook (the sensitivity then stays identically zero).
    """
    grid = ref.grid
    p = _f64(p)
    x0 = ref.x_hat.values[0] if x0 is None else x0
    if substeps is None:
        substeps = np.ones(len(grid) - 1, dtype=np.int64)
    xs, Sx = _integrate_sensitivity(
        _f64(x0), p, np.diff(grid.nodes), ref.x_hat.values, ref.u_hat.values,
        gains.K.values, np.ascontiguousarray(substeps, dtype=np.int64), g, freeze_p,
    )
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(Sx))):
        raise NonFiniteState("sensitivity integration diverged")
    Sy = _output_sensitivity(xs, Sx, p, freeze_p)
    Su = -np.einsum("kij,kjl->kil", gains.K.values, Sx)
    return SensitivitySolution(
        Trajectory(grid, xs), Trajectory(grid, Sx), Trajectory(grid, Sy), Trajectory(grid, Su), p
    )


# --------------------------------------------------------------------------
# model interface
# --------------------------------------------------------------------------

class ReachModel(Protocol):
    grid: TimeGrid

    def quantities(self) -> tuple[str, ...]: ...

    def simulate(self, p) -> dict[str, np.ndarray]:
        """Per-quantity node values, each of shape ``(n, dim)``."""

    def sensitivity(self, p) -> dict[str, np.ndarray]:
        """Per-quantity sensitivities, each of shape ``(n, dim, n_p)``."""

    def reference(self) -> dict[str, np.ndarray]:
        """Per-quantity reference values used by the offset terms."""


@dataclass
class ClosedLoopModel:
    """The robot under LQR feedback; quantities ``x``, ``y`` (CoM) and ``u``."""

    ref: ReferenceBundle
    gains: GainSchedule
    substeps: np.ndarray
    x0: np.ndarray | None = None
    g: float = C.GRAVITY

    def __post_init__(self):
        if self.x0 is None:
            self.x0 = self.ref.x_hat.values[0].copy()
        self.grid = self.ref.grid

    @classmethod
    def build(cls, ref: ReferenceBundle, weights: LqrWeights, p_nominal=C.P_NOMINAL, lin=None):
        lin = lin or linearize(ref, p_nominal)
        gains = solve_riccati(lin, weights)
        return cls(ref, gains, stiffness_substeps(lin, gains))

    def quantities(self) -> tuple[str, ...]:
        return QUANTITIES

    def _outputs(self, xs, p) -> dict[str, np.ndarray]:
        ys = np.array([_com_kinematics(x, p) for x in xs])
        us = self.ref.u_hat.values - np.einsum("kij,kj->ki", self.gains.K.values,
                                               xs - self.ref.x_hat.values)
        return {"x": xs, "y": ys, "u": us}

    def simulate(self, p) -> dict[str, np.ndarray]:
        p = _f64(p)
        xs = _simulate_closed_loop(
            _f64(self.x0), p, np.diff(self.grid.nodes), self.ref.x_hat.values,
            self.ref.u_hat.values, self.gains.K.values, self.substeps, self.g,
        )
        if not np.all(np.isfinite(xs)):
            raise NonFiniteState("closed-loop simulation diverged")
        return self._outputs(xs, p)

    def sensitivity(self, p) -> dict[str, np.ndarray]:
        sol = integrate_sensitivity(self.gains, self.ref, p, self.x0, self.substeps, g=self.g)
        return sol.as_dict()

    def reference(self) -> dict[str, np.ndarray]:
        return {"x": self.ref.x_hat.values, "y": self.ref.y_hat.values, "u": self.ref.u_hat.values}


# --------------------------------------------------------------------------
# bounds and envelopes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SensitivityBounds:
    """Entrywise node-wise bounds per quantity, arrays of shape ``(n, dim, n_p)``."""

    lower: dict[str, np.ndarray]
    upper: dict[str, np.ndarray]
    samples: np.ndarray  # the parameter vectors used, one per row

    def center(self, q: str, k: int) -> np.ndarray:
        return 0.5 * (self.lower[q][k] + self.upper[q][k])


def _sensitivity_task(args):
    model, p = args
    return model.sensitivity(p)


def bounding_samples(p_box: IntervalBox, n_samples: int, rng: np.random.Generator,
                     p_nominal=None) -> np.ndarray:
    """LHS draws plus the nominal vector and both box corners."""
    if n_samples < 2:
        raise ValueError("need at least two samples")
    draws = latin_hypercube(n_samples, p_box, rng)
    extra = [p_box.lower, p_box.upper]
    if p_nominal is not None:
        extra.insert(0, np.asarray(p_nominal, dtype=float))
    return np.vstack([draws, np.array(extra)])


def estimate_bounds(model: ReachModel, samples: np.ndarray, workers: int = 1) -> SensitivityBounds:
    """Entrywise min/max of the sampled sensitivities at every node."""
    sols = parallel_map(_sensitivity_task, [(model, p) for p in samples], workers)
    lower, upper = {}, {}
    for q in model.quantities():
        stack = np.stack([s[q] for s in sols])
        lower[q] = stack.min(axis=0)
        upper[q] = stack.max(axis=0)
    return SensitivityBounds(lower, upper, np.asarray(samples))


@dataclass
class CornerCache:
    """Trajectories at corner parameters, keyed by the exact parameter bytes."""

    model: ReachModel
    store: dict = field(default_factory=dict)

    def get(self, p: np.ndarray) -> dict[str, np.ndarray]:
        key = np.asarray(p, dtype=float).tobytes()
        if key not in self.store:
            self.store[key] = self.model.simulate(p)
        return self.store[key]


@dataclass(frozen=True)
class EnvelopeSlice:
    t: float
    boxes: dict[str, IntervalBox]


def lemma1_envelope(bounds: SensitivityBounds, model: ReachModel, p_box: IntervalBox,
                    t: float, cache: CornerCache | None = None) -> EnvelopeSlice:
    """Interval over-approximation of the reachable set at the node nearest ``t``.

    Per row ``i``, the corner parameters follow the sign of the interval
    center of the sensitivity bounds; the correction ``d`` is the part of
    the bound that crosses zero against that sign.
    """
    cache = cache or CornerCache(model)
    k = model.grid.index_of(t)
    lo_p, hi_p = p_box.lower, p_box.upper
    boxes = {}
    for q in model.quantities():
        Sl = bounds.lower[q][k]
        Su = bounds.upper[q][k]
        center = 0.5 * (Sl + Su)
        dim = Sl.shape[0]
        r_lo = np.empty(dim)
        r_hi = np.empty(dim)
        for i in range(dim):
            pos = center[i] >= 0.0
            pi_lo = np.where(pos, lo_p, hi_p)
            pi_hi = np.where(pos, hi_p, lo_p)
            d = np.where(pos, np.minimum(0.0, Sl[i]), np.maximum(0.0, Su[i]))
            corr = float(d @ (pi_lo - pi_hi))
            r_lo[i] = cache.get(pi_lo)[q][k, i] - corr
            r_hi[i] = cache.get(pi_hi)[q][k, i] + corr
        boxes[q] = IntervalBox(np.minimum(r_lo, r_hi), np.maximum(r_lo, r_hi))
    return EnvelopeSlice(float(model.grid.nodes[k]), boxes)


def reach_envelope(bounds: SensitivityBounds, model: ReachModel, p_box: IntervalBox,
                   instants) -> list[EnvelopeSlice]:
    cache = CornerCache(model)
    return [lemma1_envelope(bounds, model, p_box, t, cache) for t in instants]


# --------------------------------------------------------------------------
# metric
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricWeights:
    w_v: np.ndarray
    w_o: np.ndarray
    T_P: tuple = C.T_P

    def __post_init__(self):
        object.__setattr__(self, "w_v", np.asarray(self.w_v, dtype=float))
        object.__setattr__(self, "w_o", np.asarray(self.w_o, dtype=float))
        if np.any(self.w_v < 0) or np.any(self.w_o < 0):
            raise ValueError("metric weights must be nonnegative")

    def as_dict(self) -> dict:
        return {"w_v": self.w_v.tolist(), "w_o": self.w_o.tolist(), "T_P": list(self.T_P)}


def metric_sums(envelope: list[EnvelopeSlice], model: ReachModel) -> tuple[np.ndarray, np.ndarray]:
    """Volume sums and offset sums per quantity, each of length ``len(quantities)``."""
    ref = model.reference()
    qs = model.quantities()
    vol = np.zeros(len(qs))
    off = np.zeros(len(qs))
    for sl in envelope:
        k = model.grid.index_of(sl.t)
        for j, q in enumerate(qs):
            vol[j] += sl.boxes[q].volume()
            off[j] += sl.boxes[q].offset(ref[q][k])
    return vol, off


def performance_metric(envelope: list[EnvelopeSlice], model: ReachModel, w: MetricWeights) -> float:
    vol, off = metric_sums(envelope, model)
    return float(w.w_v @ vol + w.w_o @ off)


def calibrate_weights(envelope: list[EnvelopeSlice], model: ReachModel, T_P=C.T_P) -> MetricWeights:
    """Reciprocals of the baseline sums, so the baseline scores exactly 6."""
    vol, off = metric_sums(envelope, model)
    sums = np.r_[vol, off]
    if np.any(sums == 0.0):
        raise ZeroBaselineTerm(f"baseline sums contain zeros: {sums.tolist()}")
    return MetricWeights(1.0 / vol, 1.0 / off, tuple(T_P))


def containment(envelope: list[EnvelopeSlice], model: ReachModel, samples, tol: float = 1e-9,
                workers: int = 1) -> dict:
    """Fraction of sampled trajectories that leave the envelope at some instant."""
    runs = parallel_map(model.simulate, list(samples), workers)
    bad = 0
    worst = 0.0
    for r in runs:
        inside = True
        for sl in envelope:
            k = model.grid.index_of(sl.t)
            for q, box in sl.boxes.items():
                v = r[q][k]
                excess = max(float(np.max(box.lower - v)), float(np.max(v - box.upper)), 0.0)
                worst = max(worst, excess)
                if excess > tol:
                    inside = False
        bad += not inside
    n = len(runs)
    return {"n": n, "violations": bad, "fraction": bad / n if n else 0.0, "worst_excess": worst}


# --------------------------------------------------------------------------
# pool search
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ReachSettings:
    p_box: IntervalBox = field(default_factory=lambda: IntervalBox(C.P_LOWER, C.P_UPPER))
    p_nominal: np.ndarray = field(default_factory=lambda: C.P_NOMINAL.copy())
    n_samples: int = 50
    T_P: tuple = C.T_P
    workers: int = 1


@dataclass
class CandidateResult:
    index: int
    weights: LqrWeights
    ok: bool
    j_p: float = math.inf
    vol: list = field(default_factory=list)
    off: list = field(default_factory=list)
    error: str = ""

    def as_dict(self) -> dict:
        return {
            "index": self.index, "weights": self.weights.as_dict(), "ok": self.ok,
            "J_P": self.j_p if self.ok else None, "vol_sums": self.vol, "offset_sums": self.off,
            "error": self.error,
        }


def evaluate_controller(ref: ReferenceBundle, weights: LqrWeights, settings: ReachSettings,
                        samples: np.ndarray, lin=None):
    """Model, bounds and envelope for one weight triple."""
    model = ClosedLoopModel.build(ref, weights, settings.p_nominal, lin)
    bounds = estimate_bounds(model, samples, settings.workers)
    env = reach_envelope(bounds, model, settings.p_box, settings.T_P)
    return model, bounds, env


def pool_search(pool: list[LqrWeights], ref: ReferenceBundle, metric: MetricWeights,
                settings: ReachSettings, samples: np.ndarray, lin=None):
    """Evaluate ``J_P`` for every candidate; failures are recorded, not raised.

    Returns ``(best index, best J_P, results)``; ties go to the lower index.
    """
    if not pool:
        raise ValueError("empty pool")
    lin = lin or linearize(ref, settings.p_nominal)
    results = []
    for i, w in enumerate(pool):
        try:
            model, _, env = evaluate_controller(ref, w, settings, samples, lin)
            vol, off = metric_sums(env, model)
            j = float(metric.w_v @ vol + metric.w_o @ off)
            if not math.isfinite(j):
                raise NonFiniteState("metric is not finite")
            results.append(CandidateResult(i, w, True, j, vol.tolist(), off.tolist()))
        except (StsError, FloatingPointError, np.linalg.LinAlgError) as exc:
            results.append(CandidateResult(i, w, False, error=f"{type(exc).__name__}: {exc}"))
    ok = [r for r in results if r.ok]
    if not ok:
        return None, math.inf, results
    best = min(ok, key=lambda r: (r.j_p, r.index))
    return best.index, best.j_p, results


def baseline_weights() -> LqrWeights:
    """Reference controller used to normalise ``J_P``: the center of the
    candidate sampling box."""
    return LqrWeights(np.full(6, 50.0), np.full(4, 0.005), np.full(6, 50.0))


def make_samples(settings: ReachSettings, seed: int) -> np.ndarray:
    return bounding_samples(settings.p_box, settings.n_samples, make_rng(seed), settings.p_nominal)
