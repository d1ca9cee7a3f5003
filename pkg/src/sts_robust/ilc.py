"""Iterative learning control as a proxy for the user's shoulder loads.

The orthosis applies the saturated LQR hip torque, while the user input
``mu = [tau_s, F_x, F_y]`` is refined from trial to trial by a
current-iteration ILC law with saturation, abort-on-unsafe-state and linear
extrapolation past the previous abort time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import constants as C
from .dynamics import _matvec, _state_derivative, _user_output
from .lqr import RK4_STABLE, GainSchedule, LinearizationSchedule, _interp
from .numerics import IntervalBox, Trajectory, make_rng
from .planner import ReferenceBundle

TAU_H_LOWER = C.U_LOWER[0]
TAU_H_UPPER = C.U_UPPER[0]


@dataclass(frozen=True)
class IlcGains:
    K: np.ndarray  # 3x6 current-iteration feedback
    L: np.ndarray  # 3x6 previous-iteration feedforward

    def __post_init__(self):
        K = np.array(self.K, dtype=float).reshape(3, 6)
        L = np.array(self.L, dtype=float).reshape(3, 6)
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(L))):
            raise ValueError("ILC gains must be finite")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "L", L)

    @classmethod
    def paper(cls) -> "IlcGains":
        return cls(C.K_ILC_STAR, C.L_ILC_STAR)

    @classmethod
    def from_vector(cls, eta) -> "IlcGains":
        eta = np.asarray(eta, dtype=float)
        return cls(eta[:18].reshape(3, 6), eta[18:].reshape(3, 6))

    def to_vector(self) -> np.ndarray:
        return np.r_[self.K.ravel(), self.L.ravel()]

    def as_dict(self) -> dict:
        return {"K": self.K.tolist(), "L": self.L.tolist()}


@dataclass
class RecallPolicy:
    """``gamma_j = I`` (perfect) or ``I + q**(j-1) * theta_j`` with
    ``theta_j`` uniform in ``[-amplitude, amplitude]`` (perturbed)."""

    mode: str = "perfect"
    q: float = C.RECALL_DECAY
    amplitude: float = C.RECALL_AMPLITUDE
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.mode not in ("perfect", "perturbed"):
            raise ValueError(f"unknown recall mode {self.mode!r}")
        self._rng = make_rng(self.seed)

    def gamma(self, j: int) -> np.ndarray:
        if self.mode == "perfect":
            return np.eye(3)
        theta = self._rng.uniform(-self.amplitude, self.amplitude, size=(3, 3))
        return np.eye(3) + self.q ** (j - 1) * theta


@dataclass(frozen=True)
class IterationResult:
    j: int
    t_s: float
    cost: float
    aborted: bool
    x: Trajectory      # NaN after the abort node
    ups: Trajectory    # user output Upsilon
    mu: Trajectory
    tau_h: Trajectory

    def summary(self) -> dict:
        return {"j": self.j, "t_s": self.t_s, "cost": self.cost if math.isfinite(self.cost) else None,
                "aborted": self.aborted}


def hip_torque(t, x, ref: ReferenceBundle, lqr_gains: GainSchedule,
               lower: float = TAU_H_LOWER, upper: float = TAU_H_UPPER) -> float:
    """Saturated hip component of the LQR feedback law."""
    u = ref.u_hat(t) - lqr_gains.K(t) @ (np.asarray(x, dtype=float) - ref.x_hat(t))
    return float(min(upper, max(lower, u[0])))


def mu_reference(ref: ReferenceBundle) -> Trajectory:
    return Trajectory(ref.grid, ref.u_hat.values[:, 1:])


def ups_reference(ref: ReferenceBundle, p_nominal=C.P_NOMINAL) -> Trajectory:
    p = np.ascontiguousarray(p_nominal, dtype=float)
    return Trajectory(ref.grid, np.array([_user_output(x, p) for x in ref.x_hat.values]))


def init_mu(ref: ReferenceBundle) -> Trajectory:
    """Straight line between the reference shoulder loads at both ends."""
    mu = ref.u_hat.values[:, 1:]
    nodes = ref.grid.nodes
    s = ((nodes - nodes[0]) / (nodes[-1] - nodes[0]))[:, None]
    return Trajectory(ref.grid, mu[0] + s * (mu[-1] - mu[0]))


# --------------------------------------------------------------------------
# compiled iteration
# --------------------------------------------------------------------------

@njit(cache=True)
def _clip(v, lo, hi):
    return np.minimum(hi, np.maximum(lo, v))


@njit(cache=True)
def _ilc_input(t, k, frac, x, p, xhat, tau_hat, k_hip, ups_hat, mu_prev, ups_prev,
               ts_prev, tf, alpha, beta, mu_hat_f, gamma, Kilc, Lilc,
               mu_lo, mu_hi, tau_lo, tau_hi, keep_k):
    tau = (1.0 - frac) * tau_hat[k] + frac * tau_hat[k + 1]
    for i in range(6):
        kh = (1.0 - frac) * k_hip[k, i] + frac * k_hip[k + 1, i]
        xh = (1.0 - frac) * xhat[k, i] + frac * xhat[k + 1, i]
        tau -= kh * (x[i] - xh)
    tau = min(tau_hi, max(tau_lo, tau))
    if t < ts_prev:
        uph = _interp(ups_hat, k, frac)
        gam = _matvec(gamma, _interp(mu_prev, k, frac))
        ff = _matvec(Lilc, uph - _interp(ups_prev, k, frac))
        fb = _matvec(Kilc, uph - _user_output(x, p))
        G = gam + ff + fb
    elif ts_prev >= tf:
        G = mu_hat_f.copy()
    else:
        G = alpha * t + beta
        if keep_k:
            G = G + _matvec(Kilc, _interp(ups_hat, k, frac) - _user_output(x, p))
    return tau, _clip(G, mu_lo, mu_hi)


@njit(cache=True)
def _ilc_field(t, k, frac, x, p, g, xhat, tau_hat, k_hip, ups_hat, mu_prev, ups_prev,
               ts_prev, tf, alpha, beta, mu_hat_f, gamma, Kilc, Lilc,
               mu_lo, mu_hi, tau_lo, tau_hi, keep_k, hold, mu_held):
    tau, mu = _ilc_input(t, k, frac, x, p, xhat, tau_hat, k_hip, ups_hat, mu_prev, ups_prev,
                         ts_prev, tf, alpha, beta, mu_hat_f, gamma, Kilc, Lilc,
                         mu_lo, mu_hi, tau_lo, tau_hi, keep_k)
    if hold:
        mu = mu_held
    u = np.empty(4)
    u[0] = tau
    u[1:] = mu
    return _state_derivative(x, p, u, g)


@njit(cache=True)
def _inside(x, lo, hi):
    for i in range(x.size):
        if not (x[i] >= lo[i] and x[i] <= hi[i]):
            return False
    return True


@njit(cache=True)
def _run_iteration(x0, p, g, nodes, substeps, xhat, tau_hat, k_hip, ups_hat, mu_prev, ups_prev,
                   ts_prev, alpha, beta, mu_hat_f, gamma, Kilc, Lilc,
                   mu_lo, mu_hi, tau_lo, tau_hi, x_lo, x_hi, keep_k, hold):
    n = nodes.size
    tf = nodes[-1]
    xs = np.full((n, 6), np.nan)
    mus = np.full((n, 3), np.nan)
    taus = np.full(n, np.nan)
    ups = np.full((n, 6), np.nan)
    x = x0.copy()
    if not _inside(x, x_lo, x_hi):
        return xs, ups, mus, taus, -1
    last = n - 1
    for k in range(n):
        # record node quantities with the input applied at the node
        kk = min(k, n - 2)
        fr = 0.0 if k < n - 1 else 1.0
        tau, mu = _ilc_input(nodes[k], kk, fr, x, p, xhat, tau_hat, k_hip, ups_hat, mu_prev,
                             ups_prev, ts_prev, tf, alpha, beta, mu_hat_f, gamma, Kilc, Lilc,
                             mu_lo, mu_hi, tau_lo, tau_hi, keep_k)
        xs[k] = x
        ups[k] = _user_output(x, p)
        mus[k] = mu
        taus[k] = tau
        if k == n - 1:
            break
        m = substeps[k]
        span = nodes[k + 1] - nodes[k]
        hs = span / m
        for j in range(m):
            f0 = j / m
            f1 = (j + 0.5) / m
            f2 = (j + 1.0) / m
            t0 = (1.0 - f0) * nodes[k] + f0 * nodes[k + 1]
            t1 = (1.0 - f1) * nodes[k] + f1 * nodes[k + 1]
            t2 = (1.0 - f2) * nodes[k] + f2 * nodes[k + 1]
            a1 = _ilc_field(t0, k, f0, x, p, g, xhat, tau_hat, k_hip, ups_hat, mu_prev, ups_prev,
                            ts_prev, tf, alpha, beta, mu_hat_f, gamma, Kilc, Lilc,
                            mu_lo, mu_hi, tau_lo, tau_hi, keep_k, hold, mu)
            a2 = _ilc_field(t1, k, f1, x + 0.5 * hs * a1, p, g, xhat, tau_hat, k_hip, ups_hat,
                            mu_prev, ups_prev, ts_prev, tf, alpha, beta, mu_hat_f, gamma,
                            Kilc, Lilc, mu_lo, mu_hi, tau_lo, tau_hi, keep_k, hold, mu)
            a3 = _ilc_field(t1, k, f1, x + 0.5 * hs * a2, p, g, xhat, tau_hat, k_hip, ups_hat,
                            mu_prev, ups_prev, ts_prev, tf, alpha, beta, mu_hat_f, gamma,
                            Kilc, Lilc, mu_lo, mu_hi, tau_lo, tau_hi, keep_k, hold, mu)
            a4 = _ilc_field(t2, k, f2, x + hs * a3, p, g, xhat, tau_hat, k_hip, ups_hat,
                            mu_prev, ups_prev, ts_prev, tf, alpha, beta, mu_hat_f, gamma,
                            Kilc, Lilc, mu_lo, mu_hi, tau_lo, tau_hi, keep_k, hold, mu)
            x = x + (hs / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        if not _inside(x, x_lo, x_hi):
            # NaN fails the comparison too, so blow-ups abort here as well
            last = k
            break
    return xs, ups, mus, taus, last


def iteration_cost(nodes, ups, ups_hat, mu, step: float, w_mu: float = C.W_MU) -> float:
    """Trapezoid integral of ``|Ups_hat - Ups| + w_mu |mu'|`` divided by the
    grid step, i.e. on the scale of a per-node sum.

    ``mu'`` uses forward differences; the last node reuses the penultimate one.
    """
    err = np.linalg.norm(ups_hat - ups, axis=1)
    dmu = np.diff(mu, axis=0) / np.diff(nodes)[:, None]
    dmu = np.vstack([dmu, dmu[-1:]])
    integrand = err + w_mu * np.linalg.norm(dmu, axis=1)
    return float(np.trapezoid(integrand, nodes) / step)


def reference_cost(ref: ReferenceBundle, p_nominal=C.P_NOMINAL, w_mu: float = C.W_MU) -> float:
    """Cost of a hypothetical run that reproduces ``Ups_hat`` and ``mu_hat`` exactly."""
    ups_hat = ups_reference(ref, p_nominal).values
    return iteration_cost(ref.grid.nodes, ups_hat, ups_hat, mu_reference(ref).values, ref.grid.step, w_mu)


def output_jacobians(ref: ReferenceBundle, p_nominal=C.P_NOMINAL) -> np.ndarray:
    """``dPsi/dx`` along the reference by central differences, shape (n, 6, 6)."""
    p = np.ascontiguousarray(p_nominal, dtype=float)
    n = len(ref.grid)
    dpsi = np.empty((n, 6, 6))
    for k, x in enumerate(ref.x_hat.values):
        for j in range(6):
            h = 1e-6 * max(1.0, abs(x[j]))
            e = np.zeros(6)
            e[j] = h
            dpsi[k, :, j] = (_user_output(x + e, p) - _user_output(x - e, p)) / (2 * h)
    return dpsi


def ilc_substeps(lin: LinearizationSchedule, lqr_gains: GainSchedule, gains: IlcGains,
                 ref: ReferenceBundle, p_nominal=C.P_NOMINAL, target: float = RK4_STABLE,
                 dpsi: np.ndarray | None = None) -> np.ndarray:
    """RK4 substeps per interval from the unsaturated ILC closed-loop matrix
    ``A - b_h K_lqr,h - B_mu K dPsi/dx`` along the reference."""
    if dpsi is None:
        dpsi = output_jacobians(ref, p_nominal)
    B = lin.B2.values
    acl = (lin.A.values
           - np.einsum("ki,kj->kij", B[:, :, 0], lqr_gains.K.values[:, 0, :])
           - np.einsum("kim,mn,knj->kij", B[:, :, 1:], gains.K, dpsi))
    rate = np.abs(acl).sum(axis=2).max(axis=1)
    rate = np.maximum(rate[:-1], rate[1:])
    h = np.diff(ref.grid.nodes)
    return np.maximum(1, np.ceil(h * rate / target)).astype(np.int64)


# --------------------------------------------------------------------------
# session
# --------------------------------------------------------------------------

def _default_state_box() -> IntervalBox:
    return IntervalBox(C.X_LOWER, C.X_UPPER)


def _default_mu_box() -> IntervalBox:
    return IntervalBox(C.U_LOWER[1:], C.U_UPPER[1:])


@dataclass
class IlcSession:
    gains: IlcGains
    ref: ReferenceBundle
    lqr_gains: GainSchedule
    p_true: np.ndarray
    substeps: np.ndarray
    mu_prev: Trajectory
    ups_prev: Trajectory
    t_s_prev: float
    recall: RecallPolicy = field(default_factory=RecallPolicy)
    state_box: IntervalBox = field(default_factory=_default_state_box)
    mu_box: IntervalBox = field(default_factory=_default_mu_box)
    ups_hat: Trajectory | None = None
    j: int = 0
    x0: np.ndarray | None = None
    g: float = C.GRAVITY
    # keep K (Ups_hat - Ups) on top of the extrapolation past the previous abort
    feedback_past_abort: bool = True
    # hold mu constant over each grid interval instead of evaluating it continuously
    hold_mu: bool = False

    def __post_init__(self):
        self.p_true = np.ascontiguousarray(self.p_true, dtype=float)
        if self.ups_hat is None:
            self.ups_hat = ups_reference(self.ref)
        if self.x0 is None:
            self.x0 = self.ref.x_hat.values[0].copy()
        tf = self.ref.grid.tf
        if not (self.ref.grid.t0 <= self.t_s_prev <= tf):
            raise ValueError("t_s_prev outside the horizon")

    @classmethod
    def start(cls, gains: IlcGains, ref: ReferenceBundle, lqr_gains: GainSchedule, p_true,
              substeps, recall: RecallPolicy | None = None, mu0: Trajectory | None = None,
              **kw) -> "IlcSession":
        """Fresh session: ``t_s^0 = t_f``, ``Ups^0 = Ups_hat``, ``mu^0`` straight
        line unless a warm start is given."""
        ups_hat = kw.pop("ups_hat", None) or ups_reference(ref)
        mu0 = mu0 if mu0 is not None else init_mu(ref)
        return cls(gains, ref, lqr_gains, p_true, substeps, mu0, ups_hat, ref.grid.tf,
                   recall or RecallPolicy(), ups_hat=ups_hat, **kw)


def mu_update(session: IlcSession, t: float, ups_current, gamma=None) -> np.ndarray:
    """``sat(Gamma^j(t))`` for the session's next iteration (reference version
    of the compiled law, used for testing)."""
    gamma = np.eye(3) if gamma is None else gamma
    mu_hat_f = session.ref.u_hat.values[-1, 1:]
    tf = session.ref.grid.tf
    ts = session.t_s_prev
    if t < ts:
        G = (gamma @ session.mu_prev(t) + session.gains.L @ (session.ups_hat(t) - session.ups_prev(t))
             + session.gains.K @ (session.ups_hat(t) - np.asarray(ups_current, dtype=float)))
    elif ts >= tf:
        G = mu_hat_f.copy()
    else:
        alpha, beta = _extrapolation(session)
        G = alpha * t + beta
        if session.feedback_past_abort:
            G = G + session.gains.K @ (session.ups_hat(t) - np.asarray(ups_current, dtype=float))
    return session.mu_box.clip(G)


def _extrapolation(session: IlcSession):
    tf = session.ref.grid.tf
    ts = session.t_s_prev
    mu_hat_f = session.ref.u_hat.values[-1, 1:]
    if ts >= tf:
        return np.zeros(3), mu_hat_f.copy()
    k = session.mu_prev.grid.index_of(ts)
    alpha = (mu_hat_f - session.mu_prev.values[k]) / (tf - ts)
    return alpha, mu_hat_f - alpha * tf


def run_iteration(session: IlcSession) -> IterationResult:
    """Run trial ``j = session.j + 1`` and advance the session."""
    j = session.j + 1
    gamma = session.recall.gamma(j)
    grid = session.ref.grid
    nodes = grid.nodes
    alpha, beta = _extrapolation(session)
    # values past the previous abort are never read, but must be finite for numba
    mu_prev = np.nan_to_num(session.mu_prev.values)
    ups_prev = np.nan_to_num(session.ups_prev.values)
    xs, ups, mus, taus, last = _run_iteration(
        np.ascontiguousarray(session.x0, dtype=float), session.p_true, session.g, nodes,
        session.substeps, session.ref.x_hat.values,
        np.ascontiguousarray(session.ref.u_hat.values[:, 0]),
        np.ascontiguousarray(session.lqr_gains.K.values[:, 0, :]), session.ups_hat.values, mu_prev, ups_prev,
        float(session.t_s_prev), alpha, beta, session.ref.u_hat.values[-1, 1:].copy(),
        gamma, session.gains.K, session.gains.L,
        session.mu_box.lower.copy(), session.mu_box.upper.copy(),
        float(TAU_H_LOWER), float(TAU_H_UPPER),
        session.state_box.lower.copy(), session.state_box.upper.copy(),
        bool(session.feedback_past_abort), bool(session.hold_mu),
    )
    aborted = last < len(nodes) - 1
    if last < 0:
        t_s = float(nodes[0])
        last = 0
        # nothing was applied; keep the initial input for the extrapolation anchor
        mus[0] = session.mu_prev.values[0]
        ups[0] = session.ups_hat.values[0]
    else:
        t_s = float(nodes[last])
    cost = math.inf if aborted else iteration_cost(nodes, ups, session.ups_hat.values, mus, grid.step)
    result = IterationResult(j, t_s, cost, aborted, Trajectory(grid, xs), Trajectory(grid, ups),
                             Trajectory(grid, mus), Trajectory(grid, taus))
    session.mu_prev = result.mu
    session.ups_prev = result.ups
    session.t_s_prev = t_s
    session.j = j
    return result


def run_training(session: IlcSession, n_iterations: int) -> list[IterationResult]:
    if n_iterations < 1:
        raise ValueError("need at least one iteration")
    return [run_iteration(session) for _ in range(n_iterations)]


def final_cost(results: list[IterationResult]) -> float:
    return results[-1].cost


@dataclass(frozen=True)
class IlcScenario:
    """Everything needed to replay a training run for arbitrary ILC gains.

    Substeps are recomputed per gain pair, since ``K`` changes the stiffness
    of the closed loop.
    """

    ref: ReferenceBundle
    lin: LinearizationSchedule
    lqr_gains: GainSchedule
    p_true: np.ndarray
    n_iterations: int = 30
    recall_mode: str = "perfect"
    seed: int = 0
    mu0: Trajectory | None = None
    feedback_past_abort: bool = True
    recall_decay: float = C.RECALL_DECAY
    recall_amplitude: float = C.RECALL_AMPLITUDE
    state_box: IntervalBox = field(default_factory=_default_state_box)
    dpsi: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("need at least one iteration")
        if self.dpsi is None:
            object.__setattr__(self, "dpsi", output_jacobians(self.ref))

    def session(self, gains: IlcGains) -> IlcSession:
        sub = ilc_substeps(self.lin, self.lqr_gains, gains, self.ref, dpsi=self.dpsi)
        recall = RecallPolicy(self.recall_mode, self.recall_decay, self.recall_amplitude, self.seed)
        return IlcSession.start(gains, self.ref, self.lqr_gains, self.p_true, sub, recall=recall,
                                mu0=self.mu0, feedback_past_abort=self.feedback_past_abort,
                                state_box=self.state_box)

    def run(self, gains: IlcGains) -> list[IterationResult]:
        return run_training(self.session(gains), self.n_iterations)

    def __call__(self, eta) -> float:
        """Final-iteration cost for the flattened gains ``[K, L]``."""
        return final_cost(self.run(IlcGains.from_vector(eta)))
