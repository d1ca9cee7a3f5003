"""Finite-horizon LQR along the planned reference.

The model is linearised at every grid node by central differences, the
Riccati matrix ODE is integrated backwards with RK4, and the resulting
time-varying gain closes the loop around the computed-torque feedforward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .constants import GRAVITY
from .dynamics import _matvec, _state_derivative
from .errors import NonFiniteState, RiccatiBlowup
from .numerics import IntervalBox, Trajectory, latin_hypercube
from .planner import ReferenceBundle

FD_REL_STEP = 1e-6
FD_FLOOR = 1e-8
RICCATI_LIMIT = 1e12

Q_RANGE = (0.0, 100.0)
R_RANGE = (0.0, 0.01)
S_RANGE = (0.0, 100.0)


@dataclass(frozen=True)
class LinearizationSchedule:
    A: Trajectory   # (n, 6, 6)
    B1: Trajectory  # (n, 6, 12), not used by synthesis
    B2: Trajectory  # (n, 6, 4)


@dataclass(frozen=True)
class LqrWeights:
    """Diagonals of the state, input and terminal weights."""

    q: np.ndarray
    r: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        for name in ("q", "r", "s"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.q < 0) or np.any(self.s < 0):
            raise ValueError("Q and S must be positive semidefinite")
        if np.any(self.r <= 0):
            raise ValueError("R must be positive definite")

    def as_dict(self) -> dict:
        return {"q": self.q.tolist(), "r": self.r.tolist(), "s": self.s.tolist()}


@dataclass(frozen=True)
class GainSchedule:
    K: Trajectory  # (n, 4, 6)
    P: Trajectory  # (n, 6, 6)


@njit(cache=True)
def _fd_step(v, rel, floor):
    return max(rel * abs(v), floor)


@njit(cache=True)
def _model_jacobians(x, p, u, g, rel=FD_REL_STEP, floor=FD_FLOOR):
    """Central-difference Jacobians of the open-loop field w.r.t. x, p, u."""
    A = np.empty((6, 6))
    B1 = np.empty((6, 12))
    B2 = np.empty((6, 4))
    for j in range(6):
        h = _fd_step(x[j], rel, floor)
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        A[:, j] = (_state_derivative(xp, p, u, g) - _state_derivative(xm, p, u, g)) / (2.0 * h)
    for j in range(12):
        h = _fd_step(p[j], rel, floor)
        pp = p.copy()
        pm = p.copy()
        pp[j] += h
        pm[j] -= h
        B1[:, j] = (_state_derivative(x, pp, u, g) - _state_derivative(x, pm, u, g)) / (2.0 * h)
    for j in range(4):
        h = _fd_step(u[j], rel, floor)
        up = u.copy()
        um = u.copy()
        up[j] += h
        um[j] -= h
        B2[:, j] = (_state_derivative(x, p, up, g) - _state_derivative(x, p, um, g)) / (2.0 * h)
    return A, B1, B2


def linearize(ref: ReferenceBundle, p_nominal, g: float = GRAVITY) -> LinearizationSchedule:
    p = np.ascontiguousarray(p_nominal, dtype=float)
    n = len(ref.grid)
    A = np.empty((n, 6, 6))
    B1 = np.empty((n, 6, 12))
    B2 = np.empty((n, 6, 4))
    for k in range(n):
        A[k], B1[k], B2[k] = _model_jacobians(
            ref.x_hat.values[k].copy(), p, ref.u_hat.values[k].copy(), g
        )
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B1)) and np.all(np.isfinite(B2))):
        raise NonFiniteState("non-finite Jacobian along the reference")
    grid = ref.grid
    return LinearizationSchedule(Trajectory(grid, A), Trajectory(grid, B1), Trajectory(grid, B2))


RK4_STABLE = 1.0  # target h * ||A_cl||_inf per substep, well inside RK4's region
RICCATI_TARGET = 0.05  # stricter for P itself, whose accuracy sets the gains


@njit(cache=True)
def _riccati_rhs(P, A, B, r_inv, Q):
    # dP/d(tau) with tau = tf - t
    PB = P @ B
    return P @ A + A.T @ P - (PB * r_inv) @ PB.T + Q


@njit(cache=True)
def _closed_loop_rate(P, A, B, r_inv):
    # infinity norm of A - B R^-1 B' P bounds the spectral radius
    Acl = A - (B * r_inv) @ (B.T @ P)
    return np.max(np.sum(np.abs(Acl), axis=1))


@njit(cache=True)
def _riccati_sweep(A, B, r_inv, Q, S, nodes, limit):
    n = nodes.size
    P = np.empty((n, A.shape[1], A.shape[1]))
    P[-1] = S
    substeps = np.zeros(n - 1, dtype=np.int64)
    for k in range(n - 1, 0, -1):
        span = nodes[k] - nodes[k - 1]
        Pk = P[k].copy()
        done = 0.0
        while done < 1.0:
            # re-estimate the stiffness at the current point of the interval
            Ac = (1.0 - done) * A[k] + done * A[k - 1]
            Bc = (1.0 - done) * B[k] + done * B[k - 1]
            # the Lyapunov part of the Riccati map has twice the closed-loop rate
            rate = 2.0 * _closed_loop_rate(Pk, Ac, Bc, r_inv)
            m = max(1, int(np.ceil(span * rate / RICCATI_TARGET)))
            frac = min(1.0 / m, 1.0 - done)
            h = frac * span
            fm = done + 0.5 * frac
            fe = min(done + frac, 1.0)
            Am = (1.0 - fm) * A[k] + fm * A[k - 1]
            Bm = (1.0 - fm) * B[k] + fm * B[k - 1]
            Ae = (1.0 - fe) * A[k] + fe * A[k - 1]
            Be = (1.0 - fe) * B[k] + fe * B[k - 1]
            k1 = _riccati_rhs(Pk, Ac, Bc, r_inv, Q)
            k2 = _riccati_rhs(Pk + 0.5 * h * k1, Am, Bm, r_inv, Q)
            k3 = _riccati_rhs(Pk + 0.5 * h * k2, Am, Bm, r_inv, Q)
            k4 = _riccati_rhs(Pk + h * k3, Ae, Be, r_inv, Q)
            Pk = Pk + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            Pk = 0.5 * (Pk + Pk.T)
            substeps[k - 1] += 1
            done = fe
            if not np.all(np.isfinite(Pk)) or np.max(np.abs(Pk)) > limit:
                return P, substeps, k - 1
        P[k - 1] = Pk
    return P, substeps, -1


def solve_riccati(lin: LinearizationSchedule, w: LqrWeights) -> GainSchedule:
    """Backward RK4 on the reversed grid, symmetrising P after every step.

    Each grid interval is split into as many RK4 substeps as the current
    closed-loop rate requires; near ``tf`` with small ``R`` the equation is
    very stiff and a single 4 ms step would be unstable.
    """
    grid = lin.A.grid
    nodes = grid.nodes
    r_inv = 1.0 / w.r
    P, _, failed = _riccati_sweep(
        np.ascontiguousarray(lin.A.values), np.ascontiguousarray(lin.B2.values),
        r_inv, np.diag(w.q), np.diag(w.s), nodes, RICCATI_LIMIT,
    )
    if failed >= 0:
        raise RiccatiBlowup(f"|P| exceeded {RICCATI_LIMIT:g} near t={nodes[failed]:.4g}")
    K = r_inv[None, :, None] * np.einsum("kji,kjl->kil", lin.B2.values, P)
    return GainSchedule(Trajectory(grid, K), Trajectory(grid, P))


def riccati_residual(lin: LinearizationSchedule, w: LqrWeights, gains: GainSchedule) -> np.ndarray:
    """Max-abs residual of the Riccati ODE at interior nodes, with dP/dt
    taken by central differences of the stored schedule."""
    P = gains.P.values
    nodes = gains.P.grid.nodes
    Q = np.diag(w.q)
    r_inv = 1.0 / w.r
    out = np.empty(nodes.size - 2)
    for k in range(1, nodes.size - 1):
        dP = (P[k + 1] - P[k - 1]) / (nodes[k + 1] - nodes[k - 1])
        rhs = -_riccati_rhs(P[k], lin.A.values[k], lin.B2.values[k], r_inv, Q)
        out[k - 1] = np.max(np.abs(dP - rhs))
    return out


# --------------------------------------------------------------------------
# closed loop
# --------------------------------------------------------------------------

@njit(cache=True)
def _closed_loop_field(x, p, xh, uh, K, g):
    u = uh - _matvec(K, x - xh)
    return _state_derivative(x, p, u, g)


@njit(cache=True)
def _interp(arr, k, frac):
    return (1.0 - frac) * arr[k] + frac * arr[k + 1]


@njit(cache=True)
def _simulate_closed_loop(x0, p, spans, xhat, uhat, K, substeps, g):
    n = xhat.shape[0]
    out = np.empty((n, 6))
    out[0] = x0
    x = x0.copy()
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
            k1 = _closed_loop_field(x, p, xa, ua, Ka, g)
            k2 = _closed_loop_field(x + 0.5 * hs * k1, p, xm, um, Km, g)
            k3 = _closed_loop_field(x + 0.5 * hs * k2, p, xm, um, Km, g)
            k4 = _closed_loop_field(x + hs * k3, p, xb, ub, Kb, g)
            x = x + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = x
    return out


def stiffness_substeps(lin: LinearizationSchedule, gains: GainSchedule,
                       target: float = RK4_STABLE) -> np.ndarray:
    """RK4 substeps per grid interval so that ``h * ||A - B2 K||_inf <= target``.

    The gain grows sharply towards ``tf`` when ``R`` is small, which makes the
    closed loop far stiffer than the open-loop plant there.
    """
    acl = lin.A.values - np.einsum("kij,kjl->kil", lin.B2.values, gains.K.values)
    rate = np.abs(acl).sum(axis=2).max(axis=1)
    rate = np.maximum(rate[:-1], rate[1:])
    h = np.diff(lin.A.grid.nodes)
    return np.maximum(1, np.ceil(h * rate / target)).astype(np.int64)


def closed_loop_field(t, x, p, ref: ReferenceBundle, gains: GainSchedule, g: float = GRAVITY):
    """Unsaturated LQR closed loop: ``f(x, p, u_hat(t) - K(t)(x - x_hat(t)))``."""
    return _closed_loop_field(
        np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(p, dtype=float),
        ref.x_hat(t), ref.u_hat(t), np.ascontiguousarray(gains.K(t)), g,
    )


def simulate_closed_loop(ref: ReferenceBundle, gains: GainSchedule, p, x0=None,
                         substeps=None, g: float = GRAVITY) -> Trajectory:
    """RK4 of the closed loop, reported on the reference grid.

    ``substeps`` (one count per interval, see :func:`stiffness_substeps`)
    defaults to one step per interval.
    """
    grid = ref.grid
    x0 = ref.x_hat.values[0] if x0 is None else x0
    if substeps is None:
        substeps = np.ones(len(grid) - 1, dtype=np.int64)
    xs = _simulate_closed_loop(
        np.ascontiguousarray(x0, dtype=float), np.ascontiguousarray(p, dtype=float),
        np.diff(grid.nodes), ref.x_hat.values, ref.u_hat.values, gains.K.values,
        np.ascontiguousarray(substeps, dtype=np.int64), g,
    )
    if not np.all(np.isfinite(xs)):
        raise NonFiniteState("closed-loop simulation diverged")
    return Trajectory(grid, xs)


def closed_loop_input(ref: ReferenceBundle, gains: GainSchedule, xs: np.ndarray) -> np.ndarray:
    """Node-wise ``u_hat - K (x - x_hat)`` for a state history."""
    dx = xs - ref.x_hat.values
    return ref.u_hat.values - np.einsum("kij,kj->ki", gains.K.values, dx)


def synthesize(ref: ReferenceBundle, weights: LqrWeights, p_nominal,
               lin: LinearizationSchedule | None = None) -> GainSchedule:
    lin = lin or linearize(ref, p_nominal)
    return solve_riccati(lin, weights)


def sample_weight_pool(n: int, rng: np.random.Generator) -> list[LqrWeights]:
    """LHS over the 16 diagonal entries; Q, S in (0, 100), R in (0, 0.01)."""
    lo = np.r_[np.full(6, Q_RANGE[0]), np.full(4, R_RANGE[0]), np.full(6, S_RANGE[0])]
    hi = np.r_[np.full(6, Q_RANGE[1]), np.full(4, R_RANGE[1]), np.full(6, S_RANGE[1])]
    draws = latin_hypercube(n, IntervalBox(lo, hi), rng)
    # open intervals: nudge exact endpoints inward
    draws = np.clip(draws, np.nextafter(lo, hi), np.nextafter(hi, lo))
    return [LqrWeights(d[:6], d[6:10], d[10:]) for d in draws]


def paper_weights() -> LqrWeights:
    from .constants import Q_STAR, R_STAR, S_STAR
    return LqrWeights(Q_STAR.copy(), R_STAR.copy(), S_STAR.copy())
