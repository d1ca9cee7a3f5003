"""Shared numerical plumbing: time grids, sampled trajectories, interval
boxes, ODE integration, Latin hypercube sampling and the box-constrained
allocation QP."""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy.integrate import solve_ivp

from .errors import Infeasible, NonFiniteState, OutOfDomain

Interpolation = Literal["linear", "previous"]

RK45_ATOL = 1e-9
RK45_RTOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    tf: float
    step: float
    nodes: np.ndarray = field(repr=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if self.step <= 0:
            raise ValueError("step must be positive")
        if nodes.ndim != 1 or nodes.size < 2 or np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if nodes[0] != self.t0 or nodes[-1] != self.tf:
            raise ValueError("nodes must start at t0 and end at tf")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, t0: float, tf: float, step: float) -> "TimeGrid":
        """Uniform grid; the last node is pinned to ``tf`` exactly."""
        n = int(round((tf - t0) / step))
        if n < 1 or abs(t0 + n * step - tf) > 1e-9 * max(1.0, abs(tf)):
            raise ValueError(f"step {step} does not divide [{t0}, {tf}]")
        nodes = t0 + step * np.arange(n + 1)
        nodes[-1] = tf
        return cls(float(t0), float(tf), float(step), nodes)

    def __len__(self) -> int:
        return self.nodes.size

    def index_of(self, t: float) -> int:
        """Index of the grid node closest to ``t``."""
        return int(np.argmin(np.abs(self.nodes - t)))


@dataclass(frozen=True)
class Trajectory:
    """Values sampled on a grid; ``values[k]`` belongs to ``grid.nodes[k]``.

    Values may be vectors or matrices (e.g. a 4x6 gain per node).
    """

    grid: TimeGrid
    values: np.ndarray
    interpolation: Interpolation = "linear"

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape[0] != len(self.grid):
            raise ValueError(
                f"{values.shape[0]} values for a grid of {len(self.grid)} nodes"
            )
        if self.interpolation not in ("linear", "previous"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple:
        return self.values.shape[1:]

    def __call__(self, t: float) -> np.ndarray:
        return interpolate(self, t)

    def at_node(self, k: int) -> np.ndarray:
        return self.values[k]


def interpolate(traj: Trajectory, t: float) -> np.ndarray:
    nodes = traj.grid.nodes
    if t < nodes[0] or t > nodes[-1]:
        raise OutOfDomain(f"t={t} outside [{nodes[0]}, {nodes[-1]}]")
    k = int(np.searchsorted(nodes, t, side="right")) - 1
    if k >= nodes.size - 1:
        return traj.values[-1].copy()
    if t == nodes[k] or traj.interpolation == "previous":
        return traj.values[k].copy()
    w = (t - nodes[k]) / (nodes[k + 1] - nodes[k])
    return (1.0 - w) * traj.values[k] + w * traj.values[k + 1]


@dataclass(frozen=True)
class IntervalBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float)
        hi = np.array(self.upper, dtype=float)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper shapes differ")
        if np.any(lo > hi):
            raise ValueError("lower must not exceed upper")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def point(cls, c) -> "IntervalBox":
        return cls(c, c)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def offset(self, c) -> float:
        """Product of absolute distances between the box center and ``c``."""
        return float(np.prod(np.abs(self.center - np.asarray(c, dtype=float))))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def clip(self, x) -> np.ndarray:
        return np.minimum(self.upper, np.maximum(self.lower, x))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


def child_seeds(seed: int, n: int) -> list[int]:
    """Deterministic, independent seeds for parallel workers."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def parallel_map(fn, items, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally over a process pool; the result
    order always follows ``items``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# ODE integration
# --------------------------------------------------------------------------

def rk4_step(field: Callable, t: float, x: np.ndarray, h: float) -> np.ndarray:
    k1 = field(t, x)
    k2 = field(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = field(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = field(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(
    field: Callable[[float, np.ndarray], np.ndarray],
    x0,
    grid: TimeGrid,
    method: Literal["rk4", "rk45"] = "rk4",
    *,
    atol: float = RK45_ATOL,
    rtol: float = RK45_RTOL,
) -> Trajectory:
    """Integrate ``x' = field(t, x)`` and sample the solution on ``grid``.

    ``rk4`` takes one classical Runge-Kutta step per grid interval; ``rk45``
    runs scipy's adaptive Dormand-Prince and evaluates its dense output at
    the nodes.
    """
    x0 = np.array(x0, dtype=float)
    nodes = grid.nodes
    if method == "rk4":
        out = np.empty((nodes.size,) + x0.shape)
        out[0] = x0
        x = x0
        for k in range(nodes.size - 1):
            x = rk4_step(field, nodes[k], x, nodes[k + 1] - nodes[k])
            if not np.all(np.isfinite(x)):
                raise NonFiniteState(f"non-finite state at t={nodes[k + 1]:.6g}")
            out[k + 1] = x
        return Trajectory(grid, out)
    if method == "rk45":
        shape = x0.shape

        def flat(t, y):
            dy = np.asarray(field(t, y.reshape(shape)), dtype=float).ravel()
            if not np.all(np.isfinite(dy)):
                raise NonFiniteState(f"non-finite derivative at t={t:.6g}")
            return dy

        sol = solve_ivp(
            flat, (nodes[0], nodes[-1]), x0.ravel(), method="RK45",
            t_eval=nodes, atol=atol, rtol=rtol,
        )
        if not sol.success:
            raise NonFiniteState(sol.message)
        vals = sol.y.T.reshape((nodes.size,) + shape)
        if not np.all(np.isfinite(vals)):
            raise NonFiniteState("non-finite state in rk45 solution")
        return Trajectory(grid, vals)
    raise ValueError(f"unknown method {method!r}")


# --------------------------------------------------------------------------
# Latin hypercube
# --------------------------------------------------------------------------

def latin_hypercube(
    n_samples: int, box: IntervalBox, rng: np.random.Generator
) -> np.ndarray:
    """McKay-style LHS: one sample per stratum per axis, strata shuffled
    independently per axis. Returns an ``(n_samples, dim)`` array.

    Degenerate axes (``lower == upper``) return the constant value.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    d = box.dim
    u = np.empty((n_samples, d))
    for j in range(d):
        perm = rng.permutation(n_samples)
        jitter = rng.uniform(-0.5, 0.5, size=n_samples)
        u[:, j] = (perm + 0.5 + jitter) / n_samples
    return box.lower + u * box.width


# --------------------------------------------------------------------------
# Box-constrained weighted min-norm allocation
# --------------------------------------------------------------------------

def _solve_with_fixed(h, aeq, beq, fixed: dict[int, float]):
    """min 1/2 sum h_i xi_i^2 s.t. aeq xi = beq, with some coordinates pinned.

    Returns (xi, lam) or None when the pinned system is inconsistent.
    """
    n = h.size
    xi = np.zeros(n)
    free = [i for i in range(n) if i not in fixed]
    for i, v in fixed.items():
        xi[i] = v
    rhs = beq - aeq @ xi
    if not free:
        if np.linalg.norm(rhs) > 1e-9 * (1.0 + np.linalg.norm(beq)):
            return None
        lam = np.zeros(aeq.shape[0])
        return xi, lam
    af = aeq[:, free]
    hinv = 1.0 / h[free]
    m = (af * hinv) @ af.T
    lam, *_ = np.linalg.lstsq(m, rhs, rcond=None)
    xi[free] = hinv * (af.T @ lam)
    if np.linalg.norm(aeq @ xi - beq) > 1e-9 * (1.0 + np.linalg.norm(beq)):
        return None
    return xi, lam


def _multipliers(h, aeq, xi, lam):
    # stationarity: h*xi - aeq^T lam - z = 0, z = bound multiplier
    return h * xi - aeq.T @ lam


def kkt_residual(w, aeq, beq, box: IntervalBox, xi) -> float:
    """Max violation over primal feasibility, stationarity (given the best
    equality multiplier) and bound-multiplier sign conditions."""
    w = np.asarray(w, dtype=float)
    h = (np.diag(w) if w.ndim == 2 else w) ** 2
    xi = np.asarray(xi, dtype=float)
    aeq = np.atleast_2d(np.asarray(aeq, dtype=float))
    beq = np.atleast_1d(np.asarray(beq, dtype=float))
    at_lo = np.isclose(xi, box.lower, rtol=0, atol=1e-10)
    at_hi = np.isclose(xi, box.upper, rtol=0, atol=1e-10)
    free = ~(at_lo | at_hi)
    grad = h * xi
    if np.any(free):
        lam, *_ = np.linalg.lstsq(aeq[:, free].T, grad[free], rcond=None)
    else:
        lam = np.zeros(aeq.shape[0])
    z = grad - aeq.T @ lam
    res = [
        np.max(np.abs(aeq @ xi - beq)) / (1.0 + np.max(np.abs(beq))),
        np.max(np.maximum(box.lower - xi, 0.0)),
        np.max(np.maximum(xi - box.upper, 0.0)),
        np.max(np.abs(z[free]), initial=0.0) / (1.0 + np.max(np.abs(grad))),
        np.max(np.maximum(-z[at_lo & ~at_hi], 0.0), initial=0.0) / (1.0 + np.max(np.abs(grad))),
        np.max(np.maximum(z[at_hi & ~at_lo], 0.0), initial=0.0) / (1.0 + np.max(np.abs(grad))),
    ]
    return float(max(res))


def solve_allocation_qp(w, aeq, beq, box: IntervalBox, max_iter: int = 50) -> np.ndarray:
    """Minimise ``1/2 ||W xi||^2`` subject to ``Aeq xi = beq`` and the box.

    ``w`` is the diagonal of W (or W itself). Active-set iteration over the
    bounds, starting from the unconstrained weighted min-norm solution.
    Ties in which bound to activate or release go to the lowest index.
    Falls back to exhaustive enumeration of active sets if the iteration
    does not settle; raises :class:`Infeasible` if no KKT point exists.
    """
    w = np.asarray(w, dtype=float)
    h = (np.diag(w) if w.ndim == 2 else w) ** 2
    aeq = np.atleast_2d(np.asarray(aeq, dtype=float))
    beq = np.atleast_1d(np.asarray(beq, dtype=float))
    lo, hi = box.lower, box.upper
    tol = 1e-12 * (1.0 + np.max(np.abs(np.concatenate([lo, hi]))))

    fixed: dict[int, float] = {i: lo[i] for i in range(h.size) if lo[i] == hi[i]}
    for _ in range(max_iter):
        sol = _solve_with_fixed(h, aeq, beq, fixed)
        if sol is None:
            break
        xi, lam = sol
        viol = np.maximum(lo - xi, xi - hi)
        viol[list(fixed)] = -np.inf
        worst = int(np.argmax(viol))
        if viol[worst] > tol:
            fixed[worst] = lo[worst] if xi[worst] < lo[worst] else hi[worst]
            continue
        z = _multipliers(h, aeq, xi, lam)
        wrong = {
            i: (-z[i] if v == lo[i] else z[i])
            for i, v in fixed.items() if lo[i] != hi[i]
        }
        bad = [i for i in sorted(wrong) if wrong[i] > 1e-10 * (1.0 + np.max(np.abs(h * xi)))]
        if bad:
            release = max(bad, key=lambda i: (wrong[i], -i))
            del fixed[release]
            continue
        return xi
    return _enumerate_active_sets(h, aeq, beq, lo, hi)


def _enumerate_active_sets(h, aeq, beq, lo, hi) -> np.ndarray:
    best = None
    n = h.size
    for pattern in itertools.product((0, 1, 2), repeat=n):
        fixed = {i: (lo[i] if s == 1 else hi[i]) for i, s in enumerate(pattern) if s}
        sol = _solve_with_fixed(h, aeq, beq, fixed)
        if sol is None:
            continue
        xi = sol[0]
        if np.any(xi < lo - 1e-10) or np.any(xi > hi + 1e-10):
            continue
        cost = float(np.sum(h * xi**2))
        if best is None or cost < best[0] - 1e-14:
            best = (cost, np.clip(xi, lo, hi))
    if best is None:
        raise Infeasible("no point in the box satisfies the equality constraints")
    return best[1]
