"""Derivative-free tuning of the ILC gains by randomized smoothing.

The objective is a black box ``g: R^n -> R u {inf}``. Gradients of the
Gaussian-smoothed objective are estimated from two-point differences along
random directions, either one at a time (plain SGD) or in batches where only
the best-ranked directions contribute (the ARS-style update).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AllInfinite
from .ilc import IlcGains
from .numerics import make_rng, parallel_map

Objective = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class DfoConfig:
    sigma: float = 0.01
    rho: float = 0.04
    B: int = 30
    B_t: int = 10
    iterations: int = 10_000
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not (0 < self.B_t <= self.B):
            raise ValueError("need 0 < B_t <= B")
        if not (self.sigma > 0 and self.rho > 0):
            raise ValueError("sigma and rho must be positive")
        if self.iterations < 0 or self.workers < 1:
            raise ValueError("iterations must be >= 0 and workers >= 1")

    @classmethod
    def paper(cls, **kw) -> "DfoConfig":
        return cls(**kw)

    @classmethod
    def desk(cls, **kw) -> "DfoConfig":
        kw = {"B": 3, "B_t": 2, "iterations": 200, **kw}
        return cls(**kw)


@dataclass
class StepInfo:
    """Diagnostics of one batched step."""

    elite_costs: np.ndarray   # (B_t, 2) costs at eta + sigma xi and eta - sigma xi
    deviation: float          # empirical std of the finite elite costs
    used: int                 # directions that entered the update
    skipped: bool


@dataclass
class DfoTrace:
    """Starting point plus one record per step."""

    initial_iterate: np.ndarray
    initial_cost: float
    costs: list[float] = field(default_factory=list)        # cost of each iterate
    best_costs: list[float] = field(default_factory=list)   # incumbent after each step
    iterates: list[np.ndarray] = field(default_factory=list)
    elite_costs: list[np.ndarray] = field(default_factory=list)

    def record(self, eta: np.ndarray, cost: float, elite: np.ndarray) -> None:
        best = min(cost, self.best_costs[-1] if self.best_costs else self.initial_cost)
        self.costs.append(float(cost))
        self.best_costs.append(float(best))
        self.iterates.append(np.array(eta, dtype=float))
        self.elite_costs.append(np.array(elite, dtype=float))

    def __len__(self) -> int:
        return len(self.costs)

    def best(self) -> tuple[np.ndarray, float]:
        """First iterate reaching the lowest recorded cost, the start included."""
        costs = [self.initial_cost] + self.costs
        k = int(np.argmin(costs))
        return ([self.initial_iterate] + self.iterates)[k], costs[k]


def two_point_gradient(g: Objective, eta, xi, sigma: float) -> np.ndarray:
    """``(g(eta + sigma xi) - g(eta - sigma xi)) / (2 sigma) * xi``.

    An infinite probe makes the estimate non-finite, which callers treat as
    a marker rather than a direction.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    eta = np.asarray(eta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    gp, gm = g(eta + sigma * xi), g(eta - sigma * xi)
    if not (math.isfinite(gp) and math.isfinite(gm)):
        return np.full(eta.shape, np.inf)
    return (gp - gm) / (2.0 * sigma) * xi


def sgd_step(g: Objective, eta, config: DfoConfig, rng: np.random.Generator) -> np.ndarray:
    """One plain step along a fresh Gaussian direction; infinite probes leave
    the iterate unchanged."""
    eta = np.asarray(eta, dtype=float)
    xi = rng.standard_normal(eta.shape)
    grad = two_point_gradient(g, eta, xi, config.sigma)
    if not np.all(np.isfinite(grad)):
        return eta.copy()
    return eta - config.rho * grad


def _probe(args):
    g, x = args
    return float(g(x))


def ars_step(g: Objective, eta, config: DfoConfig,
             rng: np.random.Generator) -> tuple[np.ndarray, StepInfo]:
    """Batched update over the ``B_t`` best of ``B`` random directions, scaled by
    the empirical standard deviation of the elite costs."""
    eta = np.asarray(eta, dtype=float)
    xi = rng.standard_normal((config.B, eta.size))
    probes = [eta + config.sigma * d for d in xi] + [eta - config.sigma * d for d in xi]
    values = np.array(parallel_map(_probe, [(g, x) for x in probes], config.workers))
    plus, minus = values[:config.B], values[config.B:]
    if not np.any(np.isfinite(values)):
        raise AllInfinite(f"all {2 * config.B} probes returned an infinite cost")
    # stable sort: ties keep draw order; inf ranks last
    order = np.argsort(np.minimum(plus, minus), kind="stable")[:config.B_t]
    elite = np.column_stack([plus[order], minus[order]])
    if not np.any(np.isfinite(elite)):
        raise AllInfinite("every elite probe returned an infinite cost")
    keep = np.all(np.isfinite(elite), axis=1)
    finite = elite[keep].ravel()
    deviation = float(np.std(finite)) if finite.size else 0.0
    if deviation == 0.0 or not np.any(keep):
        return eta.copy(), StepInfo(elite, deviation, 0, True)
    weights = (elite[keep, 0] - elite[keep, 1]) / (2.0 * deviation)
    step = (config.rho / config.B_t) * (weights @ xi[order][keep])
    return eta - step, StepInfo(elite, deviation, int(keep.sum()), False)


def run_ars(g: Objective, eta0, config: DfoConfig,
            callback: Callable[[int, DfoTrace], None] | None = None) -> DfoTrace:
    """``config.iterations`` batched steps from ``eta0``."""
    rng = make_rng(config.seed)
    eta = np.asarray(eta0, dtype=float).copy()
    trace = DfoTrace(eta.copy(), float(g(eta)))
    for k in range(config.iterations):
        eta, info = ars_step(g, eta, config, rng)
        trace.record(eta, float(g(eta)), info.elite_costs)
        if callback is not None:
            callback(k + 1, trace)
    return trace


def tune_ilc_gains(objective: Objective, eta0, config: DfoConfig,
                   callback: Callable[[int, DfoTrace], None] | None = None):
    """Tune ``[K, L]`` from ``eta0``; returns ``(K, L, trace)`` for the best
    recorded iterate."""
    trace = run_ars(objective, eta0, config, callback)
    eta, _ = trace.best()
    gains = IlcGains.from_vector(eta)
    return gains.K, gains.L, trace
