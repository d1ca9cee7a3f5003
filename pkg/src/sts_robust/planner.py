"""Reference trajectories for the ascension phase.

A rest-to-rest cubic blend is planned in ``z = [theta2, x_com, y_com]``,
mapped to joint space through the CoM geometry, and the feedforward input
is recovered by computed torque with a box-constrained allocation at every
grid node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import constants as C
from .dynamics import (
    bias_forces,
    com_kinematics,
    force_matrix,
    link_coefficients,
    mass_matrix,
)
from .errors import SingularConfiguration
from .numerics import IntervalBox, TimeGrid, Trajectory, solve_allocation_qp

ACOS_TOL = 1e-9
DET_TOL = 1e-10


@dataclass(frozen=True)
class PlanSpec:
    t0: float = C.T0
    tf: float = C.TF
    step: float = C.STEP
    x_start: np.ndarray = field(default_factory=lambda: C.X0.copy())
    z_end: np.ndarray = field(default_factory=lambda: C.Z_FINAL.copy())
    w_u: np.ndarray = field(default_factory=lambda: C.W_U.copy())
    u_lower: np.ndarray = field(default_factory=lambda: C.U_LOWER.copy())
    u_upper: np.ndarray = field(default_factory=lambda: C.U_UPPER.copy())
    p_nominal: np.ndarray = field(default_factory=lambda: C.P_NOMINAL.copy())

    def __post_init__(self):
        if not self.tf > self.t0:
            raise ValueError("tf must exceed t0")
        if np.any(np.asarray(self.u_lower) > np.asarray(self.u_upper)):
            raise ValueError("u_lower must not exceed u_upper")
        if np.any(np.asarray(self.w_u) <= 0):
            raise ValueError("allocation weights must be positive")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.t0, self.tf, self.step)

    @property
    def u_box(self) -> IntervalBox:
        return IntervalBox(self.u_lower, self.u_upper)

    @property
    def z_start(self) -> np.ndarray:
        com = com_kinematics(self.x_start, self.p_nominal)
        return np.array([self.x_start[1], com[0], com[1]])


@dataclass(frozen=True)
class ReferenceBundle:
    x_hat: Trajectory           # (n, 6)
    u_hat: Trajectory           # (n, 4)
    y_hat: Trajectory           # (n, 4) CoM position and velocity
    theta_ddot_hat: Trajectory  # (n, 3)

    @property
    def grid(self) -> TimeGrid:
        return self.x_hat.grid


def cubic_blend(t: float, tf: float) -> float:
    return -2.0 * t**3 / tf**3 + 3.0 * t**2 / tf**2


def _blend_derivatives(t, tf):
    return (
        cubic_blend(t, tf),
        -6.0 * t**2 / tf**3 + 6.0 * t / tf**2,
        -12.0 * t / tf**3 + 6.0 / tf**2,
    )


def z_reference(spec: PlanSpec, t: float):
    """Planned ``(z, z', z'')`` at time ``t``."""
    s, ds, dds = _blend_derivatives(t - spec.t0, spec.tf - spec.t0)
    z0 = spec.z_start
    dz = np.asarray(spec.z_end, dtype=float) - z0
    return z0 + dz * s, dz * ds, dz * dds


def _checked_unit(v: float, what: str) -> float:
    if v > 1.0 + ACOS_TOL or v < -1.0 - ACOS_TOL:
        raise SingularConfiguration(f"{what} argument {v:.12g} outside [-1, 1]")
    return min(1.0, max(-1.0, v))


def _theta_from_z(z, p):
    k0, k1, k2, k3 = link_coefficients(p)
    th2, xc, yc = z
    r12 = np.sqrt(k1**2 + k2**2 + 2.0 * k1 * k2 * np.cos(th2))
    rho = np.hypot(xc, yc)
    if rho == 0.0:
        raise SingularConfiguration("CoM at the origin")
    cos_phi = ((k0 * k3) ** 2 - (k0 * r12) ** 2 - rho**2) / (-2.0 * k0 * r12 * rho)
    phi = np.arccos(_checked_unit(cos_phi, "arccos"))
    varphi = np.arcsin(_checked_unit(k2 * np.sin(th2 - np.pi) / r12, "arcsin"))
    psi = np.arcsin(_checked_unit(r12 * np.sin(phi) / k3, "arcsin"))
    beta = np.arctan2(yc, xc)
    th1 = beta - phi + varphi
    th3 = beta + psi - (th1 + th2)
    return np.array([th1, th2, th3])


def z_to_theta(z, zd, zdd, p):
    """Map planned CoM-space motion to joint angles, rates and accelerations."""
    z = np.asarray(z, dtype=float)
    zd = np.asarray(zd, dtype=float)
    zdd = np.asarray(zdd, dtype=float)
    k0, k1, k2, k3 = link_coefficients(p)
    th = _theta_from_z(z, p)
    xc, yc = z[1], z[2]
    s12 = np.sin(th[0] + th[1])
    c12 = np.cos(th[0] + th[1])
    s123 = np.sin(th.sum())
    c123 = np.cos(th.sum())

    B = np.array([[-yc, -k0 * k3 * s123], [xc, k0 * k3 * c123]])
    det = B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]
    if abs(det) < DET_TOL:
        raise SingularConfiguration(f"velocity map determinant {det:.3g}")
    knee = k0 * np.array([-k2 * s12 - k3 * s123, k2 * c12 + k3 * c123])

    v13 = np.linalg.solve(B, zd[1:] - zd[0] * knee)
    thd = np.array([v13[0], zd[0], v13[1]])

    w1, w2, w3 = thd
    a = (
        -np.array([
            [xc, k0 * (k2 * c12 + k3 * c123), k0 * k3 * c123],
            [yc, k0 * (k2 * s12 + k3 * s123), k0 * k3 * s123],
        ]) @ np.array([w1**2, w2**2, w3**2])
        - 2.0 * k0 * w1 * w2 * np.array([k2 * c12 + k3 * c123, k2 * s12 + k3 * s123])
        - 2.0 * k0 * k3 * (w1 + w2) * w3 * np.array([c123, s123])
        + zdd[0] * knee
    )
    a13 = np.linalg.solve(B, zdd[1:] - a)
    thdd = np.array([a13[0], zdd[0], a13[1]])
    return th, thd, thdd


def allocate_input(theta, theta_dot, theta_ddot, p, spec: PlanSpec) -> np.ndarray:
    """Computed-torque input via weighted min-norm allocation in the input box."""
    beq = mass_matrix(theta, p) @ theta_ddot + bias_forces(theta, theta_dot, p)
    return solve_allocation_qp(spec.w_u, force_matrix(theta, p), beq, spec.u_box)


def build_reference(spec: PlanSpec | None = None) -> ReferenceBundle:
    spec = spec or PlanSpec()
    grid = spec.grid
    p = spec.p_nominal
    n = len(grid)
    xs = np.empty((n, 6))
    us = np.empty((n, 4))
    ys = np.empty((n, 4))
    acc = np.empty((n, 3))
    for k, t in enumerate(grid.nodes):
        th, thd, thdd = z_to_theta(*z_reference(spec, t), p)
        xs[k, :3] = th
        xs[k, 3:] = thd
        acc[k] = thdd
        us[k] = allocate_input(th, thd, thdd, p, spec)
        ys[k] = com_kinematics(xs[k], p)
    return ReferenceBundle(
        Trajectory(grid, xs), Trajectory(grid, us), Trajectory(grid, ys), Trajectory(grid, acc)
    )
