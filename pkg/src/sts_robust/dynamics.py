"""Three-link planar model of orthosis plus user.

Angles are in radians; ``theta1`` is measured from the horizontal,
``theta2`` and ``theta3`` are relative joint angles. The compiled kernels
(prefixed ``_``) take plain float arrays and are reused by the simulation
loops in :mod:`sts_robust.lqr`, :mod:`sts_robust.reachability` and
:mod:`sts_robust.ilc`.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .constants import GRAVITY
from .errors import NonFiniteState


@njit(cache=True)
def _coefficients(p):
    m1, m2, m3 = p[0], p[1], p[2]
    l1, l2 = p[6], p[7]
    lc1, lc2, lc3 = p[9], p[10], p[11]
    k0 = 1.0 / (m1 + m2 + m3)
    k1 = lc1 * m1 + l1 * m2 + l1 * m3
    k2 = lc2 * m2 + l2 * m3
    k3 = lc3 * m3
    return k0, k1, k2, k3


@njit(cache=True)
def _mass_matrix(th, p):
    m1, m2, m3, i1, i2, i3 = p[0], p[1], p[2], p[3], p[4], p[5]
    l1, l2 = p[6], p[7]
    lc1, lc2, lc3 = p[9], p[10], p[11]
    c2 = np.cos(th[1])
    c3 = np.cos(th[2])
    c23 = np.cos(th[1] + th[2])
    M = np.empty((3, 3))
    M[0, 0] = (i1 + i2 + i3 + lc1 * lc1 * m1
               + m2 * (l1 * l1 + 2.0 * l1 * lc2 * c2 + lc2 * lc2)
               + m3 * (l1 * l1 + 2.0 * l1 * l2 * c2 + 2.0 * l1 * lc3 * c23
                       + l2 * l2 + 2.0 * l2 * lc3 * c3 + lc3 * lc3))
    M[0, 1] = (i2 + i3 + lc2 * m2 * (l1 * c2 + lc2)
               + m3 * (l1 * l2 * c2 + l1 * lc3 * c23 + l2 * l2
                       + 2.0 * l2 * lc3 * c3 + lc3 * lc3))
    M[0, 2] = i3 + lc3 * m3 * (l1 * c23 + l2 * c3 + lc3)
    M[1, 1] = i2 + i3 + lc2 * lc2 * m2 + m3 * (l2 * l2 + 2.0 * l2 * lc3 * c3 + lc3 * lc3)
    M[1, 2] = i3 + lc3 * m3 * (l2 * c3 + lc3)
    M[2, 2] = i3 + lc3 * lc3 * m3
    M[1, 0] = M[0, 1]
    M[2, 0] = M[0, 2]
    M[2, 1] = M[1, 2]
    return M


@njit(cache=True)
def _bias_forces(th, om, p, g):
    _, k1, k2, k3 = _coefficients(p)
    l1, l2 = p[6], p[7]
    s2 = np.sin(th[1])
    s3 = np.sin(th[2])
    s23 = np.sin(th[1] + th[2])
    c1 = np.cos(th[0])
    c12 = np.cos(th[0] + th[1])
    c123 = np.cos(th[0] + th[1] + th[2])
    w1 = om[0] ** 2
    w2 = (om[0] + om[1]) ** 2
    w3 = (om[0] + om[1] + om[2]) ** 2
    a = l1 * (k2 * s2 + k3 * s23)
    b = k3 * l2 * s3
    F = np.empty(3)
    F[0] = a * w1 + (-k2 * l1 * s2 + b) * w2 - k3 * (l1 * s23 + l2 * s3) * w3
    F[1] = a * w1 + b * w2 - b * w3
    F[2] = l1 * k3 * s23 * w1 + b * w2
    F[0] += g * (k1 * c1 + k2 * c12 + k3 * c123)
    F[1] += g * (k2 * c12 + k3 * c123)
    F[2] += g * (k3 * c123)
    return F


@njit(cache=True)
def _force_matrix(th, p):
    l1, l2, l3 = p[6], p[7], p[8]
    s1 = np.sin(th[0])
    s12 = np.sin(th[0] + th[1])
    s123 = np.sin(th[0] + th[1] + th[2])
    c1 = np.cos(th[0])
    c12 = np.cos(th[0] + th[1])
    c123 = np.cos(th[0] + th[1] + th[2])
    A = np.empty((3, 4))
    A[0, 0] = 0.0
    A[1, 0] = 0.0
    A[2, 0] = 1.0
    A[0, 1] = -1.0
    A[1, 1] = -1.0
    A[2, 1] = -1.0
    A[0, 2] = -l1 * s1 - l2 * s12 - l3 * s123
    A[1, 2] = -l2 * s12 - l3 * s123
    A[2, 2] = -l3 * s123
    A[0, 3] = l1 * c1 + l2 * c12 + l3 * c123
    A[1, 3] = l2 * c12 + l3 * c123
    A[2, 3] = l3 * c123
    return A


@njit(cache=True)
def _solve_spd3(M, b):
    # 3x3 Cholesky; M is symmetric positive definite for physical params
    l00 = np.sqrt(M[0, 0])
    l10 = M[1, 0] / l00
    l20 = M[2, 0] / l00
    l11 = np.sqrt(M[1, 1] - l10 * l10)
    l21 = (M[2, 1] - l20 * l10) / l11
    l22 = np.sqrt(M[2, 2] - l20 * l20 - l21 * l21)
    y0 = b[0] / l00
    y1 = (b[1] - l10 * y0) / l11
    y2 = (b[2] - l20 * y0 - l21 * y1) / l22
    x = np.empty(3)
    x[2] = y2 / l22
    x[1] = (y1 - l21 * x[2]) / l11
    x[0] = (y0 - l10 * x[1] - l20 * x[2]) / l00
    return x


@njit(cache=True)
def _matvec(A, v):
    # explicit loop: far cheaper than a BLAS call for these tiny operands
    out = np.zeros(A.shape[0])
    for i in range(A.shape[0]):
        s = 0.0
        for j in range(A.shape[1]):
            s += A[i, j] * v[j]
        out[i] = s
    return out


@njit(cache=True)
def _state_derivative(x, p, u, g):
    th = x[:3]
    om = x[3:]
    rhs = _matvec(_force_matrix(th, p), u) - _bias_forces(th, om, p, g)
    acc = _solve_spd3(_mass_matrix(th, p), rhs)
    out = np.empty(6)
    out[:3] = om
    out[3:] = acc
    return out


@njit(cache=True)
def _com_kinematics(x, p):
    k0, k1, k2, k3 = _coefficients(p)
    s1 = np.sin(x[0])
    s12 = np.sin(x[0] + x[1])
    s123 = np.sin(x[0] + x[1] + x[2])
    c1 = np.cos(x[0])
    c12 = np.cos(x[0] + x[1])
    c123 = np.cos(x[0] + x[1] + x[2])
    xc = k0 * (k1 * c1 + k2 * c12 + k3 * c123)
    yc = k0 * (k1 * s1 + k2 * s12 + k3 * s123)
    out = np.empty(4)
    out[0] = xc
    out[1] = yc
    out[2] = -x[3] * yc - x[4] * k0 * (k2 * s12 + k3 * s123) - x[5] * k0 * k3 * s123
    out[3] = x[3] * xc + x[4] * k0 * (k2 * c12 + k3 * c123) + x[5] * k0 * k3 * c123
    return out


@njit(cache=True)
def _user_output(x, p):
    c = _com_kinematics(x, p)
    out = np.empty(6)
    out[0] = x[2]
    out[1] = c[0]
    out[2] = c[1]
    out[3] = x[5]
    out[4] = c[2]
    out[5] = c[3]
    return out


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def validate_params(p) -> np.ndarray:
    p = _f64(p)
    if p.shape != (12,):
        raise ValueError(f"parameter vector must have 12 entries, got {p.shape}")
    if np.any(p <= 0):
        raise ValueError("all parameters must be positive")
    if np.any(p[9:] > p[6:9]):
        raise ValueError("CoM offsets must not exceed link lengths")
    return p


def link_coefficients(p) -> tuple[float, float, float, float]:
    """``(k0, k1, k2, k3)``: inverse total mass and the three first mass moments."""
    return tuple(float(v) for v in _coefficients(_f64(p)))


def mass_matrix(theta, p) -> np.ndarray:
    return _mass_matrix(_f64(theta), _f64(p))


def bias_forces(theta, omega, p, g: float = GRAVITY) -> np.ndarray:
    """Coriolis/centrifugal plus gravity terms ``F`` in ``M theta'' + F = A u``."""
    return _bias_forces(_f64(theta), _f64(omega), _f64(p), float(g))


def force_matrix(theta, p) -> np.ndarray:
    return _force_matrix(_f64(theta), _f64(p))


def state_derivative(t, x, p, u, g: float = GRAVITY) -> np.ndarray:
    """``[omega; M^-1 (A u - F)]``. ``t`` is accepted for ODE-solver signatures."""
    dx = _state_derivative(_f64(x), _f64(p), _f64(u), float(g))
    if not np.all(np.isfinite(dx)):
        raise NonFiniteState("state derivative is not finite")
    return dx


def com_kinematics(x, p) -> np.ndarray:
    """``[x_com, y_com, vx_com, vy_com]`` of the whole body."""
    return _com_kinematics(_f64(x), _f64(p))


def user_output(x, p) -> np.ndarray:
    """``[theta3, x_com, y_com, omega3, vx_com, vy_com]`` as seen by the user."""
    return _user_output(_f64(x), _f64(p))


def kinetic_energy(x, p) -> float:
    om = _f64(x)[3:]
    return float(0.5 * om @ mass_matrix(_f64(x)[:3], p) @ om)
