"""Experiment configuration with paper-scale and desk-scale presets.

The file format is JSON with one section per pipeline stage. Angles in the
file are degrees (and degrees per second); conversion to radians happens in
the ``to_*`` builders, never inside the numerical modules.
"""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import constants as C
from .errors import StsError

PRESETS = ("paper", "desk")
PARAM_SETS = ("nominal", "lower", "upper", "light", "heavy")


class ConfigError(StsError, ValueError):
    exit_code = 2


def _list(a) -> list:
    return np.asarray(a, dtype=float).tolist()


@dataclass
class PlanConfig:
    t0: float = C.T0
    tf: float = C.TF
    step: float = C.STEP
    x_start_deg: list = field(default_factory=lambda: _list(C.X0 / C.DEG))
    theta2_end_deg: float = float(C.Z_FINAL[0] / C.DEG)
    com_end: list = field(default_factory=lambda: _list(C.Z_FINAL[1:]))
    w_u: list = field(default_factory=lambda: _list(C.W_U))
    u_lower: list = field(default_factory=lambda: _list(C.U_LOWER))
    u_upper: list = field(default_factory=lambda: _list(C.U_UPPER))


@dataclass
class ParamConfig:
    nominal: list = field(default_factory=lambda: _list(C.P_NOMINAL))
    lower: list = field(default_factory=lambda: _list(C.P_LOWER))
    upper: list = field(default_factory=lambda: _list(C.P_UPPER))
    light: list = field(default_factory=lambda: _list(C.P_LIGHT))
    heavy: list = field(default_factory=lambda: _list(C.P_HEAVY))


@dataclass
class LqrConfig:
    q: list = field(default_factory=lambda: _list(C.Q_STAR))
    r: list = field(default_factory=lambda: _list(C.R_STAR))
    s: list = field(default_factory=lambda: _list(C.S_STAR))
    pool_size: int = 300


@dataclass
class ReachConfig:
    n_samples: int = 500
    n_fresh: int = 500
    T_P: list = field(default_factory=lambda: list(C.T_P))
    baseline_q: float = 50.0
    baseline_r: float = 0.005
    baseline_s: float = 50.0
    containment_tol: float = 1e-9


@dataclass
class IlcConfig:
    gains: str = "paper"            # "paper" or a path to a gains JSON
    p_true: str = "nominal"         # one of PARAM_SETS
    recall: str = "perfect"         # "perfect" or "perturbed"
    recall_decay: float = C.RECALL_DECAY
    recall_amplitude: float = C.RECALL_AMPLITUDE
    n_iterations: int = 30
    warm_start: str | None = None   # path to an iteration CSV whose mu seeds mu^0
    feedback_past_abort: bool = True
    x_lower_deg: list = field(default_factory=lambda: _list(C.X_LOWER_DEG))
    x_upper_deg: list = field(default_factory=lambda: _list(C.X_UPPER_DEG))


@dataclass
class DfoSection:
    sigma: float = 0.01
    rho: float = 0.04
    B: int = 30
    B_t: int = 10
    iterations: int = 10_000
    start: str = "paper"            # "paper", "zero" or a path to a gains JSON


@dataclass
class ExperimentConfig:
    plan: PlanConfig = field(default_factory=PlanConfig)
    params: ParamConfig = field(default_factory=ParamConfig)
    lqr: LqrConfig = field(default_factory=LqrConfig)
    reach: ReachConfig = field(default_factory=ReachConfig)
    ilc: IlcConfig = field(default_factory=IlcConfig)
    dfo: DfoSection = field(default_factory=DfoSection)
    preset: str = "paper"
    seed: int = 0
    workers: int = 1
    out: str = "out"

    # -- construction ------------------------------------------------------

    @classmethod
    def preset_config(cls, name: str) -> "ExperimentConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}, expected one of {PRESETS}")
        cfg = cls(preset=name)
        if name == "desk":
            cfg.lqr.pool_size = 10
            cfg.reach.n_samples = 50
            cfg.dfo.iterations = 200
            cfg.dfo.B = 3
            cfg.dfo.B_t = 2
        return cfg

    @classmethod
    def from_dict(cls, data: dict, preset: str | None = None) -> "ExperimentConfig":
        """Overlay ``data`` on a preset (``data['preset']``, else ``preset``,
        else paper). Unknown keys are rejected."""
        data = copy.deepcopy(data)
        name = preset or data.get("preset") or "paper"
        cfg = cls.preset_config(name)
        for key, value in data.items():
            if key == "preset":
                continue
            if not hasattr(cfg, key):
                raise ConfigError(f"unknown config key {key!r}")
            current = getattr(cfg, key)
            if dataclasses.is_dataclass(current):
                if not isinstance(value, dict):
                    raise ConfigError(f"section {key!r} must be a mapping")
                for sub, v in value.items():
                    if not hasattr(current, sub):
                        raise ConfigError(f"unknown config key {key}.{sub}")
                    setattr(current, sub, v)
            else:
                setattr(cfg, key, value)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, preset: str | None = None) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        return cls.from_dict(data, preset)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        def vec(name, v, n):
            a = np.asarray(v, dtype=float)
            if a.shape != (n,) or not np.all(np.isfinite(a)):
                raise ConfigError(f"{name} must be {n} finite numbers")

        try:
            vec("plan.x_start_deg", self.plan.x_start_deg, 6)
            vec("plan.com_end", self.plan.com_end, 2)
            for name in ("w_u", "u_lower", "u_upper"):
                vec(f"plan.{name}", getattr(self.plan, name), 4)
            for name in PARAM_SETS:
                vec(f"params.{name}", getattr(self.params, name), 12)
            vec("lqr.q", self.lqr.q, 6)
            vec("lqr.r", self.lqr.r, 4)
            vec("lqr.s", self.lqr.s, 6)
            vec("ilc.x_lower_deg", self.ilc.x_lower_deg, 6)
            vec("ilc.x_upper_deg", self.ilc.x_upper_deg, 6)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.ilc.p_true not in PARAM_SETS:
            raise ConfigError(f"ilc.p_true must be one of {PARAM_SETS}")
        if self.ilc.recall not in ("perfect", "perturbed"):
            raise ConfigError("ilc.recall must be 'perfect' or 'perturbed'")
        checks = [
            (self.plan.step > 0 and self.plan.tf > self.plan.t0, "plan grid"),
            (self.lqr.pool_size >= 1, "lqr.pool_size >= 1"),
            (self.reach.n_samples >= 2, "reach.n_samples >= 2"),
            (self.reach.n_fresh >= 0, "reach.n_fresh >= 0"),
            (self.ilc.n_iterations >= 1, "ilc.n_iterations >= 1"),
            (0 < self.dfo.B_t <= self.dfo.B, "0 < dfo.B_t <= dfo.B"),
            (self.dfo.sigma > 0 and self.dfo.rho > 0, "dfo.sigma, dfo.rho > 0"),
            (self.dfo.iterations >= 0, "dfo.iterations >= 0"),
            (int(self.workers) >= 1, "workers >= 1"),
            (isinstance(self.seed, int) and self.seed >= 0, "seed must be a nonnegative integer"),
        ]
        for ok, what in checks:
            if not ok:
                raise ConfigError(f"invalid config: {what}")

    # -- builders ----------------------------------------------------------

    def param(self, name: str) -> np.ndarray:
        if name not in PARAM_SETS:
            raise ConfigError(f"unknown parameter set {name!r}")
        return np.asarray(getattr(self.params, name), dtype=float)

    def to_plan_spec(self):
        from .planner import PlanSpec

        z_end = np.r_[self.plan.theta2_end_deg * C.DEG, self.plan.com_end]
        return PlanSpec(
            t0=float(self.plan.t0), tf=float(self.plan.tf), step=float(self.plan.step),
            x_start=np.asarray(self.plan.x_start_deg, dtype=float) * C.DEG, z_end=z_end,
            w_u=np.asarray(self.plan.w_u, dtype=float),
            u_lower=np.asarray(self.plan.u_lower, dtype=float),
            u_upper=np.asarray(self.plan.u_upper, dtype=float),
            p_nominal=self.param("nominal"),
        )

    def lqr_weights(self):
        from .lqr import LqrWeights

        return LqrWeights(np.asarray(self.lqr.q), np.asarray(self.lqr.r), np.asarray(self.lqr.s))

    def baseline_weights(self):
        from .lqr import LqrWeights

        r = self.reach
        return LqrWeights(np.full(6, r.baseline_q), np.full(4, r.baseline_r), np.full(6, r.baseline_s))

    def reach_settings(self):
        from .numerics import IntervalBox
        from .reachability import ReachSettings

        return ReachSettings(
            p_box=IntervalBox(self.param("lower"), self.param("upper")),
            p_nominal=self.param("nominal"), n_samples=int(self.reach.n_samples),
            T_P=tuple(float(t) for t in self.reach.T_P), workers=int(self.workers),
        )

    def dfo_config(self):
        from .tuner import DfoConfig

        d = self.dfo
        return DfoConfig(sigma=float(d.sigma), rho=float(d.rho), B=int(d.B), B_t=int(d.B_t),
                         iterations=int(d.iterations), seed=int(self.seed), workers=int(self.workers))
