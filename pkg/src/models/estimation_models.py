"""
Estimation Data Models - configs, inter-area messages, traces và reports
Mục đích: Everything the pipeline passes between stages or writes to disk
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from dataclasses_json import config, dataclass_json

from .measurement_models import BadDataSpec, NoiseSpec, PLAN_NAMES
from ..utils.config import AUGMENTATION_MODES, THRESHOLD_MODES, EstimatorDefaults
from ..utils.exceptions import ConfigError


FLOAT_BYTES = 8

BOUNDARY_RULES = ("owned", "touched")


# =================== EXPERIMENT CONFIG ===================

@dataclass_json
@dataclass
class ExperimentConfig:
    """One D-RBSE scenario: case, partition, measurements and estimator parameters"""
    case_path: str = ""
    partition_path: Optional[str] = None
    plan: str = "full"
    pmu_buses: List[int] = field(default_factory=list)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    bad_data: BadDataSpec = field(default_factory=BadDataSpec)
    lambda_: float = field(default=1.34, metadata=config(field_name="lambda"))
    rho_f: float = 1.0
    rho_s: float = 0.1
    epsilon: float = 5.0e-4
    max_iter: int = 500
    augmentation: str = "identity"
    boundary_rule: str = "owned"
    threshold_mode: str = "sigma"
    strict_zero_injection: bool = False
    seed: int = 0
    seeds: List[int] = field(default_factory=list)
    schedule_seed: Optional[int] = None
    force: bool = False

    @classmethod
    def from_defaults(cls, defaults: EstimatorDefaults, **overrides: Any) -> "ExperimentConfig":
        base = cls(
            lambda_=defaults.lambda_,
            rho_f=defaults.rho_f,
            rho_s=defaults.rho_s,
            epsilon=defaults.epsilon,
            max_iter=defaults.max_iter,
            augmentation=defaults.augmentation,
        )
        for key, value in overrides.items():
            setattr(base, key, value)
        return base

    def validate(self) -> "ExperimentConfig":
        if not self.lambda_ > 0:
            raise ConfigError("lambda must be positive")
        if not self.rho_f > 0 or not self.rho_s > 0:
            raise ConfigError("rho_f and rho_s must be positive")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.plan not in PLAN_NAMES:
            raise ConfigError(f"unknown measurement plan {self.plan!r}; expected one of {PLAN_NAMES}")
        if self.augmentation not in AUGMENTATION_MODES:
            raise ConfigError(f"augmentation must be one of {AUGMENTATION_MODES}")
        if self.boundary_rule not in BOUNDARY_RULES:
            raise ConfigError(f"boundary_rule must be one of {BOUNDARY_RULES}")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ConfigError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        return self


# =================== INTER-AREA MESSAGES ===================

@dataclass(frozen=True)
class TieLineMessage:
    """Stage-1 payload: current (K, L) copies of every tie-line shared with the receiver"""
    sender: int
    receiver: int
    values: Dict[int, Tuple[float, float]]

    kind = "tie_line"

    @property
    def float_count(self) -> int:
        return 2 * len(self.values)


@dataclass(frozen=True)
class BoundaryBusMessage:
    """Stage-2 payload: sender's (alpha, theta) copies of buses shared with the receiver"""
    sender: int
    receiver: int
    values: Dict[int, Tuple[float, ...]]

    kind = "boundary_bus"

    @property
    def float_count(self) -> int:
        return sum(len(v) for v in self.values.values())


# =================== ADMM TRACES ===================

@dataclass
class TraceRow:
    """One ADMM iteration: delta = max(r_inf, d_inf), objectives J_a per area"""
    iteration: int
    delta: float
    r_inf: float
    d_inf: float
    objectives: Dict[int, float] = field(default_factory=dict)

    def as_record(self, stage: int) -> Dict[str, Any]:
        record: Dict[str, Any] = {
            "stage": stage,
            "iteration": self.iteration,
            "delta": self.delta,
            "r_inf": self.r_inf,
            "d_inf": self.d_inf,
        }
        for area in sorted(self.objectives):
            record[f"J_{area}"] = self.objectives[area]
        return record


@dataclass
class StageRun:
    """Outcome of one distributed linear stage"""
    stage: int
    converged: bool
    iterations: int
    trace: List[TraceRow]
    states: Dict[int, Any]

    @property
    def final_delta(self) -> float:
        return self.trace[-1].delta if self.trace else 0.0


# =================== ESTIMATES ===================

@dataclass
class CentralEstimate:
    """Result of a centralized estimator (robust bilinear, WLS or WLS + LNRT)"""
    method: str
    V: np.ndarray
    theta: np.ndarray
    converged: bool
    iterations: int
    o_f: Optional[np.ndarray] = None
    o_s: Optional[np.ndarray] = None
    removed_measurements: List[str] = field(default_factory=list)


@dataclass
class EstimationReport:
    """Everything `estimate` writes to report.json"""
    config: Dict[str, Any]
    bus_ids: List[int]
    V: Optional[np.ndarray]
    theta: Optional[np.ndarray]
    v_true: np.ndarray
    theta_true: np.ndarray
    s_v: Optional[float]
    s_theta: Optional[float]
    stages: List[Dict[str, Any]]
    messages: List[Dict[str, Any]]
    outliers: List[Dict[str, Any]]
    converged: bool
    max_copy_disagreement: Optional[float] = None
    transform_messages: int = 0
    wall_time: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        per_bus = []
        for pos, bus_id in enumerate(self.bus_ids):
            per_bus.append({
                "id": bus_id,
                "v_est": None if self.V is None else float(self.V[pos]),
                "theta_est": None if self.theta is None else float(self.theta[pos]),
                "v_true": float(self.v_true[pos]),
                "theta_true": float(self.theta_true[pos]),
            })
        document: Dict[str, Any] = {
            "config": self.config,
            "per_bus": per_bus,
            "metrics": {"s_v": self.s_v, "s_theta": self.s_theta},
            "stages": self.stages,
            "messages": self.messages,
            "outliers": self.outliers,
            "converged": self.converged,
            "max_copy_disagreement": self.max_copy_disagreement,
            "transform_messages": self.transform_messages,
        }
        if self.wall_time is not None:
            document["wall_time"] = self.wall_time
        return document
