"""
Measurement Data Models
Mục đích: Typed measurements z (with sigma, true value, bad-data flag), zero-injection
constraints z_e, và noise / bad-data specifications
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from dataclasses_json import config, dataclass_json

from ..utils.exceptions import ConfigError


# =================== ENUMS ===================

class MeasurementKind(Enum):
    P_INJECTION = "p_injection"
    Q_INJECTION = "q_injection"
    P_FLOW = "p_flow"
    Q_FLOW = "q_flow"
    V_SQUARED = "v_squared"
    PMU_ANGLE = "pmu_angle"

    @property
    def is_flow(self) -> bool:
        return self in (MeasurementKind.P_FLOW, MeasurementKind.Q_FLOW)

    @property
    def is_injection(self) -> bool:
        return self in (MeasurementKind.P_INJECTION, MeasurementKind.Q_INJECTION)

    @property
    def is_power(self) -> bool:
        return self.is_flow or self.is_injection

    @property
    def is_stage_one(self) -> bool:
        """Linear in y; PMU angles bypass the first stage and enter u directly"""
        return self is not MeasurementKind.PMU_ANGLE


class Side(Enum):
    FROM = "from"
    TO = "to"


# =================== MEASUREMENT ENTITIES ===================

@dataclass(frozen=True)
class MeasurementPoint:
    """What is metered and where: kind + bus, or kind + branch + metered end"""
    kind: MeasurementKind
    bus: Optional[int] = None
    branch: Optional[int] = None
    side: Side = Side.FROM

    def label(self) -> str:
        if self.kind.is_flow:
            return f"{self.kind.value}:#{self.branch}:{self.side.value}"
        return f"{self.kind.value}:{self.bus}"


@dataclass_json
@dataclass(frozen=True)
class Measurement:
    """
    One metered quantity. `value` is what the estimator consumes (V^2 for voltage meters),
    `sigma` is the meter's standard deviation (of V for voltage meters).
    """
    kind: MeasurementKind
    value: float
    sigma: float
    true_value: float
    bus: Optional[int] = None
    branch: Optional[int] = None
    side: Side = Side.FROM
    from_bus: Optional[int] = field(default=None, metadata=config(field_name="from"))
    to_bus: Optional[int] = field(default=None, metadata=config(field_name="to"))
    is_bad: bool = False

    @property
    def point(self) -> MeasurementPoint:
        return MeasurementPoint(self.kind, self.bus, self.branch, self.side)

    @property
    def metered_bus(self) -> int:
        """Bus whose home area owns this measurement"""
        if self.kind.is_flow:
            return self.from_bus if self.side is Side.FROM else self.to_bus
        return self.bus

    def label(self) -> str:
        if self.kind.is_flow:
            ends = f"{self.from_bus}-{self.to_bus}"
            if self.side is Side.TO:
                ends += ":to"
            return f"{self.kind.value}:{ends}"
        return f"{self.kind.value}:{self.bus}"


@dataclass_json
@dataclass(frozen=True)
class ZeroInjection:
    """Equality-constraint rows of one zero-injection bus (P and Q targets)"""
    bus: int
    p_target: float = 0.0
    q_target: float = 0.0


@dataclass_json
@dataclass(frozen=True)
class MeasurementSet:
    """Measurements z plus zero-injection constraints z_e"""
    measurements: List[Measurement]
    zero_injections: List[ZeroInjection] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.measurements)

    @property
    def zero_injection_buses(self) -> List[int]:
        return [zi.bus for zi in self.zero_injections]

    def index_of(self, point: MeasurementPoint) -> int:
        for pos, meas in enumerate(self.measurements):
            if meas.point == point:
                return pos
        raise KeyError(point.label())

    def bad_indices(self) -> List[int]:
        return [pos for pos, meas in enumerate(self.measurements) if meas.is_bad]

    def stage_one(self) -> List[Measurement]:
        return [m for m in self.measurements if m.kind.is_stage_one]

    def pmu_angles(self) -> List[Measurement]:
        return [m for m in self.measurements if m.kind is MeasurementKind.PMU_ANGLE]

    def without(self, position: int) -> "MeasurementSet":
        kept = self.measurements[:position] + self.measurements[position + 1:]
        return MeasurementSet(measurements=kept, zero_injections=list(self.zero_injections))


@dataclass(frozen=True)
class AreaMeasurements:
    """Sub-vector z_a (global positions kept) and the area's zero-injection rows"""
    area: int
    positions: Tuple[int, ...]
    measurements: Tuple[Measurement, ...]
    zero_injections: Tuple[ZeroInjection, ...]


# =================== SPECIFICATIONS ===================

@dataclass_json
@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian meter noise: 0.004 p.u. power, 0.002 p.u. voltage magnitude"""
    sigma_power: float = 0.004
    sigma_vmag: float = 0.002
    sigma_angle: float = 0.002
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_power", "sigma_vmag", "sigma_angle"):
            if getattr(self, name) < 0:
                raise ConfigError(f"NoiseSpec.{name} must be non-negative")

    def sigma_for(self, kind: MeasurementKind) -> float:
        if kind is MeasurementKind.V_SQUARED:
            return self.sigma_vmag
        if kind is MeasurementKind.PMU_ANGLE:
            return self.sigma_angle
        return self.sigma_power


@dataclass_json
@dataclass(frozen=True)
class BadDataSpec:
    """
    Gross errors: N(0, (magnitude_factor * sigma)^2) added to a uniform random
    `fraction` of the measurements, or to the explicit `targets`
    (labels such as "p_injection:5", "v_squared:14", "p_flow:5-6", "q_flow:5-6:to").
    """
    fraction: float = 0.0
    targets: List[str] = field(default_factory=list)
    magnitude_factor: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigError(f"BadDataSpec.fraction must lie in [0, 1], got {self.fraction}")
        if not self.magnitude_factor > 0:
            raise ConfigError("BadDataSpec.magnitude_factor must be positive")

    @property
    def is_empty(self) -> bool:
        return self.fraction == 0.0 and not self.targets


PLAN_NAMES = ("full", "full_both_ends", "flows_only")


def plan_summary(points: List[MeasurementPoint]) -> Dict[str, int]:
    """Counts per kind, for logging"""
    summary: Dict[str, int] = {}
    for point in points:
        summary[point.kind.value] = summary.get(point.kind.value, 0) + 1
    return summary
