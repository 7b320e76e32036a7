"""
Bilinear Core - vector layouts, design matrices B/E/C và the nonlinear transform
Mục đích: Numerical kernels shared by the centralized oracle and every area worker

Variables:
- y (stage 1): U_i = V_i^2, K_k = V_f V_t cos(theta_f - theta_t), L_k = V_f V_t sin(theta_f - theta_t)
- u (transform output): alpha_i = ln U_i, alpha_k = ln(K_k^2 + L_k^2), theta_k = atan2(L_k, K_k)
- x (stage 2): alpha_i = 2 ln V_i, theta_i (reference angle excluded)

Branch orientation is the case's from -> to for every layout.
"""

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor
from scipy.sparse import csr_matrix

from ..models.measurement_models import Measurement, MeasurementKind, NoiseSpec, Side, ZeroInjection
from ..models.network_models import AreaView, Branch, NetworkCase
from ..utils.config import THRESHOLD_MODES
from ..utils.exceptions import ConfigError, ConstructionError, TransformDomainError


Variable = Tuple[str, int]


# =================== LAYOUTS ===================

@dataclass(frozen=True)
class StageOneLayout:
    """y = [U over buses, (K, L) per branch]"""
    buses: Tuple[int, ...]
    branches: Tuple[int, ...]
    ends: Tuple[Tuple[int, int], ...]

    @classmethod
    def for_case(cls, case: NetworkCase) -> "StageOneLayout":
        return cls._build(case, case.bus_ids, range(case.n_branches))

    @classmethod
    def for_area(cls, case: NetworkCase, view: AreaView) -> "StageOneLayout":
        return cls._build(case, view.buses, view.stage1_branches)

    @classmethod
    def _build(cls, case: NetworkCase, buses: Sequence[int], branches: Sequence[int]) -> "StageOneLayout":
        ends = tuple((case.branches[k].from_bus, case.branches[k].to_bus) for k in branches)
        return cls(tuple(buses), tuple(branches), ends)

    @cached_property
    def bus_index(self) -> Dict[int, int]:
        return {bus: pos for pos, bus in enumerate(self.buses)}

    @cached_property
    def branch_index(self) -> Dict[int, Tuple[int, int]]:
        n = len(self.buses)
        return {k: (n + 2 * j, n + 2 * j + 1) for j, k in enumerate(self.branches)}

    @property
    def dimension(self) -> int:
        return len(self.buses) + 2 * len(self.branches)

    def column(self, variable: Variable) -> int:
        name, key = variable
        try:
            if name == "U":
                return self.bus_index[key]
            k_col, l_col = self.branch_index[key]
        except KeyError:
            raise ConstructionError(f"variable {name}[{key}] is outside this stage-1 scope")
        return k_col if name == "K" else l_col

    def branch_slots(self, branches: Sequence[int]) -> np.ndarray:
        """Columns of (K, L) for the given branches, interleaved"""
        return np.array([col for k in branches for col in self.branch_index[k]], dtype=int)

    def flat_start(self) -> np.ndarray:
        y = np.zeros(self.dimension)
        y[: len(self.buses)] = 1.0
        y[len(self.buses)::2] = 1.0
        return y


@dataclass(frozen=True)
class IntermediateLayout:
    """u = [alpha over buses, (alpha_k, theta_k) per branch, directly metered theta_i]"""
    buses: Tuple[int, ...]
    branches: Tuple[int, ...]
    ends: Tuple[Tuple[int, int], ...]
    pmu_buses: Tuple[int, ...] = ()

    @classmethod
    def for_case(cls, case: NetworkCase, pmu_buses: Sequence[int] = ()) -> "IntermediateLayout":
        ends = tuple((b.from_bus, b.to_bus) for b in case.branches)
        return cls(tuple(case.bus_ids), tuple(range(case.n_branches)), ends, tuple(pmu_buses))

    @classmethod
    def for_area(cls, case: NetworkCase, view: AreaView, pmu_buses: Sequence[int] = ()) -> "IntermediateLayout":
        """Owned elements only: home buses, internal branches, owned tie-lines"""
        branches = view.owned_branches
        ends = tuple((case.branches[k].from_bus, case.branches[k].to_bus) for k in branches)
        return cls(view.buses, branches, ends, tuple(pmu_buses))

    @cached_property
    def bus_index(self) -> Dict[int, int]:
        return {bus: pos for pos, bus in enumerate(self.buses)}

    @cached_property
    def branch_index(self) -> Dict[int, Tuple[int, int]]:
        n = len(self.buses)
        return {k: (n + 2 * j, n + 2 * j + 1) for j, k in enumerate(self.branches)}

    @cached_property
    def pmu_index(self) -> Dict[int, int]:
        offset = len(self.buses) + 2 * len(self.branches)
        return {bus: offset + j for j, bus in enumerate(self.pmu_buses)}

    @property
    def dimension(self) -> int:
        return len(self.buses) + 2 * len(self.branches) + len(self.pmu_buses)

    def row_labels(self) -> List[str]:
        labels = [f"alpha:{bus}" for bus in self.buses]
        for (f, t) in self.ends:
            labels += [f"alpha_branch:{f}-{t}", f"theta_branch:{f}-{t}"]
        labels += [f"pmu_angle:{bus}" for bus in self.pmu_buses]
        return labels


@dataclass(frozen=True)
class StateLayout:
    """x = [alpha over buses, theta over non-reference buses]"""
    buses: Tuple[int, ...]
    reference_bus: int

    @classmethod
    def for_case(cls, case: NetworkCase) -> "StateLayout":
        return cls(tuple(case.bus_ids), case.reference_bus)

    @classmethod
    def for_area(cls, case: NetworkCase, view: AreaView) -> "StateLayout":
        return cls(view.stage2_buses, case.reference_bus)

    @cached_property
    def alpha_index(self) -> Dict[int, int]:
        return {bus: pos for pos, bus in enumerate(self.buses)}

    @cached_property
    def theta_index(self) -> Dict[int, int]:
        offset = len(self.buses)
        angles = [bus for bus in self.buses if bus != self.reference_bus]
        return {bus: offset + j for j, bus in enumerate(angles)}

    @property
    def dimension(self) -> int:
        return len(self.buses) + len(self.theta_index)

    def alpha_col(self, bus: int) -> int:
        try:
            return self.alpha_index[bus]
        except KeyError:
            raise ConstructionError(f"bus {bus} is outside this stage-2 scope")

    def theta_col(self, bus: int) -> Optional[int]:
        """None for the reference bus"""
        if bus == self.reference_bus:
            return None
        self.alpha_col(bus)
        return self.theta_index[bus]

    def bus_slots(self, bus: int) -> List[int]:
        cols = [self.alpha_col(bus)]
        theta = self.theta_col(bus)
        if theta is not None:
            cols.append(theta)
        return cols

    def flat_start(self) -> np.ndarray:
        return np.zeros(self.dimension)


# =================== DESIGN MATRICES ===================

@dataclass(frozen=True)
class DesignMatrix:
    """Sparse coefficient matrix with one label per row"""
    rows: Tuple[str, ...]
    matrix: csr_matrix

    @classmethod
    def from_rows(cls, labels: List[str], coefficients: List[Dict[int, float]], n_cols: int) -> "DesignMatrix":
        rows, cols, vals = [], [], []
        for r, coeffs in enumerate(coefficients):
            for c, v in coeffs.items():
                rows.append(r)
                cols.append(c)
                vals.append(v)
        matrix = csr_matrix((vals, (rows, cols)), shape=(len(labels), n_cols))
        return cls(tuple(labels), matrix)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape


@dataclass(frozen=True)
class StageOneSystem:
    """B y = z (measurements) and E y = z_e (zero-injection constraints)"""
    B: DesignMatrix
    E: DesignMatrix
    z: np.ndarray
    z_e: np.ndarray


def _branch_terms(branch: Branch, k: int, at_bus: int, power: str, with_charging: bool) -> Dict[Variable, float]:
    """Coefficients of one branch's terminal flow at `at_bus` (tap on the from side)"""
    g, b, tau = branch.g, branch.b, branch.tap
    half_charging = branch.b_ch / 2.0 if with_charging else 0.0
    if at_bus == branch.from_bus:
        if power == "p":
            return {("U", at_bus): g / tau ** 2, ("K", k): -g / tau, ("L", k): -b / tau}
        return {("U", at_bus): -(b + half_charging) / tau ** 2, ("K", k): b / tau, ("L", k): -g / tau}
    if power == "p":
        return {("U", at_bus): g, ("K", k): -g / tau, ("L", k): b / tau}
    return {("U", at_bus): -(b + half_charging), ("K", k): b / tau, ("L", k): g / tau}


def _accumulate(target: Dict[Variable, float], terms: Dict[Variable, float]) -> None:
    for var, value in terms.items():
        target[var] = target.get(var, 0.0) + value


def injection_coefficients(case: NetworkCase, bus_id: int, power: str) -> Dict[Variable, float]:
    """Net injection at a bus: aggregated shunt plus series part of every incident branch"""
    bus = case.bus(bus_id)
    coeffs: Dict[Variable, float] = {("U", bus_id): bus.g_sh if power == "p" else -bus.b_sh}
    for k in case.incident_branches[bus_id]:
        _accumulate(coeffs, _branch_terms(case.branches[k], k, bus_id, power, with_charging=False))
    return coeffs


def stage1_coefficients(case: NetworkCase, meas: Measurement) -> Dict[Variable, float]:
    kind = meas.kind
    if kind is MeasurementKind.V_SQUARED:
        return {("U", meas.bus): 1.0}
    if kind.is_injection:
        return injection_coefficients(case, meas.bus, "p" if kind is MeasurementKind.P_INJECTION else "q")
    if kind.is_flow:
        branch = case.branches[meas.branch]
        at_bus = branch.from_bus if meas.side is Side.FROM else branch.to_bus
        power = "p" if kind is MeasurementKind.P_FLOW else "q"
        return _branch_terms(branch, meas.branch, at_bus, power, with_charging=True)
    raise ConstructionError(f"{meas.label()} is not linear in y")


def _to_columns(layout: StageOneLayout, coeffs: Dict[Variable, float], label: str) -> Dict[int, float]:
    try:
        return {layout.column(var): value for var, value in coeffs.items()}
    except ConstructionError as e:
        raise ConstructionError(f"{label}: {e}")


def build_stage1_matrices(
    case: NetworkCase,
    layout: StageOneLayout,
    measurements: Sequence[Measurement],
    zero_injections: Sequence[ZeroInjection] = (),
) -> StageOneSystem:
    """Rows in measurement order; E holds a P row and a Q row per zero-injection bus"""
    labels, rows = [], []
    for meas in measurements:
        labels.append(meas.label())
        rows.append(_to_columns(layout, stage1_coefficients(case, meas), meas.label()))
    B = DesignMatrix.from_rows(labels, rows, layout.dimension)

    e_labels, e_rows, z_e = [], [], []
    for zi in zero_injections:
        for power, target in (("p", zi.p_target), ("q", zi.q_target)):
            label = f"zero_injection_{power}:{zi.bus}"
            e_labels.append(label)
            e_rows.append(_to_columns(layout, injection_coefficients(case, zi.bus, power), label))
            z_e.append(target)
    E = DesignMatrix.from_rows(e_labels, e_rows, layout.dimension)

    z = np.array([meas.value for meas in measurements], dtype=float)
    return StageOneSystem(B=B, E=E, z=z, z_e=np.array(z_e, dtype=float))


def build_stage2_matrix(u_layout: IntermediateLayout, x_layout: StateLayout) -> DesignMatrix:
    """
    alpha_i -> +1 at alpha_i; alpha_k -> +1 at both end alphas;
    theta_k -> +1 at theta_f, -1 at theta_t; PMU theta_i -> +1 at theta_i
    """
    rows: List[Dict[int, float]] = []
    for bus in u_layout.buses:
        rows.append({x_layout.alpha_col(bus): 1.0})

    for (f, t) in u_layout.ends:
        rows.append({x_layout.alpha_col(f): 1.0, x_layout.alpha_col(t): 1.0})
        theta_row: Dict[int, float] = {}
        theta_f, theta_t = x_layout.theta_col(f), x_layout.theta_col(t)
        if theta_f is not None:
            theta_row[theta_f] = 1.0
        if theta_t is not None:
            theta_row[theta_t] = -1.0
        rows.append(theta_row)

    for bus in u_layout.pmu_buses:
        col = x_layout.theta_col(bus)
        if col is None:
            raise ConstructionError(f"PMU angle at reference bus {bus} carries no information")
        rows.append({col: 1.0})

    return DesignMatrix.from_rows(u_layout.row_labels(), rows, x_layout.dimension)


# =================== STATE <-> VECTORS ===================

def _polar(case: NetworkCase, V: np.ndarray, theta: np.ndarray, bus: int) -> Tuple[float, float]:
    pos = case.bus_position[bus]
    return V[pos], theta[pos]


def y_from_state(case: NetworkCase, V: np.ndarray, theta: np.ndarray, layout: StageOneLayout) -> np.ndarray:
    """V, theta in case bus order"""
    y = np.empty(layout.dimension)
    for bus, pos in layout.bus_index.items():
        v, _ = _polar(case, V, theta, bus)
        y[pos] = v * v
    for (k, (k_col, l_col)), (f, t) in zip(layout.branch_index.items(), layout.ends):
        v_f, th_f = _polar(case, V, theta, f)
        v_t, th_t = _polar(case, V, theta, t)
        y[k_col] = v_f * v_t * math.cos(th_f - th_t)
        y[l_col] = v_f * v_t * math.sin(th_f - th_t)
    return y


def y_jacobian(case: NetworkCase, V: np.ndarray, theta: np.ndarray, layout: StageOneLayout) -> csr_matrix:
    """d y / d [V (case order), theta (case order)]"""
    N = case.n_buses
    rows, cols, vals = [], [], []
    for bus, pos in layout.bus_index.items():
        p = case.bus_position[bus]
        rows.append(pos)
        cols.append(p)
        vals.append(2.0 * V[p])
    for (k_col, l_col), (f, t) in zip(layout.branch_index.values(), layout.ends):
        pf, pt = case.bus_position[f], case.bus_position[t]
        c, s = math.cos(theta[pf] - theta[pt]), math.sin(theta[pf] - theta[pt])
        K, L = V[pf] * V[pt] * c, V[pf] * V[pt] * s
        rows += [k_col] * 4 + [l_col] * 4
        cols += [pf, pt, N + pf, N + pt] * 2
        vals += [V[pt] * c, V[pf] * c, -L, L, V[pt] * s, V[pf] * s, K, -K]
    return csr_matrix((vals, (rows, cols)), shape=(layout.dimension, 2 * N))


def wrap_angle(angle: np.ndarray) -> np.ndarray:
    """Map to (-pi, pi]"""
    wrapped = np.mod(np.asarray(angle, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


def nonlinear_transform(
    y: np.ndarray,
    layout_in: StageOneLayout,
    layout_out: IntermediateLayout,
    pmu_values: Optional[Dict[int, float]] = None,
) -> np.ndarray:
    """
    alpha_i = ln U_i, alpha_k = ln(K^2 + L^2), theta_k = atan2(L, K) over the output scope.
    PMU slots are filled from `pmu_values` (measured angles).
    """
    u = np.empty(layout_out.dimension)
    for bus, pos in layout_out.bus_index.items():
        U = y[layout_in.column(("U", bus))]
        if not U > 0:
            raise TransformDomainError(f"U at bus {bus} is {U}; the logarithm needs U > 0")
        u[pos] = math.log(U)

    for (k, (a_col, t_col)), (f, t) in zip(layout_out.branch_index.items(), layout_out.ends):
        K = y[layout_in.column(("K", k))]
        L = y[layout_in.column(("L", k))]
        magnitude = K * K + L * L
        if magnitude == 0.0:
            raise TransformDomainError(f"branch {f}-{t}: K and L are both zero")
        u[a_col] = math.log(magnitude)
        u[t_col] = math.atan2(L, K)

    pmu_values = pmu_values or {}
    for bus, pos in layout_out.pmu_index.items():
        if bus not in pmu_values:
            raise ConstructionError(f"no measured angle for PMU bus {bus}")
        u[pos] = pmu_values[bus]
    return u


def u_from_state(case: NetworkCase, V: np.ndarray, theta: np.ndarray, layout: IntermediateLayout) -> np.ndarray:
    """Exact u of a known state (alpha_k = alpha_f + alpha_t, theta_k = theta_f - theta_t wrapped)"""
    alpha = 2.0 * np.log(V)
    u = np.empty(layout.dimension)
    for bus, pos in layout.bus_index.items():
        u[pos] = alpha[case.bus_position[bus]]
    for (a_col, t_col), (f, t) in zip(layout.branch_index.values(), layout.ends):
        pf, pt = case.bus_position[f], case.bus_position[t]
        u[a_col] = alpha[pf] + alpha[pt]
        u[t_col] = wrap_angle(theta[pf] - theta[pt])
    for bus, pos in layout.pmu_index.items():
        u[pos] = theta[case.bus_position[bus]]
    return u


def x_from_state(case: NetworkCase, V: np.ndarray, theta: np.ndarray, layout: StateLayout) -> np.ndarray:
    x = np.zeros(layout.dimension)
    for bus, pos in layout.alpha_index.items():
        x[pos] = 2.0 * math.log(V[case.bus_position[bus]])
    for bus, pos in layout.theta_index.items():
        x[pos] = theta[case.bus_position[bus]]
    return x


def state_from_x(x: np.ndarray, layout: StateLayout) -> Tuple[np.ndarray, np.ndarray]:
    """(V, theta) in layout bus order, reference angle 0"""
    V = np.exp(x[: len(layout.buses)] / 2.0)
    theta = np.zeros(len(layout.buses))
    for pos, bus in enumerate(layout.buses):
        col = layout.theta_index.get(bus)
        if col is not None:
            theta[pos] = x[col]
    return V, theta


def factor_gain(G: np.ndarray, rcond: float = 1e-12) -> tuple:
    """Cholesky factor for cho_solve; LinAlgError if G is not numerically positive definite"""
    factor = cho_factor(G)
    pivots = np.diag(factor[0]) ** 2
    if pivots.min() < rcond * pivots.max():
        raise LinAlgError("gain matrix is numerically singular")
    return factor


# =================== ROBUST PIECES ===================

def soft_threshold(v: np.ndarray, lam: Union[float, np.ndarray]) -> np.ndarray:
    """Proximal map of lam * ||.||_1, elementwise"""
    if np.any(np.asarray(lam) < 0):
        raise ConfigError("threshold must be non-negative")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def stage_one_sigma(meas: Measurement) -> float:
    """Standard deviation in y units (V^2 meters: 2 sigma V)"""
    if meas.kind is MeasurementKind.V_SQUARED:
        return 2.0 * meas.sigma * math.sqrt(abs(meas.value))
    return meas.sigma


def outlier_thresholds(measurements: Sequence[Measurement], lam: float, mode: str) -> np.ndarray:
    """
    Per-row soft-threshold level: lam * sigma_row ("sigma") or lam itself ("absolute")
    """
    if mode not in THRESHOLD_MODES:
        raise ConfigError(f"threshold mode must be one of {THRESHOLD_MODES}")
    if mode == "absolute":
        return np.full(len(measurements), lam, dtype=float)
    return np.array([lam * stage_one_sigma(meas) for meas in measurements], dtype=float)


@dataclass(frozen=True)
class MeterClasses:
    """Nominal sigma per meter class (power, voltage magnitude, PMU angle)"""
    power: float
    vmag: float
    angle: float

    @classmethod
    def of(cls, measurements: Sequence[Measurement]) -> "MeterClasses":
        """Median sigma of each class; a class with no meters keeps the default noise level"""
        defaults = NoiseSpec()

        def median(selected: List[float], fallback: float) -> float:
            return float(np.median(selected)) if selected else fallback

        power = [m.sigma for m in measurements if m.kind.is_power and m.sigma > 0]
        vmag = [m.sigma for m in measurements if m.kind is MeasurementKind.V_SQUARED and m.sigma > 0]
        angle = [m.sigma for m in measurements if m.kind is MeasurementKind.PMU_ANGLE and m.sigma > 0]
        return cls(
            power=median(power, defaults.sigma_power),
            vmag=median(vmag, defaults.sigma_vmag),
            angle=median(angle, defaults.sigma_angle),
        )


def stage_two_sigmas(case: NetworkCase, layout: IntermediateLayout, meters: MeterClasses) -> np.ndarray:
    """
    Nominal standard deviation of every u row.
    alpha_i: 2 sigma_V (V^2 meter); theta_k: tau sigma_P / |g + jb| (the branch's flow meters);
    alpha_k: twice the theta_k value; PMU rows: the angle class.
    Depends on branch parameters only, so every area derives the same value for a row.
    """
    sigmas = np.empty(layout.dimension)
    for pos in layout.bus_index.values():
        sigmas[pos] = 2.0 * meters.vmag
    for k, (a_col, t_col) in layout.branch_index.items():
        branch = case.branches[k]
        admittance = math.hypot(branch.g, branch.b)
        if admittance == 0.0:
            raise ConstructionError(f"branch {branch.from_bus}-{branch.to_bus} has zero series admittance")
        sigmas[t_col] = branch.tap * meters.power / admittance
        sigmas[a_col] = 2.0 * sigmas[t_col]
    for pos in layout.pmu_index.values():
        sigmas[pos] = meters.angle
    return sigmas


@dataclass(frozen=True)
class StageTwoScaling:
    """
    Row normalisation of the second linear stage.
    "sigma": row r is multiplied by scale / sigma_r, scale being the median nominal u sigma
    of the whole case, and the threshold is lam * scale, i.e. lam * sigma_r in raw units.
    The scale is case-wide so every area and the centralized solve share it.
    "absolute": raw rows, threshold lam.
    """
    mode: str
    meters: MeterClasses
    scale: float = 1.0

    @classmethod
    def for_case(
        cls,
        case: NetworkCase,
        measurements: Sequence[Measurement],
        mode: str,
        pmu_buses: Sequence[int] = (),
    ) -> "StageTwoScaling":
        if mode not in THRESHOLD_MODES:
            raise ConfigError(f"threshold mode must be one of {THRESHOLD_MODES}")
        meters = MeterClasses.of(measurements)
        if mode == "absolute":
            return cls(mode, meters)
        sigmas = stage_two_sigmas(case, IntermediateLayout.for_case(case, pmu_buses), meters)
        return cls(mode, meters, float(np.median(sigmas)))

    def weights(self, case: NetworkCase, layout: IntermediateLayout) -> np.ndarray:
        if self.mode == "absolute":
            return np.ones(layout.dimension)
        return self.scale / stage_two_sigmas(case, layout, self.meters)

    def threshold(self, lam: float) -> float:
        return lam * self.scale


def robust_objective(residual: np.ndarray, o: np.ndarray, thresholds: Union[float, np.ndarray]) -> float:
    """1/2 ||r - o||^2 + sum(lam_i |o_i|)"""
    diff = residual - o
    return 0.5 * float(diff @ diff) + float(np.sum(np.asarray(thresholds) * np.abs(o)))
