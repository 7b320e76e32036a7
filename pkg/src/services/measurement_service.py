"""
Measurement Service - synthesize, corrupt và partition measurement sets
Mục đích: Scenario data from the case's true state

RNG streams:
- noise: default_rng(NoiseSpec.seed)
- bad data: SeedSequence(BadDataSpec.seed) spawns (selection, magnitude)
- per-trial seeds: trial_seeds(master, trial) -> (noise_seed, bad_data_seed)
"""

import math
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..estimation.bilinear import StageOneLayout, build_stage1_matrices, y_from_state
from ..models.measurement_models import (
    AreaMeasurements,
    BadDataSpec,
    Measurement,
    MeasurementKind,
    MeasurementPoint,
    MeasurementSet,
    NoiseSpec,
    PLAN_NAMES,
    Side,
    ZeroInjection,
    plan_summary,
)
from ..models.network_models import AreaPartition, AreaView, NetworkCase
from ..utils.exceptions import MeasurementError
from ..utils.logger import get_logger


logger = get_logger(__name__)


# ===== PLANS =====

def build_plan(case: NetworkCase, name: str = "full", pmu_buses: Sequence[int] = ()) -> List[MeasurementPoint]:
    """
    full: P/Q injections at non-zero-injection buses, from-end P/Q flows, V^2 everywhere.
    full_both_ends adds to-end flows; flows_only drops injections. PMU angles are appended.
    """
    if name not in PLAN_NAMES:
        raise MeasurementError(f"unknown measurement plan {name!r}")

    points: List[MeasurementPoint] = []
    if name != "flows_only":
        for bus in case.buses:
            if bus.is_zero_injection:
                continue
            points.append(MeasurementPoint(MeasurementKind.P_INJECTION, bus=bus.id))
            points.append(MeasurementPoint(MeasurementKind.Q_INJECTION, bus=bus.id))

    sides = (Side.FROM, Side.TO) if name == "full_both_ends" else (Side.FROM,)
    for k in range(case.n_branches):
        for side in sides:
            points.append(MeasurementPoint(MeasurementKind.P_FLOW, branch=k, side=side))
            points.append(MeasurementPoint(MeasurementKind.Q_FLOW, branch=k, side=side))

    for bus_id in case.bus_ids:
        points.append(MeasurementPoint(MeasurementKind.V_SQUARED, bus=bus_id))

    for bus_id in pmu_buses:
        if bus_id == case.reference_bus:
            raise MeasurementError(f"PMU angle at reference bus {bus_id} carries no information")
        points.append(MeasurementPoint(MeasurementKind.PMU_ANGLE, bus=bus_id))

    logger.debug(f"Plan '{name}': {plan_summary(points)}")
    return points


def _resolve(case: NetworkCase, point: MeasurementPoint, sigma: float) -> Measurement:
    if point.kind.is_flow:
        if point.branch is None or not 0 <= point.branch < case.n_branches:
            raise MeasurementError(f"{point.label()} references a missing branch")
        branch = case.branches[point.branch]
        return Measurement(
            kind=point.kind, value=0.0, sigma=sigma, true_value=0.0,
            branch=point.branch, side=point.side, from_bus=branch.from_bus, to_bus=branch.to_bus,
        )
    if point.bus not in case.bus_position:
        raise MeasurementError(f"{point.label()} references a missing bus")
    if point.kind.is_injection and case.bus(point.bus).is_zero_injection:
        raise MeasurementError(f"{point.label()}: zero-injection buses carry no injection meters")
    return Measurement(kind=point.kind, value=0.0, sigma=sigma, true_value=0.0, bus=point.bus)


# ===== TRUE VALUES =====

def true_measurements(
    case: NetworkCase,
    plan: Sequence[MeasurementPoint],
    nominal: Optional[NoiseSpec] = None,
    strict_zero_injection: bool = False,
) -> MeasurementSet:
    """
    Error-free values from y(true state). `nominal` supplies each meter's sigma.
    Zero-injection targets are the injections implied by the stored state unless strict.
    """
    nominal = nominal or NoiseSpec()
    seen = set()
    skeleton = []
    for point in plan:
        if point in seen:
            raise MeasurementError(f"duplicate measurement {point.label()}")
        seen.add(point)
        skeleton.append(_resolve(case, point, nominal.sigma_for(point.kind)))

    V, theta = case.true_voltages()
    layout = StageOneLayout.for_case(case)
    y_true = y_from_state(case, V, theta, layout)

    linear = [m for m in skeleton if m.kind.is_stage_one]
    zero_buses = [ZeroInjection(bus.id) for bus in case.buses if bus.is_zero_injection]
    system = build_stage1_matrices(case, layout, linear, zero_buses)
    linear_values = iter(system.B.matrix @ y_true)

    measurements = []
    for meas in skeleton:
        if meas.kind.is_stage_one:
            value = float(next(linear_values))
        else:
            value = float(theta[case.bus_position[meas.bus]])
        measurements.append(replace(meas, value=value, true_value=value))

    implied = system.E.matrix @ y_true if len(zero_buses) else np.zeros(0)
    zero_injections = []
    for j, zi in enumerate(zero_buses):
        if strict_zero_injection:
            zero_injections.append(zi)
        else:
            zero_injections.append(ZeroInjection(zi.bus, float(implied[2 * j]), float(implied[2 * j + 1])))

    logger.info(f"True measurement set: {len(measurements)} meters, {len(zero_injections)} zero-injection buses")
    return MeasurementSet(measurements=measurements, zero_injections=zero_injections)


# ===== CORRUPTION =====

def apply_noise(ms: MeasurementSet, spec: NoiseSpec) -> MeasurementSet:
    """
    value = true + N(0, sigma^2); voltage meters perturb V and report its square.
    Zero-sigma kinds keep their nominal meter sigma.
    """
    rng = np.random.default_rng(spec.seed)
    draws = rng.standard_normal(len(ms))

    noisy = []
    for meas, draw in zip(ms.measurements, draws):
        sigma = spec.sigma_for(meas.kind)
        if meas.kind is MeasurementKind.V_SQUARED:
            value = (math.sqrt(meas.true_value) + sigma * draw) ** 2
        else:
            value = meas.true_value + sigma * draw
        noisy.append(replace(meas, value=float(value), sigma=sigma if sigma > 0 else meas.sigma))

    logger.debug(f"Noise applied to {len(noisy)} meters (seed {spec.seed})")
    return MeasurementSet(measurements=noisy, zero_injections=list(ms.zero_injections))


def bad_data_streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    selection, magnitude = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(selection), np.random.default_rng(magnitude)


def inject_bad_data(ms: MeasurementSet, spec: BadDataSpec) -> MeasurementSet:
    """
    Add N(0, (magnitude_factor * sigma)^2) to the selected meters and flag them.
    Selection: explicit targets, else floor(fraction * |ms|) drawn uniformly.
    """
    if spec.is_empty:
        return ms

    selection_rng, magnitude_rng = bad_data_streams(spec.seed)
    if spec.targets:
        by_label = {meas.label(): pos for pos, meas in enumerate(ms.measurements)}
        missing = [label for label in spec.targets if label not in by_label]
        if missing:
            raise MeasurementError(f"bad-data targets not found: {', '.join(missing)}")
        chosen = sorted({by_label[label] for label in spec.targets})
    else:
        count = int(math.floor(spec.fraction * len(ms)))
        chosen = sorted(selection_rng.choice(len(ms), size=count, replace=False).tolist())

    measurements = list(ms.measurements)
    for pos in chosen:
        meas = measurements[pos]
        error = magnitude_rng.normal(0.0, spec.magnitude_factor * meas.sigma)
        if meas.kind is MeasurementKind.V_SQUARED:
            value = (math.sqrt(meas.value) + error) ** 2
        else:
            value = meas.value + error
        measurements[pos] = replace(meas, value=float(value), is_bad=True)

    logger.info(f"Bad data injected into {len(chosen)} meters: {[measurements[p].label() for p in chosen]}")
    return MeasurementSet(measurements=measurements, zero_injections=list(ms.zero_injections))


def trial_seeds(master_seed: int, trial: int) -> Tuple[int, int]:
    """(noise_seed, bad_data_seed) for one Monte Carlo trial"""
    noise_ss, bad_ss = np.random.SeedSequence([master_seed, trial]).spawn(2)
    return int(noise_ss.generate_state(1)[0]), int(bad_ss.generate_state(1)[0])


def nominal_sigmas(spec: NoiseSpec) -> NoiseSpec:
    """Meter sigmas used for weighting; noiseless scenarios keep the default meter classes"""
    default = NoiseSpec()
    return NoiseSpec(
        sigma_power=spec.sigma_power or default.sigma_power,
        sigma_vmag=spec.sigma_vmag or default.sigma_vmag,
        sigma_angle=spec.sigma_angle or default.sigma_angle,
        seed=spec.seed,
    )


def build_scenario(
    case: NetworkCase,
    plan: str,
    noise: NoiseSpec,
    bad_data: BadDataSpec,
    pmu_buses: Sequence[int] = (),
    strict_zero_injection: bool = False,
) -> MeasurementSet:
    points = build_plan(case, plan, pmu_buses)
    ms = true_measurements(case, points, nominal_sigmas(noise), strict_zero_injection)
    return inject_bad_data(apply_noise(ms, noise), bad_data)


# ===== AREA SPLIT =====

def partition_measurements(
    ms: MeasurementSet,
    views: Sequence[AreaView],
    partition: AreaPartition,
) -> Dict[int, AreaMeasurements]:
    """Injections, V^2 and PMU meters go to the bus's home area; flows to the metered end's area"""
    positions: Dict[int, List[int]] = {view.area: [] for view in views}
    for pos, meas in enumerate(ms.measurements):
        positions[partition.area_of(meas.metered_bus)].append(pos)

    zero: Dict[int, List[ZeroInjection]] = {view.area: [] for view in views}
    for zi in ms.zero_injections:
        zero[partition.area_of(zi.bus)].append(zi)

    return {
        view.area: AreaMeasurements(
            area=view.area,
            positions=tuple(positions[view.area]),
            measurements=tuple(ms.measurements[p] for p in positions[view.area]),
            zero_injections=tuple(zero[view.area]),
        )
        for view in views
    }


# ===== ESTIMATED QUANTITIES =====

def estimated_measurements(case: NetworkCase, ms: MeasurementSet, V: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """h(x) for every meter of `ms`, V and theta in case bus order"""
    layout = StageOneLayout.for_case(case)
    y = y_from_state(case, V, theta, layout)
    linear = [m for m in ms.measurements if m.kind.is_stage_one]
    linear_values = iter(build_stage1_matrices(case, layout, linear).B.matrix @ y)

    values = []
    for meas in ms.measurements:
        if meas.kind.is_stage_one:
            values.append(float(next(linear_values)))
        else:
            values.append(float(theta[case.bus_position[meas.bus]]))
    return np.array(values)
