"""
Tests for measurement plans, true values, noise, bad data and the area split
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from src.models.measurement_models import (
    BadDataSpec,
    Measurement,
    MeasurementKind,
    MeasurementPoint,
    MeasurementSet,
    NoiseSpec,
    Side,
)
from src.models.network_models import AreaPartition
from src.services.measurement_service import (
    apply_noise,
    build_plan,
    build_scenario,
    estimated_measurements,
    inject_bad_data,
    partition_measurements,
    trial_seeds,
    true_measurements,
)
from src.services.partition_service import build_partition
from src.utils.exceptions import ConfigError, MeasurementError

from tests.conftest import CORRUPTED_TARGETS


def _flat_two_bus(case, theta2: float = 0.0):
    buses = [replace(case.buses[0], v_true=1.0), replace(case.buses[1], v_true=1.0, theta_true=theta2)]
    return replace(case, buses=buses)


class TestPlans:

    def test_full_plan_counts(self, case14):
        points = build_plan(case14, "full")
        kinds = [p.kind for p in points]
        # 13 non-zero-injection buses, 20 branches, 14 buses
        assert kinds.count(MeasurementKind.P_INJECTION) == 13
        assert kinds.count(MeasurementKind.P_FLOW) == 20
        assert kinds.count(MeasurementKind.V_SQUARED) == 14
        assert len(points) == 2 * 13 + 2 * 20 + 14

    def test_both_ends_and_flows_only(self, case14):
        both = build_plan(case14, "full_both_ends")
        assert sum(1 for p in both if p.kind.is_flow and p.side is Side.TO) == 40
        flows_only = build_plan(case14, "flows_only")
        assert not any(p.kind.is_injection for p in flows_only)

    def test_pmu_overlay(self, case14):
        points = build_plan(case14, "full", pmu_buses=[3, 8])
        assert [p.bus for p in points if p.kind is MeasurementKind.PMU_ANGLE] == [3, 8]

    def test_pmu_at_reference_bus_is_rejected(self, case14):
        with pytest.raises(MeasurementError):
            build_plan(case14, "full", pmu_buses=[1])

    def test_unknown_plan(self, case14):
        with pytest.raises(MeasurementError):
            build_plan(case14, "everything")

    def test_missing_element(self, two_bus_case):
        with pytest.raises(MeasurementError):
            true_measurements(two_bus_case, [MeasurementPoint(MeasurementKind.P_FLOW, branch=4)])


class TestTrueValues:

    def test_flat_start_carries_no_flow(self, two_bus_case):
        case = _flat_two_bus(two_bus_case)
        ms = true_measurements(case, [MeasurementPoint(MeasurementKind.P_FLOW, branch=0)])
        assert ms.measurements[0].true_value == pytest.approx(0.0, abs=1e-15)

    def test_flow_matches_polar_formula(self, two_bus_case):
        case = _flat_two_bus(two_bus_case, theta2=0.0)
        case = replace(case, buses=[replace(case.buses[0], theta_true=0.1), case.buses[1]])
        ms = true_measurements(case, [MeasurementPoint(MeasurementKind.P_FLOW, branch=0)])
        g, b = 1.0, -10.0
        expected = g * (1.0 - math.cos(0.1)) - b * math.sin(0.1)
        assert ms.measurements[0].true_value == pytest.approx(expected, abs=1e-12)

    def test_voltage_meter_reports_square(self, two_bus_case):
        case = replace(two_bus_case, buses=[replace(two_bus_case.buses[0], v_true=1.05), two_bus_case.buses[1]])
        ms = true_measurements(case, [MeasurementPoint(MeasurementKind.V_SQUARED, bus=1)])
        assert ms.measurements[0].true_value == pytest.approx(1.1025)

    def test_injections_equal_sum_of_terminal_flows(self, three_bus_case):
        points = build_plan(three_bus_case, "full_both_ends")
        ms = true_measurements(three_bus_case, points)
        values = {m.label(): m.true_value for m in ms.measurements}
        bus = three_bus_case.bus(1)
        p_shunt = bus.g_sh * bus.v_true ** 2
        # bus 1 is the from end of 1-2 and 1-3
        assert values["p_injection:1"] == pytest.approx(values["p_flow:1-2"] + values["p_flow:1-3"] + p_shunt)

    def test_zero_injection_targets_are_implied(self, case14, noiseless_ms14):
        (zi,) = noiseless_ms14.zero_injections
        assert zi.bus == 7
        # the stored solution is rounded, so the implied target is small but not exactly zero
        assert abs(zi.p_target) < 0.05 and abs(zi.q_target) < 0.05

    def test_strict_zero_injection(self, case14):
        ms = true_measurements(case14, build_plan(case14), strict_zero_injection=True)
        assert ms.zero_injections[0].p_target == 0.0

    def test_estimated_measurements_at_true_state(self, case14, noiseless_ms14):
        V, theta = case14.true_voltages()
        estimated = estimated_measurements(case14, noiseless_ms14, V, theta)
        true = np.array([m.true_value for m in noiseless_ms14.measurements])
        assert np.max(np.abs(estimated - true)) < 1e-12


class TestNoise:

    def test_seeded_noise_is_deterministic(self, case14):
        ms = true_measurements(case14, build_plan(case14))
        first = apply_noise(ms, NoiseSpec(seed=3))
        second = apply_noise(ms, NoiseSpec(seed=3))
        assert first == second
        assert first != apply_noise(ms, NoiseSpec(seed=4))

    def test_zero_sigma_keeps_true_values(self, case14, noiseless_ms14):
        for meas in noiseless_ms14.measurements:
            assert meas.value == pytest.approx(meas.true_value, abs=1e-14)
            assert meas.sigma > 0

    def test_sample_standard_deviation(self):
        ms = MeasurementSet(measurements=[
            Measurement(kind=MeasurementKind.P_INJECTION, value=0.0, sigma=0.004, true_value=0.0, bus=1)
        ] * 100_000)
        noisy = apply_noise(ms, NoiseSpec(seed=11))
        std = np.std([m.value for m in noisy.measurements])
        assert std == pytest.approx(0.004, rel=0.02)

    def test_negative_sigma_is_rejected(self):
        with pytest.raises(ConfigError):
            NoiseSpec(sigma_power=-0.1)


class TestBadData:

    def test_explicit_targets(self, case14):
        ms = build_scenario(case14, "full", NoiseSpec(seed=7), BadDataSpec(targets=CORRUPTED_TARGETS, seed=7))
        assert sorted(ms.measurements[p].label() for p in ms.bad_indices()) == sorted(CORRUPTED_TARGETS)

    def test_zero_fraction_is_identity(self, noiseless_ms14):
        assert inject_bad_data(noiseless_ms14, BadDataSpec(fraction=0.0)) is noiseless_ms14

    def test_fraction_selects_floor_count(self, noiseless_ms14):
        corrupted = inject_bad_data(noiseless_ms14, BadDataSpec(fraction=0.05, seed=2))
        assert len(corrupted.bad_indices()) == math.floor(0.05 * len(noiseless_ms14))

    def test_unknown_target(self, noiseless_ms14):
        with pytest.raises(MeasurementError):
            inject_bad_data(noiseless_ms14, BadDataSpec(targets=["p_flow:1-14"]))

    def test_fraction_out_of_range(self):
        with pytest.raises(ConfigError):
            BadDataSpec(fraction=1.5)

    def test_trial_seeds_differ_per_trial(self):
        assert trial_seeds(0, 0) != trial_seeds(0, 1)
        assert trial_seeds(5, 2) == trial_seeds(5, 2)


class TestAreaSplit:

    def test_single_area_keeps_everything(self, case14, noiseless_ms14):
        partition = AreaPartition.single_area(case14)
        views = build_partition(case14, partition)
        split = partition_measurements(noiseless_ms14, views, partition)
        assert split[1].positions == tuple(range(len(noiseless_ms14)))

    def test_counts_sum_to_total(self, case14, partition14, noiseless_ms14):
        views = build_partition(case14, partition14)
        split = partition_measurements(noiseless_ms14, views, partition14)
        assert sum(len(area.positions) for area in split.values()) == len(noiseless_ms14)
        assert [zi.bus for zi in split[2].zero_injections] == [7]

    def test_tie_line_flow_goes_to_metered_end(self, case14, partition14, noiseless_ms14):
        views = build_partition(case14, partition14)
        split = partition_measurements(noiseless_ms14, views, partition14)
        labels_1 = {m.label() for m in split[1].measurements}
        assert "p_flow:5-6" in labels_1
        assert "q_flow:5-6" in labels_1
