"""
Tests for the bilinear kernels: layouts, B/E/C rows, transforms and soft thresholding
"""

import math

import numpy as np
import pytest
from scipy.sparse.linalg import spsolve

from src.estimation.bilinear import (
    IntermediateLayout,
    MeterClasses,
    StageOneLayout,
    StageTwoScaling,
    StateLayout,
    build_stage1_matrices,
    build_stage2_matrix,
    nonlinear_transform,
    outlier_thresholds,
    robust_objective,
    soft_threshold,
    stage_one_sigma,
    stage_two_sigmas,
    state_from_x,
    u_from_state,
    wrap_angle,
    x_from_state,
    y_from_state,
    y_jacobian,
)
from src.models.measurement_models import Measurement, MeasurementKind, Side
from src.services.partition_service import build_partition
from src.utils.exceptions import ConfigError, ConstructionError, TransformDomainError


def _two_bus_y(case, V, theta):
    return y_from_state(case, np.asarray(V, float), np.asarray(theta, float), StageOneLayout.for_case(case))


class TestStateToY:

    def test_flat_start(self, two_bus_case):
        assert _two_bus_y(two_bus_case, [1.0, 1.0], [0.0, 0.0]).tolist() == [1.0, 1.0, 1.0, 0.0]

    def test_quadrature(self, two_bus_case):
        y = _two_bus_y(two_bus_case, [1.0, 1.0], [math.pi / 2, 0.0])
        assert y[2] == pytest.approx(0.0, abs=1e-15)
        assert y[3] == pytest.approx(1.0)

    def test_general_point(self, two_bus_case):
        y = _two_bus_y(two_bus_case, [1.05, 0.98], [0.1, -0.05])
        assert y[2] == pytest.approx(1.029 * math.cos(0.15))
        assert y[3] == pytest.approx(1.029 * math.sin(0.15))

    def test_jacobian_matches_finite_differences(self, three_bus_case):
        layout = StageOneLayout.for_case(three_bus_case)
        V, theta = three_bus_case.true_voltages()
        J = y_jacobian(three_bus_case, V, theta, layout).toarray()
        step = 1e-7
        for col in range(2 * three_bus_case.n_buses):
            state = np.concatenate([V, theta])
            state[col] += step
            y_plus = y_from_state(three_bus_case, state[:3], state[3:], layout)
            y_base = y_from_state(three_bus_case, V, theta, layout)
            assert np.allclose((y_plus - y_base) / step, J[:, col], atol=1e-5)


class TestStageOneRows:

    def _meas(self, kind, **kwargs):
        return Measurement(kind=kind, value=0.0, sigma=0.004, true_value=0.0, **kwargs)

    def test_voltage_row(self, two_bus_case):
        layout = StageOneLayout.for_case(two_bus_case)
        system = build_stage1_matrices(two_bus_case, layout, [self._meas(MeasurementKind.V_SQUARED, bus=2)])
        assert system.B.matrix.toarray().tolist() == [[0.0, 1.0, 0.0, 0.0]]

    def test_from_end_active_flow_row(self, two_bus_case):
        layout = StageOneLayout.for_case(two_bus_case)
        meas = self._meas(MeasurementKind.P_FLOW, branch=0, from_bus=1, to_bus=2)
        row = build_stage1_matrices(two_bus_case, layout, [meas]).B.matrix.toarray()[0]
        # (g at U_1, -g at K, -b at L)
        assert row.tolist() == [1.0, 0.0, -1.0, 10.0]

    def test_charging_only_enters_reactive_flow(self, three_bus_case):
        layout = StageOneLayout.for_case(three_bus_case)
        k = three_bus_case.find_branch(1, 3)
        branch = three_bus_case.branches[k]
        p_row, q_row = build_stage1_matrices(three_bus_case, layout, [
            self._meas(MeasurementKind.P_FLOW, branch=k, from_bus=1, to_bus=3),
            self._meas(MeasurementKind.Q_FLOW, branch=k, from_bus=1, to_bus=3),
        ]).B.matrix.toarray()
        assert p_row[0] == pytest.approx(branch.g)
        assert q_row[0] == pytest.approx(-(branch.b + branch.b_ch / 2.0))

    def test_rows_reproduce_true_values(self, case14, noiseless_ms14):
        layout = StageOneLayout.for_case(case14)
        linear = noiseless_ms14.stage_one()
        system = build_stage1_matrices(case14, layout, linear, noiseless_ms14.zero_injections)
        y = y_from_state(case14, *case14.true_voltages(), layout)
        true = np.array([m.true_value for m in linear])
        assert np.max(np.abs(system.B.matrix @ y - true)) < 1e-12
        assert np.max(np.abs(system.E.matrix @ y - system.z_e)) < 1e-12

    def test_to_end_flow_row(self, three_bus_case):
        layout = StageOneLayout.for_case(three_bus_case)
        k = three_bus_case.find_branch(1, 3)
        meas = self._meas(MeasurementKind.P_FLOW, branch=k, side=Side.TO, from_bus=1, to_bus=3)
        row = build_stage1_matrices(three_bus_case, layout, [meas]).B.matrix.toarray()[0]
        assert row[layout.column(("U", 3))] == pytest.approx(three_bus_case.branches[k].g)

    def test_row_outside_area_scope(self, case14, partition14):
        area1, _ = build_partition(case14, partition14)
        layout = StageOneLayout.for_area(case14, area1)
        with pytest.raises(ConstructionError):
            build_stage1_matrices(case14, layout, [self._meas(MeasurementKind.V_SQUARED, bus=14)])


class TestStageTwoRows:

    def test_alpha_branch_row_has_two_entries(self, two_bus_case):
        C = build_stage2_matrix(IntermediateLayout.for_case(two_bus_case), StateLayout.for_case(two_bus_case))
        dense = C.matrix.toarray()
        assert dense[2].tolist() == [1.0, 1.0, 0.0]

    def test_theta_row_from_reference_bus(self, two_bus_case):
        C = build_stage2_matrix(IntermediateLayout.for_case(two_bus_case), StateLayout.for_case(two_bus_case))
        # theta_12 = theta_1 - theta_2 with theta_1 eliminated
        assert C.matrix.toarray()[3].tolist() == [0.0, 0.0, -1.0]

    def test_global_rows_reproduce_u(self, case14):
        V, theta = case14.true_voltages()
        u_layout = IntermediateLayout.for_case(case14, pmu_buses=(3,))
        x_layout = StateLayout.for_case(case14)
        C = build_stage2_matrix(u_layout, x_layout).matrix
        u = u_from_state(case14, V, theta, u_layout)
        x = x_from_state(case14, V, theta, x_layout)
        assert np.max(np.abs(C @ x - u)) < 1e-12

    def test_reference_bus_pmu_is_rejected(self, two_bus_case):
        u_layout = IntermediateLayout.for_case(two_bus_case, pmu_buses=(1,))
        with pytest.raises(ConstructionError):
            build_stage2_matrix(u_layout, StateLayout.for_case(two_bus_case))

    def test_state_layout_excludes_reference_angle(self, case14):
        layout = StateLayout.for_case(case14)
        assert layout.dimension == 27
        assert layout.theta_col(1) is None


class TestNonlinearTransform:

    def test_identity_point(self, two_bus_case):
        layout_in = StageOneLayout.for_case(two_bus_case)
        u = nonlinear_transform(np.array([1.0, 1.0, 1.0, 0.0]), layout_in, IntermediateLayout.for_case(two_bus_case))
        assert u.tolist() == [0.0, 0.0, 0.0, 0.0]

    def test_quadrature(self, two_bus_case):
        layout_in = StageOneLayout.for_case(two_bus_case)
        u = nonlinear_transform(np.array([1.0, 1.0, 0.0, 1.0]), layout_in, IntermediateLayout.for_case(two_bus_case))
        assert u[2] == pytest.approx(0.0)
        assert u[3] == pytest.approx(math.pi / 2)

    def test_round_trip_through_y(self, two_bus_case):
        V, theta = np.array([1.05, 0.98]), np.array([0.1, -0.05])
        y = _two_bus_y(two_bus_case, V, theta)
        u = nonlinear_transform(y, StageOneLayout.for_case(two_bus_case), IntermediateLayout.for_case(two_bus_case))
        assert u[2] == pytest.approx(math.log(1.05 ** 2 * 0.98 ** 2), abs=1e-12)
        assert u[3] == pytest.approx(0.15, abs=1e-12)

    def test_non_positive_voltage_square(self, two_bus_case):
        with pytest.raises(TransformDomainError, match="bus 1"):
            nonlinear_transform(np.array([-0.1, 1.0, 1.0, 0.0]), StageOneLayout.for_case(two_bus_case),
                                IntermediateLayout.for_case(two_bus_case))

    def test_vanishing_branch_product(self, two_bus_case):
        with pytest.raises(TransformDomainError, match="1-2"):
            nonlinear_transform(np.array([1.0, 1.0, 0.0, 0.0]), StageOneLayout.for_case(two_bus_case),
                                IntermediateLayout.for_case(two_bus_case))

    def test_missing_pmu_value(self, case14):
        layout_in = StageOneLayout.for_case(case14)
        y = y_from_state(case14, *case14.true_voltages(), layout_in)
        with pytest.raises(ConstructionError):
            nonlinear_transform(y, layout_in, IntermediateLayout.for_case(case14, pmu_buses=(3,)))

    def test_wrap_angle(self):
        assert wrap_angle(np.array([3 * math.pi / 2]))[0] == pytest.approx(-math.pi / 2)
        assert wrap_angle(np.array([-math.pi]))[0] == pytest.approx(math.pi)


class TestStateRecovery:

    def test_alpha_to_voltage(self, two_bus_case):
        layout = StateLayout.for_case(two_bus_case)
        V, theta = state_from_x(np.array([0.0, 2.0 * math.log(1.05), -0.05]), layout)
        assert V[0] == 1.0
        assert V[1] == pytest.approx(1.05, abs=1e-15)
        assert theta.tolist() == [0.0, -0.05]

    def test_noiseless_chain_recovers_state(self, case14, noiseless_ms14):
        """state -> y -> u by direct global solves -> state"""
        layout1 = StageOneLayout.for_case(case14)
        system = build_stage1_matrices(case14, layout1, noiseless_ms14.stage_one())
        B = system.B.matrix
        y = spsolve((B.T @ B).tocsc(), B.T @ system.z)

        u_layout = IntermediateLayout.for_case(case14)
        x_layout = StateLayout.for_case(case14)
        u = nonlinear_transform(y, layout1, u_layout)
        C = build_stage2_matrix(u_layout, x_layout).matrix
        x = spsolve((C.T @ C).tocsc(), C.T @ u)

        V, theta = state_from_x(x, x_layout)
        V_true, theta_true = case14.true_voltages()
        assert np.max(np.abs(V - V_true)) < 1e-8
        assert np.max(np.abs(theta - theta_true)) < 1e-8


class TestRobustPieces:

    @pytest.mark.parametrize("value,expected", [(0.5, 0.0), (2.0, 0.66), (-2.0, -0.66)])
    def test_soft_threshold(self, value, expected):
        assert soft_threshold(np.array([value]), 1.34)[0] == pytest.approx(expected)

    def test_soft_threshold_is_nonexpansive(self):
        rng = np.random.default_rng(11)
        a = rng.normal(scale=3.0, size=(10_000, 6))
        b = rng.normal(scale=3.0, size=(10_000, 6))
        lam = rng.uniform(0.0, 2.0, size=6)
        gap = np.linalg.norm(soft_threshold(a, lam) - soft_threshold(b, lam), axis=1)
        assert np.all(gap <= np.linalg.norm(a - b, axis=1) + 1e-12)

    def test_negative_threshold(self):
        with pytest.raises(ConfigError):
            soft_threshold(np.array([1.0]), -1.0)

    def test_voltage_row_sigma_is_scaled(self):
        meas = Measurement(kind=MeasurementKind.V_SQUARED, value=1.1025, sigma=0.002, true_value=1.1025, bus=1)
        assert stage_one_sigma(meas) == pytest.approx(2 * 0.002 * 1.05)

    def test_threshold_modes(self):
        meters = [
            Measurement(kind=MeasurementKind.P_FLOW, value=0.1, sigma=0.004, true_value=0.1, branch=0),
            Measurement(kind=MeasurementKind.V_SQUARED, value=1.0, sigma=0.002, true_value=1.0, bus=1),
        ]
        assert outlier_thresholds(meters, 1.34, "sigma") == pytest.approx([1.34 * 0.004, 1.34 * 0.004])
        assert outlier_thresholds(meters, 1.34, "absolute").tolist() == [1.34, 1.34]
        with pytest.raises(ConfigError):
            outlier_thresholds(meters, 1.34, "huber")

    def test_robust_objective(self):
        residual = np.array([1.0, -3.0])
        o = np.array([0.0, -1.66])
        assert robust_objective(residual, o, 1.34) == pytest.approx(0.5 * (1.0 + 1.34 ** 2) + 1.34 * 1.66)

    def test_area_layout_dimensions(self, case14, partition14):
        area1, _ = build_partition(case14, partition14)
        layout = StageOneLayout.for_area(case14, area1)
        assert layout.dimension == 5 + 2 * 10


class TestStageTwoScaling:

    def test_meter_classes_fall_back_to_default_noise(self):
        meters = [
            Measurement(kind=MeasurementKind.P_FLOW, value=0.1, sigma=0.01, true_value=0.1, branch=0),
            Measurement(kind=MeasurementKind.P_INJECTION, value=0.2, sigma=0.02, true_value=0.2, bus=2),
            Measurement(kind=MeasurementKind.P_INJECTION, value=0.3, sigma=0.03, true_value=0.3, bus=3),
        ]
        classes = MeterClasses.of(meters)
        assert classes == MeterClasses(power=0.02, vmag=0.002, angle=0.002)

    def test_row_sigmas_follow_branch_admittance(self, case14):
        layout = IntermediateLayout.for_case(case14, pmu_buses=(8,))
        sigmas = stage_two_sigmas(case14, layout, MeterClasses(power=0.004, vmag=0.002, angle=0.003))
        branch = case14.branches[0]
        a_col, t_col = layout.branch_index[0]
        assert sigmas[t_col] == pytest.approx(branch.tap * 0.004 / math.hypot(branch.g, branch.b))
        assert sigmas[a_col] == pytest.approx(2 * sigmas[t_col])
        assert sigmas[layout.bus_index[1]] == pytest.approx(0.004)
        assert sigmas[layout.pmu_index[8]] == pytest.approx(0.003)

    def test_sigma_mode_weights_and_threshold(self, case14, noiseless_ms14):
        scaling = StageTwoScaling.for_case(case14, noiseless_ms14.measurements, "sigma")
        layout = IntermediateLayout.for_case(case14)
        sigmas = stage_two_sigmas(case14, layout, scaling.meters)
        assert scaling.scale == pytest.approx(float(np.median(sigmas)))
        # weighted threshold equals lam * sigma_r on every raw row
        assert np.allclose(scaling.threshold(1.34) / scaling.weights(case14, layout), 1.34 * sigmas)

    def test_absolute_mode_keeps_raw_rows(self, case14, noiseless_ms14):
        scaling = StageTwoScaling.for_case(case14, noiseless_ms14.measurements, "absolute")
        layout = IntermediateLayout.for_case(case14)
        assert scaling.threshold(1.34) == 1.34
        assert np.all(scaling.weights(case14, layout) == 1.0)
        with pytest.raises(ConfigError):
            StageTwoScaling.for_case(case14, noiseless_ms14.measurements, "huber")

    def test_area_weights_match_global_rows(self, case14, partition14, noiseless_ms14):
        scaling = StageTwoScaling.for_case(case14, noiseless_ms14.measurements, "sigma")
        global_layout = IntermediateLayout.for_case(case14)
        global_w = scaling.weights(case14, global_layout)
        for view in build_partition(case14, partition14):
            layout = IntermediateLayout.for_area(case14, view)
            w = scaling.weights(case14, layout)
            for k, (a_col, t_col) in layout.branch_index.items():
                assert w[t_col] == pytest.approx(global_w[global_layout.branch_index[k][1]])
