"""
Centralized Reference Estimators
Mục đích: Global oracles for the distributed pipeline and the bad-data comparisons

Methods:
- centralized_rbse: both linear stages solved globally by alternating direct solves
  (sparse KKT factorised once) and soft thresholding
- gauss_newton_wls: classical weighted least squares with zero-injection equality rows
- wls_lnrt: WLS plus largest-normalized-residual removal
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from scipy.sparse import bmat, csc_matrix, diags
from scipy.sparse.linalg import splu

from .bilinear import (
    IntermediateLayout,
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
    state_from_x,
    y_from_state,
    y_jacobian,
)
from ..models.estimation_models import CentralEstimate
from ..models.measurement_models import MeasurementKind, MeasurementSet
from ..models.network_models import NetworkCase
from ..utils.exceptions import ConfigError, NumericalError, ObservabilityError
from ..utils.logger import get_logger


logger = get_logger(__name__)

SWEEP_TOL = 1e-9
MAX_SWEEPS = 5000
MONOTONE_SLACK = 1e-8
LNRT_THRESHOLD = 3.0
CONDITION_LIMIT = 1e14


# =================== CENTRALIZED RBSE ===================

def _factorize(matrix: csc_matrix, what: str) -> Callable[[np.ndarray], np.ndarray]:
    try:
        lu = splu(matrix.tocsc())
    except RuntimeError as e:
        raise ObservabilityError(f"{what} is singular: {e}")
    return lu.solve


def _alternate(
    solve: Callable[[np.ndarray], np.ndarray],
    A: np.ndarray,
    b: np.ndarray,
    thresholds: Union[float, np.ndarray],
    stage: int,
) -> Tuple[np.ndarray, np.ndarray, int, bool]:
    """
    Alternate v = argmin given o (direct solve) and o = S(b - A v) until both stop moving.
    The robust objective may not increase between sweeps.
    """
    o = np.zeros(A.shape[0])
    v_prev: Optional[np.ndarray] = None
    J_prev = np.inf
    for sweep in range(1, MAX_SWEEPS + 1):
        v = solve(o)
        o_new = soft_threshold(b - A @ v, thresholds)
        J = robust_objective(b - A @ v, o_new, thresholds)
        if J > J_prev + MONOTONE_SLACK * max(1.0, abs(J_prev)):
            raise NumericalError(f"stage {stage} objective increased from {J_prev:.6e} to {J:.6e}")

        change = np.max(np.abs(o_new - o)) if o.size else 0.0
        if v_prev is not None:
            change = max(change, float(np.max(np.abs(v - v_prev))))
        o, v_prev, J_prev = o_new, v, J
        if sweep > 1 and change < SWEEP_TOL:
            logger.debug(f"Centralized stage {stage}: {sweep} sweeps, J={J:.6e}")
            return v, o, sweep, True
    logger.warning(f"Centralized stage {stage} stopped after {MAX_SWEEPS} sweeps")
    return v_prev, o, MAX_SWEEPS, False


def centralized_rbse(
    case: NetworkCase,
    ms: MeasurementSet,
    lam: float = 1.34,
    threshold_mode: str = "sigma",
) -> CentralEstimate:
    """Stage 1 on the KKT system, global transform, stage 2 on C^T C"""
    if not lam > 0:
        raise ConfigError("lambda must be positive")

    linear = ms.stage_one()
    layout1 = StageOneLayout.for_case(case)
    system = build_stage1_matrices(case, layout1, linear, ms.zero_injections)
    B, E = system.B.matrix, system.E.matrix
    n = layout1.dimension

    if E.shape[0]:
        kkt = bmat([[B.T @ B, E.T], [E, None]])
    else:
        kkt = B.T @ B
    kkt_solve = _factorize(kkt, "stage-1 KKT system")

    def solve_y(o: np.ndarray) -> np.ndarray:
        rhs = np.concatenate([B.T @ (system.z - o), system.z_e])
        return kkt_solve(rhs)[:n]

    thresholds = outlier_thresholds(linear, lam, threshold_mode)
    y, o_f, sweeps_1, ok_1 = _alternate(solve_y, B, system.z, thresholds, stage=1)

    pmu = {m.bus: m.value for m in ms.pmu_angles()}
    u_layout = IntermediateLayout.for_case(case, tuple(pmu))
    x_layout = StateLayout.for_case(case)
    u = nonlinear_transform(y, layout1, u_layout, pmu)

    scaling = StageTwoScaling.for_case(case, ms.measurements, threshold_mode, tuple(pmu))
    w = scaling.weights(case, u_layout)
    C = diags(w) @ build_stage2_matrix(u_layout, x_layout).matrix
    u_w = w * u
    normal_solve = _factorize(C.T @ C, "stage-2 normal equations")
    x, o_w, sweeps_2, ok_2 = _alternate(
        lambda o: normal_solve(C.T @ (u_w - o)), C, u_w, scaling.threshold(lam), stage=2,
    )
    o_s = o_w / w

    V, theta = state_from_x(x, x_layout)
    return CentralEstimate(
        method="centralized_rbse",
        V=V,
        theta=theta,
        converged=ok_1 and ok_2,
        iterations=sweeps_1 + sweeps_2,
        o_f=o_f,
        o_s=o_s,
    )


# =================== GAUSS-NEWTON WLS ===================

@dataclass
class _WlsSolution:
    V: np.ndarray
    theta: np.ndarray
    iterations: int
    converged: bool
    H: np.ndarray
    sigma: np.ndarray
    residual: np.ndarray
    augmented: np.ndarray
    order: List[int]


def _gauss_newton(
    case: NetworkCase,
    ms: MeasurementSet,
    max_iter: int,
    tol: float,
    V0: Optional[np.ndarray] = None,
    theta0: Optional[np.ndarray] = None,
) -> _WlsSolution:
    N = case.n_buses
    ref = case.bus_position[case.reference_bus]
    non_ref = [p for p in range(N) if p != ref]
    state_cols = list(range(N)) + [N + p for p in non_ref]

    linear_pos = [p for p, m in enumerate(ms.measurements) if m.kind.is_stage_one]
    pmu_pos = [p for p, m in enumerate(ms.measurements) if m.kind is MeasurementKind.PMU_ANGLE]
    order = linear_pos + pmu_pos
    linear = [ms.measurements[p] for p in linear_pos]

    layout = StageOneLayout.for_case(case)
    system = build_stage1_matrices(case, layout, linear, ms.zero_injections)
    B, E = system.B.matrix, system.E.matrix

    z = np.array([ms.measurements[p].value for p in order], dtype=float)
    sigma = np.array(
        [stage_one_sigma(m) for m in linear] + [ms.measurements[p].sigma for p in pmu_pos], dtype=float
    )
    weights = 1.0 / sigma ** 2
    pmu_rows = np.zeros((len(pmu_pos), 2 * N))
    for j, p in enumerate(pmu_pos):
        pmu_rows[j, N + case.bus_position[ms.measurements[p].bus]] = 1.0

    V = np.ones(N) if V0 is None else V0.copy()
    theta = np.zeros(N) if theta0 is None else theta0.copy()
    k = len(state_cols)
    m_e = E.shape[0]

    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        y = y_from_state(case, V, theta, layout)
        Jy = y_jacobian(case, V, theta, layout)
        h = np.concatenate([B @ y, theta[[case.bus_position[ms.measurements[p].bus] for p in pmu_pos]]])
        H = np.vstack([(B @ Jy).toarray(), pmu_rows])[:, state_cols]
        r = z - h

        HtW = H.T * weights
        augmented = np.zeros((k + m_e, k + m_e))
        augmented[:k, :k] = HtW @ H
        rhs = np.zeros(k + m_e)
        rhs[:k] = HtW @ r
        if m_e:
            C_eq = (E @ Jy).toarray()[:, state_cols]
            augmented[:k, k:] = C_eq.T
            augmented[k:, :k] = C_eq
            rhs[k:] = -(E @ y - system.z_e)

        if np.linalg.cond(augmented) > CONDITION_LIMIT:
            raise ObservabilityError("WLS gain matrix is singular; the measurement set is not observable")
        dx = np.linalg.solve(augmented, rhs)[:k]

        V += dx[:N]
        theta[non_ref] += dx[N:]
        if not np.all(np.isfinite(dx)):
            break
        if np.max(np.abs(dx)) < tol:
            converged = True
            break

    y = y_from_state(case, V, theta, layout)
    h = np.concatenate([B @ y, theta[[case.bus_position[ms.measurements[p].bus] for p in pmu_pos]]])
    return _WlsSolution(V, theta, iteration, converged, H, sigma, z - h, augmented, order)


def gauss_newton_wls(
    case: NetworkCase,
    ms: MeasurementSet,
    max_iter: int = 50,
    tol: float = 1e-10,
) -> CentralEstimate:
    """Flat start; converged when ||dx||_inf < tol"""
    sol = _gauss_newton(case, ms, max_iter, tol)
    if not sol.converged:
        logger.warning(f"WLS did not converge in {max_iter} iterations")
    return CentralEstimate(method="wls", V=sol.V, theta=sol.theta, converged=sol.converged,
                           iterations=sol.iterations)


def normalized_residuals(sol: _WlsSolution) -> np.ndarray:
    """r_N = |r| / sqrt(Omega_ii), Omega = R - H Sigma_x H^T; zero where Omega_ii vanishes"""
    k = sol.H.shape[1]
    sigma_x = np.linalg.inv(sol.augmented)[:k, :k]
    omega = sol.sigma ** 2 - np.sum((sol.H @ sigma_x) * sol.H, axis=1)
    valid = omega > 1e-10 * sol.sigma ** 2
    r_n = np.zeros_like(omega)
    r_n[valid] = np.abs(sol.residual[valid]) / np.sqrt(omega[valid])
    return r_n


def wls_lnrt(
    case: NetworkCase,
    ms: MeasurementSet,
    threshold: float = LNRT_THRESHOLD,
    max_iter: int = 50,
    tol: float = 1e-10,
) -> CentralEstimate:
    """Remove the largest normalized residual above `threshold` and re-estimate (warm start)"""
    current = ms
    removed: List[str] = []
    total_iterations = 0
    V0 = theta0 = None

    while True:
        try:
            sol = _gauss_newton(case, current, max_iter, tol, V0, theta0)
        except ObservabilityError as e:
            if removed:
                raise ObservabilityError(f"removing {removed[-1]} made the system unobservable: {e}")
            raise
        total_iterations += sol.iterations

        r_n = normalized_residuals(sol)
        worst = int(np.argmax(r_n)) if r_n.size else 0
        if not r_n.size or r_n[worst] <= threshold:
            break

        position = sol.order[worst]
        label = current.measurements[position].label()
        logger.info(f"LNRT removes {label} (r_N = {r_n[worst]:.2f})")
        removed.append(label)
        current = current.without(position)
        V0, theta0 = sol.V, sol.theta

    return CentralEstimate(
        method="wls_lnrt",
        V=sol.V,
        theta=sol.theta,
        converged=sol.converged,
        iterations=total_iterations,
        removed_measurements=removed,
    )
