"""
Stage-1 ADMM - per-area closed-form updates on y with tie-line consensus
Mục đích: Estimate y_a = (U, K, L) locally; exchange only tie-line (K, L) copies

Iteration (bulk-synchronous, coordinator-free):
1. local_update: y_a from the equality-constrained ridge solve, then o_a = S(z_a - B_a y_a)
2. each area sends (K, L) of Gamma_{a,b} to neighbor b; barrier
3. consensus_exchange: bar = mean of the two copies, y_hat += 2 bar - bar_prev - local
4. residuals: r = 1/2 |copy difference|, d = |bar drift|, delta = max
"""

import asyncio
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_solve

from .bilinear import (
    StageOneLayout,
    build_stage1_matrices,
    factor_gain,
    outlier_thresholds,
    robust_objective,
    soft_threshold,
)
from ..models.estimation_models import StageRun, TieLineMessage, TraceRow
from ..models.measurement_models import AreaMeasurements
from ..models.network_models import AreaView, NetworkCase, TieLine
from ..services.message_bus import MessageBus
from ..utils.exceptions import NumericalError
from ..utils.logger import get_logger


logger = get_logger(__name__)

LOG_EVERY = 25


@dataclass
class Stage1Residuals:
    r: np.ndarray
    d: np.ndarray

    @property
    def r_inf(self) -> float:
        return float(np.max(self.r)) if self.r.size else 0.0

    @property
    def d_inf(self) -> float:
        return float(np.max(self.d)) if self.d.size else 0.0

    @property
    def delta(self) -> float:
        return max(self.r_inf, self.d_inf)


@dataclass
class Stage1AreaState:
    """Local iterate, outliers, auxiliary y_hat and the cached gain of one area"""
    area: int
    view: AreaView
    layout: StageOneLayout
    B: np.ndarray
    E: np.ndarray
    z: np.ndarray
    z_e: np.ndarray
    thresholds: np.ndarray
    rho_f: float
    mask: np.ndarray
    consensus_mask: np.ndarray
    gain: tuple
    b_hat: np.ndarray
    y: np.ndarray
    o: np.ndarray
    y_hat: np.ndarray
    bar_prev: Dict[int, np.ndarray] = field(default_factory=dict)
    outlier_drift: float = 0.0
    anchored_change: np.ndarray = field(default_factory=lambda: np.zeros(0))
    row_labels: tuple = ()
    positions: tuple = ()

    @property
    def neighbors(self) -> tuple:
        return self.view.neighbors

    def tie_values(self, tie: TieLine) -> np.ndarray:
        k_col, l_col = self.layout.branch_index[tie.branch]
        return self.y[[k_col, l_col]]

    def objective(self) -> float:
        return robust_objective(self.z - self.B @ self.y, self.o, self.thresholds)

    def equality_violation(self) -> float:
        if not self.z_e.size:
            return 0.0
        return float(np.max(np.abs(self.E @ self.y - self.z_e)))


def init_stage1(
    case: NetworkCase,
    view: AreaView,
    area_ms: AreaMeasurements,
    lam: float,
    rho_f: float,
    threshold_mode: str = "sigma",
    augmentation: str = "identity",
) -> Stage1AreaState:
    """
    Factor G = B^T B + rho_f D once (D: tie-line slots, or identity) and precompute
    B_hat = (E G^-1 E^T)^-1 E G^-1 for the zero-injection projection
    """
    linear = [m for m in area_ms.measurements if m.kind.is_stage_one]
    positions = tuple(p for p, m in zip(area_ms.positions, area_ms.measurements) if m.kind.is_stage_one)
    layout = StageOneLayout.for_area(case, view)
    system = build_stage1_matrices(case, layout, linear, area_ms.zero_injections)
    B = system.B.matrix.toarray()
    E = system.E.matrix.toarray()
    n = layout.dimension

    tie_slots = layout.branch_slots([tie.branch for tie in view.all_tie_lines])
    consensus_mask = np.zeros(n)
    consensus_mask[tie_slots] = 1.0
    mask = np.ones(n) if augmentation == "identity" else consensus_mask.copy()

    try:
        gain = factor_gain(B.T @ B + rho_f * np.diag(mask))
    except LinAlgError:
        raise NumericalError(
            f"area {view.area}: stage-1 gain is not positive definite; "
            f"the area is not locally observable with augmentation '{augmentation}'"
        )

    if E.shape[0]:
        W = cho_solve(gain, E.T)
        try:
            b_hat = np.linalg.solve(E @ W, W.T)
        except np.linalg.LinAlgError:
            raise NumericalError(f"area {view.area}: zero-injection constraints are linearly dependent")
    else:
        b_hat = np.zeros((0, n))

    y = layout.flat_start()
    y_hat = np.zeros(n)
    y_hat[tie_slots] = y[tie_slots]
    bar_prev = {tie.branch: y[layout.branch_slots([tie.branch])].copy() for tie in view.all_tie_lines}

    logger.debug(
        f"Area {view.area} stage 1: {B.shape[0]} meters, {E.shape[0]} constraint rows, gain {n}x{n}"
    )
    return Stage1AreaState(
        area=view.area,
        view=view,
        layout=layout,
        B=B,
        E=E,
        z=system.z,
        z_e=system.z_e,
        thresholds=outlier_thresholds(linear, lam, threshold_mode),
        rho_f=rho_f,
        mask=mask,
        consensus_mask=consensus_mask,
        gain=gain,
        b_hat=b_hat,
        y=y,
        o=np.zeros(B.shape[0]),
        y_hat=y_hat,
        bar_prev=bar_prev,
        row_labels=system.B.rows,
        positions=positions,
    )


def local_update(state: Stage1AreaState) -> None:
    """
    y from the constrained ridge solve given o and the anchor, then o by soft thresholding.
    The anchor is y_hat on tie-line slots and the previous y elsewhere, so identity
    augmentation acts as a proximal term on non-shared slots.
    """
    anchor = np.where(state.consensus_mask > 0, state.y_hat, state.y)
    q = state.B.T @ (state.z - state.o) + state.rho_f * state.mask * anchor
    g = cho_solve(state.gain, q)
    if state.b_hat.shape[0]:
        g = g - state.b_hat.T @ (state.E @ g - state.z_e)
    anchored = (state.mask > 0) & (state.consensus_mask == 0)
    state.anchored_change = np.abs(g - state.y)[anchored]
    state.y = g

    o_new = soft_threshold(state.z - state.B @ state.y, state.thresholds)
    state.outlier_drift = float(np.max(np.abs(o_new - state.o))) if o_new.size else 0.0
    state.o = o_new


def outgoing_messages(state: Stage1AreaState) -> List[TieLineMessage]:
    messages = []
    for b in state.neighbors:
        values = {}
        for tie in state.view.tie_lines[b]:
            K, L = state.tie_values(tie)
            values[tie.branch] = (float(K), float(L))
        messages.append(TieLineMessage(sender=state.area, receiver=b, values=values))
    return messages


def stage1_residuals(own: np.ndarray, other: np.ndarray, bar: np.ndarray, bar_prev: np.ndarray) -> Stage1Residuals:
    return Stage1Residuals(r=0.5 * np.abs(own - other), d=np.abs(bar - bar_prev))


def consensus_exchange(state: Stage1AreaState, received: Dict[int, TieLineMessage]) -> Stage1Residuals:
    """
    Average both copies of every tie-line and advance y_hat on those slots.
    d also carries the last step on anchored slots (identity augmentation).
    """
    r_parts, d_parts = [], [state.anchored_change]
    for b in state.neighbors:
        message = received[b]
        for tie in state.view.tie_lines[b]:
            slots = state.layout.branch_slots([tie.branch])
            own = state.y[slots]
            other = np.asarray(message.values[tie.branch])
            bar = 0.5 * (own + other)
            res = stage1_residuals(own, other, bar, state.bar_prev[tie.branch])
            r_parts.append(res.r)
            d_parts.append(res.d)
            state.y_hat[slots] = state.y_hat[slots] + 2.0 * bar - state.bar_prev[tie.branch] - own
            state.bar_prev[tie.branch] = bar
    if not r_parts:
        return Stage1Residuals(np.zeros(0), np.concatenate(d_parts))
    return Stage1Residuals(np.concatenate(r_parts), np.concatenate(d_parts))


async def run_stage1(
    areas: Sequence[Stage1AreaState],
    bus: MessageBus,
    epsilon: float,
    max_iter: int,
    schedule_seed: Optional[int] = None,
) -> StageRun:
    """
    Iterate until delta <= epsilon.
    Exhausting max_iter returns a non-converged run.
    """
    bus.begin_stage(1)
    scheduler = random.Random(schedule_seed) if schedule_seed is not None else None
    trace: List[TraceRow] = []
    converged = False

    iteration = 0
    for iteration in range(1, max_iter + 1):
        order = list(areas)
        if scheduler is not None:
            scheduler.shuffle(order)
        await asyncio.gather(*(asyncio.to_thread(local_update, state) for state in order))

        for state in areas:
            for message in outgoing_messages(state):
                bus.send(message)
        bus.barrier()

        residuals = [consensus_exchange(state, bus.receive(state.area, state.neighbors)) for state in areas]
        r_inf = max(res.r_inf for res in residuals)
        d_inf = max(res.d_inf for res in residuals)
        drift = max(state.outlier_drift for state in areas)
        delta = max(r_inf, d_inf)
        trace.append(TraceRow(iteration, delta, r_inf, d_inf, {s.area: s.objective() for s in areas}))

        if iteration % LOG_EVERY == 0:
            logger.debug(f"Stage 1 iteration {iteration}: delta={delta:.3e}, outlier drift={drift:.3e}")
        if delta <= epsilon:
            converged = True
            break

    if converged:
        logger.info(f"Stage 1 converged in {iteration} iterations (delta={trace[-1].delta:.3e})")
    else:
        logger.warning(f"Stage 1 did not converge in {max_iter} iterations (delta={trace[-1].delta:.3e})")
    return StageRun(stage=1, converged=converged, iterations=iteration, trace=trace,
                    states={state.area: state for state in areas})
