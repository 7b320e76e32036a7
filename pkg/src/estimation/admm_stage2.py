"""
Stage-2 ADMM - per-area (alpha, theta) estimation with boundary-bus consensus
Mục đích: Estimate x_a over N_a plus boundary copies from the locally transformed u_a

Consensus slots are per (bus, component); the reference bus has no theta slot.
x_bar_i averages the m_i copies held by the areas in M_i.
"""

import asyncio
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve

from .bilinear import (
    IntermediateLayout,
    StateLayout,
    build_stage2_matrix,
    factor_gain,
    robust_objective,
    soft_threshold,
    state_from_x,
)
from ..models.estimation_models import BoundaryBusMessage, StageRun, TraceRow
from ..models.network_models import AreaView, ConsensusGroup, NetworkCase
from ..services.message_bus import MessageBus
from ..utils.exceptions import ObservabilityError
from ..utils.logger import get_logger


logger = get_logger(__name__)

LOG_EVERY = 25


@dataclass
class Stage2Residuals:
    r: np.ndarray
    d: np.ndarray

    @property
    def r_inf(self) -> float:
        return float(np.max(self.r)) if self.r.size else 0.0

    @property
    def d_inf(self) -> float:
        return float(np.max(self.d)) if self.d.size else 0.0


@dataclass
class Stage2AreaState:
    """Local x_a, outliers o_a^s, auxiliary x_hat and the cached gain of one area"""
    area: int
    view: AreaView
    u_layout: IntermediateLayout
    x_layout: StateLayout
    C: np.ndarray
    u_tilde: np.ndarray
    threshold: float
    rho_s: float
    mask: np.ndarray
    consensus_mask: np.ndarray
    weights: np.ndarray
    gain: tuple
    shared: Dict[int, ConsensusGroup]
    x: np.ndarray
    o: np.ndarray
    x_hat: np.ndarray
    bar_prev: Dict[int, np.ndarray] = field(default_factory=dict)
    outlier_drift: float = 0.0
    anchored_change: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def copy_of(self, bus: int) -> np.ndarray:
        return self.x[self.x_layout.bus_slots(bus)]

    @property
    def peers(self) -> Tuple[int, ...]:
        """Areas this one exchanges boundary copies with"""
        return tuple(sorted({a for group in self.shared.values() for a in group.members if a != self.area}))

    def objective(self) -> float:
        return robust_objective(self.u_tilde - self.C @ self.x, self.o, self.threshold)

    def raw_outliers(self) -> np.ndarray:
        """o in u units (the rows are weighted)"""
        return self.o / self.weights

    def home_state(self) -> Tuple[np.ndarray, np.ndarray]:
        """(V, theta) of the area's own buses, in view order"""
        V, theta = state_from_x(self.x, self.x_layout)
        n = len(self.view.buses)
        return V[:n], theta[:n]


def init_stage2(
    case: NetworkCase,
    view: AreaView,
    u_tilde: np.ndarray,
    u_layout: IntermediateLayout,
    groups: Dict[int, ConsensusGroup],
    threshold: float,
    rho_s: float,
    augmentation: str = "identity",
    weights: Optional[np.ndarray] = None,
) -> Stage2AreaState:
    """
    Factor G = C^T W^2 C + rho_s D once; flat start x = 0, o = 0, x_hat = 0.
    Rows of C and u are multiplied by `weights` (default 1); threshold applies to weighted rows.
    """
    x_layout = StateLayout.for_area(case, view)
    w = np.ones(u_layout.dimension) if weights is None else np.asarray(weights, dtype=float)
    C = w[:, None] * build_stage2_matrix(u_layout, x_layout).matrix.toarray()
    n = x_layout.dimension

    shared = {bus: group for bus, group in groups.items() if view.area in group.members}
    consensus_mask = np.zeros(n)
    for bus in shared:
        consensus_mask[x_layout.bus_slots(bus)] = 1.0
    mask = np.ones(n) if augmentation == "identity" else consensus_mask.copy()

    try:
        gain = factor_gain(C.T @ C + rho_s * np.diag(mask))
    except LinAlgError:
        raise ObservabilityError(
            f"area {view.area}: angles are not observable from the local rows and boundary copies"
        )

    x = x_layout.flat_start()
    bar_prev = {bus: np.zeros(len(x_layout.bus_slots(bus))) for bus in shared}
    logger.debug(f"Area {view.area} stage 2: {C.shape[0]} rows, {len(shared)} shared buses, gain {n}x{n}")
    return Stage2AreaState(
        area=view.area,
        view=view,
        u_layout=u_layout,
        x_layout=x_layout,
        C=C,
        u_tilde=w * np.asarray(u_tilde, dtype=float),
        threshold=threshold,
        rho_s=rho_s,
        mask=mask,
        consensus_mask=consensus_mask,
        weights=w,
        gain=gain,
        shared=shared,
        x=x,
        o=np.zeros(C.shape[0]),
        x_hat=np.zeros(n),
        bar_prev=bar_prev,
    )


def local_update_s2(state: Stage2AreaState) -> None:
    """x = G^-1 (C^T (u - o) + rho_s D anchor), then o = S(u - C x); anchor as in stage 1"""
    anchor = np.where(state.consensus_mask > 0, state.x_hat, state.x)
    q = state.C.T @ (state.u_tilde - state.o) + state.rho_s * state.mask * anchor
    x_new = cho_solve(state.gain, q)
    anchored = (state.mask > 0) & (state.consensus_mask == 0)
    state.anchored_change = np.abs(x_new - state.x)[anchored]
    state.x = x_new

    o_new = soft_threshold(state.u_tilde - state.C @ state.x, state.threshold)
    state.outlier_drift = float(np.max(np.abs(o_new - state.o))) if o_new.size else 0.0
    state.o = o_new


def outgoing_messages_s2(state: Stage2AreaState) -> List[BoundaryBusMessage]:
    per_receiver: Dict[int, Dict[int, Tuple[float, ...]]] = {}
    for bus, group in state.shared.items():
        values = tuple(float(v) for v in state.copy_of(bus))
        for member in group.members:
            if member != state.area:
                per_receiver.setdefault(member, {})[bus] = values
    return [
        BoundaryBusMessage(sender=state.area, receiver=receiver, values=values)
        for receiver, values in sorted(per_receiver.items())
    ]


def consensus_exchange_s2(state: Stage2AreaState, received: Dict[int, BoundaryBusMessage]) -> Stage2Residuals:
    """x_bar_i = mean over M_i (summed in area order); x_hat advances on shared slots only"""
    r_parts, d_parts = [], [state.anchored_change]
    for bus, group in state.shared.items():
        own = state.copy_of(bus)
        copies = [own if member == state.area else np.asarray(received[member].values[bus])
                  for member in group.members]
        bar = np.sum(copies, axis=0) / group.m

        r_parts.append(0.5 * np.abs(own - bar))
        d_parts.append(np.abs(bar - state.bar_prev[bus]))

        slots = state.x_layout.bus_slots(bus)
        state.x_hat[slots] = state.x_hat[slots] + 2.0 * bar - state.bar_prev[bus] - own
        state.bar_prev[bus] = bar

    if not r_parts:
        return Stage2Residuals(np.zeros(0), np.concatenate(d_parts))
    return Stage2Residuals(np.concatenate(r_parts), np.concatenate(d_parts))


async def run_stage2(
    areas: Sequence[Stage2AreaState],
    bus: MessageBus,
    epsilon: float,
    max_iter: int,
    schedule_seed: Optional[int] = None,
) -> StageRun:
    """Same loop skeleton and stopping rule as stage 1"""
    bus.begin_stage(2)
    scheduler = random.Random(schedule_seed) if schedule_seed is not None else None
    trace: List[TraceRow] = []
    converged = False

    iteration = 0
    for iteration in range(1, max_iter + 1):
        order = list(areas)
        if scheduler is not None:
            scheduler.shuffle(order)
        await asyncio.gather(*(asyncio.to_thread(local_update_s2, state) for state in order))

        for state in areas:
            for message in outgoing_messages_s2(state):
                bus.send(message)
        bus.barrier()

        residuals = [consensus_exchange_s2(state, bus.receive(state.area, state.peers)) for state in areas]
        r_inf = max(res.r_inf for res in residuals)
        d_inf = max(res.d_inf for res in residuals)
        drift = max(state.outlier_drift for state in areas)
        delta = max(r_inf, d_inf)
        trace.append(TraceRow(iteration, delta, r_inf, d_inf, {s.area: s.objective() for s in areas}))

        if iteration % LOG_EVERY == 0:
            logger.debug(f"Stage 2 iteration {iteration}: delta={delta:.3e}, outlier drift={drift:.3e}")
        if delta <= epsilon:
            converged = True
            break

    if converged:
        logger.info(f"Stage 2 converged in {iteration} iterations (delta={trace[-1].delta:.3e})")
    else:
        logger.warning(f"Stage 2 did not converge in {max_iter} iterations (delta={trace[-1].delta:.3e})")
    return StageRun(stage=2, converged=converged, iterations=iteration, trace=trace,
                    states={state.area: state for state in areas})
