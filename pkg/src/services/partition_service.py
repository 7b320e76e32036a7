"""
Partition Service - area views, tie-line ownership và incidence structures
Mục đích: Per-area bookkeeping for the two ADMM stages

Conventions:
- Tie-line (i, j) is owned by the lower-indexed area of its two endpoints
- Boundary copies: far end of every owned tie-line ("owned"), or of every
  touched tie-line ("touched")
- Consensus group M_i = home area of bus i + every area holding a copy of i
"""

from typing import Dict, List, Tuple

import numpy as np
from scipy.sparse import csr_matrix

from ..models.network_models import (
    AreaPartition,
    AreaView,
    ConsensusGroup,
    NetworkCase,
    TieLine,
    count_components,
)
from ..utils.exceptions import PartitionError
from ..utils.logger import get_logger


logger = get_logger(__name__)


def build_partition(
    case: NetworkCase,
    partition: AreaPartition,
    boundary_rule: str = "owned",
) -> List[AreaView]:
    """
    Build one AreaView per area, ordered by area index
    """
    if boundary_rule not in ("owned", "touched"):
        raise PartitionError(f"unknown boundary rule {boundary_rule!r}")

    for bus_id in case.bus_ids:
        partition.area_of(bus_id)

    R = partition.R
    members: Dict[int, List[int]] = {a: [] for a in range(1, R + 1)}
    for bus_id in case.bus_ids:
        members[partition.area_of(bus_id)].append(bus_id)

    internal: Dict[int, List[int]] = {a: [] for a in members}
    ties: Dict[int, Dict[int, List[TieLine]]] = {a: {} for a in members}
    for k, branch in enumerate(case.branches):
        a_from, a_to = partition.area_of(branch.from_bus), partition.area_of(branch.to_bus)
        if a_from == a_to:
            internal[a_from].append(k)
            continue
        if a_from < a_to:
            tie = TieLine(k, a_from, a_to, branch.from_bus, branch.to_bus)
        else:
            tie = TieLine(k, a_to, a_from, branch.to_bus, branch.from_bus)
        ties[tie.low_area].setdefault(tie.high_area, []).append(tie)
        ties[tie.high_area].setdefault(tie.low_area, []).append(tie)

    views = []
    for a in range(1, R + 1):
        if not members[a]:
            raise PartitionError(f"area {a} has no buses")

        tie_lines = {b: tuple(ties[a][b]) for b in sorted(ties[a])}
        owned = {b: (tie_lines[b] if a < b else ()) for b in tie_lines}

        copies: List[int] = []
        for b in sorted(tie_lines):
            for tie in tie_lines[b]:
                if a < b or boundary_rule == "touched":
                    far = tie.bus_in(b)
                    if far not in copies:
                        copies.append(far)

        incident = [tie.branch for b in tie_lines for tie in tie_lines[b]]
        scope = members[a] + [tie.bus_in(b) for b in tie_lines for tie in tie_lines[b]]
        scope = list(dict.fromkeys(scope))
        if count_components(case, scope, internal[a] + incident) != 1:
            raise PartitionError(f"area {a} is not connected (internal branches plus incident tie-lines)")

        views.append(AreaView(
            area=a,
            buses=tuple(members[a]),
            internal_branches=tuple(internal[a]),
            tie_lines=tie_lines,
            neighbors=tuple(sorted(tie_lines)),
            owned_tie_lines=owned,
            boundary_copies=tuple(copies),
        ))

    n_ties = sum(len(tl) for view in views for tl in view.owned_tie_lines.values())
    logger.info(f"Partition built: {R} areas, {n_ties} tie-lines, boundary rule '{boundary_rule}'")
    return views


def consensus_groups(views: List[AreaView], partition: AreaPartition) -> Dict[int, ConsensusGroup]:
    """Groups of every bus that has at least one boundary copy"""
    holders: Dict[int, List[int]] = {}
    for view in views:
        for bus_id in view.boundary_copies:
            holders.setdefault(bus_id, []).append(view.area)

    groups = {}
    for bus_id in sorted(holders):
        home = partition.area_of(bus_id)
        groups[bus_id] = ConsensusGroup(bus_id, home, tuple(sorted({home, *holders[bus_id]})))
    return groups


def incidence_matrices(case: NetworkCase) -> Tuple[csr_matrix, csr_matrix]:
    """
    Node-branch incidence A (+1 at from row, -1 at to row) and the reduced A_r
    without the reference-bus row. |A| gives the alpha sums of each branch.
    """
    rows, cols, vals = [], [], []
    for k, branch in enumerate(case.branches):
        rows += [case.bus_position[branch.from_bus], case.bus_position[branch.to_bus]]
        cols += [k, k]
        vals += [1.0, -1.0]
    A = csr_matrix((vals, (rows, cols)), shape=(case.n_buses, case.n_branches))

    keep = [pos for pos, bus_id in enumerate(case.bus_ids) if bus_id != case.reference_bus]
    A_r = A[keep, :]
    return A, A_r


def absolute_incidence(case: NetworkCase) -> csr_matrix:
    A, _ = incidence_matrices(case)
    return abs(A).tocsr()


def partition_summary(views: List[AreaView]) -> List[Dict[str, int]]:
    """Counts per area, for logs and reports"""
    return [
        {
            "area": view.area,
            "buses": len(view.buses),
            "internal_branches": len(view.internal_branches),
            "tie_lines": len(view.all_tie_lines),
            "owned_tie_lines": len(view.owned_ties),
            "boundary_copies": len(view.boundary_copies),
        }
        for view in views
    ]


def max_copy_spread(values: Dict[int, Dict[int, np.ndarray]]) -> float:
    """
    Largest disagreement between copies of the same bus.
    values[bus][area] -> component vector of that area's copy.
    """
    spread = 0.0
    for copies in values.values():
        stacked = np.vstack(list(copies.values()))
        if len(stacked) > 1:
            spread = max(spread, float(np.max(stacked.max(axis=0) - stacked.min(axis=0))))
    return spread
