"""
Network Data Models - buses, branches, cases và area partitions
Mục đích: Immutable grid description shared read-only by every area worker

Core Entities:
- Bus, Branch, NetworkCase (physical grid, per-unit)
- AreaPartition (bus -> area map), TieLine, AreaView (per-area bookkeeping)
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np
from dataclasses_json import config, dataclass_json
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..utils.exceptions import CaseValidationError, PartitionError


# =================== CASE ENTITIES ===================

@dataclass_json
@dataclass(frozen=True)
class Bus:
    """Bus with aggregated shunt admittance and solved (true) voltage"""
    id: int
    g_sh: float = 0.0
    b_sh: float = 0.0
    is_zero_injection: bool = field(default=False, metadata=config(field_name="zero_injection"))
    v_true: float = 1.0
    theta_true: float = 0.0


@dataclass_json
@dataclass(frozen=True)
class Branch:
    """
    Series branch of the pi-model, oriented from -> to.
    `tap` is the off-nominal ratio on the from side; `b_ch` the total line charging.
    """
    from_bus: int = field(metadata=config(field_name="from"))
    to_bus: int = field(metadata=config(field_name="to"))
    g: float
    b: float
    tap: float = 1.0
    b_ch: float = 0.0

    def far_end(self, bus: int) -> int:
        return self.to_bus if bus == self.from_bus else self.from_bus

    def label(self) -> str:
        return f"{self.from_bus}-{self.to_bus}"


@dataclass_json
@dataclass(frozen=True)
class NetworkCase:
    """Physical grid: buses, branches, reference bus, optional embedded area map"""
    buses: List[Bus]
    branches: List[Branch]
    reference_bus: int
    base_mva: float = 100.0
    areas: Optional[Dict[int, int]] = None

    @cached_property
    def bus_ids(self) -> List[int]:
        return [bus.id for bus in self.buses]

    @cached_property
    def bus_position(self) -> Dict[int, int]:
        return {bus.id: pos for pos, bus in enumerate(self.buses)}

    @cached_property
    def incident_branches(self) -> Dict[int, List[int]]:
        """bus id -> indices of branches touching it, in branch order"""
        incident: Dict[int, List[int]] = {bus.id: [] for bus in self.buses}
        for k, branch in enumerate(self.branches):
            incident[branch.from_bus].append(k)
            incident[branch.to_bus].append(k)
        return incident

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self.bus_position[bus_id]]

    def true_voltages(self) -> Tuple[np.ndarray, np.ndarray]:
        """(V, theta) arrays in bus order"""
        v = np.array([bus.v_true for bus in self.buses], dtype=float)
        theta = np.array([bus.theta_true for bus in self.buses], dtype=float)
        return v, theta

    def find_branch(self, from_bus: int, to_bus: int) -> int:
        """Index of the first branch joining the two buses (either orientation)"""
        for k, branch in enumerate(self.branches):
            if (branch.from_bus, branch.to_bus) in ((from_bus, to_bus), (to_bus, from_bus)):
                return k
        raise KeyError(f"no branch between buses {from_bus} and {to_bus}")

    def validate(self) -> "NetworkCase":
        """
        Check structural invariants, return self so calls can be chained
        """
        seen = set()
        for bus in self.buses:
            if bus.id in seen:
                raise CaseValidationError(f"duplicate bus id {bus.id}")
            seen.add(bus.id)
            if not bus.v_true > 0:
                raise CaseValidationError(f"bus {bus.id}: v_true must be positive, got {bus.v_true}")

        if self.reference_bus not in seen:
            raise CaseValidationError(f"reference bus {self.reference_bus} does not exist")

        for k, branch in enumerate(self.branches):
            if branch.from_bus not in seen or branch.to_bus not in seen:
                raise CaseValidationError(
                    f"branch {k} ({branch.label()}) references an unknown bus"
                )
            if branch.from_bus == branch.to_bus:
                raise CaseValidationError(f"branch {k} is a self-loop at bus {branch.from_bus}")
            if branch.g == 0.0 and branch.b == 0.0:
                raise CaseValidationError(f"branch {k} ({branch.label()}) has zero series admittance")
            if not branch.tap > 0:
                raise CaseValidationError(f"branch {k} ({branch.label()}) tap must be positive")

        if self.n_buses > 1 and count_components(self, self.bus_ids, range(self.n_branches)) != 1:
            raise CaseValidationError("network is not connected")

        return self


def count_components(case: NetworkCase, buses: List[int], branch_indices) -> int:
    """Connected components of the subgraph induced by `buses` and `branch_indices`"""
    local = {bus: pos for pos, bus in enumerate(buses)}
    rows, cols = [], []
    for k in branch_indices:
        branch = case.branches[k]
        if branch.from_bus in local and branch.to_bus in local:
            rows.append(local[branch.from_bus])
            cols.append(local[branch.to_bus])
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(buses), len(buses)))
    n_components, _ = connected_components(graph, directed=False)
    return n_components


# =================== PARTITION ENTITIES ===================

@dataclass_json
@dataclass(frozen=True)
class AreaPartition:
    """Assignment bus id -> area index in 1..R"""
    assignment: Dict[int, int]

    @property
    def R(self) -> int:
        return max(self.assignment.values()) if self.assignment else 0

    def area_of(self, bus_id: int) -> int:
        try:
            return self.assignment[bus_id]
        except KeyError:
            raise PartitionError(f"bus {bus_id} is not assigned to an area")

    def buses_of(self, area: int) -> List[int]:
        return sorted(bus for bus, a in self.assignment.items() if a == area)

    @classmethod
    def single_area(cls, case: NetworkCase) -> "AreaPartition":
        return cls(assignment={bus_id: 1 for bus_id in case.bus_ids})


@dataclass(frozen=True)
class TieLine:
    """Tie-line normalised so that `low_bus` lies in the lower-indexed area"""
    branch: int
    low_area: int
    high_area: int
    low_bus: int
    high_bus: int

    def other_area(self, area: int) -> int:
        return self.high_area if area == self.low_area else self.low_area

    def bus_in(self, area: int) -> int:
        return self.low_bus if area == self.low_area else self.high_bus


@dataclass(frozen=True)
class AreaView:
    """
    Per-area bookkeeping.
    buses = N_a, internal_branches = E_a, tie_lines[b] = Gamma_{a,b},
    neighbors = Delta_a, owned_tie_lines[b] = Gamma-hat_{a,b}, boundary_copies = N-hat_a^BB
    """
    area: int
    buses: Tuple[int, ...]
    internal_branches: Tuple[int, ...]
    tie_lines: Dict[int, Tuple[TieLine, ...]]
    neighbors: Tuple[int, ...]
    owned_tie_lines: Dict[int, Tuple[TieLine, ...]]
    boundary_copies: Tuple[int, ...]

    @cached_property
    def all_tie_lines(self) -> Tuple[TieLine, ...]:
        return tuple(tl for b in self.neighbors for tl in self.tie_lines[b])

    @cached_property
    def owned_ties(self) -> Tuple[TieLine, ...]:
        return tuple(tl for b in sorted(self.owned_tie_lines) for tl in self.owned_tie_lines[b])

    @cached_property
    def stage1_branches(self) -> Tuple[int, ...]:
        """E_a followed by every touched tie-line (local copies of y)"""
        return self.internal_branches + tuple(tl.branch for tl in self.all_tie_lines)

    @cached_property
    def owned_branches(self) -> Tuple[int, ...]:
        """E_a followed by owned tie-lines (elements of the local u-tilde)"""
        return self.internal_branches + tuple(tl.branch for tl in self.owned_ties)

    @cached_property
    def stage2_buses(self) -> Tuple[int, ...]:
        """N_a followed by the extended boundary copies"""
        return self.buses + self.boundary_copies

    def owns_bus(self, bus_id: int) -> bool:
        return bus_id in self.buses


@dataclass(frozen=True)
class ConsensusGroup:
    """M_i: every area holding a copy of bus i (home area included)"""
    bus: int
    home_area: int
    members: Tuple[int, ...]

    @property
    def m(self) -> int:
        return len(self.members)
