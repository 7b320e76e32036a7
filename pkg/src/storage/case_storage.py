"""
Case Storage - MATPOWER parsing và canonical JSON documents
Mục đích: Turn case files, partition files and measurement sets into typed models and back

Formats:
- MATPOWER-style `.m` text (mpc.baseMVA, mpc.bus, mpc.gen, mpc.branch)
- Canonical JSON case schema (base_mva, reference_bus, buses, branches, optional areas)
- Partition JSON {"areas": {"<bus>": <area>}}
- Measurement-set JSON (MeasurementSet.to_dict)
- MATPOWER cases fetched from the public MATPOWER repository (fetch_case)
"""

import json
import math
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import requests

from ..models.measurement_models import MeasurementSet
from ..models.network_models import AreaPartition, Branch, Bus, NetworkCase
from ..utils.exceptions import (
    CaseFetchError,
    CaseParseError,
    CaseSchemaError,
    PartitionError,
    UnsupportedFeatureError,
)
from ..utils.logger import get_logger


logger = get_logger(__name__)


# ===== MATPOWER COLUMN LAYOUT =====

BUS_I, BUS_TYPE, PD, QD, GS, BS, BUS_AREA, VM, VA, BASE_KV, ZONE = range(11)
GEN_BUS, GEN_STATUS = 0, 7
F_BUS, T_BUS, BR_R, BR_X, BR_B, TAP, SHIFT, BR_STATUS = 0, 1, 2, 3, 4, 8, 9, 10

REF_BUS_TYPE = 3
AREA_COLUMNS = {"area": BUS_AREA, "zone": ZONE}

_SECTION_START = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")
_SCALAR = re.compile(r"^\s*([-+0-9.eE]+)\s*;?\s*$")


# ===== MATPOWER PARSER =====

def _split_sections(text: str) -> Dict[str, Any]:
    """
    Collect scalar and matrix sections; matrix rows keep their source line number
    """
    sections: Dict[str, Any] = {}
    current: Optional[str] = None
    rows: List[tuple] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("%", 1)[0].strip()
        if not line:
            continue

        if current is None:
            match = _SECTION_START.match(line)
            if not match:
                continue
            name, rest = match.group(1), match.group(2).strip()
            if rest.startswith("["):
                current, rows = name, []
                line = rest[1:]
            else:
                scalar = _SCALAR.match(rest)
                if scalar:
                    sections[name] = (lineno, float(scalar.group(1)))
                continue

        closed = "]" in line
        body = line.split("]", 1)[0]
        for chunk in body.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                rows.append((lineno, [float(tok) for tok in chunk.replace(",", " ").split()]))
            except ValueError:
                raise CaseParseError(f"non-numeric entry in mpc.{current}: {chunk!r}", line=lineno)
        if closed:
            sections[current] = rows
            current = None

    if current is not None:
        raise CaseParseError(f"section mpc.{current} is not terminated with ']'")
    return sections


def _require_rows(sections: Dict[str, Any], name: str, min_cols: int) -> List[tuple]:
    if name not in sections:
        raise CaseParseError(f"missing section mpc.{name}")
    rows = sections[name]
    for lineno, values in rows:
        if len(values) < min_cols:
            raise CaseParseError(
                f"mpc.{name} row has {len(values)} columns, expected at least {min_cols}", line=lineno
            )
    return rows


def parse_matpower_case(text: str, area_column: Optional[str] = None) -> NetworkCase:
    """
    Parse MATPOWER case text into a validated per-unit NetworkCase.

    Bus shunts aggregate the fixed shunt with half of the line charging of every
    incident in-service branch (divided by tap^2 on the from side). Angles are
    converted to radians relative to the reference bus.
    """
    sections = _split_sections(text)

    if "baseMVA" not in sections:
        raise CaseParseError("missing mpc.baseMVA")
    base_lineno, base_mva = sections["baseMVA"]
    if not base_mva > 0:
        raise CaseParseError("baseMVA must be positive", line=base_lineno)

    bus_rows = _require_rows(sections, "bus", ZONE + 1 if area_column == "zone" else VA + 1)
    branch_rows = _require_rows(sections, "branch", BR_B + 1)
    gen_rows = sections.get("gen", [])

    generator_buses = set()
    for lineno, values in gen_rows:
        in_service = len(values) <= GEN_STATUS or values[GEN_STATUS] > 0
        if in_service:
            generator_buses.add(int(values[GEN_BUS]))

    reference_bus = None
    fixed_shunts: Dict[int, tuple] = {}
    bus_records: Dict[int, Dict[str, Any]] = {}
    raw_areas: Dict[int, float] = {}
    for lineno, values in bus_rows:
        bus_id = int(values[BUS_I])
        if bus_id in bus_records:
            raise CaseParseError(f"duplicate bus {bus_id}", line=lineno)
        if int(values[BUS_TYPE]) == REF_BUS_TYPE:
            reference_bus = bus_id
        fixed_shunts[bus_id] = (values[GS] / base_mva, values[BS] / base_mva)
        bus_records[bus_id] = {
            "zero_injection": values[PD] == 0.0 and values[QD] == 0.0 and bus_id not in generator_buses,
            "v_true": values[VM],
            "theta_deg": values[VA],
        }
        if area_column is not None:
            raw_areas[bus_id] = values[AREA_COLUMNS[area_column]]

    if reference_bus is None:
        raise CaseParseError("no reference bus (type 3) in mpc.bus")

    charging = {bus_id: 0.0 for bus_id in bus_records}
    branches: List[Branch] = []
    for lineno, values in branch_rows:
        if len(values) > BR_STATUS and values[BR_STATUS] <= 0:
            continue
        if len(values) > SHIFT and values[SHIFT] != 0.0:
            raise UnsupportedFeatureError(
                f"line {lineno}: phase-shifting branch {int(values[F_BUS])}-{int(values[T_BUS])} "
                f"(shift {values[SHIFT]} deg) is not supported"
            )
        from_bus, to_bus = int(values[F_BUS]), int(values[T_BUS])
        if from_bus not in charging or to_bus not in charging:
            raise CaseParseError(f"branch {from_bus}-{to_bus} references an unknown bus", line=lineno)

        r, x, b_ch = values[BR_R], values[BR_X], values[BR_B]
        z2 = r * r + x * x
        if z2 == 0.0:
            raise CaseParseError(f"branch {from_bus}-{to_bus} has zero impedance", line=lineno)
        tap = values[TAP] if len(values) > TAP and values[TAP] != 0.0 else 1.0

        branches.append(Branch(from_bus=from_bus, to_bus=to_bus, g=r / z2, b=-x / z2, tap=tap, b_ch=b_ch))
        charging[from_bus] += b_ch / (2.0 * tap * tap)
        charging[to_bus] += b_ch / 2.0

    theta_ref = bus_records[reference_bus]["theta_deg"]
    buses = []
    for bus_id, record in bus_records.items():
        g_fixed, b_fixed = fixed_shunts[bus_id]
        buses.append(Bus(
            id=bus_id,
            g_sh=g_fixed,
            b_sh=b_fixed + charging[bus_id],
            is_zero_injection=record["zero_injection"],
            v_true=record["v_true"],
            theta_true=math.radians(record["theta_deg"] - theta_ref),
        ))

    areas = None
    if area_column is not None:
        # MATPOWER area/zone numbers need not be contiguous
        labels = {label: idx for idx, label in enumerate(sorted(set(raw_areas.values())), start=1)}
        areas = {bus_id: labels[label] for bus_id, label in raw_areas.items()}

    case = NetworkCase(
        buses=buses, branches=branches, reference_bus=reference_bus, base_mva=base_mva, areas=areas
    ).validate()
    logger.info(f"Parsed MATPOWER case: {case.n_buses} buses, {case.n_branches} branches")
    return case


# ===== CANONICAL JSON =====

_CASE_KEYS = ("reference_bus", "buses", "branches")
_BUS_KEYS = ("id", "v_true", "theta_true")
_BRANCH_KEYS = ("from", "to", "g", "b")


def _dump(document: Any) -> str:
    return json.dumps(document, sort_keys=True, indent=2) + "\n"


def _load_document(text: str, what: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise CaseSchemaError(f"{what} is not valid JSON: {e}")


def _check_records(records: Any, keys: tuple, what: str) -> None:
    if not isinstance(records, list):
        raise CaseSchemaError(f"'{what}' must be an array")
    for pos, record in enumerate(records):
        if not isinstance(record, dict):
            raise CaseSchemaError(f"{what}[{pos}] must be an object")
        missing = [key for key in keys if key not in record]
        if missing:
            raise CaseSchemaError(f"{what}[{pos}] is missing {', '.join(missing)}")


def save_case_json(case: NetworkCase) -> str:
    return _dump(json.loads(case.to_json()))


def load_case_json(text: str) -> NetworkCase:
    """Parse and validate a canonical JSON case document"""
    document = _load_document(text, "case document")
    if not isinstance(document, dict):
        raise CaseSchemaError("case document must be a JSON object")

    missing = [key for key in _CASE_KEYS if key not in document]
    if missing:
        raise CaseSchemaError(f"case document is missing {', '.join(missing)}")
    _check_records(document["buses"], _BUS_KEYS, "buses")
    _check_records(document["branches"], _BRANCH_KEYS, "branches")
    if document.get("areas") is not None and not isinstance(document["areas"], dict):
        raise CaseSchemaError("'areas' must map bus id to area index")

    try:
        case = NetworkCase.from_dict(document)
    except (TypeError, ValueError, KeyError) as e:
        raise CaseSchemaError(f"case document has malformed fields: {e}")
    return case.validate()


def read_case(path: Union[str, Path], area_column: Optional[str] = None) -> NetworkCase:
    """Load a `.m` or `.json` case by suffix"""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".m":
        return parse_matpower_case(text, area_column=area_column)
    case = load_case_json(text)
    logger.info(f"Loaded case {path.name}: {case.n_buses} buses, {case.n_branches} branches")
    return case


# ===== DOWNLOADS =====

MATPOWER_CASE_URL = "https://raw.githubusercontent.com/MATPOWER/matpower/master/data/{name}.m"


def fetch_case(name: str, dest_dir: Union[str, Path], url: Optional[str] = None, timeout: float = 30.0) -> Path:
    """
    Download MATPOWER `<name>.m` into dest_dir; the text must parse before it is written.
    An existing file is kept as is.
    """
    path = Path(dest_dir) / f"{name}.m"
    if path.exists():
        logger.info(f"{path} already present, skipping download")
        return path

    source = url or MATPOWER_CASE_URL.format(name=name)
    try:
        response = requests.get(source, timeout=timeout)
        response.raise_for_status()
    except requests.RequestException as e:
        raise CaseFetchError(f"could not download {source}: {e}")

    try:
        case = parse_matpower_case(response.text)
    except ValueError as e:
        raise CaseFetchError(f"{source} is not a usable MATPOWER case: {e}")

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(response.text, encoding="utf-8")
    logger.info(f"Fetched {name}: {case.n_buses} buses, {case.n_branches} branches -> {path}")
    return path


# ===== PARTITIONS =====

def partition_from_mapping(case: NetworkCase, mapping: Dict[Any, Any]) -> AreaPartition:
    assignment = {}
    for key, area in mapping.items():
        try:
            assignment[int(key)] = int(area)
        except (TypeError, ValueError):
            raise PartitionError(f"invalid assignment {key!r} -> {area!r}")

    unknown = sorted(set(assignment) - set(case.bus_ids))
    if unknown:
        raise PartitionError(f"partition references unknown buses {unknown}")
    unassigned = [bus_id for bus_id in case.bus_ids if bus_id not in assignment]
    if unassigned:
        raise PartitionError(f"buses {unassigned} are not assigned to an area")

    used = set(assignment.values())
    expected = set(range(1, max(used) + 1))
    if used != expected:
        raise PartitionError(f"areas must be numbered 1..R without gaps; empty areas {sorted(expected - used)}")
    return AreaPartition(assignment=assignment)


def load_partition_json(text: str, case: NetworkCase) -> AreaPartition:
    document = _load_document(text, "partition document")
    if not isinstance(document, dict) or not isinstance(document.get("areas"), dict):
        raise PartitionError("partition document must contain an 'areas' object")
    return partition_from_mapping(case, document["areas"])


def save_partition_json(partition: AreaPartition) -> str:
    return _dump({"areas": {str(bus): area for bus, area in sorted(partition.assignment.items())}})


def read_partition(path: Optional[Union[str, Path]], case: NetworkCase) -> AreaPartition:
    """
    Partition file if given, else the case's embedded area map, else a single area
    """
    if path is not None:
        return load_partition_json(Path(path).read_text(encoding="utf-8"), case)
    if case.areas:
        return partition_from_mapping(case, case.areas)
    return AreaPartition.single_area(case)


# ===== MEASUREMENT SETS & REPORTS =====

def save_measurements_json(ms: MeasurementSet) -> str:
    return _dump(json.loads(ms.to_json()))


def load_measurements_json(text: str) -> MeasurementSet:
    document = _load_document(text, "measurement document")
    try:
        return MeasurementSet.from_dict(document)
    except (TypeError, ValueError, KeyError) as e:
        raise CaseSchemaError(f"measurement document has malformed fields: {e}")


def write_json(path: Union[str, Path], document: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dump(document), encoding="utf-8")
    return path
