"""
Pytest configuration and fixtures
"""

from pathlib import Path

import pytest

from src.models.estimation_models import ExperimentConfig
from src.models.measurement_models import BadDataSpec, NoiseSpec
from src.models.network_models import AreaPartition, Branch, Bus, NetworkCase
from src.services.measurement_service import build_scenario
from src.storage.case_storage import fetch_case, read_case, read_partition
from src.utils.exceptions import CaseFetchError
from src.utils.config import reset_config


DATA_DIR = Path(__file__).resolve().parent.parent / "data"
CASE14_PATH = DATA_DIR / "cases" / "case14.m"
PARTITION14_PATH = DATA_DIR / "partitions" / "ieee14_2area.json"
CASE118_PATH = DATA_DIR / "cases" / "case118.m"

CORRUPTED_TARGETS = ["p_injection:5", "v_squared:14", "p_flow:5-6"]


def related_u_rows(case: NetworkCase, label: str) -> set:
    """Stage-2 u rows that absorb a gross error on the meter `label` when stage 1 passes it on"""
    kind, location = label.split(":")[:2]
    if kind.endswith("_flow"):
        return {f"alpha_branch:{location}", f"theta_branch:{location}"}
    bus = int(location)
    rows = {f"alpha:{bus}"}
    if kind.endswith("_injection"):
        for branch in case.branches:
            if bus in (branch.from_bus, branch.to_bus):
                rows |= {f"alpha_branch:{branch.from_bus}-{branch.to_bus}",
                         f"theta_branch:{branch.from_bus}-{branch.to_bus}"}
    return rows


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: statistical tests averaged over many seeds")


def series_admittance(r: float, x: float):
    z2 = r * r + x * x
    return r / z2, -x / z2


# ===== TOY CASES =====

@pytest.fixture
def two_bus_case():
    """1 -- 2, g=1, b=-10, no shunts; bus 2 at (0.98, -0.05)"""
    return NetworkCase(
        buses=[Bus(id=1, v_true=1.0, theta_true=0.0), Bus(id=2, v_true=0.98, theta_true=-0.05)],
        branches=[Branch(from_bus=1, to_bus=2, g=1.0, b=-10.0)],
        reference_bus=1,
    ).validate()


@pytest.fixture
def three_bus_case():
    """Triangle 1-2-3 with a tap on 2-3 and line charging on 1-3; bus 3 is a zero-injection bus"""
    g12, b12 = series_admittance(0.02, 0.06)
    g13, b13 = series_admittance(0.05, 0.19)
    g23, b23 = series_admittance(0.0, 0.25)
    return NetworkCase(
        buses=[
            Bus(id=1, v_true=1.04, theta_true=0.0),
            Bus(id=2, v_true=1.01, theta_true=-0.04),
            Bus(id=3, b_sh=0.025, is_zero_injection=True, v_true=0.99, theta_true=-0.07),
        ],
        branches=[
            Branch(from_bus=1, to_bus=2, g=g12, b=b12),
            Branch(from_bus=1, to_bus=3, g=g13, b=b13, b_ch=0.05),
            Branch(from_bus=2, to_bus=3, g=g23, b=b23, tap=0.97),
        ],
        reference_bus=1,
    ).validate()


@pytest.fixture
def three_bus_partition():
    return AreaPartition(assignment={1: 1, 2: 1, 3: 2})


# ===== IEEE 14-BUS =====

@pytest.fixture(scope="session")
def case14():
    return read_case(CASE14_PATH)


@pytest.fixture(scope="session")
def partition14(case14):
    return read_partition(PARTITION14_PATH, case14)


@pytest.fixture
def noiseless_ms14(case14):
    """Full plan, no noise, no bad data"""
    return build_scenario(case14, "full", NoiseSpec(0.0, 0.0, 0.0), BadDataSpec())


@pytest.fixture
def corrupted_config():
    """Three corrupted meters on the 2-area 14-bus system: boundary injection, internal V, tie-line flow"""
    return ExperimentConfig(
        case_path=str(CASE14_PATH),
        partition_path=str(PARTITION14_PATH),
        noise=NoiseSpec(seed=7),
        bad_data=BadDataSpec(targets=list(CORRUPTED_TARGETS), seed=7),
        seed=7,
    ).validate()


@pytest.fixture(scope="session")
def case118():
    """MATPOWER case118, fetched once into data/cases; skips when offline"""
    try:
        fetch_case("case118", CASE118_PATH.parent)
    except CaseFetchError as e:
        pytest.skip(f"case118 unavailable: {e}")
    return read_case(CASE118_PATH)


# ===== ENVIRONMENT =====

@pytest.fixture(autouse=True)
def clean_config(monkeypatch):
    """Every test starts from built-in defaults"""
    for key in ("DRBSE_LAMBDA", "DRBSE_RHO_F", "DRBSE_RHO_S", "DRBSE_EPSILON", "DRBSE_MAX_ITER",
                "DRBSE_AUGMENTATION", "DRBSE_LOG_LEVEL", "DRBSE_OUTPUT_DIR"):
        monkeypatch.delenv(key, raising=False)
    reset_config()
    yield
    reset_config()
