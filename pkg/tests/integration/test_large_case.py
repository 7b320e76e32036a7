"""
118-bus runs; the case is fetched into data/cases on first use and the tests skip when offline
"""

import numpy as np
import pytest

from src.estimation.centralized import centralized_rbse
from src.models.estimation_models import ExperimentConfig
from src.models.measurement_models import BadDataSpec, NoiseSpec
from src.services.measurement_service import build_scenario
from src.services.partition_service import build_partition
from src.services.pipeline_service import PipelineService
from src.services.sweep_service import SweepService
from src.storage.case_storage import read_case, read_partition, save_partition_json

from tests.conftest import CASE118_PATH


@pytest.fixture
def case118_areas(case118):
    case = read_case(CASE118_PATH, area_column="area")
    return case, read_partition(None, case)


def test_case_size(case118):
    assert case118.n_buses == 118
    assert case118.n_branches == 186


def test_centralized_noiseless_exactness(case118):
    ms = build_scenario(case118, "full", NoiseSpec(0.0, 0.0, 0.0), BadDataSpec())
    estimate = centralized_rbse(case118, ms)
    V_true, theta_true = case118.true_voltages()
    assert np.max(np.abs(estimate.V - V_true)) < 1e-6
    assert np.max(np.abs(estimate.theta - theta_true)) < 1e-6


def test_partition_from_area_column(case118_areas):
    case, partition = case118_areas
    views = build_partition(case, partition)
    assert partition.R == len(views) >= 2
    assert sum(len(view.buses) for view in views) == case.n_buses


@pytest.mark.slow
def test_distributed_matches_centralized(case118_areas):
    case, partition = case118_areas
    config = ExperimentConfig(case_path=str(CASE118_PATH), epsilon=1e-6, max_iter=20000, force=True, seed=1)
    result = PipelineService().run_drbse(config, case=case, partition=partition)
    assert result.report.converged
    central = centralized_rbse(case, result.measurements, config.lambda_)
    assert np.max(np.abs(result.report.V - central.V)) < 1e-3
    assert np.max(np.abs(result.report.theta - central.theta)) < 1e-3


@pytest.mark.slow
def test_noiseless_distributed_estimate(case118_areas):
    case, partition = case118_areas
    config = ExperimentConfig(case_path=str(CASE118_PATH), noise=NoiseSpec(0.0, 0.0, 0.0), bad_data=BadDataSpec())
    report = PipelineService().run_drbse(config, case=case, partition=partition).report
    assert report.converged
    assert report.s_v < 1e-4
    assert report.s_theta < 1e-4


@pytest.mark.slow
def test_five_percent_bad_data_converges(case118_areas):
    case, partition = case118_areas
    config = ExperimentConfig(case_path=str(CASE118_PATH), noise=NoiseSpec(seed=3),
                              bad_data=BadDataSpec(fraction=0.05, seed=3), seed=3)
    result = PipelineService().run_drbse(config, case=case, partition=partition)
    assert result.report.converged
    for stage in result.report.stages:
        assert stage["iterations"] <= 75


@pytest.mark.slow
def test_sweep_separates_wls_from_drbse(case118_areas, tmp_path):
    case, partition = case118_areas
    partition_path = tmp_path / "case118_areas.json"
    partition_path.write_text(save_partition_json(partition), encoding="utf-8")
    config = ExperimentConfig(case_path=str(CASE118_PATH), partition_path=str(partition_path), seed=5, force=True)

    summary = SweepService().sweep_bad_data(config, [0.0, 0.05], trials=10).summary
    mean_s_v = {(row.method, row.fraction): row.mean_s_v for row in summary.itertuples()}

    clean = [mean_s_v[(method, 0.0)] for method in ("drbse", "wls", "wls_lnrt")]
    assert max(clean) <= 2 * min(clean)
    assert mean_s_v[("wls", 0.05)] >= 2 * mean_s_v[("drbse", 0.05)]
