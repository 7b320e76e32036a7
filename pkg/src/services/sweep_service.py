"""
Sweep Service - Monte Carlo bad-data sweeps
Mục đích: S_V / S_theta of D-RBSE, WLS và WLS+LNRT versus the fraction of corrupted meters

Seeds: trial t of every fraction uses trial_seeds(master, t), so all fractions of one trial share
the same noise draw and differ only in the corruption.
"""

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .measurement_service import build_scenario, trial_seeds
from .pipeline_service import METHODS, PipelineService, compute_metrics
from ..estimation.centralized import gauss_newton_wls, wls_lnrt
from ..models.estimation_models import ExperimentConfig
from ..models.measurement_models import BadDataSpec
from ..utils.exceptions import ConfigError, DrbseError
from ..utils.logger import get_logger


TRIAL_COLUMNS = ["fraction", "trial", "method", "s_v", "s_theta", "converged", "error"]
SUMMARY_COLUMNS = ["method", "fraction", "mean_s_v", "mean_s_theta", "trials", "failures"]


@dataclass
class SweepResult:
    trials: pd.DataFrame
    summary: pd.DataFrame


class SweepService:
    """
    Bad-data sweep runner
    SRP: Chỉ lo trial bookkeeping; estimation goes through PipelineService
    """

    def __init__(self, pipeline: Optional[PipelineService] = None, logger=None):
        self.pipeline = pipeline or PipelineService()
        self.logger = logger or get_logger(__name__)

    def _master_seed(self, config: ExperimentConfig, trial: int) -> int:
        if config.seeds:
            return int(config.seeds[trial])
        return config.seed

    def _run_method(self, method: str, run: Callable[[], Any], case, row: Dict[str, Any]) -> Dict[str, Any]:
        try:
            V, theta, converged = run()
        except (DrbseError, np.linalg.LinAlgError) as e:
            self.logger.warning(f"{method} failed at fraction {row['fraction']}, trial {row['trial']}: {e}")
            return {**row, "method": method, "s_v": np.nan, "s_theta": np.nan,
                    "converged": False, "error": f"{type(e).__name__}: {e}"}
        if V is None:
            return {**row, "method": method, "s_v": np.nan, "s_theta": np.nan,
                    "converged": False, "error": "not converged"}
        s_v, s_theta = compute_metrics(case, V, theta)
        return {**row, "method": method, "s_v": s_v, "s_theta": s_theta, "converged": converged, "error": ""}

    def sweep_bad_data(self, config: ExperimentConfig, fractions: Sequence[float], trials: int) -> SweepResult:
        """Every fraction x trial runs the three methods on one freshly seeded scenario"""
        if trials < 1:
            raise ConfigError("trials must be at least 1")
        if config.seeds and len(config.seeds) < trials:
            raise ConfigError(f"{trials} trials need {trials} seeds, got {len(config.seeds)}")
        config.validate()

        case, partition = self.pipeline.load_inputs(config)
        records: List[Dict[str, Any]] = []
        for fraction in fractions:
            for trial in range(trials):
                noise_seed, bad_seed = trial_seeds(self._master_seed(config, trial), trial)
                noise = replace(config.noise, seed=noise_seed)
                bad_data = BadDataSpec(fraction=float(fraction), magnitude_factor=config.bad_data.magnitude_factor,
                                       seed=bad_seed)
                row = {"fraction": float(fraction), "trial": trial}
                try:
                    ms = build_scenario(case, config.plan, noise, bad_data, config.pmu_buses,
                                        config.strict_zero_injection)
                except DrbseError as e:
                    self.logger.warning(f"Scenario failed at fraction {fraction}, trial {trial}: {e}")
                    records += [{**row, "method": m, "s_v": np.nan, "s_theta": np.nan, "converged": False,
                                 "error": f"{type(e).__name__}: {e}"} for m in ("drbse", "wls", "wls_lnrt")]
                    continue

                records.append(self._run_method("drbse", lambda: self._drbse(config, case, partition, ms), case, row))
                records.append(self._run_method("wls", lambda: self._oracle("wls", case, ms), case, row))
                records.append(self._run_method("wls_lnrt", lambda: self._oracle("wls_lnrt", case, ms), case, row))
            self.logger.info(f"Sweep fraction {fraction}: {trials} trials done")

        frame = pd.DataFrame(records, columns=TRIAL_COLUMNS)
        return SweepResult(trials=frame, summary=self.summarize(frame))

    def _drbse(self, config, case, partition, ms):
        report = self.pipeline.run_drbse(config, case=case, partition=partition, ms=ms).report
        return report.V, report.theta, report.converged

    def _oracle(self, method: str, case, ms):
        estimate = gauss_newton_wls(case, ms) if method == "wls" else wls_lnrt(case, ms)
        return estimate.V, estimate.theta, estimate.converged

    @staticmethod
    def summarize(frame: pd.DataFrame) -> pd.DataFrame:
        """Mean metrics per (method, fraction) over the successful trials"""
        if frame.empty:
            return pd.DataFrame(columns=SUMMARY_COLUMNS)
        order = {name: pos for pos, name in enumerate(METHODS)}
        grouped = frame.groupby(["method", "fraction"], sort=False)
        summary = grouped.agg(
            mean_s_v=("s_v", "mean"),
            mean_s_theta=("s_theta", "mean"),
            trials=("trial", "count"),
            failures=("s_v", lambda s: int(s.isna().sum())),
        ).reset_index()
        summary["_order"] = summary["method"].map(order)
        summary = summary.sort_values(["_order", "fraction"]).drop(columns="_order").reset_index(drop=True)
        return summary[SUMMARY_COLUMNS]

    def sweep_to_disk(self, config: ExperimentConfig, fractions: Sequence[float], trials: int,
                      out_dir: str) -> Dict[str, str]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result = self.sweep_bad_data(config, fractions, trials)
        summary_path = out / "sweep.csv"
        trials_path = out / "sweep_trials.csv"
        result.summary.to_csv(summary_path, index=False)
        result.trials.to_csv(trials_path, index=False)
        return {"sweep": str(summary_path), "trials": str(trials_path)}
