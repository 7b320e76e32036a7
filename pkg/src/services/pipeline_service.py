"""
Pipeline Service - the three-step distributed estimator end to end
Mục đích: Orchestrate stage 1 -> local transform -> stage 2 over the message bus,
assemble the global state, compute metrics and build reports

Capabilities: run_drbse → compare against oracles → write report / trace / table files
"""

import asyncio
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .measurement_service import (
    build_scenario,
    estimated_measurements,
    partition_measurements,
)
from .message_bus import MessageBus
from .partition_service import build_partition, consensus_groups, max_copy_spread, partition_summary
from ..estimation.admm_stage1 import Stage1AreaState, init_stage1, run_stage1
from ..estimation.admm_stage2 import Stage2AreaState, init_stage2, run_stage2
from ..estimation.bilinear import IntermediateLayout, StageTwoScaling, nonlinear_transform
from ..estimation.centralized import centralized_rbse, gauss_newton_wls, wls_lnrt
from ..models.estimation_models import CentralEstimate, EstimationReport, ExperimentConfig, StageRun
from ..models.measurement_models import MeasurementKind, MeasurementSet
from ..models.network_models import AreaPartition, NetworkCase
from ..storage.case_storage import (
    fetch_case,
    load_measurements_json,
    read_case,
    read_partition,
    save_case_json,
    save_measurements_json,
    write_json,
)
from ..utils.config import AppConfig, get_config
from ..utils.exceptions import ProtocolError
from ..utils.logger import get_logger


METHODS = ("drbse", "centralized_rbse", "wls", "wls_lnrt")


# =================== METRICS ===================

def compute_metrics(
    case: NetworkCase, V: np.ndarray, theta: np.ndarray
) -> Tuple[float, float]:
    """
    S_V = ||V - V_true||_1 / N, S_theta = ||theta - theta_true||_1 / (N - 1) without the reference bus
    """
    V_true, theta_true = case.true_voltages()
    if len(V) != case.n_buses or len(theta) != case.n_buses:
        raise ValueError("estimate dimensions do not match the case")
    s_v = float(np.sum(np.abs(np.asarray(V) - V_true))) / case.n_buses

    if case.n_buses < 2:
        return s_v, 0.0
    keep = np.array([bus_id != case.reference_bus for bus_id in case.bus_ids])
    s_theta = float(np.sum(np.abs(np.asarray(theta)[keep] - theta_true[keep]))) / (case.n_buses - 1)
    return s_v, s_theta


def trace_frame(run: StageRun) -> pd.DataFrame:
    return pd.DataFrame([row.as_record(run.stage) for row in run.trace])


def _split_label(label: str) -> Tuple[str, str]:
    kind, _, location = label.partition(":")
    return kind, location


# =================== RESULTS ===================

@dataclass
class PipelineResult:
    """Report plus the in-memory pieces tests and `compare` need"""
    report: EstimationReport
    traces: Dict[int, pd.DataFrame]
    case: NetworkCase
    measurements: MeasurementSet
    bus: MessageBus
    stage1: Optional[StageRun] = None
    stage2: Optional[StageRun] = None
    u_tilde: Dict[int, np.ndarray] = field(default_factory=dict)
    transform_messages: int = 0


@dataclass
class CompareResult:
    pipeline: PipelineResult
    estimates: Dict[str, CentralEstimate]
    states: pd.DataFrame
    bad_data: pd.DataFrame
    metrics: Dict[str, Dict[str, Any]]


class PipelineService:
    """
    D-RBSE orchestration service
    SRP: Chỉ lo pipeline orchestration và report assembly, không lo numerics
    DIP: Numerics come from the estimation package, I/O from storage
    """

    def __init__(self, app_config: Optional[AppConfig] = None, logger=None):
        self.app_config = app_config or get_config()
        self.logger = logger or get_logger(__name__)

    # =================== INPUTS ===================

    def default_config(self, **overrides: Any) -> ExperimentConfig:
        return ExperimentConfig.from_defaults(self.app_config.estimator, **overrides).validate()

    def load_inputs(self, config: ExperimentConfig) -> Tuple[NetworkCase, AreaPartition]:
        case = read_case(config.case_path)
        partition = read_partition(config.partition_path, case)
        return case, partition

    def build_measurements(self, config: ExperimentConfig, case: NetworkCase) -> MeasurementSet:
        return build_scenario(
            case,
            config.plan,
            config.noise,
            config.bad_data,
            pmu_buses=config.pmu_buses,
            strict_zero_injection=config.strict_zero_injection,
        )

    # =================== D-RBSE ===================

    async def run_drbse_async(
        self,
        config: ExperimentConfig,
        case: Optional[NetworkCase] = None,
        partition: Optional[AreaPartition] = None,
        ms: Optional[MeasurementSet] = None,
    ) -> PipelineResult:
        """
        Stage 1 (ADMM) -> per-area transform over owned elements -> stage 2 (ADMM).
        A non-converged stage stops the pipeline unless config.force is set.
        """
        config.validate()
        started = time.perf_counter()
        if case is None:
            case, loaded_partition = self.load_inputs(config)
            partition = partition or loaded_partition
        partition = partition or read_partition(config.partition_path, case)
        ms = ms if ms is not None else self.build_measurements(config, case)

        views = build_partition(case, partition, config.boundary_rule)
        groups = consensus_groups(views, partition)
        area_ms = partition_measurements(ms, views, partition)
        bus = MessageBus(logger=self.logger)
        for row in partition_summary(views):
            self.logger.debug(f"Area summary: {row}")

        # ===== STAGE 1 =====
        stage1_states = [
            init_stage1(case, view, area_ms[view.area], config.lambda_, config.rho_f,
                        config.threshold_mode, config.augmentation)
            for view in views
        ]
        stage1 = await run_stage1(stage1_states, bus, config.epsilon, config.max_iter, config.schedule_seed)
        traces = {1: trace_frame(stage1)}
        result = PipelineResult(report=None, traces=traces, case=case, measurements=ms, bus=bus, stage1=stage1)

        if not stage1.converged and not config.force:
            self.logger.warning("Stage 1 did not converge; skipping transform and stage 2 (use force to continue)")
            result.report = self._report(config, result, None, None, started)
            return result

        # ===== LOCAL TRANSFORM =====
        # bus stage 0: any traffic here is logged and counted
        bus.begin_stage(0)
        u_layouts: Dict[int, IntermediateLayout] = {}
        for state in stage1_states:
            pmu = {m.bus: m.value for m in area_ms[state.area].measurements if m.kind is MeasurementKind.PMU_ANGLE}
            u_layouts[state.area] = IntermediateLayout.for_area(case, state.view, tuple(pmu))
            result.u_tilde[state.area] = nonlinear_transform(state.y, state.layout, u_layouts[state.area], pmu)
        bus.barrier()
        result.transform_messages = bus.delivery_count(stage=0)
        if result.transform_messages:
            raise ProtocolError(f"the local transform exchanged {result.transform_messages} messages")

        # ===== STAGE 2 =====
        scaling = StageTwoScaling.for_case(
            case, ms.measurements, config.threshold_mode, tuple(m.bus for m in ms.pmu_angles())
        )
        stage2_states = [
            init_stage2(case, view, result.u_tilde[view.area], u_layouts[view.area], groups,
                        scaling.threshold(config.lambda_), config.rho_s, config.augmentation,
                        scaling.weights(case, u_layouts[view.area]))
            for view in views
        ]
        stage2 = await run_stage2(stage2_states, bus, config.epsilon, config.max_iter, config.schedule_seed)
        result.stage2 = stage2
        traces[2] = trace_frame(stage2)
        if not stage2.converged and not config.force:
            self.logger.warning("Stage 2 did not converge; no state is reported (use force to continue)")
            result.report = self._report(config, result, None, None, started)
            return result

        V, theta = self.assemble_state(case, stage2_states)
        spread = max_copy_spread({
            bus_id: {member: stage2.states[member].copy_of(bus_id) for member in group.members}
            for bus_id, group in groups.items()
        })
        result.report = self._report(config, result, V, theta, started, spread)
        return result

    def run_drbse(self, config: ExperimentConfig, **inputs: Any) -> PipelineResult:
        """Synchronous wrapper"""
        return asyncio.run(self.run_drbse_async(config, **inputs))

    @staticmethod
    def assemble_state(case: NetworkCase, states: List[Stage2AreaState]) -> Tuple[np.ndarray, np.ndarray]:
        """Each bus takes its home-area copy"""
        V = np.zeros(case.n_buses)
        theta = np.zeros(case.n_buses)
        for state in states:
            V_home, theta_home = state.home_state()
            for pos, bus_id in enumerate(state.view.buses):
                V[case.bus_position[bus_id]] = V_home[pos]
                theta[case.bus_position[bus_id]] = theta_home[pos]
        return V, theta

    # =================== REPORT ===================

    def outlier_entries(self, result: PipelineResult) -> List[Dict[str, Any]]:
        """Non-zero outlier entries: measurements in stage 1, u elements in stage 2"""
        entries: List[Dict[str, Any]] = []
        if result.stage1 is not None:
            rows = []
            for state in result.stage1.states.values():
                s1: Stage1AreaState = state
                for label, position, value in zip(s1.row_labels, s1.positions, s1.o):
                    if value != 0.0:
                        rows.append((position, label, float(value)))
            for _, label, value in sorted(rows):
                kind, location = _split_label(label)
                entries.append({"stage": 1, "kind": kind, "location": location, "value": value})

        if result.stage2 is not None:
            for area in sorted(result.stage2.states):
                s2: Stage2AreaState = result.stage2.states[area]
                for label, value in zip(s2.u_layout.row_labels(), s2.raw_outliers()):
                    if value != 0.0:
                        kind, location = _split_label(label)
                        entries.append({"stage": 2, "kind": kind, "location": location,
                                        "value": float(value), "area": area})
        return entries

    def _report(
        self,
        config: ExperimentConfig,
        result: PipelineResult,
        V: Optional[np.ndarray],
        theta: Optional[np.ndarray],
        started: float,
        spread: Optional[float] = None,
    ) -> EstimationReport:
        case = result.case
        V_true, theta_true = case.true_voltages()
        s_v = s_theta = None
        if V is not None:
            s_v, s_theta = compute_metrics(case, V, theta)

        stages = []
        for run in (result.stage1, result.stage2):
            if run is not None:
                stages.append({
                    "stage": run.stage,
                    "iterations": run.iterations,
                    "converged": run.converged,
                    "final_delta": run.final_delta,
                    "trace_path": f"trace_stage{run.stage}.csv",
                })

        converged = all(stage["converged"] for stage in stages) and len(stages) == 2
        wall_time = time.perf_counter() - started
        if s_v is not None:
            self.logger.info(f"D-RBSE finished in {wall_time:.3f}s: S_V={s_v:.3e}, S_theta={s_theta:.3e}")
        else:
            self.logger.info(f"D-RBSE stopped after {wall_time:.3f}s without a state estimate")

        return EstimationReport(
            config=config.to_dict(encode_json=True),
            bus_ids=list(case.bus_ids),
            V=V,
            theta=theta,
            v_true=V_true,
            theta_true=theta_true,
            s_v=s_v,
            s_theta=s_theta,
            stages=stages,
            messages=result.bus.traffic_summary(),
            outliers=self.outlier_entries(result),
            converged=converged,
            max_copy_disagreement=spread,
            transform_messages=result.transform_messages,
            wall_time=wall_time,
        )

    # =================== ORACLES ===================

    def run_oracles(self, config: ExperimentConfig, case: NetworkCase, ms: MeasurementSet) -> Dict[str, CentralEstimate]:
        return {
            "centralized_rbse": centralized_rbse(case, ms, config.lambda_, config.threshold_mode),
            "wls": gauss_newton_wls(case, ms),
            "wls_lnrt": wls_lnrt(case, ms),
        }

    def compare(self, config: ExperimentConfig, ms: Optional[MeasurementSet] = None) -> CompareResult:
        """D-RBSE and every oracle on one scenario: state table, bad-data table, metrics"""
        case, partition = self.load_inputs(config)
        ms = ms if ms is not None else self.build_measurements(config, case)
        pipeline = self.run_drbse(config, case=case, partition=partition, ms=ms)

        estimates = self.run_oracles(config, case, ms)
        states: Dict[str, Tuple[np.ndarray, np.ndarray]] = {
            name: (est.V, est.theta) for name, est in estimates.items()
        }
        if pipeline.report.V is not None:
            states["drbse"] = (pipeline.report.V, pipeline.report.theta)

        V_true, theta_true = case.true_voltages()
        table: Dict[str, Any] = {"bus": case.bus_ids, "v_true": V_true, "theta_true": theta_true}
        for name in METHODS:
            if name in states:
                table[f"v_{name}"] = states[name][0]
                table[f"theta_{name}"] = states[name][1]

        bad_rows = []
        bad = ms.bad_indices()
        estimated = {name: estimated_measurements(case, ms, V, theta) for name, (V, theta) in states.items()}
        for pos in bad:
            meas = ms.measurements[pos]
            row: Dict[str, Any] = {
                "measurement": meas.label(),
                "true": meas.true_value,
                "measured": meas.value,
            }
            for name in METHODS:
                if name in estimated:
                    row[f"est_{name}"] = float(estimated[name][pos])
                    row[f"err_{name}"] = abs(float(estimated[name][pos]) - meas.true_value)
            bad_rows.append(row)

        metrics: Dict[str, Dict[str, Any]] = {}
        for name in METHODS:
            if name not in states:
                continue
            s_v, s_theta = compute_metrics(case, *states[name])
            entry: Dict[str, Any] = {"s_v": s_v, "s_theta": s_theta}
            if name in estimates:
                entry["converged"] = estimates[name].converged
                entry["iterations"] = estimates[name].iterations
                entry["removed_measurements"] = list(estimates[name].removed_measurements)
            metrics[name] = entry

        bad_columns = ["measurement", "true", "measured"] + [
            f"{prefix}_{name}" for name in METHODS if name in estimated for prefix in ("est", "err")
        ]
        return CompareResult(
            pipeline=pipeline,
            estimates=estimates,
            states=pd.DataFrame(table),
            bad_data=pd.DataFrame(bad_rows, columns=bad_columns),
            metrics=metrics,
        )

    # =================== FILE OUTPUTS ===================

    def _scenario_measurements(self, measurements_path: Optional[str]) -> Optional[MeasurementSet]:
        if measurements_path is None:
            return None
        return load_measurements_json(Path(measurements_path).read_text(encoding="utf-8"))

    def _report_document(self, result: PipelineResult, timing: bool) -> Dict[str, Any]:
        document = result.report.to_dict()
        if not timing:
            document.pop("wall_time", None)
        return document

    def estimate(
        self,
        config: ExperimentConfig,
        out_dir: str,
        timing: bool = False,
        measurements_path: Optional[str] = None,
    ) -> Dict[str, str]:
        """report.json + trace_stage{1,2}.csv under out_dir"""
        out = Path(out_dir)
        result = self.run_drbse(config, ms=self._scenario_measurements(measurements_path))

        written = {"report": str(write_json(out / "report.json", self._report_document(result, timing)))}
        for stage, frame in sorted(result.traces.items()):
            path = out / f"trace_stage{stage}.csv"
            frame.to_csv(path, index=False)
            written[f"trace_stage{stage}"] = str(path)
        return written

    def generate(self, config: ExperimentConfig, out_path: str) -> Dict[str, str]:
        case = read_case(config.case_path)
        ms = self.build_measurements(config, case)
        path = Path(out_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(save_measurements_json(ms), encoding="utf-8")
        self.logger.info(f"Wrote {len(ms)} measurements ({len(ms.bad_indices())} corrupted) to {path}")
        return {"measurements": str(path)}

    def compare_to_disk(
        self,
        config: ExperimentConfig,
        out_dir: str,
        timing: bool = False,
        measurements_path: Optional[str] = None,
    ) -> Dict[str, str]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result = self.compare(config, ms=self._scenario_measurements(measurements_path))

        document = self._report_document(result.pipeline, timing)
        document["comparison"] = result.metrics
        states_path = out / "compare_states.csv"
        bad_path = out / "compare_bad_data.csv"
        result.states.to_csv(states_path, index=False)
        result.bad_data.to_csv(bad_path, index=False)
        return {
            "report": str(write_json(out / "report.json", document)),
            "states": str(states_path),
            "bad_data": str(bad_path),
        }

    def convert_case(self, case_path: str, out_path: Optional[str] = None,
                     area_column: Optional[str] = None) -> Dict[str, str]:
        """MATPOWER text -> canonical JSON (next to the input unless out_path is given)"""
        case = read_case(case_path, area_column=area_column)
        path = Path(out_path) if out_path else Path(case_path).with_suffix(".json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(save_case_json(case), encoding="utf-8")
        self.logger.info(f"Converted {case_path}: {case.n_buses} buses, {case.n_branches} branches -> {path}")
        return {"case": str(path)}

    def fetch_case(self, name: str, dest_dir: str = "data/cases", url: Optional[str] = None) -> Dict[str, str]:
        """Download a MATPOWER case (e.g. case118) next to the bundled cases"""
        return {"case": str(fetch_case(name, dest_dir, url=url))}
