"""
Estimation Commands Implementation
Mục đích: Turn parsed CLI arguments into ExperimentConfig and delegate to the services
Factory pattern: one generic command class driven by CLI_COMMAND_CONFIGS
"""

import asyncio
import json
from abc import ABC, abstractmethod
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Optional

from .base_command import CommandBase
from ..models.estimation_models import ExperimentConfig
from ..utils.config import AppConfig
from ..utils.exceptions import ConfigError
from ..utils.logger import get_logger


# =================== CONFIG ASSEMBLY ===================

ESTIMATOR_FIELDS = (
    "lambda_", "rho_f", "rho_s", "epsilon", "max_iter", "augmentation",
    "boundary_rule", "threshold_mode", "schedule_seed",
)


def _scenario_document(path: str) -> Dict[str, Any]:
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"scenario file {path} is not valid JSON: {e}")
    if not isinstance(document, dict):
        raise ConfigError(f"scenario file {path} must hold a JSON object")
    return document


def build_experiment_config(arguments: Dict[str, Any], app_config: AppConfig) -> ExperimentConfig:
    """
    Precedence: CLI flag > scenario file > environment > built-in default
    """
    base = ExperimentConfig.from_defaults(app_config.estimator).to_dict()
    if arguments.get("scenario"):
        base.update(_scenario_document(arguments["scenario"]))
    try:
        config = ExperimentConfig.from_dict(base)
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"scenario has malformed fields: {e}")

    if arguments.get("case"):
        config.case_path = arguments["case"]
    if arguments.get("areas"):
        config.partition_path = arguments["areas"]
    if arguments.get("plan"):
        config.plan = arguments["plan"]
    if arguments.get("pmu_buses") is not None:
        config.pmu_buses = list(arguments["pmu_buses"])
    if arguments.get("seeds") is not None:
        config.seeds = list(arguments["seeds"])
    for name in ("strict_zero_injection", "force"):
        if arguments.get(name):
            setattr(config, name, True)
    for name in ESTIMATOR_FIELDS:
        if arguments.get(name) is not None:
            setattr(config, name, arguments[name])

    noise_overrides = {
        spec_field: arguments[arg]
        for arg, spec_field in (("noise_power", "sigma_power"), ("noise_vmag", "sigma_vmag"),
                                ("noise_angle", "sigma_angle"))
        if arguments.get(arg) is not None
    }
    bad_overrides: Dict[str, Any] = {}
    if arguments.get("bad_fraction") is not None:
        bad_overrides.update(fraction=arguments["bad_fraction"], targets=[])
    if arguments.get("bad_targets") is not None:
        bad_overrides.update(fraction=0.0, targets=list(arguments["bad_targets"]))
    if arguments.get("seed") is not None:
        config.seed = arguments["seed"]
        noise_overrides["seed"] = arguments["seed"]
        bad_overrides["seed"] = arguments["seed"]

    config.noise = replace(config.noise, **noise_overrides)
    config.bad_data = replace(config.bad_data, **bad_overrides)

    if not config.case_path:
        raise ConfigError("a case file is required (--case or scenario case_path)")
    return config.validate()


# =================== BASE ESTIMATION COMMAND ===================

class BaseEstimationCommand(CommandBase, ABC):
    """
    Base class cho estimation commands với common logic
    Template method pattern: validate -> build config -> delegate -> log
    """

    def __init__(self, service: Any, command_config: Dict[str, Any], app_config: AppConfig):
        super().__init__()
        self.service = service
        self.config = command_config
        self.app_config = app_config

        self.name = command_config["name"]
        self.description = command_config["description"]
        self.arguments = command_config["arguments"]
        self.required = command_config.get("required", [])

        self.logger = get_logger(f"{__name__}.{self.name}")

    async def execute(self, arguments: Dict[str, Any]) -> Dict[str, str]:
        arguments = self._with_defaults(arguments)
        self._validate_command_specific_inputs(arguments)
        self.logger.debug(f"Executing {self.name} with arguments: {sorted(k for k, v in arguments.items() if v)}")
        return await self._execute_command_logic(arguments)

    def validate_arguments(self, arguments: Dict[str, Any]) -> bool:
        # The case may come from --scenario instead of --case
        if self.config.get("builds_config") and arguments.get("scenario"):
            return True
        return super().validate_arguments(arguments)

    def _with_defaults(self, arguments: Dict[str, Any]) -> Dict[str, Any]:
        merged = dict(arguments)
        for key, value in self.config.get("defaults", {}).items():
            if merged.get(key) is None:
                merged[key] = value
        if "out" in {spec.get("dest") for spec in self.arguments} and merged.get("out") is None:
            merged["out"] = self.app_config.output_dir
        return merged

    def _validate_command_specific_inputs(self, arguments: Dict[str, Any]) -> None:
        pass

    @abstractmethod
    async def _execute_command_logic(self, arguments: Dict[str, Any]) -> Dict[str, str]:
        pass


# =================== SERVICE METHOD DELEGATOR ===================

class ServiceMethodCommand(BaseEstimationCommand):
    """
    Generic command that delegates to a service method
    Strategy pattern - method determined by configuration
    """

    async def _execute_command_logic(self, arguments: Dict[str, Any]) -> Dict[str, str]:
        method_name = self.config["service_method"]
        if not hasattr(self.service, method_name):
            raise AttributeError(f"Service does not have method: {method_name}")
        method = getattr(self.service, method_name)

        method_args = self._extract_method_args(arguments)
        if self.config.get("builds_config"):
            method_args = {"config": build_experiment_config(arguments, self.app_config), **method_args}

        if asyncio.iscoroutinefunction(method):
            return await method(**method_args)
        # Sync services may start their own event loop
        return await asyncio.to_thread(method, **method_args)

    def _extract_method_args(self, arguments: Dict[str, Any]) -> Dict[str, Any]:
        """Adapter: service kwarg <- CLI argument"""
        return {
            service_arg: arguments[input_arg]
            for service_arg, input_arg in self.config.get("arg_mapping", {}).items()
            if arguments.get(input_arg) is not None
        }


class SweepCommand(ServiceMethodCommand):
    """Sweep needs a positive trial count and fractions inside [0, 1]"""

    def _validate_command_specific_inputs(self, arguments: Dict[str, Any]) -> None:
        if arguments["trials"] < 1:
            raise ConfigError("--trials must be at least 1")
        bad = [f for f in arguments["fractions"] if not 0.0 <= f <= 1.0]
        if bad:
            raise ConfigError(f"fractions must lie in [0, 1], got {bad}")


def command_class_for(name: str) -> Optional[type]:
    return {"sweep": SweepCommand}.get(name)
