"""
CLI Command Factory - Factory Pattern
Mục đích: Create và register all CLI commands từ CLI_COMMAND_CONFIGS với dependency injection
"""

from typing import Any, Dict, Optional

from .base_command import CommandBase, CommandExecutor, CommandRegistry
from .estimation_commands import ServiceMethodCommand, command_class_for
from ..config.command_configs import CLI_COMMAND_CONFIGS
from ..services.pipeline_service import PipelineService
from ..services.sweep_service import SweepService
from ..utils.config import AppConfig, get_config
from ..utils.logger import get_logger


class CommandFactory:
    """
    Main factory cho tất cả CLI commands
    SRP: Chỉ lo việc create và configure commands
    DIP: Depends on injected services
    """

    def __init__(
        self,
        pipeline_service: Optional[PipelineService] = None,
        sweep_service: Optional[SweepService] = None,
        app_config: Optional[AppConfig] = None,
    ):
        self.app_config = app_config or get_config()
        self.pipeline_service = pipeline_service or PipelineService(self.app_config)
        self.sweep_service = sweep_service or SweepService(self.pipeline_service)
        self.logger = get_logger(__name__)

        self.registry = CommandRegistry()
        self.executor = CommandExecutor(self.registry)

    def _service_for(self, config: Dict[str, Any]) -> Any:
        return self.sweep_service if config["service"] == "sweep" else self.pipeline_service

    def create_command_by_name(self, name: str) -> CommandBase:
        if name not in CLI_COMMAND_CONFIGS:
            raise ValueError(f"Unknown command: {name}")
        config = CLI_COMMAND_CONFIGS[name]
        command_class = command_class_for(name) or ServiceMethodCommand
        return command_class(self._service_for(config), config, self.app_config)

    def create_and_register_all_commands(self) -> CommandRegistry:
        for name in CLI_COMMAND_CONFIGS:
            self.registry.register_command(self.create_command_by_name(name))
        self.logger.debug(f"Registered {len(CLI_COMMAND_CONFIGS)} commands")
        return self.registry

    def get_registry(self) -> CommandRegistry:
        return self.registry

    def get_executor(self) -> CommandExecutor:
        return self.executor
