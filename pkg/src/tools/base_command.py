"""
Base CLI Command Classes - Abstract Foundation
Mục đích: Common interface, registry và safe executor cho all CLI subcommands
"""

import asyncio
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from ..utils.exceptions import ConfigError, DrbseError
from ..utils.logger import get_logger


EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


@dataclass
class CommandOutcome:
    """What a command run produced: exit code, written files, or the error"""
    command: str
    exit_code: int
    outputs: Dict[str, str] = field(default_factory=dict)
    error: Optional[str] = None
    message: Optional[str] = None

    def error_document(self) -> Dict[str, Any]:
        return {"error": self.error, "message": self.message, "command": self.command}


class CommandBase(ABC):
    """
    Abstract base class cho tất cả CLI commands
    SRP: Chỉ define interface, không implement logic
    LSP: Subclasses return the mapping of written outputs
    """

    name: str = ""
    description: str = ""
    arguments: List[Dict[str, Any]] = []
    required: List[str] = []

    def __init__(self):
        self.logger = get_logger(self.__class__.__name__)

    @abstractmethod
    async def execute(self, arguments: Dict[str, Any]) -> Dict[str, str]:
        """Run the command, return {output name: path}"""

    def validate_arguments(self, arguments: Dict[str, Any]) -> bool:
        for name in self.required:
            if arguments.get(name) is None:
                raise ConfigError(f"missing required argument: {name}")
        return True

    def __str__(self) -> str:
        return f"{self.__class__.__name__}(name='{self.name}')"


class CommandRegistry:
    """
    Registry cho CLI commands
    SRP: Chỉ lo việc manage command registry
    """

    def __init__(self):
        self._commands: Dict[str, CommandBase] = {}
        self.logger = get_logger(__name__)

    def register_command(self, command: CommandBase) -> None:
        if not isinstance(command, CommandBase):
            raise TypeError(f"Command must inherit from CommandBase, got {type(command)}")
        if not command.name:
            raise ValueError(f"Command {command.__class__.__name__} must have a name")
        self._commands[command.name] = command
        self.logger.debug(f"Registered command: {command.name}")

    def get_command(self, name: str) -> CommandBase:
        if name not in self._commands:
            raise KeyError(f"Command '{name}' not found in registry")
        return self._commands[name]

    def get_all_commands(self) -> Dict[str, CommandBase]:
        return self._commands.copy()

    def list_command_names(self) -> List[str]:
        return list(self._commands.keys())


class CommandExecutor:
    """
    Executor cho CLI commands với error handling
    SRP: Chỉ lo việc execute commands safely và map failures to exit codes
    """

    def __init__(self, registry: CommandRegistry):
        self.registry = registry
        self.logger = get_logger(__name__)

    async def execute_command(self, command_name: str, arguments: Dict[str, Any]) -> CommandOutcome:
        """ConfigError -> usage exit (2); other failures -> runtime exit (1)"""
        try:
            command = self.registry.get_command(command_name)
            command.validate_arguments(arguments)

            self.logger.info(f"Executing command: {command_name}")
            outputs = await command.execute(arguments)
            self.logger.info(f"Command {command_name} finished: {sorted(outputs)}")
            return CommandOutcome(command_name, EXIT_OK, outputs=outputs)

        except KeyError as e:
            self.logger.error(f"Unknown command '{command_name}': {e}")
            return CommandOutcome(command_name, EXIT_USAGE, error="UnknownCommand", message=str(e))

        except ConfigError as e:
            self.logger.error(f"Invalid arguments for '{command_name}': {e}")
            return CommandOutcome(command_name, EXIT_USAGE, error=type(e).__name__, message=str(e))

        except (DrbseError, OSError) as e:
            self.logger.error(f"Command '{command_name}' failed: {e}", exc_info=True)
            return CommandOutcome(command_name, EXIT_RUNTIME, error=type(e).__name__, message=str(e))

        except Exception as e:
            self.logger.error(f"Unexpected error in '{command_name}': {e}", exc_info=True)
            return CommandOutcome(command_name, EXIT_RUNTIME, error=type(e).__name__, message=str(e))

    def run(self, command_name: str, arguments: Dict[str, Any]) -> CommandOutcome:
        """Synchronous entry point"""
        return asyncio.run(self.execute_command(command_name, arguments))

    def get_available_commands(self) -> Dict[str, str]:
        return {name: command.description for name, command in self.registry.get_all_commands().items()}
