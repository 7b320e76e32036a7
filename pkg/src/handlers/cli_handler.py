"""
CLI Handler - argparse front end
Mục đích: Build the subcommand parser from the command registry, run one command,
print its outputs (or a machine-readable error) and return the exit code
"""

import argparse
import json
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence, TextIO

from ..tools.base_command import EXIT_USAGE, CommandOutcome, CommandRegistry
from ..tools.command_factory import CommandFactory
from ..utils.config import get_config
from ..utils.exceptions import ConfigError
from ..utils.logger import get_logger, setup_logger


PROG = "drbse"


class UsageError(ConfigError):
    """Bad command-line flags"""


class _Parser(argparse.ArgumentParser):
    """Raise instead of exiting so the handler owns exit codes and error JSON"""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _list_of(convert: Callable[[str], Any]) -> Callable[[str], List[Any]]:
    def parse(text: str) -> List[Any]:
        try:
            return [convert(item.strip()) for item in text.split(",") if item.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid list {text!r}")
    return parse


ARGUMENT_TYPES: Dict[str, Callable[[str], Any]] = {
    "int": int,
    "float": float,
    "int_list": _list_of(int),
    "float_list": _list_of(float),
    "str_list": _list_of(str),
}


def _add_argument(parser: argparse.ArgumentParser, spec: Dict[str, Any]) -> None:
    kwargs: Dict[str, Any] = {"help": spec.get("help")}
    if spec["flags"][0].startswith("-"):
        kwargs["dest"] = spec["dest"]
        kwargs["default"] = None
    if "action" in spec:
        kwargs["action"] = spec["action"]
        kwargs["default"] = False
    if "type" in spec:
        kwargs["type"] = ARGUMENT_TYPES[spec["type"]]
    if "choices" in spec:
        kwargs["choices"] = spec["choices"]
    parser.add_argument(*spec["flags"], **kwargs)


def build_parser(registry: CommandRegistry) -> argparse.ArgumentParser:
    """
    One subparser per registered command. The shared flags use SUPPRESS defaults so a
    subparser never resets a value given before the subcommand.
    """
    common = _Parser(add_help=False)
    common.add_argument("--error-json", action="store_true", default=argparse.SUPPRESS,
                        help="Print failures as a JSON object on stdout")
    common.add_argument("--log-level", default=argparse.SUPPRESS, help="DEBUG, INFO, WARNING or ERROR")

    parser = _Parser(prog=PROG, description="Distributed robust bilinear state estimation", parents=[common])
    subparsers = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, command in registry.get_all_commands().items():
        sub = subparsers.add_parser(name, help=command.description, description=command.description,
                                    parents=[common])
        exclusive: Dict[str, argparse._MutuallyExclusiveGroup] = {}
        for spec in command.arguments:
            group = spec.get("group")
            if group:
                target = exclusive.setdefault(group, sub.add_mutually_exclusive_group())
                _add_argument(target, spec)
            else:
                _add_argument(sub, spec)
    return parser


class CliApplication:
    """
    Bootstrap class cho CLI
    SRP: Chỉ lo việc wire factory -> parser -> executor và report the outcome
    """

    def __init__(self, factory: Optional[CommandFactory] = None, stdout: TextIO = None):
        self.factory = factory or CommandFactory()
        self.registry = self.factory.create_and_register_all_commands()
        self.executor = self.factory.get_executor()
        self.parser = build_parser(self.registry)
        self.stdout = stdout or sys.stdout
        self.logger = get_logger(__name__)

    def _emit(self, document: Dict[str, Any]) -> None:
        self.stdout.write(json.dumps(document, sort_keys=True) + "\n")

    def _usage_failure(self, message: str, command: Optional[str], error_json: bool) -> int:
        if error_json:
            self._emit({"error": UsageError.__name__, "message": message, "command": command})
        else:
            sys.stderr.write(self.parser.format_usage())
            sys.stderr.write(f"{message}\n")
        return EXIT_USAGE

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        argv = list(sys.argv[1:] if argv is None else argv)
        error_json = "--error-json" in argv
        try:
            namespace = self.parser.parse_args(argv)
        except UsageError as e:
            command = next((a for a in argv if a in self.registry.list_command_names()), None)
            return self._usage_failure(str(e), command, error_json)

        arguments = vars(namespace)
        command = arguments.pop("command")
        error_json = arguments.pop("error_json", False) or error_json
        log_level = arguments.pop("log_level", None) or get_config().log_level
        setup_logger("src", log_level)

        if command is None:
            return self._usage_failure(f"{PROG}: a subcommand is required", None, error_json)

        outcome: CommandOutcome = self.executor.run(command, arguments)
        if outcome.exit_code != 0:
            if error_json:
                self._emit(outcome.error_document())
            else:
                sys.stderr.write(f"{PROG} {command}: {outcome.error}: {outcome.message}\n")
            return outcome.exit_code

        self._emit({"command": command, "outputs": outcome.outputs})
        return 0


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    return CliApplication().run(argv)
