"""
Main Application Entry Point
Mục đích: Bootstrap và run the D-RBSE command line (python -m src.main <command> ...)
"""

import sys
from typing import Optional, Sequence

from .handlers.cli_handler import CliApplication
from .utils.config import get_config
from .utils.exceptions import ConfigError
from .utils.logger import setup_logger


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Application entry point
    SRP: ONLY bootstrap and run
    """
    try:
        config = get_config()
        logger = setup_logger("src", config.log_level)
    except Exception as e:
        # Fall back to defaults if the environment is broken
        logger = setup_logger("src", "INFO")
        logger.warning(f"Failed to load config, using defaults: {e}")

    try:
        return CliApplication().run(argv)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return 2
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 130


if __name__ == "__main__":
    sys.exit(main())
