import logging
import os
import sys

LOG_FORMAT = '[%(asctime)s] p%(process)s {%(filename)s:%(lineno)d} %(levelname)s - %(message)s'

_configured = False


def get_logger(name: str) -> logging.Logger:
    """Return a module logger, configuring the package root handler once"""
    global _configured
    if not _configured:
        root = logging.getLogger('mustang')
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
        root.setLevel(os.getenv('MUSTANG_LOG_LEVEL', 'INFO').upper())
        root.propagate = False
        _configured = True
    return logging.getLogger(f"mustang.{name}")


def set_level(level: str) -> None:
    """Change the package log level at runtime (the CLI --log-level option)"""
    get_logger('driver')
    logging.getLogger('mustang').setLevel(level.upper())
