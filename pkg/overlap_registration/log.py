"""Logging setup for the CLI and library consumers."""
import logging
import os
from typing import Optional, Union

from dotenv import load_dotenv

LOG_ENV_VAR = 'OVERLAP_REG_LOG'
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def resolve_level(level: Optional[Union[str, int]] = None) -> int:
    """Resolve a log level from an explicit value, then OVERLAP_REG_LOG, then WARNING."""
    if level is None:
        load_dotenv()
        level = os.getenv(LOG_ENV_VAR, 'WARNING')
    if isinstance(level, int):
        return level
    value = logging.getLevelName(str(level).strip().upper())
    if not isinstance(value, int):
        raise ValueError(f'Unknown log level: {level}')
    return value


def configure_logging(level: Optional[Union[str, int]] = None) -> int:
    """Configure root logging once for a CLI run.

    Returns:
        The numeric level that was applied
    """
    numeric = resolve_level(level)
    logging.basicConfig(level=numeric, format=LOG_FORMAT, force=True)
    logging.getLogger('overlap_registration').setLevel(numeric)
    return numeric
