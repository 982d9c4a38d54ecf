"""
Debug - Logging helpers used by every module.
"""

import logging
from pathlib import Path
from typing import Optional, Union

from constants import AppConstants

_logger = logging.getLogger(AppConstants.LOGGER_NAME)
_file_handler: Optional[logging.Handler] = None


def setup_logging(level: Union[str, int] = "INFO", log_file: Optional[Path] = None) -> logging.Logger:
    """Configure the toolkit logger; safe to call more than once."""
    global _file_handler
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    _logger.setLevel(level)

    if not any(isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler)
               for h in _logger.handlers):
        stream = logging.StreamHandler()
        stream.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
        _logger.addHandler(stream)

    if log_file is not None:
        if _file_handler is not None:
            _logger.removeHandler(_file_handler)
            _file_handler.close()
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        _file_handler = logging.FileHandler(log_file, mode="a", encoding="utf-8")
        _file_handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s: %(message)s"))
        _logger.addHandler(_file_handler)
    return _logger


def close_log_file():
    """Detach the run log file handler, if any."""
    global _file_handler
    if _file_handler is not None:
        _logger.removeHandler(_file_handler)
        _file_handler.close()
        _file_handler = None


def log_debug(message: str, *args):
    _logger.debug(message, *args)


def log_info(message: str, *args):
    _logger.info(message, *args)


def log_warning(message: str, *args):
    _logger.warning(message, *args)


def log_error(message: str, *args):
    _logger.error(message, *args)
