# Utils/log_utils.py

import os
import sys
import time
import logging
import datetime
from contextlib import contextmanager
from typing import Dict, Optional

LOG_LEVEL_DEBUG = logging.DEBUG
LOG_LEVEL_INFO = logging.INFO
LOG_LEVEL_WARNING = logging.WARNING
LOG_LEVEL_ERROR = logging.ERROR

# Debug levels, only emitted with --verbose:
#   L1  command milestones: dataset written, epoch summary, checkpoint saved, ablation row done
#   L2  parameters and shapes: resolved configs, perturbation sizes, highlighter misses
#   L3  per step / per token: loss components, event fan-out
DEBUG_L1 = 1
DEBUG_L2 = 2
DEBUG_L3 = 3

LOG_FORMAT = '%(asctime)s %(levelname)-7s %(component)s %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'

_RESET = '\033[0m'
_LEVEL_COLORS = {
    logging.DEBUG: '\033[34m',
    logging.INFO: '\033[32m',
    logging.WARNING: '\033[33m',
    logging.ERROR: '\033[31m',
    logging.CRITICAL: '\033[1m\033[31m',
}
_COMPONENT_COLOR = '\033[36m'


class ComponentFormatter(logging.Formatter):
    """Renders the component tag as '[Trainer]' or '[Trainer][L2]'; colours are optional."""

    def __init__(self, colored: bool):
        super().__init__(LOG_FORMAT, datefmt=DATE_FORMAT)
        self.colored = colored

    def format(self, record):
        record = logging.makeLogRecord(record.__dict__)
        component = getattr(record, "component_name", "-")
        level = getattr(record, "debug_level", None)
        tag = f"[{component}]" + (f"[L{level}]" if level else "")
        if self.colored:
            tag = f"{_COMPONENT_COLOR}{tag}{_RESET}"
            color = _LEVEL_COLORS.get(record.levelno)
            if color:
                record.levelname = f"{color}{record.levelname}{_RESET}"
        record.component = tag
        return super().format(record)


class Logger:
    """
    Process-wide logger. Every message carries a component name; debug output
    is gated by --verbose and the --debug level. Use get_logger().
    """
    _instance = None

    @classmethod
    def get_instance(cls):
        if cls._instance is None:
            cls._instance = Logger()
        return cls._instance

    def __init__(self):
        if Logger._instance is not None:
            raise Exception("Logger already exists! Use Logger.get_instance() to get the singleton instance.")

        self.logger = logging.getLogger('table_qa')
        self.logger.setLevel(logging.INFO)
        self.logger.propagate = False

        # stderr keeps stdout free for command output
        self.console_handler = logging.StreamHandler(sys.stderr)
        self.console_handler.setFormatter(ComponentFormatter(colored=True))
        self.console_handler.setLevel(logging.INFO)
        self.logger.addHandler(self.console_handler)

        self.file_handler = None
        self.log_directory = "logs"
        self.verbose = False
        self.debug_level = DEBUG_L1

        Logger._instance = self

    def configure(self, verbose: bool = False, console_level: int = logging.INFO,
                  log_directory: Optional[str] = None, debug_level: int = DEBUG_L1,
                  colored_output: bool = True):
        self.verbose = verbose
        if debug_level not in (DEBUG_L1, DEBUG_L2, DEBUG_L3):
            self.warning("Logger", f"Invalid debug level {debug_level}, using {DEBUG_L1}")
            debug_level = DEBUG_L1
        self.debug_level = debug_level
        if log_directory:
            self.log_directory = log_directory

        console_level = logging.DEBUG if verbose else console_level
        self.console_handler.setLevel(console_level)
        self.console_handler.setFormatter(ComponentFormatter(colored=colored_output))
        self._sync_level()
        self.debug_at_level(DEBUG_L1, "Logger", f"verbose={verbose} debug_level={debug_level} "
                                                f"console={logging.getLevelName(console_level)}")

    def configure_file_logging(self, enabled: bool = True, level: int = logging.DEBUG,
                               filename: Optional[str] = None) -> Optional[str]:
        """Attach a plain-text file handler under log_directory, replacing any previous one."""
        self._close_file_handler()
        if not enabled:
            self._sync_level()
            return None

        os.makedirs(self.log_directory, exist_ok=True)
        filename = filename or f"tableqa_{datetime.datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
        log_path = os.path.join(self.log_directory, filename)
        self.file_handler = logging.FileHandler(log_path, mode='a', encoding='utf-8')
        self.file_handler.setFormatter(ComponentFormatter(colored=False))
        self.file_handler.setLevel(level)
        self.logger.addHandler(self.file_handler)
        self._sync_level()
        self.info("Logger", f"File logging to {log_path}")
        return log_path

    def _sync_level(self):
        levels = [self.console_handler.level] + ([self.file_handler.level] if self.file_handler else [])
        self.logger.setLevel(min(levels))

    def _close_file_handler(self):
        if self.file_handler:
            self.logger.removeHandler(self.file_handler)
            self.file_handler.close()
            self.file_handler = None

    def _log(self, level: int, component: str, message: str, debug_level: Optional[int] = None):
        self.logger.log(level, message, extra={"component_name": component, "debug_level": debug_level})

    def debug_at_level(self, level: int, component: str, message: str):
        if self.verbose and level <= self.debug_level:
            self._log(logging.DEBUG, component, message, level)

    def info(self, component: str, message: str):
        self._log(logging.INFO, component, message)

    def warning(self, component: str, message: str):
        self._log(logging.WARNING, component, message)

    def error(self, component: str, message: str):
        self._log(logging.ERROR, component, message)

    def log_mapping(self, level: int, component: str, title: str, values: Dict):
        """One debug line per key, sorted; used for resolved configs."""
        if not (self.verbose and level <= self.debug_level):
            return
        self.debug_at_level(level, component, f"{title}:")
        for key in sorted(values):
            self.debug_at_level(level, component, f"  {key} = {values[key]!r}")

    @contextmanager
    def timed(self, component: str, what: str, level: int = DEBUG_L1):
        """Logs the wall-clock time of the with-block, also when it raises."""
        start = time.perf_counter()
        try:
            yield
        finally:
            self.debug_at_level(level, component, f"{what} took {time.perf_counter() - start:.2f}s")

    def shutdown(self):
        self._close_file_handler()
        self.console_handler.flush()


def get_logger():
    return Logger.get_instance()
