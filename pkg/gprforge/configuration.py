"""
    Runtime configuration: process-wide switches plus the YAML defaults.
"""

import copy
import logging
import multiprocessing
import os
from typing import List, Optional

import yaml

CONFIG_PATH = os.path.join(os.path.dirname(__file__), "config.yaml")
THREADS_ENV = "GPRFORGE_THREADS"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def load_config(path: Optional[str] = None) -> dict:
    # Load yaml config file
    with open(path or CONFIG_PATH, "r") as file:
        return yaml.load(file, Loader=yaml.FullLoader)


def default_threads() -> int:
    value = os.environ.get(THREADS_ENV)
    if not value:
        return multiprocessing.cpu_count()
    return max(1, int(value))


class TypeWithDefault(type):
    """Calling the class hands out a copy of one shared instance, which
    `set_default` replaces (None resets it)."""

    def __init__(cls, name, bases, dct):
        super().__init__(name, bases, dct)
        cls._default = None

    def __call__(cls):
        if cls._default is None:
            cls._default = super().__call__()
        return copy.copy(cls._default)

    def set_default(cls, default):
        cls._default = copy.copy(default)


class Configuration(object, metaclass=TypeWithDefault):
    """
    Attributes:
      threads (int): workers for traces, dataset images and detection files.
      debug (bool): DEBUG level on the package loggers and finiteness checks
                    on every nn tensor.
      logger_file (str): optional log file shared by the package loggers.
    """

    def __init__(self):
        self.threads = default_threads()
        self.loggers: List[logging.Logger] = [logging.getLogger("gprforge")]
        self.logger_format = LOG_FORMAT
        self.logger_file_handler: Optional[logging.FileHandler] = None
        self.logger_file = None
        self.debug = False

    @property
    def logger_file(self) -> Optional[str]:
        return self._logger_file

    @logger_file.setter
    def logger_file(self, value: Optional[str]):
        self._logger_file = value
        if self.logger_file_handler is not None:
            for logger in self.loggers:
                logger.removeHandler(self.logger_file_handler)
            self.logger_file_handler.close()
            self.logger_file_handler = None
        if value:
            handler = logging.FileHandler(value)
            handler.setFormatter(self.logger_formatter)
            for logger in self.loggers:
                logger.addHandler(handler)
            self.logger_file_handler = handler

    @property
    def debug(self) -> bool:
        return self._debug

    @debug.setter
    def debug(self, value: bool):
        self._debug = bool(value)
        for logger in self.loggers:
            logger.setLevel(logging.DEBUG if self._debug else logging.INFO)

    @property
    def logger_format(self) -> str:
        return self._logger_format

    @logger_format.setter
    def logger_format(self, value: str):
        # Handlers created afterwards pick up the new formatter
        self._logger_format = value
        self.logger_formatter = logging.Formatter(value)

    def to_debug_report(self) -> str:
        """Gets the essential information for debugging."""
        return (
            "gprforge debug report:\n"
            f"threads: {self.threads}\n"
            f"debug: {self.debug}\n"
            f"log file: {self.logger_file or '-'}\n"
        )
