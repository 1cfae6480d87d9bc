"""
    Tests for configuration.py and exceptions.py
"""

import logging

from gprforge import configuration
from gprforge.configuration import Configuration
from gprforge.exceptions import BadArity, GprForgeException, NumericalBlowup


def test_load_config(mocker):
    mocker.patch("builtins.open", mocker.mock_open(read_data="foo"))
    assert "foo" == configuration.load_config()


def test_load_config_defaults():
    config = configuration.load_config()

    assert config["fdtd"]["pml_cells"] == 10
    assert config["fdtd"]["courant"] == 0.95
    assert config["preprocess"]["dewow_window"] == 31
    assert set(config["scenario"]) >= {"1", "2", "3"}


def test_configuration_default_is_shared_copy():
    config = Configuration()
    config.threads = 3
    Configuration.set_default(config)

    assert Configuration().threads == 3
    assert Configuration() is not Configuration()


def test_configuration_threads_from_env(monkeypatch):
    monkeypatch.setenv("GPRFORGE_THREADS", "0")
    assert Configuration().threads == 1


def test_configuration_debug_sets_level():
    config = Configuration()
    config.debug = True
    assert logging.getLogger("gprforge").level == logging.DEBUG

    config.debug = False
    assert logging.getLogger("gprforge").level == logging.INFO


def test_configuration_logger_file(tmp_path):
    config = Configuration()
    config.logger_file = str(tmp_path / "run.log")
    handler = config.logger_file_handler

    assert handler in logging.getLogger("gprforge").handlers

    config.logger_file = None
    assert handler not in logging.getLogger("gprforge").handlers


def test_debug_report():
    assert "threads:" in Configuration().to_debug_report()


def test_exception_str_has_code_and_line():
    error = BadArity(subject="cell", line=4)

    assert isinstance(error, GprForgeException)
    assert str(error).startswith("(BadArity)\n")
    assert "Line: 4\n" in str(error)
    assert error.reason == "wrong number of arguments for '#cell'"


def test_exception_str_without_line():
    assert "Line:" not in str(GprForgeException(reason="boom"))


def test_blowup_carries_trace_index():
    error = NumericalBlowup(step=12, trace_index=3, value=float("inf"))

    assert error.step == 12
    assert error.subject == 3
    assert "trace 3" in error.reason
