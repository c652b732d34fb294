import logging

from chemoreduce.logging_config import LOGGER_NAME, configure_logging, get_logger


def test_module_loggers_are_children():
    logger = get_logger("dynamics")
    assert logger.name == "chemoreduce.dynamics"
    assert get_logger("chemoreduce.outputs").name == "chemoreduce.outputs"
    assert get_logger().name == LOGGER_NAME


def test_reconfiguring_does_not_stack_handlers(monkeypatch):
    monkeypatch.delenv("LOG_LEVEL", raising=False)
    configure_logging("DEBUG")
    logger = configure_logging()
    assert len(logger.handlers) == 1
    assert logger.level == logging.INFO
    assert not logger.propagate


def test_file_logging_needs_the_environment_switch(tmp_path, monkeypatch):
    monkeypatch.delenv("ENABLE_FILE_LOGGING", raising=False)
    logger = configure_logging("INFO", enable_file_logging=True, log_file=str(tmp_path / "run.log"))
    assert len(logger.handlers) == 1
    monkeypatch.setenv("ENABLE_FILE_LOGGING", "1")
    logger = configure_logging("INFO", enable_file_logging=True, log_file=str(tmp_path / "run.log"))
    assert len(logger.handlers) == 2
    for handler in logger.handlers[1:]:
        handler.close()
    configure_logging("INFO")
