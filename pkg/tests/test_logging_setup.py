"""Logger configuration: stderr console, rotating run log, repeated setup.

Run:
  PYTHONPATH=. python tests/test_logging_setup.py   (or: pytest tests/)
"""
import io
import logging
import os
import sys
import tempfile
from logging.handlers import RotatingFileHandler
from pathlib import Path

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from steer.logging_setup import LOG_BACKUPS, MAX_LOG_BYTES, get_logger, setup_logging


def _reset():
    setup_logging(stream=io.StringIO())


def test_console_only_by_default():
    stream = io.StringIO()
    logger = setup_logging("debug", stream=stream)
    assert logger.name == "steer" and logger.level == logging.DEBUG
    assert len(logger.handlers) == 1
    logger.info("generation 1 done")
    assert "INFO - generation 1 done" in stream.getvalue()
    _reset()


def test_unknown_level_falls_back_to_info():
    assert setup_logging("chatty", stream=io.StringIO()).level == logging.INFO
    _reset()


def test_run_log_rotates_and_creates_its_directory():
    with tempfile.TemporaryDirectory() as tmp:
        log_file = Path(tmp, "logs", "steer.log")
        logger = setup_logging("INFO", str(log_file), stream=io.StringIO())
        rotating = [h for h in logger.handlers if isinstance(h, RotatingFileHandler)]
        assert len(rotating) == 1
        assert rotating[0].maxBytes == MAX_LOG_BYTES and rotating[0].backupCount == LOG_BACKUPS
        logger.warning("persona p1 unevaluable")
        rotating[0].flush()
        assert "WARNING - persona p1 unevaluable" in log_file.read_text(encoding="utf-8")
        _reset()


def test_repeated_setup_replaces_and_closes_handlers():
    with tempfile.TemporaryDirectory() as tmp:
        first = setup_logging("INFO", str(Path(tmp, "a.log")), stream=io.StringIO())
        old = list(first.handlers)
        second = setup_logging("INFO", str(Path(tmp, "b.log")), stream=io.StringIO())
        assert second is first and len(second.handlers) == 2
        assert not set(old) & set(second.handlers)
        assert all(h.stream is None for h in old if isinstance(h, RotatingFileHandler))
        _reset()


def test_get_logger_configures_once():
    logger = logging.getLogger("steer")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    configured = get_logger()
    assert configured is logger and len(configured.handlers) == 1
    assert get_logger().handlers == configured.handlers
    _reset()


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"  ok {name}")
    print("logging tests passed")
