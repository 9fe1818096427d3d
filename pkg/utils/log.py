# utils/log.py
import logging
import os
from pathlib import Path

LOG_FORMAT = '%(asctime)s || %(name)s || %(levelname)s || %(message)s'


class CustomLogger(logging.Logger):
    def danger(self, message, *args, **kwargs):
        self.error(f"❌ {message}", *args, **kwargs)

    def success(self, message, *args, **kwargs):
        self.info(f"✅ {message}", *args, **kwargs)

    def warn_custom(self, message, *args, **kwargs):
        self.warning(f"⚠️ {message}", *args, **kwargs)


def _level_from_env() -> int:
    name = os.getenv("PSLOSS_LOG_LEVEL", "INFO").upper()
    return getattr(logging, name, logging.INFO)


def setup_logger(name: str) -> CustomLogger:
    logging.setLoggerClass(CustomLogger)
    logger = logging.getLogger(name)
    logger.setLevel(_level_from_env())

    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)

    return logger


def attach_run_log(output_dir: Path, filename: str = "train.log") -> logging.Handler:
    """Mirror every toolkit logger into a file inside the run directory.

    Returns the handler so the caller can detach it when the run ends.
    """
    output_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(output_dir / filename, encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    for logger in logging.Logger.manager.loggerDict.values():
        if isinstance(logger, CustomLogger):
            logger.addHandler(handler)
    return handler


def detach_run_log(handler: logging.Handler) -> None:
    for logger in logging.Logger.manager.loggerDict.values():
        if isinstance(logger, CustomLogger) and handler in logger.handlers:
            logger.removeHandler(handler)
    handler.close()
