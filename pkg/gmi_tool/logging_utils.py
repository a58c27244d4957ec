from __future__ import annotations

import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path


def _log_dir() -> Path:
    configured = os.getenv("GMI_LOG_DIR")
    if configured:
        return Path(configured)
    return Path(__file__).resolve().parents[1] / "logs"


def get_logger(name: str = "gmi") -> logging.Logger:
    """
    Return a named logger writing to a rotating ``gmi.log`` file and the console.

    Handlers are attached to the root ``gmi`` logger on first use; child
    loggers such as ``gmi.trainer`` propagate to it.
    """
    root = logging.getLogger("gmi")
    if not root.handlers:
        root.setLevel(logging.INFO)

        logs_dir = _log_dir()
        logs_dir.mkdir(parents=True, exist_ok=True)
        logfile = logs_dir / "gmi.log"

        handler = RotatingFileHandler(logfile, maxBytes=5 * 1024 * 1024, backupCount=5)
        formatter = logging.Formatter(
            "%(asctime)s | %(levelname)s | %(name)s | %(message)s"
        )
        handler.setFormatter(formatter)
        root.addHandler(handler)

        console = logging.StreamHandler()
        console.setFormatter(formatter)
        root.addHandler(console)

    if name == "gmi" or name.startswith("gmi."):
        return logging.getLogger(name)
    return logging.getLogger(f"gmi.{name}")
