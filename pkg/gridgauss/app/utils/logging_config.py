import json
import logging
import sys
import uuid
from datetime import datetime, timezone
from typing import Any, Dict, Optional

from gridgauss.app.config.settings import settings

# Attributes every LogRecord carries; anything else came in through ``extra``
_RESERVED_ATTRS = set(vars(logging.LogRecord("", 0, "", 0, "", (), None))) | {"message", "asctime"}


class JsonFormatter(logging.Formatter):
    """
    Format log records as one JSON object per line.

    Fields passed through ``extra`` are merged into the object; values that
    are not JSON serialisable are rendered with ``str``.
    """

    def format(self, record: logging.LogRecord) -> str:
        payload: Dict[str, Any] = {
            "timestamp": datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        for key, value in record.__dict__.items():
            if key not in _RESERVED_ATTRS and not key.startswith("_"):
                payload[key] = value
        if record.exc_info:
            payload["exception"] = self.formatException(record.exc_info)
        return json.dumps(payload, default=str)


class CommandLoggerAdapter(logging.LoggerAdapter):
    """Stamps every record with the running command and its run id."""

    def process(self, msg, kwargs):
        extra = dict(self.extra or {})
        extra.update(kwargs.get("extra") or {})
        kwargs["extra"] = extra
        return msg, kwargs


def setup_logging(level: str = "INFO", json_format: bool = False) -> None:
    """
    Configure the root logger with a single stderr handler.

    stdout is left alone so command results can be piped.
    """
    handler = logging.StreamHandler(sys.stderr)
    if json_format:
        handler.setFormatter(JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))


def configure_logging_from_env() -> None:
    """Apply LOG_LEVEL and LOG_FORMAT (``text`` or ``json``)."""
    setup_logging(settings.log_level, settings.log_format.lower() == "json")


def get_command_logger(command: str, run_id: Optional[str] = None) -> CommandLoggerAdapter:
    run_id = run_id or str(uuid.uuid4())
    logger = logging.getLogger(f"gridgauss.commands.{command}")
    return CommandLoggerAdapter(logger, {"command": command, "run_id": run_id})
