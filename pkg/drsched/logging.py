from __future__ import annotations

import contextlib
import contextvars
import datetime as _dt
import json
import logging
import os
import sys
import traceback
from typing import Any, Iterator

# Below DEBUG; used for per-iteration solver chatter.
TRACE_LEVEL = 5
logging.addLevelName(TRACE_LEVEL, "TRACE")


def _logger_trace(self: logging.Logger, msg: str, *args: Any, **kwargs: Any) -> None:
    if self.isEnabledFor(TRACE_LEVEL):
        self._log(TRACE_LEVEL, msg, args, **kwargs)


if not hasattr(logging.Logger, "trace"):
    logging.Logger.trace = _logger_trace  # type: ignore[attr-defined]


_run_id_var: contextvars.ContextVar[str | None] = contextvars.ContextVar("drsched_run_id", default=None)

_THIRD_PARTY_LOGGERS = ("cvxpy", "clarabel", "scs")


@contextlib.contextmanager
def run_context(run_id: str) -> Iterator[None]:
    token = _run_id_var.set(str(run_id))
    try:
        yield
    finally:
        _run_id_var.reset(token)


def get_run_id() -> str | None:
    return _run_id_var.get()


class _RunIdFilter(logging.Filter):
    def filter(self, record: logging.LogRecord) -> bool:  # noqa: A003
        if not hasattr(record, "run_id"):
            record.run_id = get_run_id()  # type: ignore[attr-defined]
        return True


# Attributes every LogRecord carries; anything else came in through `extra=`.
_RESERVED_ATTRS = frozenset(vars(logging.LogRecord("", 0, "", 0, "", None, None))) | {"message", "asctime", "taskName"}


def _record_extras(record: logging.LogRecord) -> dict[str, Any]:
    return {k: v for k, v in record.__dict__.items() if k not in _RESERVED_ATTRS and not k.startswith("_")}


def _timestamp(record: logging.LogRecord) -> str:
    ts = _dt.datetime.fromtimestamp(record.created, tz=_dt.timezone.utc).astimezone()
    return ts.isoformat(timespec="milliseconds")


def _short(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


class PrettyFormatter(logging.Formatter):
    def __init__(self, *, use_color: bool) -> None:
        super().__init__()
        self._use_color = bool(use_color)

    def format(self, record: logging.LogRecord) -> str:
        parts = [_timestamp(record), record.levelname, record.name, record.getMessage()]
        extras = _record_extras(record)
        run_id = extras.pop("run_id", None)
        if run_id:
            parts.append(f"run_id={run_id}")
        parts.extend(f"{k}={_short(extras[k])}" for k in sorted(extras))

        line = " ".join(parts)
        if record.exc_info:
            line += "\n" + "".join(traceback.format_exception(*record.exc_info)).rstrip()
        if self._use_color:
            line = _colorize(record.levelno, line)
        return line


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload: dict[str, Any] = {
            "ts": _timestamp(record),
            "level": record.levelname.lower(),
            "logger": record.name,
            "msg": record.getMessage(),
        }
        payload.update(_record_extras(record))
        if record.exc_info:
            payload["exc"] = "".join(traceback.format_exception(*record.exc_info)).rstrip()
        return json.dumps(payload, separators=(",", ":"), sort_keys=True, default=str)


_LEVEL_COLORS = (
    (logging.ERROR, "31"),
    (logging.WARNING, "33"),
    (logging.INFO, "32"),
    (logging.DEBUG, "36"),
)


def _colorize(levelno: int, text: str) -> str:
    color = next((c for lvl, c in _LEVEL_COLORS if levelno >= lvl), "90")
    return f"\x1b[{color}m{text}\x1b[0m"


_LEVEL_NAMES = {
    "error": logging.ERROR,
    "warning": logging.WARNING,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
    "trace": TRACE_LEVEL,
}


def parse_log_level(value: str | None) -> int:
    raw = (value or "").strip().lower() or "info"
    try:
        return _LEVEL_NAMES[raw]
    except KeyError:
        raise ValueError(f"invalid log level: {value!r}") from None


def setup_logging(
    *,
    level: int = logging.INFO,
    log_format: str = "pretty",
    log_file: str | None = None,
    no_color: bool = False,
) -> None:
    """Configure root logging for a frontend.

    Records go to stderr and optionally to a file; stdout carries results only.
    """

    fmt = (log_format or "pretty").strip().lower()
    if fmt not in {"pretty", "json"}:
        raise ValueError(f"invalid log format: {log_format!r}")

    use_color = (not no_color) and bool(getattr(sys.stderr, "isatty", lambda: False)())

    def make_formatter(color: bool) -> logging.Formatter:
        return JsonFormatter() if fmt == "json" else PrettyFormatter(use_color=color)

    stderr_handler = logging.StreamHandler(stream=sys.stderr)
    stderr_handler.setFormatter(make_formatter(use_color))
    handlers: list[logging.Handler] = [stderr_handler]

    if log_file:
        path = os.path.expanduser(str(log_file))
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        fh = logging.FileHandler(path, encoding="utf-8")
        fh.setFormatter(make_formatter(False))
        handlers.append(fh)

    for handler in handlers:
        handler.addFilter(_RunIdFilter())

    logging.basicConfig(level=int(level), handlers=handlers, force=True)

    # Solver libraries log at INFO per solve; keep them quiet unless debugging.
    third_party_level = logging.DEBUG if int(level) <= logging.DEBUG else logging.WARNING
    for name in _THIRD_PARTY_LOGGERS:
        logging.getLogger(name).setLevel(third_party_level)
