"""Hermetic task programs standing in for executables on testbed nodes.

A node's ``/bin`` holds small stub files whose content names a registered
program.  Running one is a pure function of (node host name, virtual time,
arguments), so every transcript is reproducible.  Durations are fixed per
program so queue listings show stable RUN_TIME progressions.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from typing import Callable

from . import timefmt

STUB_MAGIC = "#!minigrid-task "
DEFAULT_DURATION = 5.0  # seconds of virtual run time


@dataclass(frozen=True)
class TaskResult:
    stdout: bytes
    stderr: bytes
    exit_code: int
    duration_s: float


def program_stub(name: str) -> bytes:
    return f"{STUB_MAGIC}{name}\n".encode()


def resolve_stub(content: bytes) -> str | None:
    try:
        text = content.decode()
    except UnicodeDecodeError:
        return None
    if text.startswith(STUB_MAGIC):
        return text[len(STUB_MAGIC):].strip()
    return None


def _short_host(host: str) -> str:
    return host.split(".", 1)[0]


def _run_hostname(host: str, when: datetime, args: tuple[str, ...]) -> TaskResult:
    name = host if "-f" in args else _short_host(host)
    return TaskResult(f"{name}\n".encode(), b"", 0, DEFAULT_DURATION)


def _run_date(host: str, when: datetime, args: tuple[str, ...]) -> TaskResult:
    return TaskResult(f"{timefmt.fmt_ctime_tz(when)}\n".encode(), b"", 0,
                      DEFAULT_DURATION)


def _run_echo(host: str, when: datetime, args: tuple[str, ...]) -> TaskResult:
    return TaskResult((" ".join(args) + "\n").encode(), b"", 0, DEFAULT_DURATION)


def _run_sleep(host: str, when: datetime, args: tuple[str, ...]) -> TaskResult:
    try:
        duration = float(args[0]) if args else 1.0
    except ValueError:
        return TaskResult(b"", b"sleep: invalid time interval\n", 1, 0.1)
    return TaskResult(b"", b"", 0, duration)


Program = Callable[[str, datetime, tuple[str, ...]], TaskResult]

REGISTRY: dict[str, Program] = {
    "hostname": _run_hostname,
    "date": _run_date,
    "echo": _run_echo,
    "sleep": _run_sleep,
}

STANDARD_BINARIES = {f"/bin/{name}": program_stub(name) for name in REGISTRY}


def run_executable(content: bytes, host: str, when: datetime,
                   args: tuple[str, ...]) -> TaskResult:
    """Execute stub ``content`` on ``host`` at virtual instant ``when``."""
    name = resolve_stub(content)
    program = REGISTRY.get(name or "")
    if program is None:
        return TaskResult(b"", f"{name or 'executable'}: not found\n".encode(),
                          127, 0.1)
    return program(host, when, args)
