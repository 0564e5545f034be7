"""Authenticated file movement into and out of per-job sandboxes.

Every transferred item carries a 256-bit content digest that is verified
on receipt, in both directions.  Sandboxes are isolated per job reference
and discarded only after outputs are confirmed staged back.  Item names
must resolve inside the sandbox root; traversal attempts are rejected.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import gsi
from .errors import DigestMismatch, MissingSource, PathEscape, SandboxMissing

LOG_SUBMITTED = "000"
LOG_EXECUTING = "001"
LOG_TERMINATED = "005"


def content_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class TransferItem:
    source_name: str
    dest_name: str
    digest: str
    payload: bytes = b""


@dataclass(frozen=True)
class TransferRequest:
    direction: str  # "in" | "out"
    items: tuple[TransferItem, ...]
    chain: tuple[gsi.Certificate, ...] = ()


@dataclass
class Sandbox:
    """Isolated working directory for one job on the execute node."""

    job_ref: str
    root: Path
    manifest: list[tuple[str, int, str]] = field(default_factory=list)
    executable: str | None = None

    def path(self, name: str) -> Path:
        candidate = (self.root / name).resolve()
        if candidate != self.root.resolve() and \
                self.root.resolve() not in candidate.parents:
            raise PathEscape(f"item name {name!r} escapes the sandbox")
        return candidate

    def write(self, name: str, data: bytes) -> None:
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
        self.manifest = [(n, s, d) for n, s, d in self.manifest if n != name]
        self.manifest.append((name, len(data), content_digest(data)))

    def read(self, name: str) -> bytes:
        target = self.path(name)
        if not target.is_file():
            raise MissingSource(f"{name!r} not present in sandbox {self.job_ref}")
        return target.read_bytes()

    def read_or_empty(self, name: str) -> bytes:
        try:
            return self.read(name)
        except MissingSource:
            return b""


class StagingArea:
    """Execute-node side: sandbox per job reference, digest-checked I/O."""

    def __init__(self, root: Path | str, *,
                 trust_anchors: Mapping[str, gsi.Certificate] | None = None,
                 max_skew: int = 0):
        self.root = Path(root)
        # Live reference on purpose: anchors may be distributed after build.
        self.trust_anchors = trust_anchors if trust_anchors is not None else {}
        self.max_skew = max_skew
        self.sandboxes: dict[str, Sandbox] = {}

    def _authenticate(self, chain: Sequence[gsi.Certificate], now: int) -> None:
        gsi.verify_chain(chain, self.trust_anchors, now, self.max_skew)

    def stage_in(self, job_ref: str, request: TransferRequest, now: int, *,
                 authenticated: bool = True) -> Sandbox:
        """Materialize the job's sandbox from a transfer request.

        Retry-safe: repeating a request whose manifest already landed
        returns the existing sandbox untouched.  Node-local moves (spool to
        execution sandbox on the same host) pass ``authenticated=False``.
        """
        if authenticated:
            self._authenticate(request.chain, now)
        wanted = [(item.dest_name, len(item.payload), item.digest)
                  for item in request.items]
        existing = self.sandboxes.get(job_ref)
        if existing is not None and sorted(existing.manifest) == sorted(wanted):
            return existing
        for item in request.items:
            if content_digest(item.payload) != item.digest:
                raise DigestMismatch(
                    f"{item.source_name!r} arrived corrupted "
                    f"(expected {item.digest[:12]}..)")
        sandbox = existing or Sandbox(job_ref=job_ref,
                                      root=self.root / job_ref)
        sandbox.root.mkdir(parents=True, exist_ok=True)
        for index, item in enumerate(request.items):
            sandbox.write(item.dest_name, item.payload)
            if index == 0:
                sandbox.executable = item.dest_name  # first item is runnable
        self.sandboxes[job_ref] = sandbox
        return sandbox

    def sandbox(self, job_ref: str) -> Sandbox:
        try:
            return self.sandboxes[job_ref]
        except KeyError:
            raise SandboxMissing(f"no sandbox for job {job_ref!r}") from None

    def stage_out(self, job_ref: str, names: Iterable[str],
                  chain: Sequence[gsi.Certificate] = (), *,
                  now: int = 0, authenticated: bool = False) -> dict[str, bytes]:
        """Collect output items by name; absent outputs come back empty so
        the submit side still materializes (zero-length) files."""
        if authenticated:
            self._authenticate(chain, now)
        sandbox = self.sandbox(job_ref)
        return {name: sandbox.read_or_empty(name) for name in names}

    def discard(self, job_ref: str) -> None:
        sandbox = self.sandboxes.pop(job_ref, None)
        if sandbox is None:
            return
        for name, _size, _digest in sorted(sandbox.manifest, reverse=True):
            try:
                sandbox.path(name).unlink(missing_ok=True)
            except PathEscape:
                pass


def make_items(contents: Mapping[str, bytes]) -> tuple[TransferItem, ...]:
    """Transfer items for in-memory contents, digests filled in."""
    return tuple(
        TransferItem(source_name=name, dest_name=name,
                     digest=content_digest(data), payload=data)
        for name, data in contents.items())


def log_event_line(code: str, job_id, when: datetime, text: str) -> str:
    """``NNN (cluster.proc) MM/DD HH:MM:SS <event text>``"""
    return f"{code} ({job_id}) {when:%m/%d %H:%M:%S} {text}"
