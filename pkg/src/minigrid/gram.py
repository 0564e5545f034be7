"""Gatekeeper: authenticate, authorize, translate, submit, report status.

The gatekeeper is queue-neutral by construction.  A request names a target
queue flavor (the jobmanager suffix of the contact string); a registered
adapter translates the neutral request into that flavor's native submit
text and maps native job states back onto the four wire states PENDING,
ACTIVE, DONE, FAILED.  The state reported for a request never moves
backwards.

Authorization consults the gridmap (certificate subject, with one trailing
proxy CN stripped, to local user).  Rejections happen before any queue
mutation: a request that fails authentication or authorization leaves the
site exactly as it was.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Optional

from . import gsi, jobspec, staging, wire
from .errors import (
    AdapterFailure,
    MiniGridError,
    NotAuthorized,
    Timeout,
    UnknownJobmanager,
    UnknownRequest,
    VersionMismatch,
)
from .jobspec import ContactString, GramJobRequest, SubmitDescription
from .lrm import JobId, JobState

POLL_INTERVAL = 0.5     # seconds between synchronous job_run status polls
DEFAULT_TIMEOUT = 60.0  # seconds before a synchronous run gives up


class GramState(Enum):
    PENDING = "PENDING"
    ACTIVE = "ACTIVE"
    DONE = "DONE"
    FAILED = "FAILED"

    def __str__(self):
        return self.value


_STATE_MAP = {
    JobState.IDLE: GramState.PENDING,
    JobState.RUNNING: GramState.ACTIVE,
    JobState.SUSPENDED: GramState.ACTIVE,
    JobState.COMPLETED: GramState.DONE,
    JobState.REMOVED: GramState.FAILED,
    JobState.HELD: GramState.FAILED,
}

_STATE_ORDER = {GramState.PENDING: 0, GramState.ACTIVE: 1,
                GramState.DONE: 2, GramState.FAILED: 2}


def map_state(state: JobState) -> GramState:
    """Fixed total mapping from queue states to wire states."""
    return _STATE_MAP[state]


class AdapterHung(AdapterFailure):
    """Internal: the adapter process is not responding at all."""


@dataclass
class GramJobHandle:
    contact: ContactString | None
    request_id: str
    remote_job: JobId | None = None
    gram_state: GramState = GramState.PENDING

    def observe(self, state: GramState) -> GramState:
        # Monotone: never report a state earlier than one already seen.
        if _STATE_ORDER[state] >= _STATE_ORDER[self.gram_state]:
            self.gram_state = state
        return self.gram_state


class QueueAdapter:
    """Translates native submit text into one backing queue.

    The backend duck type needs: ``submit_parsed(sd, owner, workdir, spool)
    -> JobId``, ``job_state(job_id) -> JobState``, ``job_run_seconds(job_id)
    -> float``, ``cancel_job(job_id)``, and ``collect_outputs(job_id,
    names) -> dict[str, bytes]``.
    """

    def __init__(self, backend, dialect: str, version: str = "1.0",
                 alive_check: Callable[[], bool] | None = None,
                 version_check: Callable[[], bool] | None = None):
        self.backend = backend
        self.dialect = dialect
        self.version = version
        self._alive_check = alive_check or (lambda: True)
        self._version_check = version_check or (lambda: True)

    @property
    def alive(self) -> bool:
        return self._alive_check()

    @property
    def version_ok(self) -> bool:
        return self._version_check()

    def submit(self, native_text: str, *, owner: str, workdir: str,
               spool: Mapping[str, bytes]) -> JobId:
        if not self.alive:
            raise AdapterHung(f"{self.dialect} adapter is not responding")
        if not self.version_ok:
            raise VersionMismatch(
                f"native text built for {self.dialect} {self.version} rejected: "
                "software component mismatch on this site")
        parsed = jobspec.parse_dialect(native_text, self.dialect)
        sd = SubmitDescription(
            executable=parsed.executable,
            arguments=parsed.arguments,
            output=parsed.stdout_name,
            error=parsed.stderr_name,
        )
        return self.backend.submit_parsed(sd, owner=owner, workdir=workdir,
                                          spool=dict(spool))

    def poll(self, job_id: JobId) -> JobState:
        if not self.alive:
            raise AdapterHung(f"{self.dialect} adapter is not responding")
        return self.backend.job_state(job_id)

    def run_seconds(self, job_id: JobId) -> float:
        return self.backend.job_run_seconds(job_id)

    def cancel(self, job_id: JobId) -> None:
        if not self.alive:
            raise AdapterHung(f"{self.dialect} adapter is not responding")
        self.backend.cancel_job(job_id)

    def collect(self, job_id: JobId, stdout_name: str,
                stderr_name: str) -> tuple[bytes, bytes]:
        if not self.alive:
            raise AdapterHung(f"{self.dialect} adapter is not responding")
        outputs = self.backend.collect_outputs(job_id, [stdout_name, stderr_name])
        return outputs[stdout_name], outputs[stderr_name]


@dataclass
class GatekeeperConfig:
    host: str
    port: int = 2119
    gridmap: dict[str, str] = field(default_factory=dict)
    max_skew: int = 300


@dataclass
class _RequestState:
    handle: GramJobHandle
    adapter: QueueAdapter
    owner: str
    stdout_name: str
    stderr_name: str


class Gatekeeper:
    """Wire-facing service answering the six framed message types."""

    def __init__(self, config: GatekeeperConfig, *,
                 clock, staging_area: staging.StagingArea,
                 trust_anchors: Mapping[str, gsi.Certificate],
                 log: Callable[[str], None] = lambda line: None):
        self.config = config
        self.clock = clock
        self.staging = staging_area
        self.trust_anchors = trust_anchors
        self.log = log
        self.adapters: dict[str, QueueAdapter] = {}
        self.requests: dict[str, _RequestState] = {}
        self._incoming: dict[str, dict] = {}

    def register_adapter(self, lrm_name: str, adapter: QueueAdapter) -> None:
        self.adapters[lrm_name] = adapter

    # ----------------------------------------------------------- request API

    def _authenticate(self, chain, client_clock_now: int | None) -> str:
        gsi.verify_chain(chain, self.trust_anchors, self.clock.epoch(),
                         self.config.max_skew)
        subject = gsi.gridmap_subject(chain[0].subject_dn)
        user = self.config.gridmap.get(subject)
        if user is None:
            raise NotAuthorized(
                f"subject {subject!r} has no gridmap entry on {self.config.host}")
        return user

    def handle_request(self, req: GramJobRequest,
                       chain: tuple[gsi.Certificate, ...],
                       client_clock_now: int | None = None) -> GramJobHandle:
        """Authenticate, authorize, translate, and submit one request.

        Nothing is mutated if authentication or authorization fails; the
        staged sandbox is only consumed after both checks pass.
        """
        user = self._authenticate(chain, client_clock_now)
        adapter = self.adapters.get(req.target_lrm)
        if adapter is None:
            raise UnknownJobmanager(
                f"no adapter for jobmanager-{req.target_lrm} on {self.config.host}")
        sandbox = self.staging.sandbox(req.request_id)
        native = jobspec.render_dialect(req, adapter.dialect)
        spool = {name: sandbox.read(name) for name, _size, _d in sandbox.manifest}
        workdir = str(sandbox.root / "out")
        remote = adapter.submit(native, owner=user, workdir=workdir, spool=spool)
        handle = GramJobHandle(contact=None, request_id=req.request_id,
                               remote_job=remote)
        self.requests[req.request_id] = _RequestState(
            handle=handle, adapter=adapter, owner=user,
            stdout_name=req.stdout_name, stderr_name=req.stderr_name)
        self.log(f"request {req.request_id}: user {user} -> "
                 f"jobmanager-{req.target_lrm} job {remote}")
        return handle

    def _request(self, request_id: str) -> _RequestState:
        try:
            return self.requests[request_id]
        except KeyError:
            raise UnknownRequest(f"no such request {request_id!r}") from None

    def poll_status(self, request_id: str) -> tuple[GramState, float]:
        state = self._request(request_id)
        remote_state = state.adapter.poll(state.handle.remote_job)
        run_s = state.adapter.run_seconds(state.handle.remote_job)
        return state.handle.observe(map_state(remote_state)), run_s

    def collect(self, request_id: str) -> tuple[bytes, bytes]:
        state = self._request(request_id)
        return state.adapter.collect(state.handle.remote_job,
                                     state.stdout_name, state.stderr_name)

    def cancel(self, request_id: str) -> None:
        state = self._request(request_id)
        state.adapter.cancel(state.handle.remote_job)
        state.handle.observe(GramState.FAILED)

    # --------------------------------------------------------- wire dispatch

    def handle_message(self, msg: wire.Message, src: str) -> wire.Message | None:
        try:
            return self._dispatch(msg, src)
        except AdapterHung as exc:
            # A dead adapter means silence on the wire, visible in the log.
            self.log(f"ERROR adapter failure: {exc.detail}")
            return None
        except MiniGridError as exc:
            self.log(f"ERROR {exc.code}: {exc.detail}")
            return wire.error_message(exc)

    def _dispatch(self, msg: wire.Message, src: str) -> wire.Message | None:
        if msg.mtype == wire.XFER_PUT:
            return self._on_xfer_put(msg)
        if msg.mtype == wire.JOB_REQUEST:
            return self._on_job_request(msg)
        if msg.mtype == wire.JOB_STATUS:
            state, run_s = self.poll_status(msg.get("request-id"))
            return wire.reply_to(msg, {"state": str(state),
                                       "run-time-ms": str(round(run_s * 1000))})
        if msg.mtype == wire.JOB_COLLECT:
            stdout, stderr = self.collect(msg.get("request-id"))
            return wire.reply_to(msg, {"stdout-len": str(len(stdout))},
                                 stdout + stderr)
        if msg.mtype == wire.XFER_GET:
            sandbox = self.staging.sandbox(msg.get("request-id"))
            return wire.reply_to(msg, payload=sandbox.read_or_empty(msg.get("name")))
        raise MiniGridError(f"unhandled message type {msg.mtype}")

    def _on_xfer_put(self, msg: wire.Message) -> wire.Message:
        request_id = msg.get("request-id")
        pending = self._incoming.setdefault(
            request_id, {"items": {}, "chunks": {}})
        name = msg.get("name")
        idx = int(msg.get("chunk-index", "0"))
        count = int(msg.get("chunk-count", "1"))
        chunks = pending["chunks"].setdefault(name, {})
        chunks[idx] = msg.payload
        if len(chunks) < count:
            return wire.reply_to(msg, {"staged": "no"})
        payload = b"".join(chunks[i] for i in range(count))
        pending["items"][name] = staging.TransferItem(
            source_name=name, dest_name=name,
            digest=msg.get("digest"), payload=payload)
        if len(pending["items"]) < int(msg.get("item-count", "1")):
            return wire.reply_to(msg, {"staged": "no"})
        chain = wire.decode_chain(msg.get("credential"))
        request = staging.TransferRequest(
            direction="in", items=tuple(pending["items"].values()), chain=chain)
        del self._incoming[request_id]
        self.staging.stage_in(request_id, request, self.clock.epoch())
        self.log(f"staged {len(request.items)} item(s) for request {request_id}")
        return wire.reply_to(msg, {"staged": "yes"})

    def _on_job_request(self, msg: wire.Message) -> wire.Message:
        chain = wire.decode_chain(msg.get("credential"))
        stage_in = tuple(
            tuple(part.split("=", 1)) for part in msg.get("stage-in").split(",")
            if part)
        req = GramJobRequest(
            executable=msg.get("executable"),
            arguments=jobspec.split_arguments(msg.get("arguments")),
            stdout_name=msg.get("stdout-name") or "stdout",
            stderr_name=msg.get("stderr-name") or "stderr",
            owner_dn=msg.get("owner-dn"),
            target_lrm=msg.get("target-lrm"),
            stage_in=stage_in,
            request_id=msg.get("request-id"),
        )
        client_clock = int(msg.get("client-clock", "0") or "0")
        handle = self.handle_request(req, chain, client_clock)
        return wire.reply_to(msg, {"remote-id": str(handle.remote_job),
                                   "state": str(handle.gram_state)})


# ------------------------------------------------------------- client side

def job_request_message(req: GramJobRequest, chain,
                        client_clock: int) -> wire.Message:
    return wire.Message(wire.JOB_REQUEST, {
        "request-id": req.request_id,
        "executable": req.executable,
        "arguments": jobspec.render_arguments(req.arguments),
        "stdout-name": req.stdout_name,
        "stderr-name": req.stderr_name,
        "owner-dn": req.owner_dn,
        "target-lrm": req.target_lrm,
        "stage-in": ",".join(f"{n}={d}" for n, d in req.stage_in),
        "credential": wire.encode_chain(chain),
        "client-clock": str(client_clock),
    })


def xfer_put_messages(request_id: str, contents: Mapping[str, bytes],
                      chain) -> list[wire.Message]:
    messages = []
    credential = wire.encode_chain(chain)
    names = list(contents)
    for name in names:
        data = contents[name]
        chunks = wire.chunk_payload(data)
        for idx, chunk in enumerate(chunks):
            messages.append(wire.Message(wire.XFER_PUT, {
                "request-id": request_id,
                "name": name,
                "digest": staging.content_digest(data),
                "chunk-index": str(idx),
                "chunk-count": str(len(chunks)),
                "item-count": str(len(names)),
                "credential": credential,
            }, chunk))
    return messages


class GramClient:
    """Client half of the protocol, bound to one source node."""

    def __init__(self, transport, src: str, clock,
                 resolve: Callable[[str], str],
                 allocate_request_id: Callable[[], str]):
        self.transport = transport
        self.src = src
        self.clock = clock
        self.resolve = resolve
        self.allocate_request_id = allocate_request_id

    def _call(self, contact: ContactString, msg: wire.Message,
              timeout_s: float) -> wire.Message:
        dst = self.resolve(contact.host)
        reply = self.transport.call(self.src, dst, msg, timeout_s)
        if reply is None:
            raise Timeout(f"no response from {contact.render()} "
                          f"after {timeout_s:g}s")
        return wire.raise_if_error(reply)

    def put_items(self, contact: ContactString, request_id: str,
                  contents: Mapping[str, bytes], chain,
                  timeout_s: float = DEFAULT_TIMEOUT) -> None:
        for msg in xfer_put_messages(request_id, contents, chain):
            self._call(contact, msg, timeout_s)

    def submit(self, contact: ContactString, req: GramJobRequest, chain,
               timeout_s: float = DEFAULT_TIMEOUT) -> GramJobHandle:
        reply = self._call(contact,
                           job_request_message(req, chain, self.clock.epoch()),
                           timeout_s)
        return GramJobHandle(
            contact=contact, request_id=req.request_id,
            remote_job=JobId.parse(reply.get("remote-id")),
            gram_state=GramState(reply.get("state")))

    def status(self, contact: ContactString, request_id: str,
               timeout_s: float = DEFAULT_TIMEOUT) -> tuple[GramState, float]:
        reply = self._call(contact, wire.Message(wire.JOB_STATUS,
                                                 {"request-id": request_id}),
                           timeout_s)
        return (GramState(reply.get("state")),
                int(reply.get("run-time-ms", "0")) / 1000.0)

    def collect(self, contact: ContactString, request_id: str,
                timeout_s: float = DEFAULT_TIMEOUT) -> tuple[bytes, bytes]:
        reply = self._call(contact, wire.Message(wire.JOB_COLLECT,
                                                 {"request-id": request_id}),
                           timeout_s)
        split = int(reply.get("stdout-len", "0"))
        return reply.payload[:split], reply.payload[split:]

    def job_run(self, contact: ContactString, executable: str,
                args: tuple[str, ...], cred: gsi.ProxyCredential,
                read_file: Callable[[str], bytes | None],
                timeout_s: float = DEFAULT_TIMEOUT) -> str:
        """Synchronous convenience: stage, submit, poll to DONE, collect."""
        content = read_file(executable)
        if content is None:
            raise MiniGridError(f"{executable!r} not found on the submit node")
        request_id = self.allocate_request_id()
        name = executable.rsplit("/", 1)[-1]
        req = GramJobRequest(
            executable=executable, arguments=tuple(args),
            stdout_name="stdout", stderr_name="stderr",
            owner_dn=cred.subject_dn, target_lrm=contact.lrm,
            stage_in=((name, staging.content_digest(content)),),
            request_id=request_id)
        deadline = self.transport.loop.now_s + timeout_s
        self.put_items(contact, request_id, {name: content}, cred.chain,
                       timeout_s)
        self.submit(contact, req, cred.chain,
                    max(0.0, deadline - self.transport.loop.now_s))
        while True:
            remaining = deadline - self.transport.loop.now_s
            if remaining <= 0:
                raise Timeout(f"no response from {contact.render()} "
                              f"after {timeout_s:g}s")
            state, _run_s = self.status(contact, request_id, remaining)
            if state is GramState.DONE:
                break
            if state is GramState.FAILED:
                raise AdapterFailure(
                    f"remote job for request {request_id} failed")
            self.transport.loop.advance(POLL_INTERVAL)
        stdout, _stderr = self.collect(
            contact, request_id, max(0.1, deadline - self.transport.loop.now_s))
        return stdout.decode()
