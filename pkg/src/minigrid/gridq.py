"""Grid-universe routing: local queue entries mirroring remote jobs.

A Globus-universe submission allocates a normal entry in the submitter's
own queue, then asynchronously stages and submits the request to the
remote gatekeeper named by its grid_resource contact.  A periodic mirror
tick polls each live handle (at most once per poll interval) and maps the
remote wire state onto the local record: PENDING keeps it Idle, ACTIVE
shows Running with the remote run time, DONE collects outputs and marks it
Completed, FAILED parks it Held so the user can inspect and release.

Unanswered exchanges bump a retry counter; after enough silent polls the
job goes Held with reason "remote contact lost".
"""

from __future__ import annotations

import posixpath
from dataclasses import dataclass
from typing import Callable

from . import staging
from .errors import MiniGridError, NotGridUniverse
from .gram import GramClient, GramJobHandle, GramState
from .jobspec import ContactString, SubmitDescription, Universe, to_gram_request
from .lrm import JobId, JobState, LocalResourceManager

POLL_INTERVAL = 2.0
MAX_RETRIES = 5

_MIRROR = {GramState.PENDING: JobState.IDLE,
           GramState.ACTIVE: JobState.RUNNING,
           GramState.DONE: JobState.COMPLETED,
           GramState.FAILED: JobState.HELD}


def mirror_state(state: GramState) -> JobState:
    """Local queue state mirroring one wire state."""
    return _MIRROR[state]


@dataclass
class GridJobRecord:
    local_id: JobId
    contact: ContactString
    request_id: str
    sd: SubmitDescription
    owner: str
    workdir: str
    handle: GramJobHandle | None = None
    outstanding_since: float | None = None
    last_poll: float | None = None
    retries: int = 0
    last_run_s: float = 0.0
    executing_logged: bool = False
    collecting: bool = False
    finished: bool = False


class GridQueueManager:
    """Submitter-side manager for all grid-universe entries of one queue."""

    def __init__(self, lrm: LocalResourceManager, client: GramClient, clock, *,
                 write_file: Callable[[str, bytes], None],
                 append_file: Callable[[str, str], None],
                 log: Callable[[str], None] = lambda line: None,
                 poll_interval: float = POLL_INTERVAL,
                 max_retries: int = MAX_RETRIES):
        self.lrm = lrm
        self.client = client
        self.clock = clock
        self.write_file = write_file
        self.append_file = append_file
        self.log = log
        self.poll_interval = poll_interval
        self.max_retries = max_retries
        self.records: dict[JobId, GridJobRecord] = {}

    # ------------------------------------------------------------ submission

    def _log_event(self, record: GridJobRecord, code: str, text: str) -> None:
        if record.sd.log:
            path = posixpath.join(record.workdir, record.sd.log)
            line = staging.log_event_line(code, record.local_id,
                                          self.clock.read(), text)
            self.append_file(path, line + "\n")

    def submit_grid(self, sd: SubmitDescription, owner: str, now, *,
                    cred_loader, read_file, workdir: str = ".") -> JobId:
        """Queue a Globus-universe description and route it to its contact.

        The local JobId exists either way; credential problems surface as
        the job going Held with the failure as its hold reason.
        """
        if sd.universe is not Universe.GLOBUS:
            raise NotGridUniverse("submit description is not Globus universe")
        local_id = self.lrm.enqueue(sd, owner, now, workdir=workdir,
                                    read_file=read_file)
        _tag, contact = sd.grid_resource
        request_id = self.client.allocate_request_id()
        record = GridJobRecord(local_id=local_id, contact=contact,
                               request_id=request_id, sd=sd, owner=owner,
                               workdir=workdir)
        self.records[local_id] = record
        self._log_event(record, staging.LOG_SUBMITTED,
                        f"Job submitted from host {self.lrm.host}")
        try:
            cred = cred_loader()
        except MiniGridError as exc:
            reason = f"{exc.code}: {exc.detail}"
            if exc.remediation:
                reason += f" ({exc.remediation})"
            self.lrm.hold(local_id, now, reason=reason)
            record.finished = True
            return local_id

        spool = self.lrm.jobs[local_id].spool
        digests = {name: staging.content_digest(data)
                   for name, data in spool.items()}
        _contact, req = to_gram_request(sd, cred.subject_dn, request_id, digests)
        record.outstanding_since = self.client.transport.loop.now_s

        def fail(exc: MiniGridError) -> None:
            if record.finished:
                return
            reason = f"{exc.code}: {exc.detail}"
            self.lrm.hold(local_id, self.clock.read(), reason=reason)
            record.finished = True
            self.log(f"job {local_id} held: {reason}")

        def on_submit_reply(reply):
            record.outstanding_since = None
            record.retries = 0
            if reply.is_error:
                from .errors import from_code
                fail(from_code(reply.get("code"), reply.get("detail"),
                               reply.get("remediation")))
                return
            record.handle = GramJobHandle(
                contact=contact, request_id=request_id,
                remote_job=JobId.parse(reply.get("remote-id")),
                gram_state=GramState(reply.get("state")))
            self.log(f"job {local_id} routed to {contact.render()} "
                     f"as {reply.get('remote-id')}")

        def on_put_reply(reply):
            if reply.is_error:
                record.outstanding_since = None
                from .errors import from_code
                fail(from_code(reply.get("code"), reply.get("detail"),
                               reply.get("remediation")))
                return
            if reply.get("staged") != "yes":
                return
            from .gram import job_request_message
            self.client.transport.send(
                self.client.src, self.client.resolve(contact.host),
                job_request_message(req, cred.chain, self.clock.epoch()),
                on_reply=on_submit_reply)

        from .gram import xfer_put_messages
        dst = self.client.resolve(contact.host)
        for msg in xfer_put_messages(request_id, spool, cred.chain):
            self.client.transport.send(self.client.src, dst, msg,
                                       on_reply=on_put_reply)
        return local_id

    # ---------------------------------------------------------- mirroring

    def _live_records(self) -> list[GridJobRecord]:
        return [r for r in self.records.values()
                if not r.finished and r.local_id in self.lrm.jobs]

    def mirror_tick(self, now) -> None:
        """Poll each live handle at most once per interval; apply mapping."""
        loop_now = self.client.transport.loop.now_s
        for record in self._live_records():
            if record.outstanding_since is not None:
                if loop_now - record.outstanding_since >= self.poll_interval:
                    record.retries += 1
                    record.outstanding_since = None
                    if record.retries >= self.max_retries:
                        self.lrm.hold(record.local_id, now,
                                      reason="remote contact lost")
                        record.finished = True
                        self.log(f"job {record.local_id} held: remote contact lost "
                                 f"after {record.retries} silent polls")
                continue
            if record.handle is None or record.collecting:
                continue
            if record.last_poll is not None and \
                    loop_now - record.last_poll < self.poll_interval:
                continue
            record.last_poll = loop_now
            record.outstanding_since = loop_now
            from . import wire
            msg = wire.Message(wire.JOB_STATUS,
                               {"request-id": record.request_id})
            self.client.transport.send(
                self.client.src, self.client.resolve(record.contact.host), msg,
                on_reply=lambda reply, rec=record: self._on_status(rec, reply))

    def _on_status(self, record: GridJobRecord, reply) -> None:
        record.outstanding_since = None
        record.retries = 0
        if record.finished:
            return
        if reply.is_error:
            from .errors import from_code
            exc = from_code(reply.get("code"), reply.get("detail"))
            self.lrm.hold(record.local_id, self.clock.read(),
                          reason=f"{exc.code}: {exc.detail}")
            record.finished = True
            return
        state = GramState(reply.get("state"))
        record.handle.observe(state)
        record.last_run_s = int(reply.get("run-time-ms", "0")) / 1000.0
        now = self.clock.read()
        if state is GramState.ACTIVE:
            if not record.executing_logged:
                record.executing_logged = True
                self._log_event(record, staging.LOG_EXECUTING,
                                f"Job executing on {record.contact.render()}")
            self.lrm.mirror_running(record.local_id, now,
                                    claim=f"grid/{record.request_id}",
                                    run_seconds=record.last_run_s)
        elif state is GramState.DONE:
            self._collect(record)
        elif state is GramState.FAILED:
            self.lrm.hold(record.local_id, now, reason="remote job failed")
            record.finished = True

    def _collect(self, record: GridJobRecord) -> None:
        record.collecting = True
        from . import wire
        msg = wire.Message(wire.JOB_COLLECT, {"request-id": record.request_id})
        record.outstanding_since = self.client.transport.loop.now_s
        self.client.transport.send(
            self.client.src, self.client.resolve(record.contact.host), msg,
            on_reply=lambda reply, rec=record: self._on_collect(rec, reply))

    def _on_collect(self, record: GridJobRecord, reply) -> None:
        record.outstanding_since = None
        if record.finished:
            return
        if reply.is_error:
            self.lrm.hold(record.local_id, self.clock.read(),
                          reason=f"collect failed: {reply.get('detail')}")
            record.finished = True
            return
        split = int(reply.get("stdout-len", "0"))
        stdout, stderr = reply.payload[:split], reply.payload[split:]
        if record.sd.output:
            self.write_file(posixpath.join(record.workdir, record.sd.output),
                            stdout)
        if record.sd.error:
            self.write_file(posixpath.join(record.workdir, record.sd.error),
                            stderr)
        now = self.clock.read()
        self._log_event(record, staging.LOG_TERMINATED, "Job terminated.")
        self.lrm.mirror_completed(record.local_id, now,
                                  run_seconds=record.last_run_s)
        record.finished = True
        self.log(f"job {record.local_id} completed from "
                 f"{record.contact.render()}")
