"""Per-site batch queue: scheduler, slot model, job state machine, history.

One manager owns one site's queue.  All mutation happens through a single
serialized command stream (the owning daemon interleaves network messages
and timer ticks deterministically); queries return consistent snapshots.

Scheduling policy is strict priority-then-FIFO: Idle jobs are considered in
(priority descending, submitted ascending, id ascending) order and each is
offered the best matchmaking slot among those still unclaimed in this tick.

Terminal jobs linger in the active queue for a short configurable time
before moving to the append-only history file, so a freshly completed job
remains visible to queue listings for a few seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Callable, NamedTuple

from . import classad, timefmt
from .jobspec import SubmitDescription, Universe
from .errors import IllegalTransition, MiniGridError, SpoolFailure, UnknownJob

DEFAULT_LINGER = 4.0      # seconds a terminal job stays visible in the queue
DEFAULT_MEMORY_MIB = 1001
DEFAULT_OPSYS = "LINUX"
DEFAULT_ARCH = "INTEL"

HISTORY_SCHEMA_HEADER = "minigrid-history\t1"


class JobState(Enum):
    IDLE = ("Idle", "I")
    RUNNING = ("Running", "R")
    COMPLETED = ("Completed", "C")
    REMOVED = ("Removed", "X")
    HELD = ("Held", "H")
    SUSPENDED = ("Suspended", "S")

    def __init__(self, label: str, letter: str):
        self.label = label
        self.letter = letter

    def __str__(self):
        return self.label


LEGAL_TRANSITIONS: dict[JobState, frozenset[JobState]] = {
    JobState.IDLE: frozenset({JobState.RUNNING, JobState.REMOVED, JobState.HELD}),
    JobState.RUNNING: frozenset({JobState.COMPLETED, JobState.IDLE,
                                 JobState.SUSPENDED, JobState.REMOVED}),
    JobState.SUSPENDED: frozenset({JobState.RUNNING, JobState.REMOVED}),
    JobState.HELD: frozenset({JobState.IDLE, JobState.REMOVED}),
    JobState.COMPLETED: frozenset(),
    JobState.REMOVED: frozenset(),
}

TERMINAL_STATES = frozenset({JobState.COMPLETED, JobState.REMOVED})


def is_legal_transition(old: JobState, new: JobState) -> bool:
    return new in LEGAL_TRANSITIONS[old]


class JobId(NamedTuple):
    cluster: int
    proc: int

    def __str__(self):
        return f"{self.cluster}.{self.proc}"

    @classmethod
    def parse(cls, text: str) -> "JobId":
        try:
            cluster, proc = text.split(".")
            return cls(int(cluster), int(proc))
        except ValueError:
            raise UnknownJob(f"bad job id {text!r} (want cluster.proc)") from None


def submit_ack(count: int, cluster: int) -> str:
    return f"{count} job(s) submitted to cluster {cluster}."


@dataclass
class JobRecord:
    id: JobId
    owner: str
    submitted: datetime
    spec: SubmitDescription
    cmd: str
    workdir: str = "."
    priority: int = 0
    state: JobState = JobState.IDLE
    claimed_slot: str | None = None
    completed_at: datetime | None = None
    terminal_at: datetime | None = None
    exit_code: int | None = None
    hold_reason: str | None = None
    accumulated_run_s: float = 0.0
    running_since: datetime | None = None
    spool: dict[str, bytes] = field(default_factory=dict)

    def run_time(self, now: datetime) -> float:
        total = self.accumulated_run_s
        if self.running_since is not None:
            total += (now - self.running_since).total_seconds()
        return total

    @property
    def is_grid(self) -> bool:
        return self.spec.universe is Universe.GLOBUS


@dataclass
class SlotState:
    name: str
    opsys: str = DEFAULT_OPSYS
    arch: str = DEFAULT_ARCH
    state: str = "Unclaimed"
    activity: str = "Idle"
    load_avg: float = 0.0
    memory: int = DEFAULT_MEMORY_MIB
    since: datetime | None = None  # last state/activity change
    claimed_by: JobId | None = None

    def ad(self) -> classad.ClassAd:
        return classad.machine_ad(self.name, state=self.state,
                                  activity=self.activity, load_avg=self.load_avg,
                                  memory=self.memory, opsys=self.opsys,
                                  arch=self.arch)


@dataclass
class QueueSnapshot:
    host: str
    rows: list[dict]
    counts: dict[str, int]
    summary: str


class LocalResourceManager:
    """The queue and slot pool of one site."""

    def __init__(self, site: str, host: str, slot_count: int, *,
                 memory: int = DEFAULT_MEMORY_MIB, opsys: str = DEFAULT_OPSYS,
                 arch: str = DEFAULT_ARCH, linger: float = DEFAULT_LINGER,
                 history_path: Path | None = None,
                 now: datetime | None = None):
        self.site = site
        self.host = host
        self.linger = linger
        self.history_path = Path(history_path) if history_path else None
        self._next_cluster = 1
        self.jobs: dict[JobId, JobRecord] = {}
        self.history: list[JobRecord] = []
        self.transitions: list[tuple[JobId, JobState | None, JobState]] = []
        self.slots: dict[str, SlotState] = {}
        for i in range(1, slot_count + 1):
            name = f"slot{i}@{host}"
            self.slots[name] = SlotState(name=name, memory=memory, opsys=opsys,
                                         arch=arch, since=now)

    # ------------------------------------------------------------- helpers

    def _record(self, job_id: JobId) -> JobRecord:
        try:
            return self.jobs[job_id]
        except KeyError:
            raise UnknownJob(f"no job {job_id} in the queue") from None

    def find(self, job_id: JobId) -> JobRecord:
        """Live or historical record; raises UnknownJob when never seen."""
        record = self.jobs.get(job_id)
        if record is not None:
            return record
        for record in self.history:
            if record.id == job_id:
                return record
        raise UnknownJob(f"no job {job_id} on this site")

    def _transition(self, record: JobRecord, new: JobState, now: datetime) -> None:
        if not is_legal_transition(record.state, new):
            raise IllegalTransition(
                f"job {record.id}: {record.state.label} -> {new.label} not allowed")
        self.transitions.append((record.id, record.state, new))
        record.state = new
        if new in TERMINAL_STATES:
            record.terminal_at = now

    def _release_slot(self, record: JobRecord, now: datetime) -> None:
        slot = self.slots.get(record.claimed_slot or "")
        if slot is not None and slot.claimed_by == record.id:
            slot.state = "Unclaimed"
            slot.activity = "Idle"
            slot.load_avg = 0.0
            slot.claimed_by = None
            slot.since = now
        record.claimed_slot = None

    def _stop_clock(self, record: JobRecord, now: datetime) -> None:
        if record.running_since is not None:
            record.accumulated_run_s += (now - record.running_since).total_seconds()
            record.running_since = None

    # ---------------------------------------------------------- submission

    def submit(self, sd: SubmitDescription, owner: str, now: datetime, *,
               workdir: str = ".",
               read_file: Callable[[str], bytes | None] | None = None,
               priority: int = 0) -> JobId:
        """Queue a Vanilla-universe description; returns the first JobId.

        The executable (and optional input) content is spooled at submit
        time; a missing source is a SpoolFailure.
        """
        if sd.universe is not Universe.VANILLA:
            raise MiniGridError(
                "only Vanilla universe submits here; route grid jobs via the grid queue")
        return self.enqueue(sd, owner, now, workdir=workdir,
                            read_file=read_file, priority=priority)

    def enqueue(self, sd: SubmitDescription, owner: str, now: datetime, *,
                workdir: str = ".",
                read_file: Callable[[str], bytes | None] | None = None,
                priority: int = 0) -> JobId:
        spool: dict[str, bytes] = {}
        if read_file is not None:
            for path in filter(None, (sd.executable, sd.input)):
                content = read_file(path)
                if content is None:
                    raise SpoolFailure(f"cannot read {path!r} on the submit node")
                spool[_basename(path)] = content
        cluster = self._next_cluster
        self._next_cluster += 1
        first: JobId | None = None
        for proc in range(sd.queue_count):
            job_id = JobId(cluster, proc)
            record = JobRecord(id=job_id, owner=owner, submitted=now, spec=sd,
                               cmd=sd.cmd, workdir=workdir, priority=priority,
                               spool=dict(spool))
            self.jobs[job_id] = record
            self.transitions.append((job_id, None, JobState.IDLE))
            if first is None:
                first = job_id
        assert first is not None
        return first

    # ---------------------------------------------------------- scheduling

    def idle_vanilla_jobs(self) -> list[JobRecord]:
        records = [r for r in self.jobs.values()
                   if r.state is JobState.IDLE and not r.is_grid]
        records.sort(key=lambda r: (-r.priority, r.submitted, r.id))
        return records

    def schedule_tick(self, now: datetime) -> list[tuple[JobId, str]]:
        """Assign idle jobs to unclaimed slots; applied atomically per tick."""
        assignments: list[tuple[JobId, str]] = []
        for record in self.idle_vanilla_jobs():
            ads = [slot.ad() for slot in self.slots.values()
                   if slot.state == "Unclaimed"]
            job = classad.job_ad(owner=record.owner, cmd=record.cmd,
                                 requirements=record.spec.requirements
                                 if record.spec.requirements is not None else True)
            ranked = classad.matchmake(job, ads)
            if not ranked:
                continue
            slot = self.slots[ranked[0]]
            self._transition(record, JobState.RUNNING, now)
            record.claimed_slot = slot.name
            record.running_since = now
            slot.state = "Claimed"
            slot.activity = "Busy"
            slot.load_avg = 1.0
            slot.claimed_by = record.id
            slot.since = now
            assignments.append((record.id, slot.name))
        return assignments

    # ------------------------------------------------------- state changes

    def complete(self, job_id: JobId, now: datetime, exit_code: int = 0) -> None:
        record = self._record(job_id)
        if record.state is not JobState.RUNNING:
            raise IllegalTransition(
                f"job {job_id} is {record.state.label}, not Running")
        self._stop_clock(record, now)
        self._transition(record, JobState.COMPLETED, now)
        record.completed_at = now
        record.exit_code = exit_code
        self._release_slot(record, now)

    def remove(self, job_id: JobId, now: datetime) -> None:
        record = self._record(job_id)
        if record.state in TERMINAL_STATES:
            raise IllegalTransition(f"job {job_id} already {record.state.label}")
        self._stop_clock(record, now)
        self._transition(record, JobState.REMOVED, now)
        self._release_slot(record, now)

    def hold(self, job_id: JobId, now: datetime, reason: str = "") -> None:
        record = self._record(job_id)
        if record.state in (JobState.RUNNING, JobState.SUSPENDED):
            # Vacate first; Held is only reachable from Idle.
            if record.state is JobState.SUSPENDED:
                self._transition(record, JobState.RUNNING, now)
            self._stop_clock(record, now)
            self._transition(record, JobState.IDLE, now)
            self._release_slot(record, now)
        self._transition(record, JobState.HELD, now)
        record.hold_reason = reason or None

    def release(self, job_id: JobId, now: datetime) -> None:
        record = self._record(job_id)
        self._transition(record, JobState.IDLE, now)
        record.hold_reason = None

    def suspend(self, job_id: JobId, now: datetime) -> None:
        record = self._record(job_id)
        self._stop_clock(record, now)
        self._transition(record, JobState.SUSPENDED, now)

    def resume(self, job_id: JobId, now: datetime) -> None:
        record = self._record(job_id)
        self._transition(record, JobState.RUNNING, now)
        record.running_since = now

    # Mirror hooks used by the grid queue: remote accounting is authoritative.

    def mirror_running(self, job_id: JobId, now: datetime, claim: str,
                       run_seconds: float) -> None:
        record = self._record(job_id)
        if record.state is not JobState.RUNNING:
            self._transition(record, JobState.RUNNING, now)
            record.claimed_slot = claim
        record.accumulated_run_s = run_seconds

    def mirror_completed(self, job_id: JobId, now: datetime,
                         run_seconds: float, exit_code: int = 0) -> None:
        record = self._record(job_id)
        if record.state is not JobState.RUNNING:
            self._transition(record, JobState.RUNNING, now)
        record.accumulated_run_s = run_seconds
        record.running_since = None
        self._transition(record, JobState.COMPLETED, now)
        record.completed_at = now
        record.exit_code = exit_code
        record.claimed_slot = None

    # ------------------------------------------------------------- history

    def reap(self, now: datetime) -> list[JobRecord]:
        """Move terminal records past their linger time to history."""
        moved = []
        for job_id in list(self.jobs):
            record = self.jobs[job_id]
            if record.state not in TERMINAL_STATES or record.terminal_at is None:
                continue
            if (now - record.terminal_at).total_seconds() >= self.linger:
                moved.append(self.jobs.pop(job_id))
        moved.sort(key=lambda r: (r.terminal_at, r.id))
        for record in moved:
            self.history.append(record)
            self._append_history_file(record)
        return moved

    def _append_history_file(self, record: JobRecord) -> None:
        if self.history_path is None:
            return
        new_file = not self.history_path.exists()
        self.history_path.parent.mkdir(parents=True, exist_ok=True)
        with self.history_path.open("a", encoding="utf-8") as fh:
            if new_file:
                fh.write(HISTORY_SCHEMA_HEADER + "\n")
            fields = [
                str(record.id), record.owner,
                str(int(record.submitted.timestamp())),
                f"{record.accumulated_run_s:.3f}", record.state.letter,
                str(int(record.terminal_at.timestamp())), record.cmd,
            ]
            fh.write("\t".join(fields) + "\n")

    # -------------------------------------------------------------- queries

    def query_queue(self, now: datetime) -> QueueSnapshot:
        counts = {"completed": 0, "removed": 0, "idle": 0,
                  "running": 0, "held": 0, "suspended": 0}
        rows = []
        for record in sorted(self.jobs.values(), key=lambda r: r.id):
            counts[record.state.label.lower()] += 1
            rows.append({
                "id": record.id,
                "owner": record.owner,
                "submitted": record.submitted,
                "run_time": record.run_time(now),
                "st": record.state.letter,
                "pri": record.priority,
                "cmd": _queue_cmd(record),
            })
        total = sum(counts.values())
        summary = (f"{total} jobs; {counts['completed']} completed, "
                   f"{counts['removed']} removed, {counts['idle']} idle, "
                   f"{counts['running']} running, {counts['held']} held, "
                   f"{counts['suspended']} suspended")
        return QueueSnapshot(host=self.host, rows=rows, counts=counts,
                             summary=summary)

    def query_status(self) -> list[SlotState]:
        return [self.slots[name] for name in sorted(self.slots)]

    def query_history(self) -> list[JobRecord]:
        return sorted(self.history,
                      key=lambda r: (r.terminal_at, r.id), reverse=True)

    # ------------------------------------------------------------ rendering

    def render_queue(self, now: datetime) -> str:
        snap = self.query_queue(now)
        lines = [f"-- Submitter: {snap.host}",
                 " ID      OWNER         SUBMITTED     RUN_TIME ST PRI SIZE CMD"]
        for row in snap.rows:
            lines.append(
                f"{str(row['id']):>5}   {row['owner']:<12}"
                f"{timefmt.fmt_short(row['submitted']):>11} "
                f"{timefmt.fmt_dhms(row['run_time']):>12} {row['st']} "
                f"{row['pri']:>3} {0.0:>5.1f}  {row['cmd']}"
                .rstrip())
        lines.append("")
        lines.append(snap.summary)
        return "\n".join(lines) + "\n"

    def render_status(self, now: datetime) -> str:
        lines = ["Name           OpSys  Arch   State     Activity LoadAv Mem   ActvtyTime",
                 ""]
        groups: dict[str, list[SlotState]] = {}
        for slot in self.query_status():
            active_for = (now - slot.since).total_seconds() if slot.since else 0.0
            lines.append(
                f"{slot.name[:14]:<15}{slot.opsys:<7}{slot.arch:<7}"
                f"{slot.state:<10}{slot.activity:<9}{slot.load_avg:<7.3f}"
                f"{slot.memory:<6}{timefmt.fmt_dhms(active_for)}")
            groups.setdefault(f"{slot.arch}/{slot.opsys}", []).append(slot)
        lines.append("")
        lines.append("               Total Owner Claimed Unclaimed Matched Preempting Backfill")
        lines.append("")

        def totals_row(label: str, slots: list[SlotState]) -> str:
            owner = sum(1 for s in slots if s.state == "Owner")
            claimed = sum(1 for s in slots if s.state == "Claimed")
            unclaimed = sum(1 for s in slots if s.state == "Unclaimed")
            return (f"{label:>14} {len(slots):>5} {owner:>5} {claimed:>7} "
                    f"{unclaimed:>9} {0:>7} {0:>10} {0:>8}")

        everything = []
        for label in sorted(groups):
            lines.append(totals_row(label, groups[label]))
            everything.extend(groups[label])
        lines.append(totals_row("Total", everything))
        return "\n".join(lines) + "\n"

    def render_history(self) -> str:
        lines = [" ID      OWNER         SUBMITTED     RUN_TIME ST    COMPLETED CMD"]
        for record in self.query_history():
            lines.append(
                f"{str(record.id):>5}   {record.owner:<12}"
                f"{timefmt.fmt_short(record.submitted):>11} "
                f"{timefmt.fmt_dhms(record.accumulated_run_s):>12} "
                f"{record.state.letter} {timefmt.fmt_short(record.terminal_at):>12} "
                f"{record.cmd[:15]}".rstrip())
        return "\n".join(lines) + "\n"


def _basename(path: str) -> str:
    return path.rsplit("/", 1)[-1]


def _queue_cmd(record: JobRecord) -> str:
    parts = (_basename(record.spec.executable),) + record.spec.arguments
    return " ".join(parts)
