"""Deterministic multi-site harness: sites, daemons, faults, scenarios.

Each site is one head node carrying a batch queue, a gatekeeper, a grid
queue manager, per-user credential directories, and a filesystem rooted in
the run directory.  One site also carries the certificate-authority role;
its root certificate is distributed to every site's trust directory and
every configured user receives a signed certificate at build time.

All daemons share one event loop.  Timers (queue scheduling every second,
grid mirroring every two seconds) and message deliveries interleave in a
fixed total order, so identical scenarios produce byte-identical
transcripts.  Faults are reversible toggles consulted dynamically: message
drop/corruption hooks, adapter health, credential visibility, and per-node
clock offsets.
"""

from __future__ import annotations

import io
import posixpath
import random
import shlex
import socket
import struct
import tempfile
import threading
import time as _time
from dataclasses import dataclass, field
from pathlib import Path

from . import events, gram, gridq, gsi, scenarios, staging, tasks, wire
from .errors import (
    DuplicateSiteName,
    MiniGridError,
    NoCaRole,
    ScriptError,
    UnknownTarget,
)
from .events import EventLoop, Transport, VirtualClock
from .gram import Gatekeeper, GatekeeperConfig, GramClient, QueueAdapter
from .gridq import GridQueueManager
from .jobspec import SubmitDescription, Universe, parse_submit_file
from .lrm import JobId, JobState, LocalResourceManager, submit_ack

LRM_TICK = 1.0
GRIDQ_TICK = 2.0
DEFAULT_PASSPHRASE = "gridpass"
TESTBED_MAX_SKEW = 60  # tighter than the library default; skew faults must bite

FAULT_KINDS = ("clock_skew", "drop_proxy", "kill_adapter", "corrupt_transfer",
               "partition", "adapter_version_mismatch")

# jobmanager suffix served by each queue dialect
JOBMANAGER_FOR_DIALECT = {"condor": "condor", "sgelike": "sge"}


@dataclass(frozen=True)
class SiteSpec:
    name: str
    host: str
    slots: int = 2
    dialect: str = "condor"
    clock_skew: float = 0.0
    roles: frozenset[str] = frozenset({"lrm", "gatekeeper"})


@dataclass
class FaultSpec:
    kind: str
    target: str
    value: float = 0.0  # clock_skew offset in seconds
    window: tuple[float, float] | None = None  # [start, end) loop seconds

    def key(self) -> tuple[str, str]:
        return (self.kind, self.target)


class FaultSet:
    def __init__(self, loop: EventLoop):
        self.loop = loop
        self.faults: list[FaultSpec] = []

    def inject(self, fault: FaultSpec) -> None:
        self.faults.append(fault)

    def clear(self, kind: str, target: str) -> None:
        self.faults = [f for f in self.faults if f.key() != (kind, target)]

    def active(self, kind: str, target: str) -> list[FaultSpec]:
        now = self.loop.now_s
        out = []
        for fault in self.faults:
            if fault.key() != (kind, target):
                continue
            if fault.window is not None:
                start, end = fault.window
                if not (start <= now < end):
                    continue
            out.append(fault)
        return out

    def snapshot(self) -> list[FaultSpec]:
        return list(self.faults)


def parse_config(text: str) -> list[SiteSpec]:
    """``site <name> host <dns> slots <n> dialect <d> skew <s> roles <r,..>``"""
    specs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if tokens[0] != "site" or len(tokens) < 2 or len(tokens) % 2 != 0:
            raise MiniGridError(f"config line {lineno}: expected "
                                f"'site <name> key value ...', got {line!r}")
        options = dict(zip(tokens[2::2], tokens[3::2]))
        unknown = set(options) - {"host", "slots", "dialect", "skew", "roles"}
        if unknown:
            raise MiniGridError(f"config line {lineno}: unknown keys {sorted(unknown)}")
        specs.append(SiteSpec(
            name=tokens[1],
            host=options.get("host", tokens[1]),
            slots=int(options.get("slots", "2")),
            dialect=options.get("dialect", "condor"),
            clock_skew=float(options.get("skew", "0")),
            roles=frozenset(options.get("roles", "lrm,gatekeeper").split(",")),
        ))
    return specs


def default_specs() -> list[SiteSpec]:
    """The physical three-machine topology: ca, grid-b, grid-v."""
    return [
        SiteSpec("ca", "ca.it2.ddu.ac.in", roles=frozenset({"lrm", "gatekeeper", "ca"})),
        SiteSpec("grid-b", "grid-b.it2.ddu.ac.in"),
        SiteSpec("grid-v", "grid-v.it2.ddu.ac.in"),
    ]


@dataclass
class UserEnv:
    name: str
    display: str
    home: str
    passphrase: str = DEFAULT_PASSPHRASE
    dn: str = ""


class NodeClock(VirtualClock):
    """Node time = loop time + configured skew + active skew faults."""

    def __init__(self, loop: EventLoop, base_skew: float, extra):
        super().__init__(loop, base_skew)
        self._extra = extra

    def read(self):
        base = events.BASE_EPOCH
        from datetime import timedelta
        return base + timedelta(seconds=self.loop.now_s + self.skew_s +
                                self._extra())


class LogFile:
    """Per-daemon append-only log stamped with the node's virtual clock."""

    def __init__(self, path: Path, clock):
        self.path = path
        self.clock = clock
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def __call__(self, line: str) -> None:
        stamp = self.clock.read().strftime("%Y-%m-%d %H:%M:%S")
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(f"[{stamp}] {line}\n")

    def text(self) -> str:
        return self.path.read_text() if self.path.exists() else ""


class GuardedCredentialStore(gsi.CredentialStore):
    """Credential directory whose proxy can be hidden by a fault."""

    def __init__(self, directory, blocked, label=None):
        super().__init__(directory, label=label)
        self._blocked = blocked

    def load_proxy(self):
        if self._blocked():
            from .errors import NoProxyFound
            raise NoProxyFound(f"no proxy credential in {self.label}")
        return super().load_proxy()


class Node:
    """One head node: filesystem, users, clocks, daemon logs."""

    def __init__(self, testbed: "Testbed", spec: SiteSpec):
        self.testbed = testbed
        self.spec = spec
        self.name = spec.name
        self.host = spec.host
        self.root = testbed.run_dir / spec.name
        self.fs_root = self.root / "fs"
        self.fs_root.mkdir(parents=True, exist_ok=True)
        self.clock = NodeClock(
            testbed.loop, spec.clock_skew,
            extra=lambda: sum(f.value for f in
                              testbed.faults.active("clock_skew", spec.name)))
        self.users: dict[str, UserEnv] = {}

    # virtual-path file access, rooted in the run directory

    def real_path(self, vpath: str) -> Path:
        return self.fs_root / vpath.lstrip("/")

    def write_file(self, vpath: str, data: bytes) -> None:
        path = self.real_path(vpath)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)

    def append_text(self, vpath: str, text: str) -> None:
        path = self.real_path(vpath)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", encoding="utf-8") as fh:
            fh.write(text)

    def read_file(self, vpath: str) -> bytes | None:
        path = self.real_path(vpath)
        return path.read_bytes() if path.is_file() else None

    def add_user(self, name: str, display: str | None = None) -> UserEnv:
        user = UserEnv(name=name, display=display or name, home=f"/home/{name}")
        self.users[name] = user
        return user

    def user(self, name: str) -> UserEnv:
        try:
            return self.users[name]
        except KeyError:
            raise UnknownTarget(f"no user {name!r} on site {self.name}") from None

    def resolve_user_path(self, user: UserEnv, path: str) -> str:
        return path if path.startswith("/") else posixpath.join(user.home, path)

    def cred_dir(self, user: UserEnv) -> Path:
        return self.real_path(posixpath.join(user.home, ".minigrid"))

    def cred_store(self, user: UserEnv) -> GuardedCredentialStore:
        blocked = lambda: bool(self.testbed.faults.active("drop_proxy", self.name))
        label = posixpath.join(user.home, ".minigrid")
        return GuardedCredentialStore(self.cred_dir(user), blocked, label=label)


class SiteDaemon:
    """All services of one site, driven by the shared event loop."""

    def __init__(self, testbed: "Testbed", spec: SiteSpec):
        self.testbed = testbed
        self.spec = spec
        self.node = Node(testbed, spec)
        self.clock = self.node.clock
        self.logs = {
            name: LogFile(self.node.root / "log" / f"{name}.log", self.clock)
            for name in ("lrm", "gatekeeper", "gridq")
        }
        self.lrm = LocalResourceManager(
            spec.name, spec.host, spec.slots,
            history_path=self.node.root / "history",
            now=self.clock.read())
        self.staging = staging.StagingArea(
            self.node.root / "sandboxes",
            trust_anchors=testbed.trust_anchors,
            max_skew=TESTBED_MAX_SKEW)
        self.gatekeeper = Gatekeeper(
            GatekeeperConfig(host=spec.host, gridmap=testbed.gridmap,
                             max_skew=TESTBED_MAX_SKEW),
            clock=self.clock, staging_area=self.staging,
            trust_anchors=testbed.trust_anchors,
            log=self.logs["gatekeeper"])
        adapter = QueueAdapter(
            self, spec.dialect,
            alive_check=lambda: not testbed.faults.active("kill_adapter", spec.name),
            version_check=lambda: not testbed.faults.active(
                "adapter_version_mismatch", spec.name))
        self.adapter = adapter
        self.gatekeeper.register_adapter(JOBMANAGER_FOR_DIALECT[spec.dialect],
                                         adapter)
        self.client = GramClient(
            testbed.transport, spec.name, self.clock,
            resolve=testbed.resolve_host,
            allocate_request_id=testbed.allocate_request_id)
        self.gridq = GridQueueManager(
            self.lrm, self.client, self.clock,
            write_file=self.node.write_file,
            append_file=self.node.append_text,
            log=self.logs["gridq"])
        self._job_meta: dict[JobId, dict] = {}

    # ------------------------------------------------------------- timers

    def start_timers(self) -> None:
        self.testbed.loop.schedule(LRM_TICK, self.spec.name, self._lrm_tick,
                                   label=f"{self.spec.name}:lrm-tick")
        self.testbed.loop.schedule(GRIDQ_TICK, self.spec.name, self._gridq_tick,
                                   label=f"{self.spec.name}:gridq-tick")

    def _lrm_tick(self) -> None:
        now = self.clock.read()
        for job_id, slot in self.lrm.schedule_tick(now):
            self._start_job(job_id, slot)
        self.lrm.reap(now)
        self.testbed.loop.schedule(LRM_TICK, self.spec.name, self._lrm_tick,
                                   label=f"{self.spec.name}:lrm-tick")

    def _gridq_tick(self) -> None:
        self.gridq.mirror_tick(self.clock.read())
        self.testbed.loop.schedule(GRIDQ_TICK, self.spec.name, self._gridq_tick,
                                   label=f"{self.spec.name}:gridq-tick")

    # ----------------------------------------------------------- execution

    def _log_job_event(self, record, code: str, text: str) -> None:
        if record.spec.log:
            path = posixpath.join(record.workdir, record.spec.log)
            line = staging.log_event_line(code, record.id, self.clock.read(),
                                          text)
            self.node.append_text(path, line + "\n")

    def _start_job(self, job_id: JobId, slot: str) -> None:
        record = self.lrm.jobs[job_id]
        job_ref = f"run-{job_id}"
        request = staging.TransferRequest(
            direction="in", items=staging.make_items(record.spool))
        sandbox = self.staging.stage_in(job_ref, request, self.clock.epoch(),
                                        authenticated=False)
        executable_name = record.spec.executable.rsplit("/", 1)[-1]
        content = sandbox.read(executable_name)
        self._log_job_event(record, staging.LOG_EXECUTING,
                            f"Job executing on host {self.spec.host}")
        result = tasks.run_executable(content, self.spec.host,
                                      self.clock.read(),
                                      record.spec.arguments)
        self.logs["lrm"](f"job {job_id} started on {slot} "
                         f"({record.cmd}, {result.duration_s:g}s)")
        self.testbed.loop.schedule(
            result.duration_s, self.spec.name,
            lambda: self._finish_job(job_id, job_ref, result),
            label=f"{self.spec.name}:complete:{job_id}")

    def _finish_job(self, job_id: JobId, job_ref: str, result) -> None:
        record = self.lrm.jobs.get(job_id)
        if record is None or record.state is not JobState.RUNNING:
            return  # removed while running
        sandbox = self.staging.sandbox(job_ref)
        out_name = record.spec.output
        err_name = record.spec.error
        if out_name:
            sandbox.write(out_name, result.stdout)
        if err_name:
            sandbox.write(err_name, result.stderr)
        now = self.clock.read()
        self.lrm.complete(job_id, now, exit_code=result.exit_code)
        names = [n for n in (out_name, err_name) if n]
        outputs = self.staging.stage_out(job_ref, names)
        for name, data in outputs.items():
            self.node.write_file(posixpath.join(record.workdir, name), data)
        self._log_job_event(record, staging.LOG_TERMINATED, "Job terminated.")
        self.staging.discard(job_ref)
        self.logs["lrm"](f"job {job_id} completed (exit {result.exit_code})")

    # --------------------------------------------- queue backend (adapter)

    def submit_parsed(self, sd: SubmitDescription, *, owner: str, workdir: str,
                      spool: dict[str, bytes]) -> JobId:
        now = self.clock.read()
        job_id = self.lrm.enqueue(sd, owner, now, workdir=workdir)
        self.lrm.jobs[job_id].spool = dict(spool)
        self._job_meta[job_id] = {"workdir": workdir}
        return job_id

    def job_state(self, job_id: JobId) -> JobState:
        return self.lrm.find(job_id).state

    def job_run_seconds(self, job_id: JobId) -> float:
        return self.lrm.find(job_id).run_time(self.clock.read())

    def cancel_job(self, job_id: JobId) -> None:
        self.lrm.remove(job_id, self.clock.read())

    def collect_outputs(self, job_id: JobId, names) -> dict[str, bytes]:
        record = self.lrm.find(job_id)
        out = {}
        for name in names:
            data = self.node.read_file(posixpath.join(record.workdir, name))
            out[name] = data if data is not None else b""
        return out

    # ----------------------------------------------------- CLI-facing ops

    def submit_text(self, text: str, user: UserEnv) -> list[tuple[JobId, int]]:
        """Route each description of a submit file; returns (first id, count)."""
        results = []
        for sd in parse_submit_file(text):
            now = self.clock.read()
            read_file = lambda path: self.node.read_file(
                self.node.resolve_user_path(user, path))
            if sd.universe is Universe.GLOBUS:
                store = self.node.cred_store(user)
                job_id = self.gridq.submit_grid(
                    sd, user.name, now, cred_loader=store.load_proxy,
                    read_file=read_file, workdir=user.home)
            else:
                job_id = self.lrm.submit(sd, user.name, now,
                                         workdir=user.home, read_file=read_file)
                self._log_job_event(
                    self.lrm.jobs[job_id], staging.LOG_SUBMITTED,
                    f"Job submitted from host {self.spec.host}")
            results.append((job_id, sd.queue_count))
        return results

    # ------------------------------------------------------- wire dispatch

    def handle_message(self, msg: wire.Message, src: str):
        if msg.mtype == wire.JOB_STATUS and "view" in msg.headers:
            return self._handle_view(msg)
        if msg.mtype == wire.JOB_REQUEST and msg.get("mode") == "local-submit":
            return self._handle_wire_submit(msg)
        return self.gatekeeper.handle_message(msg, src)

    def _handle_view(self, msg: wire.Message):
        view = msg.get("view")
        now = self.clock.read()
        if view == "queue":
            text = self.lrm.render_queue(now)
        elif view == "status":
            text = self.lrm.render_status(now)
        elif view == "history":
            text = self.lrm.render_history()
        else:
            return wire.error_message(MiniGridError(f"unknown view {view!r}"))
        return wire.reply_to(msg, payload=text.encode())

    def _handle_wire_submit(self, msg: wire.Message):
        try:
            user = self.node.user(msg.get("owner"))
            results = self.submit_text(msg.payload.decode(), user)
        except MiniGridError as exc:
            return wire.error_message(exc)
        lines = ["Submitting job(s)."]
        lines += [submit_ack(count, job_id.cluster) for job_id, count in results]
        return wire.reply_to(msg, payload=("\n".join(lines) + "\n").encode())


class Testbed:
    """A running multi-site deployment over one deterministic event loop."""

    def __init__(self, specs: list[SiteSpec], run_dir: Path | str | None = None,
                 seed: int = 2013):
        names = [spec.name for spec in specs]
        if len(set(names)) != len(names):
            raise DuplicateSiteName(f"site names must be unique: {names}")
        ca_sites = [spec for spec in specs if "ca" in spec.roles]
        if len(ca_sites) != 1:
            raise NoCaRole(
                f"exactly one site must carry the ca role, found {len(ca_sites)}")
        for spec in specs:
            if spec.slots < 1:
                raise MiniGridError(f"site {spec.name} needs at least one slot")
            if spec.dialect not in JOBMANAGER_FOR_DIALECT:
                raise MiniGridError(f"site {spec.name}: unknown dialect "
                                    f"{spec.dialect!r}")

        if run_dir is None:
            run_dir = Path(tempfile.mkdtemp(prefix="minigrid-"))
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.rng = random.Random(seed)
        self.loop = EventLoop()
        self.transport = Transport(self.loop)
        self.faults = FaultSet(self.loop)
        self.trust_anchors: dict[str, gsi.Certificate] = {}
        self.gridmap: dict[str, str] = {}
        self.registry: dict[str, str] = {}  # host -> site name
        self._request_counter = 0
        self.sites: dict[str, SiteDaemon] = {}

        self.transport.drop_hook = self._drop_hook
        self.transport.corrupt_hook = self._corrupt_hook

        for spec in specs:
            daemon = SiteDaemon(self, spec)
            self.sites[spec.name] = daemon
            self.registry[spec.host] = spec.name
            self.transport.register(spec.name, daemon.handle_message)

        self._provision(ca_sites[0])
        for daemon in self.sites.values():
            daemon.start_timers()

    # -------------------------------------------------------- provisioning

    def _provision(self, ca_spec: SiteSpec) -> None:
        ca_daemon = self.sites[ca_spec.name]
        ca_name = f"simpleCA-{ca_spec.host}"
        self.ca = gsi.CertificateAuthority.initialize(
            ca_daemon.node.root / "ca", ca_name,
            now=ca_daemon.clock.epoch() - 30 * 86400, rng=self.rng)
        self.trust_anchors[self.ca.root.subject_dn] = self.ca.root
        for daemon in self.sites.values():
            trust_dir = daemon.node.root / "etc" / "trust"
            trust_dir.mkdir(parents=True, exist_ok=True)
            (trust_dir / "ca-cert.pem").write_text(
                gsi.certificate_to_text(self.ca.root))
            for vpath, content in tasks.STANDARD_BINARIES.items():
                daemon.node.write_file(vpath, content)
            users = [("gtuser", "GT User"), (daemon.spec.name, None)]
            for name, display in users:
                user = daemon.node.add_user(name, display)
                dn = (f"/O=Grid/OU=GlobusTest/OU={ca_name}/OU=Local"
                      f"/CN={user.display}")
                cert, key = self.ca.issue(
                    dn, lifetime=365 * 86400, passphrase=user.passphrase,
                    now=daemon.clock.epoch() - 86400, rng=self.rng)
                user.dn = dn
                gsi.CredentialStore(daemon.node.cred_dir(user)).save_user(cert, key)
                self.gridmap[dn] = name
                daemon.node.write_file(
                    posixpath.join(user.home, "myjob.sub"),
                    scenarios.MYJOB_SUB.encode())
                daemon.node.write_file(
                    posixpath.join(user.home, "condortest.submit"),
                    scenarios.CONDORTEST_SUBMIT.encode())
        gridmap_lines = [f'"{dn}" {user}' for dn, user in sorted(self.gridmap.items())]
        for daemon in self.sites.values():
            (daemon.node.root / "etc" / "gridmap").write_text(
                "\n".join(gridmap_lines) + "\n")

    # ------------------------------------------------------------ plumbing

    def _drop_hook(self, src: str, dst: str) -> bool:
        return bool(self.faults.active("partition", src) or
                    self.faults.active("partition", dst))

    def _corrupt_hook(self, dst: str, msg: wire.Message) -> wire.Message:
        if msg.mtype in (wire.XFER_PUT, wire.XFER_GET) and msg.payload and \
                self.faults.active("corrupt_transfer", dst):
            # Flip one bit of the payload; framing stays intact.
            corrupted = bytes([msg.payload[0] ^ 0x01]) + msg.payload[1:]
            return wire.Message(msg.mtype, dict(msg.headers), corrupted)
        return msg

    def resolve_host(self, host: str) -> str:
        return self.registry.get(host, f"unrouted:{host}")

    def allocate_request_id(self) -> str:
        self._request_counter += 1
        return f"req-{self._request_counter:05d}"

    def site(self, name: str) -> SiteDaemon:
        try:
            return self.sites[name]
        except KeyError:
            raise UnknownTarget(f"no site named {name!r}") from None

    def advance(self, dt_s: float):
        return self.loop.advance(dt_s)

    # --------------------------------------------------------------- faults

    def inject_fault(self, fault: FaultSpec) -> None:
        if fault.kind not in FAULT_KINDS:
            raise UnknownTarget(f"unknown fault kind {fault.kind!r} "
                                f"(one of {', '.join(FAULT_KINDS)})")
        if fault.target not in self.sites:
            raise UnknownTarget(f"no site named {fault.target!r}")
        self.faults.inject(fault)

    def clear_fault(self, kind: str, target: str) -> None:
        self.faults.clear(kind, target)

    # ------------------------------------------------------------ scenarios

    def run_script(self, text: str) -> str:
        """Execute a scenario script; returns the full transcript."""
        from . import cli

        out = io.StringIO()
        last_output = ""
        for index, raw in enumerate(text.splitlines()):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("expect "):
                wanted = line[len("expect "):]
                if wanted not in last_output:
                    raise ScriptError(
                        f"expected {wanted!r} in previous output, got:\n"
                        f"{last_output}", step=index)
                continue
            try:
                tokens = shlex.split(line)
            except ValueError as exc:
                raise ScriptError(f"bad quoting: {exc}", step=index) from exc
            if len(tokens) < 4 or tokens[0] != "at" or "@" not in tokens[2]:
                raise ScriptError(
                    f"expected 'at <t> <user>@<site> <command...>', got {line!r}",
                    step=index)
            try:
                at_s = float(tokens[1])
            except ValueError:
                raise ScriptError(f"bad time {tokens[1]!r}", step=index) from None
            user_name, _, site_name = tokens[2].partition("@")
            if site_name not in self.sites:
                raise ScriptError(f"unknown site {site_name!r}", step=index)
            target_ms = max(self.loop.now_ms, round(at_s * 1000))
            self.loop.advance_to_ms(target_ms)
            code, output = cli.run_in_testbed(self, site_name, user_name,
                                              tokens[3:])
            out.write(f"[t={self.loop.now_s:.2f}] {tokens[2]}$ "
                      f"{' '.join(tokens[3:])}\n")
            out.write(output)
            if output and not output.endswith("\n"):
                out.write("\n")
            if code != 0:
                out.write(f"[exit {code}]\n")
            last_output = output
        return out.getvalue()


def build_testbed(specs: list[SiteSpec] | None = None,
                  run_dir: Path | str | None = None, seed: int = 2013) -> Testbed:
    return Testbed(specs or default_specs(), run_dir=run_dir, seed=seed)


def run_scenario(name_or_text: str, testbed: Testbed | None = None,
                 run_dir: Path | str | None = None) -> tuple[str, Testbed]:
    """Run a built-in scenario (by name) or literal script text."""
    script = scenarios.SCENARIOS.get(name_or_text, name_or_text)
    if testbed is None:
        testbed = build_testbed(run_dir=run_dir)
    return testbed.run_script(script), testbed


# --------------------------------------------------------------- sockets

class SocketGateway:
    """Loopback TCP front end speaking the same framed protocol.

    Integration smoke only: a pump thread advances virtual time while
    daemon handlers answer socket clients under one lock.
    """

    def __init__(self, testbed: Testbed, host: str = "127.0.0.1"):
        self.testbed = testbed
        self.host = host
        self.lock = threading.Lock()
        self.servers: dict[str, socket.socket] = {}
        self.ports: dict[str, int] = {}
        self.threads: list[threading.Thread] = []
        self.running = False

    def start(self) -> None:
        self.running = True
        for name, daemon in self.testbed.sites.items():
            server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            server.bind((self.host, 0))
            server.listen(8)
            server.settimeout(0.2)
            self.servers[name] = server
            self.ports[name] = server.getsockname()[1]
            thread = threading.Thread(target=self._serve, args=(name, daemon),
                                      daemon=True)
            thread.start()
            self.threads.append(thread)
        pump = threading.Thread(target=self._pump, daemon=True)
        pump.start()
        self.threads.append(pump)

    def _pump(self) -> None:
        while self.running:
            with self.lock:
                self.testbed.advance(0.1)
            _time.sleep(0.005)

    def _serve(self, name: str, daemon: SiteDaemon) -> None:
        server = self.servers[name]
        while self.running:
            try:
                conn, _addr = server.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            threading.Thread(target=self._handle, args=(conn, daemon),
                             daemon=True).start()

    def _handle(self, conn: socket.socket, daemon: SiteDaemon) -> None:
        with conn:
            conn.settimeout(10.0)
            while True:
                try:
                    data = wire.read_frame(conn)
                except (socket.timeout, OSError):
                    return
                if data is None:
                    return
                with self.lock:
                    reply = daemon.handle_message(wire.Message.decode(data),
                                                  "wire-client")
                if reply is not None:
                    try:
                        wire.write_frame(conn, reply.encode())
                    except OSError:
                        return

    def registry_lines(self) -> str:
        return "".join(
            f"{name} {self.testbed.sites[name].spec.host} {self.host} {port}\n"
            for name, port in sorted(self.ports.items()))

    def write_registry(self, path: Path | str) -> None:
        Path(path).write_text(self.registry_lines())

    def stop(self) -> None:
        self.running = False
        for server in self.servers.values():
            try:
                server.close()
            except OSError:
                pass
