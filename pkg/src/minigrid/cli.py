"""Command suite: status, submit, queue views, proxies, remote runs, admin.

Every command works in two modes.  Inside a testbed scenario the command
is dispatched in-process against the deterministic harness.  As a real
console script it speaks the framed protocol over loopback sockets to a
``mg-testbed up`` process, resolving sites only through the registry file
(``MINIGRID_REGISTRY``, default ``~/.minigrid/registry``).

Exit codes: 0 success, 2 usage, 3 auth, 4 remote error, 5 timeout.  Every
error line carries the stable machine-readable code; a remediation hint
follows when one is known.
"""

from __future__ import annotations

import argparse
import getpass
import io
import os
import posixpath
import socket
import sys
import time as _time
from dataclasses import dataclass, field
from pathlib import Path

from . import gsi, tasks, timefmt, wire
from .errors import (
    EXIT_USAGE,
    MiniGridError,
    PoolUnreachable,
    Timeout,
    UnknownTarget,
    UsageError,
)
from .jobspec import parse_contact_string
from .lrm import JobId, submit_ack

REGISTRY_ENV = "MINIGRID_REGISTRY"
SITE_ENV = "MINIGRID_SITE"

PROXY_VERIFY_SKEW = 0  # self-verification right after creation


class _ArgumentParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting the process."""

    def error(self, message):
        raise UsageError(message)

    def exit(self, status=0, message=None):
        if message:
            raise UsageError(message.strip())
        raise UsageError("")


@dataclass
class CliContext:
    site: str
    user: str
    out: io.TextIO
    testbed: object | None = None          # minigrid.testbed.Testbed
    registry: dict[str, tuple[str, str, int]] = field(default_factory=dict)
    cred_dir: Path | None = None
    trust_dir: Path | None = None
    passphrase: str | None = None

    # -- testbed-mode helpers

    def daemon(self, site: str | None = None):
        name = site or self.site
        try:
            return self.testbed.site(name)
        except UnknownTarget:
            raise PoolUnreachable(f"no site named {name!r} is registered") from None

    def user_env(self, daemon=None):
        daemon = daemon or self.daemon()
        return daemon.node.user(self.user)

    # -- socket-mode helpers

    def endpoint_for_site(self, site: str) -> tuple[str, int]:
        entry = self.registry.get(site)
        if entry is None:
            raise PoolUnreachable(f"site {site!r} not in the registry")
        _host, addr, port = entry
        return addr, port

    def endpoint_for_host(self, host: str) -> tuple[str, int]:
        for _site, (reg_host, addr, port) in self.registry.items():
            if reg_host == host:
                return addr, port
        raise PoolUnreachable(f"host {host!r} not in the registry")


class SocketClient:
    def __init__(self, addr: str, port: int, timeout: float = 15.0):
        self.addr = addr
        self.port = port
        self.timeout = timeout

    def call(self, msg: wire.Message) -> wire.Message:
        try:
            with socket.create_connection((self.addr, self.port),
                                          timeout=self.timeout) as sock:
                wire.write_frame(sock, msg.encode())
                data = wire.read_frame(sock)
        except socket.timeout:
            raise Timeout(f"no response from {self.addr}:{self.port}") from None
        except OSError as exc:
            raise PoolUnreachable(f"{self.addr}:{self.port}: {exc}") from None
        if data is None:
            raise Timeout(f"no response from {self.addr}:{self.port}")
        return wire.raise_if_error(wire.Message.decode(data))


def _view_over_socket(ctx: CliContext, site: str, view: str) -> str:
    addr, port = ctx.endpoint_for_site(site)
    reply = SocketClient(addr, port).call(
        wire.Message(wire.JOB_STATUS, {"view": view, "request-id": "-"}))
    return reply.payload.decode()


# ------------------------------------------------------------------ common

def _add_common(parser: _ArgumentParser) -> None:
    parser.add_argument("--site", help="act against this site")
    parser.add_argument("--as-user", dest="as_user", help="act as this user")


def _apply_common(args, ctx: CliContext) -> None:
    if args.site:
        ctx.site = args.site
    if getattr(args, "as_user", None):
        ctx.user = args.as_user


# ---------------------------------------------------------------- mg-status

def cmd_status(argv, ctx: CliContext) -> None:
    parser = _ArgumentParser(prog="mg-status")
    parser.add_argument("pool", nargs="?", help="site whose pool to show")
    _add_common(parser)
    args = parser.parse_args(argv)
    _apply_common(args, ctx)
    site = args.pool or ctx.site
    if ctx.testbed is not None:
        daemon = ctx.daemon(site)
        ctx.out.write(daemon.lrm.render_status(daemon.clock.read()))
    else:
        ctx.out.write(_view_over_socket(ctx, site, "status"))


# ---------------------------------------------------------------- mg-submit

def cmd_submit(argv, ctx: CliContext) -> None:
    parser = _ArgumentParser(prog="mg-submit")
    parser.add_argument("file", help="submit description file")
    _add_common(parser)
    args = parser.parse_args(argv)
    _apply_common(args, ctx)
    if ctx.testbed is not None:
        daemon = ctx.daemon()
        user = ctx.user_env(daemon)
        content = daemon.node.read_file(
            daemon.node.resolve_user_path(user, args.file))
        if content is None:
            raise UsageError(f"submit file {args.file!r} not found")
        results = daemon.submit_text(content.decode(), user)
        ctx.out.write("Submitting job(s).\n")
        for job_id, count in results:
            ctx.out.write(submit_ack(count, job_id.cluster) + "\n")
    else:
        text = Path(args.file).read_text()
        addr, port = ctx.endpoint_for_site(ctx.site)
        reply = SocketClient(addr, port).call(wire.Message(
            wire.JOB_REQUEST,
            {"mode": "local-submit", "owner": ctx.user, "request-id": "-"},
            text.encode()))
        ctx.out.write(reply.payload.decode())


# --------------------------------------------------------------------- mg-q

def cmd_q(argv, ctx: CliContext) -> None:
    parser = _ArgumentParser(prog="mg-q")
    parser.add_argument("--watch", type=float, metavar="N",
                        help="re-render every N seconds until the queue empties")
    _add_common(parser)
    args = parser.parse_args(argv)
    _apply_common(args, ctx)
    if ctx.testbed is None:
        if args.watch:
            try:
                while True:
                    ctx.out.write(_view_over_socket(ctx, ctx.site, "queue"))
                    _time.sleep(args.watch)
            except KeyboardInterrupt:
                return
        ctx.out.write(_view_over_socket(ctx, ctx.site, "queue"))
        return
    daemon = ctx.daemon()
    if not args.watch:
        ctx.out.write(daemon.lrm.render_queue(daemon.clock.read()))
        return
    # Virtual-time watch: one frame every N seconds until the queue empties.
    while True:
        now = daemon.clock.read()
        ctx.out.write(f"Every {args.watch:.1f}s: mg-q  "
                      f"{timefmt.fmt_ctime(now)}\n\n")
        ctx.out.write(daemon.lrm.render_queue(now))
        if sum(daemon.lrm.query_queue(now).counts.values()) == 0:
            return
        ctx.testbed.advance(args.watch)
        ctx.out.write("\n")


# --------------------------------------------------------------- mg-history

def cmd_history(argv, ctx: CliContext) -> None:
    parser = _ArgumentParser(prog="mg-history")
    _add_common(parser)
    args = parser.parse_args(argv)
    _apply_common(args, ctx)
    if ctx.testbed is not None:
        ctx.out.write(ctx.daemon().lrm.render_history())
    else:
        ctx.out.write(_view_over_socket(ctx, ctx.site, "history"))


# -------------------------------------------------------------------- mg-rm

def cmd_rm(argv, ctx: CliContext) -> None:
    parser = _ArgumentParser(prog="mg-rm")
    parser.add_argument("id", help="job id (cluster.proc)")
    _add_common(parser)
    args = parser.parse_args(argv)
    _apply_common(args, ctx)
    if ctx.testbed is None:
        raise UsageError("mg-rm needs a testbed context (scenario mode)")
    daemon = ctx.daemon()
    job_id = JobId.parse(args.id)
    record = daemon.gridq.records.get(job_id)
    if record is not None:
        record.finished = True  # stop mirroring a removed grid job
    daemon.lrm.remove(job_id, daemon.clock.read())
    ctx.out.write(f"Job {job_id} marked for removal.\n")


# -------------------------------------------------------------- mg-proxy-init

def cmd_proxy_init(argv, ctx: CliContext) -> None:
    parser = _ArgumentParser(prog="mg-proxy-init")
    parser.add_argument("-debug", action="store_true", dest="debug")
    parser.add_argument("-verify", action="store_true", dest="verify")
    _add_common(parser)
    args = parser.parse_args(argv)
    _apply_common(args, ctx)
    if ctx.testbed is not None:
        daemon = ctx.daemon()
        user = ctx.user_env(daemon)
        store = daemon.node.cred_store(user)
        cred_dir_label = posixpath.join(user.home, ".minigrid")
        trust_label = "/etc/minigrid/trust"
        anchors = ctx.testbed.trust_anchors
        now = daemon.clock.epoch()
        passphrase = ctx.passphrase if ctx.passphrase is not None \
            else user.passphrase
        rng = ctx.testbed.rng
    else:
        store = gsi.CredentialStore(ctx.cred_dir)
        cred_dir_label = str(ctx.cred_dir)
        trust_label = str(ctx.trust_dir)
        anchors = gsi.load_trust_anchors(ctx.trust_dir)
        now = int(_time.time())
        passphrase = ctx.passphrase if ctx.passphrase is not None else \
            getpass.getpass("Enter GRID pass phrase for this identity:")
        rng = None
    cert, key = store.load_user()
    if args.debug:
        ctx.out.write(f"User Cert File: {cred_dir_label}/{gsi.USERCERT_FILE}\n")
        ctx.out.write(f"User Key File: {cred_dir_label}/{gsi.USERKEY_FILE}\n")
        ctx.out.write(f"Trusted CA Cert Dir: {trust_label}\n")
        ctx.out.write(f"Output File: {cred_dir_label}/{gsi.PROXY_FILE}\n")
    ctx.out.write(f"Your identity: {cert.subject_dn}\n")
    proxy = gsi.proxy_init(cert, key, passphrase, now=now, rng=rng)
    ctx.out.write("Creating proxy .....+++++++\n")
    store.save_proxy(proxy)
    ctx.out.write("Done\n")
    if args.verify:
        gsi.verify_chain(proxy.chain, anchors, now, PROXY_VERIFY_SKEW)
        ctx.out.write("Proxy Verify OK\n")
    until = timefmt.fmt_ctime(timefmt.from_epoch(proxy.not_after))
    ctx.out.write(f"Your proxy is valid until: {until}\n")


# -------------------------------------------------------------- mg-proxy-info

def cmd_proxy_info(argv, ctx: CliContext) -> None:
    parser = _ArgumentParser(prog="mg-proxy-info")
    _add_common(parser)
    args = parser.parse_args(argv)
    _apply_common(args, ctx)
    if ctx.testbed is not None:
        daemon = ctx.daemon()
        store = daemon.node.cred_store(ctx.user_env(daemon))
        now = daemon.clock.epoch()
    else:
        store = gsi.CredentialStore(ctx.cred_dir)
        now = int(_time.time())
    proxy = store.load_proxy()
    info = gsi.proxy_info(proxy, now)
    ctx.out.write(f"subject  : {info['subject']}\n")
    ctx.out.write(f"issuer   : {proxy.proxy_cert.issuer_dn}\n")
    suffix = " (expired)" if info["expired"] else ""
    ctx.out.write(f"timeleft : {timefmt.fmt_hms(info['time_left'])}{suffix}\n")


# ---------------------------------------------------------------- mg-job-run

def cmd_job_run(argv, ctx: CliContext) -> None:
    parser = _ArgumentParser(prog="mg-job-run")
    parser.add_argument("contact", help="host[:port]/jobmanager-<lrm>")
    parser.add_argument("cmd", help="executable to run remotely")
    parser.add_argument("args", nargs=argparse.REMAINDER)
    _add_common(parser)
    args = parser.parse_args(argv)
    _apply_common(args, ctx)
    contact = parse_contact_string(args.contact)
    if ctx.testbed is not None:
        daemon = ctx.daemon()
        user = ctx.user_env(daemon)
        cred = daemon.node.cred_store(user).load_proxy()
        read_file = lambda path: daemon.node.read_file(
            daemon.node.resolve_user_path(user, path))
        stdout = daemon.client.job_run(contact, args.cmd, tuple(args.args),
                                       cred, read_file=read_file)
        ctx.out.write(stdout)
        return
    # Socket mode: stage, submit, poll, collect over loopback frames.
    cred = gsi.CredentialStore(ctx.cred_dir).load_proxy()
    content = tasks.STANDARD_BINARIES.get(args.cmd)
    if content is None:
        data = Path(args.cmd).read_bytes() if Path(args.cmd).is_file() else None
        content = data
    if content is None:
        raise UsageError(f"{args.cmd!r} not found")
    addr, port = ctx.endpoint_for_host(contact.host)
    client = SocketClient(addr, port, timeout=60.0)
    request_id = f"cli-{os.getpid()}-{int(_time.time() * 1000)}"
    name = args.cmd.rsplit("/", 1)[-1]
    from .gram import GramState, job_request_message, xfer_put_messages
    from .jobspec import GramJobRequest
    from .staging import content_digest
    for msg in xfer_put_messages(request_id, {name: content}, cred.chain):
        client.call(msg)
    req = GramJobRequest(
        executable=args.cmd, arguments=tuple(args.args),
        stdout_name="stdout", stderr_name="stderr",
        owner_dn=cred.subject_dn, target_lrm=contact.lrm,
        stage_in=((name, content_digest(content)),), request_id=request_id)
    client.call(job_request_message(req, cred.chain, int(_time.time())))
    deadline = _time.time() + 60.0
    while True:
        if _time.time() > deadline:
            raise Timeout(f"no response from {contact.render()} after 60s")
        reply = client.call(wire.Message(wire.JOB_STATUS,
                                         {"request-id": request_id}))
        if reply.get("state") == str(GramState.DONE):
            break
        _time.sleep(0.2)
    reply = client.call(wire.Message(wire.JOB_COLLECT,
                                     {"request-id": request_id}))
    split = int(reply.get("stdout-len", "0"))
    ctx.out.write(reply.payload[:split].decode())


# -------------------------------------------------------------------- mg-ca

def cmd_ca(argv, ctx: CliContext) -> None:
    parser = _ArgumentParser(prog="mg-ca")
    sub = parser.add_subparsers(dest="action", required=True)
    p_init = sub.add_parser("init")
    p_init.add_argument("name")
    _add_common(p_init)
    p_sign = sub.add_parser("sign")
    p_sign.add_argument("user")
    _add_common(p_sign)
    args = parser.parse_args(argv)
    _apply_common(args, ctx)
    if ctx.testbed is None:
        raise UsageError("mg-ca needs a testbed context (scenario mode)")
    daemon = ctx.daemon()
    if args.action == "init":
        gsi.CertificateAuthority.initialize(
            daemon.node.root / "ca", args.name, now=daemon.clock.epoch(),
            rng=ctx.testbed.rng)
        ctx.out.write(f"CA {args.name} initialized on {ctx.site}.\n")
        return
    ca = ctx.testbed.ca
    user = daemon.node.users.get(args.user) or daemon.node.add_user(args.user)
    dn = (f"/O=Grid/OU=GlobusTest/OU={posixpath.basename(str(ca.directory))}"
          f"/OU=Local/CN={user.display}")
    cert, key = ca.issue(dn, lifetime=365 * 86400, passphrase=user.passphrase,
                         now=daemon.clock.epoch(), rng=ctx.testbed.rng)
    user.dn = dn
    gsi.CredentialStore(daemon.node.cred_dir(user)).save_user(cert, key)
    ctx.testbed.gridmap[dn] = user.name
    ctx.out.write(f"certificate issued: {dn}\n")


# --------------------------------------------------------------- mg-testbed

def cmd_testbed(argv, ctx: CliContext) -> None:
    parser = _ArgumentParser(prog="mg-testbed")
    sub = parser.add_subparsers(dest="action", required=True)
    p_up = sub.add_parser("up")
    p_up.add_argument("config")
    p_up.add_argument("--run-dir")
    p_down = sub.add_parser("down")
    p_fault = sub.add_parser("fault")
    p_fault.add_argument("words", nargs="+",
                         help="<kind> <site> [value] | clear <kind> <site>")
    _add_common(p_fault)
    args = parser.parse_args(argv)

    if args.action == "fault":
        if ctx.testbed is None:
            raise UsageError("fault injection needs a testbed context")
        words = args.words
        if words[0] == "clear":
            if len(words) != 3:
                raise UsageError("usage: mg-testbed fault clear <kind> <site>")
            ctx.testbed.clear_fault(words[1], words[2])
            ctx.out.write(f"fault {words[1]} cleared on {words[2]}\n")
            return
        if len(words) not in (2, 3):
            raise UsageError("usage: mg-testbed fault <kind> <site> [value]")
        from .testbed import FaultSpec
        value = float(words[2]) if len(words) == 3 else 0.0
        ctx.testbed.inject_fault(FaultSpec(kind=words[0], target=words[1],
                                           value=value))
        ctx.out.write(f"fault {words[0]} injected on {words[1]}\n")
        return

    if args.action == "down":
        path = _registry_path()
        if path.exists():
            path.unlink()
            ctx.out.write("testbed down (registry cleared)\n")
        else:
            ctx.out.write("no registry found; nothing to do\n")
        return

    # up: build from config, serve sockets until interrupted
    from .testbed import SocketGateway, Testbed, parse_config
    specs = parse_config(Path(args.config).read_text())
    bed = Testbed(specs, run_dir=args.run_dir)
    gateway = SocketGateway(bed)
    gateway.start()
    path = _registry_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    gateway.write_registry(path)
    for name in bed.sites:
        host = bed.sites[name].spec.host
        ctx.out.write(f"site {name} ({host}) listening on "
                      f"{gateway.host}:{gateway.ports[name]}\n")
    ctx.out.write(f"registry written to {path}\n")
    try:
        while True:
            _time.sleep(0.5)
    except KeyboardInterrupt:
        gateway.stop()


COMMANDS = {
    "mg-status": cmd_status,
    "mg-submit": cmd_submit,
    "mg-q": cmd_q,
    "mg-history": cmd_history,
    "mg-rm": cmd_rm,
    "mg-proxy-init": cmd_proxy_init,
    "mg-proxy-info": cmd_proxy_info,
    "mg-job-run": cmd_job_run,
    "mg-ca": cmd_ca,
    "mg-testbed": cmd_testbed,
}


# ---------------------------------------------------------------- dispatch

def dispatch(prog: str, argv: list[str], ctx: CliContext) -> int:
    command = COMMANDS.get(prog)
    if command is None:
        ctx.out.write(f"{prog}: error Usage: unknown command\n")
        return EXIT_USAGE
    try:
        command(argv, ctx)
        return 0
    except MiniGridError as exc:
        ctx.out.write(f"{prog}: error {exc.code}: {exc.detail}\n")
        if exc.remediation:
            ctx.out.write(f"hint: {exc.remediation}\n")
        return exc.exit_status


def run_in_testbed(testbed, site: str, user: str, argv: list[str]) -> tuple[int, str]:
    """Scenario entry point: run one command, capture (exit code, output)."""
    buffer = io.StringIO()
    ctx = CliContext(site=site, user=user, out=buffer, testbed=testbed)
    code = dispatch(argv[0], argv[1:], ctx)
    return code, buffer.getvalue()


# ----------------------------------------------------------- console scripts

def _registry_path() -> Path:
    return Path(os.environ.get(REGISTRY_ENV,
                               Path.home() / ".minigrid" / "registry"))


def _load_registry() -> dict[str, tuple[str, str, int]]:
    path = _registry_path()
    registry: dict[str, tuple[str, str, int]] = {}
    if path.is_file():
        for line in path.read_text().splitlines():
            parts = line.split()
            if len(parts) == 4:
                registry[parts[0]] = (parts[1], parts[2], int(parts[3]))
    return registry


def _standalone_context() -> CliContext:
    registry = _load_registry()
    site = os.environ.get(SITE_ENV) or (next(iter(registry)) if registry else "")
    cred_dir = Path(os.environ.get(gsi.CRED_DIR_ENV, Path.home() / ".minigrid"))
    trust_dir = Path(os.environ.get(gsi.TRUST_DIR_ENV,
                                    Path.home() / ".minigrid" / "trust"))
    return CliContext(site=site, user=getpass.getuser(), out=sys.stdout,
                      registry=registry, cred_dir=cred_dir, trust_dir=trust_dir)


def _main(prog: str) -> int:
    return dispatch(prog, sys.argv[1:], _standalone_context())


def main_status() -> int:
    return _main("mg-status")


def main_submit() -> int:
    return _main("mg-submit")


def main_q() -> int:
    return _main("mg-q")


def main_history() -> int:
    return _main("mg-history")


def main_rm() -> int:
    return _main("mg-rm")


def main_proxy_init() -> int:
    return _main("mg-proxy-init")


def main_proxy_info() -> int:
    return _main("mg-proxy-info")


def main_job_run() -> int:
    return _main("mg-job-run")


def main_ca() -> int:
    return _main("mg-ca")


def main_testbed() -> int:
    return _main("mg-testbed")
