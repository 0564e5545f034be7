"""Submit-file parsing and queue-dialect translation.

A submit file is ``Key = Value`` lines ended by a ``Queue [n]`` command
(``#`` starts a comment).  Vanilla-universe descriptions run on the local
pool; Globus-universe descriptions carry a ``grid_resource`` line naming a
remote gatekeeper contact (``host[:port]/jobmanager-<lrm>``).

Neutral job requests are rendered into (and parsed back from) per-queue
dialects so the gatekeeper stays ignorant of whichever batch system sits
behind a contact.  Arguments are whitespace-split with double-quote
grouping; embedded double quotes are unsupported by design.
"""

from __future__ import annotations

import posixpath
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Mapping

from . import classad
from .errors import (
    GlobusWithoutGridResource,
    MalformedContact,
    MalformedGridResource,
    MissingQueue,
    NotGridUniverse,
    SubmitParseError,
    UnknownDialect,
    UnknownUniverse,
)

GRID_PROTOCOL_TAG = "gt5"
JOBMANAGER_PREFIX = "jobmanager-"

_SUBMIT_KEYS = frozenset({
    "universe", "executable", "arguments", "input", "output", "error",
    "log", "requirements", "grid_resource",
})


class Universe(str, Enum):
    VANILLA = "vanilla"
    GLOBUS = "globus"


@dataclass(frozen=True)
class ContactString:
    """Gatekeeper address: ``host[:port]/jobmanager-<lrm>``."""

    host: str
    service: str
    port: int | None = None

    @property
    def lrm(self) -> str:
        return self.service[len(JOBMANAGER_PREFIX):]

    def render(self) -> str:
        if self.port is None:
            return f"{self.host}/{self.service}"
        return f"{self.host}:{self.port}/{self.service}"

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True)
class SubmitDescription:
    executable: str
    universe: Universe = Universe.VANILLA
    arguments: tuple[str, ...] = ()
    input: str | None = None
    output: str | None = None
    error: str | None = None
    log: str | None = None
    requirements: str | None = None
    grid_resource: tuple[str, ContactString] | None = None
    queue_count: int = 1

    @property
    def cmd(self) -> str:
        """Command line as shown in queue listings."""
        return " ".join((self.executable,) + self.arguments)


@dataclass(frozen=True)
class GramJobRequest:
    """Queue-neutral wire form of one remote job submission."""

    executable: str
    arguments: tuple[str, ...] = ()
    stdout_name: str = "stdout"
    stderr_name: str = "stderr"
    owner_dn: str = ""
    target_lrm: str = ""
    stage_in: tuple[tuple[str, str], ...] = ()  # (name, content digest)
    request_id: str = ""


# ------------------------------------------------------------- tokenizing

def split_arguments(text: str, *, line: int | None = None) -> tuple[str, ...]:
    """Whitespace-split with double-quote grouping."""
    args: list[str] = []
    current: list[str] | None = None
    quoted = False
    for ch in text:
        if quoted:
            if ch == '"':
                quoted = False
            else:
                current.append(ch)
        elif ch == '"':
            quoted = True
            if current is None:
                current = []
        elif ch.isspace():
            if current is not None:
                args.append("".join(current))
                current = None
        else:
            if current is None:
                current = []
            current.append(ch)
    if quoted:
        raise SubmitParseError("unterminated quote in arguments", line=line)
    if current is not None:
        args.append("".join(current))
    return tuple(args)


def render_arguments(args: tuple[str, ...]) -> str:
    rendered = []
    for arg in args:
        if arg == "" or any(c.isspace() for c in arg):
            rendered.append(f'"{arg}"')
        else:
            rendered.append(arg)
    return " ".join(rendered)


# ----------------------------------------------------------- contact strings

def parse_contact_string(text: str) -> ContactString:
    """Split ``host[:port]/jobmanager-<lrm>`` on the first slash."""
    text = text.strip()
    if "/" not in text:
        raise MalformedContact(f"no '/' in contact string {text!r}")
    hostpart, service = text.split("/", 1)
    port = None
    if ":" in hostpart:
        hostpart, portpart = hostpart.split(":", 1)
        try:
            port = int(portpart)
        except ValueError:
            raise MalformedContact(f"bad port {portpart!r} in contact string") from None
    if not hostpart:
        raise MalformedContact(f"empty host in contact string {text!r}")
    if not service.startswith(JOBMANAGER_PREFIX) or len(service) == len(JOBMANAGER_PREFIX):
        raise MalformedContact(
            f"service {service!r} must look like {JOBMANAGER_PREFIX}<lrm>")
    return ContactString(host=hostpart, service=service, port=port)


# ------------------------------------------------------------ submit files

def _parse_grid_resource(value: str, line: int) -> tuple[str, ContactString]:
    parts = value.split(None, 1)
    if len(parts) != 2:
        raise MalformedGridResource(
            f"expected '<protocol> <contact>', got {value!r}", line=line)
    tag, contact_text = parts
    if tag.lower() != GRID_PROTOCOL_TAG:
        raise MalformedGridResource(
            f"unsupported protocol tag {tag!r} (only {GRID_PROTOCOL_TAG})", line=line)
    try:
        contact = parse_contact_string(contact_text)
    except MalformedContact as exc:
        raise MalformedGridResource(exc.detail, line=line) from exc
    return tag.lower(), contact


def _build_description(keys: dict[str, tuple[str, int]], queue_count: int,
                       queue_line: int) -> SubmitDescription:
    def take(name: str) -> tuple[str, int] | tuple[None, int]:
        return keys.get(name, (None, queue_line))

    universe_text, uline = take("universe")
    if universe_text is None:
        universe = Universe.VANILLA
    else:
        try:
            universe = Universe(universe_text.lower())
        except ValueError:
            raise UnknownUniverse(f"unknown universe {universe_text!r}",
                                  line=uline) from None

    executable, eline = take("executable")
    if not executable:
        raise SubmitParseError("submit file needs a non-empty Executable",
                               line=eline)

    args_text, aline = take("arguments")
    arguments = split_arguments(args_text, line=aline) if args_text else ()

    requirements, rline = take("requirements")
    if requirements is not None:
        try:
            classad.parse_expr(requirements)
        except classad.ExprSyntaxError as exc:
            raise SubmitParseError(f"bad requirements: {exc.detail}",
                                   line=rline) from exc

    grid_text, gline = take("grid_resource")
    grid_resource = None
    if grid_text is not None:
        if universe is not Universe.GLOBUS:
            raise MalformedGridResource(
                "grid_resource requires Universe = Globus", line=gline)
        grid_resource = _parse_grid_resource(grid_text, gline)
    elif universe is Universe.GLOBUS:
        raise GlobusWithoutGridResource(
            "Globus universe needs a grid_resource line", line=queue_line)

    return SubmitDescription(
        executable=executable,
        universe=universe,
        arguments=arguments,
        input=take("input")[0],
        output=take("output")[0],
        error=take("error")[0],
        log=take("log")[0],
        requirements=requirements,
        grid_resource=grid_resource,
        queue_count=queue_count,
    )


def parse_submit_file(text: str) -> list[SubmitDescription]:
    """Parse submit-file text into one description per ``Queue`` command.

    Keys are case-insensitive; a later duplicate overrides the earlier
    value and keys stay in effect across successive Queue commands.
    """
    keys: dict[str, tuple[str, int]] = {}
    descriptions: list[SubmitDescription] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        first = line.split(None, 1)[0].lower()
        if first == "queue":
            rest = line[len("queue"):].strip()
            count = 1
            if rest:
                try:
                    count = int(rest)
                except ValueError:
                    raise SubmitParseError(f"bad queue count {rest!r}",
                                           line=lineno) from None
                if count < 1:
                    raise SubmitParseError("queue count must be positive",
                                           line=lineno)
            descriptions.append(_build_description(keys, count, lineno))
            continue
        if "=" not in line:
            raise SubmitParseError(f"expected 'Key = Value', got {line!r}",
                                   line=lineno)
        key, value = line.split("=", 1)
        key = key.strip().lower()
        if key not in _SUBMIT_KEYS:
            raise SubmitParseError(f"unknown submit key {key!r}", line=lineno)
        keys[key] = (value.strip(), lineno)
    if not descriptions:
        raise MissingQueue("no Queue command in submit file")
    return descriptions


# ---------------------------------------------------------------- dialects

def _render_condor(req: GramJobRequest) -> str:
    lines = ["Universe = Vanilla", f"Executable = {req.executable}"]
    if req.arguments:
        lines.append(f"Arguments = {render_arguments(req.arguments)}")
    lines.append(f"Output = {req.stdout_name}")
    lines.append(f"Error = {req.stderr_name}")
    lines.append("Queue")
    return "\n".join(lines) + "\n"


def _parse_condor(text: str) -> GramJobRequest:
    sd = parse_submit_file(text)[0]
    return GramJobRequest(
        executable=sd.executable,
        arguments=sd.arguments,
        stdout_name=sd.output or "stdout",
        stderr_name=sd.error or "stderr",
    )


def _render_sgelike(req: GramJobRequest) -> str:
    command = req.executable
    if req.arguments:
        command += " " + render_arguments(req.arguments)
    return (
        "#!/bin/sh\n"
        f"#$ -o {req.stdout_name}\n"
        f"#$ -e {req.stderr_name}\n"
        f"{command}\n"
    )


def _parse_sgelike(text: str) -> GramJobRequest:
    stdout_name, stderr_name = "stdout", "stderr"
    command = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#!"):
            continue
        if line.startswith("#$"):
            directive = line[2:].strip()
            parts = directive.split(None, 1)
            if len(parts) != 2 or parts[0] not in ("-o", "-e"):
                raise SubmitParseError(f"bad directive {directive!r}", line=lineno)
            if parts[0] == "-o":
                stdout_name = parts[1]
            else:
                stderr_name = parts[1]
            continue
        if line.startswith("#"):
            continue
        command = split_arguments(line, line=lineno)
        break
    if not command:
        raise SubmitParseError("script has no command line")
    return GramJobRequest(
        executable=command[0],
        arguments=tuple(command[1:]),
        stdout_name=stdout_name,
        stderr_name=stderr_name,
    )


@dataclass(frozen=True)
class Dialect:
    name: str
    render: Callable[[GramJobRequest], str]
    parse: Callable[[str], GramJobRequest]


DIALECTS: dict[str, Dialect] = {
    "condor": Dialect("condor", _render_condor, _parse_condor),
    "sgelike": Dialect("sgelike", _render_sgelike, _parse_sgelike),
}


def get_dialect(name: str) -> Dialect:
    try:
        return DIALECTS[name]
    except KeyError:
        raise UnknownDialect(f"no dialect registered under {name!r}") from None


def render_dialect(req: GramJobRequest, dialect: str) -> str:
    """Translate a neutral request into the named dialect's native text."""
    return get_dialect(dialect).render(req)


def parse_dialect(text: str, dialect: str) -> GramJobRequest:
    """Parse native text back to the (partial) neutral request."""
    return get_dialect(dialect).parse(text)


# --------------------------------------------------------- grid requests

def to_gram_request(sd: SubmitDescription, owner_dn: str, request_id: str,
                    digests: Mapping[str, str] | None = None,
                    ) -> tuple[ContactString, GramJobRequest]:
    """Translate a Globus-universe description into its wire request."""
    if sd.universe is not Universe.GLOBUS or sd.grid_resource is None:
        raise NotGridUniverse("submit description is not Globus universe")
    _tag, contact = sd.grid_resource
    digests = digests or {}
    stage_names = [posixpath.basename(sd.executable)]
    if sd.input:
        stage_names.append(posixpath.basename(sd.input))
    stage_in = tuple((name, digests.get(name, "")) for name in stage_names)
    req = GramJobRequest(
        executable=sd.executable,
        arguments=sd.arguments,
        stdout_name=posixpath.basename(sd.output) if sd.output else "stdout",
        stderr_name=posixpath.basename(sd.error) if sd.error else "stderr",
        owner_dn=owner_dn,
        target_lrm=contact.lrm,
        stage_in=stage_in,
        request_id=request_id,
    )
    return contact, req


def with_request_id(req: GramJobRequest, request_id: str) -> GramJobRequest:
    return replace(req, request_id=request_id)
