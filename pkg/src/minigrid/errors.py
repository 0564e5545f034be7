"""Shared error taxonomy.

Every failure that can cross a module or wire boundary carries a stable
machine-readable ``code`` (used in ERROR protocol messages and CLI output)
plus an optional human remediation line.  CLI exit statuses: 0 success,
2 usage, 3 auth, 4 remote error, 5 timeout.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_AUTH = 3
EXIT_REMOTE = 4
EXIT_TIMEOUT = 5


class MiniGridError(Exception):
    """Base for all stack errors; ``code`` is stable across versions."""

    code = "Error"
    exit_status = EXIT_REMOTE
    remediation = ""

    def __init__(self, detail: str = "", *, remediation: str | None = None):
        super().__init__(detail or self.code)
        self.detail = detail or self.code
        if remediation is not None:
            self.remediation = remediation


class UsageError(MiniGridError):
    code = "Usage"
    exit_status = EXIT_USAGE


# ---------------------------------------------------------------- jobspec

class SubmitParseError(UsageError):
    """Submit-file rejected; ``line`` is 1-based when known."""

    code = "ParseError"

    def __init__(self, detail: str = "", *, line: int | None = None, **kw):
        if line is not None:
            detail = f"line {line}: {detail}"
        super().__init__(detail, **kw)
        self.line = line


class MissingQueue(SubmitParseError):
    code = "MissingQueue"
    remediation = "end the submit file with a 'Queue' command"


class UnknownUniverse(SubmitParseError):
    code = "UnknownUniverse"
    remediation = "supported universes are Vanilla and Globus"


class MalformedGridResource(SubmitParseError):
    code = "MalformedGridResource"
    remediation = "expected: grid_resource = gt5 <host[:port]>/jobmanager-<lrm>"


class GlobusWithoutGridResource(SubmitParseError):
    code = "GlobusWithoutGridResource"
    remediation = "Globus universe submissions need a grid_resource line"


class MalformedContact(UsageError):
    code = "MalformedContact"
    remediation = "contact strings look like host[:port]/jobmanager-<lrm>"


class UnknownDialect(MiniGridError):
    code = "UnknownDialect"


class NotGridUniverse(MiniGridError):
    code = "NotGridUniverse"
    remediation = "only Universe = Globus submissions can be routed to a grid site"


# -------------------------------------------------------------------- lrm

class SpoolFailure(MiniGridError):
    code = "SpoolFailure"
    remediation = "check that the executable and input files exist on the submit node"


class IllegalTransition(MiniGridError):
    code = "IllegalTransition"


class UnknownJob(MiniGridError):
    code = "UnknownJob"


# -------------------------------------------------------------------- gsi

class AuthError(MiniGridError):
    """Authentication/authorization failures; CLI exit status 3."""

    code = "AuthFailed"
    exit_status = EXIT_AUTH


class AlreadyInitialized(MiniGridError):
    code = "AlreadyInitialized"


class InvalidLifetime(MiniGridError):
    code = "InvalidLifetime"


class BadPassphrase(AuthError):
    code = "BadPassphrase"
    remediation = "re-enter the pass phrase protecting the user key"


class UserCertExpired(AuthError):
    code = "UserCertExpired"
    remediation = "request a fresh user certificate from the CA"


class NoProxyFound(AuthError):
    code = "NoProxyFound"
    remediation = "create a proxy credential first: run proxy_init (CLI: mg-proxy-init)"


class ChainVerifyError(AuthError):
    """Base for per-certificate chain verification failures."""


class FutureCertificate(ChainVerifyError):
    code = "FutureCertificate"
    remediation = "synchronize the node clocks, then recreate the proxy"


class Expired(ChainVerifyError):
    code = "Expired"
    remediation = "the credential lifetime has elapsed; create a new proxy"


class UnknownIssuer(ChainVerifyError):
    code = "UnknownIssuer"
    remediation = "install the issuing CA certificate in the trust directory"


class BadSignature(ChainVerifyError):
    code = "BadSignature"


# ---------------------------------------------------------------- staging

class MissingSource(MiniGridError):
    code = "MissingSource"


class DigestMismatch(MiniGridError):
    code = "DigestMismatch"
    remediation = "payload corrupted in transit; retry the transfer"


class SandboxMissing(MiniGridError):
    code = "SandboxMissing"


class PathEscape(MiniGridError):
    code = "PathEscape"
    remediation = "transfer item names must stay inside the job sandbox"


# ------------------------------------------------------------------- gram

class NotAuthorized(AuthError):
    code = "NotAuthorized"
    remediation = "add the certificate subject to the gatekeeper gridmap"


class UnknownJobmanager(MiniGridError):
    code = "UnknownJobmanager"
    remediation = "no adapter is registered for that jobmanager suffix"


class AdapterFailure(MiniGridError):
    code = "AdapterFailure"


class VersionMismatch(AdapterFailure):
    code = "VersionMismatch"
    remediation = "install matching adapter and queue software builds on the site"


class Timeout(MiniGridError):
    code = "Timeout"
    exit_status = EXIT_TIMEOUT
    remediation = "check daemon log files on the target site to locate the failing component"


class UnknownRequest(MiniGridError):
    code = "UnknownRequest"


# ---------------------------------------------------------------- testbed

class DuplicateSiteName(MiniGridError):
    code = "DuplicateSiteName"


class NoCaRole(MiniGridError):
    code = "NoCaRole"
    remediation = "exactly one site must carry the ca role"


class UnknownTarget(MiniGridError):
    code = "UnknownTarget"


class ScriptError(MiniGridError):
    code = "ScriptError"

    def __init__(self, detail: str = "", *, step: int | None = None, **kw):
        if step is not None:
            detail = f"step {step}: {detail}"
        super().__init__(detail, **kw)
        self.step = step


# -------------------------------------------------------------------- cli

class PoolUnreachable(MiniGridError):
    code = "PoolUnreachable"
    remediation = "is the site registered and its daemons up?"


def _registry() -> dict[str, type[MiniGridError]]:
    seen: dict[str, type[MiniGridError]] = {}
    stack = [MiniGridError]
    while stack:
        cls = stack.pop()
        seen.setdefault(cls.code, cls)
        stack.extend(cls.__subclasses__())
    return seen


def from_code(code: str, detail: str = "", remediation: str = "") -> MiniGridError:
    """Rebuild the typed error for ``code`` (e.g. from a wire ERROR message)."""
    cls = _registry().get(code, MiniGridError)
    err = cls(detail)
    err.code = code  # preserve unknown codes verbatim
    if remediation:
        err.remediation = remediation
    return err
