"""Certificate authority, user certificates, and proxy credentials.

The observable security semantics are validity windows, issuer chains,
pass-phrase protected keys, and clock-skew tolerance.  The cryptography
itself is a deliberate stand-in: a certificate's canonical encoding is
signed with a keyed digest derived from the subject's per-key secret, and
the verifier checks it with the matching public token (the certificate's
``key_id``).  No X.509, ASN.1, or TLS anywhere.

File formats are line-oriented text blocks with BEGIN/END markers around a
base64 payload of the canonical encoding; encode/decode round-trips are
bit-exact.  Credential locations for the standalone CLI come from the
``MINIGRID_USER_CRED_DIR`` and ``MINIGRID_TRUST_DIR`` environment
variables.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping

from .errors import (
    AlreadyInitialized,
    BadPassphrase,
    BadSignature,
    Expired,
    FutureCertificate,
    InvalidLifetime,
    MiniGridError,
    NoProxyFound,
    UnknownIssuer,
    UserCertExpired,
)

CRED_DIR_ENV = "MINIGRID_USER_CRED_DIR"
TRUST_DIR_ENV = "MINIGRID_TRUST_DIR"

DEFAULT_PROXY_LIFETIME = 12 * 3600  # seconds
PROXY_CN_SUFFIX = "/CN=proxy"

_CERT_MAGIC = "minigrid-cert-v1"
_KEY_MAGIC = "minigrid-key-v1"

USERCERT_FILE = "usercert.pem"
USERKEY_FILE = "userkey.pem"
PROXY_FILE = "proxy.pem"


# ------------------------------------------------------------ key material

def new_secret(rng: random.Random | None = None) -> bytes:
    if rng is None:
        import os
        return os.urandom(32)
    return rng.randbytes(32)


def public_token(secret: bytes) -> str:
    """Verification token matching a signing secret."""
    return hmac.new(secret, b"minigrid public token", hashlib.sha256).hexdigest()


def sign_payload(secret: bytes, payload: bytes) -> bytes:
    key = bytes.fromhex(public_token(secret))
    return hmac.new(key, payload, hashlib.sha256).digest()


def signature_ok(token: str, payload: bytes, signature: bytes) -> bool:
    key = bytes.fromhex(token)
    expected = hmac.new(key, payload, hashlib.sha256).digest()
    return hmac.compare_digest(expected, signature)


def _keystream(passphrase: str, salt: bytes, length: int) -> bytes:
    out = b""
    counter = 0
    while len(out) < length:
        out += hashlib.sha256(salt + passphrase.encode() + counter.to_bytes(4, "big")).digest()
        counter += 1
    return out[:length]


def _passphrase_check(passphrase: str, salt: bytes) -> bytes:
    return hashlib.sha256(b"check" + salt + passphrase.encode()).digest()[:16]


@dataclass(frozen=True)
class PrivateKey:
    """Signing secret sealed under a pass-phrase-derived keystream."""

    key_id: str
    salt: bytes
    check: bytes
    ciphertext: bytes

    @classmethod
    def seal(cls, secret: bytes, passphrase: str,
             rng: random.Random | None = None) -> "PrivateKey":
        salt = new_secret(rng)[:16]
        stream = _keystream(passphrase, salt, len(secret))
        return cls(
            key_id=public_token(secret),
            salt=salt,
            check=_passphrase_check(passphrase, salt),
            ciphertext=bytes(a ^ b for a, b in zip(secret, stream)),
        )

    def unseal(self, passphrase: str) -> bytes:
        if not hmac.compare_digest(self.check, _passphrase_check(passphrase, self.salt)):
            raise BadPassphrase("pass phrase does not unlock this key")
        stream = _keystream(passphrase, self.salt, len(self.ciphertext))
        return bytes(a ^ b for a, b in zip(self.ciphertext, stream))


# ------------------------------------------------------------ certificates

@dataclass(frozen=True)
class Certificate:
    subject_dn: str
    issuer_dn: str
    not_before: int  # epoch seconds
    not_after: int
    key_id: str      # subject's public verification token
    signature: bytes = b""

    def canonical_bytes(self, *, with_signature: bool = False) -> bytes:
        lines = [
            _CERT_MAGIC,
            f"subject:{self.subject_dn}",
            f"issuer:{self.issuer_dn}",
            f"not-before:{self.not_before}",
            f"not-after:{self.not_after}",
            f"key-id:{self.key_id}",
        ]
        if with_signature:
            lines.append(f"signature:{self.signature.hex()}")
        return ("\n".join(lines) + "\n").encode()


def _signed(cert: Certificate, issuer_secret: bytes) -> Certificate:
    return replace(cert, signature=sign_payload(issuer_secret, cert.canonical_bytes()))


def certificate_from_bytes(payload: bytes) -> Certificate:
    fields: dict[str, str] = {}
    lines = payload.decode().splitlines()
    if not lines or lines[0] != _CERT_MAGIC:
        raise MiniGridError("not a certificate payload")
    for line in lines[1:]:
        name, _, value = line.partition(":")
        fields[name] = value
    try:
        return Certificate(
            subject_dn=fields["subject"],
            issuer_dn=fields["issuer"],
            not_before=int(fields["not-before"]),
            not_after=int(fields["not-after"]),
            key_id=fields["key-id"],
            signature=bytes.fromhex(fields.get("signature", "")),
        )
    except (KeyError, ValueError) as exc:
        raise MiniGridError(f"malformed certificate payload: {exc}") from exc


def private_key_to_bytes(key: PrivateKey) -> bytes:
    return (
        f"{_KEY_MAGIC}\n"
        f"key-id:{key.key_id}\n"
        f"salt:{key.salt.hex()}\n"
        f"check:{key.check.hex()}\n"
        f"ciphertext:{key.ciphertext.hex()}\n"
    ).encode()


def private_key_from_bytes(payload: bytes) -> PrivateKey:
    lines = payload.decode().splitlines()
    if not lines or lines[0] != _KEY_MAGIC:
        raise MiniGridError("not a private key payload")
    fields = dict(line.partition(":")[::2] for line in lines[1:])
    try:
        return PrivateKey(
            key_id=fields["key-id"],
            salt=bytes.fromhex(fields["salt"]),
            check=bytes.fromhex(fields["check"]),
            ciphertext=bytes.fromhex(fields["ciphertext"]),
        )
    except (KeyError, ValueError) as exc:
        raise MiniGridError(f"malformed key payload: {exc}") from exc


# ------------------------------------------------------------- PEM blocks

def encode_block(label: str, payload: bytes) -> str:
    b64 = base64.b64encode(payload).decode()
    wrapped = "\n".join(b64[i:i + 64] for i in range(0, len(b64), 64))
    return f"-----BEGIN {label}-----\n{wrapped}\n-----END {label}-----\n"


def decode_blocks(text: str) -> list[tuple[str, bytes]]:
    blocks: list[tuple[str, bytes]] = []
    label = None
    payload_lines: list[str] = []
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("-----BEGIN ") and line.endswith("-----"):
            label = line[len("-----BEGIN "):-len("-----")]
            payload_lines = []
        elif line.startswith("-----END ") and label is not None:
            blocks.append((label, base64.b64decode("".join(payload_lines))))
            label = None
        elif label is not None and line:
            payload_lines.append(line)
    return blocks


CERT_LABEL = "MINIGRID CERTIFICATE"
KEY_LABEL = "MINIGRID PRIVATE KEY"


def certificate_to_text(cert: Certificate) -> str:
    return encode_block(CERT_LABEL, cert.canonical_bytes(with_signature=True))


def certificate_from_text(text: str) -> Certificate:
    for label, payload in decode_blocks(text):
        if label == CERT_LABEL:
            return certificate_from_bytes(payload)
    raise MiniGridError("no certificate block in file")


# -------------------------------------------------------------------- CA

class CertificateAuthority:
    """Self-signed root plus the signing secret, persisted in a directory."""

    CERT_FILE = "ca-cert.pem"
    KEY_FILE = "ca-key"

    def __init__(self, directory: Path, root: Certificate, secret: bytes):
        self.directory = Path(directory)
        self.root = root
        self._secret = secret

    @classmethod
    def initialize(cls, directory: Path | str, name: str, now: int,
                   lifetime: int = 10 * 365 * 86400,
                   rng: random.Random | None = None) -> "CertificateAuthority":
        directory = Path(directory)
        cert_path = directory / cls.CERT_FILE
        if cert_path.exists():
            raise AlreadyInitialized(f"CA already initialized in {directory}")
        directory.mkdir(parents=True, exist_ok=True)
        secret = new_secret(rng)
        subject = f"/O=Grid/OU=GlobusTest/OU={name}/CN={name}"
        root = _signed(Certificate(
            subject_dn=subject,
            issuer_dn=subject,
            not_before=int(now),
            not_after=int(now) + lifetime,
            key_id=public_token(secret),
        ), secret)
        cert_path.write_text(certificate_to_text(root))
        (directory / cls.KEY_FILE).write_text(secret.hex() + "\n")
        return cls(directory, root, secret)

    @classmethod
    def load(cls, directory: Path | str) -> "CertificateAuthority":
        directory = Path(directory)
        root = certificate_from_text((directory / cls.CERT_FILE).read_text())
        secret = bytes.fromhex((directory / cls.KEY_FILE).read_text().strip())
        return cls(directory, root, secret)

    def issue(self, subject_dn: str, lifetime: int, passphrase: str, now: int,
              rng: random.Random | None = None) -> tuple[Certificate, PrivateKey]:
        if lifetime <= 0:
            raise InvalidLifetime(f"lifetime must be positive, got {lifetime}")
        secret = new_secret(rng)
        cert = _signed(Certificate(
            subject_dn=subject_dn,
            issuer_dn=self.root.subject_dn,
            not_before=int(now),
            not_after=int(now) + int(lifetime),
            key_id=public_token(secret),
        ), self._secret)
        return cert, PrivateKey.seal(secret, passphrase, rng)


# ---------------------------------------------------------------- proxies

@dataclass(frozen=True)
class ProxyCredential:
    proxy_cert: Certificate
    proxy_key: PrivateKey  # sealed with the empty pass phrase
    chain: tuple[Certificate, ...]  # [proxy_cert, user_cert, ...]

    @property
    def subject_dn(self) -> str:
        return self.proxy_cert.subject_dn

    @property
    def not_after(self) -> int:
        return self.proxy_cert.not_after


def proxy_init(cert: Certificate, key: PrivateKey, passphrase: str, now: int,
               lifetime: int = DEFAULT_PROXY_LIFETIME,
               rng: random.Random | None = None) -> ProxyCredential:
    """Derive a short-lived proxy signed by the user certificate's key.

    The proxy window is clipped to the user certificate's own window; the
    default lifetime is 12 hours.
    """
    if lifetime <= 0:
        raise InvalidLifetime(f"lifetime must be positive, got {lifetime}")
    user_secret = key.unseal(passphrase)
    if not cert.not_before <= now <= cert.not_after:
        raise UserCertExpired(
            f"user certificate valid {cert.not_before}..{cert.not_after}, now {now}")
    proxy_secret = new_secret(rng)
    proxy_cert = _signed(Certificate(
        subject_dn=cert.subject_dn + PROXY_CN_SUFFIX,
        issuer_dn=cert.subject_dn,
        not_before=int(now),
        not_after=min(int(now) + int(lifetime), cert.not_after),
        key_id=public_token(proxy_secret),
    ), user_secret)
    return ProxyCredential(
        proxy_cert=proxy_cert,
        proxy_key=PrivateKey.seal(proxy_secret, "", rng),
        chain=(proxy_cert, cert),
    )


def proxy_info(proxy: ProxyCredential, now: int) -> dict:
    time_left = max(0, proxy.not_after - int(now))
    return {
        "subject": proxy.subject_dn,
        "time_left": time_left,
        "expired": time_left == 0,
    }


def gridmap_subject(dn: str) -> str:
    """Subject used for gridmap lookup: strip exactly one trailing proxy CN."""
    if dn.endswith(PROXY_CN_SUFFIX):
        return dn[:-len(PROXY_CN_SUFFIX)]
    return dn


# ----------------------------------------------------------- verification

def verify_chain(chain: Iterable[Certificate],
                 trust_anchors: Iterable[Certificate] | Mapping[str, Certificate],
                 now: int, max_skew: int = 0) -> None:
    """Raise unless every link verifies, terminates at a trust anchor, and
    is inside its validity window widened by ``max_skew`` seconds.

    Failure codes are distinct and mutually exclusive per certificate:
    UnknownIssuer, BadSignature, FutureCertificate (window fails on the
    early side), Expired (window fails on the late side).
    """
    chain = list(chain)
    if not chain:
        raise NoProxyFound("no credential chain presented")
    if isinstance(trust_anchors, Mapping):
        anchors = dict(trust_anchors)
    else:
        anchors = {cert.subject_dn: cert for cert in trust_anchors}

    for idx, cert in enumerate(chain):
        anchor = anchors.get(cert.issuer_dn)
        if idx + 1 < len(chain) and chain[idx + 1].subject_dn == cert.issuer_dn:
            issuer = chain[idx + 1]
        elif anchor is not None:
            issuer = anchor
        elif cert.subject_dn == cert.issuer_dn and cert.subject_dn in anchors:
            issuer = anchors[cert.subject_dn]
        else:
            raise UnknownIssuer(f"issuer {cert.issuer_dn!r} not trusted")
        if idx == len(chain) - 1 and anchors.get(issuer.subject_dn) is None:
            raise UnknownIssuer(
                f"chain does not terminate at a trust anchor (ends at {issuer.subject_dn!r})")
        if not signature_ok(issuer.key_id, cert.canonical_bytes(), cert.signature):
            raise BadSignature(f"signature check failed for {cert.subject_dn!r}")
        now = int(now)
        if now < cert.not_before - max_skew:
            raise FutureCertificate(
                "You have sent a certificate with future date/time: "
                f"{cert.subject_dn!r} not valid before {cert.not_before} "
                f"(verifier clock {now}, skew tolerance {max_skew}s)")
        if now > cert.not_after + max_skew:
            raise Expired(
                f"{cert.subject_dn!r} expired at {cert.not_after} "
                f"(verifier clock {now}, skew tolerance {max_skew}s)")


# ------------------------------------------------------------- cred store

class CredentialStore:
    """Per-user directory holding usercert, userkey, and the current proxy.

    ``label`` is how the directory is named in messages (a testbed shows
    the node-local virtual path rather than the run-directory path).
    """

    def __init__(self, directory: Path | str, label: str | None = None):
        self.directory = Path(directory)
        self.label = label or str(directory)

    @property
    def usercert_path(self) -> Path:
        return self.directory / USERCERT_FILE

    @property
    def userkey_path(self) -> Path:
        return self.directory / USERKEY_FILE

    @property
    def proxy_path(self) -> Path:
        return self.directory / PROXY_FILE

    def save_user(self, cert: Certificate, key: PrivateKey) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        self.usercert_path.write_text(certificate_to_text(cert))
        self.userkey_path.write_text(encode_block(KEY_LABEL, private_key_to_bytes(key)))

    def load_user(self) -> tuple[Certificate, PrivateKey]:
        try:
            cert = certificate_from_text(self.usercert_path.read_text())
            blocks = decode_blocks(self.userkey_path.read_text())
        except FileNotFoundError:
            raise MiniGridError(
                f"no user credential in {self.label}") from None
        keys = [private_key_from_bytes(p) for lbl, p in blocks if lbl == KEY_LABEL]
        if not keys:
            raise MiniGridError(f"no key block in {self.userkey_path}")
        return cert, keys[0]

    def save_proxy(self, proxy: ProxyCredential) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        parts = [certificate_to_text(proxy.proxy_cert),
                 encode_block(KEY_LABEL, private_key_to_bytes(proxy.proxy_key))]
        parts.extend(certificate_to_text(cert) for cert in proxy.chain[1:])
        self.proxy_path.write_text("".join(parts))

    def load_proxy(self) -> ProxyCredential:
        try:
            text = self.proxy_path.read_text()
        except FileNotFoundError:
            raise NoProxyFound(
                f"no proxy credential in {self.label}") from None
        certs: list[Certificate] = []
        key: PrivateKey | None = None
        for label, payload in decode_blocks(text):
            if label == CERT_LABEL:
                certs.append(certificate_from_bytes(payload))
            elif label == KEY_LABEL and key is None:
                key = private_key_from_bytes(payload)
        if not certs or key is None:
            raise MiniGridError(f"malformed proxy file {self.proxy_path}")
        return ProxyCredential(proxy_cert=certs[0], proxy_key=key, chain=tuple(certs))

    def delete_proxy(self) -> None:
        try:
            self.proxy_path.unlink()
        except FileNotFoundError:
            pass


def load_trust_anchors(directory: Path | str) -> dict[str, Certificate]:
    """Read every certificate file in a trust directory, keyed by subject."""
    anchors: dict[str, Certificate] = {}
    directory = Path(directory)
    if directory.is_dir():
        for path in sorted(directory.glob("*.pem")):
            cert = certificate_from_text(path.read_text())
            anchors[cert.subject_dn] = cert
    return anchors
