"""Framed wire protocol shared by job submission, status, and staging.

A frame is a 4-byte big-endian length prefix followed by the message body.
The body starts with ``MINIGRID/1 <message-type>``, then ``key: value``
header lines, a blank line, and an optional payload.  Message types:
JOB-REQUEST, JOB-STATUS, JOB-COLLECT, XFER-PUT, XFER-GET, ERROR.  ERROR
messages carry ``code`` and ``detail`` headers using the stable error
codes from :mod:`minigrid.errors`.

Transfer payloads are chunked at 64 KiB per message.
"""

from __future__ import annotations

import base64
import socket
import struct
from dataclasses import dataclass, field

from . import gsi
from .errors import MiniGridError, from_code

PROTOCOL = "MINIGRID/1"
CHUNK_SIZE = 64 * 1024

JOB_REQUEST = "JOB-REQUEST"
JOB_STATUS = "JOB-STATUS"
JOB_COLLECT = "JOB-COLLECT"
XFER_PUT = "XFER-PUT"
XFER_GET = "XFER-GET"
ERROR = "ERROR"

MESSAGE_TYPES = (JOB_REQUEST, JOB_STATUS, JOB_COLLECT, XFER_PUT, XFER_GET, ERROR)


@dataclass
class Message:
    mtype: str
    headers: dict[str, str] = field(default_factory=dict)
    payload: bytes = b""

    def encode(self) -> bytes:
        if self.mtype not in MESSAGE_TYPES:
            raise MiniGridError(f"unknown message type {self.mtype!r}")
        lines = [f"{PROTOCOL} {self.mtype}"]
        for key, value in self.headers.items():
            if "\n" in key or "\n" in str(value):
                raise MiniGridError(f"header {key!r} must be single-line")
            lines.append(f"{key}: {value}")
        head = ("\n".join(lines) + "\n\n").encode()
        return head + self.payload

    @classmethod
    def decode(cls, data: bytes) -> "Message":
        split = data.find(b"\n\n")
        if split < 0:
            raise MiniGridError("frame body missing blank line")
        head = data[:split].decode()
        payload = data[split + 2:]
        lines = head.splitlines()
        proto, _, mtype = lines[0].partition(" ")
        if proto != PROTOCOL or mtype not in MESSAGE_TYPES:
            raise MiniGridError(f"bad message start line {lines[0]!r}")
        headers: dict[str, str] = {}
        for line in lines[1:]:
            key, sep, value = line.partition(":")
            if not sep:
                raise MiniGridError(f"bad header line {line!r}")
            headers[key.strip()] = value.strip()
        return cls(mtype=mtype, headers=headers, payload=payload)

    def get(self, key: str, default: str = "") -> str:
        return self.headers.get(key, default)

    @property
    def is_error(self) -> bool:
        return self.mtype == ERROR

    @property
    def is_reply(self) -> bool:
        return self.headers.get("reply") == "ok" or self.is_error


def frame(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


def error_message(exc: MiniGridError) -> Message:
    headers = {"code": exc.code, "detail": exc.detail}
    if exc.remediation:
        headers["remediation"] = exc.remediation
    return Message(ERROR, headers)


def raise_if_error(msg: Message) -> Message:
    if msg.is_error:
        raise from_code(msg.get("code"), msg.get("detail"), msg.get("remediation"))
    return msg


def reply_to(request: Message, headers: dict[str, str] | None = None,
             payload: bytes = b"") -> Message:
    out = {"reply": "ok"}
    if "request-id" in request.headers:
        out["request-id"] = request.headers["request-id"]
    out.update(headers or {})
    return Message(request.mtype, out, payload)


# ----------------------------------------------------- credential headers

def encode_chain(chain) -> str:
    return ",".join(
        base64.b64encode(cert.canonical_bytes(with_signature=True)).decode()
        for cert in chain)


def decode_chain(text: str):
    if not text:
        return ()
    return tuple(gsi.certificate_from_bytes(base64.b64decode(part))
                 for part in text.split(","))


# ----------------------------------------------------------- socket frames

def write_frame(sock: socket.socket, data: bytes) -> None:
    sock.sendall(frame(data))


def read_frame(sock: socket.socket) -> bytes | None:
    header = _read_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    return _read_exact(sock, length)


def _read_exact(sock: socket.socket, count: int) -> bytes | None:
    buf = b""
    while len(buf) < count:
        chunk = sock.recv(count - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def chunk_payload(data: bytes) -> list[bytes]:
    if not data:
        return [b""]
    return [data[i:i + CHUNK_SIZE] for i in range(0, len(data), CHUNK_SIZE)]
