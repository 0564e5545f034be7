"""Tests for the framed wire protocol codec."""

import random
import socket

import pytest

from minigrid import gsi, wire
from minigrid.errors import FutureCertificate, MiniGridError, from_code


class TestMessageCodec:
    def test_round_trip_headers_and_payload(self):
        msg = wire.Message(wire.JOB_REQUEST,
                           {"request-id": "req-1", "executable": "/bin/date"},
                           b"payload bytes")
        again = wire.Message.decode(msg.encode())
        assert again.mtype == wire.JOB_REQUEST
        assert again.headers == msg.headers
        assert again.payload == b"payload bytes"

    def test_start_line_shape(self):
        encoded = wire.Message(wire.JOB_STATUS, {"request-id": "r"}).encode()
        assert encoded.startswith(b"MINIGRID/1 JOB-STATUS\n")

    def test_unknown_type_rejected(self):
        with pytest.raises(MiniGridError):
            wire.Message("NOT-A-TYPE").encode()
        with pytest.raises(MiniGridError):
            wire.Message.decode(b"MINIGRID/1 NOPE\n\n")

    def test_multiline_header_rejected(self):
        with pytest.raises(MiniGridError):
            wire.Message(wire.ERROR, {"detail": "two\nlines"}).encode()

    def test_empty_payload_round_trip(self):
        msg = wire.Message(wire.XFER_GET, {"name": "x"})
        assert wire.Message.decode(msg.encode()).payload == b""

    def test_binary_payload_preserved(self):
        payload = bytes(range(256))
        msg = wire.Message(wire.XFER_PUT, {"name": "blob"}, payload)
        assert wire.Message.decode(msg.encode()).payload == payload


class TestErrorMessages:
    def test_error_carries_code_detail_remediation(self):
        exc = FutureCertificate("You have sent a certificate with future date/time")
        msg = wire.error_message(exc)
        assert msg.get("code") == "FutureCertificate"
        assert "future date/time" in msg.get("detail")
        assert msg.get("remediation")

    def test_raise_if_error_rebuilds_typed_exception(self):
        msg = wire.error_message(FutureCertificate("skewed"))
        with pytest.raises(FutureCertificate):
            wire.raise_if_error(wire.Message.decode(msg.encode()))

    def test_from_code_preserves_unknown_codes(self):
        exc = from_code("SomethingNew", "detail")
        assert exc.code == "SomethingNew"


class TestChainHeaders:
    def test_chain_encode_decode(self, tmp_path):
        ca = gsi.CertificateAuthority.initialize(tmp_path, "simpleCA-x", now=0,
                                                 rng=random.Random(1))
        cert, key = ca.issue("/O=Grid/CN=u", 1000, "p", now=1,
                             rng=random.Random(2))
        proxy = gsi.proxy_init(cert, key, "p", now=2, rng=random.Random(3))
        text = wire.encode_chain(proxy.chain)
        assert wire.decode_chain(text) == proxy.chain
        assert wire.decode_chain("") == ()


class TestFraming:
    def test_chunking_at_64k(self):
        data = b"x" * (wire.CHUNK_SIZE + 1)
        chunks = wire.chunk_payload(data)
        assert len(chunks) == 2
        assert b"".join(chunks) == data
        assert wire.chunk_payload(b"") == [b""]

    def test_socket_frame_round_trip(self):
        left, right = socket.socketpair()
        try:
            body = wire.Message(wire.JOB_COLLECT, {"request-id": "r"},
                                b"abc").encode()
            wire.write_frame(left, body)
            assert wire.read_frame(right) == body
            left.close()
            assert wire.read_frame(right) is None
        finally:
            right.close()
