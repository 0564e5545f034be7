"""Tests for sandbox staging, digest verification, and job log events."""

import random
from datetime import datetime, timezone

import pytest

from minigrid import gsi, staging
from minigrid.errors import (
    BadSignature,
    DigestMismatch,
    MissingSource,
    PathEscape,
    SandboxMissing,
)
from minigrid.staging import (
    StagingArea,
    TransferItem,
    TransferRequest,
    content_digest,
    log_event_line,
    make_items,
)

NOW = int(datetime(2013, 2, 5, 9, 0, 0, tzinfo=timezone.utc).timestamp())
EXE = b"#!minigrid-task hostname\n"
DATA = b"some input bytes\n"


@pytest.fixture
def ca(tmp_path):
    return gsi.CertificateAuthority.initialize(tmp_path / "ca", "simpleCA-test",
                                               now=NOW - 1000, rng=random.Random(1))


@pytest.fixture
def proxy(ca):
    cert, key = ca.issue("/O=Grid/CN=u", 86400, "p", NOW - 500, rng=random.Random(2))
    return gsi.proxy_init(cert, key, "p", now=NOW - 100, rng=random.Random(3))


@pytest.fixture
def area(tmp_path, ca):
    return StagingArea(tmp_path / "sandboxes",
                       trust_anchors={ca.root.subject_dn: ca.root})


def request_for(contents, proxy, direction="in"):
    return TransferRequest(direction=direction, items=make_items(contents),
                           chain=proxy.chain)


class TestStageIn:
    def test_executable_only_has_one_manifest_item(self, area, proxy):
        sandbox = area.stage_in("req-1", request_for({"hostname": EXE}, proxy), NOW)
        assert len(sandbox.manifest) == 1
        assert sandbox.executable == "hostname"

    def test_executable_plus_input_has_two_items(self, area, proxy):
        request = request_for({"hostname": EXE, "data.in": DATA}, proxy)
        sandbox = area.stage_in("req-2", request, NOW)
        assert len(sandbox.manifest) == 2

    def test_corrupted_payload_is_digest_mismatch(self, area, proxy):
        items = (TransferItem("hostname", "hostname",
                              content_digest(EXE), EXE[:-1] + b"X"),)
        request = TransferRequest("in", items, proxy.chain)
        with pytest.raises(DigestMismatch):
            area.stage_in("req-3", request, NOW)

    def test_byte_identity_both_directions(self, area, proxy):
        area.stage_in("req-4", request_for({"hostname": EXE, "data.in": DATA},
                                           proxy), NOW)
        out = area.stage_out("req-4", ["hostname", "data.in"])
        assert out == {"hostname": EXE, "data.in": DATA}
        for name, data in out.items():
            assert content_digest(data) == content_digest({"hostname": EXE,
                                                           "data.in": DATA}[name])

    def test_idempotent_per_request_id(self, area, proxy):
        request = request_for({"hostname": EXE}, proxy)
        first = area.stage_in("req-5", request, NOW)
        again = area.stage_in("req-5", request, NOW)
        assert again is first

    def test_path_traversal_rejected(self, area, proxy):
        request = request_for({"../escape": EXE}, proxy)
        with pytest.raises(PathEscape):
            area.stage_in("req-6", request, NOW)
        assert not (area.root.parent / "escape").exists()

    def test_bad_chain_rejected_before_writing(self, area, proxy, tmp_path):
        import dataclasses
        bad = dataclasses.replace(proxy.proxy_cert, subject_dn="/O=Evil/CN=x")
        request = TransferRequest("in", make_items({"hostname": EXE}),
                                  (bad,) + proxy.chain[1:])
        with pytest.raises(BadSignature):
            area.stage_in("req-7", request, NOW)
        assert "req-7" not in area.sandboxes


class TestStageOut:
    def test_missing_output_comes_back_empty(self, area, proxy):
        area.stage_in("req-8", request_for({"hostname": EXE}, proxy), NOW)
        sandbox = area.sandbox("req-8")
        sandbox.write("result.out", b"grid-b\n")
        out = area.stage_out("req-8", ["result.out", "result.err"])
        assert out["result.out"] == b"grid-b\n"
        assert out["result.err"] == b""

    def test_unknown_sandbox_is_missing(self, area):
        with pytest.raises(SandboxMissing):
            area.stage_out("nope", ["x"])

    def test_discard_only_after_stage_out(self, area, proxy):
        area.stage_in("req-9", request_for({"hostname": EXE}, proxy), NOW)
        area.stage_out("req-9", ["hostname"])
        area.discard("req-9")
        with pytest.raises(SandboxMissing):
            area.sandbox("req-9")

    def test_authenticated_stage_out_verifies_chain(self, area, proxy):
        area.stage_in("req-a", request_for({"hostname": EXE}, proxy), NOW)
        area.stage_out("req-a", ["hostname"], proxy.chain,
                       now=NOW, authenticated=True)


class TestSandbox:
    def test_read_missing_source(self, area, proxy):
        sandbox = area.stage_in("req-b", request_for({"hostname": EXE}, proxy), NOW)
        with pytest.raises(MissingSource):
            sandbox.read("ghost")

    def test_manifest_tracks_rewrites(self, area, proxy):
        sandbox = area.stage_in("req-c", request_for({"hostname": EXE}, proxy), NOW)
        sandbox.write("hostname", b"new content")
        names = [name for name, _, _ in sandbox.manifest]
        assert names.count("hostname") == 1


def test_log_event_line_format():
    from minigrid.lrm import JobId
    when = datetime(2013, 2, 5, 15, 7, 56, tzinfo=timezone.utc)
    line = log_event_line(staging.LOG_SUBMITTED, JobId(9, 0), when,
                          "Job submitted from host grid-b.it2.ddu.ac.in")
    assert line == "000 (9.0) 02/05 15:07:56 Job submitted from host grid-b.it2.ddu.ac.in"
