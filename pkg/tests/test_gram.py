"""Tests for the gatekeeper: auth, adapters, state mapping, remote runs."""

import pytest

from minigrid import staging
from minigrid.errors import (
    NoProxyFound,
    NotAuthorized,
    Timeout,
    UnknownJobmanager,
    UnknownRequest,
)
from minigrid.gram import GramJobHandle, GramState, map_state
from minigrid.jobspec import GramJobRequest, parse_contact_string
from minigrid.lrm import JobState
from minigrid.testbed import build_testbed


@pytest.fixture
def bed(tmp_path):
    return build_testbed(run_dir=tmp_path / "bed")


@pytest.fixture
def proxy(bed):
    bed.run_script("at 0 gtuser@grid-b mg-proxy-init")
    daemon = bed.site("grid-b")
    return daemon.node.cred_store(daemon.node.user("gtuser")).load_proxy()


def stage_request(bed, site, request_id, chain, executable="/bin/date"):
    daemon = bed.site(site)
    name = executable.rsplit("/", 1)[-1]
    content = daemon.node.read_file(executable)
    request = staging.TransferRequest(
        direction="in", items=staging.make_items({name: content}), chain=chain)
    daemon.staging.stage_in(request_id, request, daemon.clock.epoch())
    return {name: staging.content_digest(content)}


def make_request(request_id, owner_dn, digests, executable="/bin/date",
                 target_lrm="condor"):
    return GramJobRequest(
        executable=executable, arguments=(),
        stdout_name="stdout", stderr_name="stderr",
        owner_dn=owner_dn, target_lrm=target_lrm,
        stage_in=tuple(digests.items()), request_id=request_id)


class TestStateMapping:
    def test_mapping_total_and_exact(self):
        expected = {
            JobState.IDLE: GramState.PENDING,
            JobState.RUNNING: GramState.ACTIVE,
            JobState.SUSPENDED: GramState.ACTIVE,
            JobState.COMPLETED: GramState.DONE,
            JobState.REMOVED: GramState.FAILED,
            JobState.HELD: GramState.FAILED,
        }
        assert {state: map_state(state) for state in JobState} == expected

    def test_handle_state_is_monotone(self):
        handle = GramJobHandle(contact=None, request_id="r")
        assert handle.observe(GramState.ACTIVE) is GramState.ACTIVE
        # A later PENDING observation must not regress the handle.
        assert handle.observe(GramState.PENDING) is GramState.ACTIVE
        assert handle.observe(GramState.DONE) is GramState.DONE
        assert handle.observe(GramState.ACTIVE) is GramState.DONE


class TestHandleRequest:
    def test_valid_request_yields_pending_handle(self, bed, proxy):
        gk = bed.site("ca").gatekeeper
        digests = stage_request(bed, "ca", "req-t1", proxy.chain)
        handle = gk.handle_request(make_request("req-t1", proxy.subject_dn,
                                                digests), proxy.chain)
        assert handle.gram_state is GramState.PENDING
        assert handle.remote_job in bed.site("ca").lrm.jobs
        owner = bed.site("ca").lrm.jobs[handle.remote_job].owner
        assert owner == "gtuser"

    def test_unknown_jobmanager(self, bed, proxy):
        gk = bed.site("ca").gatekeeper
        digests = stage_request(bed, "ca", "req-t2", proxy.chain)
        with pytest.raises(UnknownJobmanager):
            gk.handle_request(make_request("req-t2", proxy.subject_dn, digests,
                                           target_lrm="lsf"), proxy.chain)

    def test_empty_chain_names_proxy_init(self, bed):
        gk = bed.site("ca").gatekeeper
        with pytest.raises(NoProxyFound) as info:
            gk.handle_request(make_request("req-t3", "", {}), ())
        assert "proxy_init" in info.value.remediation

    def test_unmapped_subject_directs_to_gridmap(self, bed, proxy):
        gk = bed.site("ca").gatekeeper
        gk.config.gridmap = {}
        with pytest.raises(NotAuthorized) as info:
            gk.handle_request(make_request("req-t4", proxy.subject_dn, {}),
                              proxy.chain)
        assert "gridmap" in info.value.detail + info.value.remediation

    def test_rejection_leaves_queue_untouched(self, bed, proxy):
        daemon = bed.site("ca")
        before = dict(daemon.lrm.jobs)
        with pytest.raises(NoProxyFound):
            daemon.gatekeeper.handle_request(make_request("req-t5", "", {}), ())
        saved = dict(daemon.gatekeeper.config.gridmap)
        try:
            daemon.gatekeeper.config.gridmap = {}
            with pytest.raises(NotAuthorized):
                daemon.gatekeeper.handle_request(
                    make_request("req-t5", proxy.subject_dn, {}), proxy.chain)
        finally:
            daemon.gatekeeper.config.gridmap = saved
        assert daemon.lrm.jobs == before

    def test_poll_unknown_request(self, bed):
        with pytest.raises(UnknownRequest):
            bed.site("ca").gatekeeper.poll_status("req-never")


class TestJobRun:
    CONTACT = "ca.it2.ddu.ac.in/jobmanager-condor"

    def run(self, bed, proxy, executable, *args, contact=None):
        daemon = bed.site("grid-b")
        user = daemon.node.user("gtuser")
        read_file = lambda p: daemon.node.read_file(p)
        return daemon.client.job_run(
            parse_contact_string(contact or self.CONTACT), executable,
            tuple(args), proxy, read_file=read_file)

    def test_date_run_produces_one_line_and_history_row(self, bed, proxy):
        stdout = self.run(bed, proxy, "/bin/date")
        assert len(stdout.splitlines()) == 1
        bed.advance(20)
        history = bed.site("ca").lrm.query_history()
        assert len(history) == 1
        assert history[0].cmd == "/bin/date"
        assert history[0].owner == "gtuser"

    def test_hostname_returns_short_site_name(self, bed, proxy):
        assert self.run(bed, proxy, "/bin/hostname") == "ca\n"

    def test_unreachable_host_times_out_naming_contact(self, bed, proxy):
        contact = "nowhere.example.org/jobmanager-condor"
        with pytest.raises(Timeout) as info:
            self.run(bed, proxy, "/bin/date", contact=contact)
        assert "nowhere.example.org/jobmanager-condor" in info.value.detail

    def test_poll_status_moves_pending_active_done(self, bed, proxy):
        daemon = bed.site("grid-b")
        gk = bed.site("ca")
        digests = stage_request(bed, "ca", "req-t6", proxy.chain)
        handle = gk.gatekeeper.handle_request(
            make_request("req-t6", proxy.subject_dn, digests), proxy.chain)
        seen = [handle.gram_state]
        for _ in range(40):
            bed.advance(0.5)
            state, _run = gk.gatekeeper.poll_status("req-t6")
            if state is not seen[-1]:
                seen.append(state)
            if state is GramState.DONE:
                break
        assert seen == [GramState.PENDING, GramState.ACTIVE, GramState.DONE]

    def test_adapter_neutrality_same_output_both_dialects(self, tmp_path):
        from minigrid.testbed import SiteSpec
        specs = [
            SiteSpec("ca", "ca.x", roles=frozenset({"lrm", "gatekeeper", "ca"})),
            SiteSpec("csite", "condor.x"),
            SiteSpec("ssite", "sge.x", dialect="sgelike"),
        ]
        bed = build_testbed(specs, run_dir=tmp_path / "neutral")
        bed.run_script("at 0 gtuser@ca mg-proxy-init")
        daemon = bed.site("ca")
        proxy = daemon.node.cred_store(daemon.node.user("gtuser")).load_proxy()
        read_file = lambda p: daemon.node.read_file(p)
        outputs = []
        for contact in ("condor.x/jobmanager-condor", "sge.x/jobmanager-sge"):
            outputs.append(daemon.client.job_run(
                parse_contact_string(contact), "/bin/echo",
                ("same", "bytes"), proxy, read_file=read_file))
        assert outputs[0] == outputs[1] == "same bytes\n"
