"""Tests for the credential authority, proxies, and chain verification."""

import random
from datetime import datetime, timezone

import pytest

from minigrid import gsi, timefmt
from minigrid.errors import (
    AlreadyInitialized,
    BadPassphrase,
    BadSignature,
    Expired,
    FutureCertificate,
    InvalidLifetime,
    NoProxyFound,
    UnknownIssuer,
    UserCertExpired,
)

CA_NAME = "simpleCA-ca.it2.ddu.ac.in"
USER_DN = f"/O=Grid/OU=GlobusTest/OU={CA_NAME}/OU=Local/CN=GT User"
PASSPHRASE = "gridpass"

# grid-proxy-init moment from the remote-run walk-through.
T0 = int(datetime(2013, 2, 13, 13, 11, 48, tzinfo=timezone.utc).timestamp())


@pytest.fixture
def ca(tmp_path):
    return gsi.CertificateAuthority.initialize(
        tmp_path / "ca", CA_NAME, now=T0 - 86400, rng=random.Random(1))


@pytest.fixture
def user(ca):
    return ca.issue(USER_DN, lifetime=365 * 86400, passphrase=PASSPHRASE,
                    now=T0 - 3600, rng=random.Random(2))


class TestCa:
    def test_root_dn_carries_ca_name(self, ca):
        assert f"OU={CA_NAME}" in ca.root.subject_dn
        assert ca.root.subject_dn == ca.root.issuer_dn

    def test_root_verifies_against_itself(self, ca):
        gsi.verify_chain([ca.root], [ca.root], now=T0, max_skew=0)

    def test_second_init_in_same_directory_rejected(self, ca, tmp_path):
        with pytest.raises(AlreadyInitialized):
            gsi.CertificateAuthority.initialize(tmp_path / "ca", CA_NAME, now=T0)

    def test_reload_round_trips(self, ca, tmp_path):
        again = gsi.CertificateAuthority.load(tmp_path / "ca")
        assert again.root == ca.root


class TestIssue:
    def test_issued_cert_verifies_at_now(self, ca, user):
        cert, _key = user
        gsi.verify_chain([cert], [ca.root], now=T0, max_skew=0)

    def test_zero_lifetime_rejected(self, ca):
        with pytest.raises(InvalidLifetime):
            ca.issue(USER_DN, lifetime=0, passphrase="x", now=T0)

    def test_cert_against_foreign_root_is_unknown_issuer(self, user, tmp_path):
        cert, _ = user
        other = gsi.CertificateAuthority.initialize(
            tmp_path / "other", "simpleCA-other", now=T0 - 86400, rng=random.Random(9))
        with pytest.raises(UnknownIssuer):
            gsi.verify_chain([cert], [other.root], now=T0)


class TestProxyInit:
    def test_twelve_hour_default_lifetime(self, user):
        cert, key = user
        proxy = gsi.proxy_init(cert, key, PASSPHRASE, now=T0)
        assert proxy.not_after - T0 == 12 * 3600
        until = timefmt.fmt_ctime(timefmt.from_epoch(proxy.not_after))
        assert until == "Thu Feb 14 01:11:48 2013"

    def test_wrong_passphrase(self, user):
        cert, key = user
        with pytest.raises(BadPassphrase):
            gsi.proxy_init(cert, key, "wrong", now=T0)

    def test_lifetime_clipped_to_user_cert_window(self, ca):
        cert, key = ca.issue(USER_DN, lifetime=3600, passphrase="p", now=T0,
                             rng=random.Random(3))
        proxy = gsi.proxy_init(cert, key, "p", now=T0 + 600)
        assert proxy.not_after == cert.not_after
        assert proxy.proxy_cert.not_before >= cert.not_before

    def test_expired_user_cert_rejected(self, ca):
        cert, key = ca.issue(USER_DN, lifetime=3600, passphrase="p", now=T0,
                             rng=random.Random(4))
        with pytest.raises(UserCertExpired):
            gsi.proxy_init(cert, key, "p", now=T0 + 7200)

    def test_subject_and_chain_shape(self, user):
        cert, key = user
        proxy = gsi.proxy_init(cert, key, PASSPHRASE, now=T0)
        assert proxy.subject_dn == cert.subject_dn + "/CN=proxy"
        assert proxy.proxy_cert.issuer_dn == cert.subject_dn
        assert proxy.chain == (proxy.proxy_cert, cert)

    def test_proxy_window_subset_of_user_window(self, ca):
        rng = random.Random(5)
        for trial in range(20):
            issue_at = T0 + trial * 1000
            lifetime = rng.randint(1000, 100000)
            cert, key = ca.issue(USER_DN, lifetime, "p", issue_at, rng=rng)
            proxy = gsi.proxy_init(cert, key, "p", now=issue_at + 10,
                                   lifetime=rng.randint(100, 200000), rng=rng)
            assert cert.not_before <= proxy.proxy_cert.not_before
            assert proxy.proxy_cert.not_after <= cert.not_after


class TestProxyInfo:
    def test_freshly_created(self, user):
        cert, key = user
        proxy = gsi.proxy_init(cert, key, PASSPHRASE, now=T0)
        info = gsi.proxy_info(proxy, now=T0)
        assert info["subject"].endswith("/CN=proxy")
        assert info["time_left"] == 12 * 3600
        assert not info["expired"]

    def test_past_expiry_reports_zero_and_expired(self, user):
        cert, key = user
        proxy = gsi.proxy_init(cert, key, PASSPHRASE, now=T0)
        info = gsi.proxy_info(proxy, now=proxy.not_after + 5)
        assert info["time_left"] == 0
        assert info["expired"]

    def test_missing_proxy_file_names_proxy_init(self, tmp_path):
        store = gsi.CredentialStore(tmp_path / "creds")
        with pytest.raises(NoProxyFound) as info:
            store.load_proxy()
        assert "proxy_init" in info.value.remediation


class TestVerifyChain:
    def test_valid_proxy_at_zero_skew(self, ca, user):
        cert, key = user
        proxy = gsi.proxy_init(cert, key, PASSPHRASE, now=T0)
        gsi.verify_chain(proxy.chain, [ca.root], now=T0, max_skew=0)

    def test_verifier_five_minutes_behind_issuer(self, ca, user):
        cert, key = user
        proxy = gsi.proxy_init(cert, key, PASSPHRASE, now=T0)
        with pytest.raises(FutureCertificate) as info:
            gsi.verify_chain(proxy.chain, [ca.root], now=T0 - 300, max_skew=60)
        assert "certificate with future date/time" in info.value.detail

    def test_generous_skew_tolerates_the_same_offset(self, ca, user):
        cert, key = user
        proxy = gsi.proxy_init(cert, key, PASSPHRASE, now=T0)
        gsi.verify_chain(proxy.chain, [ca.root], now=T0 - 300, max_skew=600)

    def test_empty_chain_is_no_proxy(self, ca):
        with pytest.raises(NoProxyFound):
            gsi.verify_chain([], [ca.root], now=T0)

    def test_skew_boundaries_inclusive(self, ca, user):
        cert, key = user
        proxy = gsi.proxy_init(cert, key, PASSPHRASE, now=T0)
        nb, na = proxy.proxy_cert.not_before, proxy.proxy_cert.not_after
        skew = 60
        gsi.verify_chain(proxy.chain, [ca.root], now=nb - skew, max_skew=skew)
        with pytest.raises(FutureCertificate):
            gsi.verify_chain(proxy.chain, [ca.root], now=nb - skew - 1, max_skew=skew)
        gsi.verify_chain(proxy.chain, [ca.root], now=na + skew, max_skew=skew)
        with pytest.raises(Expired):
            gsi.verify_chain(proxy.chain, [ca.root], now=na + skew + 1, max_skew=skew)

    def test_tampered_subject_dn_fails_signature(self, ca, user):
        import dataclasses
        cert, key = user
        proxy = gsi.proxy_init(cert, key, PASSPHRASE, now=T0)
        good = proxy.proxy_cert
        mangled = dataclasses.replace(good, subject_dn=good.subject_dn[:-1] + "X")
        with pytest.raises(BadSignature):
            gsi.verify_chain([mangled, cert], [ca.root], now=T0)

    def test_round_trip_property_randomized(self, ca):
        rng = random.Random(8)
        for trial in range(50):
            issue_at = T0 + trial * 7
            cert, key = ca.issue(f"{USER_DN}/{trial}", lifetime=86400,
                                 passphrase="p", now=issue_at, rng=rng)
            proxy = gsi.proxy_init(cert, key, "p", now=issue_at + 1, rng=rng)
            gsi.verify_chain(proxy.chain, [ca.root], now=issue_at + 1, max_skew=0)


class TestFileFormats:
    def test_certificate_text_round_trip_bit_exact(self, ca):
        text = gsi.certificate_to_text(ca.root)
        again = gsi.certificate_from_text(text)
        assert again == ca.root
        assert gsi.certificate_to_text(again) == text

    def test_store_save_load_proxy(self, tmp_path, ca, user):
        cert, key = user
        proxy = gsi.proxy_init(cert, key, PASSPHRASE, now=T0, rng=random.Random(6))
        store = gsi.CredentialStore(tmp_path / "creds")
        store.save_user(cert, key)
        store.save_proxy(proxy)
        assert store.load_user() == (cert, key)
        assert store.load_proxy() == proxy
        gsi.verify_chain(store.load_proxy().chain, [ca.root], now=T0)

    def test_trust_anchor_directory(self, tmp_path, ca):
        trust = tmp_path / "trust"
        trust.mkdir()
        (trust / "ca-cert.pem").write_text(gsi.certificate_to_text(ca.root))
        anchors = gsi.load_trust_anchors(trust)
        assert anchors == {ca.root.subject_dn: ca.root}

    def test_gridmap_subject_strips_one_proxy_suffix(self):
        assert gsi.gridmap_subject(USER_DN + "/CN=proxy") == USER_DN
        assert gsi.gridmap_subject(USER_DN) == USER_DN
        double = USER_DN + "/CN=proxy/CN=proxy"
        assert gsi.gridmap_subject(double) == USER_DN + "/CN=proxy"
