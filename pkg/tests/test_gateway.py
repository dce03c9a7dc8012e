import base64
import json
import random
from dataclasses import replace

import pytest
from fastapi.testclient import TestClient
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ed25519_verify, sha256_hex
from vdic.credentials import ACCESS_CREDENTIAL, create_presentation, issue_credential
from vdic.gateway import (
    GatewayConfig,
    GatewayError,
    create_app,
    create_cluster_app,
    decode_token,
    sign_token,
)
from vdic.identity import did_from_keypair, generate_keypair
from vdic.lifecycle import remove_dapp
from vdic.scenario import build_vdic, new_actor


class FakeTime:
    def __init__(self, t=1_700_000_000):
        self.t = t

    def __call__(self):
        return self.t


@pytest.fixture
def clock():
    return FakeTime()


@pytest.fixture
def sc(clock):
    return build_vdic(n_operators=1, n_dapps=2, seed=5, now=clock)


def status_of(fn, *args, **kw):
    with pytest.raises(GatewayError) as info:
        fn(*args, **kw)
    return info.value.status, info.value.code


def test_token_shape(sc, clock):
    dapp = sc.dapps[0]
    tok = sc.token(dapp)
    assert tok.payload["sub"] == str(dapp.did)
    assert tok.payload["iss"] == str(sc.ctx.vdic)
    assert tok.payload["scope"] == "readwrite"
    assert tok.payload["exp"] - tok.payload["iat"] == 300
    assert tok.payload["iat"] == clock.t
    head, body, sig = tok.encoded.split(".")
    pad = lambda s: s + "=" * (-len(s) % 4)  # noqa: E731
    assert json.loads(base64.urlsafe_b64decode(pad(head))) == {"alg": "EdDSA", "typ": "JWT"}
    # independent verifier over the JWS signing input
    assert ed25519_verify(
        sc.ctx.vdic_kp.signing_public, f"{head}.{body}".encode(), base64.urlsafe_b64decode(pad(sig))
    )
    assert sc.ctx.gateway.verify_token(tok)["jti"] == tok.payload["jti"]
    assert sc.token(dapp).payload["jti"] != tok.payload["jti"]


def test_expiry_boundary(sc, clock):
    tok = sc.token(sc.dapps[0])
    gw = sc.ctx.gateway
    clock.t = tok.payload["exp"] - 1
    assert gw.verify_token(tok)
    clock.t = tok.payload["exp"]
    assert status_of(gw.verify_token, tok) == (401, "expired")
    assert status_of(gw.handle_read, tok, "cidv0-sha256:" + "0" * 64) == (401, "expired")


def test_foreign_key_rejected(sc, clock):
    tok = sc.token(sc.dapps[0])
    forged = sign_token(generate_keypair(b"\x09" * 32), tok.payload)
    assert status_of(sc.ctx.gateway.verify_token, forged) == (401, "bad-signature")


def test_wrong_issuer_claim_rejected(sc, clock):
    tok = sc.token(sc.dapps[0])
    other = dict(tok.payload, iss=str(sc.leader.did))
    forged = sign_token(sc.ctx.vdic_kp, other)
    assert status_of(sc.ctx.gateway.verify_token, forged)[0] == 401


@pytest.mark.parametrize("token", ["", "a.b", "a.b.c", "x" * 50, "...", 42])
def test_malformed_tokens(sc, token):
    assert status_of(sc.ctx.gateway.verify_token, token)[0] == 401


def test_extra_claims_rejected(sc, clock):
    tok = sc.token(sc.dapps[0])
    forged = sign_token(sc.ctx.vdic_kp, dict(tok.payload, admin=True))
    assert status_of(decode_token, forged, sc.ctx.vdic_kp.signing_public, sc.ctx.vdic, clock.t)[0] == 401


def test_challenges(sc, clock):
    gw = sc.ctx.gateway
    a, b = gw.request_challenge(), gw.request_challenge()
    assert a.nonce != b.nonce and len(bytes.fromhex(a.nonce)) == 16
    dapp = sc.dapps[0]
    vp = create_presentation(dapp.kp, dapp.did, [sc.access[dapp.did]], nonce=a.nonce)
    gw.authenticate(vp, a.nonce)
    assert status_of(gw.authenticate, vp, a.nonce) == (401, "bad-nonce")
    vp_b = create_presentation(dapp.kp, dapp.did, [sc.access[dapp.did]], nonce=b.nonce)
    clock.t += 60
    assert status_of(gw.authenticate, vp_b, b.nonce) == (401, "bad-nonce")
    assert status_of(gw.authenticate, vp_b, "00" * 16) == (401, "bad-nonce")


def test_nonce_mismatch_is_invalid_presentation(sc):
    gw = sc.ctx.gateway
    dapp = sc.dapps[0]
    ch = gw.request_challenge()
    vp = create_presentation(dapp.kp, dapp.did, [sc.access[dapp.did]], nonce="something else")
    assert status_of(gw.authenticate, vp, ch.nonce) == (401, "invalid-presentation")


def test_revoked_dapp(sc, clock):
    gw = sc.ctx.gateway
    dapp = sc.dapps[0]
    old = sc.token(dapp)
    remove_dapp(sc.ctx, sc.leader.kp, dapp.did)
    assert status_of(sc.token, dapp) == (403, "revoked")
    # tokens issued before delisting stay valid until they expire
    assert gw.verify_token(old)
    clock.t = old.payload["exp"]
    assert status_of(gw.verify_token, old) == (401, "expired")
    assert sc.token(sc.dapps[1])


def test_presentation_by_another_holder(sc):
    gw = sc.ctx.gateway
    victim, thief = sc.dapps
    ch = gw.request_challenge()
    # the thief cannot sign a presentation for the victim's credential as holder
    vp = create_presentation(victim.kp, victim.did, [sc.access[victim.did]], nonce=ch.nonce)
    swapped = replace(vp, holder=thief.did)
    assert status_of(gw.authenticate, swapped, ch.nonce) == (401, "invalid-presentation")


def test_credential_from_wrong_issuer(sc):
    gw = sc.ctx.gateway
    dapp = sc.dapps[0]
    cred = issue_credential(
        sc.issuer.kp, sc.issuer.did, dapp.did, [ACCESS_CREDENTIAL], {"vdic": str(sc.ctx.vdic), "scope": "readwrite"}
    )
    ch = gw.request_challenge()
    vp = create_presentation(dapp.kp, dapp.did, [cred], nonce=ch.nonce)
    assert status_of(gw.authenticate, vp, ch.nonce) == (403, "wrong-issuer")


def test_credential_for_other_vdic(sc):
    gw = sc.ctx.gateway
    dapp = sc.dapps[0]
    cred = issue_credential(
        sc.leader.kp, sc.leader.did, dapp.did, [ACCESS_CREDENTIAL], {"vdic": "did:vdic:other", "scope": "readwrite"}
    )
    ch = gw.request_challenge()
    vp = create_presentation(dapp.kp, dapp.did, [cred], nonce=ch.nonce)
    assert status_of(gw.authenticate, vp, ch.nonce)[0] == 403


def test_read_write(sc):
    gw = sc.ctx.gateway
    tok = sc.token(sc.dapps[0])
    payload = random.Random(1).randbytes(100 * 1024)
    cid, completion = gw.write(tok, payload, wait="all")
    assert cid.digest == sha256_hex(payload)
    assert completion.done
    assert gw.handle_read(tok, cid) == payload
    assert str(gw.handle_write(tok, b"")) == (
        "cidv0-sha256:e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    )
    assert status_of(gw.handle_read, tok, "cidv0-sha256:" + "1" * 64) == (404, "not-found")
    assert status_of(gw.handle_read, tok, "nonsense")[0] == 400
    assert status_of(gw.handle_write, tok, b"x", wait="never")[0] == 400


def test_read_scope_cannot_write(clock):
    sc = build_vdic(n_dapps=1, seed=6, now=clock, dapp_scope="read")
    tok = sc.token(sc.dapps[0])
    assert tok.payload["scope"] == "read"
    assert status_of(sc.ctx.gateway.handle_write, tok, b"x") == (403, "read-only")


def test_body_limit(clock):
    sc = build_vdic(n_dapps=1, seed=7, now=clock, gateway_config=GatewayConfig(max_body_bytes=10))
    tok = sc.token(sc.dapps[0])
    sc.ctx.gateway.handle_write(tok, b"x" * 10)
    assert status_of(sc.ctx.gateway.handle_write, tok, b"x" * 11)[0] == 413


@settings(max_examples=100, deadline=None)
@given(seed=st.binary(min_size=32, max_size=32))
def test_any_foreign_key_rejected(seed):
    vdic_kp = generate_keypair(b"\x01" * 32)
    vdic = did_from_keypair(vdic_kp)
    payload = {"iss": str(vdic), "sub": str(vdic), "scope": "read", "iat": 0, "exp": 10, "jti": "x"}
    tok = sign_token(generate_keypair(seed), payload)
    if seed == b"\x01" * 32:
        return
    with pytest.raises(GatewayError):
        decode_token(tok, vdic_kp.signing_public, vdic, 5)


# HTTP surface


def http_token(client, dapp, cred):
    nonce = client.post("/auth/challenge").json()["nonce"]
    vp = create_presentation(dapp.kp, dapp.did, [cred], nonce=nonce)
    return client.post("/auth/token", content=vp.serialize())


def test_http_flow(sc):
    client = TestClient(create_app(sc.ctx.gateway))
    assert client.get("/health").json() == {"status": "ok", "vdic": str(sc.ctx.vdic)}
    ch = client.post("/auth/challenge").json()
    assert set(ch) == {"nonce", "ttl"} and ch["ttl"] == 60
    dapp = sc.dapps[0]
    r = http_token(client, dapp, sc.access[dapp.did])
    assert r.status_code == 200 and r.json()["expires_in"] == 300
    auth = {"Authorization": f"Bearer {r.json()['token']}"}
    body = random.Random(2).randbytes(100 * 1024)
    r = client.post("/data?wait=all", content=body, headers=auth)
    assert r.status_code == 200
    cid = r.json()["cid"]
    assert cid == "cidv0-sha256:" + sha256_hex(body)
    r = client.get(f"/data/{cid}", headers=auth)
    assert r.status_code == 200 and r.content == body
    assert r.headers["content-type"] == "application/octet-stream"
    assert client.get("/data/cidv0-sha256:" + "2" * 64, headers=auth).status_code == 404


def test_http_rejections(sc):
    client = TestClient(create_app(sc.ctx.gateway))
    dapp = sc.dapps[0]
    assert client.post("/auth/token", content=b"{}").status_code == 401
    good = http_token(client, dapp, sc.access[dapp.did]).json()["token"]
    cid = "cidv0-sha256:" + "3" * 64
    for headers in [{}, {"Authorization": good}, {"Authorization": "Bearer "}, {"Authorization": "Bearer " + good[:-2]}]:
        assert client.post("/data", content=b"x", headers=headers).status_code == 401
        assert client.get(f"/data/{cid}", headers=headers).status_code == 401
    remove_dapp(sc.ctx, sc.leader.kp, dapp.did)
    r = http_token(client, dapp, sc.access[dapp.did])
    assert r.status_code == 403 and r.json()["error"] == "revoked"


@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_corrupted_bearer_never_reads(data):
    sc = _shared()
    tok, cid = sc.tok.encoded, sc.cid
    i = data.draw(st.integers(0, len(tok) - 1))
    ch = data.draw(st.sampled_from("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_.=").filter(
        lambda c: c != tok[i]))
    bad = tok[:i] + ch + tok[i + 1:]
    with pytest.raises(GatewayError) as info:
        sc.ctx.gateway.handle_read(bad, cid)
    assert info.value.status == 401


_SHARED = None


def _shared():
    global _SHARED
    if _SHARED is None:
        sc = build_vdic(n_dapps=1, seed=8, now=FakeTime())
        sc.tok = sc.token(sc.dapps[0])
        sc.cid = sc.ctx.gateway.handle_write(sc.tok, b"secret")
        _SHARED = sc
    return _SHARED


def test_cluster_app():
    sc = build_vdic(n_operators=2, seed=9)
    client = TestClient(create_cluster_app(sc.ctx.cluster))
    cid = client.post("/add", content=b"abc").json()["cid"]
    peers = client.get(f"/pins/{cid}").json()["peer_map"]
    assert peers["leader"] == "pinned" and len(peers) == 3
    assert client.get("/pins/bogus").status_code == 400


def test_unlisted_actor_cannot_get_token(sc):
    stranger = new_actor(sc.ledger, random.Random(3), "stranger")
    cred = issue_credential(sc.leader.kp, sc.leader.did, stranger.did, [ACCESS_CREDENTIAL],
                            {"vdic": str(sc.ctx.vdic), "scope": "readwrite"})
    ch = sc.ctx.gateway.request_challenge()
    vp = create_presentation(stranger.kp, stranger.did, [cred], nonce=ch.nonce)
    assert status_of(sc.ctx.gateway.authenticate, vp, ch.nonce) == (403, "revoked")
