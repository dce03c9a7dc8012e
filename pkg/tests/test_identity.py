import random
import threading
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import base58_encode, ed25519_public, ed25519_verify
from vdic.canonical import canonicalize
from vdic.identity import (
    ControllerMismatchError,
    Did,
    DocumentProof,
    IdentityError,
    InvalidProofError,
    LedgerStore,
    NotFoundError,
    StaleVersionError,
    create_did_document,
    did_from_keypair,
    generate_keypair,
    publish,
    replay,
    resolve,
    verify_document_proof,
)


def test_seeded_keypair_is_reproducible():
    a = generate_keypair(bytes(32))
    b = generate_keypair(bytes(32))
    assert a == b
    assert a.signing_public != a.agreement_public
    assert a.signing_secret != a.agreement_secret


def test_unseeded_keypairs_differ():
    assert generate_keypair().signing_public != generate_keypair().signing_public


@pytest.mark.parametrize("seed", [b"", bytes(31), bytes(33), "x" * 32])
def test_bad_seed_rejected(seed):
    with pytest.raises(ValueError):
        generate_keypair(seed)


@settings(max_examples=50)
@given(st.binary(min_size=32, max_size=32))
def test_signing_key_matches_second_library(seed):
    kp = generate_keypair(seed)
    assert kp.signing_public == ed25519_public(seed)
    msg = b"vdic" + seed
    assert ed25519_verify(kp.signing_public, msg, kp.sign(msg))


def test_did_of_zero_key():
    did = Did("vdic", base58_encode(bytes(32)))
    assert str(did) == "did:vdic:11111111111111111111111111111111"
    assert Did.parse(str(did)) == did


@settings(max_examples=100)
@given(st.binary(min_size=32, max_size=32))
def test_did_matches_base58_oracle_and_round_trips(seed):
    kp = generate_keypair(seed)
    did = did_from_keypair(kp)
    assert str(did) == "did:vdic:" + base58_encode(kp.signing_public)
    assert Did.parse(str(did)) == did
    assert did.public_key == kp.signing_public


def test_did_injective():
    a, b = generate_keypair(bytes(32)), generate_keypair(b"\1" * 32)
    assert did_from_keypair(a) != did_from_keypair(b)


@pytest.mark.parametrize(
    "text",
    ["did:key:abc", "did:vdic", "did:vdic:0OIl", "did:vdic:" + base58_encode(bytes(31)), "vdic:x:y", ""],
)
def test_did_parse_rejects_garbage(text):
    with pytest.raises(ValueError):
        Did.parse(text)


def test_self_controlled_document():
    kp = generate_keypair(bytes(32))
    did = did_from_keypair(kp)
    doc = create_did_document(did, None, kp)
    assert doc.controller == (did,)
    assert doc.version == 1
    assert doc.service == ()
    assert doc.authentication == (f"{did}#key-1",)
    assert verify_document_proof(doc)
    assert doc.signing_key == kp.signing_public
    assert doc.agreement_key == kp.agreement_public


def test_controlled_document_matches_listing_shape():
    leader = generate_keypair(bytes(32))
    vdic = generate_keypair(b"\2" * 32)
    leader_did, vdic_did = did_from_keypair(leader), did_from_keypair(vdic)
    doc = create_did_document(vdic_did, [leader_did], vdic, signer=leader)
    js = doc.to_json()
    assert js["@context"] == ["https://www.w3.org/ns/did/v1"]
    assert js["controller"] == [str(leader_did)]
    assert js["authentication"] == [f"{leader_did}#key-1"]
    assert verify_document_proof(doc)
    # the subject's own key cannot sign a leader-controlled document
    with pytest.raises(ControllerMismatchError):
        create_did_document(vdic_did, [leader_did], vdic)


def test_document_for_wrong_key_rejected():
    with pytest.raises(IdentityError):
        create_did_document(did_from_keypair(generate_keypair()), None, generate_keypair())


def test_proof_matches_independent_verifier():
    kp = generate_keypair(b"\3" * 32)
    doc = create_did_document(did_from_keypair(kp), None, kp)
    payload = canonicalize({k: v for k, v in doc.to_json().items() if k != "proof"})
    assert ed25519_verify(kp.signing_public, payload, doc.proof.signature)


def test_document_json_round_trip():
    kp = generate_keypair(b"\4" * 32)
    doc = create_did_document(did_from_keypair(kp), None, kp)
    assert type(doc).from_json(doc.to_json()) == doc


def test_publish_and_resolve(ledger):
    kp = generate_keypair(bytes(32))
    did = did_from_keypair(kp)
    doc = create_did_document(did, None, kp)
    assert publish(ledger, doc) == 1
    assert resolve(ledger, did) == doc
    assert resolve(ledger, str(did)) == doc


def test_republish_same_version_is_stale(ledger):
    kp = generate_keypair(bytes(32))
    doc = create_did_document(did_from_keypair(kp), None, kp)
    publish(ledger, doc)
    with pytest.raises(StaleVersionError):
        publish(ledger, doc)
    with pytest.raises(StaleVersionError):
        publish(ledger, replace(doc, version=3))


def test_latest_version_wins(ledger):
    kp = generate_keypair(bytes(32))
    doc = create_did_document(did_from_keypair(kp), None, kp)
    publish(ledger, doc)
    v2 = doc.revise(kp)
    assert publish(ledger, v2) == 2
    assert resolve(ledger, doc.id).version == 2
    assert [d.version for d in ledger.history(doc.id)] == [1, 2]


def test_update_by_non_controller_rejected(ledger):
    kp = generate_keypair(bytes(32))
    mallory = generate_keypair(b"\x66" * 32)
    doc = create_did_document(did_from_keypair(kp), None, kp)
    publish(ledger, doc)
    forged = replace(doc, version=2, proof=None)
    sig = mallory.sign(forged.signing_payload())
    forged = replace(forged, proof=DocumentProof(f"{did_from_keypair(mallory)}#key-1", sig))
    with pytest.raises(ControllerMismatchError):
        publish(ledger, forged)
    # taking over by naming yourself controller needs the old controller's signature too
    hijack = replace(doc, version=2, controller=(did_from_keypair(mallory),), proof=None)
    hijack = replace(hijack, proof=DocumentProof(f"{did_from_keypair(mallory)}#key-1",
                                                 mallory.sign(hijack.signing_payload())))
    with pytest.raises(ControllerMismatchError):
        publish(ledger, hijack)
    assert len(ledger) == 1


def test_tampered_proof_rejected(ledger):
    kp = generate_keypair(bytes(32))
    doc = create_did_document(did_from_keypair(kp), None, kp)
    bad = replace(doc, service=doc.service, authentication=("did:vdic:x#key-1",))
    with pytest.raises(InvalidProofError):
        publish(ledger, bad)


def test_unknown_did_not_found(ledger):
    with pytest.raises(NotFoundError):
        resolve(ledger, did_from_keypair(generate_keypair()))


def test_interleaved_publishes_match_log_replay(ledger):
    rnd = random.Random(7)
    keys = [generate_keypair(rnd.randbytes(32)) for _ in range(10)]
    latest = {}
    for kp in keys:
        did = did_from_keypair(kp)
        publish(ledger, create_did_document(did, None, kp))
        latest[did] = 1
    for _ in range(90):
        kp = rnd.choice(keys)
        did = did_from_keypair(kp)
        publish(ledger, resolve(ledger, did).revise(kp))
        latest[did] += 1
    assert len(ledger) == 100
    # brute force: scan the whole log for the highest version per DID
    for did, version in latest.items():
        best = max((e for e in ledger if e.did == did), key=lambda e: e.version)
        assert best.version == version
        assert resolve(ledger, did) == best.document
    assert replay(iter(ledger)) == {did: resolve(ledger, did) for did in latest}


def test_file_backed_ledger_replays(tmp_path):
    path = tmp_path / "ledger.jsonl"
    ledger = LedgerStore(path)
    kp = generate_keypair(bytes(32))
    doc = create_did_document(did_from_keypair(kp), None, kp)
    publish(ledger, doc)
    publish(ledger, doc.revise(kp))
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    reloaded = LedgerStore(path)
    assert resolve(reloaded, doc.id) == resolve(ledger, doc.id)
    assert [e.version for e in reloaded] == [1, 2]


def test_concurrent_appends_serialize(ledger):
    keys = [generate_keypair(bytes([i]) * 32) for i in range(8)]
    for kp in keys:
        publish(ledger, create_did_document(did_from_keypair(kp), None, kp))
    errors = []

    def bump(kp):
        for _ in range(20):
            try:
                publish(ledger, resolve(ledger, did_from_keypair(kp)).revise(kp))
            except StaleVersionError as exc:  # pragma: no cover - must not happen per-DID
                errors.append(exc)

    threads = [threading.Thread(target=bump, args=(kp,)) for kp in keys]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    for kp in keys:
        versions = [e.version for e in ledger if e.did == did_from_keypair(kp)]
        assert versions == list(range(1, 22))


def test_seed_alone_restores_both_keys():
    kp = generate_keypair()
    assert generate_keypair(kp.signing_secret) == kp
    assert kp.agreement_secret != kp.signing_secret
