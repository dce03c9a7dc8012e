"""Verifiable credentials, presentations and linked presentations."""

from __future__ import annotations

import hashlib
import threading
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path

from vdic.canonical import (
    b64decode,
    b64encode,
    canonicalize,
    loads_canonical,
    parse_timestamp,
    utc_now,
)
from vdic.identity import (
    SIGNING_FRAGMENT,
    Did,
    DidDocument,
    IdentityError,
    KeyPair,
    LedgerStore,
    NotFoundError,
    ServiceEntry,
    did_from_keypair,
    publish,
    resolve,
    verify_signature,
)

__all__ = [
    "canonicalize",
    "Credential",
    "Presentation",
    "VerificationResult",
    "PresentationStore",
    "issue_credential",
    "verify_credential",
    "create_presentation",
    "verify_presentation",
    "link_presentation",
    "fetch_linked_presentations",
]

VC_CONTEXT = "https://www.w3.org/2018/credentials/v1"
VC_TYPE = "VerifiableCredential"
VP_TYPE = "VerifiablePresentation"
PROOF_TYPE = "Ed25519Signature2020"
LINKED_VP_TYPE = "LinkedVerifiablePresentation"

NODE_OPERATOR_CREDENTIAL = "VdicNodeOperatorCredential"
ACCESS_CREDENTIAL = "VdicAccessCredential"
IDENTITY_CREDENTIAL = "IdentityCredential"
MOTIVE_CREDENTIAL = "MotiveCredential"


class CredentialError(Exception):
    pass


@dataclass(frozen=True)
class Proof:
    verification_method: str
    created: str
    signature: bytes

    def to_json(self) -> dict:
        return {
            "type": PROOF_TYPE,
            "verificationMethod": self.verification_method,
            "created": self.created,
            "signature": b64encode(self.signature),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Proof":
        _expect_keys(data, {"type", "verificationMethod", "created", "signature"}, "proof")
        if data["type"] != PROOF_TYPE:
            raise ValueError(f"unsupported proof type {data['type']!r}")
        return cls(_str(data["verificationMethod"]), _str(data["created"]), b64decode(data["signature"]))


def _expect_keys(data, keys: set[str], what: str) -> None:
    if not isinstance(data, dict) or set(data) != keys:
        got = sorted(data) if isinstance(data, dict) else type(data).__name__
        raise ValueError(f"{what}: expected keys {sorted(keys)}, got {got}")


def _str(value) -> str:
    if not isinstance(value, str):
        raise ValueError(f"expected a string, got {type(value).__name__}")
    return value


@dataclass(frozen=True)
class Credential:
    id: str
    types: tuple[str, ...]
    issuer: Did
    subject: Did
    claims: dict[str, str]
    issuance_date: str
    proof: Proof | None = None

    def to_json(self, include_proof: bool = True) -> dict:
        out = {
            "@context": [VC_CONTEXT],
            "id": self.id,
            "type": list(self.types),
            "issuer": str(self.issuer),
            "issuanceDate": self.issuance_date,
            "credentialSubject": {"id": str(self.subject), **self.claims},
        }
        if include_proof and self.proof is not None:
            out["proof"] = self.proof.to_json()
        return out

    @classmethod
    def from_json(cls, data: dict) -> "Credential":
        _expect_keys(
            data, {"@context", "id", "type", "issuer", "issuanceDate", "credentialSubject", "proof"}, "credential"
        )
        if data["@context"] != [VC_CONTEXT]:
            raise ValueError("unexpected credential context")
        types = data["type"]
        if not isinstance(types, list) or not all(isinstance(t, str) for t in types):
            raise ValueError("credential type must be a list of strings")
        subject = dict(data["credentialSubject"])
        sid = subject.pop("id")
        if not all(isinstance(v, str) for v in subject.values()):
            raise ValueError("claim values must be strings")
        return cls(
            id=_str(data["id"]),
            types=tuple(types),
            issuer=Did.parse(data["issuer"]),
            subject=Did.parse(sid),
            claims=subject,
            issuance_date=_str(data["issuanceDate"]),
            proof=Proof.from_json(data["proof"]),
        )

    def serialize(self) -> bytes:
        return canonicalize(self.to_json())

    @classmethod
    def deserialize(cls, raw: bytes) -> "Credential":
        try:
            return cls.from_json(loads_canonical(raw))
        except (KeyError, TypeError, AttributeError, UnicodeDecodeError) as exc:
            raise ValueError(f"malformed credential: {exc}") from exc

    def signing_payload(self) -> bytes:
        return _signing_payload(self.to_json(include_proof=False), self.proof)

    def has_type(self, t: str) -> bool:
        return t in self.types


@dataclass(frozen=True)
class Presentation:
    holder: Did
    credentials: tuple[Credential, ...]
    created: str
    nonce: str
    proof: Proof | None = None

    def to_json(self, include_proof: bool = True) -> dict:
        out = {
            "@context": [VC_CONTEXT],
            "type": [VP_TYPE],
            "holder": str(self.holder),
            "verifiableCredential": [c.to_json() for c in self.credentials],
            "created": self.created,
            "nonce": self.nonce,
        }
        if include_proof and self.proof is not None:
            out["proof"] = self.proof.to_json()
        return out

    @classmethod
    def from_json(cls, data: dict) -> "Presentation":
        _expect_keys(
            data,
            {"@context", "type", "holder", "verifiableCredential", "created", "nonce", "proof"},
            "presentation",
        )
        if data["@context"] != [VC_CONTEXT] or data["type"] != [VP_TYPE]:
            raise ValueError("not a verifiable presentation")
        creds = data["verifiableCredential"]
        if not isinstance(creds, list):
            raise ValueError("verifiableCredential must be a list")
        return cls(
            holder=Did.parse(data["holder"]),
            credentials=tuple(Credential.from_json(c) for c in creds),
            created=_str(data["created"]),
            nonce=_str(data["nonce"]),
            proof=Proof.from_json(data["proof"]),
        )

    def serialize(self) -> bytes:
        return canonicalize(self.to_json())

    @classmethod
    def deserialize(cls, raw: bytes) -> "Presentation":
        try:
            return cls.from_json(loads_canonical(raw))
        except (KeyError, TypeError, AttributeError, UnicodeDecodeError) as exc:
            raise ValueError(f"malformed presentation: {exc}") from exc

    def signing_payload(self) -> bytes:
        return _signing_payload(self.to_json(include_proof=False), self.proof)


def _signing_payload(body: dict, proof: Proof | None) -> bytes:
    """Canonical body plus the proof options; only the signature value is left out."""
    if proof is None:
        raise CredentialError("proof options must be set before signing")
    options = proof.to_json()
    del options["signature"]
    return canonicalize({**body, "proof": options})


@dataclass(frozen=True)
class VerificationResult:
    failures: tuple[tuple[str, str], ...] = ()

    @property
    def valid(self) -> bool:
        return not self.failures

    def __bool__(self) -> bool:
        return self.valid

    def to_json(self) -> dict:
        return {"valid": self.valid, "failures": [list(f) for f in self.failures]}


def _check_keypair(kp: KeyPair, did: Did) -> None:
    if did_from_keypair(kp) != Did.parse(did):
        raise CredentialError(f"key pair does not belong to {did}")


def issue_credential(
    issuer_kp: KeyPair,
    issuer: Did,
    subject: Did,
    types: list[str],
    claims: dict[str, str],
    now: str | None = None,
    credential_id: str | None = None,
) -> Credential:
    _check_keypair(issuer_kp, issuer)
    if "id" in claims:
        raise CredentialError("'id' is reserved for the credential subject")
    if not all(isinstance(k, str) and isinstance(v, str) for k, v in claims.items()):
        raise CredentialError("claims must map strings to strings")
    now = now or utc_now()
    types = [VC_TYPE] + [t for t in types if t != VC_TYPE]
    cred = Credential(
        id=credential_id or f"urn:uuid:{uuid.uuid4()}",
        types=tuple(types),
        issuer=Did.parse(issuer),
        subject=Did.parse(subject),
        claims=dict(claims),
        issuance_date=now,
        proof=Proof(Did.parse(issuer).fragment(SIGNING_FRAGMENT), now, b""),
    )
    return replace(cred, proof=replace(cred.proof, signature=issuer_kp.sign(cred.signing_payload())))


def _signer_key(ledger: LedgerStore, did: Did, method_id: str) -> tuple[bytes | None, str | None]:
    """Resolve ``did`` and return the signing key ``method_id`` names in its document."""
    try:
        doc = resolve(ledger, did)
    except NotFoundError:
        return None, f"{did} does not resolve"
    for m in doc.verification_method:
        if m.id == method_id:
            return m.public_key, None
    return None, f"{method_id} is not listed in the document of {did}"


def verify_credential(cred: Credential, resolver: LedgerStore) -> VerificationResult:
    failures: list[tuple[str, str]] = []
    try:
        parse_timestamp(cred.issuance_date)
    except ValueError:
        failures.append(("format", f"issuanceDate is not RFC 3339: {cred.issuance_date!r}"))
    if VC_TYPE not in cred.types:
        failures.append(("format", f"type list lacks {VC_TYPE}"))
    if cred.proof is None:
        failures.append(("signature", "credential has no proof"))
        return VerificationResult(tuple(failures))
    if cred.proof.verification_method != cred.issuer.fragment(SIGNING_FRAGMENT):
        failures.append(("signature", "proof was not made with the issuer's signing key"))
        return VerificationResult(tuple(failures))
    key, err = _signer_key(resolver, cred.issuer, cred.proof.verification_method)
    if key is None:
        failures.append(("issuer-resolution", err))
    elif not verify_signature(key, cred.signing_payload(), cred.proof.signature):
        failures.append(("signature", f"credential {cred.id} signature does not verify"))
    return VerificationResult(tuple(failures))


def create_presentation(
    holder_kp: KeyPair,
    holder: Did,
    creds: list[Credential],
    nonce: str = "",
    now: str | None = None,
) -> Presentation:
    _check_keypair(holder_kp, holder)
    holder = Did.parse(holder)
    for c in creds:
        if c.subject != holder:
            raise CredentialError(f"credential {c.id} is about {c.subject}, not the holder {holder}")
    now = now or utc_now()
    vp = Presentation(
        holder=holder, credentials=tuple(creds), created=now, nonce=nonce,
        proof=Proof(holder.fragment(SIGNING_FRAGMENT), now, b""),
    )
    return replace(vp, proof=replace(vp.proof, signature=holder_kp.sign(vp.signing_payload())))


def verify_presentation(
    vp: Presentation, resolver: LedgerStore, expected_nonce: str | None = None
) -> VerificationResult:
    failures: list[tuple[str, str]] = []
    try:
        parse_timestamp(vp.created)
    except ValueError:
        failures.append(("format", f"created is not RFC 3339: {vp.created!r}"))
    if vp.proof is None or vp.proof.verification_method != vp.holder.fragment(SIGNING_FRAGMENT):
        failures.append(("holder-binding", "presentation is not signed with the holder's key"))
    else:
        key, err = _signer_key(resolver, vp.holder, vp.proof.verification_method)
        if key is None:
            failures.append(("issuer-resolution", f"holder: {err}"))
        elif not verify_signature(key, vp.signing_payload(), vp.proof.signature):
            failures.append(("signature", "presentation signature does not verify"))
    if expected_nonce is not None and vp.nonce != expected_nonce:
        failures.append(("nonce", "presentation nonce does not match the challenge"))
    for c in vp.credentials:
        if c.subject != vp.holder:
            failures.append(("holder-binding", f"credential {c.id} subject {c.subject} is not the holder"))
        for check, detail in verify_credential(c, resolver).failures:
            failures.append((check, f"credential {c.id}: {detail}"))
    return VerificationResult(tuple(failures))


@dataclass
class PresentationStore:
    """Location-addressed blob store for published presentations.

    In-memory by default; with ``path`` each location is a file named by its id.
    Locations are write-once.
    """

    path: Path | None = None
    scheme: str = "vpstore"
    _blobs: dict[str, bytes] = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        if self.path is not None:
            self.path = Path(self.path)
            self.path.mkdir(parents=True, exist_ok=True)

    def _file(self, location: str) -> Path:
        prefix = f"{self.scheme}://"
        if not location.startswith(prefix):
            raise KeyError(location)
        name = location[len(prefix):]
        if not name or "/" in name or name.startswith("."):
            raise KeyError(location)
        return self.path / name

    def put(self, data: bytes, name: str | None = None) -> str:
        location = f"{self.scheme}://{name or uuid.uuid4().hex}"
        with self._lock:
            if location in self:
                raise FileExistsError(location)
            if self.path is not None:
                self._file(location).write_bytes(data)
            else:
                self._blobs[location] = bytes(data)
        return location

    def get(self, location: str) -> bytes:
        if self.path is not None:
            try:
                return self._file(location).read_bytes()
            except FileNotFoundError:
                raise KeyError(location) from None
        return self._blobs[location]

    def __contains__(self, location: str) -> bool:
        if self.path is not None:
            try:
                return self._file(location).exists()
            except KeyError:
                return False
        return location in self._blobs

    def delete(self, location: str) -> None:
        with self._lock:
            if self.path is not None:
                self._file(location).unlink()
            else:
                del self._blobs[location]


def link_presentation(
    store: PresentationStore,
    ledger: LedgerStore,
    holder_kp: KeyPair,
    holder_doc: DidDocument,
    vp: Presentation,
) -> tuple[str, int]:
    """Store ``vp`` and reference it from a new revision of the holder's document."""
    _check_keypair(holder_kp, holder_doc.id)
    current = resolve(ledger, holder_doc.id)
    if current.version != holder_doc.version:
        raise IdentityError(f"{holder_doc.id}: stale document version {holder_doc.version}")
    raw = vp.serialize()
    location = store.put(raw, hashlib.sha256(raw).hexdigest())
    n = len(current.services_of_type(LINKED_VP_TYPE)) + 1
    entry = ServiceEntry(holder_doc.id.fragment(f"linked-vp-{n}"), LINKED_VP_TYPE, (location,))
    while current.service_by_id(entry.id) is not None:
        n += 1
        entry = replace(entry, id=holder_doc.id.fragment(f"linked-vp-{n}"))
    new_doc = current.revise(holder_kp, service=current.service + (entry,))
    return location, publish(ledger, new_doc)


def fetch_linked_presentations(
    did: Did, resolver: LedgerStore, store: PresentationStore
) -> list[tuple[str, Presentation | None, VerificationResult]]:
    """Fetch and verify every presentation linked from ``did``'s document.

    Unreachable or unparsable locations come back as a failed result with a
    ``None`` presentation rather than raising.
    """
    doc = resolve(resolver, did)
    out = []
    for entry in doc.services_of_type(LINKED_VP_TYPE):
        for location in entry.service_endpoint:
            try:
                raw = store.get(location)
            except KeyError:
                out.append((location, None, VerificationResult((("fetch", f"nothing stored at {location}"),))))
                continue
            try:
                vp = Presentation.deserialize(raw)
            except (ValueError, KeyError, TypeError) as exc:
                out.append((location, None, VerificationResult((("format", f"{location}: {exc}"),))))
                continue
            result = verify_presentation(vp, resolver)
            if vp.holder != doc.id:
                result = VerificationResult(
                    result.failures + (("holder-binding", f"{location} is held by {vp.holder}"),)
                )
            out.append((location, vp, result))
    return out
