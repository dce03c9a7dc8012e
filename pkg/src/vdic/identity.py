"""Keys, ``did:vdic`` identifiers, DID documents and the append-only ledger.

The public blockchain that anchors DID documents is simulated by
:class:`LedgerStore`, an append-only log that can be persisted as JSON lines.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import os
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

from nacl.exceptions import BadSignatureError
from nacl.public import PrivateKey
from nacl.signing import SigningKey, VerifyKey

from vdic.canonical import b58decode, b58encode, b64decode, b64encode, canonicalize

DID_METHOD = "vdic"
DID_CONTEXT = "https://www.w3.org/ns/did/v1"
SIGNING_KEY_TYPE = "Ed25519VerificationKey2020"
AGREEMENT_KEY_TYPE = "X25519KeyAgreementKey2019"
SIGNING_FRAGMENT = "key-1"
AGREEMENT_FRAGMENT = "key-agreement-1"


class IdentityError(Exception):
    pass


class NotFoundError(IdentityError):
    pass


class StaleVersionError(IdentityError):
    pass


class InvalidProofError(IdentityError):
    pass


class ControllerMismatchError(IdentityError):
    pass


@dataclass(frozen=True)
class KeyPair:
    signing_secret: bytes
    signing_public: bytes
    agreement_secret: bytes
    agreement_public: bytes

    def __repr__(self) -> str:
        return f"KeyPair(signing_public={self.signing_public.hex()})"

    def sign(self, message: bytes) -> bytes:
        return SigningKey(self.signing_secret).sign(message).signature


def generate_keypair(seed: bytes | None = None) -> KeyPair:
    """Create signing and key-agreement keys from a 32-byte seed (random if omitted).

    The agreement secret is a domain-separated hash of the seed, so the seed
    alone restores both keys and the two secrets never coincide.
    """
    if seed is None:
        seed = os.urandom(32)
    if not isinstance(seed, (bytes, bytearray)) or len(seed) != 32:
        raise ValueError("seed must be exactly 32 bytes")
    signing_secret = bytes(seed)
    agreement_secret = hashlib.sha256(b"vdic/x25519-agreement/" + signing_secret).digest()
    sk = SigningKey(signing_secret)
    ak = PrivateKey(agreement_secret)
    return KeyPair(
        signing_secret=signing_secret,
        signing_public=bytes(sk.verify_key),
        agreement_secret=bytes(ak),
        agreement_public=bytes(ak.public_key),
    )


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        VerifyKey(public_key).verify(message, signature)
    except (BadSignatureError, ValueError, TypeError):
        return False
    return True


@dataclass(frozen=True, order=True)
class Did:
    method: str
    id: str

    def __str__(self) -> str:
        return f"did:{self.method}:{self.id}"

    @classmethod
    def parse(cls, text: str | "Did") -> "Did":
        if isinstance(text, Did):
            return text
        if not isinstance(text, str):
            raise ValueError(f"not a DID: {text!r}")
        parts = text.split(":")
        if len(parts) != 3 or parts[0] != "did" or parts[1] != DID_METHOD:
            raise ValueError(f"not a did:{DID_METHOD} identifier: {text!r}")
        key = b58decode(parts[2])
        if len(key) != 32:
            raise ValueError("method-specific id must encode a 32-byte key")
        return cls(DID_METHOD, parts[2])

    @property
    def public_key(self) -> bytes:
        return b58decode(self.id)

    def fragment(self, name: str) -> str:
        return f"{self}#{name}"


def did_from_public_key(public_key: bytes) -> Did:
    if len(public_key) != 32:
        raise ValueError("public key must be 32 bytes")
    return Did(DID_METHOD, b58encode(public_key))


def did_from_keypair(kp: KeyPair) -> Did:
    return did_from_public_key(kp.signing_public)


@dataclass(frozen=True)
class ServiceEntry:
    id: str
    type: str
    service_endpoint: tuple[str, ...]

    def to_json(self) -> dict:
        return {"id": self.id, "type": self.type, "serviceEndpoint": list(self.service_endpoint)}

    @classmethod
    def from_json(cls, data: dict) -> "ServiceEntry":
        _expect_keys(data, {"id", "type", "serviceEndpoint"}, "service entry")
        endpoint = data["serviceEndpoint"]
        if not isinstance(endpoint, list) or not all(isinstance(e, str) for e in endpoint):
            raise ValueError("serviceEndpoint must be a list of strings")
        return cls(data["id"], data["type"], tuple(endpoint))


@dataclass(frozen=True)
class VerificationMethod:
    id: str
    type: str
    controller: Did
    public_key: bytes

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "type": self.type,
            "controller": str(self.controller),
            "publicKeyBase58": b58encode(self.public_key),
        }

    @classmethod
    def from_json(cls, data: dict) -> "VerificationMethod":
        _expect_keys(data, {"id", "type", "controller", "publicKeyBase58"}, "verification method")
        return cls(data["id"], data["type"], Did.parse(data["controller"]), b58decode(data["publicKeyBase58"]))


@dataclass(frozen=True)
class DocumentProof:
    verification_method: str
    signature: bytes

    def to_json(self) -> dict:
        return {"verificationMethod": self.verification_method, "signature": b64encode(self.signature)}

    @classmethod
    def from_json(cls, data: dict) -> "DocumentProof":
        _expect_keys(data, {"verificationMethod", "signature"}, "document proof")
        return cls(data["verificationMethod"], b64decode(data["signature"]))


@dataclass(frozen=True)
class DidDocument:
    id: Did
    controller: tuple[Did, ...]
    verification_method: tuple[VerificationMethod, ...]
    authentication: tuple[str, ...]
    service: tuple[ServiceEntry, ...] = ()
    version: int = 1
    context: tuple[str, ...] = (DID_CONTEXT,)
    proof: DocumentProof | None = None

    def to_json(self, include_proof: bool = True) -> dict:
        doc = {
            "@context": list(self.context),
            "id": str(self.id),
            "controller": [str(c) for c in self.controller],
            "verificationMethod": [m.to_json() for m in self.verification_method],
            "authentication": list(self.authentication),
            "service": [s.to_json() for s in self.service],
            "version": self.version,
        }
        if include_proof and self.proof is not None:
            doc["proof"] = self.proof.to_json()
        return doc

    @classmethod
    def from_json(cls, data: dict) -> "DidDocument":
        _expect_keys(
            data,
            {"@context", "id", "controller", "verificationMethod", "authentication", "service", "version"},
            "DID document",
            optional={"proof"},
        )
        version = data["version"]
        if not isinstance(version, int) or isinstance(version, bool) or version < 1:
            raise ValueError("version must be a positive integer")
        return cls(
            id=Did.parse(data["id"]),
            controller=tuple(Did.parse(c) for c in data["controller"]),
            verification_method=tuple(VerificationMethod.from_json(m) for m in data["verificationMethod"]),
            authentication=tuple(data["authentication"]),
            service=tuple(ServiceEntry.from_json(s) for s in data["service"]),
            version=version,
            context=tuple(data["@context"]),
            proof=DocumentProof.from_json(data["proof"]) if "proof" in data else None,
        )

    def signing_payload(self) -> bytes:
        return canonicalize(self.to_json(include_proof=False))

    def method_by_type(self, key_type: str) -> VerificationMethod | None:
        for m in self.verification_method:
            if m.type == key_type:
                return m
        return None

    @property
    def signing_key(self) -> bytes:
        m = self.method_by_type(SIGNING_KEY_TYPE)
        if m is None:
            raise IdentityError(f"{self.id} has no signing key")
        return m.public_key

    @property
    def agreement_key(self) -> bytes | None:
        m = self.method_by_type(AGREEMENT_KEY_TYPE)
        return None if m is None else m.public_key

    def services_of_type(self, service_type: str) -> list[ServiceEntry]:
        return [s for s in self.service if s.type == service_type]

    def service_by_id(self, service_id: str) -> ServiceEntry | None:
        for s in self.service:
            if s.id == service_id:
                return s
        return None

    def revise(self, signer: KeyPair, **changes) -> "DidDocument":
        """Return the next version with ``changes`` applied, signed by ``signer``."""
        nxt = replace(self, version=self.version + 1, proof=None, **changes)
        return sign_document(nxt, signer)


def _expect_keys(data: dict, required: set[str], what: str, optional: set[str] = frozenset()) -> None:
    if not isinstance(data, dict):
        raise ValueError(f"{what} must be a JSON object")
    keys = set(data)
    missing = required - keys
    extra = keys - required - set(optional)
    if missing or extra:
        raise ValueError(f"{what}: missing {sorted(missing)}, unexpected {sorted(extra)}")


def sign_document(doc: DidDocument, signer: KeyPair) -> DidDocument:
    signer_did = did_from_keypair(signer)
    if signer_did not in doc.controller:
        raise ControllerMismatchError(f"{signer_did} is not a controller of {doc.id}")
    unsigned = replace(doc, proof=None)
    sig = signer.sign(unsigned.signing_payload())
    return replace(unsigned, proof=DocumentProof(signer_did.fragment(SIGNING_FRAGMENT), sig))


def create_did_document(
    did: Did,
    controller: list[Did] | None,
    kp: KeyPair,
    signer: KeyPair | None = None,
) -> DidDocument:
    """Build version 1 of a DID document for ``did``.

    ``controller`` defaults to the subject itself. A document controlled by
    another DID (a VDIC controlled by its leader) must be signed with that
    controller's key, passed as ``signer``.
    """
    if did_from_keypair(kp) != did:
        raise IdentityError("DID was not derived from the given key pair")
    controllers = tuple(controller) if controller else (did,)
    signer = signer or kp
    auth_owner = did if did in controllers else controllers[0]
    doc = DidDocument(
        id=did,
        controller=controllers,
        verification_method=(
            VerificationMethod(did.fragment(SIGNING_FRAGMENT), SIGNING_KEY_TYPE, did, kp.signing_public),
            VerificationMethod(did.fragment(AGREEMENT_FRAGMENT), AGREEMENT_KEY_TYPE, did, kp.agreement_public),
        ),
        authentication=(auth_owner.fragment(SIGNING_FRAGMENT),),
    )
    return sign_document(doc, signer)


def proof_signer(doc: DidDocument) -> Did | None:
    if doc.proof is None:
        return None
    did_part, _, frag = doc.proof.verification_method.partition("#")
    if frag != SIGNING_FRAGMENT:
        return None
    try:
        return Did.parse(did_part)
    except ValueError:
        return None


def verify_document_proof(doc: DidDocument, controllers: tuple[Did, ...] | None = None) -> bool:
    """Check the proof against the signing key of one of ``controllers``.

    ``controllers`` defaults to the document's own controller list. Keys are
    taken from the controller DID itself, which for ``did:vdic`` encodes the
    signing key that its published document lists.
    """
    signer = proof_signer(doc)
    allowed = doc.controller if controllers is None else controllers
    if signer is None or signer not in allowed:
        return False
    return verify_signature(signer.public_key, doc.signing_payload(), doc.proof.signature)


@dataclass(frozen=True)
class LedgerEntry:
    did: Did
    version: int
    document: DidDocument

    def to_json(self) -> dict:
        return {"did": str(self.did), "version": self.version, "document": self.document.to_json()}


@dataclass
class LedgerStore:
    """Append-only log of DID document revisions.

    When ``path`` is given every append is also written to a JSON-lines file.
    The file is replayed on construction and re-read for new lines before
    each lookup, so several processes can share one ledger. Replayed
    revisions pass the same checks as fresh ones.
    """

    path: Path | None = None
    _entries: list[LedgerEntry] = field(default_factory=list, init=False, repr=False)
    _index: dict[Did, int] = field(default_factory=dict, init=False, repr=False)
    _lock: threading.RLock = field(default_factory=threading.RLock, init=False, repr=False)
    _offset: int = field(default=0, init=False, repr=False)

    def __post_init__(self):
        if self.path is not None:
            self.path = Path(self.path)
            self.refresh()

    @staticmethod
    def _entry_from_line(line: bytes) -> LedgerEntry:
        data = json.loads(line)
        doc = DidDocument.from_json(data["document"])
        if data["did"] != str(doc.id) or data["version"] != doc.version:
            raise IdentityError("ledger line disagrees with its document")
        return LedgerEntry(doc.id, doc.version, doc)

    def _append(self, entry: LedgerEntry) -> None:
        self._entries.append(entry)
        self._index[entry.did] = len(self._entries) - 1

    def _check(self, doc: DidDocument) -> None:
        i = self._index.get(doc.id)
        prev = None if i is None else self._entries[i].document
        expected = 1 if prev is None else prev.version + 1
        if doc.version != expected:
            raise StaleVersionError(f"{doc.id}: version {doc.version}, expected {expected}")
        if prev is not None and proof_signer(doc) not in prev.controller:
            raise ControllerMismatchError(f"{doc.id}: update not signed by a current controller")
        allowed = doc.controller if prev is None else prev.controller
        if not verify_document_proof(doc, allowed):
            raise InvalidProofError(f"{doc.id}: invalid document proof")

    def _consume(self, fh) -> None:
        fh.seek(self._offset)
        data = fh.read()
        # a line still being written by another process has no newline yet
        end = data.rfind(b"\n") + 1
        for line in data[:end].splitlines():
            if line.strip():
                entry = self._entry_from_line(line)
                self._check(entry.document)
                self._append(entry)
        self._offset += end

    def refresh(self) -> None:
        """Pick up revisions appended to the backing file by other writers."""
        if self.path is None:
            return
        with self._lock:
            try:
                with self.path.open("rb") as fh:
                    self._consume(fh)
            except FileNotFoundError:
                pass

    def __len__(self) -> int:
        self.refresh()
        return len(self._entries)

    def __iter__(self) -> Iterator[LedgerEntry]:
        self.refresh()
        return iter(list(self._entries))

    def __contains__(self, did) -> bool:
        self.refresh()
        return Did.parse(did) in self._index

    def latest_version(self, did: Did) -> int:
        self.refresh()
        i = self._index.get(Did.parse(did))
        return 0 if i is None else self._entries[i].version

    def history(self, did: Did) -> list[DidDocument]:
        did = Did.parse(did)
        return [e.document for e in self if e.did == did]

    def publish(self, doc: DidDocument) -> int:
        return publish(self, doc)


def publish(ledger: LedgerStore, doc: DidDocument) -> int:
    """Append ``doc`` to the ledger and return its version.

    Updates must carry version = previous + 1 and be signed by a controller
    of the previous revision; the first revision is signed by one of its own
    controllers.
    """
    with ledger._lock:
        if ledger.path is None:
            ledger._check(doc)
            ledger._append(LedgerEntry(doc.id, doc.version, doc))
            return doc.version
        ledger.path.parent.mkdir(parents=True, exist_ok=True)
        with ledger.path.open("a+b") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                ledger._consume(fh)
                ledger._check(doc)
                line = canonicalize(LedgerEntry(doc.id, doc.version, doc).to_json()) + b"\n"
                fh.seek(0, os.SEEK_END)
                fh.write(line)
                fh.flush()
                ledger._append(LedgerEntry(doc.id, doc.version, doc))
                ledger._offset += len(line)
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)
        return doc.version


def resolve(ledger: LedgerStore, did: Did | str) -> DidDocument:
    did = Did.parse(did)
    ledger.refresh()
    i = ledger._index.get(did)
    if i is None:
        raise NotFoundError(f"{did} not found")
    return ledger._entries[i].document


def replay(entries) -> dict[Did, DidDocument]:
    """Rebuild the latest-version index from a raw entry sequence."""
    index: dict[Did, DidDocument] = {}
    for e in entries:
        index[e.did] = e.document
    return index
