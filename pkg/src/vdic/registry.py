"""Trusted Actor Registry stored in the service section of a VDIC DID document.

Two ``LinkedDomains`` service entries, ``<vdic>#node_operators`` and
``<vdic>#dapps``, list the authorized DIDs. Delisting is revocation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from vdic.canonical import canonicalize
from vdic.identity import (
    Did,
    DidDocument,
    IdentityError,
    KeyPair,
    LedgerStore,
    NotFoundError,
    ServiceEntry,
    create_did_document,
    did_from_keypair,
    publish,
    resolve,
    sign_document,
)

REGISTRY_SERVICE_TYPE = "LinkedDomains"


class Role(str, Enum):
    NODE_OPERATOR = "node_operator"
    DAPP = "dapp"

    @property
    def fragment(self) -> str:
        return "node_operators" if self is Role.NODE_OPERATOR else "dapps"


class RegistryError(Exception):
    pass


class DuplicateActorError(RegistryError):
    pass


class NotListedError(RegistryError):
    pass


class NotControllerError(RegistryError):
    pass


@dataclass(frozen=True)
class TrustedActorRegistry:
    vdic: Did
    leader: Did
    node_operators: tuple[Did, ...]
    dapps: tuple[Did, ...]
    version: int

    def members(self, role: Role) -> tuple[Did, ...]:
        return self.node_operators if Role(role) is Role.NODE_OPERATOR else self.dapps

    def to_json(self) -> dict:
        return {
            "vdic": str(self.vdic),
            "node_operators": [str(d) for d in self.node_operators],
            "dapps": [str(d) for d in self.dapps],
            "version": self.version,
        }

    def export(self) -> bytes:
        return canonicalize(self.to_json())


def _registry_entries(vdic: Did, operators=(), dapps=()) -> tuple[ServiceEntry, ...]:
    return (
        ServiceEntry(vdic.fragment(Role.NODE_OPERATOR.fragment), REGISTRY_SERVICE_TYPE, tuple(map(str, operators))),
        ServiceEntry(vdic.fragment(Role.DAPP.fragment), REGISTRY_SERVICE_TYPE, tuple(map(str, dapps))),
    )


def init_registry(
    ledger: LedgerStore, leader_kp: KeyPair, leader: Did, vdic_kp: KeyPair, vdic: Did
) -> DidDocument:
    """Publish the VDIC document, controlled by ``leader``, with an empty registry."""
    leader = Did.parse(leader)
    vdic = Did.parse(vdic)
    if did_from_keypair(leader_kp) != leader:
        raise RegistryError("leader key pair does not match the leader DID")
    try:
        resolve(ledger, leader)
    except NotFoundError:
        raise RegistryError(f"leader {leader} is not published") from None
    doc = create_did_document(vdic, [leader], vdic_kp, signer=leader_kp)
    doc = sign_document(replace(doc, service=_registry_entries(vdic)), leader_kp)
    publish(ledger, doc)
    return doc


def _parse_registry(doc: DidDocument) -> TrustedActorRegistry:
    lists = {}
    for role in Role:
        entry = doc.service_by_id(doc.id.fragment(role.fragment))
        if entry is None or entry.type != REGISTRY_SERVICE_TYPE:
            raise RegistryError(f"{doc.id} has no {role.fragment} registry entry")
        try:
            members = tuple(Did.parse(e) for e in entry.service_endpoint)
        except ValueError as exc:
            raise RegistryError(f"malformed {role.fragment} entry: {exc}") from exc
        if len(set(members)) != len(members):
            raise RegistryError(f"duplicate DIDs in {role.fragment} entry")
        lists[role] = members
    return TrustedActorRegistry(
        vdic=doc.id,
        leader=doc.controller[0],
        node_operators=lists[Role.NODE_OPERATOR],
        dapps=lists[Role.DAPP],
        version=doc.version,
    )


def read_registry(ledger: LedgerStore, vdic: Did) -> TrustedActorRegistry:
    return _parse_registry(resolve(ledger, vdic))


def _update(ledger: LedgerStore, leader_kp: KeyPair, vdic: Did, role: Role, mutate) -> int:
    doc = resolve(ledger, vdic)
    signer = did_from_keypair(leader_kp)
    if signer not in doc.controller:
        raise NotControllerError(f"{signer} does not control {doc.id}")
    reg = _parse_registry(doc)
    role = Role(role)
    members = list(reg.members(role))
    mutate(members)
    ops = members if role is Role.NODE_OPERATOR else reg.node_operators
    dapps = members if role is Role.DAPP else reg.dapps
    fresh = {e.id: e for e in _registry_entries(doc.id, ops, dapps)}
    new_doc = doc.revise(leader_kp, service=tuple(fresh.get(s.id, s) for s in doc.service))
    return publish(ledger, new_doc)


def registry_add(ledger: LedgerStore, leader_kp: KeyPair, vdic: Did, actor: Did, role: Role) -> int:
    actor = Did.parse(actor)
    try:
        resolve(ledger, actor)
    except NotFoundError:
        raise RegistryError(f"{actor} does not resolve") from None

    def add(members):
        if actor in members:
            raise DuplicateActorError(f"{actor} is already listed as {Role(role).value}")
        members.append(actor)

    return _update(ledger, leader_kp, vdic, role, add)


def registry_remove(ledger: LedgerStore, leader_kp: KeyPair, vdic: Did, actor: Did, role: Role) -> int:
    actor = Did.parse(actor)

    def remove(members):
        if actor not in members:
            raise NotListedError(f"{actor} is not listed as {Role(role).value}")
        members.remove(actor)

    return _update(ledger, leader_kp, vdic, role, remove)


def is_authorized(ledger: LedgerStore, vdic: Did, actor: Did, role: Role) -> bool:
    try:
        reg = read_registry(ledger, vdic)
        return Did.parse(actor) in reg.members(Role(role))
    except (IdentityError, RegistryError, ValueError):
        return False
