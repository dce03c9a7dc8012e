"""Leader workflows: create a VDIC, admit and remove node operators and DApps,
distribute encrypted cluster configurations, and switch to public mode."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

from nacl.exceptions import CryptoError
from nacl.public import Box, PrivateKey, PublicKey

from vdic import cluster as cl
from vdic.auditor import PUBLIC_CONFIG_SERVICE_TYPE, audit_operator
from vdic.canonical import b64decode, b64encode, canonicalize, loads_canonical
from vdic.credentials import (
    ACCESS_CREDENTIAL,
    NODE_OPERATOR_CREDENTIAL,
    Credential,
    PresentationStore,
    issue_credential,
)
from vdic.gateway import Gateway, GatewayConfig
from vdic.identity import (
    Did,
    KeyPair,
    LedgerStore,
    NotFoundError,
    ServiceEntry,
    did_from_keypair,
    generate_keypair,
    publish,
    resolve,
    verify_signature,
)
from vdic.registry import Role, init_registry, is_authorized, read_registry, registry_add, registry_remove


class LifecycleError(Exception):
    pass


class DecryptionError(LifecycleError):
    pass


@dataclass
class VdicContext:
    vdic: Did
    vdic_kp: KeyPair
    leader: Did
    name: str
    cluster: cl.ClusterHandle
    gateway: Gateway
    ledger: LedgerStore
    store: PresentationStore
    public_mode: bool = False
    # operator DID -> node ids it runs
    operator_nodes: dict[Did, list[str]] = field(default_factory=dict)

    def admission_policy(self, operator: Did) -> bool:
        if self.public_mode:
            return True
        return is_authorized(self.ledger, self.vdic, operator, Role.NODE_OPERATOR)


@dataclass(frozen=True)
class EncryptedConfig:
    recipient: Did
    ephemeral_public: bytes
    nonce: bytes
    ciphertext: bytes
    sender: Did
    sender_signature: bytes

    def signed_bytes(self) -> bytes:
        # canonical JSON keeps field boundaries unambiguous
        body = self.to_json()
        del body["sender_signature"]
        return canonicalize(body)

    def to_json(self) -> dict:
        return {
            "recipient": str(self.recipient),
            "sender": str(self.sender),
            "ephemeral_public": b64encode(self.ephemeral_public),
            "nonce": b64encode(self.nonce),
            "ciphertext": b64encode(self.ciphertext),
            "sender_signature": b64encode(self.sender_signature),
        }

    @classmethod
    def from_json(cls, data: dict) -> "EncryptedConfig":
        keys = {"recipient", "sender", "ephemeral_public", "nonce", "ciphertext", "sender_signature"}
        if not isinstance(data, dict) or set(data) != keys:
            raise ValueError("malformed encrypted config")
        return cls(
            recipient=Did.parse(data["recipient"]),
            sender=Did.parse(data["sender"]),
            ephemeral_public=b64decode(data["ephemeral_public"]),
            nonce=b64decode(data["nonce"]),
            ciphertext=b64decode(data["ciphertext"]),
            sender_signature=b64decode(data["sender_signature"]),
        )

    def serialize(self) -> bytes:
        return canonicalize(self.to_json())

    @classmethod
    def deserialize(cls, raw: bytes) -> "EncryptedConfig":
        try:
            return cls.from_json(loads_canonical(raw))
        except (UnicodeDecodeError, TypeError) as exc:
            raise ValueError(f"malformed encrypted config: {exc}") from exc


@dataclass(frozen=True)
class AdmissionDecision:
    accepted: bool
    reasons: tuple[str, ...] = ()
    credential: Credential | None = None
    encrypted_config: EncryptedConfig | None = None


def encrypt_config(
    config: cl.ClusterConfig, recipient: Did, recipient_agreement_public: bytes | None, leader_kp: KeyPair
) -> EncryptedConfig:
    """Seal the canonical config bytes to ``recipient`` and sign the envelope.

    A fresh ephemeral X25519 key agrees with the recipient's agreement key;
    the payload is XSalsa20-Poly1305 authenticated.
    """
    if recipient_agreement_public is None or len(recipient_agreement_public) != 32:
        raise LifecycleError(f"{recipient} publishes no key-agreement key")
    eph = PrivateKey.generate()
    nonce = os.urandom(Box.NONCE_SIZE)
    box = Box(eph, PublicKey(recipient_agreement_public))
    ciphertext = box.encrypt(config.serialize(), nonce).ciphertext
    env = EncryptedConfig(
        recipient=Did.parse(recipient),
        ephemeral_public=bytes(eph.public_key),
        nonce=nonce,
        ciphertext=ciphertext,
        sender=did_from_keypair(leader_kp),
        sender_signature=b"",
    )
    return replace(env, sender_signature=leader_kp.sign(env.signed_bytes()))


def decrypt_config(
    enc: EncryptedConfig, recipient_kp: KeyPair, ledger: LedgerStore | None = None, leader: Did | None = None
) -> cl.ClusterConfig:
    """Open an envelope addressed to ``recipient_kp``.

    The sender signature is checked against ``leader`` when given (else the
    envelope's sender); with a ledger the key comes from the sender's
    published document.
    """
    if did_from_keypair(recipient_kp) != enc.recipient:
        raise DecryptionError("envelope is addressed to another recipient")
    sender = Did.parse(leader) if leader is not None else enc.sender
    if enc.sender != sender:
        raise DecryptionError("envelope was not sent by the expected leader")
    if ledger is not None:
        try:
            sender_key = resolve(ledger, sender).signing_key
        except NotFoundError:
            raise DecryptionError(f"sender {sender} does not resolve") from None
    else:
        sender_key = sender.public_key
    if not verify_signature(sender_key, enc.signed_bytes(), enc.sender_signature):
        raise DecryptionError("sender signature does not verify")
    try:
        box = Box(PrivateKey(recipient_kp.agreement_secret), PublicKey(enc.ephemeral_public))
        plaintext = box.decrypt(enc.ciphertext, enc.nonce)
    except (CryptoError, ValueError, TypeError) as exc:
        raise DecryptionError("authentication failed") from exc
    try:
        return cl.ClusterConfig.deserialize(plaintext)
    except ValueError as exc:
        raise DecryptionError(f"plaintext is not a cluster config: {exc}") from exc


def create_vdic(
    ledger: LedgerStore,
    leader_kp: KeyPair,
    name: str,
    store: PresentationStore | None = None,
    vdic_kp: KeyPair | None = None,
    gateway_config: GatewayConfig | None = None,
    clock=None,
    seed: int | None = None,
    leader_latency: cl.LatencyModel | None = None,
    now=None,
) -> VdicContext:
    leader = did_from_keypair(leader_kp)
    vdic_kp = vdic_kp or generate_keypair()
    vdic = did_from_keypair(vdic_kp)
    init_registry(ledger, leader_kp, leader, vdic_kp, vdic)
    config = cl.ClusterConfig(cluster_name=name, secret=cl.generate_secret(), leader_peer=f"{vdic}/leader")
    handle = cl.create_cluster(config, leader, latency=leader_latency, clock=clock, seed=seed)
    gw_kwargs = {} if now is None else {"now": now}
    gateway = Gateway(vdic, vdic_kp, ledger, handle, gateway_config, **gw_kwargs)
    ctx = VdicContext(
        vdic=vdic,
        vdic_kp=vdic_kp,
        leader=leader,
        name=name,
        cluster=handle,
        gateway=gateway,
        ledger=ledger,
        store=store if store is not None else PresentationStore(),
    )
    handle.admission_policy = ctx.admission_policy
    return ctx


def _check_leader(ctx: VdicContext, leader_kp: KeyPair) -> None:
    if did_from_keypair(leader_kp) != ctx.leader:
        raise LifecycleError("only the VDIC leader may do this")


def vet_applicant(ctx: VdicContext, applicant: Did) -> tuple[bool, tuple[str, ...]]:
    """Check the applicant's linked identity and motive presentations."""
    report = audit_operator(ctx.ledger, ctx.store, applicant)
    if not report.resolvable:
        return False, (f"{applicant} does not resolve",)
    reasons = []
    if not report.linked_presentations:
        reasons.append("missing linked verifiable presentations")
    else:
        if not report.identity_verified:
            reasons.append("no verifiable IdentityCredential in linked presentations")
        if not report.motive_verified:
            reasons.append("no verifiable MotiveCredential in linked presentations")
        if reasons:
            reasons.extend(report.failures)
    return not reasons, tuple(reasons)


def process_operator_application(ctx: VdicContext, leader_kp: KeyPair, applicant: Did) -> AdmissionDecision:
    _check_leader(ctx, leader_kp)
    applicant = Did.parse(applicant)
    ok, reasons = vet_applicant(ctx, applicant)
    if not ok:
        return AdmissionDecision(False, reasons)
    agreement = resolve(ctx.ledger, applicant).agreement_key
    if agreement is None:
        return AdmissionDecision(False, (f"{applicant} publishes no key-agreement key",))
    enc = encrypt_config(ctx.cluster.config, applicant, agreement, leader_kp)
    cred = issue_credential(
        leader_kp,
        ctx.leader,
        applicant,
        [NODE_OPERATOR_CREDENTIAL],
        {"vdic": str(ctx.vdic), "role": Role.NODE_OPERATOR.value},
    )
    registry_add(ctx.ledger, leader_kp, ctx.vdic, applicant, Role.NODE_OPERATOR)
    return AdmissionDecision(True, (), cred, enc)


def onboard_operator_node(
    ctx: VdicContext,
    operator_kp: KeyPair,
    enc: EncryptedConfig,
    node_id: str,
    latency: cl.LatencyModel | None = None,
) -> str:
    operator = did_from_keypair(operator_kp)
    config = decrypt_config(enc, operator_kp, ctx.ledger, ctx.leader)
    node_id = cl.join_follower(ctx.cluster, config, operator, node_id, latency)
    nodes = ctx.operator_nodes.setdefault(operator, [])
    if node_id not in nodes:
        nodes.append(node_id)
    return node_id


def process_dapp_application(
    ctx: VdicContext, leader_kp: KeyPair, applicant: Did, scope: str = "readwrite"
) -> AdmissionDecision:
    _check_leader(ctx, leader_kp)
    if scope not in ("read", "readwrite"):
        raise LifecycleError(f"unknown scope {scope!r}")
    applicant = Did.parse(applicant)
    ok, reasons = vet_applicant(ctx, applicant)
    if not ok:
        return AdmissionDecision(False, reasons)
    cred = issue_credential(leader_kp, ctx.leader, applicant, [ACCESS_CREDENTIAL], {"vdic": str(ctx.vdic), "scope": scope})
    registry_add(ctx.ledger, leader_kp, ctx.vdic, applicant, Role.DAPP)
    return AdmissionDecision(True, (), cred, None)


def remove_operator(
    ctx: VdicContext, leader_kp: KeyPair, operator: Did
) -> tuple[cl.ClusterConfig, list[EncryptedConfig]]:
    """Delist ``operator``, evict its nodes, rotate the secret, re-key the rest."""
    _check_leader(ctx, leader_kp)
    operator = Did.parse(operator)
    registry_remove(ctx.ledger, leader_kp, ctx.vdic, operator, Role.NODE_OPERATOR)
    for node in [n for n in ctx.cluster.followers if n.operator == operator]:
        cl.evict_node(ctx.cluster, node.node_id)
    ctx.operator_nodes.pop(operator, None)
    config = cl.rotate_secret(ctx.cluster)
    envelopes = []
    for remaining in read_registry(ctx.ledger, ctx.vdic).node_operators:
        agreement = resolve(ctx.ledger, remaining).agreement_key
        envelopes.append(encrypt_config(config, remaining, agreement, leader_kp))
    return config, envelopes


def remove_dapp(ctx: VdicContext, leader_kp: KeyPair, dapp: Did) -> None:
    _check_leader(ctx, leader_kp)
    registry_remove(ctx.ledger, leader_kp, ctx.vdic, dapp, Role.DAPP)


def publish_config(ctx: VdicContext, leader_kp: KeyPair) -> str:
    """Publish the plaintext cluster config and open follower membership to anyone.

    The location is recorded in a ``VdicClusterConfig`` service entry of the
    VDIC document so that auditors see the VDIC is public.
    """
    _check_leader(ctx, leader_kp)
    location = ctx.store.put(ctx.cluster.config.serialize())
    doc = resolve(ctx.ledger, ctx.vdic)
    entry = ServiceEntry(ctx.vdic.fragment("cluster_config"), PUBLIC_CONFIG_SERVICE_TYPE, (location,))
    services = tuple(s for s in doc.service if s.id != entry.id) + (entry,)
    publish(ctx.ledger, doc.revise(leader_kp, service=services))
    ctx.public_mode = True
    return location


def fetch_public_config(ledger: LedgerStore, store: PresentationStore, vdic: Did) -> cl.ClusterConfig:
    doc = resolve(ledger, vdic)
    entries = doc.services_of_type(PUBLIC_CONFIG_SERVICE_TYPE)
    if not entries:
        raise LifecycleError(f"{vdic} has not published its cluster config")
    return cl.ClusterConfig.deserialize(store.get(entries[0].service_endpoint[0]))


__all__ = [
    "AdmissionDecision",
    "EncryptedConfig",
    "VdicContext",
    "create_vdic",
    "decrypt_config",
    "encrypt_config",
    "fetch_public_config",
    "onboard_operator_node",
    "process_dapp_application",
    "process_operator_application",
    "publish_config",
    "remove_dapp",
    "remove_operator",
]
