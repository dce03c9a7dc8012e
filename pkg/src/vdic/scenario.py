"""Helpers that assemble actors and whole VDICs with reproducible keys.

Used by the benchmark harness, the demos and the test-suite. Given a seed,
every key, credential id and timestamp is derived deterministically.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from vdic import cluster as cl
from vdic import lifecycle as lc
from vdic.credentials import (
    IDENTITY_CREDENTIAL,
    MOTIVE_CREDENTIAL,
    PresentationStore,
    create_presentation,
    issue_credential,
    link_presentation,
)
from vdic.gateway import GatewayConfig
from vdic.identity import (
    Did,
    DidDocument,
    KeyPair,
    LedgerStore,
    create_did_document,
    did_from_keypair,
    generate_keypair,
    publish,
    resolve,
)

FIXED_TIME = "2024-05-01T12:00:00Z"


@dataclass(frozen=True)
class Actor:
    kp: KeyPair
    did: Did
    name: str = ""

    def document(self, ledger: LedgerStore) -> DidDocument:
        return resolve(ledger, self.did)


def new_actor(ledger: LedgerStore, rng: random.Random | None = None, name: str = "") -> Actor:
    """Create a key pair and publish a self-controlled DID document."""
    kp = generate_keypair(rng.randbytes(32) if rng is not None else None)
    did = did_from_keypair(kp)
    publish(ledger, create_did_document(did, None, kp))
    return Actor(kp, did, name)


def link_claims(
    ledger: LedgerStore,
    store: PresentationStore,
    holder: Actor,
    issuer: Actor,
    identity: dict[str, str] | None = None,
    motive: str | None = "data_availability",
    together: bool = False,
    now: str = FIXED_TIME,
) -> list[str]:
    """Issue identity/motive credentials to ``holder`` and link them as presentations.

    With ``together`` both credentials share one presentation, otherwise each
    gets its own. Returns the store locations.
    """
    creds = []
    if identity is not None:
        creds.append(
            issue_credential(
                issuer.kp, issuer.did, holder.did, [IDENTITY_CREDENTIAL], identity, now,
                credential_id=f"urn:vdic:identity:{holder.did.id}",
            )
        )
    if motive is not None:
        creds.append(
            issue_credential(
                issuer.kp, issuer.did, holder.did, [MOTIVE_CREDENTIAL], {"motive": motive}, now,
                credential_id=f"urn:vdic:motive:{holder.did.id}",
            )
        )
    groups = [creds] if together else [[c] for c in creds]
    locations = []
    for group in groups:
        vp = create_presentation(holder.kp, holder.did, group, nonce="", now=now)
        loc, _ = link_presentation(store, ledger, holder.kp, holder.document(ledger), vp)
        locations.append(loc)
    return locations


def vetted_actor(
    ledger: LedgerStore,
    store: PresentationStore,
    issuer: Actor,
    rng: random.Random | None = None,
    name: str = "",
    motive: str = "data_availability",
) -> Actor:
    actor = new_actor(ledger, rng, name)
    link_claims(ledger, store, actor, issuer, {"name": name or actor.did.id[:8]}, motive)
    return actor


@dataclass
class Scenario:
    ledger: LedgerStore
    store: PresentationStore
    leader: Actor
    issuer: Actor
    ctx: lc.VdicContext
    operators: list[Actor] = field(default_factory=list)
    envelopes: dict[Did, lc.EncryptedConfig] = field(default_factory=dict)
    dapps: list[Actor] = field(default_factory=list)
    access: dict[Did, object] = field(default_factory=dict)

    def token(self, dapp: Actor):
        """Run the challenge/presentation exchange and return a bearer token."""
        gw = self.ctx.gateway
        ch = gw.request_challenge()
        vp = create_presentation(dapp.kp, dapp.did, [self.access[dapp.did]], nonce=ch.nonce)
        return gw.authenticate(vp, ch.nonce)


def build_vdic(
    n_operators: int = 0,
    n_dapps: int = 0,
    seed: int = 0,
    latencies: list[cl.LatencyModel] | None = None,
    leader_latency: cl.LatencyModel | None = None,
    clock=None,
    dapp_scope: str = "readwrite",
    gateway_config: GatewayConfig | None = None,
    now=None,
    ledger: LedgerStore | None = None,
    store: PresentationStore | None = None,
) -> Scenario:
    """Create a VDIC with admitted, onboarded operators and admitted DApps."""
    rng = random.Random(seed)
    ledger = ledger if ledger is not None else LedgerStore()
    store = store if store is not None else PresentationStore()
    issuer = new_actor(ledger, rng, "issuer")
    leader = new_actor(ledger, rng, "leader")
    vdic_kp = generate_keypair(rng.randbytes(32))
    ctx = lc.create_vdic(
        ledger, leader.kp, f"vdic-{seed}", store, vdic_kp=vdic_kp, gateway_config=gateway_config,
        clock=clock, seed=seed, leader_latency=leader_latency, now=now,
    )
    sc = Scenario(ledger, store, leader, issuer, ctx)
    for i in range(n_operators):
        op = vetted_actor(ledger, store, issuer, rng, f"operator-{i}")
        decision = lc.process_operator_application(ctx, leader.kp, op.did)
        if not decision.accepted:
            raise RuntimeError(f"fixture operator rejected: {decision.reasons}")
        latency = latencies[i] if latencies is not None else None
        lc.onboard_operator_node(ctx, op.kp, decision.encrypted_config, f"node-{i}", latency)
        sc.operators.append(op)
        sc.envelopes[op.did] = decision.encrypted_config
    for j in range(n_dapps):
        dapp = vetted_actor(ledger, store, issuer, rng, f"dapp-{j}", motive="dapp_data_source")
        decision = lc.process_dapp_application(ctx, leader.kp, dapp.did, dapp_scope)
        if not decision.accepted:
            raise RuntimeError(f"fixture dapp rejected: {decision.reasons}")
        sc.dapps.append(dapp)
        sc.access[dapp.did] = decision.credential
    return sc
