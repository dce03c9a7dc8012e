"""Life of a VDIC, in one process.

A leader creates the cluster, two operators and one DApp get in on the
strength of their linked presentations, data flows through the gateway,
an auditor counts verified operators, then an operator is removed and the
secret rotates under everyone else.

    python3 demos/walkthrough.py
"""

import random

from vdic import cluster as cl
from vdic import lifecycle as lc
from vdic.auditor import audit, render_report
from vdic.credentials import PresentationStore
from vdic.gateway import GatewayError
from vdic.identity import LedgerStore
from vdic.registry import read_registry
from vdic.scenario import Actor, Scenario, new_actor, vetted_actor

rng = random.Random(7)
ledger, store = LedgerStore(), PresentationStore()


def step(title):
    print(f"\n== {title}")


step("actors publish DID documents")
issuer = new_actor(ledger, rng, "issuer")
leader = new_actor(ledger, rng, "leader")
for a in (issuer, leader):
    print(f"{a.name:>8}  {a.did}")

step("leader creates the VDIC")
ctx = lc.create_vdic(ledger, leader.kp, "walkthrough", store, seed=7)
print("vdic     ", ctx.vdic)
print("registry ", read_registry(ledger, ctx.vdic))

step("operators link identity and motive presentations, then apply")
operators: list[Actor] = []
envelopes = {}
for i in range(2):
    op = vetted_actor(ledger, store, issuer, rng, f"operator-{i}")
    decision = lc.process_operator_application(ctx, leader.kp, op.did)
    node = lc.onboard_operator_node(ctx, op.kp, decision.encrypted_config, f"node-{i}", cl.LatencyModel(20, 10))
    operators.append(op)
    envelopes[op.did] = decision.encrypted_config
    print(f"{op.name} accepted={decision.accepted} node={node}")

step("a DApp is admitted and authenticates")
dapp = vetted_actor(ledger, store, issuer, rng, "dapp", motive="dapp_data_source")
access = lc.process_dapp_application(ctx, leader.kp, dapp.did)
sc = Scenario(ledger, store, leader, issuer, ctx, operators, envelopes, [dapp], {dapp.did: access.credential})
token = sc.token(dapp)
print("token claims", token.payload)

step("write through the gateway and wait for every follower")
cid, done = ctx.gateway.write(token, b"hello, decentralized world", wait="all")
print(cid, f"replicated in {done.elapsed_ms:.1f} virtual ms")
print(cl.pin_status(ctx.cluster, cid).to_json())
print("read back:", ctx.gateway.handle_read(token, cid))

step("anyone can audit")
print(render_report(audit(ledger, store, ctx.vdic)).decode())

step("operator-0 is removed; the secret rotates")
_, fresh = lc.remove_operator(ctx, leader.kp, operators[0].did)
try:
    lc.onboard_operator_node(ctx, operators[1].kp, envelopes[operators[1].did], "node-1")
except cl.MembershipError as exc:
    print("old envelope refused:", exc)
(env,) = fresh
lc.onboard_operator_node(ctx, operators[1].kp, env, "node-1")
print("operator-1 rejoined with the new envelope")
try:
    lc.decrypt_config(env, operators[0].kp)
except lc.DecryptionError as exc:
    print("operator-0 cannot open it:", exc)

step("the DApp is revoked")
lc.remove_dapp(ctx, leader.kp, dapp.did)
try:
    sc.token(dapp)
except GatewayError as exc:
    print("authentication refused:", exc)
print(f"decentralization level now {audit(ledger, store, ctx.vdic).decentralization_level}")
