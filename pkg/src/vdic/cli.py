"""``vdic`` command-line tool.

State lives in a home directory (``--home`` or ``VDIC_HOME``, default
``./.vdic``)::

    ledger.jsonl        simulated public ledger
    store/              linked presentations and published configs
    keys/<name>.json    key seeds, mode 0600
    vdics/<id>/         per-VDIC metadata and cluster snapshot

Exit codes: 0 success, 1 operational failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from vdic import auditor, bench, lifecycle as lc
from vdic import cluster as cl
from vdic.canonical import canonicalize, loads_strict
from vdic.credentials import (
    Credential,
    Presentation,
    PresentationStore,
    create_presentation,
    issue_credential,
    link_presentation,
    verify_credential,
    verify_presentation,
)
from vdic.gateway import Gateway, GatewayConfig, GatewayError, create_app
from vdic.identity import (
    Did,
    KeyPair,
    LedgerStore,
    create_did_document,
    did_from_keypair,
    generate_keypair,
    publish,
    resolve,
)
from vdic.registry import Role


class CliError(Exception):
    pass


@dataclass
class CliConfig:
    home: Path
    ledger_path: Path
    presentation_store_path: Path
    keystore_path: Path
    gateway_bind: str = "127.0.0.1:8080"
    token_ttl_seconds: int = 300
    max_body_bytes: int = 8 * 1024 * 1024

    @classmethod
    def load(cls, home: str | None) -> "CliConfig":
        home = Path(home or os.environ.get("VDIC_HOME", ".vdic"))
        values: dict = {}
        cfg_file = home / "config.json"
        if cfg_file.exists():
            values.update(json.loads(cfg_file.read_text()))
        for f in fields(cls):
            env = os.environ.get(f"VDIC_{f.name.upper()}")
            if env is not None:
                values[f.name] = env
        values.pop("home", None)
        cfg = cls(
            home=home,
            ledger_path=Path(values.pop("ledger_path", home / "ledger.jsonl")),
            presentation_store_path=Path(values.pop("presentation_store_path", home / "store")),
            keystore_path=Path(values.pop("keystore_path", home / "keys")),
            gateway_bind=str(values.pop("gateway_bind", "127.0.0.1:8080")),
            token_ttl_seconds=int(values.pop("token_ttl_seconds", 300)),
            max_body_bytes=int(values.pop("max_body_bytes", 8 * 1024 * 1024)),
        )
        if cfg.token_ttl_seconds <= 0:
            raise CliError("token_ttl_seconds must be positive")
        return cfg


class Workspace:
    def __init__(self, cfg: CliConfig):
        self.cfg = cfg
        cfg.home.mkdir(parents=True, exist_ok=True)
        self.ledger = LedgerStore(cfg.ledger_path)
        self.store = PresentationStore(cfg.presentation_store_path)

    # keys
    def _key_file(self, name: str) -> Path:
        if not name or "/" in name or name.startswith("."):
            raise CliError(f"bad key name {name!r}")
        return self.cfg.keystore_path / f"{name}.json"

    def save_key(self, name: str, kp: KeyPair) -> Path:
        path = self._key_file(name)
        if path.exists():
            raise CliError(f"key {name!r} already exists")
        self.cfg.keystore_path.mkdir(parents=True, exist_ok=True)
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
        with os.fdopen(fd, "w") as fh:
            json.dump({"did": str(did_from_keypair(kp)), "seed": kp.signing_secret.hex()}, fh)
        return path

    def key(self, name: str) -> KeyPair:
        path = self._key_file(name)
        if not path.exists():
            raise CliError(f"no key named {name!r}")
        return generate_keypair(bytes.fromhex(json.loads(path.read_text())["seed"]))

    # vdics
    def vdic_dir(self, vdic: Did) -> Path:
        return self.cfg.home / "vdics" / Did.parse(vdic).id

    def gateway_config(self) -> GatewayConfig:
        return GatewayConfig(token_ttl=self.cfg.token_ttl_seconds, max_body_bytes=self.cfg.max_body_bytes)

    def load_vdic(self, vdic: str) -> lc.VdicContext:
        vdic = Did.parse(vdic)
        d = self.vdic_dir(vdic)
        if not (d / "vdic.json").exists():
            raise CliError(f"{vdic} is not managed in this home directory")
        meta = json.loads((d / "vdic.json").read_text())
        vdic_kp = self.key(meta["vdic_key"])
        handle = cl.load_cluster(d / "cluster")
        doc = resolve(self.ledger, vdic)
        ctx = lc.VdicContext(
            vdic=vdic,
            vdic_kp=vdic_kp,
            leader=doc.controller[0],
            name=meta["name"],
            cluster=handle,
            gateway=Gateway(vdic, vdic_kp, self.ledger, handle, self.gateway_config()),
            ledger=self.ledger,
            store=self.store,
            public_mode=bool(doc.services_of_type(auditor.PUBLIC_CONFIG_SERVICE_TYPE)),
        )
        for node in handle.followers:
            ctx.operator_nodes.setdefault(node.operator, []).append(node.node_id)
        handle.admission_policy = ctx.admission_policy
        return ctx

    def save_vdic(self, ctx: lc.VdicContext, vdic_key: str | None = None) -> None:
        d = self.vdic_dir(ctx.vdic)
        d.mkdir(parents=True, exist_ok=True)
        meta_file = d / "vdic.json"
        if vdic_key is not None:
            meta_file.write_text(json.dumps({"vdic": str(ctx.vdic), "name": ctx.name, "vdic_key": vdic_key}))
        ctx.cluster.wait_quiescent()
        cl.save_cluster(ctx.cluster, d / "cluster")


def _out(data, path: str | None = None) -> None:
    raw = data if isinstance(data, bytes) else canonicalize(data)
    if path:
        Path(path).write_bytes(raw)
    else:
        sys.stdout.write(raw.decode("utf-8") + "\n")


def _read_json(path: str):
    return loads_strict(Path(path).read_bytes())


# handlers


def cmd_keygen(ws: Workspace, a) -> int:
    kp = generate_keypair(bytes.fromhex(a.seed_hex) if a.seed_hex else None)
    ws.save_key(a.name, kp)
    did = did_from_keypair(kp)
    if a.publish:
        publish(ws.ledger, create_did_document(did, None, kp))
    print(did)
    return 0


def cmd_did_publish(ws: Workspace, a) -> int:
    kp = ws.key(a.key)
    did = did_from_keypair(kp)
    print(publish(ws.ledger, create_did_document(did, None, kp)))
    return 0


def cmd_did_resolve(ws: Workspace, a) -> int:
    _out(resolve(ws.ledger, a.did).to_json())
    return 0


def cmd_vc_issue(ws: Workspace, a) -> int:
    kp = ws.key(a.key)
    claims = {}
    for c in a.claim or []:
        k, sep, v = c.partition("=")
        if not sep:
            raise CliError(f"claim must be key=value: {c!r}")
        claims[k] = v
    cred = issue_credential(kp, did_from_keypair(kp), Did.parse(a.subject), a.type, claims)
    _out(cred.serialize(), a.out)
    return 0


def cmd_vc_verify(ws: Workspace, a) -> int:
    result = verify_credential(Credential.deserialize(Path(a.file).read_bytes()), ws.ledger)
    _out(result.to_json())
    return 0 if result.valid else 1


def cmd_vp_create(ws: Workspace, a) -> int:
    kp = ws.key(a.key)
    creds = [Credential.deserialize(Path(f).read_bytes()) for f in a.cred]
    vp = create_presentation(kp, did_from_keypair(kp), creds, nonce=a.nonce or "")
    _out(vp.serialize(), a.out)
    return 0


def cmd_vp_verify(ws: Workspace, a) -> int:
    result = verify_presentation(Presentation.deserialize(Path(a.file).read_bytes()), ws.ledger, a.nonce)
    _out(result.to_json())
    return 0 if result.valid else 1


def cmd_vp_link(ws: Workspace, a) -> int:
    kp = ws.key(a.key)
    vp = Presentation.deserialize(Path(a.file).read_bytes())
    doc = resolve(ws.ledger, did_from_keypair(kp))
    location, version = link_presentation(ws.store, ws.ledger, kp, doc, vp)
    print(location)
    return 0


def cmd_vdic_create(ws: Workspace, a) -> int:
    leader_kp = ws.key(a.key)
    vdic_kp = generate_keypair()
    vdic_key = f"vdic-{did_from_keypair(vdic_kp).id}"
    ws.save_key(vdic_key, vdic_kp)
    ctx = lc.create_vdic(ws.ledger, leader_kp, a.name, ws.store, vdic_kp=vdic_kp, gateway_config=ws.gateway_config())
    ws.save_vdic(ctx, vdic_key)
    print(ctx.vdic)
    return 0


def cmd_apply(ws: Workspace, a, role: Role) -> int:
    kp = ws.key(a.key)
    applicant = did_from_keypair(kp)
    ctx = ws.load_vdic(a.vdic)
    ok, reasons = lc.vet_applicant(ctx, applicant)
    application = {"vdic": str(ctx.vdic), "applicant": str(applicant), "role": role.value}
    if role is Role.DAPP:
        application["scope"] = a.scope
    _out(application, a.out)
    for r in reasons:
        print(f"warning: {r}", file=sys.stderr)
    return 0 if ok else 1


def _applicant(a, role: Role) -> tuple[Did, dict]:
    if a.application.startswith("did:"):
        return Did.parse(a.application), {}
    app = _read_json(a.application)
    if app.get("role") != role.value:
        raise CliError(f"application is for role {app.get('role')!r}")
    return Did.parse(app["applicant"]), app


def _report_decision(decision: lc.AdmissionDecision) -> int:
    if not decision.accepted:
        for r in decision.reasons:
            print(f"rejected: {r}", file=sys.stderr)
        return 1
    return 0


def cmd_operator_admit(ws: Workspace, a) -> int:
    ctx = ws.load_vdic(a.vdic)
    applicant, _ = _applicant(a, Role.NODE_OPERATOR)
    decision = lc.process_operator_application(ctx, ws.key(a.key), applicant)
    if decision.accepted:
        _out(decision.encrypted_config.serialize(), a.out)
        if a.credential_out:
            _out(decision.credential.serialize(), a.credential_out)
    return _report_decision(decision)


def cmd_operator_join(ws: Workspace, a) -> int:
    ctx = ws.load_vdic(a.vdic)
    enc = lc.EncryptedConfig.deserialize(Path(a.config).read_bytes())
    kp = ws.key(a.key)
    node_id = a.node_id or f"node-{did_from_keypair(kp).id[:12]}"
    print(lc.onboard_operator_node(ctx, kp, enc, node_id))
    ws.save_vdic(ctx)
    return 0


def cmd_operator_remove(ws: Workspace, a) -> int:
    ctx = ws.load_vdic(a.vdic)
    _, envelopes = lc.remove_operator(ctx, ws.key(a.key), Did.parse(a.did))
    ws.save_vdic(ctx)
    out_dir = Path(a.out_dir) if a.out_dir else ws.vdic_dir(ctx.vdic) / "envelopes"
    out_dir.mkdir(parents=True, exist_ok=True)
    for env in envelopes:
        path = out_dir / f"{env.recipient.id}.json"
        path.write_bytes(env.serialize())
        print(path)
    return 0


def cmd_dapp_admit(ws: Workspace, a) -> int:
    ctx = ws.load_vdic(a.vdic)
    applicant, app = _applicant(a, Role.DAPP)
    scope = a.scope or app.get("scope", "readwrite")
    decision = lc.process_dapp_application(ctx, ws.key(a.key), applicant, scope)
    if decision.accepted:
        _out(decision.credential.serialize(), a.out)
    return _report_decision(decision)


def cmd_dapp_remove(ws: Workspace, a) -> int:
    ctx = ws.load_vdic(a.vdic)
    lc.remove_dapp(ctx, ws.key(a.key), Did.parse(a.did))
    return 0


def cmd_publish_config(ws: Workspace, a) -> int:
    ctx = ws.load_vdic(a.vdic)
    print(lc.publish_config(ctx, ws.key(a.key)))
    return 0


def _split_bind(bind: str) -> tuple[str, int]:
    host, _, port = bind.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_gateway_serve(ws: Workspace, a) -> int:
    import uvicorn

    ctx = ws.load_vdic(a.vdic)
    app = create_app(ctx.gateway, on_write=lambda: ws.save_vdic(ctx))
    host, port = _split_bind(a.bind or ws.cfg.gateway_bind)
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


def _http_error(resp) -> CliError:
    try:
        body = resp.json()
        msg = f"{resp.status_code} {body.get('error')}: {body.get('detail', '')}"
    except ValueError:
        msg = f"{resp.status_code} {resp.text}"
    return CliError(msg)


def _client_token(ws: Workspace, a, client) -> str:
    if a.token_file:
        return Path(a.token_file).read_text().strip()
    if not (a.key and a.cred):
        raise CliError("give --token-file, or --key and --cred to authenticate")
    kp = ws.key(a.key)
    cred = Credential.deserialize(Path(a.cred).read_bytes())
    r = client.post("/auth/challenge")
    if r.status_code != 200:
        raise _http_error(r)
    vp = create_presentation(kp, did_from_keypair(kp), [cred], nonce=r.json()["nonce"])
    r = client.post("/auth/token", content=vp.serialize())
    if r.status_code != 200:
        raise _http_error(r)
    return r.json()["token"]


def _client(a):
    import httpx

    return httpx.Client(base_url=a.gateway, timeout=30)


def cmd_client_auth(ws: Workspace, a) -> int:
    with _client(a) as client:
        token = _client_token(ws, a, client)
    if a.out:
        Path(a.out).write_text(token)
    else:
        print(token)
    return 0


def cmd_client_put(ws: Workspace, a) -> int:
    with _client(a) as client:
        token = _client_token(ws, a, client)
        body = sys.stdin.buffer.read() if a.file == "-" else Path(a.file).read_bytes()
        r = client.post("/data", params={"wait": a.wait}, content=body, headers={"Authorization": f"Bearer {token}"})
    if r.status_code != 200:
        raise _http_error(r)
    print(r.json()["cid"])
    return 0


def cmd_client_get(ws: Workspace, a) -> int:
    with _client(a) as client:
        token = _client_token(ws, a, client)
        r = client.get(f"/data/{a.cid}", headers={"Authorization": f"Bearer {token}"})
    if r.status_code != 200:
        raise _http_error(r)
    if a.out:
        Path(a.out).write_bytes(r.content)
    else:
        sys.stdout.buffer.write(r.content)
    return 0


def cmd_audit(ws: Workspace, a) -> int:
    report = auditor.audit(ws.ledger, ws.store, Did.parse(a.vdic), now=a.now)
    raw = auditor.render_report(report, a.format)
    sys.stdout.write(raw.decode("utf-8") + ("\n" if a.format == "json" else ""))
    return 0 if report.decentralization_level >= a.threshold else 1


def cmd_bench(ws: Workspace, a) -> int:
    nodes = tuple(int(n) for n in a.nodes.split(","))
    config = bench.BenchConfig(
        node_counts=nodes,
        file_size_bytes=a.size,
        trials=a.trials,
        per_node_latency=cl.LatencyModel(a.base_ms, a.jitter_ms),
        leader_latency=cl.LatencyModel(a.read_base_ms, a.read_jitter_ms),
        seed=a.seed,
        clock=a.clock,
    )
    run = bench.run_write_benchmark if a.op == "write" else bench.run_read_benchmark
    samples = run(config)
    text = bench.samples_csv(samples)
    if a.out:
        Path(a.out).write_text(text)
        Path(a.out).with_suffix(".summary.csv").write_text(bench.summary_csv(bench.summarize(samples)))
    else:
        sys.stdout.write(bench.summary_csv(bench.summarize(samples)))
    failed = [s for s in samples if s.error]
    for s in failed:
        print(f"sample {s.op}/{s.node_count}/{s.trial} failed: {s.error}", file=sys.stderr)
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vdic", description="Verifiable decentralized IPFS cluster tooling")
    p.add_argument("--home", help="state directory (default $VDIC_HOME or ./.vdic)")
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("keygen", help="create a key pair")
    k.add_argument("--name", required=True)
    k.add_argument("--seed-hex")
    k.add_argument("--publish", action="store_true", help="also publish a DID document")
    k.set_defaults(fn=cmd_keygen)

    did = sub.add_parser("did").add_subparsers(dest="did_cmd", required=True)
    d = did.add_parser("publish")
    d.add_argument("--key", required=True)
    d.set_defaults(fn=cmd_did_publish)
    d = did.add_parser("resolve")
    d.add_argument("did")
    d.set_defaults(fn=cmd_did_resolve)

    vc = sub.add_parser("vc").add_subparsers(dest="vc_cmd", required=True)
    c = vc.add_parser("issue")
    c.add_argument("--key", required=True)
    c.add_argument("--subject", required=True)
    c.add_argument("--type", action="append", required=True)
    c.add_argument("--claim", action="append")
    c.add_argument("--out")
    c.set_defaults(fn=cmd_vc_issue)
    c = vc.add_parser("verify")
    c.add_argument("file")
    c.set_defaults(fn=cmd_vc_verify)

    vp = sub.add_parser("vp").add_subparsers(dest="vp_cmd", required=True)
    c = vp.add_parser("create")
    c.add_argument("--key", required=True)
    c.add_argument("--cred", action="append", required=True)
    c.add_argument("--nonce")
    c.add_argument("--out")
    c.set_defaults(fn=cmd_vp_create)
    c = vp.add_parser("verify")
    c.add_argument("file")
    c.add_argument("--nonce")
    c.set_defaults(fn=cmd_vp_verify)
    c = vp.add_parser("link")
    c.add_argument("--key", required=True)
    c.add_argument("file")
    c.set_defaults(fn=cmd_vp_link)

    v = sub.add_parser("vdic").add_subparsers(dest="vdic_cmd", required=True)
    c = v.add_parser("create")
    c.add_argument("--name", required=True)
    c.add_argument("--key", required=True, help="leader key")
    c.set_defaults(fn=cmd_vdic_create)
    c = v.add_parser("publish-config")
    c.add_argument("--vdic", required=True)
    c.add_argument("--key", required=True)
    c.set_defaults(fn=cmd_publish_config)

    op = v.add_parser("operator").add_subparsers(dest="op_cmd", required=True)
    c = op.add_parser("apply")
    c.add_argument("--vdic", required=True)
    c.add_argument("--key", required=True)
    c.add_argument("--out")
    c.set_defaults(fn=lambda ws, a: cmd_apply(ws, a, Role.NODE_OPERATOR))
    c = op.add_parser("admit")
    c.add_argument("--vdic", required=True)
    c.add_argument("--key", required=True)
    c.add_argument("application", help="application file or applicant DID")
    c.add_argument("--out")
    c.add_argument("--credential-out")
    c.set_defaults(fn=cmd_operator_admit)
    c = op.add_parser("join")
    c.add_argument("--vdic", required=True)
    c.add_argument("--key", required=True)
    c.add_argument("--config", required=True)
    c.add_argument("--node-id")
    c.set_defaults(fn=cmd_operator_join)
    c = op.add_parser("remove")
    c.add_argument("--vdic", required=True)
    c.add_argument("--key", required=True)
    c.add_argument("did")
    c.add_argument("--out-dir")
    c.set_defaults(fn=cmd_operator_remove)

    dp = v.add_parser("dapp").add_subparsers(dest="dapp_cmd", required=True)
    c = dp.add_parser("apply")
    c.add_argument("--vdic", required=True)
    c.add_argument("--key", required=True)
    c.add_argument("--scope", choices=["read", "readwrite"], default="readwrite")
    c.add_argument("--out")
    c.set_defaults(fn=lambda ws, a: cmd_apply(ws, a, Role.DAPP))
    c = dp.add_parser("admit")
    c.add_argument("--vdic", required=True)
    c.add_argument("--key", required=True)
    c.add_argument("application", help="application file or applicant DID")
    c.add_argument("--scope", choices=["read", "readwrite"])
    c.add_argument("--out")
    c.set_defaults(fn=cmd_dapp_admit)
    c = dp.add_parser("remove")
    c.add_argument("--vdic", required=True)
    c.add_argument("--key", required=True)
    c.add_argument("did")
    c.set_defaults(fn=cmd_dapp_remove)

    g = sub.add_parser("gateway").add_subparsers(dest="gw_cmd", required=True)
    c = g.add_parser("serve")
    c.add_argument("--vdic", required=True)
    c.add_argument("--bind")
    c.set_defaults(fn=cmd_gateway_serve)

    cli = sub.add_parser("client").add_subparsers(dest="client_cmd", required=True)
    for name, fn in (("auth", cmd_client_auth), ("put", cmd_client_put), ("get", cmd_client_get)):
        c = cli.add_parser(name)
        c.add_argument("--gateway", default="http://127.0.0.1:8080")
        c.add_argument("--token-file")
        c.add_argument("--key")
        c.add_argument("--cred", help="access credential file")
        if name == "put":
            c.add_argument("file", help="file to upload, or - for stdin")
            c.add_argument("--wait", choices=["leader", "all"], default="leader")
        elif name == "get":
            c.add_argument("cid")
            c.add_argument("--out")
        else:
            c.add_argument("--out")
        c.set_defaults(fn=fn)

    au = sub.add_parser("audit")
    au.add_argument("vdic")
    au.add_argument("--threshold", type=int, default=1)
    au.add_argument("--format", choices=["json", "text"], default="text")
    au.add_argument("--now", help="fixed report timestamp")
    au.set_defaults(fn=cmd_audit)

    b = sub.add_parser("bench")
    b.add_argument("op", choices=["read", "write"])
    b.add_argument("--nodes", default="1,5,10,15")
    b.add_argument("--size", type=int, default=102400)
    b.add_argument("--trials", type=int, default=30)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--clock", choices=["virtual", "real"], default="virtual")
    b.add_argument("--base-ms", type=float, default=0.0)
    b.add_argument("--jitter-ms", type=float, default=0.0)
    b.add_argument("--read-base-ms", type=float, default=0.0)
    b.add_argument("--read-jitter-ms", type=float, default=0.0)
    b.add_argument("--out")
    b.set_defaults(fn=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        ws = Workspace(CliConfig.load(args.home))
        return args.fn(ws, args)
    except (CliError, GatewayError, lc.LifecycleError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - operational failures map to exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
