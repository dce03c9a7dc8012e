import hashlib
import os
import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest

from vdic import auditor
from vdic.cluster import pin_status
from vdic.canonical import canonicalize, loads_strict
from vdic.cli import CliConfig, CliError, Workspace, main
from vdic.credentials import Credential, verify_credential
from vdic.identity import LedgerStore, did_from_keypair, generate_keypair, resolve

NOW = "2024-05-01T12:00:00Z"


@pytest.fixture
def cli(tmp_path, capsys):
    home = tmp_path / "home"

    def run(*args, expect=0):
        code = main(["--home", str(home), *map(str, args)])
        out, err = capsys.readouterr()
        assert code == expect, err
        return out.strip(), err

    run.home = home
    return run


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _vetted(cli, tmp_path, name, motive):
    """Key up an actor and link identity and motive presentations from the issuer."""
    did, _ = cli("keygen", "--name", name, "--publish")
    for kind, claim in (("IdentityCredential", f"name={name}"), ("MotiveCredential", f"motive={motive}")):
        cred = tmp_path / f"{name}-{kind}.json"
        vp = tmp_path / f"{name}-{kind}-vp.json"
        cli("vc", "issue", "--key", "issuer", "--subject", did, "--type", kind, "--claim", claim, "--out", cred)
        cli("vp", "create", "--key", name, "--cred", cred, "--out", vp)
        cli("vp", "link", "--key", name, vp)
    return did


@pytest.fixture
def vdic_home(cli, tmp_path):
    """A home directory with one onboarded operator and one admitted DApp."""
    cli("keygen", "--name", "issuer", "--publish")
    cli("keygen", "--name", "leader", "--publish")
    op = _vetted(cli, tmp_path, "op", "data_availability")
    dapp = _vetted(cli, tmp_path, "dapp", "dapp_data_source")
    vdic, _ = cli("vdic", "create", "--name", "demo", "--key", "leader")
    app = tmp_path / "op-app.json"
    cli("vdic", "operator", "apply", "--vdic", vdic, "--key", "op", "--out", app)
    cli("vdic", "operator", "admit", "--vdic", vdic, "--key", "leader", app, "--out", tmp_path / "op-config.json")
    cli("vdic", "operator", "join", "--vdic", vdic, "--key", "op", "--config", tmp_path / "op-config.json")
    cli("vdic", "dapp", "admit", "--vdic", vdic, "--key", "leader", dapp, "--out", tmp_path / "access.json")
    return vdic, op, dapp


def test_create_then_audit_level_zero(cli):
    cli("keygen", "--name", "leader", "--publish")
    vdic, _ = cli("vdic", "create", "--name", "solo", "--key", "leader")
    out, _ = cli("audit", vdic, "--threshold", "0")
    assert "decentralization level: 0" in out
    cli("audit", vdic, expect=1)


def test_usage_error_exits_two(cli):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["audit"])
    assert exc.value.code == 2


def test_operational_error_exits_one(cli):
    _, err = cli("did", "publish", "--key", "ghost", expect=1)
    assert err.startswith("error:")


def test_keystore_file_mode_and_golden_did(cli):
    seed = bytes(range(32))
    did, _ = cli("keygen", "--name", "k", "--seed-hex", seed.hex())
    assert did == str(did_from_keypair(generate_keypair(seed)))
    key_file = cli.home / "keys" / "k.json"
    assert key_file.stat().st_mode & 0o777 == 0o600
    cli("keygen", "--name", "k", expect=1)
    cli("keygen", "--name", "../escape", expect=1)


def test_resolve_is_canonical_and_matches_library(cli):
    did, _ = cli("keygen", "--name", "a", "--publish")
    out, _ = cli("did", "resolve", did)
    ledger = LedgerStore(cli.home / "ledger.jsonl")
    assert out.encode() == canonicalize(resolve(ledger, did).to_json())


def test_vc_verify_matches_library(cli, tmp_path):
    cli("keygen", "--name", "issuer", "--publish")
    subject, _ = cli("keygen", "--name", "s", "--publish")
    path = tmp_path / "c.json"
    cli("vc", "issue", "--key", "issuer", "--subject", subject, "--type", "X", "--claim", "a=b", "--out", path)
    out, _ = cli("vc", "verify", path)
    direct = verify_credential(Credential.deserialize(path.read_bytes()), LedgerStore(cli.home / "ledger.jsonl"))
    assert out.encode() == canonicalize(direct.to_json())
    raw = bytearray(path.read_bytes())
    raw[raw.index(b'"a":"b"') + 5] = ord("c")
    path.write_bytes(bytes(raw))
    cli("vc", "verify", path, expect=1)


def test_claim_syntax_checked(cli):
    cli("keygen", "--name", "issuer", "--publish")
    subject, _ = cli("keygen", "--name", "s", "--publish")
    _, err = cli("vc", "issue", "--key", "issuer", "--subject", subject, "--type", "X", "--claim", "novalue", expect=1)
    assert "key=value" in err


def test_audit_json_matches_library(cli, vdic_home):
    vdic, op, _ = vdic_home
    out, _ = cli("audit", vdic, "--format", "json", "--now", NOW)
    ws = Workspace(CliConfig.load(str(cli.home)))
    direct = auditor.render_report(auditor.audit(ws.ledger, ws.store, vdic, now=NOW), "json")
    assert out.encode() == direct
    assert canonicalize(loads_strict(out.encode())) == out.encode()
    report = auditor.parse_report(direct)
    assert report.decentralization_level == 1 and str(report.operators[0].did) == op


def test_operator_apply_without_claims_warns(cli, tmp_path):
    cli("keygen", "--name", "leader", "--publish")
    cli("keygen", "--name", "bare", "--publish")
    vdic, _ = cli("vdic", "create", "--name", "v", "--key", "leader")
    _, err = cli("vdic", "operator", "apply", "--vdic", vdic, "--key", "bare", expect=1)
    assert "missing linked verifiable presentations" in err
    bare = str(did_from_keypair(Workspace(CliConfig.load(str(cli.home))).key("bare")))
    _, err = cli("vdic", "operator", "admit", "--vdic", vdic, "--key", "leader", bare, expect=1)
    assert err.startswith("rejected:")


def test_operator_remove_writes_envelopes(cli, vdic_home, tmp_path):
    vdic, op, _ = vdic_home
    second = _vetted(cli, tmp_path, "op2", "support_dapp")
    cli("vdic", "operator", "admit", "--vdic", vdic, "--key", "leader", second, "--out", tmp_path / "c2.json")
    cli("vdic", "operator", "join", "--vdic", vdic, "--key", "op2", "--config", tmp_path / "c2.json")
    out, _ = cli("vdic", "operator", "remove", "--vdic", vdic, "--key", "leader", op, "--out-dir", tmp_path / "env")
    (path,) = out.splitlines()
    assert Path(path).name == f"{second.split(':')[-1]}.json"
    # the old config no longer admits a node
    _, err = cli("vdic", "operator", "join", "--vdic", vdic, "--key", "op2", "--config", tmp_path / "c2.json",
                 "--node-id", "again", expect=1)
    assert err.startswith("error:")
    cli("vdic", "operator", "join", "--vdic", vdic, "--key", "op2", "--config", path, "--node-id", "again")


def test_bench_csv(cli, tmp_path):
    out, _ = cli("bench", "write", "--nodes", "1,3", "--trials", "3", "--size", "256", "--base-ms", "50")
    lines = out.splitlines()
    assert lines[0].startswith("op,") and len(lines) == 3
    cli("bench", "read", "--nodes", "2", "--trials", "2", "--size", "64", "--out", tmp_path / "r.csv")
    assert (tmp_path / "r.csv").exists() and (tmp_path / "r.summary.csv").exists()


def test_config_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("VDIC_TOKEN_TTL_SECONDS", "42")
    assert CliConfig.load(str(tmp_path)).token_ttl_seconds == 42
    monkeypatch.setenv("VDIC_TOKEN_TTL_SECONDS", "0")
    with pytest.raises(CliError):
        CliConfig.load(str(tmp_path))


def _wait_for_port(port: int, proc: subprocess.Popen, timeout: float = 20.0) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if proc.poll() is not None:
            raise RuntimeError(proc.stderr.read().decode())
        try:
            with socket.create_connection(("127.0.0.1", port), timeout=0.2):
                return
        except OSError:
            time.sleep(0.05)
    raise TimeoutError(f"gateway did not listen on {port}")


@pytest.fixture
def served(cli, vdic_home):
    vdic, _, _ = vdic_home
    port = _free_port()
    env = {**os.environ, "PYTHONPATH": str(Path(__file__).resolve().parents[1] / "src")}
    proc = subprocess.Popen(
        [sys.executable, "-m", "vdic.cli", "--home", str(cli.home), "gateway", "serve", "--vdic", vdic,
         "--bind", f"127.0.0.1:{port}"],
        env=env, stdout=subprocess.PIPE, stderr=subprocess.PIPE,
    )
    try:
        _wait_for_port(port, proc)
        yield f"http://127.0.0.1:{port}"
    finally:
        proc.terminate()
        proc.wait(timeout=10)


def test_happy_path_over_http(cli, vdic_home, served, tmp_path):
    vdic, _, dapp = vdic_home
    payload = os.urandom(100 * 1024)
    (tmp_path / "in.bin").write_bytes(payload)
    auth = ["--gateway", served, "--key", "dapp", "--cred", tmp_path / "access.json"]
    cid, _ = cli("client", "put", *auth, tmp_path / "in.bin", "--wait", "all")
    assert cid == "cidv0-sha256:" + hashlib.sha256(payload).hexdigest()
    cli("client", "get", *auth, cid, "--out", tmp_path / "out.bin")
    assert (tmp_path / "out.bin").read_bytes() == payload
    # a saved token works on its own
    cli("client", "auth", *auth, "--out", tmp_path / "token")
    cli("client", "get", "--gateway", served, "--token-file", tmp_path / "token", cid, "--out", tmp_path / "o2")
    assert (tmp_path / "o2").read_bytes() == payload
    # the gateway persisted the write, so the snapshot shows it on every node
    ws = Workspace(CliConfig.load(str(cli.home)))
    assert pin_status(ws.load_vdic(vdic).cluster, cid).fully_pinned
    out, _ = cli("audit", vdic)
    assert "decentralization level: 1" in out


def test_revoked_dapp_put_surfaces_403(cli, vdic_home, served, tmp_path):
    vdic, _, dapp = vdic_home
    (tmp_path / "x").write_bytes(b"hello")
    auth = ["--gateway", served, "--key", "dapp", "--cred", tmp_path / "access.json"]
    cli("client", "put", *auth, tmp_path / "x")
    cli("vdic", "dapp", "remove", "--vdic", vdic, "--key", "leader", dapp)
    _, err = cli("client", "put", *auth, tmp_path / "x", expect=1)
    assert "403" in err and "revoked" in err


def test_client_without_credentials(cli, vdic_home, served, tmp_path):
    (tmp_path / "x").write_bytes(b"x")
    _, err = cli("client", "put", "--gateway", served, tmp_path / "x", expect=1)
    assert "--token-file" in err
    (tmp_path / "tok").write_text("not.a.token")
    _, err = cli("client", "get", "--gateway", served, "--token-file", tmp_path / "tok", "cid", expect=1)
    assert "401" in err
