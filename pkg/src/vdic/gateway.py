"""Credential-gated gateway in front of the leader's cluster node.

DApps fetch a challenge nonce, present their access credential inside a
presentation bound to that nonce, and receive a short-lived EdDSA JWT signed
with the VDIC key. Reads and writes then only need the bearer token.
Revocation (registry delisting) is checked when the token is issued.
"""

from __future__ import annotations

import os
import threading
import time
import uuid
from dataclasses import dataclass
from typing import Callable

import jwt
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from fastapi import FastAPI, Header, Request
from fastapi.responses import JSONResponse, Response

from vdic import cluster as cl
from vdic.canonical import b64url_decode, loads_strict
from vdic.credentials import ACCESS_CREDENTIAL, Presentation, verify_presentation
from vdic.identity import Did, KeyPair, LedgerStore, NotFoundError, resolve
from vdic.registry import Role, is_authorized

TOKEN_HEADER = {"alg": "EdDSA", "typ": "JWT"}
SCOPES = ("read", "readwrite")
DEFAULT_TOKEN_TTL = 300
DEFAULT_CHALLENGE_TTL = 60
DEFAULT_MAX_BODY = 8 * 1024 * 1024


class GatewayError(Exception):
    """Request failure carrying an HTTP status and a short machine code."""

    def __init__(self, status: int, code: str, detail: str = ""):
        super().__init__(f"{status} {code}: {detail}" if detail else f"{status} {code}")
        self.status = status
        self.code = code
        self.detail = detail


@dataclass(frozen=True)
class GatewayConfig:
    token_ttl: int = DEFAULT_TOKEN_TTL
    challenge_ttl: int = DEFAULT_CHALLENGE_TTL
    max_body_bytes: int = DEFAULT_MAX_BODY

    def __post_init__(self):
        if self.token_ttl <= 0 or self.challenge_ttl <= 0:
            raise ValueError("ttl values must be positive")


@dataclass(frozen=True)
class AuthChallenge:
    nonce: str
    issued_at: int
    ttl: int

    def to_json(self) -> dict:
        return {"nonce": self.nonce, "ttl": self.ttl}


@dataclass(frozen=True)
class AccessToken:
    encoded: str
    payload: dict

    @property
    def header(self) -> dict:
        return dict(TOKEN_HEADER)

    @property
    def signature(self) -> bytes:
        return b64url_decode(self.encoded.rsplit(".", 1)[1])

    def __str__(self) -> str:
        return self.encoded


def _private_key(kp: KeyPair) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(kp.signing_secret)


def sign_token(kp: KeyPair, payload: dict) -> str:
    return jwt.encode(payload, _private_key(kp), algorithm="EdDSA", headers={"typ": "JWT"})


def decode_token(token: str, public_key: bytes, issuer: Did, now: float) -> dict:
    """Verify an access token and return its payload.

    Every segment must be canonical base64url so that no two token strings
    carry the same signed content. The expiry boundary is exclusive.
    """
    if not isinstance(token, str):
        raise GatewayError(401, "malformed-token")
    parts = token.split(".")
    if len(parts) != 3:
        raise GatewayError(401, "malformed-token", "expected three segments")
    try:
        header = loads_strict(b64url_decode(parts[0]))
        b64url_decode(parts[2])
    except (ValueError, UnicodeDecodeError):
        raise GatewayError(401, "malformed-token", "bad encoding") from None
    if header != TOKEN_HEADER:
        raise GatewayError(401, "malformed-token", "unexpected header")
    try:
        payload = jwt.decode(
            token,
            Ed25519PublicKey.from_public_bytes(public_key),
            algorithms=["EdDSA"],
            options={"verify_exp": False, "verify_iat": False, "verify_nbf": False, "verify_aud": False},
        )
    except jwt.InvalidSignatureError:
        raise GatewayError(401, "bad-signature") from None
    except jwt.PyJWTError as exc:
        raise GatewayError(401, "malformed-token", str(exc)) from None
    # the signed payload bytes must also be the canonical spelling
    try:
        loads_strict(b64url_decode(parts[1]))
    except (ValueError, UnicodeDecodeError):
        raise GatewayError(401, "malformed-token", "bad payload encoding") from None
    expected = {"iss", "sub", "scope", "iat", "exp", "jti"}
    if set(payload) != expected:
        raise GatewayError(401, "malformed-token", "unexpected claims")
    if payload["iss"] != str(issuer):
        raise GatewayError(401, "bad-issuer")
    if payload["scope"] not in SCOPES:
        raise GatewayError(401, "malformed-token", "unknown scope")
    if not all(isinstance(payload[k], int) for k in ("iat", "exp")):
        raise GatewayError(401, "malformed-token", "non-integer timestamps")
    if not now < payload["exp"]:
        raise GatewayError(401, "expired")
    return payload


class Gateway:
    """Single gateway for one VDIC.

    ``now`` returns unix seconds and can be replaced for tests.
    """

    def __init__(
        self,
        vdic: Did,
        vdic_kp: KeyPair,
        ledger: LedgerStore,
        cluster: cl.ClusterHandle,
        config: GatewayConfig | None = None,
        now: Callable[[], float] = time.time,
    ):
        self.vdic = Did.parse(vdic)
        self.vdic_kp = vdic_kp
        self.ledger = ledger
        self.cluster = cluster
        self.config = config or GatewayConfig()
        self.now = now
        self._challenges: dict[str, AuthChallenge] = {}
        self._lock = threading.Lock()

    def request_challenge(self) -> AuthChallenge:
        ch = AuthChallenge(os.urandom(16).hex(), int(self.now()), self.config.challenge_ttl)
        with self._lock:
            self._challenges[ch.nonce] = ch
        return ch

    def _consume(self, nonce: str) -> None:
        with self._lock:
            ch = self._challenges.pop(nonce, None)
            # drop anything stale while we are here
            cutoff = self.now()
            for k in [k for k, c in self._challenges.items() if cutoff - c.issued_at >= c.ttl]:
                del self._challenges[k]
        if ch is None:
            raise GatewayError(401, "bad-nonce", "unknown or already used challenge")
        if self.now() - ch.issued_at >= ch.ttl:
            raise GatewayError(401, "bad-nonce", "challenge expired")

    def _leader(self) -> Did:
        try:
            return resolve(self.ledger, self.vdic).controller[0]
        except NotFoundError:
            raise GatewayError(503, "vdic-unresolvable") from None

    def authenticate(self, vp: Presentation, nonce: str) -> AccessToken:
        self._consume(nonce)
        result = verify_presentation(vp, self.ledger, expected_nonce=nonce)
        if not result.valid:
            detail = "; ".join(f"{c}: {d}" for c, d in result.failures)
            raise GatewayError(401, "invalid-presentation", detail)
        leader = self._leader()
        access = [
            c
            for c in vp.credentials
            if c.has_type(ACCESS_CREDENTIAL) and c.issuer == leader and c.claims.get("vdic") == str(self.vdic)
        ]
        if not access:
            raise GatewayError(403, "wrong-issuer", "no access credential issued by this VDIC's leader")
        if not is_authorized(self.ledger, self.vdic, vp.holder, Role.DAPP):
            raise GatewayError(403, "revoked", f"{vp.holder} is not listed in the Trusted Actor Registry")
        scope = access[0].claims.get("scope")
        if scope not in SCOPES:
            raise GatewayError(403, "bad-scope", f"unknown scope {scope!r}")
        iat = int(self.now())
        payload = {
            "iss": str(self.vdic),
            "sub": str(vp.holder),
            "scope": scope,
            "iat": iat,
            "exp": iat + self.config.token_ttl,
            "jti": uuid.uuid4().hex,
        }
        return AccessToken(sign_token(self.vdic_kp, payload), payload)

    def verify_token(self, token: AccessToken | str) -> dict:
        return decode_token(str(token), self.vdic_kp.signing_public, self.vdic, self.now())

    def write(self, token, content: bytes, wait: str = "leader") -> tuple[cl.Cid, cl.Completion]:
        payload = self.verify_token(token)
        if payload["scope"] != "readwrite":
            raise GatewayError(403, "read-only", "token scope does not allow writes")
        if len(content) > self.config.max_body_bytes:
            raise GatewayError(413, "payload-too-large", f"limit is {self.config.max_body_bytes} bytes")
        if wait not in ("leader", "all"):
            raise GatewayError(400, "bad-request", "wait must be 'leader' or 'all'")
        cid, completion = cl.add_and_pin(self.cluster, content)
        if wait == "all":
            completion.wait()
        return cid, completion

    def handle_write(self, token, content: bytes, wait: str = "leader") -> cl.Cid:
        return self.write(token, content, wait)[0]

    def handle_read(self, token, cid) -> bytes:
        self.verify_token(token)
        try:
            cid = cl.Cid.parse(cid)
        except ValueError:
            raise GatewayError(400, "bad-cid") from None
        try:
            return cl.get(self.cluster, cid)
        except cl.NotFoundError:
            raise GatewayError(404, "not-found", str(cid)) from None

    def health(self) -> dict:
        return {"status": "ok", "vdic": str(self.vdic)}


def _bearer(authorization: str | None) -> str:
    if not authorization or not authorization.startswith("Bearer "):
        raise GatewayError(401, "missing-token")
    return authorization[len("Bearer "):].strip()


def create_app(gateway: Gateway, on_write: Callable[[], None] | None = None):
    """HTTP surface of ``gateway`` as a FastAPI application."""
    app = FastAPI(title="VDIC gateway")

    @app.exception_handler(GatewayError)
    async def _gateway_error(request, exc: GatewayError):
        return JSONResponse({"error": exc.code, "detail": exc.detail}, status_code=exc.status)

    @app.get("/health")
    def health():
        return gateway.health()

    @app.post("/auth/challenge")
    def challenge():
        return gateway.request_challenge().to_json()

    @app.post("/auth/token")
    async def token(request: Request):
        body = await request.body()
        try:
            vp = Presentation.deserialize(body)
        except ValueError as exc:
            raise GatewayError(401, "invalid-presentation", str(exc)) from None
        tok = gateway.authenticate(vp, vp.nonce)
        return {"token": tok.encoded, "expires_in": gateway.config.token_ttl}

    @app.post("/data")
    async def put(request: Request, wait: str = "leader", authorization: str | None = Header(None)):
        token = _bearer(authorization)
        gateway.verify_token(token)
        body = await request.body()
        cid = gateway.handle_write(token, body, wait)
        if on_write is not None:
            on_write()
        return {"cid": str(cid)}

    @app.get("/data/{cid}")
    def read(cid: str, authorization: str | None = Header(None)):
        data = gateway.handle_read(_bearer(authorization), cid)
        return Response(content=data, media_type="application/octet-stream")

    return app


def create_cluster_app(handle: cl.ClusterHandle):
    """Minimal cluster REST surface: ``POST /add`` and ``GET /pins/{cid}``."""
    app = FastAPI(title="VDIC cluster")

    @app.post("/add")
    async def add(request: Request):
        cid, _ = cl.add_and_pin(handle, await request.body())
        return {"cid": str(cid)}

    @app.get("/pins/{cid}")
    def pins(cid: str):
        try:
            return cl.pin_status(handle, cid).to_json()
        except ValueError as exc:
            return JSONResponse({"error": "bad-cid", "detail": str(exc)}, status_code=400)

    return app
