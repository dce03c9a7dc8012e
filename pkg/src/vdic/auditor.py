"""Public audit of a VDIC's data-permanency guarantee.

Everything here reads public state only: the ledger and the presentation
store. No credentials or keys are needed to audit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from vdic.canonical import canonicalize, loads_strict, utc_now
from vdic.credentials import (
    IDENTITY_CREDENTIAL,
    MOTIVE_CREDENTIAL,
    PresentationStore,
    VerificationResult,
    fetch_linked_presentations,
)
from vdic.identity import Did, LedgerStore, NotFoundError, resolve
from vdic.registry import read_registry

PUBLIC_CONFIG_SERVICE_TYPE = "VdicClusterConfig"


class Motive(str, Enum):
    DATA_AVAILABILITY = "data_availability"
    SUPPORT_DAPP = "support_dapp"
    SUPPORT_USERS = "support_users"
    DAPP_DATA_SOURCE = "dapp_data_source"
    UNKNOWN = "unknown"


def classify_motive(claims: dict) -> Motive:
    value = claims.get("motive") if isinstance(claims, dict) else None
    if value != Motive.UNKNOWN.value:
        for m in Motive:
            if m.value == value:
                return m
    return Motive.UNKNOWN


@dataclass(frozen=True)
class OperatorAudit:
    did: Did
    resolvable: bool
    linked_presentations: tuple[tuple[str, VerificationResult], ...] = ()
    identity_verified: bool = False
    motive: Motive = Motive.UNKNOWN
    motive_verified: bool = False
    motive_text: str = ""
    issuer_dids: tuple[Did, ...] = ()
    failures: tuple[str, ...] = ()

    @property
    def fully_verified(self) -> bool:
        return self.identity_verified and self.motive_verified

    def to_json(self) -> dict:
        return {
            "did": str(self.did),
            "resolvable": self.resolvable,
            "linked_presentations": [
                {"location": loc, "result": res.to_json()} for loc, res in self.linked_presentations
            ],
            "identity_verified": self.identity_verified,
            "motive": self.motive.value,
            "motive_verified": self.motive_verified,
            "motive_text": self.motive_text,
            "issuer_dids": [str(d) for d in self.issuer_dids],
            "failures": list(self.failures),
        }

    @classmethod
    def from_json(cls, data: dict) -> "OperatorAudit":
        return cls(
            did=Did.parse(data["did"]),
            resolvable=data["resolvable"],
            linked_presentations=tuple(
                (p["location"], VerificationResult(tuple(tuple(f) for f in p["result"]["failures"])))
                for p in data["linked_presentations"]
            ),
            identity_verified=data["identity_verified"],
            motive=Motive(data["motive"]),
            motive_verified=data["motive_verified"],
            motive_text=data["motive_text"],
            issuer_dids=tuple(Did.parse(d) for d in data["issuer_dids"]),
            failures=tuple(data["failures"]),
        )


@dataclass(frozen=True)
class AuditReport:
    vdic: Did
    leader: Did
    registry_version: int
    operators: tuple[OperatorAudit, ...]
    dapp_count: int
    public_mode: bool
    generated_at: str
    registry_operator_count: int = field(default=-1)

    def __post_init__(self):
        if self.registry_operator_count < 0:
            object.__setattr__(self, "registry_operator_count", len(self.operators))

    @property
    def decentralization_level(self) -> int:
        return sum(1 for o in self.operators if o.fully_verified)

    def to_json(self) -> dict:
        return {
            "vdic": str(self.vdic),
            "leader": str(self.leader),
            "registry_version": self.registry_version,
            "registry_operator_count": self.registry_operator_count,
            "operators": [o.to_json() for o in self.operators],
            "dapp_count": self.dapp_count,
            "decentralization_level": self.decentralization_level,
            "public_mode": self.public_mode,
            "generated_at": self.generated_at,
            "operator_counts_are": "attested, not observed",
        }

    @classmethod
    def from_json(cls, data: dict) -> "AuditReport":
        report = cls(
            vdic=Did.parse(data["vdic"]),
            leader=Did.parse(data["leader"]),
            registry_version=data["registry_version"],
            operators=tuple(OperatorAudit.from_json(o) for o in data["operators"]),
            dapp_count=data["dapp_count"],
            public_mode=data["public_mode"],
            generated_at=data["generated_at"],
            registry_operator_count=data["registry_operator_count"],
        )
        if report.decentralization_level != data["decentralization_level"]:
            raise ValueError("decentralization level does not match the operator audits")
        return report


def audit_operator(ledger: LedgerStore, store: PresentationStore, did: Did) -> OperatorAudit:
    """Verify one actor's linked identity and motive presentations."""
    did = Did.parse(did)
    try:
        linked = fetch_linked_presentations(did, ledger, store)
    except NotFoundError:
        return OperatorAudit(did, False, failures=(f"{did} does not resolve",))
    identity = motive_ok = False
    motives: list[tuple[Motive, str]] = []
    issuers: set[Did] = set()
    failures = []
    for location, vp, result in linked:
        for check, detail in result.failures:
            failures.append(f"{location}: {check}: {detail}")
        if vp is None or not result.valid:
            continue
        for cred in vp.credentials:
            if cred.has_type(IDENTITY_CREDENTIAL):
                identity = True
                issuers.add(cred.issuer)
            if cred.has_type(MOTIVE_CREDENTIAL) and "motive" in cred.claims:
                motive_ok = True
                issuers.add(cred.issuer)
                motives.append((classify_motive(cred.claims), cred.claims["motive"]))
    known = [m for m in motives if m[0] is not Motive.UNKNOWN]
    motive, text = (known or motives or [(Motive.UNKNOWN, "")])[0]
    return OperatorAudit(
        did=did,
        resolvable=True,
        linked_presentations=tuple((loc, res) for loc, _, res in linked),
        identity_verified=identity,
        motive=motive,
        motive_verified=motive_ok,
        motive_text=text,
        issuer_dids=tuple(sorted(issuers)),
        failures=tuple(failures),
    )


def audit(ledger: LedgerStore, store: PresentationStore, vdic: Did, now: str | None = None) -> AuditReport:
    """Audit the VDIC from public state. Pass ``now`` for byte-stable reports."""
    vdic = Did.parse(vdic)
    doc = resolve(ledger, vdic)
    registry = read_registry(ledger, vdic)
    operators = tuple(audit_operator(ledger, store, op) for op in registry.node_operators)
    return AuditReport(
        vdic=vdic,
        leader=registry.leader,
        registry_version=registry.version,
        operators=operators,
        dapp_count=len(registry.dapps),
        public_mode=bool(doc.services_of_type(PUBLIC_CONFIG_SERVICE_TYPE)),
        generated_at=now or utc_now(),
        registry_operator_count=len(registry.node_operators),
    )


def render_report(report: AuditReport, format: str = "text") -> bytes:
    if format == "json":
        return canonicalize(report.to_json())
    if format != "text":
        raise ValueError(f"unknown format {format!r}")
    lines = [
        f"vdic: {report.vdic}",
        f"leader: {report.leader}",
        f"registry version: {report.registry_version}",
        f"public mode: {'yes' if report.public_mode else 'no'}",
        f"dapps: {report.dapp_count}",
        f"node operators (attested, not observed): {report.registry_operator_count}",
        f"decentralization level: {report.decentralization_level}",
    ]
    for o in report.operators:
        status = "verified" if o.fully_verified else "unverified"
        lines.append(f"operator {o.did}: {status}")
        lines.append(f"  identity: {'verified' if o.identity_verified else 'unverified'}")
        detail = f" ({o.motive_text})" if o.motive_text and o.motive_text != o.motive.value else ""
        lines.append(f"  motive: {o.motive.value}{detail} {'verified' if o.motive_verified else 'unverified'}")
        for issuer in o.issuer_dids:
            lines.append(f"  issuer: {issuer}")
        for f in o.failures:
            lines.append(f"  failure: {f}")
    lines.append(f"generated at: {report.generated_at}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_report(raw: bytes) -> AuditReport:
    return AuditReport.from_json(loads_strict(raw))
