"""Verifiable decentralized IPFS clusters: DIDs, credentials, a trusted actor
registry, a credential-gated gateway over a simulated replicated cluster,
leader workflows, public auditing and a latency benchmark."""

from vdic.auditor import AuditReport, audit, classify_motive, render_report
from vdic.canonical import canonicalize
from vdic.cluster import Cid, ClusterConfig, LatencyModel, compute_cid
from vdic.credentials import (
    Credential,
    Presentation,
    PresentationStore,
    VerificationResult,
    issue_credential,
    verify_credential,
    verify_presentation,
)
from vdic.gateway import Gateway, GatewayConfig, GatewayError
from vdic.identity import Did, DidDocument, KeyPair, LedgerStore, did_from_keypair, generate_keypair, resolve
from vdic.lifecycle import VdicContext, create_vdic
from vdic.registry import Role, TrustedActorRegistry, read_registry

__version__ = "0.1.0"

__all__ = [
    "AuditReport",
    "audit",
    "classify_motive",
    "render_report",
    "canonicalize",
    "Cid",
    "ClusterConfig",
    "LatencyModel",
    "compute_cid",
    "Credential",
    "Presentation",
    "PresentationStore",
    "VerificationResult",
    "issue_credential",
    "verify_credential",
    "verify_presentation",
    "Gateway",
    "GatewayConfig",
    "GatewayError",
    "Did",
    "DidDocument",
    "KeyPair",
    "LedgerStore",
    "did_from_keypair",
    "generate_keypair",
    "resolve",
    "VdicContext",
    "create_vdic",
    "Role",
    "TrustedActorRegistry",
    "read_registry",
]
