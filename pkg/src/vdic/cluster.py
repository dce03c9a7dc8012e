"""In-process IPFS Cluster simulator.

One leader node accepts writes and pushes every pinned object to all
follower nodes (replication factor "all"). Followers join with the shared
cluster secret and never originate writes. Per-node latency models delay
replication and reads on either a :class:`~vdic.clock.VirtualClock` or a
:class:`~vdic.clock.RealClock`.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable

from vdic.canonical import canonicalize, loads_strict, utc_now
from vdic.clock import NS_PER_MS, RealClock, VirtualClock, ms_to_ns
from vdic.identity import Did

CID_PREFIX = "cidv0-sha256:"
_CID_RE = re.compile(r"^cidv0-sha256:[0-9a-f]{64}$")


class ClusterError(Exception):
    pass


class NotFoundError(ClusterError):
    pass


class ReadOnlyError(ClusterError):
    pass


class MembershipError(ClusterError):
    pass


class DuplicateNodeError(ClusterError):
    pass


class IntegrityError(ClusterError):
    pass


@dataclass(frozen=True, order=True)
class Cid:
    digest: str

    def __post_init__(self):
        if not re.fullmatch(r"[0-9a-f]{64}", self.digest):
            raise ValueError(f"bad CID digest {self.digest!r}")

    def __str__(self) -> str:
        return CID_PREFIX + self.digest

    @classmethod
    def parse(cls, text: "str | Cid") -> "Cid":
        if isinstance(text, Cid):
            return text
        if not isinstance(text, str) or not _CID_RE.match(text):
            raise ValueError(f"not a CID: {text!r}")
        return cls(text[len(CID_PREFIX):])


def compute_cid(content: bytes) -> Cid:
    return Cid(hashlib.sha256(content).hexdigest())


@dataclass(frozen=True)
class LatencyModel:
    base_ms: float = 0.0
    jitter_ms: float = 0.0

    def sample_ns(self, rng: random.Random) -> int:
        jitter = rng.uniform(0.0, self.jitter_ms) if self.jitter_ms > 0 else 0.0
        return ms_to_ns(self.base_ms + jitter)

    def to_json(self) -> dict:
        return {"base_ms": self.base_ms, "jitter_ms": self.jitter_ms}


def _check_secret(secret: bytes) -> bytes:
    if not isinstance(secret, (bytes, bytearray)) or len(secret) != 32:
        raise ClusterError("cluster secret must be exactly 32 bytes")
    return bytes(secret)


def generate_secret() -> bytes:
    return os.urandom(32)


@dataclass(frozen=True)
class ClusterConfig:
    cluster_name: str
    secret: bytes
    leader_peer: str
    created: str = field(default_factory=utc_now)
    replication_factor: str = "all"

    def __post_init__(self):
        _check_secret(self.secret)
        if self.replication_factor != "all":
            raise ClusterError("only replication factor 'all' is supported")

    def __repr__(self) -> str:
        return f"ClusterConfig(cluster_name={self.cluster_name!r}, leader_peer={self.leader_peer!r})"

    def to_json(self) -> dict:
        return {
            "cluster_name": self.cluster_name,
            "secret": self.secret.hex(),
            "leader_peer": self.leader_peer,
            "replication_factor": self.replication_factor,
            "created": self.created,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ClusterConfig":
        keys = {"cluster_name", "secret", "leader_peer", "replication_factor", "created"}
        if not isinstance(data, dict) or set(data) != keys:
            raise ValueError("malformed cluster config")
        secret = data["secret"]
        if not isinstance(secret, str) or not re.fullmatch(r"[0-9a-f]{64}", secret):
            raise ValueError("secret must be 64 lowercase hex characters")
        return cls(
            cluster_name=data["cluster_name"],
            secret=bytes.fromhex(secret),
            leader_peer=data["leader_peer"],
            created=data["created"],
            replication_factor=data["replication_factor"],
        )

    def serialize(self) -> bytes:
        return canonicalize(self.to_json())

    @classmethod
    def deserialize(cls, raw: bytes) -> "ClusterConfig":
        return cls.from_json(loads_strict(raw))


class NodeRole(str, Enum):
    LEADER = "leader"
    FOLLOWER = "follower"


@dataclass
class ClusterNode:
    node_id: str
    operator: Did
    role: NodeRole
    latency: LatencyModel
    secret_in_use: bytes
    store: dict[Cid, bytes] = field(default_factory=dict)
    pinset: set[Cid] = field(default_factory=set)
    replicating: set[Cid] = field(default_factory=set)


class PinState(str, Enum):
    PINNED = "pinned"
    REPLICATING = "replicating"
    ABSENT = "absent"


@dataclass(frozen=True)
class PinStatus:
    cid: Cid
    per_node: dict[str, PinState]

    def to_json(self) -> dict:
        return {"cid": str(self.cid), "peer_map": {k: v.value for k, v in self.per_node.items()}}

    @property
    def fully_pinned(self) -> bool:
        return all(s is PinState.PINNED for s in self.per_node.values())


@dataclass(frozen=True)
class ReplicationEvent:
    cid: Cid
    node_id: str
    pinned_at_ns: int


class Completion:
    """Waitable handle that resolves once every targeted node has pinned ``cid``."""

    def __init__(self, handle: "ClusterHandle", cid: Cid, started_ns: int):
        self.handle = handle
        self.cid = cid
        self.started_ns = started_ns
        self.completed_ns: int | None = None
        self._event = threading.Event()
        self.handle._check_completion(self)

    @property
    def done(self) -> bool:
        return self._event.is_set()

    def wait(self, timeout_ms: float | None = None) -> bool:
        timeout = None if timeout_ms is None else ms_to_ns(timeout_ms)
        return self.handle.clock.run_until(lambda: self.done, timeout)

    @property
    def elapsed_ms(self) -> float:
        if self.completed_ns is None:
            raise ClusterError("replication has not completed")
        return (self.completed_ns - self.started_ns) / NS_PER_MS


class ClusterHandle:
    def __init__(self, config: ClusterConfig, clock=None, seed: int | None = None):
        self.config = config
        self.clock = clock or VirtualClock()
        self.rng = random.Random(seed)
        self.nodes: dict[str, ClusterNode] = {}
        self.replication_log: list[ReplicationEvent] = []
        # extra join gate on top of the shared secret, set by the VDIC layer
        self.admission_policy: Callable[[Did], bool] | None = None
        self._generation: dict[Cid, int] = {}
        self._waiting: list[Completion] = []
        self._lock = threading.RLock()

    @property
    def leader(self) -> ClusterNode:
        return next(n for n in self.nodes.values() if n.role is NodeRole.LEADER)

    @property
    def followers(self) -> list[ClusterNode]:
        return [n for n in self.nodes.values() if n.role is NodeRole.FOLLOWER]

    def _node(self, node_id: str | None) -> ClusterNode:
        if node_id is None:
            return self.leader
        try:
            return self.nodes[node_id]
        except KeyError:
            raise NotFoundError(f"no node {node_id!r}") from None

    def _pin(self, node: ClusterNode, cid: Cid, content: bytes) -> None:
        node.store[cid] = content
        node.pinset.add(cid)
        node.replicating.discard(cid)
        self.replication_log.append(ReplicationEvent(cid, node.node_id, self.clock.now_ns()))

    def _schedule(self, node: ClusterNode, cid: Cid) -> None:
        node.replicating.add(cid)
        generation = self._generation.get(cid, 0)
        node_id = node.node_id

        def deliver():
            with self._lock:
                target = self.nodes.get(node_id)
                leader = self.leader
                if target is None or self._generation.get(cid, 0) != generation:
                    return
                if cid not in leader.pinset or cid not in target.replicating:
                    target.replicating.discard(cid)
                    return
                self._pin(target, cid, leader.store[cid])
                self._notify()

        self.clock.call_later(node.latency.sample_ns(self.rng), deliver)

    def _check_completion(self, c: Completion) -> None:
        with self._lock:
            if c.done:
                return
            if all(c.cid in n.pinset for n in self.nodes.values()):
                c.completed_ns = self.clock.now_ns()
                c._event.set()
                if c in self._waiting:
                    self._waiting.remove(c)
            elif c not in self._waiting:
                self._waiting.append(c)

    def _notify(self) -> None:
        for c in list(self._waiting):
            self._check_completion(c)

    def quiescent(self) -> bool:
        return not any(n.replicating for n in self.nodes.values())

    def wait_quiescent(self, timeout_ms: float | None = None) -> bool:
        timeout = None if timeout_ms is None else ms_to_ns(timeout_ms)
        return self.clock.run_until(self.quiescent, timeout)


def create_cluster(
    config: ClusterConfig,
    leader_operator: Did,
    node_id: str = "leader",
    latency: LatencyModel | None = None,
    clock=None,
    seed: int | None = None,
) -> ClusterHandle:
    _check_secret(config.secret)
    handle = ClusterHandle(config, clock=clock, seed=seed)
    handle.nodes[node_id] = ClusterNode(
        node_id=node_id,
        operator=Did.parse(leader_operator),
        role=NodeRole.LEADER,
        latency=latency or LatencyModel(),
        secret_in_use=config.secret,
    )
    return handle


def join_follower(
    handle: ClusterHandle,
    config: ClusterConfig,
    operator: Did,
    node_id: str,
    latency: LatencyModel | None = None,
) -> str:
    """Admit a follower node and back-fill every pin the leader holds.

    Rejoining with an existing ``node_id`` of the same operator refreshes the
    node's secret instead of failing, which is how remaining operators pick up
    a rotated configuration.
    """
    operator = Did.parse(operator)
    with handle._lock:
        if config.secret != handle.config.secret:
            raise MembershipError("cluster secret mismatch: join refused")
        if handle.admission_policy is not None and not handle.admission_policy(operator):
            raise MembershipError(f"{operator} is not authorized to operate a node")
        existing = handle.nodes.get(node_id)
        if existing is not None:
            if existing.role is NodeRole.LEADER or existing.operator != operator:
                raise DuplicateNodeError(f"node id {node_id!r} is taken")
            existing.secret_in_use = config.secret
            if latency is not None:
                existing.latency = latency
            node = existing
        else:
            node = ClusterNode(
                node_id=node_id,
                operator=operator,
                role=NodeRole.FOLLOWER,
                latency=latency or LatencyModel(),
                secret_in_use=config.secret,
            )
            handle.nodes[node_id] = node
        for cid in sorted(handle.leader.pinset):
            if cid not in node.pinset and cid not in node.replicating:
                handle._schedule(node, cid)
        return node_id


def evict_node(handle: ClusterHandle, node_id: str) -> None:
    with handle._lock:
        node = handle._node(node_id)
        if node.role is NodeRole.LEADER:
            raise ClusterError("the leader node cannot be evicted")
        del handle.nodes[node_id]
        handle._notify()


def add_and_pin(handle: ClusterHandle, content: bytes, via: str | None = None) -> tuple[Cid, Completion]:
    """Store and pin ``content`` on the leader and schedule replication to all followers."""
    content = bytes(content)
    with handle._lock:
        origin = handle._node(via)
        if origin.role is not NodeRole.LEADER:
            raise ReadOnlyError(f"follower {origin.node_id!r} cannot write")
        cid = compute_cid(content)
        leader = handle.leader
        if cid in leader.store and leader.store[cid] != content:
            raise IntegrityError(f"hash collision on {cid}")
        started = handle.clock.now_ns()
        if cid not in leader.pinset:
            handle._pin(leader, cid, content)
        for node in handle.followers:
            if cid not in node.pinset and cid not in node.replicating:
                handle._schedule(node, cid)
        return cid, Completion(handle, cid, started)


def get(handle: ClusterHandle, cid: Cid | str, node_id: str | None = None) -> bytes:
    cid = Cid.parse(cid)
    node = handle._node(node_id)
    handle.clock.sleep(node.latency.sample_ns(handle.rng))
    with handle._lock:
        try:
            content = node.store[cid]
        except KeyError:
            raise NotFoundError(f"{cid} not found on {node.node_id}") from None
    if compute_cid(content) != cid:
        raise IntegrityError(f"stored bytes do not hash to {cid}")
    return content


def pin_status(handle: ClusterHandle, cid: Cid | str) -> PinStatus:
    cid = Cid.parse(cid)
    with handle._lock:
        states = {}
        for node in handle.nodes.values():
            if cid in node.pinset:
                states[node.node_id] = PinState.PINNED
            elif cid in node.replicating:
                states[node.node_id] = PinState.REPLICATING
            else:
                states[node.node_id] = PinState.ABSENT
        return PinStatus(cid, states)


def unpin(handle: ClusterHandle, cid: Cid | str) -> None:
    cid = Cid.parse(cid)
    with handle._lock:
        if cid not in handle.leader.pinset:
            raise NotFoundError(f"{cid} is not pinned")
        handle._generation[cid] = handle._generation.get(cid, 0) + 1
        for node in handle.nodes.values():
            node.pinset.discard(cid)
            node.replicating.discard(cid)
            node.store.pop(cid, None)


def rotate_secret(handle: ClusterHandle, new_secret: bytes | None = None) -> ClusterConfig:
    """Replace the membership secret on the config and every current member."""
    secret = _check_secret(new_secret if new_secret is not None else generate_secret())
    with handle._lock:
        if secret == handle.config.secret:
            raise ClusterError("new secret must differ from the current one")
        handle.config = replace(handle.config, secret=secret)
        for node in handle.nodes.values():
            node.secret_in_use = secret
        return handle.config


def save_cluster(handle: ClusterHandle, path: Path) -> None:
    """Snapshot pins, membership and config under directory ``path``."""
    path = Path(path)
    blobs = path / "blobs"
    blobs.mkdir(parents=True, exist_ok=True)
    with handle._lock:
        for cid, content in handle.leader.store.items():
            f = blobs / cid.digest
            if not f.exists():
                f.write_bytes(content)
        state = {
            "config": handle.config.to_json(),
            "nodes": [
                {
                    "node_id": n.node_id,
                    "operator": str(n.operator),
                    "role": n.role.value,
                    "latency": n.latency.to_json(),
                    "secret_in_use": n.secret_in_use.hex(),
                    "pins": sorted(str(c) for c in n.pinset),
                }
                for n in handle.nodes.values()
            ],
        }
    tmp = path / "cluster.json.tmp"
    tmp.write_text(json.dumps(state, indent=2, sort_keys=True))
    tmp.replace(path / "cluster.json")


def load_cluster(path: Path, clock=None, seed: int | None = None) -> ClusterHandle:
    path = Path(path)
    state = json.loads((path / "cluster.json").read_text())
    handle = ClusterHandle(ClusterConfig.from_json(state["config"]), clock=clock, seed=seed)
    for n in state["nodes"]:
        node = ClusterNode(
            node_id=n["node_id"],
            operator=Did.parse(n["operator"]),
            role=NodeRole(n["role"]),
            latency=LatencyModel(**n["latency"]),
            secret_in_use=bytes.fromhex(n["secret_in_use"]),
        )
        for c in n["pins"]:
            cid = Cid.parse(c)
            content = (path / "blobs" / cid.digest).read_bytes()
            if compute_cid(content) != cid:
                raise IntegrityError(f"snapshot blob {cid} is corrupt")
            node.store[cid] = content
            node.pinset.add(cid)
        handle.nodes[node.node_id] = node
    return handle


__all__ = [
    "Cid",
    "ClusterConfig",
    "ClusterHandle",
    "ClusterNode",
    "Completion",
    "LatencyModel",
    "NodeRole",
    "PinState",
    "PinStatus",
    "RealClock",
    "VirtualClock",
    "add_and_pin",
    "compute_cid",
    "create_cluster",
    "evict_node",
    "get",
    "join_follower",
    "load_cluster",
    "generate_secret",
    "pin_status",
    "rotate_secret",
    "save_cluster",
    "unpin",
]
