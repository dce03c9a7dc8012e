"""Read and write latency versus node count, measured through the gateway.

Write samples span from the gateway write request until every node has
pinned the payload; read samples are single gateway reads with a token
obtained outside the timed region. With the virtual clock, elapsed time is
exactly the injected latency and runs are reproducible per seed.

Write trials share their per-node delay draws across node counts, so a
larger cluster sees a superset of the smaller one's delays in every trial.
"""

from __future__ import annotations

import csv
import hashlib
import io
import random
from dataclasses import dataclass, field
from statistics import mean

import numpy as np

from vdic import cluster as cl
from vdic.clock import NS_PER_MS, RealClock, VirtualClock
from vdic.scenario import build_vdic

SAMPLE_HEADER = ["op", "target", "node_count", "trial", "elapsed_ms"]
SUMMARY_HEADER = ["op", "target", "node_count", "mean_ms", "p50_ms", "p95_ms", "n"]


@dataclass(frozen=True)
class BenchConfig:
    node_counts: tuple[int, ...] = (1, 5, 10, 15)
    file_size_bytes: int = 102400
    trials: int = 30
    per_node_latency: cl.LatencyModel = field(default_factory=cl.LatencyModel)
    leader_latency: cl.LatencyModel = field(default_factory=cl.LatencyModel)
    seed: int = 0
    clock: str = "virtual"
    target: str = "vdic"

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.node_counts or any(n < 1 for n in self.node_counts):
            raise ValueError("node_counts must be a non-empty list of positive integers")
        if self.clock not in ("virtual", "real"):
            raise ValueError("clock must be 'virtual' or 'real'")


@dataclass(frozen=True)
class BenchSample:
    op: str
    node_count: int
    trial: int
    elapsed_ms: float
    target: str = "vdic"
    error: str = ""


@dataclass(frozen=True)
class SummaryRow:
    op: str
    target: str
    node_count: int
    mean_ms: float
    p50_ms: float
    p95_ms: float
    n: int


def _setup(config: BenchConfig, node_count: int):
    clock = VirtualClock() if config.clock == "virtual" else RealClock()
    sc = build_vdic(
        n_operators=node_count - 1,
        n_dapps=1,
        seed=config.seed * 1000 + node_count,
        latencies=[config.per_node_latency] * (node_count - 1),
        leader_latency=config.leader_latency,
        clock=clock,
    )
    return sc, clock, sc.token(sc.dapps[0])


def run_write_benchmark(config: BenchConfig) -> list[BenchSample]:
    samples = []
    for n in config.node_counts:
        sc, clock, token = _setup(config, n)
        rng = random.Random(f"write/{config.seed}/{n}")
        for trial in range(config.trials):
            payload = rng.randbytes(config.file_size_bytes)
            # common random numbers: follower i draws the same delay at every node count
            sc.ctx.cluster.rng = random.Random(f"delay/{config.seed}/{trial}")
            try:
                start = clock.now_ns()
                _, completion = sc.ctx.gateway.write(token, payload, wait="all")
                elapsed = (clock.now_ns() - start) / NS_PER_MS
                if not completion.done:
                    raise RuntimeError("replication did not complete")
            except Exception as exc:  # recorded, never raised
                samples.append(BenchSample("write", n, trial, float("nan"), config.target, str(exc)))
                continue
            samples.append(BenchSample("write", n, trial, elapsed, config.target))
    return samples


def run_read_benchmark(config: BenchConfig) -> list[BenchSample]:
    samples = []
    for n in config.node_counts:
        sc, clock, token = _setup(config, n)
        rng = random.Random(f"read/{config.seed}/{n}")
        payload = rng.randbytes(config.file_size_bytes)
        cid = sc.ctx.gateway.handle_write(token, payload, wait="all")
        for trial in range(config.trials):
            try:
                start = clock.now_ns()
                body = sc.ctx.gateway.handle_read(token, cid)
                elapsed = (clock.now_ns() - start) / NS_PER_MS
                if hashlib.sha256(body).hexdigest() != cid.digest:
                    raise RuntimeError("read returned corrupted bytes")
            except Exception as exc:  # recorded, never raised
                samples.append(BenchSample("read", n, trial, float("nan"), config.target, str(exc)))
                continue
            samples.append(BenchSample("read", n, trial, elapsed, config.target))
    return samples


def summarize(samples: list[BenchSample]) -> list[SummaryRow]:
    """Mean and order statistics per (op, target, node_count); failed samples are skipped."""
    groups: dict[tuple[str, str, int], list[float]] = {}
    for s in samples:
        if s.error:
            continue
        groups.setdefault((s.op, s.target, s.node_count), []).append(s.elapsed_ms)
    rows = []
    for (op, target, n), values in sorted(groups.items()):
        arr = np.asarray(values, dtype=float)
        rows.append(
            SummaryRow(
                op, target, n,
                mean_ms=float(mean(values)),
                p50_ms=float(np.percentile(arr, 50)),
                p95_ms=float(np.percentile(arr, 95)),
                n=len(values),
            )
        )
    return rows


def _fmt(x: float) -> str:
    return repr(float(x))


def samples_csv(samples: list[BenchSample]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SAMPLE_HEADER)
    for s in samples:
        w.writerow([s.op, s.target, s.node_count, s.trial, _fmt(s.elapsed_ms)])
    return buf.getvalue()


def summary_csv(rows: list[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for r in rows:
        w.writerow([r.op, r.target, r.node_count, _fmt(r.mean_ms), _fmt(r.p50_ms), _fmt(r.p95_ms), r.n])
    return buf.getvalue()
