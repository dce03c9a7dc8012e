"""Write and read latency against cluster size, on the virtual clock.

Every follower gets the same injected delay, so a write finishes when the
slowest of n-1 draws arrives: the mean climbs with node count and levels
off near base + jitter. Reads hit the leader only and stay flat.

    python3 demos/write_latency_sweep.py [out_dir]

With an output directory the raw samples and summaries are written as CSV.
"""

import sys
from pathlib import Path

from vdic.bench import BenchConfig, run_read_benchmark, run_write_benchmark, samples_csv, summarize, summary_csv
from vdic.cluster import LatencyModel

config = BenchConfig(
    node_counts=(1, 5, 10, 15),
    per_node_latency=LatencyModel(base_ms=200, jitter_ms=300),
    leader_latency=LatencyModel(base_ms=300, jitter_ms=200),
    seed=11,
)
writes = run_write_benchmark(config)
reads = run_read_benchmark(config)

print(f"{'op':<6}{'nodes':>6}{'mean ms':>10}{'p50 ms':>10}{'p95 ms':>10}")
for row in summarize(writes) + summarize(reads):
    print(f"{row.op:<6}{row.node_count:>6}{row.mean_ms:>10.1f}{row.p50_ms:>10.1f}{row.p95_ms:>10.1f}")

if len(sys.argv) > 1:
    out = Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)
    for name, samples in (("write", writes), ("read", reads)):
        (out / f"{name}_samples.csv").write_text(samples_csv(samples))
        (out / f"{name}_summary.csv").write_text(summary_csv(summarize(samples)))
    print(f"csv written to {out}")
