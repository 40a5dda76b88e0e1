"""Metric collection and CSV export for simulation runs.

Link traffic is binned into fixed windows and split by class (data vs
replication updates); the split sums to the total by construction.
Everything exports to plain CSVs with deterministic formatting: ints as
decimal, floats via repr, rows in sorted or insertion order only, so
identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

CONTROLLER_DELAY_NS = 10_000_000


class MetricsLog:
    """Run-wide measurement state, mutated inline by the simulator."""

    def __init__(self, t_end_ns: int, bin_ns: int, link_dirs, flow_names):
        assert bin_ns > 0
        self.t_end_ns = t_end_ns
        self.bin_ns = bin_ns
        self.n_bins = max(1, math.ceil(t_end_ns / bin_ns))
        self.link_dirs = list(link_dirs)
        self.link_index = {ld: i for i, ld in enumerate(self.link_dirs)}
        n_links = len(self.link_dirs)
        self.data_bits = np.zeros((n_links, self.n_bins), dtype=np.int64)
        self.repl_bits = np.zeros((n_links, self.n_bins), dtype=np.int64)
        self.queue_drops = np.zeros(n_links, dtype=np.int64)
        self.flow_names = list(flow_names)
        self.flow_index = {f: i for i, f in enumerate(self.flow_names)}
        n_flows = len(self.flow_names)
        self.flow_bits = np.zeros((n_flows, self.n_bins), dtype=np.int64)
        self.flow_sent = np.zeros(n_flows, dtype=np.int64)
        self.flow_delivered = np.zeros(n_flows, dtype=np.int64)
        self.flow_app_drops = np.zeros(n_flows, dtype=np.int64)
        self.flow_queue_drops = np.zeros(n_flows, dtype=np.int64)
        self.detections: list[tuple[int, str, str, int]] = []
        self.notifications: list[tuple[int, str, str]] = []
        self.controller_redirects: list[tuple[int, str, str]] = []
        self.staleness: list[tuple[int, str, str, str, int, int]] = []
        self.write_lag: list[tuple[int, str, str, int]] = []
        self.unknown_state_drops = 0
        self.stale_update_drops = 0
        self.events_processed = 0
        self.updates_emitted = 0
        self.replica_memory: dict[str, int] = {}
        self.plan_text = ""

    # Core switch-switch link rows, in index order.
    def core_rows(self, is_switch) -> list[int]:
        return [
            i for i, (u, v) in enumerate(self.link_dirs) if is_switch(u) and is_switch(v)
        ]

    def bin_of(self, t_ns: int) -> int:
        b = t_ns // self.bin_ns
        return self.n_bins - 1 if b >= self.n_bins else int(b)

    def window_slice(self, frac0: float = 0.5, frac1: float = 1.0) -> slice:
        lo = int(self.n_bins * frac0)
        hi = max(lo + 1, int(math.ceil(self.n_bins * frac1)))
        return slice(lo, min(hi, self.n_bins))


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: str, header: list[str], rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def export_metrics(log: MetricsLog, out_dir: str, switch_names=None):
    """Write the raw per-bin CSV family for one run into `out_dir`."""
    os.makedirs(out_dir, exist_ok=True)
    sws = frozenset(switch_names or ())
    bin_s = log.bin_ns / 1e9

    rows = []
    for i, (u, v) in enumerate(log.link_dirs):
        core = 1 if (u in sws and v in sws) else 0
        for b in range(log.n_bins):
            d = int(log.data_bits[i, b])
            r = int(log.repl_bits[i, b])
            rows.append((u, v, core, b * bin_s, d, r, d + r))
    _write_csv(
        os.path.join(out_dir, "links.csv"),
        ["src", "dst", "core", "bin_start_s", "data_bits", "repl_bits", "total_bits"],
        rows,
    )

    rows = []
    for f, i in log.flow_index.items():
        for b in range(log.n_bins):
            bits = int(log.flow_bits[i, b])
            rows.append((f, b * bin_s, bits, bits / bin_s))
    _write_csv(
        os.path.join(out_dir, "flows.csv"),
        ["flow", "bin_start_s", "delivered_bits", "throughput_bps"],
        rows,
    )

    _write_csv(
        os.path.join(out_dir, "flow_totals.csv"),
        ["flow", "sent_pkts", "delivered_pkts", "app_drops", "queue_drops"],
        [
            (
                f,
                int(log.flow_sent[i]),
                int(log.flow_delivered[i]),
                int(log.flow_app_drops[i]),
                int(log.flow_queue_drops[i]),
            )
            for f, i in log.flow_index.items()
        ],
    )

    _write_csv(
        os.path.join(out_dir, "detections.csv"),
        ["t_s", "switch", "trigger", "value"],
        [(t / 1e9, sw, tr, v) for (t, sw, tr, v) in log.detections],
    )
    _write_csv(
        os.path.join(out_dir, "notifications.csv"),
        ["t_s", "switch", "message"],
        [(t / 1e9, sw, m) for (t, sw, m) in log.notifications],
    )
    _write_csv(
        os.path.join(out_dir, "staleness.csv"),
        ["t_s", "state", "origin", "replica", "staleness_ns", "replaced_age_ns"],
        [(t / 1e9, s, o, r, st, ra) for (t, s, o, r, st, ra) in log.staleness],
    )
    _write_csv(
        os.path.join(out_dir, "write_lag.csv"),
        ["t_s", "state", "replica", "lag_writes"],
        [(t / 1e9, s, r, lag) for (t, s, r, lag) in log.write_lag],
    )
    _write_csv(
        os.path.join(out_dir, "queue_drops.csv"),
        ["src", "dst", "drops"],
        [
            (u, v, int(log.queue_drops[i]))
            for i, (u, v) in enumerate(log.link_dirs)
            if log.queue_drops[i]
        ],
    )
    _write_csv(
        os.path.join(out_dir, "memory.csv"),
        ["switch", "replica_state_bits"],
        sorted(log.replica_memory.items()),
    )
    _write_csv(
        os.path.join(out_dir, "counters.csv"),
        ["key", "value"],
        [
            ("events_processed", log.events_processed),
            ("updates_emitted", log.updates_emitted),
            ("unknown_state_drops", log.unknown_state_drops),
            ("stale_update_drops", log.stale_update_drops),
            ("t_end_ns", log.t_end_ns),
            ("bin_ns", log.bin_ns),
        ],
    )
    if log.plan_text:
        with open(os.path.join(out_dir, "plan.txt"), "w") as fh:
            fh.write(log.plan_text)


def read_metrics_dir(path: str) -> MetricsLog:
    """Rebuild a MetricsLog from the raw CSVs written by export_metrics.

    Only the fields summarize() consumes are reconstructed; the rest
    stay at defaults.
    """
    counters = {}
    with open(os.path.join(path, "counters.csv")) as fh:
        for row in csv.DictReader(fh):
            counters[row["key"]] = int(row["value"])
    t_end_ns = counters["t_end_ns"]
    bin_ns = counters["bin_ns"]

    link_rows = []
    with open(os.path.join(path, "links.csv")) as fh:
        for row in csv.DictReader(fh):
            link_rows.append(row)
    link_dirs = []
    core_flags = {}
    for row in link_rows:
        ld = (row["src"], row["dst"])
        if ld not in core_flags:
            core_flags[ld] = row["core"] == "1"
            link_dirs.append(ld)

    flow_rows = []
    with open(os.path.join(path, "flows.csv")) as fh:
        for row in csv.DictReader(fh):
            flow_rows.append(row)
    flow_names = list(dict.fromkeys(row["flow"] for row in flow_rows))

    log = MetricsLog(t_end_ns, bin_ns, link_dirs, flow_names)
    log._core_flags = core_flags
    for row in link_rows:
        i = log.link_index[(row["src"], row["dst"])]
        b = int(float(row["bin_start_s"]) * 1e9 / bin_ns + 0.5)
        log.data_bits[i, b] = int(row["data_bits"])
        log.repl_bits[i, b] = int(row["repl_bits"])
    for row in flow_rows:
        i = log.flow_index[row["flow"]]
        b = int(float(row["bin_start_s"]) * 1e9 / bin_ns + 0.5)
        log.flow_bits[i, b] = int(row["delivered_bits"])
    with open(os.path.join(path, "detections.csv")) as fh:
        for row in csv.DictReader(fh):
            log.detections.append(
                (round(float(row["t_s"]) * 1e9), row["switch"], row["trigger"], int(row["value"]))
            )
    stale_path = os.path.join(path, "staleness.csv")
    if os.path.exists(stale_path):
        with open(stale_path) as fh:
            for row in csv.DictReader(fh):
                log.staleness.append(
                    (
                        round(float(row["t_s"]) * 1e9),
                        row["state"],
                        row["origin"],
                        row["replica"],
                        int(row["staleness_ns"]),
                        int(row["replaced_age_ns"]),
                    )
                )
    mem_path = os.path.join(path, "memory.csv")
    if os.path.exists(mem_path):
        with open(mem_path) as fh:
            for row in csv.DictReader(fh):
                log.replica_memory[row["switch"]] = int(row["replica_state_bits"])
    return log


@dataclass
class SummaryRow:
    label: str
    mean_data_bps: float
    mean_repl_bps: float
    repl_fraction: float
    detections: str
    aggregate_throughput_bps: float
    min_flow_throughput_bps: float
    max_staleness_ns: int
    memory_bits: str


def summarize(logs: dict[str, MetricsLog], window=(0.5, 1.0), is_switch=None) -> list[SummaryRow]:
    """Steady-state summary per run (default window: last 50%).

    Link means are taken over switch-switch (core) directed links; the
    replication fraction is replication bits over total bits in the
    window.
    """
    out = []
    for label in sorted(logs):
        log = logs[label]
        if is_switch is not None:
            core = log.core_rows(is_switch)
        elif hasattr(log, "_core_flags"):
            core = [i for i, ld in enumerate(log.link_dirs) if log._core_flags[ld]]
        else:
            core = list(range(len(log.link_dirs)))
        sl = log.window_slice(*window)
        nbins = sl.stop - sl.start
        window_s = nbins * log.bin_ns / 1e9
        if core and nbins > 0:
            data = int(log.data_bits[core, sl].sum())
            repl = int(log.repl_bits[core, sl].sum())
        else:
            data = repl = 0
        n_core = max(1, len(core))
        mean_data = data / window_s / n_core
        mean_repl = repl / window_s / n_core
        frac = repl / (data + repl) if (data + repl) else 0.0

        first: dict[str, float] = {}
        for (t, sw, trig, val) in log.detections:
            if sw not in first:
                first[sw] = t / 1e9
        det = ";".join(f"{sw}:{first[sw]}" for sw in sorted(first))

        fl = log.flow_bits[:, sl].sum(axis=1) if len(log.flow_names) else np.zeros(0)
        agg = float(fl.sum()) / window_s if len(fl) else 0.0
        # Flows idle in the window report 0; exclude them from the min.
        active = [float(x) / window_s for x in fl if x > 0]
        min_tp = min(active) if active else 0.0

        max_stale = max((max(st, ra) for (_, _, _, _, st, ra) in log.staleness), default=0)
        mem = ";".join(f"{sw}:{bits}" for sw, bits in sorted(log.replica_memory.items()))
        out.append(
            SummaryRow(
                label=label,
                mean_data_bps=mean_data,
                mean_repl_bps=mean_repl,
                repl_fraction=frac,
                detections=det,
                aggregate_throughput_bps=agg,
                min_flow_throughput_bps=min_tp,
                max_staleness_ns=max_stale,
                memory_bits=mem,
            )
        )
    return out


def export_summary(rows: list[SummaryRow], path: str):
    _write_csv(
        path,
        [
            "label",
            "mean_data_bps",
            "mean_repl_bps",
            "repl_fraction",
            "detections",
            "aggregate_throughput_bps",
            "min_flow_throughput_bps",
            "max_staleness_ns",
            "memory_bits",
        ],
        [
            (
                r.label,
                r.mean_data_bps,
                r.mean_repl_bps,
                r.repl_fraction,
                r.detections,
                r.aggregate_throughput_bps,
                r.min_flow_throughput_bps,
                r.max_staleness_ns,
                r.memory_bits,
            )
            for r in rows
        ],
    )
