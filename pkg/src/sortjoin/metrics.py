"""(alpha, k)-minimality reports built from a cluster's round log.

Per round and machine:
    W_i = loaded + received + produced   (records held or generated)
    N_i = loaded + sent + received       (records moved to or from the machine)
    C_i = processed                      (records touched)

W_seq = max(N_in, N_out) and N = N_in + N_out come from oracle-known sizes.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

REPORT_COLUMNS = ["algorithm", "round", "machine", "W_i", "N_i", "C_i"]


@dataclass
class MinimalityReport:
    algorithm: str
    t: int
    alpha: int
    raw_rounds: int
    workload: list            # [round][machine] W_i
    network: list             # [round][machine] N_i
    compute: list             # [round][machine] C_i
    produced: list            # [round][machine]
    w_seq: int
    n_total: int
    k_workload: float
    k_network: float
    k_workload_per_round: list
    k_network_per_round: list
    imbalance: float
    imbalance_round: int
    c_ratio: float
    bound_checks: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def k(self) -> float:
        return max(self.k_workload, self.k_network)

    def passed(self, name: str) -> bool:
        return self.bound_checks[name]

    def summary(self) -> str:
        checks = " ".join(f"{k}={'pass' if v else 'fail'}" for k, v in self.bound_checks.items())
        return (f"{self.algorithm}: alpha={self.alpha} (raw rounds {self.raw_rounds}) "
                f"k_workload={self.k_workload:.4f} k_network={self.k_network:.4f} "
                f"imbalance={self.imbalance:.4f} {checks}").rstrip()


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def imbalance_of(loads) -> float:
    """max / mean; 1.0 for an all-zero round."""
    total = sum(loads)
    if total == 0:
        return 1.0
    return max(loads) / (total / len(loads))


def build_report(round_log, n_in: int, n_out: int, t: int, algorithm: str, *,
                 alpha: int | None = None, checks: dict | None = None,
                 extra: dict | None = None, notes=None,
                 imbalance_round: int | None = None) -> MinimalityReport:
    """Summarise a complete round log.

    ``imbalance_round`` (1-based) picks the round whose W_i distribution defines
    the workload imbalance; by default the last round, where each algorithm's
    partitioning decision takes effect.
    """
    if not round_log:
        raise ConfigError("cannot build a report from an empty round log")
    workload = [rs.workload() for rs in round_log]
    network = [rs.network() for rs in round_log]
    compute = [list(rs.processed) for rs in round_log]
    produced = [list(rs.produced) for rs in round_log]
    w_seq = max(n_in, n_out)
    n_total = n_in + n_out
    kw = [_ratio(max(w), w_seq / t) for w in workload]
    kn = [_ratio(max(nw), n_total / t) for nw in network]
    ir = imbalance_round or len(round_log)
    return MinimalityReport(
        algorithm=algorithm,
        t=t,
        alpha=alpha if alpha is not None else len(round_log),
        raw_rounds=len(round_log),
        workload=workload,
        network=network,
        compute=compute,
        produced=produced,
        w_seq=w_seq,
        n_total=n_total,
        k_workload=max(kw),
        k_network=max(kn),
        k_workload_per_round=kw,
        k_network_per_round=kn,
        imbalance=imbalance_of(workload[ir - 1]),
        imbalance_round=ir,
        # no pass/fail for the asymptotic cost bound; ratio only
        c_ratio=max(_ratio(max(c), w_seq / t) for c in compute),
        bound_checks=dict(checks or {}),
        extra=dict(extra or {}),
        notes=list(notes or []),
    )


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "pass" if v else "fail"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_csv_text(report: MinimalityReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r, (wl, nw, cc) in enumerate(zip(report.workload, report.network, report.compute), start=1):
        for i in range(report.t):
            w.writerow([report.algorithm, r, i + 1, wl[i], nw[i], cc[i]])
    summary = [
        "summary",
        f"alpha={report.alpha}",
        f"raw_rounds={report.raw_rounds}",
        f"k_workload={_fmt(report.k_workload)}",
        f"k_network={_fmt(report.k_network)}",
        f"imbalance={_fmt(report.imbalance)}",
        f"imbalance_round={report.imbalance_round}",
        f"c_ratio={_fmt(report.c_ratio)}",
        f"w_seq={report.w_seq}",
        f"n_total={report.n_total}",
    ]
    summary += [f"{name}={_fmt(ok)}" for name, ok in report.bound_checks.items()]
    w.writerow(summary)
    return buf.getvalue()


def emit_csv(report: MinimalityReport, path) -> Path:
    path = Path(path)
    path.write_text(report_csv_text(report))
    return path


def _parse_value(text: str):
    if text in ("pass", "fail"):
        return text == "pass"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_report_csv(text: str) -> dict:
    """Inverse of :func:`report_csv_text`: rows plus the summary mapping."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != REPORT_COLUMNS:
        raise ValueError(f"unexpected report header {header}")
    rows, summary = [], {}
    for row in reader:
        if row and row[0] == "summary":
            summary = {k: _parse_value(v) for k, v in (item.split("=", 1) for item in row[1:])}
        elif row:
            alg, rnd, mach, wi, ni, ci = row
            rows.append({"algorithm": alg, "round": int(rnd), "machine": int(mach),
                         "W_i": int(wi), "N_i": int(ni), "C_i": int(ci)})
    return {"rows": rows, "summary": summary}


def read_report_csv(path) -> dict:
    return parse_report_csv(Path(path).read_text())


def format_report(parsed: dict) -> str:
    """Human-readable table of a parsed report.csv."""
    rows = parsed["rows"]
    lines = []
    if rows:
        lines.append(f"algorithm: {rows[0]['algorithm']}")
        lines.append(f"{'round':>5} {'machine':>7} {'W_i':>12} {'N_i':>12} {'C_i':>12}")
        for r in rows:
            lines.append(f"{r['round']:>5} {r['machine']:>7} {r['W_i']:>12} {r['N_i']:>12} {r['C_i']:>12}")
    for k, v in parsed["summary"].items():
        if isinstance(v, bool):
            v = "pass" if v else "fail"
        lines.append(f"{k}: {v}")
    return "\n".join(lines)
