"""Command-line driver: gen, sort, join, verify, report.

Exit status: 0 success, 1 verification mismatch or unreadable input,
2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import records as rec
from .errors import ConfigError, DatasetParseError, SortJoinError
from .metrics import emit_csv, format_report, read_report_csv
from .oracle import oracle_join, same_multiset, seq_sort
from .randjoin import randjoin
from .runtime import create_cluster
from .smms import smms_sort
from .statjoin import statjoin
from .terasort import terasort

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE = 0, 1, 2
PART_GLOB = "part-*"


class UsageError(ConfigError):
    pass


def part_name(machine: int) -> str:
    return f"part-{machine:05d}"


def parse_domain(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"domain must look like LO:HI, got {text!r}") from None
    if lo > hi:
        raise argparse.ArgumentTypeError(f"empty domain {text!r}")
    return lo, hi


def positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sortjoin", allow_abbrev=False,
                                description="Parallel sort and join on a simulated cluster.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", allow_abbrev=False, help="generate a synthetic dataset")
    g.add_argument("--kind", required=True, choices=["uniform", "zipf", "scalar_skew"])
    g.add_argument("--n", required=True, type=positive_int)
    g.add_argument("--theta", type=float)
    g.add_argument("--domain", type=parse_domain)
    g.add_argument("--skew-count", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--payload-len", type=int, default=rec.DEFAULT_PAYLOAD_LEN)
    g.add_argument("--table", choices=["S", "T", "NONE"], default="NONE")
    g.add_argument("--format", choices=["binary", "text"], default="binary")
    g.add_argument("-o", "--output", required=True)

    s = sub.add_parser("sort", allow_abbrev=False, help="run smms or terasort")
    s.add_argument("--algo", required=True, choices=["smms", "terasort"])
    s.add_argument("--t", required=True, type=positive_int)
    s.add_argument("--r", type=positive_int, help="sampling ratio (smms only, default 1)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=positive_int, default=1)
    s.add_argument("--format", choices=["binary", "text"], default="binary")
    s.add_argument("--debug", action="store_true", help="also write samples.csv (terasort)")
    s.add_argument("-i", "--input", required=True)
    s.add_argument("-o", "--output", required=True)

    j = sub.add_parser("join", allow_abbrev=False, help="run randjoin or statjoin")
    j.add_argument("--algo", required=True, choices=["randjoin", "statjoin"])
    j.add_argument("--t", required=True, type=positive_int)
    j.add_argument("--r", type=positive_int, help="statistics sort sampling ratio (statjoin only)")
    j.add_argument("--seed", type=int, default=0)
    j.add_argument("--workers", type=positive_int, default=1)
    j.add_argument("--format", choices=["binary", "text"], default="binary")
    j.add_argument("--count-only", action="store_true")
    j.add_argument("-s", "--s-table", required=True)
    j.add_argument("-t-table", "--t-table", dest="t_table", required=True)
    j.add_argument("-o", "--output", required=True)

    v = sub.add_parser("verify", allow_abbrev=False, help="compare parts against the oracle")
    v.add_argument("--mode", required=True, choices=["sort", "join"])
    v.add_argument("--format", choices=["binary", "text"], default="binary")
    v.add_argument("-i", "--input")
    v.add_argument("-s", "--s-table")
    v.add_argument("-t-table", "--t-table", dest="t_table")
    v.add_argument("--parts", required=True)

    r = sub.add_parser("report", allow_abbrev=False, help="pretty-print a report.csv")
    r.add_argument("path", help="report.csv or a run directory containing one")
    return p


# -- gen -------------------------------------------------------------------

def cmd_gen(args) -> int:
    table = rec.TAG_BY_NAME[args.table]
    need = {"uniform": {"domain"}, "zipf": {"domain", "theta"}, "scalar_skew": {"skew_count"}}[args.kind]
    given = {name for name in ("domain", "theta", "skew_count") if getattr(args, name) is not None}
    if need - given:
        raise UsageError(f"--kind {args.kind} needs " + ", ".join(f"--{x.replace('_', '-')}" for x in sorted(need - given)))
    if given - need:
        raise UsageError(f"--kind {args.kind} does not take " + ", ".join(f"--{x.replace('_', '-')}" for x in sorted(given - need)))
    common = dict(payload_len=args.payload_len, table=table)
    if args.kind == "uniform":
        data = rec.gen_uniform(args.n, args.domain, args.seed, **common)
    elif args.kind == "zipf":
        data = rec.gen_zipf(args.n, args.domain, args.theta, args.seed, **common)
    else:
        data = rec.gen_scalar_skew(args.n, args.skew_count, args.seed, **common)
    rec.write_dataset(data, args.output, args.format, table)
    print(f"wrote {len(data)} records to {args.output}")
    return EXIT_OK


# -- sort ------------------------------------------------------------------

def _write_parts(parts, out_dir: Path, fmt: str) -> None:
    for old in out_dir.glob(PART_GLOB):
        old.unlink()
    for i, part in enumerate(parts, start=1):
        rec.write_dataset(part, out_dir / part_name(i), fmt)


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_sort(args) -> int:
    if args.algo == "terasort" and args.r is not None:
        raise UsageError("--r applies to smms only")
    if args.algo == "smms" and args.debug:
        raise UsageError("--debug applies to terasort only")
    data = rec.read_dataset(args.input, args.format)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    cluster = create_cluster(args.t, args.seed, args.workers)
    if args.algo == "smms":
        parts, report = smms_sort(cluster, data, r=args.r or 1)
        b = report.boundaries
        _write_rows(out_dir / "boundaries.csv", ["k", "b_k"],
                    [(i, repr(float(x))) for i, x in enumerate(b.values)])
    else:
        samples = [] if args.debug else None
        parts, report = terasort(cluster, data, debug_samples=samples)
        if samples is not None:
            _write_rows(out_dir / "samples.csv", ["machine", "value"],
                        [(m, repr(v)) for m, v in samples])
    _write_parts(parts, out_dir, args.format)
    emit_csv(report, out_dir / "report.csv")
    print(report.summary())
    return EXIT_OK


# -- join ------------------------------------------------------------------

def joined_as_records(joined: np.ndarray) -> np.ndarray:
    """Flatten joined rows to plain records: payload = S payload then T payload."""
    ls = joined.dtype["s_payload"].itemsize
    lt = joined.dtype["t_payload"].itemsize
    pair = np.empty(len(joined), dtype=[("s", f"V{ls}"), ("t", f"V{lt}")])
    pair["s"] = joined["s_payload"]
    pair["t"] = joined["t_payload"]
    out = np.empty(len(joined), dtype=rec.record_dtype(ls + lt))
    out["key"] = joined["key"]
    out["table"] = rec.TAG_NONE
    out["payload"] = pair.view(f"V{ls + lt}")
    return out


def cmd_join(args) -> int:
    if args.algo == "randjoin" and args.r is not None:
        raise UsageError("--r applies to statjoin only")
    S = rec.with_table(rec.read_dataset(args.s_table, args.format), rec.TAG_S)
    T = rec.with_table(rec.read_dataset(args.t_table, args.format), rec.TAG_T)
    if rec.payload_len_of(S) != rec.payload_len_of(T):
        raise ConfigError("S and T must share one payload length")
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    cluster = create_cluster(args.t, args.seed, args.workers)
    materialize = not args.count_only
    if args.algo == "randjoin":
        outputs, counts, report = randjoin(cluster, S, T, materialize)
    else:
        outputs, counts, report, plan = statjoin(cluster, S, T, materialize, r=args.r or 1)
        _write_rows(out_dir / "plan.csv",
                    ["key", "l_s", "h_s", "l_t", "h_t", "machine", "planned_size"],
                    [(r.key, r.l_s, r.h_s, r.l_t, r.h_t, r.machine, r.size)
                     for r in plan.rects])
    if materialize:
        _write_parts([joined_as_records(o) for o in outputs], out_dir, args.format)
    else:
        for old in out_dir.glob(PART_GLOB):
            old.unlink()
    received = cluster.round_log[-1].received
    _write_rows(out_dir / "join-stats.csv", ["machine", "input_records", "output_records"],
                [(i, received[i - 1], c) for i, c in enumerate(counts, start=1)])
    emit_csv(report, out_dir / "report.csv")
    print(report.summary())
    return EXIT_OK


# -- verify ----------------------------------------------------------------

def _read_parts(parts_dir: Path, fmt: str) -> tuple[list, int]:
    """Non-empty parts in machine order, plus the number of part files.

    An empty part file carries no payload length, so it is skipped.
    """
    files = sorted(parts_dir.glob(PART_GLOB))
    parts = [rec.read_dataset(p, fmt) for p in files]
    return [p for p in parts if len(p)], len(files)


def cmd_verify(args) -> int:
    parts_dir = Path(args.parts)
    if args.mode == "sort":
        if args.input is None or args.s_table or args.t_table:
            raise UsageError("--mode sort takes -i only")
        data = rec.read_dataset(args.input, args.format)
        parts, _ = _read_parts(parts_dir, args.format)
        got = np.concatenate(parts) if parts else data[:0]
        ok = rec.encode_binary(got, rec.TAG_NONE) == rec.encode_binary(seq_sort(data), rec.TAG_NONE)
        print(f"sort verification: {'ok' if ok else 'MISMATCH'} ({len(got)} of {len(data)} records)")
        return EXIT_OK if ok else EXIT_MISMATCH
    if args.input is not None or not (args.s_table and args.t_table):
        raise UsageError("--mode join takes -s and -t-table")
    S = rec.read_dataset(args.s_table, args.format)
    T = rec.read_dataset(args.t_table, args.format)
    parts, n_files = _read_parts(parts_dir, args.format)
    if n_files:
        expected, summary = oracle_join(S, T)
        if parts:
            ok = same_multiset(np.concatenate(parts), joined_as_records(expected))
        else:
            ok = summary.W == 0
        detail = f"{sum(len(p) for p in parts)} rows, oracle {summary.W}"
    else:
        stats_file = parts_dir / "join-stats.csv"
        if not stats_file.exists():
            raise ConfigError(f"{parts_dir} holds neither parts nor join-stats.csv")
        with stats_file.open() as fh:
            total = sum(int(row["output_records"]) for row in csv.DictReader(fh))
        _, summary = oracle_join(S, T, materialize=False)
        ok = total == summary.W
        detail = f"count {total}, oracle {summary.W}"
    print(f"join verification: {'ok' if ok else 'MISMATCH'} ({detail})")
    return EXIT_OK if ok else EXIT_MISMATCH


def cmd_report(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "report.csv"
    print(format_report(read_report_csv(path)))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "sort": cmd_sort, "join": cmd_join,
            "verify": cmd_verify, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)   # exits 2 on bad flags
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"sortjoin: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetParseError, OSError, ValueError, SortJoinError) as exc:
        print(f"sortjoin: error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH


if __name__ == "__main__":
    sys.exit(main())
