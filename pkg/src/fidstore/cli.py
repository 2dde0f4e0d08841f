"""fidstore-bench: reproduce the cost, storage, and workload comparisons.

Subcommands: ops (per-operation latency vs AEAD), storage (layout
arithmetic), workload (simulator sweep, CSV row per run), crash-matrix
(exit nonzero on any external-synchrony violation). FIDSTORE_DIR selects
a directory for file-backed runs; by default everything stays in memory.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from .bench import (
    MATRIX_CSV_COLUMNS,
    WORKLOAD_CSV_COLUMNS,
    bench_ops,
    bench_storage,
    bench_workload,
    default_matrix_spec,
    run_crash_matrix,
)
from .workload import Distribution, Mode, WorkloadSpec


def _write_csv(path: str | None, columns: list[str], rows: list[dict]) -> None:
    out = open(path, "w", newline="") if path else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if path:
            out.close()


def _cmd_ops(args: argparse.Namespace) -> int:
    report = bench_ops(args.iters)
    print(f"iterations              {report.iters}")
    for name, ns, p99 in (
        ("put", report.put_ns, report.put_ns_p99),
        ("get", report.get_ns, report.get_ns_p99),
        ("aead_encrypt_field", report.encrypt_ns, report.encrypt_ns_p99),
        ("aead_decrypt_field", report.decrypt_ns, report.decrypt_ns_p99),
    ):
        cycles = report.cycles(ns)
        cyc = f"{cycles:10.0f} cycles" if cycles is not None else "      n/a"
        print(f"{name:22s}  median {ns:8.1f} ns  p99 {p99:8.1f} ns  {cyc}")
    print(f"encrypt/put ratio       {report.encrypt_over_put:.2f}x")
    print(f"decrypt/get ratio       {report.decrypt_over_get:.2f}x")
    if args.out:
        _write_csv(args.out, ["op", "median_ns", "p99_ns", "cycles"], [
            {"op": n, "median_ns": ns, "p99_ns": p99,
             "cycles": report.cycles(ns)}
            for n, ns, p99 in (
                ("put", report.put_ns, report.put_ns_p99),
                ("get", report.get_ns, report.get_ns_p99),
                ("aead_encrypt_field", report.encrypt_ns, report.encrypt_ns_p99),
                ("aead_decrypt_field", report.decrypt_ns, report.decrypt_ns_p99),
            )
        ])
    return 0


def _cmd_storage(args: argparse.Namespace) -> int:
    report = bench_storage(args.fields, args.width)
    print(f"fields                   {report.fields} x {report.width} B")
    print(f"plaintext total          {report.plaintext_total} B")
    print(f"ciphertext total         {report.ciphertext_total} B "
          f"({report.metadata_aead_per_field} B metadata/field)")
    print(f"fid scheme total         {report.fid_total} B "
          f"(dbms {report.fid_dbms_bytes} + store {report.fid_store_bytes}"
          f" + seal {report.fid_seal_overhead})")
    print(f"metadata per field       {report.metadata_fid_per_field} B vs "
          f"{report.metadata_aead_per_field} B "
          f"({report.metadata_reduction_pct:.1f}% reduction)")
    if args.out:
        _write_csv(args.out, list(vars(report)), [vars(report)])
    return 0


def _spec_from_args(args: argparse.Namespace) -> WorkloadSpec:
    return WorkloadSpec(
        mode=Mode(args.mode),
        distribution=Distribution(args.dist),
        theta=args.theta,
        tables=args.tables,
        rows_per_table=args.rows,
        duration_ops=args.ops,
        threads_simulated=args.threads,
        batch_size=args.batch,
    )


def _cmd_workload(args: argparse.Namespace) -> int:
    data_dir = args.data_dir or os.environ.get("FIDSTORE_DIR")
    rows = []
    modes = [args.mode] if args.mode != "all" else [m.value for m in Mode]
    for mode in modes:
        args.mode = mode
        spec = _spec_from_args(args)
        _, row = bench_workload(args.seed, spec, backend=args.backend,
                                cache_pct=args.cache_pct, data_dir=data_dir)
        rows.append(row)
        print(f"{mode:14s} backend={args.backend:6s} ops={row['ops']:6d} "
              f"round_trips={row['round_trips']:7d} hit_rate={row['hit_rate']:.3f} "
              f"crypto={row['store_seals'] + row['store_opens'] + row['cipher_field_crypto']}")
    _write_csv(args.out, WORKLOAD_CSV_COLUMNS, rows)
    return 0


def _cmd_crash_matrix(args: argparse.Namespace) -> int:
    spec = default_matrix_spec(args.ops)
    printed = []

    def on_row(row: dict) -> None:
        printed.append(row)
        print(f"{row['crash_point']:38s} seed={row['seed']} fired={row['fired']} "
              f"violations={row['violations']} orphans_pre={row['orphans_pre_gc']} "
              f"orphans_post={row['orphans_post_gc']}")

    rows = run_crash_matrix(args.seeds, spec, base_seed=args.seed, on_row=on_row)
    _write_csv(args.out, MATRIX_CSV_COLUMNS, rows)
    violations = sum(r["violations"] for r in rows)
    if violations:
        print(f"FAIL: {violations} dangling-FID violations", file=sys.stderr)
        return 1
    print(f"ok: {len(rows)} runs, 0 violations")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fidstore-bench",
        description="cost/storage/workload benchmarks for the FID mapping store")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ops = sub.add_parser("ops", help="put/get vs AEAD field op latency")
    p_ops.add_argument("--iters", type=int, default=1_000_000)
    p_ops.add_argument("--out", default=None)
    p_ops.set_defaults(fn=_cmd_ops)

    p_storage = sub.add_parser("storage", help="storage layout arithmetic")
    p_storage.add_argument("--fields", type=int, default=1_000_000)
    p_storage.add_argument("--width", type=int, default=4)
    p_storage.add_argument("--out", default=None)
    p_storage.set_defaults(fn=_cmd_storage)

    p_work = sub.add_parser("workload", help="simulator workload sweep")
    p_work.add_argument("--mode", default="read-write",
                        choices=[m.value for m in Mode] + ["all"])
    p_work.add_argument("--dist", default="uniform",
                        choices=[d.value for d in Distribution])
    p_work.add_argument("--theta", type=float, default=0.8)
    p_work.add_argument("--tables", type=int, default=2)
    p_work.add_argument("--rows", type=int, default=500)
    p_work.add_argument("--ops", type=int, default=2000)
    p_work.add_argument("--threads", type=int, default=1)
    p_work.add_argument("--batch", type=int, default=256)
    p_work.add_argument("--cache-pct", type=float, default=None)
    p_work.add_argument("--seed", type=int, default=42)
    p_work.add_argument("--backend", default="fid", choices=["fid", "cipher"])
    p_work.add_argument("--data-dir", default=None)
    p_work.add_argument("--out", default=None)
    p_work.set_defaults(fn=_cmd_workload)

    p_matrix = sub.add_parser("crash-matrix", help="crash points x seeds")
    p_matrix.add_argument("--seeds", type=int, default=100)
    p_matrix.add_argument("--ops", type=int, default=10_000)
    p_matrix.add_argument("--seed", type=int, default=1000,
                          help="base seed for the sweep")
    p_matrix.add_argument("--out", default=None)
    p_matrix.set_defaults(fn=_cmd_crash_matrix)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
