"""Command-line entry point.

Subcommands: params (parameter computation), run (one round), epoch
(multiple rounds), attack (adversary suite), availability (churn
model), bench (single-chain smoke benchmark).

Exit codes: 0 success, 1 a run finished but some chains aborted or
detections fired, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from .client import outer_ciphertext_size
from .harness import (
    ADVERSARY_MODES,
    WorldConfig,
    attack_suite,
    availability_closed_form,
    availability_sim,
    bench_chain,
    build_world,
    run_epoch,
    write_detections_csv,
    write_reports_csv,
    write_reports_jsonl,
)
from .topology import build_group_sets, compute_chain_length, compute_ell

# Published reference point for the chain-length bound: f=0.2, lambda=64
# quoted as k=32 below 6000 chains.  The exact bound exceeds it by one
# over part of that range; both values are always printed.
REFERENCE_K = 32
REFERENCE_F = "0.2"
REFERENCE_LAMBDA = 64
REFERENCE_N = 6000


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def cmd_params(args) -> int:
    try:
        f = Fraction(args.f)
        if not 0 <= f < 1:
            raise ValueError("f must lie in [0, 1)")
        k = compute_chain_length(f, args.n, args.sec_exponent)
        ell = compute_ell(args.n)
    except (ValueError, ZeroDivisionError) as exc:
        return _fail(str(exc))
    sets = build_group_sets(ell, args.n)
    per_user = max(len(s) for s in sets.dedup)
    per_round_bytes = 2 * per_user * outer_ciphertext_size(k, args.message_size)
    print(f"n = {args.n}")
    print(f"f = {f}")
    print(f"lambda = {args.sec_exponent}")
    print(f"k = {k} (exact bound: smallest k with n*f^k < 2^-lambda)")
    if f == Fraction(REFERENCE_F) and args.sec_exponent == REFERENCE_LAMBDA:
        print(
            f"k reference = {REFERENCE_K} (quoted for n < {REFERENCE_N}; "
            f"exact bound gives {compute_chain_length(f, REFERENCE_N, args.sec_exponent)} at n = {REFERENCE_N})"
        )
    print(f"ell = {ell}")
    print(f"per-user messages = {per_user} per round (plus {per_user} cover)")
    print(
        f"per-user bytes per round = {per_round_bytes} "
        f"({per_user} messages + {per_user} covers of "
        f"{outer_ciphertext_size(k, args.message_size)} bytes)"
    )
    return 0


def _load_config(path: str) -> WorldConfig:
    with open(path) as fh:
        return WorldConfig.load(fh)


def _write_run_outputs(config: WorldConfig, reports, out_dir: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as fh:
        write_reports_csv(reports, fh)
    with open(out / "report.jsonl", "w") as fh:
        write_reports_jsonl(reports, fh)
    with open(out / "detections.csv", "w", newline="") as fh:
        write_detections_csv(reports, fh)
    with open(out / "config-echo.yaml", "w") as fh:
        config.dump(fh)


def _run_rounds(args, rounds: int) -> int:
    try:
        config = _load_config(args.config)
    except (OSError, KeyError, TypeError, ValueError) as exc:
        return _fail(f"cannot load config {args.config}: {exc}")
    world = build_world(config)
    reports = run_epoch(world, rounds)
    _write_run_outputs(config, reports, args.out)
    delivered = sum(r.delivered_conversations for r in reports)
    failed = sum(r.failed_conversations for r in reports)
    detections = sum(len(r.detections) for r in reports)
    aborted = sum(len(r.aborted_chains) for r in reports)
    print(
        f"rounds={len(reports)} delivered={delivered} failed={failed} "
        f"detections={detections} aborted_chains={aborted} out={args.out}"
    )
    return 1 if (detections or aborted) else 0


def cmd_run(args) -> int:
    return _run_rounds(args, rounds=1)


def cmd_epoch(args) -> int:
    if args.rounds < 1:
        return _fail("--rounds must be at least 1")
    return _run_rounds(args, rounds=args.rounds)


def cmd_attack(args) -> int:
    modes = [args.mode] if args.mode != "all" else None
    if args.mode != "all":
        if args.mode not in ADVERSARY_MODES or args.mode == "none":
            return _fail(f"unknown attack mode {args.mode!r}")
    base = WorldConfig(
        n=1,
        k=3,
        user_count=args.users,
        rng_seed=args.seed,
        latency_ms=(1, 2),
    )
    rows = attack_suite(base, modes=modes, trials=args.trials)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "attack.csv", "w", newline="") as fh:
        import csv

        writer = csv.writer(fh)
        writer.writerow(["mode", "trials", "detection_rate", "privacy_outcome"])
        for row in rows:
            writer.writerow(
                [row["mode"], row["trials"], row["detection_rate"], row["privacy_outcome"]]
            )
    for row in rows:
        print(
            f"mode={row['mode']} trials={row['trials']} "
            f"detection_rate={row['detection_rate']} privacy={row['privacy_outcome']}"
        )
    all_detected = all(row["detection_rate"] == 1.0 for row in rows)
    all_private = all(row["privacy_outcome"] == "ok" for row in rows)
    return 0 if (all_detected and all_private) else 1


def cmd_availability(args) -> int:
    if not 0.0 <= args.q <= 1.0:
        return _fail("--q must lie in [0, 1]")
    if args.k < 1 or args.trials < 1:
        return _fail("--k and --trials must be positive")
    estimate = availability_sim(args.n, args.k, args.q, args.trials, seed=args.seed)
    closed = availability_closed_form(args.q, args.k)
    print(
        f"q={args.q} k={args.k} trials={args.trials} "
        f"failure_fraction={estimate:.4f} closed_form={closed:.4f}"
    )
    return 0


def cmd_bench(args) -> int:
    if args.users < 2:
        return _fail("--users must be at least 2")
    result = bench_chain(message_count=args.users, k=args.k, seed=args.seed)
    if args.chains != 1:
        return _fail("the benchmark drives exactly one chain (--chains 1)")
    for name, ms in result["timings_ms"].items():
        print(f"{name}: {ms:.2f} ms")
    print(
        f"messages={result['messages']} delivered={result['delivered']} "
        f"proofs_verified={result['proofs_verified']} "
        f"all_proofs_ok={result['all_proofs_ok']} all_delivered={result['all_delivered']}"
    )
    print(json.dumps(result["timings_ms"], sort_keys=True))
    return 0 if (result["all_proofs_ok"] and result["all_delivered"]) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixmesh",
        description="parallel mix-net chains with verifiable blind-and-shuffle mixing",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="compute chain length, chain sets, user costs")
    p.add_argument("--f", default="0.2", help="assumed malicious server fraction")
    p.add_argument("--n", type=int, required=True, help="number of chains (= servers)")
    p.add_argument("--lambda", dest="sec_exponent", type=int, default=64)
    p.add_argument("--message-size", type=int, default=256)
    p.set_defaults(fn=cmd_params)

    p = sub.add_parser("run", help="run one round from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="out")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("epoch", help="run several rounds with carried state")
    p.add_argument("--config", required=True)
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--out", default="out")
    p.set_defaults(fn=cmd_epoch)

    p = sub.add_parser("attack", help="run the scripted adversary suite")
    p.add_argument("--mode", default="all")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--users", type=int, default=8)
    p.add_argument("--seed", default="attack")
    p.add_argument("--out", default="out")
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("availability", help="server-churn failure model")
    p.add_argument("--q", type=float, required=True, help="per-round server failure probability")
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--trials", type=int, default=100000)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(fn=cmd_availability)

    p = sub.add_parser("bench", help="smoke benchmark: one chain, many messages")
    p.add_argument("--users", type=int, default=10000)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--seed", default="bench")
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
