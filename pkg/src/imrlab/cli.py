"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 validation divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import calibrate as cal
from .cost_model import format_profile, load_profile, save_profile
from .engine import ModelStore, append_stats_csv, load_and_partition, run_loop
from .ingest import CacheFormatError, ParseError, read_cache, read_text, write_cache
from .ml_bgd import GradNorm, LossKind, MaxIter, bgd_program
from .optimizer import PhysicalPlan, optimize, random_profile, validate_against_sweep
from .simulator import sweep

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def int_list(text: str) -> list[int]:
    """``"2,4,8"`` or an inclusive range ``"2:8"`` (optionally ``"2:32:2"``)."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ":" in part:
            bits = [int(b) for b in part.split(":")]
            if len(bits) not in (2, 3):
                raise argparse.ArgumentTypeError(f"bad range {part!r}")
            lo, hi = bits[0], bits[1]
            step = bits[2] if len(bits) == 3 else 1
            out.extend(range(lo, hi + 1, step))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def cmd_ingest(args) -> int:
    n = write_cache(args.out_cache, read_text(args.text_file))
    print(n)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    profile = cal.calibrate_profile(
        args.budget, args.dim, R=args.records, N_max=args.n_max, nnz=args.nnz,
        sample_size=args.sample_size, trials=args.trials,
    )
    save_profile(profile, args.out, comment="measured on this host by imrlab calibrate")
    sys.stdout.write(format_profile(profile))
    return EXIT_OK


def cmd_plan(args) -> int:
    profile = load_profile(args.profile)
    plan = optimize(profile, args.objective, in_loop=args.in_loop, discrete=args.discrete)
    print(plan.report())
    print(PhysicalPlan.CSV_HEADER)
    print(plan.csv_row())
    return EXIT_OK


def cmd_sweep(args) -> int:
    profile = load_profile(args.profile)
    result = sweep(profile, args.n, args.f)
    text = result.to_csv(args.out)
    if args.out is None:
        sys.stdout.write(text)
    else:
        print(f"wrote {len(result.rows)} rows to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    block = read_cache(args.cache)
    dim = args.dim if args.dim is not None else max(block.max_index + 1, 1)
    stop = GradNorm(args.grad_tol) if args.grad_tol is not None else MaxIter(args.max_iter)
    program = bgd_program(args.loss, args.eta, stop, dim)
    M = args.m if args.m is not None else max(len(block), 1)
    plan = _Plan(args.n, args.fanin)
    parts = load_and_partition(block, args.n, M, spill_dir=args.spill_dir)
    if args.stats_out is not None:
        Path(args.stats_out).unlink(missing_ok=True)
    try:
        model, history = run_loop(program, parts, plan, model_store=ModelStore(args.model_out, program.codec),
                                  stats_csv=args.stats_out, max_iterations=args.max_iter,
                                  workers=args.workers)
    finally:
        for p in parts:
            p.drop_spill()
    if args.stats_out is not None and not history:
        # keep the header so downstream tools always find the file
        append_stats_csv(args.stats_out, [])
    print(f"records={len(block)} dim={dim} iterations={len(history)} "
          f"|w|={float(np.linalg.norm(model.w)):.6g}")
    return EXIT_OK


class _Plan:
    def __init__(self, N, f):
        if N < 1:
            raise UsageError(f"--n must be >= 1, got {N}")
        if f < 2:
            raise UsageError(f"--fanin must be >= 2, got {f}")
        self.N, self.f = N, f


def cmd_validate(args) -> int:
    profiles = []
    if args.profile is not None:
        profiles.append(load_profile(args.profile))
    rng = np.random.default_rng(args.seed)
    n_max = (1, 300) if args.discrete else (1, 2000)
    profiles += [random_profile(rng, n_max) for _ in range(args.trials)]
    diverged = 0
    for profile in profiles:
        for objective in ("time", "cost"):
            rep = validate_against_sweep(profile, objective, discrete=args.discrete)
            if not rep.ok:
                diverged += 1
                print(rep.describe())
    print(f"checked {len(profiles)} profiles x 2 objectives: {diverged} divergences")
    return EXIT_DIVERGED if diverged else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="imrlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="parse a text file into a binary cache file")
    s.add_argument("text_file")
    s.add_argument("out_cache")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("calibrate", help="measure a cluster profile on this host")
    s.add_argument("--budget", type=int, required=True, help="cache memory per task, bytes")
    s.add_argument("--dim", type=int, required=True, help="model dimension")
    s.add_argument("--out", required=True)
    s.add_argument("--records", type=int, default=None, help="R to record in the profile")
    s.add_argument("--n-max", type=int, default=None)
    s.add_argument("--nnz", type=int, default=16, help="features per synthetic record")
    s.add_argument("--sample-size", type=int, default=cal.MIN_STABLE_SAMPLE)
    s.add_argument("--trials", type=int, default=5)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("plan", help="choose N and fan-in for a profile")
    s.add_argument("--profile", required=True)
    s.add_argument("--objective", choices=("time", "cost"), required=True)
    s.add_argument("--in-loop", action=argparse.BooleanOptionalAction, default=True,
                   help="cost a MapReduce inside a loop (default) or a stand-alone one")
    s.add_argument("--discrete", action="store_true", help="cost integer tree heights")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("sweep", help="simulate a grid of plans")
    s.add_argument("--profile", required=True)
    s.add_argument("--n", type=int_list, required=True, help="e.g. 15,24,30 or 1:120")
    s.add_argument("--f", type=int_list, required=True, help="e.g. 2:8")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("run", help="train a linear model with batch gradient descent")
    s.add_argument("--cache", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--fanin", type=int, required=True)
    s.add_argument("--loss", choices=[k.value for k in LossKind], required=True)
    s.add_argument("--eta", type=float, required=True)
    s.add_argument("--max-iter", type=int, required=True)
    s.add_argument("--grad-tol", type=float, default=None)
    s.add_argument("--model-out", required=True)
    s.add_argument("--stats-out", default=None)
    s.add_argument("--m", type=int, default=None, help="records cached per task (default: all)")
    s.add_argument("--dim", type=int, default=None)
    s.add_argument("--spill-dir", default=None)
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("validate", help="check the optimizer against exhaustive sweeps")
    s.add_argument("--profile", default=None)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--discrete", action="store_true")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already reported
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"imrlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ParseError, CacheFormatError, ValueError) as exc:
        print(f"imrlab: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
