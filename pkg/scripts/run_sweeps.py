"""Run one or more of the research-question sweeps end to end.

Each sweep trains its grid of agents, evaluates every cell on the
held-out weather preset, and writes results/<rq>/ with per-cell
report.json + curve.csv plus a flat summary.csv. Completed cells are
skipped on re-run (keyed by configuration fingerprint), so the script
is safe to interrupt and resume.

Usage:
    python3 scripts/run_sweeps.py --rq 1 --out results --jobs 2
    python3 scripts/run_sweeps.py --rq all --seeds 3
"""
import argparse
import sys
import time

from hvacrl.evalharness import RQ_RUNNERS, HarnessConfig


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rq", action="append", required=True,
                    choices=tuple(RQ_RUNNERS) + ("all",),
                    help="which sweep to run (repeatable)")
    ap.add_argument("--out", default="results")
    ap.add_argument("--env", choices=("dc", "mu"), default="dc")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--fresh", action="store_true",
                    help="recompute cells even if cached results exist")
    args = ap.parse_args()

    wanted = list(RQ_RUNNERS) if "all" in args.rq else args.rq
    cfg = HarnessConfig(env_kind=args.env, out_dir=args.out,
                        seeds=args.seeds, jobs=args.jobs,
                        skip_existing=not args.fresh)
    for rq in wanted:
        t0 = time.time()
        result = RQ_RUNNERS[rq](cfg)
        rows = sum(len(v) for v in result.cells.values())
        print(f"rq{rq}: {len(result.cells)} cells, {rows} runs, "
              f"{time.time() - t0:.0f}s -> {args.out}/rq{rq}/summary.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
