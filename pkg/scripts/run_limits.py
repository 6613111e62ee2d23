"""Run convergence experiments and write their tables under ``results/``.

    python3 scripts/run_limits.py                      # both shipped configs
    python3 scripts/run_limits.py configs/free_clt.json --threads 2
"""

import argparse
import sys
import time
from pathlib import Path

from freelimit.harness import load_config, run_experiment

ROOT = Path(__file__).resolve().parent.parent


def show(report):
    cols = ("n", "free_dist", "classical_dist", "sigma_dist", "gamma_err", "max_v", "lemma32_gap")
    print("  ".join(f"{c:>14}" for c in cols))
    for r in report.rows:
        print("  ".join(f"{getattr(r, c):>14.6g}" if c != "n" else f"{r.n:>14d}" for c in cols))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="*", default=sorted((ROOT / "configs").glob("*.json")))
    ap.add_argument("--out-dir", default=ROOT / "results", type=Path)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    args.out_dir.mkdir(parents=True, exist_ok=True)

    failed = False
    for path in map(Path, args.configs):
        t0 = time.perf_counter()
        report = run_experiment(load_config(path), threads=args.threads)
        out = args.out_dir / (path.stem + ".csv")
        report.write_csv(out)
        print(f"\n{path.name}: {len(report.rows)} rows in {time.perf_counter() - t0:.1f} s -> {out}")
        show(report)
        for n, errs in report.errors.items():
            failed = True
            for e in errs:
                print(f"  row {n}: {e}", file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
