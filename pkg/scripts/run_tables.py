#!/usr/bin/env python3
"""Run the benchmark manifest with both methods and compare verdicts.

Results are appended to ndjson files (reruns resume where they stopped);
the comparison columns are the expected verdict, the verdict recorded for
the original tool runs, and what each method returned here.
"""
import argparse
import json
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load(path: Path) -> dict:
    out = {}
    if path.exists():
        for line in path.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                out[(rec["stats"].get("name"), rec["instance"]["strict"], rec["instance"]["threshold"])] = rec
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--manifest", default=str(ROOT / "manifests" / "tables12.toml"))
    ap.add_argument("--outdir", default=str(ROOT / "results"))
    ap.add_argument("--methods", default="decomp,smt", help="comma list out of decomp,smt")
    ap.add_argument("--timeout", type=float, default=None, help="override the manifest timeout")
    ap.add_argument("--skip-run", action="store_true", help="only compare existing result files")
    args = ap.parse_args()

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.manifest).stem
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    files = {m: outdir / f"{stem}_{m}.ndjson" for m in methods}
    if not args.skip_run:
        for m, path in files.items():
            cmd = [sys.executable, "-m", "oopsynth.cli", "bench", "--manifest", args.manifest, "--out", str(path), "--method", m]
            if args.timeout:
                cmd += ["--timeout", str(args.timeout)]
            subprocess.run(cmd, check=True)

    results = {m: load(p) for m, p in files.items()}
    keys = sorted({k for r in results.values() for k in r}, key=lambda k: [str(x) for x in k])
    header = f"{'instance':<10} {'cmp':<3} {'threshold':>12} {'expect':<7} {'recorded':<8} " + " ".join(f"{m:<16}" for m in methods)
    print(header)
    agree = {m: 0 for m in methods}
    for key in keys:
        name, strict, tau = key
        any_rec = next(r[key] for r in results.values() if key in r)
        expect = any_rec["stats"].get("expect", "-")
        recorded = any_rec["stats"].get("reference_status", "-")
        cells = []
        for m in methods:
            rec = results[m].get(key)
            if rec is None:
                cells.append("-")
                continue
            agree[m] += rec["status"] == expect
            cells.append(f"{rec['status']} {rec['time_ms'] / 1000:.2f}s")
        print(f"{name:<10} {'<' if strict else '<=':<3} {tau:>12} {expect:<7} {recorded:<8} " + " ".join(f"{c:<16}" for c in cells))
    for m in methods:
        print(f"{m}: {agree[m]}/{len(results[m])} match the expected verdict")


if __name__ == "__main__":
    main()
