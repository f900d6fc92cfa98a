"""Command-line front end: solve, mpbp, gen, oracle, bench."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from .decomposition import a_g_solve, mpbp, ssp_solve
from .mdp import INFINITE, ObservationFunction, validate_mdp
from .oracle import BisectionError, OracleOptions, bisect_min_reward, smt_direct, smt_oracle
from .rational import format_rational, parse_rational
from .smt import DEFAULT_COMMAND, SolverConfig, SolverError
from .worlds import WorldSpec, parse_model, save_mdp

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("oopsynth")

EXIT = {"sat": 0, "unsat": 1, "unknown": 2, "timeout": 2, "error": 3}
STATUSES = ("sat", "unsat", "unknown", "timeout", "error")


def parse_threshold(text: str) -> Fraction:
    """Exact rational; plain floats are accepted with a warning."""
    s = str(text).strip()
    if "." in s or "e" in s.lower():
        value = parse_rational(float(s))
        log.warning("threshold %r given as a decimal; using the exact rational %s", s, format_rational(value))
        return value
    return parse_rational(s)


def _reward_json(r):
    if r is None:
        return None
    if r is INFINITE:
        return "inf"
    return float(r)


@dataclass
class RunRecord:
    instance: dict
    method: str
    options: dict
    status: str
    reward: object = None
    time_ms: float = 0.0
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"bad status {self.status!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=str)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls(**json.loads(text))

    @property
    def key(self) -> str:
        return descriptor_key(self.instance, self.method, self.options)


def descriptor_key(instance: dict, method: str, options: dict) -> str:
    blob = json.dumps({"instance": instance, "method": method, "options": options}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


# ------------------------------------------------------------------ running one instance


@dataclass(frozen=True)
class Instance:
    world: WorldSpec
    problem: str
    budget: int
    threshold: Fraction
    strict: bool = False
    mode: str | None = None

    @property
    def resolved_mode(self) -> str:
        if self.mode:
            return self.mode
        return "deterministic" if self.problem == "pdoop" else "randomized"

    def describe(self) -> dict:
        d = self.world.describe()
        d.update(
            problem=self.problem,
            budget=self.budget,
            threshold=format_rational(self.threshold),
            strict=self.strict,
            mode=self.resolved_mode,
        )
        return d


def check_instance(inst: Instance):
    if inst.problem not in ("pop", "pdoop", "ssp"):
        raise ValueError(f"unknown problem {inst.problem!r}")
    if inst.problem == "pdoop" and inst.resolved_mode != "deterministic":
        raise ValueError("pdoop is defined for deterministic strategies; drop --mode randomized")
    if inst.budget < 1:
        raise ValueError("budget must be >= 1")


def run_instance(inst: Instance, method: str, options: OracleOptions, cfg: SolverConfig, relax_repair=False, fallback=False, seed=0) -> RunRecord:
    opts = {
        "encoding": options.encoding,
        "pb": options.pb,
        "bellman": options.bellman,
        "budget_form": options.budget,
        "relax_repair": relax_repair,
        "fallback": fallback,
        "seed": seed,
        "timeout": cfg.timeout,
    }
    start = time.monotonic()
    try:
        check_instance(inst)
        m = inst.world.build()
        problems = validate_mdp(m)
        if problems:
            raise ValueError("invalid MDP: " + "; ".join(problems[:5]))
        mode = inst.resolved_mode
        if method == "smt-direct":
            res = smt_direct(m, inst.problem, inst.budget, inst.threshold, inst.strict, mode, cfg, options, relax_repair)
            status, reward, stats, obs = res.status, res.reward, dict(res.stats), res.obs
        elif method == "decomp":
            if inst.problem == "ssp":
                out = ssp_solve(m, inst.budget, inst.threshold, inst.strict, mode, seed, fallback, cfg, options)
            else:
                out = a_g_solve(m, inst.budget, inst.threshold, inst.strict, inst.problem, mode, fallback, cfg, options, cfg.timeout)
            status, reward, stats, obs = out.status, out.reward, dict(out.stats), out.obs
        else:
            raise ValueError(f"unknown method {method!r}")
        if obs is not None:
            stats["observation"] = list(obs.assignment)
    except (ValueError, SolverError, OSError) as exc:
        status, reward, stats = "error", None, {"error": str(exc)}
    elapsed = (time.monotonic() - start) * 1000
    return RunRecord(inst.describe(), method, opts, status, _reward_json(reward), round(elapsed, 3), stats)


# ------------------------------------------------------------------ argument plumbing


def _add_model(p, required=True):
    p.add_argument("--model", required=required, help="family:k[:goal=center|corner][:rows=r], trap, or file:PATH")
    p.add_argument("--p", default="1", help="line success probability (rational)")


def _add_solver(p):
    p.add_argument("--timeout", type=float, default=180.0, help="per-query solver timeout in seconds")
    p.add_argument("--solver-cmd", default=None, help=f"solver command line (default: {' '.join(DEFAULT_COMMAND)}; env OOP_SOLVER_CMD)")


def _add_encoding(p):
    p.add_argument("--encoding", choices=("real", "bool"), default="real")
    p.add_argument("--pb", action="store_true", help="pseudo-Boolean cardinality atoms")
    p.add_argument("--bellman", choices=("eq", "ineq"), default="ineq")
    p.add_argument("--budget-form", choices=("exact", "at-most"), default="exact")


def _solver_cfg(args) -> SolverConfig:
    cmd = tuple(args.solver_cmd.split()) if getattr(args, "solver_cmd", None) else DEFAULT_COMMAND
    return SolverConfig(cmd, args.timeout)


def _oracle_options(args) -> OracleOptions:
    return OracleOptions(
        "boolean" if args.encoding == "bool" else "real",
        args.pb,
        "equality" if args.bellman == "eq" else "inequality",
        args.budget_form,
    )


def _world(args) -> WorldSpec:
    return parse_model(args.model, args.p)


def _print_record(rec: RunRecord, as_json: bool):
    if as_json:
        print(rec.to_json(), flush=True)
        return
    inst = rec.instance
    cmp = "<" if inst["strict"] else "<="
    name = inst["family"] + (f"({inst['k']})" if "k" in inst else "")
    reward = rec.reward if rec.reward is not None else "-"
    print(f"{inst['problem']:6} {name:12} {cmp} {inst['threshold']:>12} B={inst['budget']:<4} {inst['mode']:13} "
          f"{rec.method:10} {rec.status:8} reward={reward} {rec.time_ms / 1000:.3f}s", flush=True)
    if "error" in rec.stats:
        print(f"error: {rec.stats['error']}", file=sys.stderr)


def cmd_solve(args) -> int:
    method = {"smt": "smt-direct", "decomp": "decomp"}[args.method]
    try:
        inst = Instance(_world(args), args.problem, args.budget, parse_threshold(args.threshold), args.strict, args.mode)
        check_instance(inst)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT["error"]
    rec = run_instance(inst, method, _oracle_options(args), _solver_cfg(args), args.relax_repair, args.fallback, args.seed)
    _print_record(rec, args.json)
    return EXIT[rec.status]


def cmd_mpbp(args) -> int:
    try:
        m = _world(args).build()
        b, witness = mpbp(m, linear=args.linear)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT["error"]
    classes = {o: [f"s{s}" for s in states] for o, states in witness.classes.items()}
    if args.json:
        print(json.dumps({"b_star": b, "witness": classes}, sort_keys=True))
    else:
        print(b)
        for o, states in classes.items():
            print(f"  {o}: {' '.join(states)}")
    return 0


def cmd_gen(args) -> int:
    try:
        m = _world(args).build()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT["error"]
    save_mdp(m, args.out)
    print(f"wrote {m.n_states} states to {args.out}")
    return 0


def _parse_sensors(text: str) -> list[int]:
    out = []
    for tok in text.split(","):
        tok = tok.strip().lstrip("@")
        if not tok:
            continue
        out.append(int(tok[1:] if tok.startswith("s") else tok))
    return out


def cmd_oracle(args) -> int:
    try:
        m = _world(args).build()
        if args.sensors is not None:
            obs = ObservationFunction.location(m, _parse_sensors(args.sensors))
        elif args.obs:
            obs = ObservationFunction.from_json(json.loads(Path(args.obs).read_text()))
        else:
            raise ValueError("give --sensors or --obs")
        problems = obs.check(m)
        if problems:
            raise ValueError("; ".join(problems))
        cfg, options = _solver_cfg(args), _oracle_options(args)
        if args.bisect:
            value = bisect_min_reward(m, obs, tol=args.tol, mode=args.mode, cfg=cfg, options=options)
            print(json.dumps({"min_reward": value}) if args.json else f"{value:.6f}")
            return 0
        if args.threshold is None:
            raise ValueError("give --threshold or --bisect")
        res = smt_oracle(m, obs, parse_threshold(args.threshold), args.strict, None, args.mode, cfg, options)
    except (ValueError, SolverError, BisectionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT["error"]
    out = {"status": res.status, "reward": _reward_json(res.reward)}
    if res.strategy is not None:
        out["strategy"] = res.strategy.to_json()
    print(json.dumps(out, sort_keys=True) if args.json else f"{res.status} reward={out['reward']}")
    return EXIT[res.status]


# ------------------------------------------------------------------ bench


def load_manifest(path) -> tuple[dict, list[dict]]:
    try:
        data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ValueError(f"{path}: {exc}") from None
    rows = data.get("instance", [])
    if not isinstance(rows, list) or not rows:
        raise ValueError(f"{path}: no [[instance]] tables")
    return data.get("defaults", {}), rows


def _row_job(row: dict, defaults: dict, timeout_override, method_override=None):
    merged = {**defaults, **row}
    if method_override:
        merged["method"] = method_override
    world = parse_model(merged["model"], str(merged.get("p", "1")))
    inst = Instance(
        world,
        merged["problem"],
        int(merged["budget"]),
        parse_rational(str(merged["threshold"])),
        bool(merged.get("strict", False)),
        merged.get("mode"),
    )
    options = OracleOptions(
        merged.get("encoding", "real"),
        bool(merged.get("pb", False)),
        merged.get("bellman", "inequality"),
        merged.get("budget_form", "exact"),
    )
    timeout = float(timeout_override or merged.get("timeout", 180))
    method = {"smt": "smt-direct"}.get(merged.get("method", "smt"), merged.get("method", "smt"))
    extra = dict(relax_repair=bool(merged.get("relax_repair", False)), fallback=bool(merged.get("fallback", False)), seed=int(merged.get("seed", 0)))
    return inst, method, options, timeout, extra, merged


def cmd_bench(args) -> int:
    try:
        defaults, rows = load_manifest(args.manifest)
        jobs = [_row_job(r, defaults, args.timeout, args.method) for r in rows]
    except (ValueError, KeyError) as exc:
        print(f"error: manifest: {exc}", file=sys.stderr)
        return EXIT["error"]
    out_path = Path(args.out)
    done: dict[str, dict] = {}
    if out_path.exists():
        for line in out_path.read_text().splitlines():
            if line.strip():
                rec = RunRecord.from_json(line)
                done[rec.key] = json.loads(line)
    cmd = tuple(args.solver_cmd.split()) if args.solver_cmd else DEFAULT_COMMAND
    lock = threading.Lock()
    results: list[tuple[int, RunRecord]] = []

    def work(i, job):
        inst, method, options, timeout, extra, merged = job
        cfg = SolverConfig(cmd, timeout)
        rec = run_instance(inst, method, options, cfg, **extra)
        if "name" in merged:
            rec.stats["name"] = merged["name"]
        for key in ("expect", "reference_status"):
            if key in merged:
                rec.stats[key] = merged[key]
        with lock:
            with out_path.open("a") as fh:
                fh.write(rec.to_json() + "\n")
            results.append((i, rec))
            if not args.quiet:
                _print_record(rec, False)
        return rec

    pending = []
    skipped = 0
    for i, job in enumerate(jobs):
        inst, method, options, timeout, extra, merged = job
        probe = run_key(inst, method, options, timeout, extra)
        if probe in done:
            skipped += 1
            results.append((i, RunRecord.from_json(json.dumps(done[probe]))))
        else:
            pending.append((i, job))
    workers = args.workers or max(1, (os.cpu_count() or 2) - 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(lambda ij: work(*ij), pending))
    results.sort(key=lambda ir: ir[0])
    counts: dict[str, int] = {}
    mismatches = 0
    for _, rec in results:
        counts[rec.status] = counts.get(rec.status, 0) + 1
        if "expect" in rec.stats and rec.stats["expect"] != rec.status:
            mismatches += 1
    summary = {"records": len(results), "skipped": skipped, "statuses": counts, "expectation_mismatches": mismatches}
    print(json.dumps(summary, sort_keys=True))
    return 0


def run_key(inst: Instance, method: str, options: OracleOptions, timeout: float, extra: dict) -> str:
    opts = {
        "encoding": options.encoding,
        "pb": options.pb,
        "bellman": options.bellman,
        "budget_form": options.budget,
        "relax_repair": extra["relax_repair"],
        "fallback": extra["fallback"],
        "seed": extra["seed"],
        "timeout": timeout,
    }
    return descriptor_key(inst.describe(), method, opts)


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oopsynth", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("solve", help="decide one POP / PDOOP / SSP instance")
    _add_model(p)
    p.add_argument("--problem", choices=("pop", "pdoop", "ssp"), required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--threshold", required=True, help="exact rational, e.g. 13248/575")
    p.add_argument("--strict", action="store_true", help="use < instead of <=")
    p.add_argument("--mode", choices=("deterministic", "randomized"), default=None)
    p.add_argument("--method", choices=("decomp", "smt"), default="decomp")
    p.add_argument("--relax-repair", action="store_true", help="SSP: check without budget first, then push it")
    p.add_argument("--fallback", action="store_true", help="solve the full encoding if decomposition finds nothing")
    p.add_argument("--seed", type=int, default=0, help="seed for the SSP initial guess")
    p.add_argument("--json", action="store_true")
    _add_encoding(p)
    _add_solver(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("mpbp", help="minimal positional budget and its witness")
    _add_model(p)
    p.add_argument("--linear", action="store_true", help="linear scan instead of binary search")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_mpbp)

    p = sub.add_parser("gen", help="write a generated world to a JSON MDP file")
    _add_model(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("oracle", help="evaluate one observation function")
    _add_model(p)
    p.add_argument("--sensors", default=None, help="comma list of sensor states, e.g. s1,s2")
    p.add_argument("--obs", default=None, help="JSON observation function file")
    p.add_argument("--threshold", default=None)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--bisect", action="store_true", help="bisect the least feasible threshold")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--mode", choices=("deterministic", "randomized"), default="randomized")
    p.add_argument("--json", action="store_true")
    _add_encoding(p)
    _add_solver(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bench", help="run a TOML manifest of instances")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default="results.ndjson")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--timeout", type=float, default=None, help="override every row's timeout")
    p.add_argument("--method", choices=("smt", "decomp"), default=None, help="override every row's method")
    p.add_argument("--solver-cmd", default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
