"""Command line entry point.

Exit status 0 on success, 1 on configuration or usage errors, 2 on runtime
failures. Failures print one line ``kinlab: status=<code> kind=<kind>
reason=<text>`` on stderr.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..phase import ContractError
from .config import ConfigError, ExperimentConfig, ensure_writable

SUBCOMMANDS = ("simulate", "graphs", "estimate", "boltzmann", "compare", "sweep", "penrose")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _csv_floats(text: str) -> tuple:
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _u64(text: str) -> int:
    try:
        val = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from exc
    if not 0 <= val < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return val


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value config file")
    common.add_argument("--seed", type=_u64, metavar="U64", help="override the base seed")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides out_dir)")
    common.add_argument("--time-samples", type=_csv_floats, metavar="CSV", help="times in mean free times")
    p = _Parser(prog="kinlab", description="hard-sphere kinetic limit laboratory")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", parser_class=_Parser)
    sub.required = True
    sub.add_parser("simulate", parents=[common], help="run the seeded ensemble and persist event logs")
    sub.add_parser("graphs", parents=[common], help="cluster statistics from persisted logs")
    sub.add_parser("estimate", parents=[common], help="binned f1 and E2 from persisted logs")
    sub.add_parser("boltzmann", parents=[common], help="solve the Boltzmann equation and persist fields")
    cmp_ = sub.add_parser("compare", parents=[common], help="L1 distance between estimate and boltzmann outputs")
    cmp_.add_argument("--estimate-dir", metavar="DIR")
    cmp_.add_argument("--boltzmann-dir", metavar="DIR")
    sw = sub.add_parser("sweep", parents=[common], help="full pipeline over an eps list with slope fits")
    sw.add_argument("--eps-list", type=_csv_floats, metavar="CSV", default=(1e-2, 3e-3, 1e-3))
    pen = sub.add_parser("penrose", help="exhaustive check of |phi| <= spanning tree count")
    pen.add_argument("--max-n", type=int, default=5, metavar="INT")
    return p


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig() if args.config is None else ExperimentConfig.load(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["out_dir"] = args.out
    if args.time_samples is not None:
        ts = tuple(sorted(args.time_samples))
        over["time_samples"] = ts
        over["t_end"] = max(cfg.t_end, ts[-1]) if ts else cfg.t_end
    return cfg.replace(**over) if over else cfg


def _run(args, out) -> int:
    from . import ensemble, study

    if args.command == "penrose":
        from ..graphs import verify_penrose

        if not 1 <= args.max_n <= 6:
            raise ConfigError("--max-n must be between 1 and 6")
        bad = 0
        for n, (count, violations) in sorted(verify_penrose(args.max_n).items()):
            bad += violations
            m = n * (n - 1) // 2
            if violations:
                print(f"{violations} of 2^{m} overlap matrices (n={n}) violate |phi| <= tree count", file=out)
            else:
                print(f"all 2^{m} overlap matrices (n={n}) satisfy |phi| <= tree count", file=out)
        if bad:
            raise RuntimeError(f"{bad} Penrose bound violations")
        return 0

    cfg = _load_config(args)
    root = ensure_writable(cfg.out_dir)
    if args.command == "simulate":
        man = ensemble.run_ensemble(cfg, root / "run")
        total = sum(m.n_events for m in man.members)
        print(f"{len(man.members)} members, {total} events, manifest {root / 'run' / ensemble.MANIFEST}", file=out)
        if not man.ok:
            raise RuntimeError(f"{len(man.failures)} members failed; first: {man.failures[0].error}")
    elif args.command == "graphs":
        for s in study.graphs(cfg, root / "run", root / "graphs"):
            print(f"window [{s['t0_mft']:g}, {s['t1_mft']:g}] mft: cycle fraction {s['cycle_fraction']:.4g} "
                  f"+- {s['cycle_noise']:.2g}, largest fraction {s['largest_fraction']:.4g}", file=out)
    elif args.command == "estimate":
        res = study.estimate(cfg, root / "run", root / "estimate")
        norm, floor = res["e2"]
        print(f"|E2|_L1 at t={cfg.chaos_time:g} mft: {norm:.4g} (noise floor {floor:.3g})", file=out)
    elif args.command == "boltzmann":
        fields = study.boltzmann(cfg, root / "boltzmann")
        print(f"{len(fields)} fields written to {root / 'boltzmann'}", file=out)
    elif args.command == "compare":
        est = Path(args.estimate_dir) if args.estimate_dir else root / "estimate"
        sol = Path(args.boltzmann_dir) if args.boltzmann_dir else root / "boltzmann"
        for t, d, noise in study.compare(est, sol, root / "compare", cfg.n_boot, cfg.seed):
            print(f"t={t:g} mft: L1 distance {d:.4g} +- {noise:.2g}", file=out)
    elif args.command == "sweep":
        rep = study.convergence_study(cfg, args.eps_list, root / "sweep", log=lambda m: print(m, file=out))
        for t in rep.times:
            vals = ", ".join(f"{d:.4g}+-{n:.2g}" for d, n in rep.distances[t])
            print(f"t={t:g} mft distances: {vals}", file=out)
        print(f"chaos slope {rep.chaos_slope:.3f}", file=out)
    return 0


def _fail(code: int, kind: str, reason: str) -> int:
    reason = " ".join(str(reason).split())
    print(f"kinlab: status={code} kind={kind} reason={reason}", file=sys.stderr)
    return code


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(1, "usage", exc)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _run(args, out)
    except ContractError as exc:
        return _fail(1, "config", exc)
    except Exception as exc:
        from .study import StageError

        if isinstance(exc, StageError):
            if isinstance(exc.cause, ContractError):
                return _fail(1, f"config stage={exc.stage}", exc)
            return _fail(2, f"runtime stage={exc.stage}", exc)
        return _fail(2, "runtime", f"{type(exc).__name__}: {exc}")


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
