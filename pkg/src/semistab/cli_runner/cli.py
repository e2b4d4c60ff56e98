"""Command line: run, sweep, verify, report."""
import argparse
import json
import logging
import sys
from pathlib import Path

from ..errors import ConfigurationError
from . import artifacts as art
from .config import canonical_dict, config_from_dict, config_hash, parse_config
from .runner import EXIT_CODES, EXIT_FAILURE, StageError, run_scenario, sweep_only, thread_cap
from .verify import verify_suite


def _load_config(args):
    if args.config:
        cfg = parse_config(Path(args.config).read_text())
        if args.scenario and cfg.scenario != args.scenario:
            raise ConfigurationError("--scenario disagrees with the config file")
    elif args.scenario:
        cfg = config_from_dict({"scenario": args.scenario})
    else:
        raise ConfigurationError("give --scenario or --config")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.N is not None and cfg.grid.N != args.N:
        d = canonical_dict(cfg)
        d["grid"]["N"] = args.N
        cfg = config_from_dict(d)
    if args.out:
        cfg.output.dir = args.out
    return cfg


def _common(p):
    p.add_argument("--scenario", choices=["E1", "E2", "E3", "E4"])
    p.add_argument("--config", help="TOML scenario config")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--threads", type=int, default=1, help="cap on FFT/BLAS threads")
    p.add_argument("--N", type=int, help="grid size (overrides the config)")


def build_parser():
    ap = argparse.ArgumentParser(prog="semistab")
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="sweep, checks, destabilizer, verdict and artifacts"))
    _common(sub.add_parser("sweep", help="only the eps sweep and its CSV"))
    v = sub.add_parser("verify", help="fixed-seed identity and property suite")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--seeds", type=int, default=1, help="run seeds seed..seed+n-1")
    v.add_argument("--inject-bug", action="store_true", help="flip the plaquette curvature sign")
    v.add_argument("--out", help="write results JSON here")
    v.add_argument("--threads", type=int, default=1)
    r = sub.add_parser("report", help="summarize a finished run directory")
    r.add_argument("--out", required=True)
    return ap


def cmd_run(args):
    cfg = _load_config(args)
    paths, report = run_scenario(cfg, cfg.output.dir, threads=args.threads)
    v = report["verdict"]
    print(f"verdict: {v['verdict']} ({v['reason']})")
    print(f"artifacts: {paths.csv_path} {paths.report_path} {paths.checkpoint_dir}")
    return EXIT_CODES[v["verdict"]]


def cmd_sweep(args):
    cfg = _load_config(args)
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    with thread_cap(args.threads):
        _, _, _, rep = sweep_only(cfg)
    path = art.write_sweep_csv(out / "sweep.csv", rep.rows, config_hash(cfg))
    print(path)
    return 0 if all(r.converged for r in rep.rows) else EXIT_FAILURE


def cmd_verify(args):
    results = []
    with thread_cap(args.threads):
        for seed in range(args.seed, args.seed + args.seeds):
            res = verify_suite(seed, inject_bug=args.inject_bug)
            results.append(res)
            for c in res["checks"]:
                print(f"{'PASS' if c['passed'] else 'FAIL'} seed={seed} {c['name']} "
                      f"value={c['value']:.3e} tol={c['tol']:.1e}")
    ok = all(r["passed"] for r in results)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps({"passed": ok, "runs": results}, indent=2) + "\n")
    print("all passed" if ok else "FAILURES")
    return 0 if ok else EXIT_FAILURE


def cmd_report(args):
    out = Path(args.out)
    rep = art.read_report(out / "report.json")
    csv = art.read_sweep_csv(out / "sweep.csv")
    b = rep["bundle"]
    print(f"scenario {rep['scenario']}  N={b['N']} rank={b['rank']} flux={b['flux']} "
          f"config_hash={rep['config_hash'][:12]}")
    print("  " + "  ".join(f"{c:>12s}" for c in csv["columns"]))
    for row in csv["data"]:
        print("  " + "  ".join(f"{x:12.5g}" for x in row))
    print(f"sweep: {rep['sweep']['classification']['verdict']}")
    if rep["destabilizer"]:
        d = rep["destabilizer"]
        print(f"destabilizer: {d['verdict']} slopes={d['slopes']} nu={d['nu_degree_form']}")
    for t in rep["section_tests"]:
        print(f"section test F={t['subbundle']} flux(G)={t['induced_flux']} "
              f"dim={t['dimension']} gap={t['gap_factor']:.3g}")
    print(f"verdict: {rep['verdict']['verdict']} ({rep['verdict']['reason']})")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify,
                "report": cmd_report}[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: stage 'config': {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
