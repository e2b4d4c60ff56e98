"""Orchestration: config -> bundle -> sweep -> checks -> destabilizer -> verdict -> files."""
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .. import he_solver as hs
from .. import stability_lab as sl
from ..scenarios import build_bundle
from ..torus_geometry import set_fft_workers
from . import artifacts as art
from .config import ScenarioConfig, canonical_dict, config_hash, emit_config

log = logging.getLogger(__name__)

EXIT_CODES = {"semistable": 0, "unstable": 3, "inconclusive": 4}
EXIT_FAILURE = 1


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(exc).__name__}: {exc}")
        self.stage = stage


@contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@contextmanager
def thread_cap(threads: int):
    # OpenBLAS eigensolvers crash when asked for more threads than cores
    threads = max(1, min(int(threads), os.cpu_count() or 1))
    set_fft_workers(threads)
    try:
        with threadpool_limits(limits=threads):
            yield
    finally:
        set_fft_workers(1)


def seed_streams(seed: int, n: int = 2):
    """Per-purpose generators split from one master seed (SeedSequence.spawn)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def solver_config(cfg: ScenarioConfig) -> hs.SolverConfig:
    t = cfg.tolerances
    return hs.SolverConfig(eps_schedule=cfg.schedule.eps(), tol_residual=t.residual,
                           max_newton_iters=t.max_newton_iters, linear_rtol=t.linear_rtol)


def prepare(cfg: ScenarioConfig):
    """Bundle, metric and normalized background for a config."""
    rng_a, rng_states = seed_streams(cfg.seed)
    with stage("build"):
        bundle, metric = build_bundle(cfg.bundle_spec(), rng_a)
    with stage("normalize"):
        bg = hs.normalize_background(bundle, metric)
    return bundle, metric, bg, rng_states


def sweep_only(cfg: ScenarioConfig):
    bundle, metric, bg, _ = prepare(cfg)
    with stage("sweep"):
        rep = hs.continuity_sweep(bg, solver_config(cfg))
    return bundle, metric, bg, rep


def _row_dict(r: hs.SweepRow) -> dict:
    return asdict(r)


def analyse(cfg: ScenarioConfig, bundle, metric, bg, rep, rng_states) -> dict:
    """Everything after the sweep; returns the report body (without runtime)."""
    report = {"schema_version": art.SCHEMA_VERSION, "config_hash": config_hash(cfg),
              "scenario": cfg.scenario, "config": canonical_dict(cfg)}
    report["bundle"] = {"N": bundle.grid.N, "tau": [bundle.grid.tau.real, bundle.grid.tau.imag],
                        "rank": bundle.rank, "flux": list(bundle.flux), "degree": bundle.degree,
                        "slope": bundle.slope, "lambda": bg.lam, "volume": metric.volume,
                        "max_phi0": bg.max_phi0}
    with stage("degree"):
        deg = sl.degree_and_slope(bg.bundle, metric)
        spread = sl.degree_spread(bg.bundle, metric, sl.random_states(bg.bundle, rng_states, 5))
        deg.detail["metric_spread"] = spread
        report["degree"] = deg.to_dict()
    report["sweep"] = {"rows": [_row_dict(r) for r in rep.rows]}
    results = rep.converged_results()
    with stage("checks"):
        checks = {"trace_free": [], "sup_bound": []}
        for res in results:
            checks["trace_free"].append({"eps": res.eps, **hs.check_trace_free(res, bg)})
            checks["sup_bound"].append({"eps": res.eps, **hs.check_sup_bound(res, bg)})
        if results:
            last = results[-1]
            checks["energy_identity"] = {"eps": last.eps,
                                "lattice": hs.check_energy_identity(last, bg, "lattice"),
                                "centered": hs.check_energy_identity(last, bg, "centered")}
        report["checks"] = checks
    oracle = sl.delta_oracle(bundle, metric)
    destab = None
    with stage("weak_limit"):
        wl = sl.weak_limit_analysis([r.state for r in results], bg.bundle, metric,
                                    [r.eps for r in results])
        report["weak_limit"] = wl.to_dict()
    with stage("destabilizer"):
        if not wl.refused:
            destab = sl.build_destabilizer(wl.u, bg.bundle, metric,
                                           ceiling=cfg.tolerances.constancy_ceiling)
        report["destabilizer"] = None if destab is None else destab.to_dict()
    tests = []
    with stage("section_test"):
        if cfg.tolerances.section_test and results:
            best = results[-1].state
            for F in sl.invariant_coordinate_subbundles(bundle):
                ib = sl.induced_bundle(bundle, metric, F)
                kr = sl.invariant_section_kernel(ib.bundle, metric, ib.induced_state(best),
                                                 ib.lam, gap=cfg.tolerances.kernel_gap)
                tests.append({"subbundle": list(F), "induced_flux": list(ib.bundle.flux),
                              "lambda": ib.lam, "lambda_closed_form": ib.lam_closed_form,
                              **kr.to_dict()})
    report["section_tests"] = tests
    with stage("verdict"):
        v = sl.semistable_verdict(rep, destab, oracle, {"subbundles": len(tests)})
        report["sweep"]["classification"] = v["sweep"]
        report["verdict"] = {"verdict": v["verdict"], "reason": v["reason"],
                             "delta_oracle": oracle}
    return report


def run_scenario(cfg: ScenarioConfig, out_dir: Optional[str] = None, threads: int = 1,
                 checkpoints: bool = True):
    """Run and write all artifacts; returns (RunArtifacts, report)."""
    out = Path(out_dir or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    ckdir = out / "checkpoints"
    paths = art.RunArtifacts(out / "sweep.csv", out / "report.json", ckdir, out / "run.log",
                             config_hash(cfg))
    handler = logging.FileHandler(paths.log_path, mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("semistab")
    root.addHandler(handler)
    old_level, old_prop = root.level, root.propagate
    root.setLevel(logging.INFO)
    root.propagate = False
    t0 = time.perf_counter()
    try:
        log.info("config_hash=%s", paths.config_hash)
        with thread_cap(threads):
            bundle, metric, bg, rng_states = prepare(cfg)
            with stage("sweep"):
                rep = hs.continuity_sweep(bg, solver_config(cfg))
            report = analyse(cfg, bundle, metric, bg, rep, rng_states)
        report["runtime_seconds"] = time.perf_counter() - t0
        with stage("write"):
            art.write_sweep_csv(paths.csv_path, rep.rows, paths.config_hash)
            art.write_report(paths.report_path, report)
            (out / "config.toml").write_text(
                f"# config_hash = {paths.config_hash}\n" + emit_config(cfg))
            if checkpoints:
                ckdir.mkdir(exist_ok=True)
                for i, res in enumerate(rep.results):
                    if res.converged:
                        art.write_checkpoint(ckdir / f"eps_{i:02d}.bin", bg.bundle, metric,
                                             res.state, res.eps)
        paths.verdict = report["verdict"]["verdict"]
        log.info("verdict %s", paths.verdict)
        return paths, report
    finally:
        root.removeHandler(handler)
        root.setLevel(old_level)
        root.propagate = old_prop
        handler.close()
