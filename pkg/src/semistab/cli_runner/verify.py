"""Fixed-seed bundle of identity and property checks across all modules."""
from dataclasses import asdict, dataclass
from typing import List

import numpy as np
import scipy.stats

from .. import herm_calculus as hc
from .. import he_solver as hs
from .. import higgs_bundle as hb
from .. import stability_lab as sl
from ..scenarios import build_bundle, library_spec
from ..torus_geometry import integrate, make_grid, p_operator, solve_p


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tol: float
    detail: str = ""


def _check(name, value, tol, detail=""):
    value = float(value)
    return CheckResult(name, bool(np.isfinite(value) and value <= tol), value, tol, detail)


def _random_herm(rng, shape, r, scale=1.0):
    a = rng.normal(size=shape + (r, r)) + 1j * rng.normal(size=shape + (r, r))
    return scale * hc.hermitian_part(a)


def check_simpson_psi(rng) -> CheckResult:
    """Near the diagonal Psi(x, y) = (e^(y-x) - 1)/(y - x) matches its series."""
    x = rng.uniform(-5, 5, 1000)
    d = 10.0 ** rng.uniform(-12, -4, 1000) * rng.choice([-1, 1], 1000)
    got = hc.simpson_psi(x, x + d)
    series = 1 + d / 2 + d ** 2 / 6 + d ** 3 / 24
    diag = hc.simpson_psi(x, x)
    err = max(np.max(np.abs(got - series)), np.max(np.abs(diag - 1.0)))
    return _check("simpson_psi_removable", err, 1e-13)


def check_sum_rule(rng, trials=1000) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        r = int(rng.integers(2, 6))
        mu = np.sort(rng.uniform(-3, 3, r))
        if np.min(np.diff(mu)) < 1e-3:
            continue
        b, g = rng.choice(r, 2, replace=False)
        val = hc.sum_rule_check(mu, int(b), int(g))
        worst = max(worst, abs(val - 1 / abs(mu[b] - mu[g])) * abs(mu[b] - mu[g]))
    return _check("sum_rule", worst, 1e-12, "relative")


def check_pointwise(rng, trials=10000) -> CheckResult:
    r = 3
    frames = scipy.stats.unitary_group.rvs(r, size=trials, random_state=rng)
    lam = rng.normal(size=(trials, r))
    A = rng.normal(size=(trials, r, r)) + 1j * rng.normal(size=(trials, r, r))
    phi = rng.normal(size=(trials, r, r)) + 1j * rng.normal(size=(trials, r, r))
    dlam = rng.normal(size=(trials, r)) + 1j * rng.normal(size=(trials, r))
    lhs, rhs = hc.pointwise_identity_check(lam, A, phi, dlam, frame=frames)
    worst = float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs))))
    return _check("pointwise_identity", worst, 1e-12, "relative")


def check_trace_identity(rng, trials=1000) -> CheckResult:
    s = _random_herm(rng, (trials,), 3)
    ds = _random_herm(rng, (trials,), 3)
    return _check("trace_identity", hc.trace_identity_check(s, ds), 1e-10)


def check_degree(rng, bug=False, N=16, count=20) -> List[CheckResult]:
    out = []
    for name in ("E1", "E2", "E3", "E4"):
        b, m = build_bundle(library_spec(name, N=N), rng)
        b = b.replace(bug_flip_background=bug)
        states = sl.random_states(b, rng, count)
        err = max(abs(hb.degree_of(b, m, st) - b.degree) for st in states)
        out.append(_check(f"degree_quantization_{name}", err, 1e-8))
    return out


def check_sbp_poisson(rng, N=32) -> List[CheckResult]:
    g, m = make_grid(N, 0.2 + 1.1j, {"kind": "cosine", "amplitude": 0.3, "mode": [1, 1]})
    b = hb.make_background(g, 2, (1, -1))
    X = _random_herm(rng, (N, N), 2)
    Y = rng.normal(size=(N, N, 2, 2)) + 1j * rng.normal(size=(N, N, 2, 2))
    sbp = 0.0
    for mu in (0, 1):
        lhs = np.sum(hc.trace(hb.delta_star(Y, b, mu) @ X))
        rhs = -np.sum(hc.trace(Y @ hb.delta(X, b, mu)))
        sbp = max(sbp, abs(lhs - rhs) / max(1.0, abs(rhs)))
    # band-limited rhs, so the spectral scheme's dropped Nyquist line plays no role
    x, y = g.xy
    f = np.zeros((N, N))
    for k1 in range(-3, 4):
        for k2 in range(-3, 4):
            f += rng.normal() * np.cos(2 * np.pi * (k1 * x + k2 * y) + rng.uniform(0, 2 * np.pi))
    f = f / m.weight
    f = f - integrate(f, m) / m.volume
    pois = 0.0
    for scheme in ("spectral", "lattice"):
        back = p_operator(solve_p(f, m, scheme), m, scheme)
        pois = max(pois, float(np.max(np.abs(back - f))) / float(np.max(np.abs(f))))
    return [_check("summation_by_parts", sbp, 1e-12), _check("poisson_inversion", pois, 1e-12)]


def check_solver(N=16) -> List[CheckResult]:
    b, m = build_bundle(library_spec("E2", N=N, weight={"kind": "cosine", "amplitude": 0.3,
                                                         "mode": [1, 0]}))
    bg = hs.normalize_background(b, m)
    res = hs.solve_at_eps(0.5, bg)
    tf = hs.check_trace_free(res, bg)
    sb = hs.check_sup_bound(res, bg)
    ei = hs.check_energy_identity(res, bg, "lattice")
    return [
        _check("solver_residual", res.residual, bg.tol_residual()),
        _check("trace_free", max(tf["max_tr_s"], tf["det_f_err"]), 1e-8),
        _check("sup_bound", sb["eps_m"] - sb["bound"], 1e-6),
        _check("energy_identity_lattice", abs(ei["relative"]), 1e-8),
    ]


def check_weitzenbock(rng, N=16) -> List[CheckResult]:
    g, m = make_grid(N)
    neg = hb.make_background(g, 1, (-1,))
    sec = rng.normal(size=(N, N, 1)) + 1j * rng.normal(size=(N, N, 1))
    rep = sl.weitzenbock_check(sec, neg, m)
    triv = sl.weitzenbock_check(np.ones((N, N, 1)), hb.make_background(g, 1, (0,)), m)
    return [_check("weitzenbock_vanishing", 0.0 if rep.certifies_vanishing else 1.0, 0.5),
            _check("weitzenbock_trivial", abs(triv.min_margin), 1e-10)]


def verify_suite(seed: int = 0, inject_bug: bool = False) -> dict:
    rng = np.random.default_rng(seed)
    checks: List[CheckResult] = []
    checks.append(check_simpson_psi(rng))
    checks.append(check_sum_rule(rng))
    checks.append(check_pointwise(rng))
    checks.append(check_trace_identity(rng))
    checks += check_degree(rng, inject_bug)
    checks += check_sbp_poisson(rng)
    checks += check_solver()
    checks += check_weitzenbock(rng)
    return {"seed": seed, "inject_bug": inject_bug, "passed": all(c.passed for c in checks),
            "checks": [asdict(c) for c in checks]}
