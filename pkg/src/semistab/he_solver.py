"""The perturbed Hermitian-Einstein equation and its continuity sweep.

For a Higgs bundle with background metric H0 and H = H0 exp(s) we solve

    L_eps(s) = K_H - lambda Id + eps s = 0

for a decreasing list of eps. Newton works with the Hermitian residual
R(s) = g L_eps g^-1, g = exp(s/2), whose zeros are those of L_eps and
whose pointwise Frobenius norm is |L_eps|_H.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg

from . import herm_calculus as hc
from . import higgs_bundle as hb
from .errors import ConfigurationError, SolvabilityError, SweepError
from .herm_calculus import EXP_CAP, dagger, frob, trace
from .higgs_bundle import HermitianState, HiggsBundleData
from .krylov import gmres, real_norm
from .torus_geometry import (ConformalMetric, fft2, ifft2, integrate, p_operator,
                             p_symbol_flat, solve_p)

log = logging.getLogger(__name__)

DECISION_THRESHOLD = 0.1
STAGNATION = 0.05
TOL_DISC = 1e-6


def geometric_schedule(start: float = 1.0, stop: float = 1e-3, steps: int = 10):
    return tuple(float(x) for x in np.geomspace(start, stop, steps))


@dataclass
class SolverConfig:
    eps_schedule: Sequence[float] = field(default_factory=geometric_schedule)
    tol_residual: Optional[float] = None      # default 1e-9 (1 + max|Phi(H0)|)
    max_newton_iters: int = 40
    initial_step: float = 1.0
    backtrack: float = 0.5
    max_backtracks: int = 30
    linear_rtol: float = 1e-4
    gmres_restart: int = 40
    gmres_maxiter: int = 400
    tol_trace: float = 1e-8
    cross_tol: float = 1e-6
    refinement: Sequence[int] = (16, 32, 64)

    def __post_init__(self):
        sched = np.asarray(self.eps_schedule, dtype=float)
        if sched.size == 0 or np.any(sched <= 0) or sched[0] > 1 or np.any(np.diff(sched) >= 0):
            raise ConfigurationError("eps schedule must be strictly decreasing in (0, 1]")
        if self.tol_residual is not None and self.tol_residual <= 0:
            raise ConfigurationError("tol_residual must be positive")
        self.eps_schedule = tuple(float(e) for e in sched)


@dataclass(eq=False)
class Background:
    """A normalized Higgs bundle together with everything fixed by H0."""
    bundle: HiggsBundleData
    metric: ConformalMetric
    lam: float
    phi0: np.ndarray          # Phi(H0) = K_H0 - lambda Id, H0-Hermitian

    @property
    def max_phi0(self) -> float:
        return float(np.max(frob(self.phi0)))

    def tol_residual(self, config: Optional[SolverConfig] = None) -> float:
        if config is not None and config.tol_residual is not None:
            return config.tol_residual
        return 1e-9 * (1.0 + self.max_phi0)


def normalize_background(bundle: HiggsBundleData, metric: ConformalMetric,
                         lam: Optional[float] = None) -> Background:
    """Conformal change making tr Phi(H0) = 0 pointwise.

    The conformal factor solves P_lat(phi) = -(1/r) tr(K_H0' - lambda Id); the
    lattice scalar operator is the exact trace of the curvature stencil, so
    the normalization holds to round-off.
    """
    lam = hb.lam_constant(bundle, metric) if lam is None else float(lam)
    r = bundle.rank
    K = hb.K_H0(bundle, metric)
    rhs = -np.real(trace(K) - r * lam) / r
    try:
        phi = solve_p(rhs, metric, scheme="lattice")
    except SolvabilityError as exc:
        raise ConfigurationError(f"degree and volume are inconsistent: {exc}") from exc
    nb = bundle.replace(conformal=bundle.conformal + phi)
    K = hb.K_H0(nb, metric)
    phi0 = hc.hermitian_part(K) - lam * np.eye(r)
    return Background(nb, metric, lam, phi0)


def raw_background(bundle: HiggsBundleData, metric: ConformalMetric,
                   lam: Optional[float] = None) -> Background:
    """Background without the conformal normalization."""
    lam = hb.lam_constant(bundle, metric) if lam is None else float(lam)
    phi0 = hc.hermitian_part(hb.K_H0(bundle, metric)) - lam * np.eye(bundle.rank)
    return Background(bundle, metric, lam, phi0)


# Residuals ---------------------------------------------------------------------

@dataclass
class ResidualEval:
    state: HermitianState
    R: np.ndarray             # g L g^-1 in the standard frame, Hermitian
    phi_t: np.ndarray         # g Phi(H) g^-1 in the eigenframe of s
    raw_defect: np.ndarray


def evaluate(bg: Background, state: HermitianState, eps: float) -> ResidualEval:
    parts = hb.curvature_parts(bg.bundle, bg.metric, state)
    e = parts.eig
    r = bg.bundle.rank
    phi_t = parts.hermitian_K - bg.lam * np.eye(r)
    rt = phi_t + eps * (np.eye(r) * e.eigenvalues[..., None, :])
    v = e.eigenvectors
    R = hc.hermitian_part(v @ rt @ dagger(v))
    return ResidualEval(state, R, phi_t, parts.raw_defect)


def residual_L_eps(state: HermitianState, eps: float, bundle: HiggsBundleData,
                   metric: ConformalMetric, lam: Optional[float] = None) -> np.ndarray:
    """L_eps written as K_H0 - lambda + metric term + Higgs difference + eps s.

    This assembly uses matrix exponentials and the block-exponential
    derivative instead of the eigenframe Psi, so it is an independent path to
    the same lattice quantity as mean_curvature_K - lambda + eps s. The result
    is H-self-adjoint (not H0-self-adjoint).
    """
    lam = hb.lam_constant(bundle, metric) if lam is None else lam
    s = state.s_field
    r = bundle.rank
    f = scipy.linalg.expm(s)
    finv = scipy.linalg.expm(-s)
    K0 = hb.K_H0(bundle, metric)

    def log_derivative(base, X):
        return scipy.linalg.expm(-base) @ hc.dexp_block(base, X)

    grid = bundle.grid
    cc, dd = grid.c, grid.d
    Z = np.zeros_like(s)
    for mu in (0, 1):
        sbar = hb.edge_average(s, bundle, mu)
        Z = Z + dd[mu] * cc[mu] * hb.delta_star(
            log_derivative(sbar, hb.delta(s, bundle, mu)), bundle, mu)
    cen = [hb.delta_c(s, bundle, 0), hb.delta_c(s, bundle, 1)]
    for mu, nu in ((0, 1), (1, 0)):
        Z = Z + dd[mu] * cc[nu] * hb.delta_c(log_derivative(s, cen[nu]), bundle, mu)
    a = bundle.a_field
    if np.any(a):
        ca = hb.comm(dagger(a), s)
        for mu in (0, 1):
            Z = Z - dd[mu] * hb.delta_c(log_derivative(s, ca), bundle, mu)
        Z = Z + hb.comm(a, log_derivative(s, cc[0] * cen[0] + cc[1] * cen[1] - ca))
    two_w = (2.0 / metric.weight)[..., None, None]
    phi = bundle.phi_field
    body = -two_w * Z + two_w * hb.comm(phi, finv @ dagger(phi) @ f - dagger(phi))
    # H-self-adjoint part of (K_H0 + body); K_H0 alone is H0-Hermitian
    total = K0 + body
    sym = 0.5 * (total + finv @ dagger(total) @ f)
    return sym - lam * np.eye(r) + eps * s


def perturbed_operator(state, eps, bundle, metric, lam=None):
    """K_{H0 f} - lambda Id + eps log f through mean_curvature_K."""
    lam = hb.lam_constant(bundle, metric) if lam is None else lam
    return hb.mean_curvature_K(bundle, state, metric) - lam * np.eye(bundle.rank) \
        + eps * state.s_field


# Newton ----------------------------------------------------------------------------

@dataclass
class SolveResult:
    eps: float
    state: HermitianState
    converged: bool
    residual: float
    iterations: int
    m: float
    l2_log_f: float
    history: List[float]
    max_phi: float = float("nan")
    message: str = ""


def _l2(field2, metric):
    return float(np.sqrt(max(0.0, float(np.real(integrate(field2, metric))))))


def _preconditioner(bg: Background, eps: float, dt: Optional[float] = None):
    metric = bg.metric
    sym = p_symbol_flat(metric.grid, "lattice")
    wbar = float(np.mean(metric.weight))
    if dt is None:
        denom = sym + eps * wbar
    else:
        denom = wbar * (1.0 + dt * eps) + dt * sym
    inv = (1.0 / denom)[..., None, None]
    w = metric.weight[..., None, None]

    def apply(v):
        out = ifft2(fft2(w * v) * inv)
        return hc.hermitian_part(out)
    return apply


def _result_from(bg, ev: ResidualEval, eps, converged, its, history, message=""):
    s = ev.state.s_field
    n2 = np.sum(np.abs(s) ** 2, axis=(-1, -2))
    return SolveResult(
        eps=eps, state=ev.state, converged=converged,
        residual=float(np.max(frob(ev.R))), iterations=its,
        m=float(np.sqrt(np.max(n2))), l2_log_f=_l2(n2, bg.metric), history=history,
        max_phi=float(np.max(frob(ev.phi_t))), message=message)


def solve_at_eps(eps: float, bg: Background, init: Optional[HermitianState] = None,
                 config: Optional[SolverConfig] = None) -> SolveResult:
    """Damped Newton-Krylov for L_eps(s) = 0 starting from init."""
    if not 0 < eps <= 1:
        raise ConfigurationError("eps must lie in (0, 1]")
    config = config or SolverConfig()
    tol = bg.tol_residual(config)
    state = init if init is not None else HermitianState.zero(bg.bundle)
    ev = evaluate(bg, state, eps)
    res = float(np.max(frob(ev.R)))
    history = [res]
    Minv = _preconditioner(bg, eps)
    its = 0
    while res > tol and its < config.max_newton_iters:
        s = ev.state.s_field
        R0 = ev.R
        fnorm = real_norm(R0)
        snorm = float(np.max(np.abs(s)))

        def jv(v, s=s, R0=R0, snorm=snorm):
            vn = float(np.max(np.abs(v)))
            if vn == 0:
                return np.zeros_like(v)
            h = 1e-7 * (1.0 + snorm) / vn
            ev1 = evaluate(bg, HermitianState(s + h * v), eps)
            return (ev1.R - R0) / h

        delta, info = gmres(jv, -R0, Minv, rtol=config.linear_rtol,
                            restart=config.gmres_restart, maxiter=config.gmres_maxiter)
        delta = hc.hermitian_part(delta)
        step = config.initial_step
        accepted = False
        for _ in range(config.max_backtracks):
            trial = evaluate(bg, HermitianState(s + step * delta), eps)
            tnorm = real_norm(trial.R)
            if np.isfinite(tnorm) and tnorm <= (1 - 1e-4 * step) * fnorm:
                accepted = True
                break
            step *= config.backtrack
        its += 1
        if not accepted:
            history.append(res)
            return _result_from(bg, ev, eps, False, its, history, "line search failed")
        ev = trial
        res = float(np.max(frob(ev.R)))
        history.append(res)
        log.debug("eps=%.3g it=%d res=%.3e step=%.3g gmres=%d", eps, its, res, step,
                  info.iterations)
    ok = res <= tol
    return _result_from(bg, ev, eps, ok, its, history, "" if ok else "no convergence")


# Checks ------------------------------------------------------------------------------

def check_trace_free(result: SolveResult, bg: Background, tol: float = 1e-8) -> dict:
    """tr s = 0, det f = 1 and P(tr s) + eps tr s = tr L - tr Phi(H0)."""
    s = result.state.s_field
    trs = np.real(trace(s))
    det_err = float(np.max(np.abs(np.expm1(trs))))
    ev = evaluate(bg, result.state, result.eps)
    lhs = p_operator(trs, bg.metric, scheme="lattice") + result.eps * trs
    rhs = np.real(trace(ev.R)) - np.real(trace(bg.phi0))
    ident = float(np.max(np.abs(lhs - rhs)))
    max_tr = float(np.max(np.abs(trs)))
    return {"max_tr_s": max_tr, "det_f_err": det_err, "identity_residual": ident,
            "ok": max_tr <= tol and det_err <= tol}


def check_sup_bound(result: SolveResult, bg: Background, tol_disc: float = TOL_DISC) -> dict:
    """eps m <= max|Phi(H0)|, plus the largest positive violation of
    1/2 P|s|^2 + eps |s|^2 <= |Phi(H0)| |s| over the sites."""
    s = result.state.s_field
    eps = result.eps
    n2 = np.real(np.sum(np.abs(s) ** 2, axis=(-1, -2)))
    phi0n = frob(bg.phi0)
    ineq = 0.5 * p_operator(n2, bg.metric, scheme="lattice") + eps * n2 - phi0n * np.sqrt(n2)
    violation = float(max(0.0, np.max(ineq)))
    lhs = eps * result.m
    ok = lhs <= bg.max_phi0 + tol_disc
    ratio = result.m / (result.l2_log_f + bg.max_phi0) if (result.l2_log_f + bg.max_phi0) > 0 else 0.0
    return {"eps_m": lhs, "bound": bg.max_phi0, "ok": bool(ok),
            "pointwise_violation": violation, "ratio_m_over_l2": float(ratio)}


def check_energy_identity(result: SolveResult, bg: Background, variant: str = "centered") -> dict:
    """Integral identity  int tr(Phi0 s) + int <Psi(s)(D''s), D''s> = -eps ||s||^2.

    variant="centered" evaluates D''s with site-centered differences and the
    pointwise Psi pairing; it converges to the continuum identity at O(h^2).
    variant="lattice" assembles the exact edge energy of the discrete
    operator and holds up to the solver tolerance.
    """
    bundle, metric = bg.bundle, bg.metric
    s = result.state.s_field
    eps = result.eps
    e = result.state.eig
    T1 = float(np.real(integrate(trace(bg.phi0 @ s), metric)))
    T3 = eps * result.l2_log_f ** 2
    two_w = 2.0 / metric.weight
    if variant == "centered":
        dpp = hb.D_double_prime(s, bundle)
        dens = two_w * (hc.psi_pairing(s, dpp.dzbar, e) + hc.psi_pairing(s, dpp.dz, e))
        T2 = float(integrate(dens, metric))
    elif variant == "lattice":
        T2 = _lattice_energy(bg, result.state)
    else:
        raise ConfigurationError(f"unknown variant {variant!r}")
    resid = T1 + T2 + T3
    scale = abs(T1) + abs(T2) + abs(T3)
    return {"T1": T1, "T2": T2, "T3": T3, "residual": resid,
            "relative": resid / scale if scale > 0 else 0.0, "psi_term_nonneg": T2 >= -1e-12 * max(scale, 1.0)}


def _lattice_energy(bg: Background, state: HermitianState) -> float:
    """int Re tr((K_H - K_H0) s) assembled by summation by parts."""
    bundle, metric = bg.bundle, bg.metric
    s = state.s_field
    e = state.eig
    grid = bundle.grid
    A = grid.cell_area
    cc, dd = grid.c, grid.d
    psi = hc.simpson_psi

    def pair(Y, Z):
        return np.sum(trace(Y @ Z))

    total = 0.0 + 0.0j
    for mu in (0, 1):
        sbar = hb.edge_average(s, bundle, mu)
        ds = hb.delta(s, bundle, mu)
        total += dd[mu] * cc[mu] * pair(hc.apply_bifn(sbar, ds, psi), ds)
    cen = [hb.delta_c(s, bundle, 0), hb.delta_c(s, bundle, 1)]
    for mu, nu in ((0, 1), (1, 0)):
        total += dd[mu] * cc[nu] * pair(hc.apply_bifn(s, cen[nu], psi, e), cen[mu])
    a = bundle.a_field
    if np.any(a):
        ca = hb.comm(dagger(a), s)
        psi_ca = hc.apply_bifn(s, ca, psi, e)
        for mu in (0, 1):
            total -= dd[mu] * pair(psi_ca, cen[mu])
        Y = hc.apply_bifn(s, cc[0] * cen[0] + cc[1] * cen[1] - ca, psi, e)
        total -= pair(Y, hb.comm(s, a))
    energy = 2 * A * float(np.real(total))
    phi = bundle.phi_field
    higgs = (2.0 / metric.weight) * hc.psi_pairing(s, hb.comm(phi, s), e)
    return energy + float(integrate(higgs, metric))


# Sweep -------------------------------------------------------------------------------

@dataclass
class SweepRow:
    eps: float
    converged: bool
    m: float = float("nan")
    eps_m: float = float("nan")
    max_phi: float = float("nan")
    l2_s: float = float("nan")
    l2_Dpp_u: float = float("nan")
    det_f_err: float = float("nan")
    trace_free_ok: Optional[bool] = None
    lemma22_ok: Optional[bool] = None      # sup bound; name fixed by the CSV layout
    residual: float = float("nan")
    iterations: int = 0
    message: str = ""


@dataclass(eq=False)
class SweepReport:
    rows: List[SweepRow]
    results: List[SolveResult]
    background: Background
    verdict: Optional[dict] = None

    def converged_rows(self):
        return [r for r in self.rows if r.converged]

    def converged_results(self):
        return [r for r in self.results if r.converged]


def dpp_norm(state: HermitianState, bg: Background) -> float:
    """||D'' u||_L2 for u = s / ||s||_L2 (0 when s = 0)."""
    s = state.s_field
    n = _l2(np.sum(np.abs(s) ** 2, axis=(-1, -2)), bg.metric)
    if n == 0:
        return 0.0
    dpp = hb.D_double_prime(s / n, bg.bundle)
    return _l2(dpp.pointwise_norm2(bg.metric), bg.metric)


def continuity_sweep(bg: Background, config: Optional[SolverConfig] = None) -> SweepReport:
    config = config or SolverConfig()
    state = HermitianState.zero(bg.bundle)
    rows, results = [], []
    for i, eps in enumerate(config.eps_schedule):
        res = solve_at_eps(eps, bg, state, config)
        if not res.converged:
            if i == 0:
                raise SweepError(f"first eps={eps} failed: {res.message}, residual {res.residual:.3e}")
            log.warning("eps=%.3g failed (%s); row marked failed", eps, res.message)
            rows.append(SweepRow(eps, False, residual=res.residual, iterations=res.iterations,
                                 message=res.message))
            results.append(res)
            continue
        state = res.state
        tf = check_trace_free(res, bg, config.tol_trace)
        sb = check_sup_bound(res, bg)
        rows.append(SweepRow(
            eps=eps, converged=True, m=res.m, eps_m=eps * res.m, max_phi=res.max_phi,
            l2_s=res.l2_log_f, l2_Dpp_u=dpp_norm(res.state, bg), det_f_err=tf["det_f_err"],
            trace_free_ok=tf["ok"], lemma22_ok=sb["ok"], residual=res.residual,
            iterations=res.iterations))
        results.append(res)
        log.info("eps=%.4g m=%.6g eps*m=%.6g max_phi=%.6g its=%d", eps, res.m, eps * res.m,
                 res.max_phi, res.iterations)
    return SweepReport(rows, results, bg)


def classify_sweep(report: SweepReport, delta_oracle: Optional[float] = None,
                   decision_threshold: float = DECISION_THRESHOLD,
                   stagnation: float = STAGNATION, floor: float = 1e-6) -> dict:
    """approx-HE, obstructed or inconclusive, from converged rows only."""
    rows = report.converged_rows()
    info = {"rows_used": len(rows), "delta_oracle": delta_oracle}
    if not rows:
        return {**info, "verdict": "inconclusive", "reason": "no converged rows"}
    em = np.array([r.eps_m for r in rows])
    mp = np.array([r.max_phi for r in rows])
    eps = np.array([r.eps for r in rows])
    if np.all(em <= floor) and np.all(mp <= floor):
        return {**info, "verdict": "approx-HE", "reason": "all rows vanish", "decay": 0.0}
    if len(rows) >= 2:
        decay = em[-1] / em[0] if em[0] > 0 else 0.0
        slope = float(np.polyfit(np.log(eps), np.log(np.maximum(em, 1e-300)), 1)[0])
        info.update(decay=float(decay), trend_slope=slope)
        if decay < decision_threshold and slope > 0:
            return {**info, "verdict": "approx-HE",
                    "reason": f"eps*m fell to {decay:.3g} of its first value"}
    if len(rows) >= 3:
        tail = mp[-3:]
        change = float((tail.max() - tail.min()) / max(tail.max(), 1e-300))
        info.update(tail_change=change, floor_value=float(tail.min()))
        above = tail.min() > floor and (delta_oracle is None or tail.min() >= delta_oracle * (1 - 1e-9))
        if change < stagnation and above:
            return {**info, "verdict": "obstructed",
                    "reason": f"max|Phi| stagnates at {tail.min():.6g}"}
    return {**info, "verdict": "inconclusive", "reason": "neither decay nor stagnation"}


# Flow cross-check ------------------------------------------------------------------------

def donaldson_flow_crosscheck(bg: Background, eps: float, horizon: float = 1e4,
                              newton: Optional[SolveResult] = None, dt0: float = 0.5,
                              max_steps: int = 5000, config: Optional[SolverConfig] = None) -> dict:
    """Pseudo-time flow ds/dt = -(Phi(H) + eps s), linearly implicit in the flat part.

    Each step solves (I + dt M) delta = -dt R(s) with M the flat covariant
    Laplacian plus eps; steps that increase the residual are halved and
    retried.
    """
    config = config or SolverConfig()
    tol = bg.tol_residual(config)
    state = HermitianState.zero(bg.bundle)
    ev = evaluate(bg, state, eps)
    res = float(np.max(frob(ev.R)))
    t, dt, steps = 0.0, dt0, 0
    history = [res]
    while res > tol and t < horizon and steps < max_steps:
        step_op = _preconditioner(bg, eps, dt)
        delta = -dt * step_op(ev.R)
        trial = evaluate(bg, HermitianState(ev.state.s_field + delta), eps)
        tres = float(np.max(frob(trial.R)))
        steps += 1
        if not np.isfinite(tres) or tres > res:
            dt *= 0.5
            if dt < 1e-12:
                break
            continue
        t += dt
        ev, res = trial, tres
        history.append(res)
        dt = min(dt * 1.5, 1e3)
    flow = _result_from(bg, ev, eps, res <= tol, steps, history,
                        "" if res <= tol else "horizon reached before tolerance")
    out = {"flow": flow, "time": t, "steps": steps}
    if newton is None:
        newton = solve_at_eps(eps, bg, None, config)
    diff = float(np.max(np.abs(flow.state.s_field - newton.state.s_field)))
    out.update(newton=newton, max_state_diff=diff,
               residual_gap=abs(flow.residual - newton.residual),
               agree=diff <= config.cross_tol and abs(flow.residual - newton.residual) <= config.cross_tol)
    return out
