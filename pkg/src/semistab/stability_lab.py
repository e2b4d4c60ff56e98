"""Degrees, weak subbundles, the destabilizer construction and section tests.

Subsheaves are represented by projection fields pi (pointwise Hermitian
idempotents). Their degree is the Chern-Weil expression

    deg pi = (1/2pi) [ int Tr(pi K_H0) - int |D'' pi|^2 ],

which reproduces the flux for exact holomorphic phi-invariant subbundles.
"""
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.special
import scipy.sparse as sp

from . import herm_calculus as hc
from . import higgs_bundle as hb
from .errors import ConfigurationError, DomainError, UnsupportedError
from .he_solver import Background, SweepReport, classify_sweep
from .herm_calculus import dagger, frob, trace
from .higgs_bundle import HermitianState, HiggsBundleData
from .torus_geometry import ConformalMetric, integrate, p_operator

TOL_DEG = 1e-8
TOL_PROJ = 1e-8
CONSTANCY_CEILING = 0.05
KERNEL_GAP = 1e3
KERNEL_TOL_REL = 1e-6
TOL_SLOPE = 1e-6


# Degrees -------------------------------------------------------------------------

@dataclass
class DegreeReport:
    degree: float
    slope: float
    method: str          # "flux" or "chern_weil"
    rank: int
    detail: Dict = field(default_factory=dict)

    def to_dict(self):
        return {"degree": self.degree, "slope": self.slope, "method": self.method,
                "rank": self.rank, **self.detail}


@dataclass
class ProjectionField:
    pi: np.ndarray
    rank: int

    def residuals(self) -> dict:
        p = self.pi
        return {"idempotent": float(np.max(frob(p @ p - p))),
                "selfadjoint": float(np.max(frob(p - dagger(p)))),
                "trace": float(np.max(np.abs(np.real(trace(p)) - self.rank)))}

    def validate(self, tol: float = TOL_PROJ):
        bad = {k: v for k, v in self.residuals().items() if v > tol}
        if bad:
            raise DomainError(f"not a projection field of rank {self.rank}: {bad}")
        return self


def degree_and_slope(bundle: HiggsBundleData, metric: ConformalMetric,
                     state: Optional[HermitianState] = None,
                     projection: Optional[ProjectionField] = None) -> DegreeReport:
    """Full-bundle degree from the curvature of H = H0 exp(s), or of a weak subbundle."""
    if projection is not None:
        return chern_weil_subsheaf_degree(projection, bundle, metric)
    deg = hb.degree_of(bundle, metric, state)
    return DegreeReport(deg, deg / bundle.rank, "chern_weil", bundle.rank,
                        {"flux_degree": bundle.degree})


def flux_degree(bundle: HiggsBundleData) -> DegreeReport:
    return DegreeReport(float(bundle.degree), bundle.slope, "flux", bundle.rank)


def random_states(bundle: HiggsBundleData, rng: np.random.Generator, count: int,
                  amplitude: float = 0.5, modes: int = 2) -> List[HermitianState]:
    """Smooth random Hermitian states built from a few Fourier modes per entry.

    The entries are taken in the frame of each site, so the off-diagonal
    entries of twisted blocks are not covariantly smooth; the degree does not
    care.
    """
    N, r = bundle.grid.N, bundle.rank
    x = np.arange(N) / N
    X, Y = np.meshgrid(x, x, indexing="ij")
    out = []
    for _ in range(count):
        s = np.zeros((N, N, r, r), dtype=complex)
        for m in range(-modes, modes + 1):
            for n in range(-modes, modes + 1):
                coef = rng.normal(size=(r, r)) + 1j * rng.normal(size=(r, r))
                s = s + coef * np.exp(2j * np.pi * (m * X + n * Y))[..., None, None]
        s = hc.hermitian_part(s)
        s = amplitude * s / np.max(frob(s))
        out.append(HermitianState(s))
    return out


def degree_spread(bundle, metric, states: Sequence[HermitianState]) -> float:
    degs = [hb.degree_of(bundle, metric, st) for st in states]
    return float(max(degs) - min(degs)) if degs else 0.0


def chern_weil_subsheaf_degree(projection: ProjectionField, bundle: HiggsBundleData,
                               metric: ConformalMetric) -> DegreeReport:
    projection.validate()
    pi = projection.pi
    K = hb.K_H0(bundle, metric)
    curv = float(np.real(integrate(trace(pi @ K), metric)))
    pen = float(integrate(hb.D_double_prime(pi, bundle).pointwise_norm2(metric), metric))
    deg = (curv - pen) / (2 * np.pi)
    return DegreeReport(deg, deg / projection.rank, "chern_weil", projection.rank,
                        {"curvature_term": curv / (2 * np.pi), "penalty": pen / (2 * np.pi)})


def coordinate_projection(bundle: HiggsBundleData, indices: Sequence[int]) -> ProjectionField:
    N, r = bundle.grid.N, bundle.rank
    p = np.zeros((r, r), dtype=complex)
    for i in indices:
        p[i, i] = 1.0
    return ProjectionField(np.broadcast_to(p, (N, N, r, r)).copy(), len(indices))


def _is_invariant(bundle: HiggsBundleData, indices: Sequence[int], tol: float = 0.0) -> bool:
    inside = np.zeros(bundle.rank, bool)
    inside[list(indices)] = True
    out = ~inside
    for X in (bundle.links[0], bundle.links[1], bundle.a_field, bundle.phi_field):
        if np.max(np.abs(X[..., out, :][..., :, inside]), initial=0.0) > tol:
            return False
    return True


def invariant_coordinate_subbundles(bundle: HiggsBundleData):
    """All proper coordinate subbundles preserved by links, a and phi."""
    r = bundle.rank
    out = []
    for p in range(1, r):
        for idx in combinations(range(r), p):
            if _is_invariant(bundle, idx):
                out.append(idx)
    return out


def line_fluxes(bundle: HiggsBundleData) -> np.ndarray:
    """Per-basis-vector flux (block flux divided evenly over the block)."""
    f = []
    for d, b in zip(bundle.flux, bundle.block_sizes):
        f += [d / b] * b
    return np.array(f)


def delta_oracle(bundle: HiggsBundleData, metric: ConformalMetric) -> Optional[dict]:
    """Lower bound on max|Phi(H)| over all H from the steepest invariant coordinate subbundle.

    For an invariant F with projection pi, Chern-Weil gives
    int Tr(pi Phi) >= 2 pi rank F (mu(F) - mu(E)), and |Tr(pi Phi)| <= sqrt(rank F)|Phi|.
    """
    fl = line_fluxes(bundle)
    best = None
    for idx in invariant_coordinate_subbundles(bundle):
        slope = float(np.sum(fl[list(idx)]) / len(idx))
        gap = slope - bundle.slope
        if gap > 0:
            bound = 2 * np.pi * np.sqrt(len(idx)) * gap / metric.volume
            if best is None or bound > best["delta"]:
                best = {"delta": bound, "indices": list(idx), "slope": slope}
    return best


# Weak limit and destabilizer -------------------------------------------------------

@dataclass
class WeakLimit:
    refused: bool
    reason: str = ""
    u: Optional[np.ndarray] = None
    eps: Optional[float] = None
    tr_u_residual: float = float("nan")
    norm_u: float = float("nan")
    eigenvalues: Optional[np.ndarray] = None
    index_means: Optional[np.ndarray] = None
    constancy_residual: float = float("nan")
    spread: float = float("nan")
    l2_Dpp_u_tail: List[float] = field(default_factory=list)
    l2_s_tail: List[float] = field(default_factory=list)

    def to_dict(self):
        d = {"refused": self.refused, "reason": self.reason}
        if not self.refused:
            d.update(eps=self.eps, tr_u_residual=self.tr_u_residual, norm_u=self.norm_u,
                     index_means=[float(x) for x in self.index_means],
                     constancy_residual=self.constancy_residual, spread=self.spread,
                     l2_Dpp_u_tail=self.l2_Dpp_u_tail, l2_s_tail=self.l2_s_tail)
        return d


def _l2_field(X, metric):
    return float(np.sqrt(max(0.0, float(integrate(np.sum(np.abs(X) ** 2, axis=(-1, -2)), metric)))))


def weak_limit_analysis(states: Sequence[HermitianState], bundle: HiggsBundleData,
                        metric: ConformalMetric, eps: Optional[Sequence[float]] = None,
                        tail: int = 3, min_growth: float = 1.05) -> WeakLimit:
    """u = s / ||s||_L2 at the last state, with constancy diagnostics.

    states run from larger to smaller eps; the tail must show strictly growing
    ||s||_L2 (by at least min_growth from first to last tail state), otherwise
    log f stays bounded and there is nothing to analyse.
    """
    states = list(states)
    if len(states) < 2:
        return WeakLimit(True, "need at least two converged states")
    use = states[-tail:]
    norms = [_l2_field(st.s_field, metric) for st in use]
    if not all(b > a for a, b in zip(norms, norms[1:])) or norms[-1] < min_growth * norms[0]:
        return WeakLimit(True, "||s||_L2 not growing over the tail (bounded case)",
                         l2_s_tail=norms)
    dpp = []
    for st, n in zip(use, norms):
        pair = hb.D_double_prime(st.s_field / n, bundle)
        dpp.append(float(np.sqrt(integrate(pair.pointwise_norm2(metric), metric))))
    u = use[-1].s_field / norms[-1]
    e = hc.eig_herm(u)
    lam = e.eigenvalues
    means = np.array([float(integrate(lam[..., a], metric)) / metric.volume
                      for a in range(bundle.rank)])
    resid = float(np.max(np.abs(lam - means)))
    return WeakLimit(
        refused=False, u=u, eps=None if eps is None else float(list(eps)[-1]),
        tr_u_residual=float(np.max(np.abs(trace(u)))), norm_u=_l2_field(u, metric),
        eigenvalues=lam, index_means=means, constancy_residual=resid,
        spread=float(means[-1] - means[0]), l2_Dpp_u_tail=dpp, l2_s_tail=norms)


@dataclass
class DestabilizerReport:
    verdict: str                      # destabilized | no destabilizer found | inconclusive
    reason: str = ""
    plateaus: List[float] = field(default_factory=list)
    multiplicities: List[int] = field(default_factory=list)
    projections: List[ProjectionField] = field(default_factory=list)
    ranks: List[int] = field(default_factory=list)
    degrees: List[float] = field(default_factory=list)
    slopes: List[float] = field(default_factory=list)
    nu_degree_form: float = float("nan")
    nu_slope_form: float = float("nan")
    reconstruction_residual: float = float("nan")
    constancy_residual: float = float("nan")
    property_residuals: List[Dict[str, float]] = field(default_factory=list)
    bundle_slope: float = float("nan")

    @property
    def nu(self) -> float:
        return self.nu_degree_form

    @property
    def max_property_residual(self) -> float:
        vals = [v for d in self.property_residuals for v in d.values()]
        return max(vals) if vals else float("nan")

    def to_dict(self):
        return {"verdict": self.verdict, "reason": self.reason, "plateaus": self.plateaus,
                "multiplicities": self.multiplicities, "ranks": self.ranks,
                "degrees": self.degrees, "slopes": self.slopes,
                "nu_degree_form": self.nu_degree_form, "nu_slope_form": self.nu_slope_form,
                "reconstruction_residual": self.reconstruction_residual,
                "constancy_residual": self.constancy_residual,
                "property_residuals": self.property_residuals, "bundle_slope": self.bundle_slope}


def cluster_plateaus(means: np.ndarray, tol: float):
    """Group sorted index means whose neighbours differ by at most tol."""
    groups = [[0]]
    for a in range(1, len(means)):
        if means[a] - means[a - 1] <= tol:
            groups[-1].append(a)
        else:
            groups.append([a])
    values = [float(np.mean(means[g])) for g in groups]
    return values, [len(g) for g in groups]


def projection_residuals(pi: np.ndarray, bundle: HiggsBundleData) -> Dict[str, float]:
    r = bundle.rank
    comp = np.eye(r) - pi
    return {"idempotent": float(np.max(frob(pi @ pi - pi))),
            "selfadjoint": float(np.max(frob(pi - dagger(pi)))),
            "holomorphic": float(np.max(frob(comp @ hb.dbar_E(pi, bundle)))),
            "higgs_invariant": float(np.max(frob(comp @ hb.comm(bundle.phi_field, pi))))}


def build_destabilizer(u: np.ndarray, bundle: HiggsBundleData, metric: ConformalMetric,
                       ceiling: float = CONSTANCY_CEILING, gap_min: float = hc.GAP_MIN,
                       tol_slope: float = TOL_SLOPE) -> DestabilizerReport:
    """Plateaus of the eigenvalues of u, projections below each gap, and nu.

    bundle carries H0 (normally the normalized background bundle).
    """
    e = hc.eig_herm(u)
    lam = e.eigenvalues
    r = bundle.rank
    means = np.array([float(integrate(lam[..., a], metric)) / metric.volume for a in range(r)])
    resid = float(np.max(np.abs(lam - means)))
    spread = float(means[-1] - means[0])
    rep = DestabilizerReport("inconclusive", constancy_residual=resid,
                             bundle_slope=bundle.slope)
    if spread <= gap_min:
        rep.reason = "u has no spectral spread"
        return rep
    if resid > ceiling * spread:
        rep.reason = f"eigenvalues not constant: residual {resid:.3g} > {ceiling} x spread {spread:.3g}"
        return rep
    values, mult = cluster_plateaus(means, max(gap_min, 2 * resid + gap_min))
    rep.plateaus, rep.multiplicities = values, mult
    if len(values) < 2:
        rep.reason = "a single plateau"
        return rep
    thresholds = [0.5 * (values[i] + values[i + 1]) for i in range(len(values) - 1)]
    try:
        pis = hc.projections_from(u, thresholds, gap_min, e)
    except DomainError as exc:
        rep.reason = f"plateaus unresolvable: {exc}"
        return rep
    ranks = list(np.cumsum(mult[:-1]).astype(int))
    degE = float(bundle.degree)
    for pi, rk in zip(pis, ranks):
        pf = ProjectionField(pi, int(rk))
        rep.property_residuals.append(projection_residuals(pi, bundle))
        rep.projections.append(pf)
        rep.ranks.append(int(rk))
        d = chern_weil_subsheaf_degree(pf, bundle, metric)
        rep.degrees.append(d.degree)
        rep.slopes.append(d.slope)
    gaps = np.diff(values)
    rep.nu_degree_form = float(values[-1] * degE - np.sum(gaps * np.array(rep.degrees)))
    rep.nu_slope_form = float(np.sum(gaps * np.array(ranks)
                                     * (bundle.slope - np.array(rep.slopes))))
    rep.reconstruction_residual = float(abs(values[-1] * r - np.sum(gaps * np.array(ranks))))
    if any(sl > bundle.slope + tol_slope for sl in rep.slopes) and rep.nu_degree_form < 0:
        rep.verdict = "destabilized"
        rep.reason = "a weak subbundle of larger slope"
    else:
        rep.verdict = "no destabilizer found"
        rep.reason = "all weak subbundles have slope <= mu(E)"
    return rep


# Induced bundle ----------------------------------------------------------------------

def _wedge_basis(r: int, p: int):
    return list(combinations(range(r), p))


def _perm_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def derivation_terms(r: int, p: int):
    """(I, J, i, k, sign): entry (I, J) of the derivation action gets sign X[i, k]."""
    basis = _wedge_basis(r, p)
    pos = {b: n for n, b in enumerate(basis)}
    terms = []
    for J, bj in enumerate(basis):
        for slot, k in enumerate(bj):
            for i in range(r):
                if i != k and i in bj:
                    continue
                new = list(bj)
                new[slot] = i
                terms.append((pos[tuple(sorted(new))], J, i, k, _perm_sign(new)))
    return terms


def derivation_action(X: np.ndarray, p: int) -> np.ndarray:
    r = X.shape[-1]
    basis = _wedge_basis(r, p)
    out = np.zeros(X.shape[:-2] + (len(basis), len(basis)), dtype=complex)
    for I, J, i, k, sg in derivation_terms(r, p):
        out[..., I, J] += sg * X[..., i, k]
    return out


def compound_matrix(U: np.ndarray, p: int) -> np.ndarray:
    r = U.shape[-1]
    basis = _wedge_basis(r, p)
    out = np.zeros(U.shape[:-2] + (len(basis), len(basis)), dtype=complex)
    for I, bi in enumerate(basis):
        for J, bj in enumerate(basis):
            out[..., I, J] = np.linalg.det(U[..., list(bi), :][..., :, list(bj)])
    return out


@dataclass(eq=False)
class InducedBundle:
    bundle: HiggsBundleData
    p: int
    sub_indices: tuple
    lam: float
    lam_closed_form: float
    canonical_index: int
    line_flux: np.ndarray

    def induced_state(self, source: HermitianState) -> HermitianState:
        """H_G = wedge^p H (det H|_F)^-1 as a state on G."""
        s = source.s_field
        logdet = log_det_block(source, self.sub_indices)
        sg = derivation_action(s, self.p) - logdet[..., None, None] * np.eye(self.bundle.rank)
        return HermitianState(hc.hermitian_part(sg))


def log_det_block(state: HermitianState, indices: Sequence[int]) -> np.ndarray:
    """log det of the F x F block of exp(s), by Cauchy-Binet over eigenvalue subsets.

    det(V_F e^L V_F^H) = sum_A |det V_{F,A}|^2 exp(sum_A lambda), summed with
    logsumexp so that large s does not overflow.
    """
    e = state.eig
    F = list(indices)
    r = e.eigenvalues.shape[-1]
    logs = []
    for A in combinations(range(r), len(F)):
        minor = np.linalg.det(e.eigenvectors[..., F, :][..., :, list(A)])
        with np.errstate(divide="ignore"):
            logs.append(np.log(np.abs(minor) ** 2) + np.sum(e.eigenvalues[..., list(A)], axis=-1))
    return scipy.special.logsumexp(np.stack(logs), axis=0)


def induced_bundle(E: HiggsBundleData, metric: ConformalMetric, sub_indices: Sequence[int],
                   p: Optional[int] = None) -> InducedBundle:
    """G = wedge^p E (x) det(F)^-1 for the coordinate subbundle F spanned by sub_indices."""
    r = E.rank
    F = tuple(sorted(int(i) for i in sub_indices))
    p = len(F) if p is None else int(p)
    if p != len(F):
        raise ConfigurationError("p must equal the rank of the subbundle")
    if p == r:
        raise UnsupportedError("F = E gives a degenerate induced bundle (p = r)")
    if not 1 <= p < r or r > 4 or p not in (1, r - 1):
        raise UnsupportedError(f"(r, p) = ({r}, {p}) is outside the supported list")
    if any(i < 0 or i >= r for i in F):
        raise ConfigurationError("subbundle index out of range")
    if not _is_invariant(E, F):
        raise ConfigurationError(f"coordinate subbundle {F} is not invariant")
    basis = _wedge_basis(r, p)
    Fl = list(F)
    links = np.stack([
        compound_matrix(E.links[mu], p)
        * np.conj(np.linalg.det(E.links[mu][..., Fl, :][..., :, Fl]))[..., None, None]
        for mu in (0, 1)])
    rg = len(basis)
    eye = np.eye(rg)
    a = derivation_action(E.a_field, p) - np.trace(
        E.a_field[..., Fl, :][..., :, Fl], axis1=-2, axis2=-1)[..., None, None] * eye
    phi = derivation_action(E.phi_field, p) - np.trace(
        E.phi_field[..., Fl, :][..., :, Fl], axis1=-2, axis2=-1)[..., None, None] * eye
    lf = line_fluxes(E)
    degF = float(np.sum(lf[Fl]))
    gflux = np.array([np.sum(lf[list(b)]) - degF for b in basis])
    if not np.allclose(gflux, np.round(gflux)):
        raise UnsupportedError("induced line fluxes are not integral for this block layout")
    gflux = tuple(int(round(x)) for x in gflux)
    G = HiggsBundleData(E.grid, rg, gflux, (1,) * rg, links, a, phi,
                        np.zeros_like(E.conformal))
    lam = hb.lam_constant(G, metric)
    closed = 2 * p * np.pi / metric.volume * (E.slope - degF / p)
    return InducedBundle(G, p, F, lam, closed, basis.index(F), np.array(gflux, float))


# Invariant sections ----------------------------------------------------------------

@dataclass
class KernelReport:
    dimension: Optional[int]          # None when no gap separates kernel from the rest
    classification: str              # "resolved" | "ambiguous"
    smallest_singular: float
    singular_values: List[float]
    zero_tol: float
    gap_factor: float
    required_gap: float
    min_eigenvalue: float
    quality: Optional[float] = None   # max |K_H - lambda|_H of the supplied state
    certified_regime: Optional[bool] = None

    def to_dict(self):
        return {k: getattr(self, k) for k in (
            "dimension", "classification", "smallest_singular", "singular_values", "zero_tol",
            "gap_factor", "required_gap", "min_eigenvalue", "quality", "certified_regime")}


def _effective_links(bundle: HiggsBundleData) -> np.ndarray:
    """Links that absorb the a-part of the Chern connection of the frame metric.

    The connection 1-form a dzbar - a^H dz has components a - a^H along x and
    conj(tau) a - tau a^H along y; each link is multiplied by the exponential
    of h times its edge average.
    """
    a = bundle.a_field
    if not np.any(a):
        return bundle.links
    tau = bundle.grid.tau
    h = bundle.grid.h
    alpha = (a - dagger(a), np.conj(tau) * a - tau * dagger(a))
    out = []
    for mu in (0, 1):
        mid = 0.5 * (alpha[mu] + hb.adj_fwd(alpha[mu], bundle, mu))
        out.append(scipy.linalg.expm(h * mid) @ bundle.links[mu])
    return np.stack(out)


def _shift_matrix(links_mu: np.ndarray, axis: int) -> sp.csr_matrix:
    """(S psi)(j) = U(j) psi(j + e_axis) on sections flattened as (site, fibre)."""
    N = links_mu.shape[0]
    r = links_mu.shape[-1]
    idx = np.arange(N * N).reshape(N, N)
    nb = np.roll(idx, -1, axis=axis).ravel()
    rows, cols, vals = [], [], []
    fib = np.arange(r)
    for a in range(r):
        for b in range(r):
            rows.append(idx.ravel() * r + a)
            cols.append(nb * r + b)
            vals.append(links_mu[..., a, b].ravel())
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N * N * r, N * N * r))
    M.eliminate_zeros()
    return M


def section_operator(bundle: HiggsBundleData, metric: ConformalMetric):
    """(Y, W) with M = W^-1 Y the Bochner form of dbar^* dbar + theta^* theta.

    M = (1/2) nabla^* nabla - (1/2) K + (2/w) theta^H theta, with the compact
    covariant Laplacian and plaquette curvature; Y is Hermitian and W = diag(w).
    """
    g = bundle.grid
    N, r = g.N, bundle.rank
    U = _effective_links(bundle)
    n = N * N * r
    S = [_shift_matrix(U[mu], mu) for mu in (0, 1)]
    I = sp.identity(n, format="csr")
    lap = [N ** 2 * (S[mu] + S[mu].conj().T - 2 * I) for mu in (0, 1)]
    Dc = [0.5 * N * (S[mu] - S[mu].conj().T) for mu in (0, 1)]
    c = g.c
    mixed = 2 * np.real(c[0] * np.conj(c[1]))
    Y = -(2 * abs(c[0]) ** 2 * lap[0] + 2 * abs(c[1]) ** 2 * lap[1]
          + mixed * (Dc[0] @ Dc[1] + Dc[1] @ Dc[0]))
    eff = bundle.replace(links=U, a_field=np.zeros_like(bundle.a_field), conformal=np.zeros((N, N)),
                         bug_flip_background=False)
    k = hb._unitary_log_angle(hb.plaquettes(eff)) * (-(N ** 2) / g.T)
    th = bundle.phi_field
    local = -0.5 * k + 2 * (dagger(th) @ th)
    Y = Y + sp.block_diag([local[j, kk] for j in range(N) for kk in range(N)], format="csr")
    Y = 0.5 * (Y + Y.conj().T)
    W = np.repeat(metric.weight.ravel(), r)
    return Y.tocsr(), W


def invariant_section_kernel(bundle: HiggsBundleData, metric: ConformalMetric,
                             state: Optional[HermitianState] = None, lam: Optional[float] = None,
                             gap: float = KERNEL_GAP, tol_rel: float = KERNEL_TOL_REL,
                             probe: int = 8) -> KernelReport:
    """Numerical dimension of the space of holomorphic sections killed by theta.

    Singular values are square roots of the eigenvalues of the Bochner form.
    The kernel is the set of singular values below tol_rel * sigma_max (sigma_max
    from a Gershgorin bound), and it
    counts only if the next singular value is at least `gap` times larger.
    """
    Ys, W = section_operator(bundle, metric)
    n = Ys.shape[0]
    # symmetric similarity W^-1/2 Y W^-1/2 has the same spectrum as W^-1 Y
    isw = sp.diags(1.0 / np.sqrt(W))
    Bs = (isw @ Ys @ isw).tocsr()
    k = min(n, probe + bundle.rank)
    low = scipy.linalg.eigh(Bs.toarray(), eigvals_only=True, subset_by_index=[0, k - 1],
                            driver="evr")
    # Gershgorin bound on the top of the spectrum sets the scale of "zero"
    top = float(np.max(np.asarray(abs(Bs).sum(axis=1)).ravel()))
    smax = float(np.sqrt(top))
    sig = np.sqrt(np.clip(low, 0.0, None))
    ztol = tol_rel * smax
    dim = int(np.sum(sig <= ztol))
    below = max(float(sig[dim - 1]) if dim > 0 else 0.0, ztol)
    nxt = float(sig[dim]) if dim < len(sig) else float("inf")
    factor = nxt / below
    rep = KernelReport(dim if factor >= gap else None,
                       "resolved" if factor >= gap else "ambiguous",
                       float(sig[0]), [float(x) for x in sig], ztol, float(factor), gap,
                       float(low[0]))
    if state is not None:
        lam = hb.lam_constant(bundle, metric) if lam is None else lam
        parts = hb.curvature_parts(bundle, metric, state)
        q = float(np.max(frob(parts.hermitian_K - lam * np.eye(bundle.rank))))
        rep.quality = q
        rep.certified_regime = bool(lam < 0 and q < -lam / 2)
    return rep


def hom_line_bundle(bundle: HiggsBundleData, target: int, source: int) -> HiggsBundleData:
    """The line Hom(e_source, e_target) of a split bundle with diagonal links."""
    lf = line_fluxes(bundle)
    flux = lf[target] - lf[source]
    if flux != round(flux):
        raise UnsupportedError("non-integral line flux")
    U = bundle.links
    lk = (U[..., target, target] * np.conj(U[..., source, source]))[..., None, None]
    N = bundle.grid.N
    z = np.zeros((N, N, 1, 1), dtype=complex)
    return HiggsBundleData(bundle.grid, 1, (int(round(flux)),), (1,), lk, z, z.copy(),
                           np.zeros((N, N)))


def twisted_section_dimension(bundle: HiggsBundleData, metric: ConformalMetric, target: int,
                              source: int, gap: float = KERNEL_GAP) -> KernelReport:
    """Dimension of holomorphic sections of Hom(e_source, e_target).

    Positive-degree lines have their lowest lattice Landau level pushed
    slightly below zero at O(h^2), so a smaller gap factor is usually needed.
    """
    return invariant_section_kernel(hom_line_bundle(bundle, target, source), metric, gap=gap)


# Weitzenbock ------------------------------------------------------------------------------

@dataclass
class WeitzenbockReport:
    lhs: np.ndarray                 # sqrt(-1) Lambda d dbar |s|_H^2 = -P |s|_H^2
    rhs: np.ndarray                 # H(s, -K_H s)
    min_margin: float
    slack: float
    pointwise_ok: bool
    lhs_integral: float
    rhs_integral: float
    norm2: float
    two_sided_bound: bool
    forced_norm_bound: float
    certifies_vanishing: bool

    def to_dict(self):
        return {k: getattr(self, k) for k in (
            "min_margin", "slack", "pointwise_ok", "lhs_integral", "rhs_integral", "norm2",
            "two_sided_bound", "forced_norm_bound", "certifies_vanishing")}


def weitzenbock_check(section: np.ndarray, bundle: HiggsBundleData, metric: ConformalMetric,
                      state: Optional[HermitianState] = None, lam: Optional[float] = None,
                      slack: Optional[float] = None) -> WeitzenbockReport:
    """Both sides of the Weitzenbock inequality for a section of shape (N, N, r).

    If the curvature bound 3 lambda / 2 < K_H < lambda / 2 holds (lambda < 0)
    then a section in the kernel obeys (-lambda/2) ||s||^2 <= int lhs + slack Vol,
    and since int lhs = 0 this forces ||s||^2 below forced_norm_bound.
    """
    N = bundle.grid.N
    r = bundle.rank
    st = state if state is not None else HermitianState.zero(bundle)
    lam = hb.lam_constant(bundle, metric) if lam is None else float(lam)
    slack = 10.0 / N ** 2 if slack is None else float(slack)
    sv = np.asarray(section, dtype=complex).reshape(N, N, r)
    f = st.f_field
    K = hb.mean_curvature_K(bundle, st, metric)
    fs = np.einsum("...ab,...b->...a", f, sv)
    n2 = np.real(np.einsum("...a,...a->...", np.conj(sv), fs))
    lhs = -p_operator(n2, metric, scheme="lattice")
    rhs = -np.real(np.einsum("...a,...a->...", np.conj(fs), np.einsum("...ab,...b->...a", K, sv)))
    margin = lhs - rhs
    parts = hb.curvature_parts(bundle, metric, st)
    kev = np.linalg.eigvalsh(parts.hermitian_K)
    two_sided = bool(lam < 0 and np.all(kev > 1.5 * lam) and np.all(kev < 0.5 * lam))
    li = float(integrate(lhs, metric))
    ri = float(integrate(rhs, metric))
    norm2 = float(integrate(n2, metric))
    forced = 2 * (max(li, 0.0) + slack * metric.volume) / (-lam) if two_sided else float("inf")
    return WeitzenbockReport(lhs, rhs, float(np.min(margin)), slack,
                             bool(np.min(margin) >= -slack), li, ri, norm2, two_sided, forced,
                             bool(two_sided and norm2 > forced))


# Verdict ----------------------------------------------------------------------------------------

def semistable_verdict(report: SweepReport, destabilizer: Optional[DestabilizerReport] = None,
                       oracle: Optional[dict] = None, section_test: Optional[dict] = None) -> dict:
    """semistable (approx-HE attained), unstable (destabilizer exhibited) or inconclusive."""
    delta = None if oracle is None else oracle["delta"]
    cls = classify_sweep(report, delta)
    out = {"sweep": cls, "destabilizer": None if destabilizer is None else destabilizer.to_dict(),
           "delta_oracle": oracle, "section_test": section_test}
    if cls["verdict"] == "approx-HE":
        if destabilizer is not None and destabilizer.verdict == "destabilized":
            out.update(verdict="inconclusive",
                       reason="sweep decays but a destabilizer was exhibited")
        else:
            out.update(verdict="semistable", reason="approximate HE structure attained")
    elif cls["verdict"] == "obstructed" and destabilizer is not None \
            and destabilizer.verdict == "destabilized":
        out.update(verdict="unstable", reason="destabilizing weak subbundle exhibited")
    else:
        out.update(verdict="inconclusive", reason=cls.get("reason", ""))
    return out
