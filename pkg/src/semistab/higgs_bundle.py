"""Higgs bundles on the lattice torus.

A bundle is a unitary link field U_mu(j) (transporting the fibre at j + mu
back to j), a (0,1) perturbation a of the holomorphic structure
(dbar_E = dbar_bg + a dzbar) and a Higgs field phi = phi0 dz, all stored as
(N, N, r, r) matrices in a frame that is unitary for the background metric.
The background metric H0 is exp(conformal) times the frame metric; adjoints
with respect to H0 are plain conjugate transposes.

Discretization of the metric-dependent curvature term
    K_H - K_H0 = -(2/w) dbar_E( Psi(s)(d_H0 s) )
uses compact differences delta*(Psi(s_edge)(delta s)) on the d_mu d_mu
terms and centered differences elsewhere. With this choice the trace part is
the lattice scalar operator P_lat exactly, so tr K_H = tr K_H0 + P_lat(tr s)
holds to round-off. The raw expression is only H-self-adjoint up to O(h^2);
the returned K_H is its H-self-adjoint part, which leaves the trace and the
pairing with s unchanged.
"""
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from . import herm_calculus as hc
from .errors import ConfigurationError, StateError
from .herm_calculus import EXP_CAP, dagger, frob, trace
from .torus_geometry import ConformalMetric, TorusGrid, integrate, p_operator

TOL_HIGGS = 1e-8


@dataclass(eq=False)
class HiggsBundleData:
    grid: TorusGrid
    rank: int
    flux: Tuple[int, ...]
    block_sizes: Tuple[int, ...]
    links: np.ndarray        # (2, N, N, r, r)
    a_field: np.ndarray      # (N, N, r, r)
    phi_field: np.ndarray    # (N, N, r, r)
    conformal: np.ndarray    # (N, N) real
    # flips the sign of the plaquette curvature (mutation canary for the verify suite)
    bug_flip_background: bool = False

    @property
    def degree(self) -> int:
        return int(sum(self.flux))

    @property
    def slope(self) -> float:
        return self.degree / self.rank

    def replace(self, **kw) -> "HiggsBundleData":
        return replace(self, **kw)


@dataclass(eq=False)
class HermitianState:
    s_field: np.ndarray
    background_tag: str = "H0"
    _eig: Optional[hc.HermEigen] = field(default=None, repr=False)

    @property
    def eig(self) -> hc.HermEigen:
        if self._eig is None:
            self._eig = hc.eig_herm(self.s_field)
        return self._eig

    @property
    def f_field(self) -> np.ndarray:
        lam = np.minimum(self.eig.eigenvalues, EXP_CAP)
        return hc.apply_fn(self.s_field, lambda _: np.exp(lam), self.eig)

    @classmethod
    def zero(cls, bundle: HiggsBundleData, tag: str = "H0") -> "HermitianState":
        N, r = bundle.grid.N, bundle.rank
        return cls(np.zeros((N, N, r, r), dtype=complex), tag)

    def validate(self, tol: float = 1e-12):
        s = self.s_field
        defect = np.max(frob(s - dagger(s)))
        if defect > tol * max(1.0, float(np.max(frob(s)))):
            raise StateError(f"s is not Hermitian (defect {defect:.3e})")
        if not np.all(np.isfinite(s)):
            raise StateError("s contains non-finite entries")


@dataclass
class FormPair:
    """An End(E)-valued 1-form split as coefficient of dz and of dzbar."""
    dz: np.ndarray
    dzbar: np.ndarray

    def pointwise_norm2(self, metric: ConformalMetric) -> np.ndarray:
        # |dz|^2 = |dzbar|^2 = 2/w
        return (2.0 / metric.weight) * (np.sum(np.abs(self.dz) ** 2, axis=(-1, -2))
                                        + np.sum(np.abs(self.dzbar) ** 2, axis=(-1, -2)))


# Backgrounds -----------------------------------------------------------------

def landau_phases(N: int, flux: int):
    """U(1) links of constant curvature and total flux `flux`.

    Every plaquette U_x(j,k) U_y(j+1,k) conj(U_x(j,k+1)) conj(U_y(j,k)) equals
    exp(-2 pi i flux / N^2), the sign that makes the degree +flux.
    """
    theta = -2 * np.pi * flux / N ** 2
    k = np.arange(N)
    j = np.arange(N)
    ux = np.exp(-1j * theta * k)[None, :] * np.ones((N, 1))
    uy = np.ones((N, N), dtype=complex)
    uy[:, N - 1] = np.exp(1j * theta * N * j)
    return ux, uy


def make_background(grid: TorusGrid, rank: int, flux: Sequence[int],
                    block_sizes: Optional[Sequence[int]] = None) -> HiggsBundleData:
    """Block-diagonal constant-curvature links; a = 0, phi = 0."""
    flux = tuple(int(d) for d in flux)
    if rank < 1:
        raise ConfigurationError("rank must be >= 1")
    if not 1 <= len(flux) <= rank:
        raise ConfigurationError(f"flux vector of length {len(flux)} does not fit rank {rank}")
    if block_sizes is None:
        if len(flux) == rank:
            block_sizes = (1,) * rank
        elif len(flux) == 1:
            block_sizes = (rank,)
        else:
            raise ConfigurationError("block_sizes required when 1 < len(flux) < rank")
    block_sizes = tuple(int(b) for b in block_sizes)
    if len(block_sizes) != len(flux) or sum(block_sizes) != rank or min(block_sizes) < 1:
        raise ConfigurationError("block_sizes must be positive and sum to rank")
    N = grid.N
    links = np.zeros((2, N, N, rank, rank), dtype=complex)
    pos = 0
    for d, b in zip(flux, block_sizes):
        if d % b:
            raise ConfigurationError(f"block of size {b} cannot carry flux {d} (must divide)")
        ux, uy = landau_phases(N, d // b)
        for i in range(pos, pos + b):
            links[0, :, :, i, i] = ux
            links[1, :, :, i, i] = uy
        pos += b
    zeros = np.zeros((N, N, rank, rank), dtype=complex)
    return HiggsBundleData(grid, rank, flux, block_sizes, links, zeros.copy(), zeros.copy(),
                           np.zeros((N, N)))


# Transport and covariant differences on End(E) -----------------------------------

def _fwd(X, axis):
    return np.roll(X, -1, axis=axis)


def _bwd(X, axis):
    return np.roll(X, 1, axis=axis)


def adj_fwd(X, bundle, mu):
    U = bundle.links[mu]
    return U @ _fwd(X, mu) @ dagger(U)


def adj_bwd(X, bundle, mu):
    Ub = _bwd(bundle.links[mu], mu)
    return dagger(Ub) @ _bwd(X, mu) @ Ub


def delta(X, bundle, mu):
    """Forward covariant difference."""
    return (adj_fwd(X, bundle, mu) - X) * bundle.grid.N


def delta_star(Y, bundle, mu):
    """Backward covariant difference; sum Tr(delta_star(Y) s) = -sum Tr(Y delta(s))."""
    return (Y - adj_bwd(Y, bundle, mu)) * bundle.grid.N


def delta_c(X, bundle, mu):
    """Centered covariant difference."""
    return (adj_fwd(X, bundle, mu) - adj_bwd(X, bundle, mu)) * (0.5 * bundle.grid.N)


def edge_average(X, bundle, mu):
    return 0.5 * (X + adj_fwd(X, bundle, mu))


def comm(A, B):
    return A @ B - B @ A


def dbar_E(X, bundle):
    """Coefficient of dzbar in dbar_E X for an endomorphism field X."""
    dx, dy = bundle.grid.d
    return dx * delta_c(X, bundle, 0) + dy * delta_c(X, bundle, 1) + comm(bundle.a_field, X)


def d_H0(X, bundle):
    """Coefficient of dz in the Chern (1,0) derivative of H0."""
    cx, cy = bundle.grid.c
    return cx * delta_c(X, bundle, 0) + cy * delta_c(X, bundle, 1) - comm(dagger(bundle.a_field), X)


def D_double_prime(X, bundle) -> FormPair:
    """D'' X = dbar_E X + [phi, X]."""
    return FormPair(dz=comm(bundle.phi_field, X), dzbar=dbar_E(X, bundle))


def D_prime(X, bundle) -> FormPair:
    """D' X = d_H0 X + [phi^{*H0}, X]."""
    return FormPair(dz=d_H0(X, bundle), dzbar=comm(dagger(bundle.phi_field), X))


def validate_higgs(bundle, tol: float = TOL_HIGGS) -> dict:
    """Max-norm of dbar_E phi; a Higgs bundle needs it below tol * max|phi|."""
    phi = bundle.phi_field
    scale = float(np.max(frob(phi)))
    res = float(np.max(frob(dbar_E(phi, bundle)))) if scale > 0 else 0.0
    return {"residual": res, "scale": scale, "tol": tol * scale, "ok": res <= tol * scale}


def gauge_transform(bundle, g, state: Optional[HermitianState] = None):
    """Apply a unitary gauge field g (N, N, r, r) to the bundle (and state)."""
    links = np.stack([g @ bundle.links[mu] @ dagger(_fwd(g, mu)) for mu in (0, 1)])
    out = bundle.replace(links=links, a_field=g @ bundle.a_field @ dagger(g),
                         phi_field=g @ bundle.phi_field @ dagger(g))
    if state is None:
        return out
    return out, HermitianState(g @ state.s_field @ dagger(g), state.background_tag)


# Curvature --------------------------------------------------------------------

def plaquettes(bundle):
    ux, uy = bundle.links
    return ux @ _fwd(uy, 0) @ dagger(_fwd(ux, 1)) @ dagger(uy)


def _unitary_log_angle(P):
    """Hermitian Theta with P = exp(i Theta), branch (-pi, pi]."""
    off = P - np.eye(P.shape[-1]) * np.diagonal(P, axis1=-2, axis2=-1)[..., None, :]
    if not np.any(off):
        th = np.zeros(P.shape, dtype=complex)
        idx = np.arange(P.shape[-1])
        th[..., idx, idx] = np.angle(np.diagonal(P, axis1=-2, axis2=-1))
        return th
    vals, vecs = np.linalg.eig(P)
    th = (vecs * np.angle(vals)[..., None, :]) @ np.linalg.inv(vecs)
    return hc.hermitian_part(th)


def background_curvature(bundle, metric):
    """sqrt(-1) Lambda F of the link field: -Theta N^2 / (w T) per plaquette."""
    g = bundle.grid
    th = _unitary_log_angle(plaquettes(bundle))
    K = -th * (g.N ** 2 / g.T) / metric.weight[..., None, None]
    if bundle.bug_flip_background:
        K = -K
    return K


def a_curvature(bundle, metric):
    """(2/w)(d_z a + (d_z a)^H + [a, a^H]) with centered covariant differences."""
    a = bundle.a_field
    if not np.any(a):
        return np.zeros_like(a)
    cx, cy = bundle.grid.c
    dza = cx * delta_c(a, bundle, 0) + cy * delta_c(a, bundle, 1)
    return (2.0 / metric.weight)[..., None, None] * (dza + dagger(dza) + comm(a, dagger(a)))


def conformal_curvature(bundle, metric):
    r = bundle.rank
    if not np.any(bundle.conformal):
        return np.zeros(bundle.conformal.shape + (r, r), dtype=complex)
    p = p_operator(bundle.conformal, metric, scheme="lattice")
    return p[..., None, None] * np.eye(r)


def bundle_curvature(bundle, metric):
    """Curvature part of K_H0 without the Higgs term."""
    return background_curvature(bundle, metric) + a_curvature(bundle, metric) \
        + conformal_curvature(bundle, metric)


def higgs_flat_term(bundle, metric):
    phi = bundle.phi_field
    return (2.0 / metric.weight)[..., None, None] * comm(phi, dagger(phi))


def K_H0(bundle, metric):
    return bundle_curvature(bundle, metric) + higgs_flat_term(bundle, metric)


def lam_constant(bundle, metric) -> float:
    """lambda = 2 pi mu(E) / Vol."""
    return 2 * np.pi * bundle.slope / metric.volume


def adjoint_phi(bundle, state: HermitianState):
    """phi^{*H} = f^-1 phi^H f, evaluated in the eigenframe of s."""
    e = state.eig
    v, lam = e.eigenvectors, e.eigenvalues
    pt = dagger(v) @ dagger(bundle.phi_field) @ v
    pt = pt * np.exp(np.clip(lam[..., None, :] - lam[..., :, None], -EXP_CAP, EXP_CAP))
    return v @ pt @ dagger(v)


def metric_term_raw(bundle, metric, state: HermitianState, psi_eigs=None):
    """-(2/w) dbar_E(Psi(s)(d_H0 s)), before H-symmetrization."""
    g = bundle.grid
    s = state.s_field
    cx, cy = g.c
    dx, dy = g.d
    cc = (cx, cy)
    dd = (dx, dy)
    psi = hc.simpson_psi
    e_site = state.eig
    Z = np.zeros_like(s)
    for mu in (0, 1):
        sbar = edge_average(s, bundle, mu)
        e_edge = psi_eigs[mu] if psi_eigs is not None else hc.eig_herm(sbar, check=False)
        Z = Z + (dd[mu] * cc[mu]) * delta_star(
            hc.apply_bifn(sbar, delta(s, bundle, mu), psi, e_edge), bundle, mu)
    cen = [delta_c(s, bundle, 0), delta_c(s, bundle, 1)]
    for mu, nu in ((0, 1), (1, 0)):
        Z = Z + (dd[mu] * cc[nu]) * delta_c(hc.apply_bifn(s, cen[nu], psi, e_site), bundle, mu)
    a = bundle.a_field
    if np.any(a):
        ca = comm(dagger(a), s)
        psi_ca = hc.apply_bifn(s, ca, psi, e_site)
        for mu in (0, 1):
            Z = Z - dd[mu] * delta_c(psi_ca, bundle, mu)
        Y = hc.apply_bifn(s, cx * cen[0] + cy * cen[1] - ca, psi, e_site)
        Z = Z + comm(a, Y)
    return -(2.0 / metric.weight)[..., None, None] * Z


def _conj_sqrt_f(X, e: hc.HermEigen):
    """(g X g^-1) expressed in the eigenframe of s, g = exp(s/2)."""
    v, lam = e.eigenvectors, e.eigenvalues
    xt = dagger(v) @ X @ v
    return xt * np.exp(np.clip(0.5 * (lam[..., :, None] - lam[..., None, :]), -EXP_CAP, EXP_CAP))


@dataclass
class CurvatureParts:
    """Pieces of K_H in the H-unitary frame g = exp(s/2), all Hermitian.

    hermitian_K = g K_H g^-1 written in the eigenframe of s.
    """
    eig: hc.HermEigen
    hermitian_K: np.ndarray
    raw_defect: np.ndarray   # pointwise |anti-Hermitian part| of g K_raw g^-1


def curvature_parts(bundle, metric, state: HermitianState) -> CurvatureParts:
    e = state.eig
    body = bundle_curvature(bundle, metric)
    if np.any(state.s_field):
        body = body + metric_term_raw(bundle, metric, state)
    bt = _conj_sqrt_f(body, e)
    herm = hc.hermitian_part(bt)
    defect = frob(bt - herm)
    psi_t = _conj_sqrt_f(bundle.phi_field, e)
    higgs = (2.0 / metric.weight)[..., None, None] * comm(psi_t, dagger(psi_t))
    return CurvatureParts(e, herm + higgs, defect)


def mean_curvature_K(bundle, state: HermitianState, metric, raw: bool = False):
    """K_H = sqrt(-1) Lambda (F_H + [phi, phi^{*H}]) for H = H0 exp(s).

    raw=True returns the unsymmetrized lattice expression.
    """
    if raw:
        K = bundle_curvature(bundle, metric) + metric_term_raw(bundle, metric, state)
        return K + (2.0 / metric.weight)[..., None, None] * comm(
            bundle.phi_field, adjoint_phi(bundle, state))
    parts = curvature_parts(bundle, metric, state)
    v, lam = parts.eig.eigenvectors, parts.eig.eigenvalues
    kt = parts.hermitian_K * np.exp(
        np.clip(0.5 * (lam[..., None, :] - lam[..., :, None]), -EXP_CAP, EXP_CAP))
    return v @ kt @ dagger(v)


def h_norm(X, state: HermitianState):
    """Pointwise |X|_H = |g X g^-1|_F for H = H0 exp(s)."""
    return frob(_conj_sqrt_f(X, state.eig))


def degree_of(bundle, metric, state: Optional[HermitianState] = None) -> float:
    """integrate(Tr K_H) / 2 pi."""
    if state is None:
        K = K_H0(bundle, metric)
    else:
        K = mean_curvature_K(bundle, state, metric)
    return float(np.real(integrate(trace(K), metric)) / (2 * np.pi))


def higgs_coupling(bundle, metric, s: np.ndarray, t: float) -> np.ndarray:
    """Pointwise Re <(2/w)[phi, exp(-t s) phi^H exp(t s)], s>, nondecreasing in t.

    In the eigenframe of s this is (2/w) sum |phi_ij|^2 (l_i - l_j) exp(t (l_i - l_j)).
    """
    e = hc.eig_herm(s)
    v = e.eigenvectors
    ph = dagger(v) @ bundle.phi_field @ v
    d = e.eigenvalues[..., :, None] - e.eigenvalues[..., None, :]
    val = np.sum(np.abs(ph) ** 2 * d * np.exp(np.clip(t * d, -EXP_CAP, EXP_CAP)), axis=(-1, -2))
    return (2.0 / metric.weight) * val
