"""Hermitian functional calculus on small matrices and matrix fields.

Everything here accepts a single (r, r) matrix or a stack (..., r, r) and
works site-wise. Eigen-decompositions use a cyclic Jacobi iteration, which is
deterministic and accurate to round-off for r <= 4.

Bifunction convention: for eta = V diag(lam) V^H, apply_bifn(eta, A, psi)
scales entry (i, j) of V^H A V by psi(lam_i, lam_j). With psi = simpson_psi
this is exactly f^-1 Dexp_s[A] for f = exp(s).
"""
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, DomainError

HERM_TOL = 1e-10
GAP_MIN = 1e-6
# exponent cap: exp(EXP_CAP) is finite in double precision
EXP_CAP = 700.0


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def hermitian_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + dagger(a))


def frob(a: np.ndarray) -> np.ndarray:
    """Frobenius norm over the last two axes."""
    return np.sqrt(np.sum(np.abs(a) ** 2, axis=(-1, -2)))


def trace(a: np.ndarray) -> np.ndarray:
    return np.trace(a, axis1=-2, axis2=-1)


@dataclass
class HermEigen:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues[..., None, :]) @ dagger(v)


def _jacobi(a: np.ndarray, max_sweeps: int = 40):
    a = np.array(a, dtype=complex, copy=True)
    r = a.shape[-1]
    v = np.broadcast_to(np.eye(r, dtype=complex), a.shape).copy()
    if r == 1:
        return a[..., 0, 0].real[..., None], v
    scale = frob(a)
    scale = np.where(scale > 0, scale, 1.0)
    thresh = (4 * np.finfo(float).eps * scale) ** 2
    for _ in range(max_sweeps):
        off = np.zeros(a.shape[:-2])
        for p in range(r - 1):
            for q in range(p + 1, r):
                off = off + np.abs(a[..., p, q]) ** 2
        if np.all(off <= thresh):
            break
        for p in range(r - 1):
            for q in range(p + 1, r):
                apq = a[..., p, q]
                mag = np.abs(apq)
                active = mag > 0
                safe = np.where(active, mag, 1.0)
                theta = (a[..., q, q].real - a[..., p, p].real) / (2 * safe)
                sgn = np.where(theta >= 0, 1.0, -1.0)
                t = sgn / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ph = np.where(active, np.conj(apq) / safe, 1.0)
                # V restricted to (p, q): [[c, s], [-s ph, c ph]]
                colp = a[..., :, p].copy()
                colq = a[..., :, q].copy()
                a[..., :, p] = c[..., None] * colp - (s * ph)[..., None] * colq
                a[..., :, q] = s[..., None] * colp + (c * ph)[..., None] * colq
                rowp = a[..., p, :].copy()
                rowq = a[..., q, :].copy()
                a[..., p, :] = c[..., None] * rowp - (s * np.conj(ph))[..., None] * rowq
                a[..., q, :] = s[..., None] * rowp + (c * np.conj(ph))[..., None] * rowq
                a[..., p, q] = 0.0
                a[..., q, p] = 0.0
                vp = v[..., :, p].copy()
                vq = v[..., :, q].copy()
                v[..., :, p] = c[..., None] * vp - (s * ph)[..., None] * vq
                v[..., :, q] = s[..., None] * vp + (c * ph)[..., None] * vq
    lam = np.real(np.diagonal(a, axis1=-2, axis2=-1)).copy()
    return lam, v


def eig_herm(eta: np.ndarray, check: bool = True) -> HermEigen:
    """Eigen-decomposition of Hermitian matrices, eigenvalues ascending."""
    eta = np.asarray(eta)
    if eta.shape[-1] != eta.shape[-2]:
        raise ConfigurationError("eig_herm needs square matrices")
    if check:
        asym = np.max(frob(eta - dagger(eta)), initial=0.0)
        size = max(1.0, float(np.max(frob(eta), initial=0.0)))
        if asym > HERM_TOL * size:
            raise DomainError(f"matrix is not Hermitian (defect {asym:.3e})")
    lam, v = _jacobi(hermitian_part(eta))
    order = np.argsort(lam, axis=-1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)
    return HermEigen(lam, v)


def apply_fn(eta: np.ndarray, g: Callable, eig: Optional[HermEigen] = None) -> np.ndarray:
    """g(eta) through the eigenframe."""
    e = eig if eig is not None else eig_herm(eta)
    vals = g(e.eigenvalues)
    return (e.eigenvectors * vals[..., None, :]) @ dagger(e.eigenvectors)


def exp_h(eta, eig=None):
    return apply_fn(eta, np.exp, eig)


def log_h(f, eig=None):
    e = eig if eig is not None else eig_herm(f)
    if np.any(e.eigenvalues <= 0):
        raise DomainError("log of a matrix that is not positive definite")
    return apply_fn(f, np.log, e)


def apply_bifn(eta: np.ndarray, A: np.ndarray, psi: Callable,
               eig: Optional[HermEigen] = None) -> np.ndarray:
    """Entry (i, j) of A in eta's eigenframe is scaled by psi(lam_i, lam_j)."""
    e = eig if eig is not None else eig_herm(eta)
    v = e.eigenvectors
    lam = e.eigenvalues
    at = dagger(v) @ A @ v
    at = at * psi(lam[..., :, None], lam[..., None, :])
    return v @ at @ dagger(v)


def simpson_psi(x, y):
    """(exp(y - x) - 1) / (y - x), equal to 1 on the diagonal.

    Exponents above EXP_CAP are clipped so the value stays finite.
    """
    d = np.subtract(y, x, dtype=float)
    dc = np.minimum(d, EXP_CAP)
    safe = np.where(d == 0, 1.0, d)
    out = np.where(d == 0, 1.0, np.expm1(dc) / safe)
    return out if np.ndim(out) else float(out)


def scaled_psi(l, x, y, with_flag: bool = False):
    """l * simpson_psi(l x, l y), nondecreasing in l > 0.

    Tends to 1/(x - y) for x > y and to infinity otherwise. When
    l (y - x) exceeds EXP_CAP the value saturates; with_flag=True also returns
    the boolean saturation mask.
    """
    l = np.asarray(l, dtype=float)
    if np.any(l <= 0):
        raise DomainError("scaled_psi needs l > 0")
    d = np.subtract(y, x, dtype=float)
    ld = l * d
    sat = ld > EXP_CAP
    safe = np.where(d == 0, 1.0, d)
    val = np.where(d == 0, l, np.expm1(np.minimum(ld, EXP_CAP)) / safe)
    val = val if np.ndim(val) else float(val)
    if with_flag:
        return val, (sat if np.ndim(sat) else bool(sat))
    return val


def psi_pairing(s: np.ndarray, X: np.ndarray, eig: Optional[HermEigen] = None):
    """<Psi(s)(X), X> with Psi acting on the components A_a^b = X[b, a].

    In the eigenframe of s this is sum_{i,j} Psi(lam_j, lam_i) |X_ij|^2, the
    pairing that appears in the energy identity. Always >= 0.
    """
    e = eig if eig is not None else eig_herm(s)
    v = e.eigenvectors
    lam = e.eigenvalues
    xt = dagger(v) @ X @ v
    w = simpson_psi(lam[..., None, :], lam[..., :, None])
    return np.sum(w * np.abs(xt) ** 2, axis=(-1, -2))


# Step functions -----------------------------------------------------------

@dataclass(frozen=True)
class StepSpec:
    """P_alpha = 1 below lo, 0 above hi, cubic smoothstep in between."""
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ConfigurationError("StepSpec needs lo < hi")

    def value(self, x):
        t = np.clip((np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        return 1.0 - t * t * (3.0 - 2.0 * t)

    def slope(self, x):
        t = np.clip((np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        return -6.0 * t * (1.0 - t) / (self.hi - self.lo)

    @property
    def max_slope(self) -> float:
        return 1.5 / (self.hi - self.lo)


def dP_alpha(spec: StepSpec, x, y):
    """Difference quotient (P(x) - P(y)) / (x - y), P'(x) on the diagonal."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    same = x == y
    safe = np.where(same, 1.0, x - y)
    out = np.where(same, spec.slope(x), (spec.value(x) - spec.value(y)) / safe)
    return out if np.ndim(out) else float(out)


def sum_rule_check(mu: Sequence[float], beta: int, gamma: int) -> float:
    """sum_alpha (mu[alpha+1] - mu[alpha]) dP_alpha(mu[beta], mu[gamma])**2.

    Indices are zero-based. Equals 1/|mu[beta] - mu[gamma]|.
    """
    mu = np.asarray(mu, dtype=float)
    if beta == gamma:
        raise DomainError("sum rule undefined for beta == gamma")
    if np.any(np.diff(mu) <= 0):
        raise DomainError("eigenvalues must be strictly increasing")
    terms = []
    for a in range(len(mu) - 1):
        spec = StepSpec(mu[a], mu[a + 1])
        terms.append((mu[a + 1] - mu[a]) * dP_alpha(spec, mu[beta], mu[gamma]) ** 2)
    return float(np.sum(terms))


# Projections ----------------------------------------------------------------

def projections_from(u: np.ndarray, thresholds: Sequence[float], gap_min: float = GAP_MIN,
                     eig: Optional[HermEigen] = None):
    """Spectral projections onto eigenvalues below each threshold.

    Raises DomainError when an eigenvalue sits within gap_min of a
    threshold, since the projection is then ill-conditioned.
    """
    e = eig if eig is not None else eig_herm(u)
    lam = e.eigenvalues
    v = e.eigenvectors
    out = []
    for t in thresholds:
        dist = np.min(np.abs(lam - t))
        if dist < gap_min:
            raise DomainError(
                f"threshold {t:.6g} lies inside an eigenvalue cluster (distance {dist:.3e})")
        mask = (lam < t).astype(float)
        out.append((v * mask[..., None, :]) @ dagger(v))
    return out


# Identities -------------------------------------------------------------------

def dexp_block(s: np.ndarray, ds: np.ndarray) -> np.ndarray:
    """Derivative of exp at s in direction ds via a 2r x 2r block exponential."""
    r = s.shape[-1]
    big = np.zeros(s.shape[:-2] + (2 * r, 2 * r), dtype=complex)
    big[..., :r, :r] = s
    big[..., r:, r:] = s
    big[..., :r, r:] = ds
    return scipy.linalg.expm(big)[..., :r, r:]


def trace_identity_check(s: np.ndarray, ds: np.ndarray) -> float:
    """|Tr(f^-1 Dexp_s[ds] s) - Tr(s ds)| using the block-exponential oracle."""
    finv = scipy.linalg.expm(-np.asarray(s, dtype=complex))
    lhs = trace(finv @ dexp_block(s, ds) @ s)
    rhs = trace(s @ ds)
    return float(np.max(np.abs(lhs - rhs)))


def pointwise_identity_check(lam, A, phi, dlam, w=1.0, frame=None):
    """Both sides of Tr sqrt(-1)Lambda{f^-1 D'f ^ D''s} = <Psi(s)(D''s), D''s>.

    Synthetic data at one point (or a batch of points along leading axes):
    eigenvalues lam of s, the (1,0) connection matrix A of H0 in the
    eigenframe (column a is d e_a), Higgs matrix phi, and d_z lam. The
    optional unitary `frame` rotates everything into a generic basis; the
    left side is then built with expm and the block-exponential derivative,
    the right side through eig_herm, so the two sides share no code path
    beyond matrix products.
    """
    lam = np.asarray(lam, dtype=float)
    r = lam.shape[-1]
    eye = np.eye(r)
    U = eye if frame is None else np.asarray(frame)
    Ud = dagger(U)
    w = np.asarray(w, dtype=float)
    s = U @ (lam[..., None, :] * eye).astype(complex) @ Ud
    Ar = U @ A @ Ud
    ph = U @ phi @ Ud
    ds10 = U @ (np.asarray(dlam)[..., None, :] * eye) @ Ud   # entry derivatives of s, (1,0)
    ds01 = dagger(ds10)                                       # lam real
    f = scipy.linalg.expm(s)
    finv = scipy.linalg.expm(-s)
    # D'f = (d f + [A, f]) dz + [phi^H, f] dzbar
    P10 = dexp_block(s, ds10) + Ar @ f - f @ Ar
    P01 = dagger(ph) @ f - f @ dagger(ph)
    # D''s = (dbar s - [A^H, s]) dzbar + [phi, s] dz
    Q01 = ds01 - (dagger(Ar) @ s - s @ dagger(Ar))
    Q10 = ph @ s - s @ ph
    lhs = (2.0 / w) * trace(finv @ P10 @ Q01 - finv @ P01 @ Q10)
    e = eig_herm(s)
    rhs = (2.0 / w) * (psi_pairing(s, Q01, e) + psi_pairing(s, Q10, e))
    if np.ndim(lhs) == 0:
        return complex(lhs), float(rhs)
    return lhs, rhs
