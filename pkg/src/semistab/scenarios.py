"""The fixed scenario library and helpers to build bundles from specs.

E1  rank 1, flux 0, a = 0, phi = 0: trivial, exact HE at s = 0.
E2  rank 2, flux (0, 0), phi = [[0, 1], [0, 0]]: semistable, not polystable.
E3  rank 2, flux (1, -1), phi = 0: unstable, the flux-1 line destabilizes.
E4  rank 2, flux (1, 0) with a generic a in the Hom(L1, O) slot: a nonsplit
    extension 0 -> O -> E -> L1 -> 0, expected stable.
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError
from .higgs_bundle import HiggsBundleData, make_background, validate_higgs
from .torus_geometry import ConformalMetric, make_grid


@dataclass
class BundleSpec:
    N: int = 32
    tau: complex = 1j
    weight: Optional[dict] = None
    rank: int = 1
    flux: Tuple[int, ...] = (0,)
    block_sizes: Optional[Tuple[int, ...]] = None
    a_amplitude: float = 0.0
    a_smoothness: float = 0.02
    a_entry: Tuple[int, int] = (1, 0)
    phi_matrix: Optional[np.ndarray] = None


LIBRARY = {
    "E1": dict(rank=1, flux=(0,)),
    "E2": dict(rank=2, flux=(0, 0), phi_matrix=[[0, 1], [0, 0]]),
    "E3": dict(rank=2, flux=(1, -1)),
    "E4": dict(rank=2, flux=(1, 0), a_amplitude=0.5, a_smoothness=0.02, a_entry=(1, 0)),
}


def library_spec(name: str, **overrides) -> BundleSpec:
    if name not in LIBRARY:
        raise ConfigurationError(f"unknown scenario {name!r}; known: {sorted(LIBRARY)}")
    kw = dict(LIBRARY[name])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return BundleSpec(**kw)


def line_laplacian(link_x: np.ndarray, link_y: np.ndarray) -> sp.csr_matrix:
    """Sparse -(sum of compact covariant second differences) on a U(1) link field."""
    N = link_x.shape[0]
    idx = np.arange(N * N).reshape(N, N)
    rows, cols, vals = [], [], []
    for link, axis in ((link_x, 0), (link_y, 1)):
        nb = np.roll(idx, -1, axis=axis)
        rows += [idx.ravel(), nb.ravel()]
        cols += [nb.ravel(), idx.ravel()]
        vals += [-link.ravel() * N ** 2, -np.conj(link).ravel() * N ** 2]
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(np.full(N * N, 4.0 * N ** 2))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(N * N, N * N))


def smooth_twisted_section(link_x, link_y, rng: np.random.Generator, smoothness: float,
                           passes: int = 2) -> np.ndarray:
    """Covariantly smooth random section: (1 + t Lap)^-passes applied to noise."""
    N = link_x.shape[0]
    L = line_laplacian(link_x, link_y)
    A = (sp.identity(N * N) + smoothness * L).tocsc()
    v = rng.normal(size=N * N) + 1j * rng.normal(size=N * N)
    lu = spla.splu(A)
    for _ in range(passes):
        v = lu.solve(v)
    v = v.reshape(N, N)
    return v / np.max(np.abs(v))


def build_bundle(spec: BundleSpec, rng: Optional[np.random.Generator] = None):
    grid, metric = make_grid(spec.N, spec.tau, spec.weight)
    if len(spec.flux) > spec.rank:
        raise ConfigurationError("flux vector longer than rank")
    bundle = make_background(grid, spec.rank, spec.flux, spec.block_sizes)
    r = spec.rank
    if spec.phi_matrix is not None:
        phi = np.asarray(spec.phi_matrix, dtype=complex)
        if phi.shape != (r, r):
            raise ConfigurationError(f"phi matrix must be {r}x{r}")
        bundle = bundle.replace(phi_field=np.broadcast_to(phi, (spec.N, spec.N, r, r)).copy())
    if spec.a_amplitude:
        i, j = spec.a_entry
        if not (0 <= i < r and 0 <= j < r) or i == j:
            raise ConfigurationError("a_entry must be an off-diagonal index pair")
        rng = rng if rng is not None else np.random.default_rng(0)
        U = bundle.links
        # Hom(e_j -> e_i) transforms by U_ii conj(U_jj)
        lx = U[0, ..., i, i] * np.conj(U[0, ..., j, j])
        ly = U[1, ..., i, i] * np.conj(U[1, ..., j, j])
        a = np.zeros_like(bundle.a_field)
        a[..., i, j] = spec.a_amplitude * smooth_twisted_section(lx, ly, rng, spec.a_smoothness)
        bundle = bundle.replace(a_field=a)
    check = validate_higgs(bundle)
    if not check["ok"]:
        raise ConfigurationError(
            f"not a Higgs bundle: |dbar_E phi| = {check['residual']:.3e} > {check['tol']:.3e}")
    return bundle, metric
