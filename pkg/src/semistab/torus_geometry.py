"""Discretized flat torus C/(Z + tau Z) with a conformal metric.

Sites are z = (j + tau*k)/N for j, k in range(N); fields are arrays of shape
(N, N) indexed [j, k], so axis 0 is the lattice x-direction and axis 1 the
y-direction, with x, y in [0, 1).

The Kahler form is omega = w (i/2) dz ^ dzbar = w T dx ^ dy with T = Im tau,
so a cell has Euclidean area T / N**2.

Sign convention for P = sqrt(-1) Lambda dbar d: on scalars
P u = -(2/w) d_z d_zbar u, a nonnegative operator. With w = 1 and tau = i the
mode exp(2 pi i (m x + n y)) is multiplied by 2 pi**2 (m**2 + n**2).
"""
from dataclasses import dataclass
from typing import Callable, Mapping, Union

import numpy as np
import scipy.fft as sfft

from .errors import ConfigurationError, SolvabilityError

TOL_MEAN = 1e-10
TOL_POISSON = 1e-12

_FFT_WORKERS = 1


def set_fft_workers(n: int) -> None:
    """Number of threads scipy.fft may use. Results do not depend on it."""
    global _FFT_WORKERS
    _FFT_WORKERS = max(1, int(n))


def fft2(a):
    return sfft.fft2(a, axes=(0, 1), workers=_FFT_WORKERS)


def ifft2(a):
    return sfft.ifft2(a, axes=(0, 1), workers=_FFT_WORKERS)


@dataclass(frozen=True)
class TorusGrid:
    N: int
    tau: complex

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def T(self) -> float:
        return float(self.tau.imag)

    @property
    def cell_area(self) -> float:
        return self.T / self.N ** 2

    @property
    def xy(self):
        """Lattice coordinates (x, y) as two (N, N) arrays."""
        t = np.arange(self.N) / self.N
        return np.meshgrid(t, t, indexing="ij")

    @property
    def coords(self) -> np.ndarray:
        x, y = self.xy
        return x + self.tau * y

    @property
    def c(self):
        """Coefficients of d_z = c_x d_x + c_y d_y."""
        T = self.T
        return (-np.conj(self.tau) / (2j * T), 1.0 / (2j * T))

    @property
    def d(self):
        """Coefficients of d_zbar = d_x d_x + d_y d_y (complex conjugates of c)."""
        cx, cy = self.c
        return (np.conj(cx), np.conj(cy))

    def modes(self):
        """Integer Fourier mode numbers (m, n) as (N, N) arrays."""
        f = np.rint(np.fft.fftfreq(self.N) * self.N)
        return np.meshgrid(f, f, indexing="ij")


@dataclass(frozen=True, eq=False)
class ConformalMetric:
    grid: TorusGrid
    weight: np.ndarray

    @property
    def volume(self) -> float:
        return integrate(np.ones_like(self.weight), self)

    def scaled(self, c: float) -> "ConformalMetric":
        return ConformalMetric(self.grid, self.weight * c)


WeightSpec = Union[None, float, np.ndarray, Callable, Mapping]


def _weight_from_spec(grid: TorusGrid, spec: WeightSpec) -> np.ndarray:
    x, y = grid.xy
    if spec is None:
        w = np.ones((grid.N, grid.N))
    elif isinstance(spec, (int, float)):
        w = np.full((grid.N, grid.N), float(spec))
    elif isinstance(spec, np.ndarray):
        w = np.array(spec, dtype=float)
    elif callable(spec):
        w = np.asarray(spec(x, y), dtype=float) * np.ones((grid.N, grid.N))
    elif isinstance(spec, Mapping):
        kind = spec.get("kind", "constant")
        if kind == "constant":
            w = np.full((grid.N, grid.N), float(spec.get("value", 1.0)))
        elif kind == "cosine":
            mx, my = spec.get("mode", (1, 0))
            base = float(spec.get("value", 1.0))
            amp = float(spec.get("amplitude", 0.3))
            w = base + amp * np.cos(2 * np.pi * (mx * x + my * y))
        else:
            raise ConfigurationError(f"unknown weight kind {kind!r}")
    else:
        raise ConfigurationError(f"cannot interpret weight spec {spec!r}")
    if w.shape != (grid.N, grid.N):
        raise ConfigurationError(f"weight has shape {w.shape}, expected {(grid.N, grid.N)}")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ConfigurationError("conformal weight must be strictly positive")
    return w


def make_grid(N: int, tau: complex = 1j, weight_spec: WeightSpec = None):
    """Build the grid and its conformal metric."""
    if int(N) != N or N < 8 or N % 2:
        raise ConfigurationError(f"N must be an even integer >= 8, got {N}")
    tau = complex(tau)
    if tau.imag <= 0:
        raise ConfigurationError("Im tau must be positive")
    grid = TorusGrid(int(N), tau)
    return grid, ConformalMetric(grid, _weight_from_spec(grid, weight_spec))


def integrate(field: np.ndarray, metric: ConformalMetric):
    """Sum of field * w * cell_area over the leading (N, N) axes.

    np.sum uses a fixed pairwise order, so the result is reproducible
    regardless of threading.
    """
    w = metric.weight.reshape(metric.weight.shape + (1,) * (np.ndim(field) - 2))
    return np.sum(field * w, axis=(0, 1)) * metric.grid.cell_area


# Fourier symbols ---------------------------------------------------------

def _first_symbols(grid: TorusGrid, scheme: str):
    m, n = grid.modes()
    N = grid.N
    if scheme == "spectral":
        sx = 2j * np.pi * m
        sy = 2j * np.pi * n
        # Nyquist has no odd real derivative
        sx[np.abs(m) == N // 2] = 0
        sy[np.abs(n) == N // 2] = 0
    elif scheme in ("centered", "lattice"):
        sx = 1j * N * np.sin(2 * np.pi * m / N)
        sy = 1j * N * np.sin(2 * np.pi * n / N)
    else:
        raise ConfigurationError(f"unknown scheme {scheme!r}")
    return sx, sy


def derivative_symbol(grid: TorusGrid, direction: str, scheme: str = "spectral"):
    sx, sy = _first_symbols(grid, scheme)
    if direction in ("dz", "d"):
        cx, cy = grid.c
    elif direction in ("dzbar", "dbar"):
        cx, cy = grid.d
    else:
        raise ConfigurationError(f"unknown direction {direction!r}")
    return cx * sx + cy * sy


def p_symbol_flat(grid: TorusGrid, scheme: str = "spectral") -> np.ndarray:
    """Symbol of w * P, i.e. of -2 d_z d_zbar (real and >= 0)."""
    m, n = grid.modes()
    N = grid.N
    cx, cy = grid.c
    dx, dy = grid.d
    if scheme == "spectral":
        kx, ky = 2 * np.pi * m, 2 * np.pi * n
        sym = 2 * np.abs(cx * kx + cy * ky) ** 2
    elif scheme == "lattice":
        # compact second differences on the diagonal, centered products off it
        qx = 4 * N ** 2 * np.sin(np.pi * m / N) ** 2
        qy = 4 * N ** 2 * np.sin(np.pi * n / N) ** 2
        sx = N * np.sin(2 * np.pi * m / N)
        sy = N * np.sin(2 * np.pi * n / N)
        mixed = (dx * cy + dy * cx).real
        sym = 2 * ((dx * cx).real * qx + (dy * cy).real * qy + mixed * sx * sy)
    else:
        raise ConfigurationError(f"unknown scheme {scheme!r}")
    return np.real(sym)


def _apply_symbol(field, sym):
    f = np.asarray(field)
    extra = f.ndim - 2
    s = sym.reshape(sym.shape + (1,) * extra)
    out = ifft2(fft2(f) * s)
    return out


def derivative(field: np.ndarray, grid: TorusGrid, direction: str = "dz",
               scheme: str = "spectral") -> np.ndarray:
    """d_z or d_zbar of a field (extra trailing axes are carried along)."""
    return _apply_symbol(field, derivative_symbol(grid, direction, scheme))


def p_operator(field: np.ndarray, metric: ConformalMetric, scheme: str = "spectral") -> np.ndarray:
    """P u = sqrt(-1) Lambda dbar d u = -(2/w) d_z d_zbar u."""
    f = np.asarray(field)
    out = _apply_symbol(f, p_symbol_flat(metric.grid, scheme))
    w = metric.weight.reshape(metric.weight.shape + (1,) * (f.ndim - 2))
    out = out / w
    if np.isrealobj(f):
        out = out.real
    return out


def solve_p(rhs: np.ndarray, metric: ConformalMetric, scheme: str = "spectral",
            tol_mean: float = TOL_MEAN) -> np.ndarray:
    """Solve P phi = rhs with integrate(phi) = 0.

    Requires integrate(rhs) = 0 up to tol_mean * ||rhs||, where ||rhs|| is
    the integral of |rhs|, floored at 1e-3 Vol so round-off rhs is accepted.
    """
    rhs = np.asarray(rhs)
    scale = max(abs(integrate(np.abs(rhs), metric)), 1e-3 * metric.volume)
    mean = integrate(rhs, metric)
    if abs(mean) > tol_mean * scale:
        raise SolvabilityError(
            f"P phi = rhs is not solvable: integral of rhs is {mean!r} (scale {scale:.3e})")
    sym = p_symbol_flat(metric.grid, scheme)
    inv = np.zeros_like(sym)
    nz = sym > 0
    inv[nz] = 1.0 / sym[nz]
    w = metric.weight.reshape(metric.weight.shape + (1,) * (rhs.ndim - 2))
    phi = _apply_symbol(w * rhs, inv)
    if np.isrealobj(rhs):
        phi = phi.real
    phi = phi - integrate(phi, metric) / metric.volume
    return phi
