import numpy as np
import pytest
from hypothesis import given, strategies as st

from semistab.errors import ConfigurationError, SolvabilityError
from semistab.torus_geometry import (derivative, derivative_symbol, integrate, make_grid,
                                     p_operator, p_symbol_flat, solve_p)


def mode(grid, m, n):
    x, y = grid.xy
    return np.exp(2j * np.pi * (m * x + n * y))


def smooth_field(rng, grid, kmax=3):
    x, y = grid.xy
    f = np.zeros((grid.N, grid.N))
    for k1 in range(-kmax, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            f += rng.normal() * np.cos(2 * np.pi * (k1 * x + k2 * y) + rng.uniform(0, 6.3))
    return f


@pytest.mark.parametrize("tau,weight,vol", [
    (1j, None, 1.0),
    (2j, None, 2.0),
    (1j, {"kind": "cosine", "amplitude": 0.3, "mode": [1, 0]}, 1.0),
    (0.5 + 1j, 2.0, 2.0),
])
def test_volume(tau, weight, vol):
    _, m = make_grid(16, tau, weight)
    assert m.volume == pytest.approx(vol, abs=1e-13)


@pytest.mark.parametrize("N,tau,w", [(7, 1j, None), (16, 1 - 1j, None), (16, 1j, -1.0),
                                     (16, 1j, {"kind": "nope"})])
def test_bad_grid(N, tau, w):
    with pytest.raises(ConfigurationError):
        make_grid(N, tau, w)


def test_derivative_of_mode():
    g, _ = make_grid(16, 0.3 + 1.2j)
    f = mode(g, 2, -1)
    for direction, (cx, cy) in (("dz", g.c), ("dzbar", g.d)):
        expected = (cx * 2j * np.pi * 2 + cy * 2j * np.pi * -1) * f
        assert np.allclose(derivative(f, g, direction), expected, atol=1e-11)


def test_dz_of_z_is_one():
    # d_z z = 1 and d_zbar z = 0 for the coefficient pair, applied to the linear map
    g, _ = make_grid(16, 0.4 + 0.9j)
    cx, cy = g.c
    dx, dy = g.d
    # z = x + tau y, so d_x z = 1 and d_y z = tau
    assert cx + cy * g.tau == pytest.approx(1.0)
    assert dx + dy * g.tau == pytest.approx(0.0)


def test_p_mode_symbol_square_torus():
    # P is nonnegative in this package: the mode (m, n) is scaled by 2 pi^2 (m^2 + n^2)
    g, m = make_grid(16)
    for a, b in ((1, 0), (0, 2), (1, 1), (3, -2)):
        f = mode(g, a, b)
        assert np.allclose(p_operator(f, m), 2 * np.pi ** 2 * (a * a + b * b) * f, atol=1e-9)


def test_p_constants_vanish(grid16):
    _, m = grid16
    assert np.max(np.abs(p_operator(np.full((16, 16), 3.0), m))) < 1e-12


def test_symbols_nonnegative():
    g, _ = make_grid(16, 0.3 + 0.8j)
    for scheme in ("spectral", "lattice"):
        assert np.min(p_symbol_flat(g, scheme)) >= -1e-12


def test_lattice_symbol_consistent_at_low_modes():
    g, _ = make_grid(64, 0.2 + 1.1j)
    a = p_symbol_flat(g, "spectral")
    b = p_symbol_flat(g, "lattice")
    mm, nn = g.modes()
    low = (np.abs(mm) <= 1) & (np.abs(nn) <= 1)
    assert np.max(np.abs(a - b)[low]) / np.max(a[low]) < 1e-2


def test_solve_p_nonzero_mean_rejected(grid16):
    _, m = grid16
    with pytest.raises(SolvabilityError):
        solve_p(np.ones((16, 16)), m)


def test_solve_p_zero_rhs(grid16):
    _, m = grid16
    assert np.all(solve_p(np.zeros((16, 16)), m) == 0)


def test_integrate_is_deterministic(rng, cosine16):
    _, m = cosine16
    f = rng.normal(size=(16, 16))
    assert integrate(f, m) == integrate(f.copy(), m)


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["spectral", "lattice"]),
       st.floats(0.1, 0.9))
def test_p_is_nonnegative_and_symmetric(seed, scheme, tre):
    rng = np.random.default_rng(seed)
    _, m = make_grid(16, complex(tre - 0.5, 0.7 + tre), {"kind": "cosine", "amplitude": 0.4,
                                                         "mode": [1, 1]})
    u = rng.normal(size=(16, 16))
    v = rng.normal(size=(16, 16))
    uPu = integrate(u * p_operator(u, m, scheme), m)
    # mirrored sign: P here is the positive operator
    assert uPu >= -1e-10
    assert integrate(u * p_operator(v, m, scheme), m) == pytest.approx(
        integrate(v * p_operator(u, m, scheme), m), rel=1e-10, abs=1e-10)


@given(st.integers(0, 2 ** 32 - 1))
def test_p_at_maximum_is_nonnegative(seed):
    # maximum principle in the sign of this package: P u >= 0 where u peaks
    rng = np.random.default_rng(seed)
    g, m = make_grid(32, 1j, {"kind": "cosine", "amplitude": 0.3, "mode": [0, 1]})
    u = smooth_field(rng, g, 2)
    j = np.unravel_index(np.argmax(u), u.shape)
    assert p_operator(u, m, "lattice")[j] >= -1e-9


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["spectral", "lattice"]))
def test_solve_p_inverts_p(seed, scheme):
    rng = np.random.default_rng(seed)
    g, m = make_grid(32, 0.2 + 1.1j, {"kind": "cosine", "amplitude": 0.3, "mode": [1, 1]})
    f = smooth_field(rng, g) / m.weight
    f = f - integrate(f, m) / m.volume
    phi = solve_p(f, m, scheme)
    assert abs(integrate(phi, m)) < 1e-12
    assert np.max(np.abs(p_operator(phi, m, scheme) - f)) < 1e-12 * max(1.0, np.max(np.abs(f)))


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.2, 5.0))
def test_scaling_weight_scales_p(seed, c):
    rng = np.random.default_rng(seed)
    _, m = make_grid(16, 1j, {"kind": "cosine", "amplitude": 0.2, "mode": [1, 0]})
    u = rng.normal(size=(16, 16))
    assert np.allclose(p_operator(u, m.scaled(c)), p_operator(u, m) / c, atol=1e-10)
    assert m.scaled(c).volume == pytest.approx(c * m.volume)


def test_derivative_symbol_real_pair(grid16):
    g, _ = grid16
    # d_zbar symbol is minus the conjugate of d_z symbol for real fields
    a = derivative_symbol(g, "dz")
    b = derivative_symbol(g, "dzbar")
    assert np.allclose(b, -np.conj(a))
