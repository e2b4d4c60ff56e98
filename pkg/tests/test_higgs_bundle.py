import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from semistab import herm_calculus as hc
from semistab import higgs_bundle as hb
from semistab import stability_lab as sl
from semistab.errors import ConfigurationError
from semistab.scenarios import build_bundle, library_spec
from semistab.torus_geometry import derivative, integrate, make_grid

seeds = st.integers(0, 2 ** 32 - 1)
NILP = np.array([[0, 1], [0, 0]], dtype=complex)


def with_phi(bundle, phi):
    N = bundle.grid.N
    return bundle.replace(phi_field=np.broadcast_to(phi, (N, N) + phi.shape).copy())


def random_unitary_field(rng, N, r):
    a = rng.normal(size=(N, N, r, r)) + 1j * rng.normal(size=(N, N, r, r))
    q, _ = np.linalg.qr(a)
    return q


def random_state(rng, bundle, amp=0.5):
    return sl.random_states(bundle, rng, 1, amplitude=amp)[0]


def test_trivial_background(grid16):
    g, m = grid16
    b = hb.make_background(g, 1, (0,))
    assert np.allclose(b.links, 1)
    assert np.max(np.abs(hb.K_H0(b, m))) == 0


@pytest.mark.parametrize("flux", [1, -1, 3])
def test_line_bundle_degree_and_constant_curvature(grid16, flux):
    g, m = grid16
    b = hb.make_background(g, 1, (flux,))
    K = hb.K_H0(b, m)[..., 0, 0]
    assert np.allclose(K, 2 * np.pi * flux / m.volume, atol=1e-12)
    assert hb.degree_of(b, m) == pytest.approx(flux, abs=1e-12)


def test_split_bundle_block_curvatures():
    g, m = make_grid(16, 2j)
    b = hb.make_background(g, 2, (1, -1))
    K = hb.K_H0(b, m)
    assert np.allclose(K[..., 0, 0], 2 * np.pi / m.volume)
    assert np.allclose(K[..., 1, 1], -2 * np.pi / m.volume)
    assert b.degree == 0 and hb.degree_of(b, m) == pytest.approx(0, abs=1e-12)


def test_links_unitary(rng):
    b, _ = build_bundle(library_spec("E4", N=16), rng)
    for mu in (0, 1):
        U = b.links[mu]
        assert np.max(np.abs(U @ hc.dagger(U) - np.eye(2))) < 1e-12


def test_total_plaquette_phase_is_flux(grid16):
    g, _ = grid16
    b = hb.make_background(g, 2, (2, -3))
    th = np.angle(np.diagonal(hb.plaquettes(b), axis1=-2, axis2=-1))
    assert np.allclose(th.sum(axis=(0, 1)) / (-2 * np.pi), [2, -3], atol=1e-10)


def test_bad_background(grid16):
    g, _ = grid16
    with pytest.raises(ConfigurationError):
        hb.make_background(g, 1, (0, 0))
    with pytest.raises(ConfigurationError):
        hb.make_background(g, 2, (1,))


def test_validate_higgs_constant_nilpotent(grid16):
    g, _ = grid16
    b = with_phi(hb.make_background(g, 2, (0, 0)), NILP)
    assert hb.validate_higgs(b)["residual"] == 0 and hb.validate_higgs(b)["ok"]


def test_validate_higgs_rejects_high_frequency(grid16, rng):
    g, _ = grid16
    b = with_phi(hb.make_background(g, 2, (0, 0)), NILP)
    x, y = g.xy
    b.phi_field[..., 0, 1] += 0.1 * np.cos(2 * np.pi * 7 * x)
    assert not hb.validate_higgs(b)["ok"]
    with pytest.raises(ConfigurationError):
        build_bundle(library_spec("E3", N=16, phi_matrix=[[0, 0], [1, 0]]))


def test_off_diagonal_higgs_between_fluxes():
    # Hom(e2, e1) has degree 2 (two sections), Hom(e1, e2) degree -2 (none)
    g, m = make_grid(16)
    b = hb.make_background(g, 2, (1, -1))
    up = sl.twisted_section_dimension(b, m, 0, 1, gap=10)
    down = sl.twisted_section_dimension(b, m, 1, 0)
    assert up.dimension == 2
    assert down.dimension == 0


def test_dbar_of_identity(rng):
    b, _ = build_bundle(library_spec("E4", N=16), rng)
    I = np.broadcast_to(np.eye(2, dtype=complex), (16, 16, 2, 2))
    assert np.max(np.abs(hb.dbar_E(I, b))) < 1e-12
    assert np.max(np.abs(hb.d_H0(I, b))) < 1e-12


def test_dbar_matches_scalar_derivative(grid16, rng):
    g, _ = grid16
    b = hb.make_background(g, 2, (0, 0))
    X = rng.normal(size=(16, 16, 2, 2)) + 1j * rng.normal(size=(16, 16, 2, 2))
    assert np.allclose(hb.dbar_E(X, b), derivative(X, g, "dzbar", "centered"), atol=1e-10)
    assert np.allclose(hb.d_H0(X, b), derivative(X, g, "dz", "centered"), atol=1e-10)


@given(seeds)
def test_dbar_gauge_covariant(seed):
    rng = np.random.default_rng(seed)
    b, _ = build_bundle(library_spec("E4", N=16), np.random.default_rng(7))
    X = rng.normal(size=(16, 16, 2, 2)) + 1j * rng.normal(size=(16, 16, 2, 2))
    gf = random_unitary_field(rng, 16, 2)
    gb = hb.gauge_transform(b, gf)
    a = hc.frob(hb.dbar_E(X, b))
    c = hc.frob(hb.dbar_E(gf @ X @ hc.dagger(gf), gb))
    assert np.allclose(a, c, atol=1e-10)


def test_adjoint_phi_examples(grid16):
    g, _ = grid16
    b = with_phi(hb.make_background(g, 2, (0, 0)), NILP)
    st0 = hb.HermitianState.zero(b)
    assert np.allclose(hb.adjoint_phi(b, st0), hc.dagger(b.phi_field))
    s = np.broadcast_to(np.diag([1.0, -1.0]).astype(complex), (16, 16, 2, 2)).copy()
    out = hb.adjoint_phi(b, hb.HermitianState(s))
    assert np.allclose(out, [[0, 0], [np.e ** 2, 0]])


@given(seeds, st.integers(2, 4))
def test_adjoint_phi_defining_property(seed, r):
    rng = np.random.default_rng(seed)
    g, _ = make_grid(8)
    b = hb.make_background(g, r, (0,) * r)
    b = b.replace(phi_field=rng.normal(size=(8, 8, r, r)) + 1j * rng.normal(size=(8, 8, r, r)))
    s = hc.hermitian_part(rng.normal(size=(8, 8, r, r)) + 1j * rng.normal(size=(8, 8, r, r)))
    st0 = hb.HermitianState(s)
    f = st0.f_field
    u = rng.normal(size=(8, 8, r)) + 1j * rng.normal(size=(8, 8, r))
    v = rng.normal(size=(8, 8, r)) + 1j * rng.normal(size=(8, 8, r))

    def ip(x, y):
        return np.einsum("...a,...ab,...b->...", np.conj(y), f, x)

    phiu = np.einsum("...ab,...b->...a", b.phi_field, u)
    adjv = np.einsum("...ab,...b->...a", hb.adjoint_phi(b, st0), v)
    lhs, rhs = ip(phiu, v), ip(u, adjv)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(lhs)))


def test_commutator_example(grid16):
    g, _ = grid16
    b = with_phi(hb.make_background(g, 2, (0, 0)), NILP)
    X = np.broadcast_to(np.diag([1.0, -1.0]).astype(complex), (16, 16, 2, 2))
    pair = hb.D_double_prime(X, b)
    assert np.allclose(pair.dz, [[0, -2], [0, 0]])
    assert np.allclose(pair.dzbar, 0)
    Id = np.broadcast_to(np.eye(2, dtype=complex), (16, 16, 2, 2))
    for op in (hb.D_double_prime, hb.D_prime):
        p = op(Id, b)
        assert np.allclose(p.dz, 0) and np.allclose(p.dzbar, 0)


def test_trivial_curvature_zero(grid16):
    g, m = grid16
    b = hb.make_background(g, 2, (0, 0))
    assert np.max(np.abs(hb.mean_curvature_K(b, hb.HermitianState.zero(b), m))) == 0


@pytest.mark.parametrize("name", ["E1", "E2", "E3", "E4"])
def test_degree_quantization(name):
    rng = np.random.default_rng(11)
    b, m = build_bundle(library_spec(name, N=16), rng)
    states = sl.random_states(b, rng, 20)
    for st0 in states:
        assert hb.degree_of(b, m, st0) == pytest.approx(b.degree, abs=1e-8)


@given(seeds)
def test_K_is_H_selfadjoint(seed):
    rng = np.random.default_rng(seed)
    b, m = build_bundle(library_spec("E4", N=16), np.random.default_rng(3))
    b = with_phi(b, np.zeros((2, 2), complex))
    st0 = random_state(rng, b)
    K = hb.mean_curvature_K(b, st0, m)
    f = st0.f_field
    adj = np.linalg.solve(f, hc.dagger(K) @ f)
    assert np.max(np.abs(adj - K)) <= 1e-10 * max(1.0, np.max(np.abs(K)))


@given(seeds)
def test_gauge_invariance_of_diagnostics(seed):
    rng = np.random.default_rng(seed)
    b, m = build_bundle(library_spec("E4", N=16), np.random.default_rng(5))
    st0 = random_state(rng, b)
    gf = random_unitary_field(rng, 16, 2)
    gb, gs = hb.gauge_transform(b, gf, st0)
    K = hb.mean_curvature_K(b, st0, m)
    gK = hb.mean_curvature_K(gb, gs, m)
    assert np.allclose(hb.h_norm(K, st0), hb.h_norm(gK, gs), atol=1e-10)
    assert hb.degree_of(gb, m, gs) == pytest.approx(hb.degree_of(b, m, st0), abs=1e-10)


@given(seeds)
def test_raw_and_symmetrized_trace_agree(seed):
    rng = np.random.default_rng(seed)
    b, m = build_bundle(library_spec("E2", N=16))
    st0 = random_state(rng, b)
    a = hc.trace(hb.mean_curvature_K(b, st0, m))
    c = hc.trace(hb.mean_curvature_K(b, st0, m, raw=True))
    assert np.allclose(a, c, atol=1e-9)


@given(seeds)
def test_higgs_coupling_monotone(seed):
    rng = np.random.default_rng(seed)
    g, m = make_grid(8, 1j, {"kind": "cosine", "amplitude": 0.3, "mode": [1, 0]})
    b = hb.make_background(g, 3, (0, 0, 0))
    b = b.replace(phi_field=rng.normal(size=(8, 8, 3, 3)) + 1j * rng.normal(size=(8, 8, 3, 3)))
    s = hc.hermitian_part(rng.normal(size=(8, 8, 3, 3)) + 1j * rng.normal(size=(8, 8, 3, 3)))
    vals = [hb.higgs_coupling(b, m, s, t) for t in (0, 0.25, 0.5, 0.75, 1.0)]
    for lo, hi in zip(vals, vals[1:]):
        assert np.all(hi >= lo - 1e-12 * (1 + np.abs(lo)))
    # oracle at one site via matrix exponentials
    t = 0.5
    ph, sv = b.phi_field[2, 3], s[2, 3]
    X = scipy.linalg.expm(-t * sv) @ hc.dagger(ph) @ scipy.linalg.expm(t * sv)
    direct = (2 / m.weight[2, 3]) * np.real(np.trace((ph @ X - X @ ph) @ sv))
    assert vals[2][2, 3] == pytest.approx(direct, rel=1e-10, abs=1e-12)


@given(seeds)
def test_positivity_pairing_for_invariant_sections(seed):
    rng = np.random.default_rng(seed)
    g, m = make_grid(8)
    b = with_phi(hb.make_background(g, 2, (0, 0)), NILP * (1 + rng.normal()))
    st0 = random_state(rng, b, amp=1.0)
    f = st0.f_field
    # phi kills e0, so sections along e0 are phi-invariant
    sec = np.zeros((8, 8, 2), complex)
    sec[..., 0] = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    C = hb.comm(b.phi_field, hb.adjoint_phi(b, st0))
    Cs = np.einsum("...ab,...b->...a", C, sec)
    val = np.real(np.einsum("...a,...ab,...b->...", np.conj(sec), f, Cs))
    assert np.all(val >= -1e-10 * (1 + np.abs(val)))


def test_dprime_pairing_nonnegative():
    # int Tr{f^-1 D'f ^ D''s} is real, >= 0 and close to the Psi pairing
    rng = np.random.default_rng(2)
    b, m = build_bundle(library_spec("E2", N=32))
    st0 = random_state(rng, b, amp=0.8)
    s = st0.s_field
    f = st0.f_field
    finv = np.linalg.inv(f)
    Dpf = hb.D_prime(f, b)
    Dps = hb.D_double_prime(s, b)
    w2 = 2.0 / m.weight
    dens = w2 * hc.trace(finv @ Dpf.dz @ Dps.dzbar - finv @ Dpf.dzbar @ Dps.dz)
    total = integrate(dens, m)
    psi = integrate(w2 * (hc.psi_pairing(s, Dps.dzbar) + hc.psi_pairing(s, Dps.dz)), m)
    # differences of f and of s obey the chain rule only up to O(h^2)
    assert abs(total.imag) <= 1e-4 * abs(total)
    assert total.real >= 0
    assert total.real == pytest.approx(psi, rel=2e-2)
