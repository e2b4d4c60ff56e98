import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semistab import herm_calculus as hc
from semistab import he_solver as hs
from semistab import higgs_bundle as hb
from semistab import stability_lab as sl
from semistab.errors import ConfigurationError, DomainError, UnsupportedError
from semistab.scenarios import build_bundle, library_spec
from semistab.torus_geometry import integrate, make_grid

seeds = st.integers(0, 2 ** 32 - 1)


def const_field(N, M):
    M = np.asarray(M, dtype=complex)
    return np.broadcast_to(M, (N, N) + M.shape).copy()


def rotation_projection(N, rng, amp=0.6):
    g, _ = make_grid(N)
    x, y = g.xy
    th = amp * np.sin(2 * np.pi * x + rng.uniform(0, 6.3)) * np.cos(2 * np.pi * y)
    v = np.stack([np.cos(th), np.sin(th) * np.exp(1j * rng.uniform(0, 6.3))], axis=-1)
    return sl.ProjectionField(v[..., :, None] * np.conj(v[..., None, :]), 1)


@pytest.mark.parametrize("flux,deg,slope", [((1, -1), 0, 0.0), ((1, 0), 1, 0.5)])
def test_degree_and_slope(flux, deg, slope):
    g, m = make_grid(16)
    b = hb.make_background(g, 2, flux)
    rep = sl.degree_and_slope(b, m)
    assert rep.degree == pytest.approx(deg, abs=1e-12) and rep.slope == pytest.approx(slope)
    assert sl.flux_degree(b).degree == deg


def test_degree_metric_independence():
    rng = np.random.default_rng(0)
    b, m = build_bundle(library_spec("E4", N=16), rng)
    assert sl.degree_spread(b, m, sl.random_states(b, rng, 5)) <= 1e-8


def test_projection_field_validation():
    g, _ = make_grid(8)
    with pytest.raises(DomainError):
        sl.ProjectionField(const_field(8, np.diag([1.0, 0.5])), 1).validate()
    with pytest.raises(DomainError):
        sl.ProjectionField(const_field(8, np.diag([1.0, 0.0])), 2).validate()


def test_chern_weil_identity_projection(e3_background):
    b, m = e3_background.bundle, e3_background.metric
    pf = sl.ProjectionField(const_field(16, np.eye(2)), 2)
    assert sl.chern_weil_subsheaf_degree(pf, b, m).degree == pytest.approx(0, abs=1e-10)


def test_chern_weil_exact_subbundle(e3_background):
    b, m = e3_background.bundle, e3_background.metric
    rep = sl.chern_weil_subsheaf_degree(sl.coordinate_projection(b, [0]), b, m)
    assert rep.degree == pytest.approx(1, abs=sl.TOL_DEG)
    assert rep.slope == pytest.approx(1, abs=sl.TOL_DEG)


def test_chern_weil_penalty_lowers_degree(e3_background):
    b, m = e3_background.bundle, e3_background.metric
    rep = sl.chern_weil_subsheaf_degree(rotation_projection(16, np.random.default_rng(4)), b, m)
    assert rep.degree < 1 - 1e-3
    assert rep.detail["penalty"] > 0


@given(seeds)
@settings(max_examples=10)
def test_penalty_never_raises_degree(seed):
    rng = np.random.default_rng(seed)
    b, m = build_bundle(library_spec("E4", N=16), np.random.default_rng(1))
    rep = sl.chern_weil_subsheaf_degree(rotation_projection(16, rng, rng.uniform(0, 1.5)), b, m)
    # both detail terms are already in degree units
    assert rep.detail["penalty"] >= 0
    assert rep.degree <= rep.detail["curvature_term"] + 1e-12


@pytest.mark.parametrize("name", ["E3", "E4"])
def test_flux_matches_chern_weil_at_N64(name):
    b, m = build_bundle(library_spec(name, N=64), np.random.default_rng(2))
    bg = hs.normalize_background(b, m)
    fl = sl.line_fluxes(b)
    subs = sl.invariant_coordinate_subbundles(b)
    assert subs
    for F in subs:
        cw = sl.chern_weil_subsheaf_degree(sl.coordinate_projection(bg.bundle, F), bg.bundle, m)
        assert cw.degree == pytest.approx(np.sum(fl[list(F)]), abs=sl.TOL_DEG)


def test_weak_limit_synthetic():
    b, m = build_bundle(library_spec("E3", N=8))
    D = np.diag([1.0, -1.0])
    states = [hb.HermitianState(const_field(8, c * D)) for c in (1.0, 2.0, 4.0)]
    wl = sl.weak_limit_analysis(states, b, m)
    assert not wl.refused
    assert np.allclose(wl.u, const_field(8, D / np.sqrt(2)), atol=1e-15)
    assert wl.tr_u_residual == 0 and wl.constancy_residual < 1e-15
    assert wl.norm_u == pytest.approx(1.0)


def test_weak_limit_refused_when_bounded():
    b, m = build_bundle(library_spec("E3", N=8))
    D = np.diag([1.0, -1.0])
    same = [hb.HermitianState(const_field(8, D)) for _ in range(3)]
    assert sl.weak_limit_analysis(same, b, m).refused
    assert sl.weak_limit_analysis(same[:1], b, m).refused
    slow = [hb.HermitianState(const_field(8, c * D)) for c in (1.0, 1.01, 1.02)]
    assert sl.weak_limit_analysis(slow, b, m).refused


@pytest.fixture(scope="module")
def e3_limit(e3_sweep, e3_background):
    res = e3_sweep.converged_results()
    return sl.weak_limit_analysis([r.state for r in res], e3_background.bundle,
                                  e3_background.metric, [r.eps for r in res])


def test_weak_limit_e3(e3_limit):
    assert not e3_limit.refused
    assert e3_limit.constancy_residual < 0.05
    assert np.allclose(e3_limit.index_means, [-1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-8)


def test_weak_limit_e2_dpp_bounded(e2_sweep, e2_background):
    res = e2_sweep.converged_results()
    wl = sl.weak_limit_analysis([r.state for r in res], e2_background.bundle,
                                e2_background.metric)
    assert not wl.refused
    d = wl.l2_Dpp_u_tail
    assert max(d) <= 2 * min(d)


def test_destabilizer_e3(e3_limit, e3_background):
    rep = sl.build_destabilizer(e3_limit.u, e3_background.bundle, e3_background.metric)
    assert rep.verdict == "destabilized"
    assert len(rep.plateaus) == 2 and rep.multiplicities == [1, 1]
    assert rep.slopes[0] == pytest.approx(1, abs=1e-8)
    assert np.allclose(rep.projections[0].pi, np.diag([1, 0]), atol=1e-8)
    assert rep.nu < 0
    assert rep.reconstruction_residual <= 1e-8
    assert rep.max_property_residual <= 1e-6
    assert rep.nu_degree_form == pytest.approx(rep.nu_slope_form, abs=1e-10)


def test_destabilizer_split_semistable():
    g, m = make_grid(16)
    b = hs.normalize_background(hb.make_background(g, 2, (0, 0)), m).bundle
    u = const_field(16, np.diag([1.0, -1.0]))
    rep = sl.build_destabilizer(u, b, m)
    assert rep.verdict == "no destabilizer found"
    assert rep.nu == pytest.approx(0, abs=1e-10)
    assert rep.reconstruction_residual <= 1e-12


def test_destabilizer_refuses_nonconstant():
    g, m = make_grid(16)
    b = hb.make_background(g, 2, (0, 0))
    x, _ = g.xy
    u = np.zeros((16, 16, 2, 2), complex)
    u[..., 0, 0] = np.cos(2 * np.pi * x)
    u[..., 1, 1] = -np.cos(2 * np.pi * x)
    assert sl.build_destabilizer(u, b, m).verdict == "inconclusive"
    assert sl.build_destabilizer(np.zeros_like(u), b, m).verdict == "inconclusive"


@given(seeds, st.integers(2, 4))
@settings(max_examples=15)
def test_reconstruction_and_nu_forms(seed, r):
    rng = np.random.default_rng(seed)
    g, m = make_grid(8)
    b = hb.make_background(g, r, tuple(int(x) for x in rng.integers(-2, 3, r)))
    mu = np.sort(rng.choice(np.arange(-6, 7), size=r, replace=False)).astype(float)
    mu = mu - mu.mean()
    rep = sl.build_destabilizer(const_field(8, np.diag(mu)), b, m)
    assert rep.reconstruction_residual <= 1e-8
    assert rep.nu_degree_form == pytest.approx(rep.nu_slope_form, abs=1e-10)


def test_induced_bundle_e3():
    b, m = build_bundle(library_spec("E3", N=16))
    ib = sl.induced_bundle(b, m, [0])
    assert ib.bundle.degree == -2 and ib.bundle.flux == (0, -2)
    assert ib.lam < 0 and ib.lam == pytest.approx(ib.lam_closed_form)
    assert hb.validate_higgs(ib.bundle)["ok"]


def test_induced_bundle_equal_slopes():
    b, m = build_bundle(library_spec("E2", N=16))
    ib = sl.induced_bundle(b, m, [0])
    assert ib.lam == 0 and ib.lam_closed_form == 0
    assert hb.validate_higgs(ib.bundle)["ok"]


def test_induced_bundle_rejections():
    b, m = build_bundle(library_spec("E3", N=16))
    with pytest.raises(UnsupportedError):
        sl.induced_bundle(b, m, [0, 1])
    e2, m2 = build_bundle(library_spec("E2", N=16))
    with pytest.raises(ConfigurationError):
        sl.induced_bundle(e2, m2, [1])


def test_induced_rank3_wedge():
    g, m = make_grid(8)
    b = hb.make_background(g, 3, (1, 0, -1))
    ib = sl.induced_bundle(b, m, [0, 1])
    # wedge^2 E (x) det(F)^-1 with F = e0 + e1 of degree 1
    assert sorted(ib.bundle.flux) == sorted((1 + 0 - 1, 1 - 1 - 1, 0 - 1 - 1))
    assert ib.lam == pytest.approx(ib.lam_closed_form)


@given(seeds)
@settings(max_examples=10)
def test_compound_matrix_multiplicative(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    B = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    for p in (1, 2):
        assert np.allclose(sl.compound_matrix(A @ B, p),
                           sl.compound_matrix(A, p) @ sl.compound_matrix(B, p))
    # derivation action is the derivative of the compound at the identity
    h = 1e-7
    for p in (1, 2):
        num = (sl.compound_matrix(np.eye(3) + h * A, p) - sl.compound_matrix(np.eye(3), p)) / h
        assert np.allclose(num, sl.derivation_action(A, p), atol=1e-5)


@pytest.mark.parametrize("flux,dim", [(0, 1), (-1, 0), (-2, 0)])
def test_kernel_lines(flux, dim):
    g, m = make_grid(16)
    rep = sl.invariant_section_kernel(hb.make_background(g, 1, (flux,)), m)
    assert rep.classification == "resolved" and rep.dimension == dim
    assert rep.gap_factor >= 1e3


def test_kernel_e2_control_keeps_canonical_section():
    b, m = build_bundle(library_spec("E2", N=16))
    ib = sl.induced_bundle(b, m, [0])
    assert sl.invariant_section_kernel(ib.bundle, m).dimension >= 1


def test_kernel_e3_induced_contains_canonical_line(e3_sweep):
    # G = (L + L^-1) (x) L^-1 = O + L^-2: the O summand carries the canonical section
    b, m = build_bundle(library_spec("E3", N=16))
    ib = sl.induced_bundle(b, m, [0])
    rep = sl.invariant_section_kernel(ib.bundle, m, ib.induced_state(e3_sweep.results[-1].state),
                                      ib.lam)
    assert rep.dimension == 1
    line = sl.invariant_section_kernel(sl.hom_line_bundle(ib.bundle, 1, 1), m)
    assert line.dimension == 1


def test_weitzenbock_zero_and_constant(grid16):
    g, m = grid16
    b = hb.make_background(g, 1, (0,))
    z = sl.weitzenbock_check(np.zeros((16, 16, 1)), b, m)
    assert z.min_margin == 0 and z.norm2 == 0
    c = sl.weitzenbock_check(np.ones((16, 16, 1)), b, m)
    assert abs(c.min_margin) < 1e-12 and c.pointwise_ok and not c.two_sided_bound


def test_weitzenbock_certifies_negative_line(grid16):
    g, m = grid16
    b = hb.make_background(g, 1, (-1,))
    sec = np.random.default_rng(3).normal(size=(16, 16, 1)) + 0j
    rep = sl.weitzenbock_check(sec, b, m)
    assert rep.two_sided_bound and rep.certifies_vanishing
    assert sl.invariant_section_kernel(b, m).dimension == 0


def verdict_for(bundle, metric, sweep):
    res = sweep.converged_results()
    wl = sl.weak_limit_analysis([r.state for r in res], sweep.background.bundle, metric)
    destab = None if wl.refused else sl.build_destabilizer(wl.u, sweep.background.bundle, metric)
    return sl.semistable_verdict(sweep, destab, sl.delta_oracle(bundle, metric))


def test_verdict_e1():
    b, m = build_bundle(library_spec("E1", N=16))
    rep = hs.continuity_sweep(hs.normalize_background(b, m))
    assert verdict_for(b, m, rep)["verdict"] == "semistable"


def test_verdict_e2_e3(e2_sweep, e3_sweep):
    e2 = e2_sweep.background
    e3 = e3_sweep.background
    v2 = verdict_for(e2.bundle, e2.metric, e2_sweep)
    v3 = verdict_for(e3.bundle, e3.metric, e3_sweep)
    assert v2["verdict"] == "semistable"
    assert v3["verdict"] == "unstable" and v3["destabilizer"]["nu_degree_form"] < 0


@pytest.mark.parametrize("name", ["E2", "E3"])
def test_verdict_invariant_under_weight_scaling(name):
    out = []
    for c in (1.0, 2.5):
        b, m = build_bundle(library_spec(name, N=16, weight=c))
        bg = hs.normalize_background(b, m)
        rep = hs.continuity_sweep(bg, hs.SolverConfig(eps_schedule=hs.geometric_schedule(1, 1e-3, 7)))
        v = verdict_for(b, m, rep)
        out.append((v["verdict"], sl.degree_and_slope(b, m).slope))
    assert out[0] == out[1]
