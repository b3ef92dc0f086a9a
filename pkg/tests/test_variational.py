from dataclasses import replace

import numpy as np
import pytest

from kkcheck import forms as F
from kkcheck import geometry as G
from kkcheck import jets as J
from kkcheck import lie
from kkcheck import variational as V
from kkcheck.forms import Form

BOX = F.Chart((-1.0,) * 4, (1.0,) * 4)


def haar_points(rng, n):
    return rng.uniform(-1, 1, (n, 4)), lie.random_su2(rng, n)


# ---------------------------------------------------------------------------
# quadrature

def test_gauss_legendre_exact_for_polynomials():
    x, w = V.gauss_legendre(4, -1.0, 1.0)
    for k in range(8):
        assert w @ x ** k == pytest.approx((1 - (-1) ** (k + 1)) / (k + 1), abs=1e-14)


def test_trapezoid_exact_for_trig():
    s, w = V.trapezoid(8)
    assert w @ np.cos(3 * s) == pytest.approx(0.0, abs=1e-14)
    assert w @ np.cos(s) ** 2 == pytest.approx(np.pi)


def test_hopf_rule_haar_moments():
    q, w = V.hopf_rule(4, 6)
    assert w.sum() == pytest.approx(1.0)
    assert w @ q[:, 0] ** 2 == pytest.approx(0.25)
    assert w @ q[:, 1] ** 4 == pytest.approx(1 / 8)
    assert w @ (q[:, 0] * q[:, 2]) ** 2 == pytest.approx(1 / 24)
    assert abs(w @ q[:, 3]) < 1e-15


def test_paired_grid_and_threads():
    quad = V.Quadrature.grid("u1", 5, paired=True, fiber=V.trapezoid(3)[0], chunk=100)
    assert quad.size == 625
    f = lambda x, s: np.sin(x @ np.arange(1, 5)) * np.cos(s)
    serial = V.integrate(f, quad)
    V.set_threads(3)
    try:
        threaded = V.integrate(f, quad)
    finally:
        V.set_threads(1)
    assert serial == threaded


def test_su2_volume():
    quad = V.Quadrature.box("su2", n=2, hopf=(2, 3))
    assert V.integrate(lambda x, q: np.ones(len(x)), quad) == pytest.approx(16 * 16 * np.pi ** 2)


# ---------------------------------------------------------------------------
# Maxwell

def test_maxwell_solution_residuals(rng):
    sol = V.build_maxwell_solution(0.7)
    x, s = rng.uniform(-1, 1, (32, 4)), rng.uniform(0, 2 * np.pi, 32)
    assert all(np.abs(v).max() < 1e-12 for v in V.el_residual_maxwell(sol, x, s).values())


def test_maxwell_offshell_residuals_nonzero(rng):
    off = V.random_maxwell_offshell(rng)
    x, s = rng.uniform(-1, 1, (32, 4)), rng.uniform(0, 2 * np.pi, 32)
    assert max(np.abs(v).max() for v in V.el_residual_maxwell(off, x, s).values()) > 1e-3


def test_maxwell_gateaux_equals_residual_pairing(rng):
    quad = V.Quadrature.box("u1", n=6, fiber=6)
    off = V.random_maxwell_offshell(rng)
    var = V.random_maxwell_variation(rng)
    g = V.gateaux(lambda f: V.action_maxwell(f, quad), off, var)
    assert abs(g) > 1e-3
    assert g == pytest.approx(V.maxwell_pairing(off, var, quad), rel=1e-5)


def test_maxwell_as_u1_yang_mills(rng):
    # pi^{a4} = +pi^a embeds the Maxwell momenta into the u(1) frame momenta
    spec = F.RandomFieldSpec(2, 1, 0.3)
    th = F.random_tensor_field(rng, V.MAXWELL_CHART, (5,), spec)
    pab = F.random_tensor_field(rng, V.MAXWELL_CHART, (4, 4), spec)
    pa = F.random_tensor_field(rng, V.MAXWELL_CHART, (4,), spec)
    base = V.build_maxwell_solution(0.7)
    theta = lambda z: base.theta(z) + th(z)
    pi_ab = lambda z: pab(z) - pab(z).swapaxes(-1, -2)
    mx = V.MaxwellFields.from_components(theta, pi_ab, pa)

    def momenta(pt):
        out = J.zeros(pt.z.shape[:-1] + (1, 5, 5), pt.z[..., 0])
        out.c[..., 0, :4, :4, :] = pi_ab(pt.z).c
        out.c[..., 0, :4, 4, :] = pa(pt.z).c
        out.c[..., 0, 4, :4, :] = -pa(pt.z).c
        return out
    ym = V.YMFields(lie.u1(), lambda pt: theta(pt.z)[..., None, :], momenta)
    x, s = rng.uniform(-1, 1, (16, 4)), rng.uniform(0, 2 * np.pi, 16)
    assert np.abs(V.maxwell_density(mx, x, s) - V.ym_density(ym, x, s, "u1")).max() < 1e-12
    rm, ry = V.el_residual_maxwell(mx, x, s), V.el_residual_ym(ym, x, s, "u1")
    assert np.abs(rm["b"] - ry["a"][:, 0]).max() < 1e-12
    assert np.abs(rm["a"] - ry["b"][:, 0, :, 0]).max() < 1e-12


# ---------------------------------------------------------------------------
# Yang-Mills and Einstein-Yang-Mills

def test_pure_gauge_yang_mills(rng):
    alg = lie.su2()
    pg = V.YMFields(alg, lambda pt: V.kk_rows(pt), lambda pt: J.zeros(pt.x.shape[:-1] + (3, 7, 7), pt.x[..., 0]))
    x, q = haar_points(rng, 16)
    assert all(np.abs(v).max() == 0.0 for v in V.el_residual_ym(pg, x, q, "su2").values())


def test_eym_vacuum(rng):
    sol = V.build_eym_vacuum_solution()
    assert sol.lambda0 == 0.75
    x, q = haar_points(rng, 32)
    res = V.el_residual_eym(sol, x, q, "su2")
    assert all(np.abs(v).max() < 1e-12 for v in res.values())


def test_eym_vacuum_is_sharp(rng):
    sol = V.build_eym_vacuum_solution()
    x, q = haar_points(rng, 16)
    flipped = replace(sol, momenta=lambda pt: sol.momenta(pt) * -1.0)
    assert np.abs(V.el_residual_eym(flipped, x, q, "su2")["d"]).max() > 0.5
    assert np.abs(V.el_residual_eym(replace(sol, lambda0=0.0), x, q, "su2")["d"]).max() > 0.5


def test_eym_u1_vacuum(rng):
    sol = V.build_eym_vacuum_solution(lie.u1())
    assert sol.lambda0 == 0.0
    x, s = rng.uniform(-1, 1, (8, 4)), rng.uniform(0, 2 * np.pi, 8)
    assert all(np.abs(v).max() == 0.0 for v in V.el_residual_eym(sol, x, s, "u1").values())


def test_eym_offshell_connection_identity(rng):
    off = V.build_eym_vacuum_solution().perturbed(V.random_eym_variation(rng, compact=False), 1.0)
    x, q = haar_points(rng, 8)
    res = V.el_residual_eym(off, x, q, "su2")
    assert res["c_identity_gap"] < 1e-12
    assert np.abs(res["d"]).max() > 1e-3


def test_eym_gateaux_on_solution(rng):
    sol = V.build_eym_vacuum_solution()
    quad = V.Quadrature.box("su2", n=3, hopf=(2, 3))
    g = V.gateaux(lambda f: V.action_eym(f, quad), sol, V.random_eym_variation(rng))
    assert abs(g) < 5e-6


def test_eym_coframe_equation_matches_gateaux():
    # the literal (d) misses the variation of pi ^ Theta through the hat volumes
    rng = np.random.default_rng(11)
    off = V.build_eym_vacuum_solution().perturbed(V.random_eym_variation(rng, amplitude=0.1, compact=False), 1.0)
    zero3 = lambda pt: J.zeros(pt.x.shape[:-1] + (7, 7, 7), pt.x[..., 0])
    quad = V.Quadrature.box("su2", n=3, hopf=(2, 3))
    rng = np.random.default_rng(5)
    for _ in range(2):
        var = replace(V.random_eym_variation(rng), phi=zero3, momenta=zero3)
        g = V.gateaux(lambda f: V.action_eym(f, quad), off, var)
        assert V.eym_coframe_pairing(off, var, quad) == pytest.approx(g, rel=5e-3)
        assert abs(V.eym_coframe_pairing(off, var, quad, "d") - g) > 1e-2 * abs(g)


def test_eym_coframe_forms_agree_on_vacuum(rng):
    x, q = haar_points(rng, 4)
    res = V.el_residual_eym(V.build_eym_vacuum_solution(), x, q, "su2")
    assert np.abs(res["d_variational"] - res["d"]).max() == 0.0


def test_divergence_split_identity(rng):
    alg = lie.su2()
    pf = V.random_bundle_field(rng, (3, 7, 7), "su2", 0.5, 2, compact=False)

    def p(pt):
        q = pf(pt)
        return q - q.swapaxes(-1, -2)
    x, q = haar_points(rng, 6)
    for red in (G.flat_reduced_data(alg), G.random_reduced_data(rng, alg)):
        assert V.identity_check_15abis(red, p, x * 0.9, q) < 1e-12


# ---------------------------------------------------------------------------
# cancellation and projected equations

def _trig_p(rng):
    co = rng.uniform(-1, 1, (4, 13))

    def p(z):
        s = z[..., 4]
        modes = [J.ones_like(s)] + [f for k in range(1, 7) for f in ((s * k).cos(), (s * k).sin())]
        return J.einsum("...m,am->...a", J.stack(modes, -1), co) * (1 + z[..., 0] * z[..., 1])[..., None]
    return p


def test_circle_cancellation(rng):
    r = V.cancellation_average(_trig_p(rng), np.array([0.1, -0.2, 0.3, 0.4]), "u1", 16)
    assert np.abs(r.mean).max() < 1e-12


def test_circle_cancellation_needs_periodic_field():
    with pytest.raises(V.PreconditionError):
        V.cancellation_average(lambda z: J.stack([z[..., 4]] * 4, -1), np.zeros(4), "u1", 16)


def test_su2_cancellation(rng):
    alg = lie.su2()
    pf = V.random_bundle_field(rng, (3, 4, 3), "su2", 1.0, 2, compact=False)
    p = lambda pt: J.einsum("...ial,...kl->...iak", pf(pt), pt.S)
    x = np.array([0.1, -0.2, 0.3, 0.4])
    red = G.random_reduced_data(rng, alg)
    assert np.abs(V.cancellation_average(p, x, "su2", 4, method="hopf", red=red).mean).max() < 1e-12
    mc = V.cancellation_average(p, x, "su2", 2000, rng=rng, red=red)
    assert mc.within(3.0)
    assert mc.stderr.max() > 0


def test_projected_equations(rng):
    alg = lie.su2()
    pts = rng.uniform(-0.5, 0.5, (4, 4))
    vac = V.projected_equations_check(G.flat_reduced_data(alg), 0.75, pts)
    assert max(np.abs(v).max() for v in vac.values()) < 1e-12
    red = G.random_reduced_data(rng, alg)
    chain = V.projected_equations_check(red, 0.75, pts, lie.random_su2(rng, 4))["chain"]
    assert np.abs(chain).max() < 1e-10
    zero = lambda x: x[..., 0] * 0
    const_f = G.flat_reduced_data(lie.u1(), lambda x: J.stack([J.stack([zero(x), x[..., 0] * 0.7, zero(x), zero(x)],
                                                                       -1)], -2))
    assert np.abs(V.projected_equations_check(const_f, 0.0, pts)["einstein"]).max() > 0.1


# ---------------------------------------------------------------------------
# gauge transformations

def _beta(rng):
    pb = F.random_tensor_field(rng, BOX, (6,), F.RandomFieldSpec(2, 0, 0.5))
    idx = F.combo_index(5, 2)

    def beta(z):
        c = pb(z[..., :4]) * V.bump(z[..., :4])[..., None]
        out = J.zeros(z.shape[:-1] + (10,), z[..., 0])
        for k, (a, b) in enumerate(F.combos(4, 2)):
            out.c[..., idx[(a, b)], :] = c.c[..., k, :]
        return Form(2, 5, out)
    return beta


def psi_not_closed(z):
    out = J.zeros(z.shape[:-1] + (10,), z[..., 0])
    out.c[..., F.combo_index(5, 3)[(2, 3, 4)], :] = (V.bump(z[..., :4]) * 0.5).c
    return Form(3, 5, out)


@pytest.mark.parametrize("shell", ["on", "off"])
def test_maxwell_gauge_catalog(rng, shell):
    fields = V.build_maxwell_solution(0.7) if shell == "on" else V.random_maxwell_offshell(rng)
    quad = V.Quadrature.box("u1", n=4, fiber=6)
    poly = F.random_tensor_field(rng, BOX, (), F.RandomFieldSpec(2, 0, 0.5))
    for t in (V.dv_shift(lambda x: poly(x) * V.bump(x)), V.psi_shift(V.exact_psi(_beta(rng)))):
        assert abs(V.gauge_invariance_delta("maxwell", fields, t, quad)) < 1e-9


def test_nonclosed_psi_is_flagged(rng):
    fields = V.random_maxwell_offshell(rng)
    quad = V.Quadrature.box("u1", n=4, fiber=6)
    bad = V.psi_shift(psi_not_closed, "psi_nonclosed", 0)
    with pytest.raises(V.PreconditionError):
        V.gauge_invariance_delta("maxwell", fields, bad, quad)
    assert abs(V.gauge_invariance_delta("maxwell", fields, bad, quad, check=False)) > 1e-3


def test_fibered_diffeo_offshell_converges(rng):
    fields = V.random_maxwell_offshell(rng)
    t = V.fibered_diffeo()
    coarse = abs(V.gauge_invariance_delta("maxwell", fields, t, V.Quadrature.box("u1", n=3, fiber=8)))
    fine = abs(V.gauge_invariance_delta("maxwell", fields, t, V.Quadrature.box("u1", n=3, fiber=32)))
    assert fine < 1e-6 < coarse


def _ym_offshell(rng, alg):
    red = G.random_reduced_data(rng, alg)
    pf = V.random_bundle_field(rng, (3, 7, 7), "su2", 0.3, 1, compact=False)

    def mom(pt):
        p = pf(pt)
        return p - p.swapaxes(-1, -2)
    return V.YMFields(alg, lambda pt: V.kk_rows(pt, red.potential), mom)


def test_ym_chi_shift_and_adjoint(rng):
    alg = lie.su2()
    off = _ym_offshell(rng, alg)
    quad = V.Quadrature.box("su2", n=3, hopf=(2, 3))
    sf = F.random_tensor_field(rng, BOX, (3, 3), F.RandomFieldSpec(2, 0, 0.5))

    def traceless(x):
        s = sf(x)
        return s - J.einsum("...,ij->...ij", J.einsum("...ii->...", s) * (1 / 3), np.eye(3))
    assert abs(V.gauge_invariance_delta("ym", off, V.chi_shift(traceless, alg), quad)) < 1e-9
    g = lie.GroupElement("su2", lie.random_su2(rng))
    assert abs(V.gauge_invariance_delta("ym", off, V.adjoint_constant(g), quad)) < 1e-9


def test_chi_trace_part_fails_side_condition_but_leaves_action(rng):
    alg = lie.su2()
    off = _ym_offshell(rng, alg)
    quad = V.Quadrature.box("su2", n=3, hopf=(2, 3))
    trace = V.chi_shift(lambda x: J.einsum("...,ij->...ij", x[..., 0] * 0 + 1.0, np.eye(3)), alg)
    with pytest.raises(V.PreconditionError):
        V.gauge_invariance_delta("ym", off, trace, quad)
    assert abs(V.gauge_invariance_delta("ym", off, trace, quad, check=False)) < 1e-9


def test_eym_adjoint_dressing(rng):
    sol = V.build_eym_vacuum_solution()
    off = sol.perturbed(V.random_eym_variation(rng, compact=False), 1.0)
    quad = V.Quadrature.box("su2", n=2, hopf=(2, 3))
    g = lie.GroupElement("su2", lie.random_su2(rng))
    assert abs(V.gauge_invariance_delta("eym", off, V.adjoint_constant(g), quad)) < 1e-8
    local = V.adjoint_local(lambda x: V.bump(x) * (x[..., 0] + 0.5))
    assert not local.asserted
    assert abs(V.gauge_invariance_delta("eym", sol, local, quad)) < 1e-9
    assert abs(V.gauge_invariance_delta("eym", off, local, quad)) > 1e-3


def test_transform_model_guard(rng):
    with pytest.raises(ValueError):
        V.gauge_invariance_delta("maxwell", V.build_maxwell_solution(), V.adjoint_local(lambda x: x[..., 0]),
                                 V.Quadrature.box("u1", n=2, fiber=2))
