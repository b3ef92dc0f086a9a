import numpy as np
import pytest

from kkcheck import forms as F
from kkcheck import geometry as G
from kkcheck import jets as J
from kkcheck import lie


def christoffel_einstein(e, h):
    """Mixed frame Einstein tensor from the coordinate metric (Christoffel route)."""
    g = J.einsum("...Im,IJ,...Jn->...mn", e, h, e)
    ginv = J.inv(g)
    dg = g.grad()  # (..., m, n, s) = d_s g_mn
    # term[..., s, m, n] = 1/2 (d_m g_sn + d_n g_sm - d_s g_mn)
    term = 0.5 * (J.einsum("...snm->...smn", dg) + J.einsum("...smn->...smn", dg) - J.einsum("...mns->...smn", dg))
    gam = J.einsum("...ls,...smn->...lmn", ginv.truncate(1), term)  # Gamma^l_mn
    dgam = gam.grad()  # (..., l, m, n, p) = d_p Gamma^l_mn
    gam0 = gam.truncate(0)
    # R^r_smn = d_m Gamma^r_ns - d_n Gamma^r_ms + Gamma^r_ml Gamma^l_ns - Gamma^r_nl Gamma^l_ms
    riem = J.einsum("...rnsm->...rsmn", dgam) - J.einsum("...rmsn->...rsmn", dgam) \
        + J.einsum("...rml,...lns->...rsmn", gam0, gam0) - J.einsum("...rnl,...lms->...rsmn", gam0, gam0)
    ric = np.asarray(J.einsum("...rsrn->...sn", riem).value)
    gi = np.asarray(ginv.value)
    mixed = np.einsum("...sk,...kn->...sn", ric, gi)
    scal = np.einsum("...ss->...", mixed)
    ein = mixed - 0.5 * scal[..., None, None] * np.eye(mixed.shape[-1])
    ev = np.asarray(e.value)
    einv = np.linalg.inv(ev)
    return np.einsum("...sI,...sn,...Jn->...IJ", einv, ein, ev)


def kk_points(rng, alg, n):
    return np.concatenate([rng.uniform(-0.5, 0.5, (n, 4)), rng.uniform(-0.5, 0.5, (n, alg.dim))], axis=1)


@pytest.mark.parametrize("tag", ["u1", "su2"])
def test_einstein_matches_christoffel_oracle(rng, tag):
    alg = lie.catalog(tag)
    red = G.random_reduced_data(rng, alg, e_amp=0.1, a_amp=0.3)
    chart = G.GroupChart(tag)
    pts = kk_points(rng, alg, 3)
    geo = G.full_chart_geometry(red, chart, pts, 2)
    _, dressed = G.kk_coframe(red, chart)
    oracle = christoffel_einstein(dressed(J.variables(pts, 2)), G.FrameMetric.for_algebra(alg).h)
    assert np.abs(geo.einstein_values() - oracle).max() < 1e-10


@pytest.mark.parametrize("tag", ["u1", "su2"])
def test_connection_three_ways(rng, tag):
    alg = lie.catalog(tag)
    red = G.random_reduced_data(rng, alg)
    pts = kk_points(rng, alg, 6)
    geo = G.full_chart_geometry(red, G.GroupChart(tag), pts, 2)
    om = np.asarray(J.value(geo.omega))
    closed = np.asarray(J.value(G.kk_connection_closed_form(red.at(pts[:, :4], 2))))
    linear = G.torsionfree_linear(np.asarray(J.value(geo.theta)), geo.h)
    assert np.abs(closed - om).max() < 1e-8
    assert np.abs(linear - om).max() < 1e-8
    assert geo.torsion_residual() < 1e-12
    assert geo.antisymmetry_residual() < 1e-12


def test_torsion_free_with_coordinate_forms(rng):
    alg = lie.su2()
    red = G.random_reduced_data(rng, alg)
    _, dressed = G.kk_coframe(red, G.GroupChart("su2"))
    h = G.FrameMetric.for_algebra(alg).h

    def omega(z):
        return G.FrameGeometry.from_coframe(dressed(z), h).omega

    assert G.torsion_form_residual(dressed, omega, kk_points(rng, alg, 2), 2) < 1e-10


@pytest.mark.parametrize("tag", ["u1", "su2"])
def test_einstein_reduction_blocks(rng, tag):
    alg = lie.catalog(tag)
    red = G.random_reduced_data(rng, alg)
    pts = kk_points(rng, alg, 5)
    full = G.einstein_blocks(G.full_chart_geometry(red, G.GroupChart(tag), pts, 2).einstein_values())
    closed = G.einstein_reduction(red.at(pts[:, :4], 2))
    for k in ("ab", "ia", "ij"):
        assert np.abs(closed[k] - full[k]).max() < 1e-6


def test_literal_vertical_block_misses_scalar_term(rng):
    alg = lie.su2()
    red = G.random_reduced_data(rng, alg, e_amp=0.1)
    pts = kk_points(rng, alg, 4)
    vals = red.at(pts[:, :4], 2)
    full = G.einstein_blocks(G.full_chart_geometry(red, G.GroupChart("su2"), pts, 2).einstein_values())
    literal = G.einstein_reduction(vals, literal=True)["ij"]
    r_g = np.asarray(J.value(vals.base.scalar()))
    assert np.abs(full["ij"] - literal + 0.5 * r_g[:, None, None] * np.eye(3)).max() < 1e-10
    assert np.abs(full["ij"] - literal).max() > 1e-4


def test_flat_su2_blocks(rng):
    alg = lie.su2()
    geo = G.full_chart_geometry(G.flat_reduced_data(alg), G.GroupChart("su2"), kk_points(rng, alg, 3), 2)
    b = G.einstein_blocks(geo.einstein_values())
    assert np.abs(b["ab"] + 0.75 * np.eye(4)).max() < 1e-8
    assert np.abs(b["ia"]).max() < 1e-8
    assert np.abs(b["ij"] + 0.25 * np.eye(3)).max() < 1e-8


def test_reduced_geometry_matches_full(rng):
    alg = lie.su2()
    red = G.random_reduced_data(rng, alg)
    pts = kk_points(rng, alg, 3)
    full = G.full_chart_geometry(red, G.GroupChart("su2"), pts, 2).einstein_values()
    reduced = G.reduced_geometry(red.at(pts[:, :4], 2)).einstein_values()
    assert np.abs(full - reduced).max() < 1e-10


def test_palatini_normalization(rng):
    alg = lie.su2()
    red = G.random_reduced_data(rng, alg, e_amp=0.1)
    geo = G.full_chart_geometry(red, G.GroupChart("su2"), kk_points(rng, alg, 4), 2)
    riem = np.asarray(J.value(geo.riemann))
    ein = geo.einstein_values(check=False)
    assert G.palatini_residual(riem, ein, geo.h) < 1e-8
    scal = np.asarray(J.value(geo.scalar()))
    unhalved = ein - 0.5 * scal[:, None, None] * np.eye(7)
    assert G.palatini_residual(riem, unhalved, geo.h) > 1e-3


def test_palatini_mismatch_raises(rng, monkeypatch):
    alg = lie.su2()
    geo = G.full_chart_geometry(G.random_reduced_data(rng, alg), G.GroupChart("su2"), kk_points(rng, alg, 2), 2)
    monkeypatch.setattr(G, "palatini_residual", lambda *a: 1.0)
    with pytest.raises(G.ConsistencyError):
        geo.einstein_values()


def test_bianchi_identity(rng):
    alg = lie.su2()
    red = G.random_reduced_data(rng, alg)
    assert G.reduced_geometry(red.at(rng.uniform(-0.5, 0.5, (3, 4)), 3)).bianchi_residual() < 1e-10


def test_einstein_lowered_is_symmetric(rng):
    alg = lie.su2()
    geo = G.full_chart_geometry(G.random_reduced_data(rng, alg), G.GroupChart("su2"), kk_points(rng, alg, 3), 2)
    assert G.lowered_symmetry_residual(geo.einstein_values(), geo.h) < 1e-10


def test_maurer_cartan_and_adjoint(rng):
    alg = lie.su2()
    chart = G.GroupChart("su2", tuple(lie.random_su2(rng)))
    y = rng.uniform(-0.5, 0.5, (4, 3))
    z = J.variables(y, 2)
    lam, rho, S = chart.forms(z)
    assert np.abs(J.value(lam) - J.value(G.maurer_cartan_by_derivative(chart, z))).max() < 1e-12
    q = np.stack([np.asarray(c.value) for c in chart.quaternion(z)], -1)
    for i in range(4):
        assert np.abs(S.value[i] - lie.adjoint_matrix(lie.GroupElement("su2", q[i]), alg)).max() < 1e-12
    mc = F.CoFrameField(lambda zz: chart.forms(zz)[0], 3, 0)
    assert max(c.max_abs() for c in F.g_curvature(mc, alg.c, J.variables(y, 2))) < 1e-12


def test_chart_singularity():
    chart = G.GroupChart("su2")
    with pytest.raises(G.ChartDomainError):
        chart.quaternion(J.variables(np.array([[0.0, np.pi / 2, 0.0]]), 1))


def test_singular_coframe():
    with pytest.raises(F.DegeneracyError):
        G.FrameGeometry.from_coframe(J.variables(np.zeros((1, 2, 2)), 1), np.eye(2))
