import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kkcheck import lie

TAGS = ["u1", "su2", "su3", "u1+su2+su3"]


def brute_killing(c):
    r = c.shape[0]
    b = np.zeros((r, r))
    for j, k, m, n in itertools.product(range(r), repeat=4):
        b[j, k] += c[m, j, n] * c[n, k, m]
    return b


def bracket_matrices(c):
    # (ad t_i)^k_j = c^k_ij
    return [c[:, i, :] for i in range(c.shape[0])]


@pytest.mark.parametrize("tag", TAGS)
def test_exact_invariants_vanish(tag):
    alg = lie.catalog(tag)
    assert lie.jacobi_residual(alg) == 0.0
    assert lie.unimodularity_residual(alg) == 0.0
    assert lie.ad_invariance_residual(alg) == 0.0


@pytest.mark.parametrize("tag", TAGS)
def test_jacobi_as_ad_homomorphism(tag):
    # [ad t_i, ad t_j] = c^k_ij ad t_k, an independent restatement of Jacobi
    alg = lie.catalog(tag)
    ad = bracket_matrices(alg.c)
    worst = 0.0
    for i, j in itertools.product(range(alg.dim), repeat=2):
        lhs = ad[i] @ ad[j] - ad[j] @ ad[i]
        rhs = sum(alg.c[k, i, j] * ad[k] for k in range(alg.dim))
        worst = max(worst, np.abs(lhs - rhs).max())
    assert worst < 1e-14


def test_su2_killing_values():
    alg = lie.su2()
    assert np.abs(brute_killing(alg.c) + 2 * np.eye(3)).max() < 1e-12
    assert np.abs(lie.killing_form(alg) - brute_killing(alg.c)).max() < 1e-12
    trace_form = np.array([[np.trace(a @ b) for b in bracket_matrices(alg.c)] for a in bracket_matrices(alg.c)])
    bk = 0.5 * np.sum(trace_form * np.linalg.inv(alg.k_metric))
    assert abs(lie.killing_contraction(alg) + 3.0) < 1e-12
    assert abs(bk + 3.0) < 1e-12


def test_su3_killing_is_negative_definite():
    b = brute_killing(lie.su3().c)
    assert np.abs(b - lie.killing_form(lie.su3())).max() < 1e-12
    assert np.linalg.eigvalsh(b).max() < 0


def test_u1_is_abelian():
    alg = lie.u1()
    assert alg.dim == 1 and np.all(alg.c == 0)
    assert lie.killing_contraction(alg) == 0.0
    assert lie.lambda_effective(0.3, alg) == 0.3


def test_lambda_effective_is_smaller_for_su2():
    assert lie.lambda_effective(0.75, lie.su2()) == pytest.approx(0.0, abs=1e-15)


def test_direct_sum_blocks():
    alg = lie.direct_sum(lie.u1(), lie.su2())
    assert alg.dim == 4
    assert np.all(alg.c[0] == 0) and np.all(alg.c[:, 0] == 0)
    assert np.array_equal(alg.c[1:, 1:, 1:], lie.su2().c)


def test_unknown_tag():
    with pytest.raises(lie.LieInputError):
        lie.catalog("so5")


def test_k_metric_parameter():
    alg = lie.su2(2.0 * np.eye(3))
    assert lie.killing_contraction(alg) == pytest.approx(-1.5)
    assert lie.ad_invariance_residual(alg) == 0.0


def test_non_unit_quaternion_rejected():
    with pytest.raises(lie.LieInputError):
        lie.GroupElement("su2", [1.0, 1.0, 0.0, 0.0])


quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda v: np.linalg.norm(v) > 0.1)


@settings(max_examples=40, deadline=None)
@given(quats, quats)
def test_adjoint_is_homomorphism(p, q):
    alg = lie.su2()
    g = lie.GroupElement("su2", lie.quat_normalize(np.array(p)))
    h = lie.GroupElement("su2", lie.quat_normalize(np.array(q)))
    lhs = lie.adjoint_matrix(g @ h, alg)
    rhs = lie.adjoint_matrix(g, alg) @ lie.adjoint_matrix(h, alg)
    assert np.abs(lhs - rhs).max() < 1e-12


@settings(max_examples=40, deadline=None)
@given(quats)
def test_adjoint_preserves_structure(p):
    alg = lie.su2()
    s = lie.adjoint_matrix(lie.GroupElement("su2", lie.quat_normalize(np.array(p))), alg)
    assert np.abs(s.T @ s - np.eye(3)).max() < 1e-12
    # S^i_l c^l_jk = c^i_mn S^m_j S^n_k
    lhs = np.einsum("il,ljk->ijk", s, alg.c)
    rhs = np.einsum("imn,mj,nk->ijk", alg.c, s, s)
    assert np.abs(lhs - rhs).max() < 1e-12


def test_quat_exp_matches_matrix_exponential():
    from scipy.linalg import expm
    xi = np.array([0.3, -1.1, 0.7])
    q = lie.quat_exp(xi, 1.3)
    m = expm(1.3 * np.einsum("i,iab->ab", xi, lie.SU2_BASIS))
    assert np.abs(lie.GroupElement("su2", q).matrix() - m).max() < 1e-12


def test_haar_samples_are_unit(rng):
    q = lie.random_su2(rng, 100)
    assert np.abs(np.linalg.norm(q, axis=1) - 1).max() < 1e-14
