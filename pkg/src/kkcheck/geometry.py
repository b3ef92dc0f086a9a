"""Frame metrics, torsion-free connections, curvature and the Kaluza-Klein reduction.

Conventions
-----------
Anholonomy coefficients of a coframe are defined by
``d theta^I = 1/2 Theta^I_JK theta^J ^ theta^K``.  Connection coefficients
are ``omega^I_J = omega^I_JK theta^K`` with torsion ``d theta^I + omega^I_J ^ theta^J``.
Curvature components satisfy ``Omega^I_J = 1/2 R^I_JMP theta^M ^ theta^P`` and
``Ric_JP = R^I_JIP``.  Frame indices below ``split`` are horizontal.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import jets as J
from .jets import JetArray
from . import lie
from .lie import LieAlgebraData, lambda_effective  # noqa: F401  (re-exported)
from . import forms as F
from .forms import Form, DegeneracyError

ETA = np.diag([-1.0, 1.0, 1.0, 1.0])


class ConsistencyError(RuntimeError):
    """Two independent evaluations of the same quantity disagree."""


class ChartDomainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# metric

@dataclass(frozen=True)
class FrameMetric:
    """Block-diagonal frame metric h = eta (+) k."""

    k: np.ndarray
    eta: np.ndarray = field(default_factory=lambda: ETA.copy())

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        if eta.shape != (4, 4) or not np.array_equal(eta, ETA):
            raise AssertionError("eta must be diag(-1, 1, 1, 1)")
        k = np.atleast_2d(np.asarray(self.k, dtype=float)) if np.size(self.k) else np.zeros((0, 0))
        if k.size:
            if not np.allclose(k, k.T, atol=1e-14):
                raise ValueError("k must be symmetric")
            if np.linalg.eigvalsh(k).min() <= 0:
                raise ValueError("k must be positive definite")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "eta", eta)

    @classmethod
    def for_algebra(cls, alg: LieAlgebraData | None) -> "FrameMetric":
        return cls(np.zeros((0, 0)) if alg is None else alg.k_metric)

    @property
    def dim(self) -> int:
        return 4 + self.k.shape[0]

    @property
    def h(self) -> np.ndarray:
        n = self.dim
        out = np.zeros((n, n))
        out[:4, :4] = self.eta
        out[4:, 4:] = self.k
        return out

    @property
    def h_inv(self) -> np.ndarray:
        return np.linalg.inv(self.h)


# ---------------------------------------------------------------------------
# generic frame geometry

def _letters(k: int) -> str:
    return "abcdefgh"[:k]


class FrameGeometry:
    """Connection and curvature of an orthonormal frame from its anholonomy.

    Parameters
    ----------
    theta : JetArray
        Anholonomy ``Theta^I_JK`` with shape ``(..., n, n, n)``.
    deriv : callable
        Frame derivative: maps jets of shape ``(..., *extra)`` to
        ``(..., *extra, n)`` holding ``e_I(f)``.
    h : ndarray
        Constant frame metric.
    """

    def __init__(self, theta, deriv: Callable, h: np.ndarray, split: int = 4):
        self.theta = theta
        self.deriv = deriv
        self.h = np.asarray(h, dtype=float)
        self.h_inv = np.linalg.inv(self.h)
        self.n = self.h.shape[0]
        self.split = split
        self._omega = None
        self._riemann = None

    # -- constructors ----------------------------------------------------------
    @classmethod
    def from_coframe(cls, e: JetArray, h, split: int = 4) -> "FrameGeometry":
        """Geometry of a coordinate coframe ``e[..., I, mu]`` given as jets."""
        cond = np.linalg.cond(np.asarray(J.value(e)))
        if not np.all(np.isfinite(cond)) or np.any(cond > 1e12):
            raise DegeneracyError("singular coframe")
        einv = J.inv(e)
        theta = coframe_anholonomy(e, einv)
        nb = e.ndim - 2

        def deriv(f):
            g = f.grad()
            extra = f.ndim - nb
            s = _letters(extra)
            return J.einsum(f"...{s}m,...my->...{s}y", g, einv)

        geo = cls(theta, deriv, h, split)
        geo.e = e
        geo.einv = einv
        return geo

    # -- connection ------------------------------------------------------------
    @property
    def omega(self):
        """Levi-Civita coefficients ``omega^I_JK`` by the Koszul formula."""
        if self._omega is None:
            self._omega = koszul(self.theta, self.h)
        return self._omega

    def torsion_residual(self, omega=None) -> float:
        om = self.omega if omega is None else omega
        om = J.value(om)
        th = J.value(self.theta)
        res = th - (om - np.swapaxes(om, -1, -2))
        return float(np.abs(res).max())

    def antisymmetry_residual(self, omega=None) -> float:
        om = J.value(self.omega if omega is None else omega)
        low = np.einsum("IL,...LJK->...IJK", self.h, om)
        return float(np.abs(low + np.swapaxes(low, -2, -3)).max())

    # -- curvature -------------------------------------------------------------
    @property
    def riemann(self):
        """``R^I_JMP`` (order drops by one relative to omega)."""
        if self._riemann is None:
            om = self.omega
            th = self.theta
            dom = self.deriv(om)  # (..., I, J, P, M)
            t1 = dom.swapaxes(-1, -2)  # I J M P
            t2 = dom
            t3 = J.einsum("...IJL,...LMP->...IJMP", om, th)
            t4 = J.einsum("...IKM,...KJP->...IJMP", om, om)
            self._riemann = t1 - t2 + t3 + t4 - t4.swapaxes(-1, -2)
        return self._riemann

    @property
    def ricci(self):
        """Lower-index Ricci ``Ric_JP``."""
        return J.einsum("...IJIP->...JP", self.riemann)

    def ricci_mixed(self):
        return J.einsum("...IK,KJ->...IJ", self.ricci, self.h_inv)

    def scalar(self):
        return J.einsum("...II->...", self.ricci_mixed())

    def einstein(self):
        """Mixed Einstein tensor ``Ein_I^J = Ric_I^J - 1/2 R delta_I^J``."""
        ric = self.ricci_mixed()
        r = self.scalar()
        return ric - J.einsum("...,IJ->...IJ", r, np.eye(self.n)) * 0.5

    def einstein_values(self, check: bool = True, tol: float = 1e-8) -> np.ndarray:
        ein = np.asarray(J.value(self.einstein()))
        if check:
            res = palatini_residual(np.asarray(J.value(self.riemann)), ein, self.h)
            if res > tol:
                raise ConsistencyError(f"Palatini contraction disagrees with Ric - R/2: {res:.3e}")
        return ein

    def bianchi_residual(self) -> float:
        """max |nabla_J Ein_I^J| (needs order >= 1 on the Einstein jets)."""
        ein = self.einstein()
        om = self.omega
        d = self.deriv(ein)  # (..., I, J, K) = e_K Ein_I^J
        div = J.einsum("...IJJ->...I", d)
        div = div + J.einsum("...JLJ,...IL->...I", om, ein) - J.einsum("...LIJ,...LJ->...I", om, ein)
        return float(np.abs(J.value(div)).max())


def coframe_anholonomy(e: JetArray, einv=None):
    """``Theta^I_JK`` from coordinate derivatives of a coframe matrix."""
    if einv is None:
        einv = J.inv(e)
    g = e.grad()  # (..., I, nu, mu) = d_mu e^I_nu
    d = g.swapaxes(-1, -2) - g  # D^I_{mu nu} = d_mu e_nu - d_nu e_mu
    half = J.einsum("...Imn,...mJ->...IJn", d, einv)
    return J.einsum("...IJn,...nK->...IJK", half, einv)


def koszul(theta, h: np.ndarray):
    """Torsion-free, metric ``omega^I_JK = h^IL 1/2 (T_LJK - T_JLK - T_KLJ)``."""
    low = J.einsum("IL,...LJK->...IJK", h, theta) if isinstance(theta, JetArray) else np.einsum(
        "IL,...LJK->...IJK", h, theta)
    perm1 = low.swapaxes(-2, -3)  # T_JIK
    perm2 = low.moveaxis(-3, -1) if isinstance(low, JetArray) else np.moveaxis(low, -3, -1)  # T_KIJ ordered as IJK
    om_low = (low - perm1 - perm2) * 0.5
    h_inv = np.linalg.inv(h)
    if isinstance(om_low, JetArray):
        return J.einsum("IL,...LJK->...IJK", h_inv, om_low)
    return np.einsum("IL,...LJK->...IJK", h_inv, om_low)


@functools.lru_cache(maxsize=None)
def _torsion_system(n: int, hkey: bytes):
    h = np.frombuffer(hkey).reshape(n, n)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    nunk = len(pairs) * n
    uidx = {}
    for p, (i, j) in enumerate(pairs):
        for k in range(n):
            uidx[(i, j, k)] = (p * n + k, 1.0)
            uidx[(j, i, k)] = (p * n + k, -1.0)
    rows = []
    # torsion: w_IJK - w_IKJ = T_IJK for J < K
    for i in range(n):
        for j, k in pairs:
            row = np.zeros(nunk)
            for key, s in (((i, j, k), 1.0), ((i, k, j), -1.0)):
                if key[0] != key[1]:
                    idx, sg = uidx[key]
                    row[idx] += s * sg
            rows.append(row)
    mat = np.array(rows)
    return np.linalg.pinv(mat), pairs, h


def torsionfree_linear(theta_values: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Independent solve of the torsion-free system as a linear least-squares problem."""
    n = h.shape[0]
    pinv, pairs, _ = _torsion_system(n, np.ascontiguousarray(h, dtype=float).tobytes())
    low = np.einsum("IL,...LJK->...IJK", h, theta_values)
    rhs = np.stack([low[..., i, j, k] for i in range(n) for j, k in pairs], axis=-1)
    sol = np.einsum("ur,...r->...u", pinv, rhs)
    om_low = np.zeros(theta_values.shape)
    for p, (i, j) in enumerate(pairs):
        om_low[..., i, j, :] = sol[..., p * n:(p + 1) * n]
        om_low[..., j, i, :] = -sol[..., p * n:(p + 1) * n]
    return np.einsum("IL,...LJK->...IJK", np.linalg.inv(h), om_low)


@functools.lru_cache(maxsize=None)
def _palatini_tensors(n: int):
    """Wedge tables for 1/2 hat_IJK ^ Omega^JK and hat_J, in the frame basis."""
    combos2 = F.combos(n, 2)
    w = np.zeros((n, n, n, len(combos2), n))
    hat1 = np.zeros((n, n))
    for j in range(n):
        hat1[j] = F.hat_volume(n, (j,)).coeffs
    for i in range(n):
        for j in range(n):
            for k in range(n):
                if len({i, j, k}) < 3:
                    continue
                vol = F.hat_volume(n, (i, j, k))
                for c, (m, p) in enumerate(combos2):
                    two = Form.basis_form(n, (m, p), "frame")
                    w[i, j, k, c] = F.wedge(vol, two).coeffs
    return w, hat1


def palatini_residual(riemann: np.ndarray, ein: np.ndarray, h: np.ndarray) -> float:
    """max |1/2 hat_IJK ^ Omega^JK + Ein_I^J hat_J| over I and components."""
    n = h.shape[0]
    w, hat1 = _palatini_tensors(n)
    h_inv = np.linalg.inv(h)
    raised = np.einsum("...JLMP,LK->...JKMP", riemann, h_inv)  # Omega^JK components
    idx = np.array(F.combos(n, 2))
    om2 = raised[..., idx[:, 0], idx[:, 1]]  # (..., J, K, c)
    lhs = 0.5 * np.einsum("IJKcL,...JKc->...IL", w, om2)
    rhs = np.einsum("...IJ,JL->...IL", ein, hat1)
    return float(np.abs(lhs + rhs).max())


# ---------------------------------------------------------------------------
# base vierbein

def base_spin_connection(e: JetArray):
    """``gamma^a_bc`` of a vierbein field given as jets ``e[..., a, mu]``."""
    geo = FrameGeometry.from_coframe(e, ETA, split=4)
    return geo.omega, geo


def torsion_form_residual(e_field: Callable, omega_field: Callable, points, order: int = 2) -> float:
    """max |d theta^I + omega^I_J ^ theta^J| evaluated with coordinate forms.

    ``omega_field`` maps coordinate jets to frame coefficients ``omega^I_JK``.
    """
    z = J.variables(points, order)
    e = e_field(z)
    om = omega_field(z)
    n = e.shape[-1]
    om_coord = J.einsum("...IJK,...Km->...IJm", om, e)  # omega^I_J as coordinate 1-forms
    worst = 0.0
    thetas = [Form(1, n, e[..., i, :]) for i in range(n)]
    for i in range(n):
        tor = F.ext_d(thetas[i])
        for j in range(n):
            tor = tor + F.wedge(Form(1, n, om_coord[..., i, j, :]), thetas[j])
        worst = max(worst, tor.max_abs())
    return worst


# ---------------------------------------------------------------------------
# group charts

def _qmul(p, q):
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return (pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw)


def _rotation(q):
    w, x, y, z = q
    rows = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]
    return J.stack([J.stack(r, axis=-1) for r in rows], axis=-2)


@dataclass(frozen=True)
class GroupChart:
    """Coordinates on the structure group.

    ``u1`` uses an angle with period ``2 pi``.  ``su2`` uses the product chart
    ``q(y) = q0 exp(y1 t1) exp(y2 t2) exp(y3 t3)``, regular for ``|y2| < pi/2``.
    """

    tag: str
    q0: tuple = (1.0, 0.0, 0.0, 0.0)

    @property
    def dim(self) -> int:
        return {"u1": 1, "su2": 3}[self.tag]

    @property
    def periods(self) -> tuple:
        return (2 * np.pi,) if self.tag == "u1" else (None, None, None)

    def _centre(self):
        """Chart centre components; ``q0`` may hold one quaternion per point."""
        return tuple(np.moveaxis(np.asarray(self.q0, dtype=float), -1, 0))

    def check_domain(self, y):
        if self.tag == "su2" and np.any(np.abs(np.asarray(J.value(y))[..., 1]) >= np.pi / 2 - 1e-6):
            raise ChartDomainError("su2 product chart is singular at |y2| = pi/2")

    def quaternion(self, y):
        """Unit quaternion components (tuple of 4) for su2 coordinates."""
        self.check_domain(y)
        q = tuple(J.as_jet(np.broadcast_to(v, y.shape[:-1]).copy(), y[..., 0]) for v in self._centre())
        for k in range(3):
            half = y[..., k] * 0.5
            f = [half.cos(), 0.0, 0.0, 0.0]
            f[k + 1] = half.sin()
            f = tuple(J.as_jet(v, half) for v in f)
            q = _qmul(q, f)
        return q

    def forms(self, y):
        """Left-invariant ``lambda^i_k``, right-invariant ``rho^i_k`` and ``S^i_j``."""
        if self.tag == "u1":
            one = J.ones_like(y[..., 0])
            lam = J.stack([J.stack([one], axis=-1)], axis=-2)
            return lam, lam, J.stack([J.stack([one], axis=-1)], axis=-2)
        self.check_domain(y)
        like = y[..., 0]
        facs = []
        for k in range(3):
            half = y[..., k] * 0.5
            f = [half.cos(), 0.0, 0.0, 0.0]
            f[k + 1] = half.sin()
            facs.append(tuple(J.as_jet(v, like) for v in f))
        # lambda = sum_k Ad(h_k^-1) t_k dy^k with h_k the product of later factors
        cols = []
        tail = None
        for k in (2, 1, 0):
            if tail is None:
                col = [J.zeros(like.shape, like)] * 3
                col[k] = J.ones_like(like)
                col = J.stack(col, axis=-1)
            else:
                conj = (tail[0], -tail[1], -tail[2], -tail[3])
                rot = _rotation(conj)
                col = rot[..., :, k]
            cols.append((k, col))
            tail = facs[k] if tail is None else _qmul(facs[k], tail)
        cols = [c for _, c in sorted(cols, key=lambda t: t[0])]
        lam = J.stack(cols, axis=-1)  # (..., i, k)
        q0 = tuple(J.as_jet(np.broadcast_to(v, like.shape).copy(), like) for v in self._centre())
        q = _qmul(q0, tail)
        s = _rotation(q)
        rho = J.matmul(s, lam)
        return lam, rho, s


def maurer_cartan_by_derivative(chart: GroupChart, y: JetArray):
    """``lambda^i_k = 2 Im_i(q^-1 d_k q)`` from jet derivatives (independent oracle)."""
    q = chart.quaternion(y)
    dq = [c.grad() for c in q]  # each (..., k)
    qc = tuple(c.truncate(dq[0].order) for c in (q[0], -q[1], -q[2], -q[3]))
    qc = tuple(c[..., None] for c in qc)
    prod = _qmul(qc, tuple(dq))
    return J.stack([prod[1] * 2.0, prod[2] * 2.0, prod[3] * 2.0], axis=-2)


# ---------------------------------------------------------------------------
# reduced data and the Kaluza-Klein coframe

@dataclass(frozen=True)
class ReducedData:
    """Base vierbein and gauge potential as functions of the base coordinates.

    ``vierbein(x)`` returns jets ``e[..., a, mu]``; ``potential(x)`` returns
    coordinate components ``A[..., i, mu]``.
    """

    vierbein: Callable
    potential: Callable
    alg: LieAlgebraData

    def at(self, points, order: int = 2) -> "ReducedValues":
        x = J.variables(points, order)
        return ReducedValues(self, x)


class ReducedValues:
    """Reduced fields and derived quantities at a batch of base points."""

    def __init__(self, red: ReducedData, x: JetArray):
        self.red = red
        self.alg = red.alg
        self.x = x
        self.e = red.vierbein(x)
        self.base = FrameGeometry.from_coframe(self.e, ETA, split=4)
        self.einv = self.base.einv
        a_coord = red.potential(x)
        self.a_coord = a_coord
        self.A = J.einsum("...im,...ma->...ia", a_coord, self.einv)  # A^i_a
        c = self.alg.c
        g = a_coord.grad()  # (..., i, nu, mu) = d_mu A_nu
        f_coord = g.swapaxes(-1, -2) - g + _bracket(c, a_coord)
        self.F_coord = f_coord
        half = J.einsum("...imn,...ma->...ian", f_coord, self.einv)
        self.F = J.einsum("...ian,...nb->...iab", half, self.einv)  # F^i_ab

    @property
    def gamma(self):
        return self.base.omega

    def frame_derivative(self, f):
        """Horizontal frame derivative ``e_a(f)`` of x-only jets."""
        return self.base.deriv(f)

    def F_up(self):
        """``F_i^{ab} = k_ij eta^ac eta^bd F^j_cd``."""
        return _raise_F(self.F, self.alg.k_metric)


def _bracket(c, a):
    """c^i_jk A^j_mu A^k_nu as jets."""
    ca = J.einsum("ijk,...jm->...ikm", c, a)
    return J.einsum("...ikm,...kn->...imn", ca, a)


def _raise_F(f, k):
    up = J.einsum("ac,...jcd->...jad", ETA, f)
    up = J.einsum("bd,...jad->...jab", ETA, up)
    return J.einsum("ij,...jab->...iab", k, up)


def reduced_geometry(vals: ReducedValues) -> FrameGeometry:
    """Geometry of the dressed KK frame from x-only data (fiber derivatives vanish)."""
    alg = vals.alg
    r = alg.dim
    n = 4 + r
    base_theta = vals.base.theta
    order = min(base_theta.order, vals.F.order, vals.A.order)
    like = base_theta.truncate(order)
    theta = J.zeros(like.shape[:-3] + (n, n, n), like)
    theta.c[..., :4, :4, :4, :] = base_theta.truncate(order).c
    theta.c[..., 4:, :4, :4, :] = vals.F.truncate(order).c
    # Theta^i_bj = c^i_jk A^k_b and Theta^i_jb = -Theta^i_bj
    cA = J.einsum("ijk,...kb->...ibj", alg.c, vals.A).truncate(order)
    theta.c[..., 4:, :4, 4:, :] = cA.c
    theta.c[..., 4:, 4:, :4, :] = -np.swapaxes(cA.c, -2, -3)
    const = np.broadcast_to(alg.c, like.shape[:-3] + alg.c.shape)
    theta.c[..., 4:, 4:, 4:, 0] = const
    h = FrameMetric.for_algebra(alg).h
    base_deriv = vals.base.deriv

    def deriv(f):
        g = base_deriv(f)
        zeros = np.zeros(g.c.shape[:-2] + (r, g.c.shape[-1]))
        return g._wrap(np.concatenate([g.c, zeros], axis=-2))

    return FrameGeometry(theta, deriv, h, split=4)


def kk_coframe(red: ReducedData, chart: GroupChart):
    """Raw and dressed coframe fields on base x group coordinates.

    Returns
    -------
    raw, dressed : CoFrameField
        ``raw`` has vertical rows ``theta^i = (S^-1)^i_j A^j + lambda^i``;
        ``dressed`` has ``e^i = A^i + rho^i``.
    """
    r = red.alg.dim
    if r != chart.dim:
        raise ValueError("group chart does not match the algebra dimension")
    n = 4 + r

    def build(z, dressed):
        x = z[..., :4]
        y = z[..., 4:]
        e = red.vierbein(x)
        a = red.potential(x)
        lam, rho, s = chart.forms(y)
        order = min(e.order, a.order, lam.order)
        top = J.zeros(z.shape[:-1] + (4, n), e.truncate(order))
        top.c[..., :, :4, :] = e.truncate(order).c
        bottom = J.zeros(z.shape[:-1] + (r, n), top)
        if dressed:
            bottom.c[..., :, :4, :] = a.truncate(order).c
            bottom.c[..., :, 4:, :] = rho.truncate(order).c
        else:
            sinv_a = J.einsum("...ji,...jm->...im", s, a)  # S^T A
            bottom.c[..., :, :4, :] = sinv_a.truncate(order).c
            bottom.c[..., :, 4:, :] = lam.truncate(order).c
        return top._wrap(np.concatenate([top.c, bottom.c], axis=-3))

    raw = F.CoFrameField(lambda z: build(z, False), n, 4)
    dressed = F.CoFrameField(lambda z: build(z, True), n, 4)
    return raw, dressed


def adjoint_field(chart: GroupChart, y: JetArray):
    return chart.forms(y)[2]


def kk_connection_closed_form(vals: ReducedValues):
    """Block formulas for the Levi-Civita coefficients ``omega^I_JK`` in the dressed frame."""
    alg = vals.alg
    r = alg.dim
    n = 4 + r
    k = alg.k_metric
    gamma = vals.gamma
    f = vals.F
    order = min(gamma.order, f.order, vals.A.order)
    like = gamma.truncate(order)
    om = J.zeros(like.shape[:-3] + (n, n, n), like)
    om.c[..., :4, :4, :4, :] = gamma.truncate(order).c
    # omega^a_b = -1/2 k_ij eta^ac F^j_cb e^i
    t = J.einsum("ij,ac,...jcb->...abi", k, ETA, f).truncate(order) * (-0.5)
    om.c[..., :4, :4, 4:, :] = t.c
    # omega^a_i = 1/2 k_ij eta^ac F^j_bc e^b
    t = J.einsum("ij,ac,...jbc->...aib", k, ETA, f).truncate(order) * 0.5
    om.c[..., :4, 4:, :4, :] = t.c
    # omega^i_a = 1/2 F^i_ab e^b
    om.c[..., 4:, :4, :4, :] = (f.truncate(order) * 0.5).c
    # omega^i_j = 1/2 c^i_jk e^k - c^i_jk A^k_b e^b
    om.c[..., 4:, 4:, 4:, 0] = 0.5 * np.broadcast_to(alg.c, like.shape[:-3] + alg.c.shape)
    t = J.einsum("ijk,...kb->...ijb", alg.c, vals.A).truncate(order) * (-1.0)
    om.c[..., 4:, 4:, :4, :] = t.c
    return om


# ---------------------------------------------------------------------------
# Einstein reduction

def einstein_reduction(vals: ReducedValues, ein_g=None, literal: bool = False) -> dict:
    """Closed-form blocks ``Ein(h)_a^b``, ``Ein(h)_i^a`` and ``Ein(h)_i^j``.

    ``ein_g`` defaults to the numeric Einstein tensor of the base vierbein.
    The vertical block carries a ``-1/2 R(g) delta_i^j`` term, which vanishes
    on a flat base; ``literal=True`` drops it.
    """
    alg = vals.alg
    k = alg.k_metric
    kinv = np.linalg.inv(k)
    c = alg.c
    bk = lie.killing_contraction(alg)
    if ein_g is None:
        ein_g = vals.base.einstein_values(check=False)
    f = vals.F
    fu = _raise_F(f, k)
    fv = np.asarray(J.value(f))
    fuv = np.asarray(J.value(fu))
    norm = 0.5 * np.einsum("...iab,...iab->...", fuv, fv)
    eye4 = np.eye(4)
    r = alg.dim
    ab = ein_g - 0.5 * np.einsum("...iac,...ibc->...ab", fv, fuv) + 0.25 * (norm + bk)[..., None, None] * eye4
    # covariant divergence of F_i^{ab}
    gamma = np.asarray(J.value(vals.gamma))
    a_val = np.asarray(J.value(vals.A))
    dfu = np.asarray(J.value(vals.frame_derivative(fu)))  # (..., i, a, b, c) = e_c F_i^{ab}
    div = np.einsum("...iabb->...ia", dfu)
    div = div - np.einsum("jki,...kb,...jab->...ia", c, a_val, fuv)
    div = div + np.einsum("...icb,...acb->...ia", fuv, gamma)
    div = div + np.einsum("...cbc,...iab->...ia", gamma, fuv)
    ia = 0.5 * div
    ij = 0.25 * np.einsum("...iab,...jab->...ij", fuv, fv) \
        - 0.25 * np.einsum("kil,jkm,lm->ij", c, c, kinv) \
        + 0.25 * (norm + bk)[..., None, None] * np.eye(r)
    if not literal:
        r_g = -np.einsum("...aa->...", ein_g)  # trace of a 4D Einstein tensor is -R
        ij = ij - 0.5 * r_g[..., None, None] * np.eye(r)
    return {"ab": ab, "ia": ia, "ij": ij, "norm_F": norm, "div_F": div}


def einstein_blocks(ein: np.ndarray, split: int = 4) -> dict:
    return {"ab": ein[..., :split, :split], "ia": ein[..., split:, :split], "ij": ein[..., split:, split:],
            "ai": ein[..., :split, split:]}


def lowered_symmetry_residual(ein: np.ndarray, h: np.ndarray) -> float:
    low = np.einsum("...IK,KJ->...IJ", ein, h)
    return float(np.abs(low - np.swapaxes(low, -1, -2)).max())


# ---------------------------------------------------------------------------
# random reduced data

def random_reduced_data(rng: np.random.Generator, alg: LieAlgebraData, e_amp: float = 0.03,
                        a_amp: float = 0.1, degree: int = 2, flat: bool = False,
                        zero_potential: bool = False) -> ReducedData:
    """Seeded polynomial vierbein (near identity) and potential on [-1, 1]^4."""
    chart = F.Chart((-1.0,) * 4, (1.0,) * 4)
    spec_e = F.RandomFieldSpec(degree=degree, trig_degree=0, amplitude=e_amp)
    spec_a = F.RandomFieldSpec(degree=degree, trig_degree=0, amplitude=a_amp)
    pe = F.random_tensor_field(rng, chart, (4, 4), spec_e)
    pa = F.random_tensor_field(rng, chart, (alg.dim, 4), spec_a)

    def vierbein(x):
        eye = J.constant(np.broadcast_to(np.eye(4), x.shape[:-1] + (4, 4)), x)
        return eye if flat else eye + pe(x)

    def potential(x):
        if zero_potential:
            return J.zeros(x.shape[:-1] + (alg.dim, 4), x)
        return pa(x)

    return ReducedData(vierbein, potential, alg)


def flat_reduced_data(alg: LieAlgebraData, potential=None) -> ReducedData:
    def vierbein(x):
        return J.constant(np.broadcast_to(np.eye(4), x.shape[:-1] + (4, 4)), x)

    def zero(x):
        return J.zeros(x.shape[:-1] + (alg.dim, 4), x)

    return ReducedData(vierbein, potential or zero, alg)


def full_chart_geometry(red: ReducedData, chart: GroupChart, points, order: int = 2, dressed: bool = True):
    """Geometry of the KK coframe computed from group-chart jets in all N+1 coordinates."""
    raw, dr = kk_coframe(red, chart)
    z = J.variables(points, order)
    e = (dr if dressed else raw)(z)
    h = FrameMetric.for_algebra(red.alg).h
    return FrameGeometry.from_coframe(e, h, split=4)
