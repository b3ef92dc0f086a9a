"""Actions, Euler-Lagrange residuals and exact solutions of the three models.

Fields live on a box in R^4 times a fiber: a circle of length ``2 pi`` for
u(1) and SU(2) otherwise.  The Maxwell model is evaluated with coordinate
forms.  The Yang-Mills and Einstein-Yang-Mills models are evaluated pointwise
in the frame basis, where momenta are stored as antisymmetric arrays
``pi_I^{JK}`` so that ``pi_I = 1/2 pi_I^{JK} hat_JK`` and every N-form residual
is reported through its coefficients on ``hat_L``.

SU(2) fiber integrals use charts recentred at each node (``y = 0``), where the
chart volume ``dy^1 dy^2 dy^3`` is the left-invariant volume; the total
left-invariant volume of SU(2) is ``16 pi^2``.
"""

from __future__ import annotations

import functools
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import jets as J
from .jets import JetArray
from . import forms as F
from .forms import Form
from . import lie
from .lie import LieAlgebraData
from .geometry import (ETA, ChartDomainError, ConsistencyError, FrameMetric, GroupChart, ReducedData,
                       base_spin_connection, coframe_anholonomy, einstein_reduction, flat_reduced_data,
                       full_chart_geometry, kk_coframe)
from .fibration import PreconditionError

SU2_VOLUME = 16 * np.pi ** 2
_THREADS = 1


def set_threads(n: int) -> None:
    """Number of worker threads used for quadrature chunks."""
    global _THREADS
    _THREADS = max(1, int(n))


# ---------------------------------------------------------------------------
# quadrature

def gauss_legendre(n: int, lo: float = -1.0, hi: float = 1.0):
    x, w = np.polynomial.legendre.leggauss(n)
    return lo + (hi - lo) * (x + 1) / 2, w * (hi - lo) / 2


def trapezoid(n: int, period: float = 2 * np.pi):
    return period * np.arange(n) / n, np.full(n, period / n)


def hopf_rule(n_u: int = 4, m: int = 6):
    """Haar probability rule on SU(2) in Hopf coordinates.

    With ``q = (cos e cos a, cos e sin a, sin e cos b, sin e sin b)`` the Haar
    measure is uniform in ``(sin^2 e, a, b)``; Gauss-Legendre in ``sin^2 e``
    and trapezoids in the angles integrate quaternion polynomials exactly up
    to a degree set by ``n_u`` and ``m``.
    """
    u, wu = gauss_legendre(n_u, 0.0, 1.0)
    ang = 2 * np.pi * np.arange(m) / m
    uu, aa, bb = np.meshgrid(u, ang, ang, indexing="ij")
    ww = np.broadcast_to(wu[:, None, None], uu.shape) / m ** 2
    ce, se = np.sqrt(1 - uu), np.sqrt(uu)
    q = np.stack([ce * np.cos(aa), ce * np.sin(aa), se * np.cos(bb), se * np.sin(bb)], axis=-1)
    return q.reshape(-1, 4), ww.reshape(-1)


@dataclass
class Quadrature:
    """Tensor rule: box nodes in x times fiber nodes.

    ``fiber_nodes`` are angles (u1) or unit quaternions (su2); fiber weights
    already carry the fiber volume.
    """

    tag: str
    x_nodes: np.ndarray
    x_weights: np.ndarray
    fiber_nodes: np.ndarray
    fiber_weights: np.ndarray
    chunk: int = 2048
    paired: bool = False

    @classmethod
    def box(cls, tag: str, n: int = 8, fiber: int = 8, lo: float = -1.0, hi: float = 1.0, hopf=(4, 6),
            chunk: int = 2048) -> "Quadrature":
        x1, w1 = gauss_legendre(n, lo, hi)
        grids = np.meshgrid(*([x1] * 4), indexing="ij")
        xs = np.stack([g.reshape(-1) for g in grids], axis=-1)
        ws = functools.reduce(np.multiply.outer, [w1] * 4).reshape(-1)
        if tag == "u1":
            fn, fw = trapezoid(fiber)
        elif tag == "su2":
            fn, fw = hopf_rule(*hopf)
            fw = fw * SU2_VOLUME
        else:
            raise ValueError(f"no fiber rule for {tag!r}")
        return cls(tag, xs, ws, fn, fw, chunk)

    @classmethod
    def grid(cls, tag: str, n: int = 17, fiber=None, lo: float = -1.0, hi: float = 1.0, rng=None,
             chunk: int = 4096, paired: bool = False) -> "Quadrature":
        """Uniform sample grid (weights are uniform and only used for averages).

        With ``paired`` each base node gets one fiber point, cycling through
        the fiber samples, instead of the full product.
        """
        x1 = np.linspace(lo, hi, n)
        grids = np.meshgrid(*([x1] * 4), indexing="ij")
        xs = np.stack([g.reshape(-1) for g in grids], axis=-1)
        if tag == "u1":
            fn = np.asarray(fiber if fiber is not None else trapezoid(4)[0], dtype=float)
        else:
            fn = np.asarray(fiber) if fiber is not None else lie.random_su2(
                rng if rng is not None else np.random.default_rng(0), 4)
        return cls(tag, xs, np.full(len(xs), 1.0 / len(xs)), fn, np.full(len(fn), 1.0 / len(fn)), chunk, paired)

    @property
    def size(self) -> int:
        if self.paired:
            return len(self.x_weights)
        return len(self.x_weights) * len(self.fiber_weights)

    def check(self, lower=-np.inf, upper=np.inf):
        if np.any(self.x_nodes < lower) or np.any(self.x_nodes > upper):
            raise ChartDomainError("quadrature nodes outside the chart")

    def chunks(self):
        k = len(self.fiber_weights)
        for start in range(0, self.size, self.chunk):
            idx = np.arange(start, min(start + self.chunk, self.size))
            if self.paired:
                yield self.x_nodes[idx], self.fiber_nodes[idx % k], self.x_weights[idx]
                continue
            i, j = idx // k, idx % k
            yield self.x_nodes[i], self.fiber_nodes[j], self.x_weights[i] * self.fiber_weights[j]


def map_chunks(func, quad: Quadrature) -> list:
    """Apply ``func(x, fiber, w)`` to every chunk; results come back in chunk order."""
    items = list(quad.chunks())
    if _THREADS > 1 and len(items) > 1:
        with ThreadPoolExecutor(_THREADS) as pool:
            return list(pool.map(lambda a: func(*a), items))
    return [func(*a) for a in items]


def integrate(density, quad: Quadrature) -> float:
    """Sum of ``w * density(x, fiber)``; chunk sums are reduced exactly (fsum)."""
    parts = map_chunks(lambda x, f, w: float(np.dot(w, density(x, f))), quad)
    return math.fsum(parts)


def max_over(func, quad: Quadrature) -> dict:
    """Componentwise maxima of ``func(x, fiber) -> dict of arrays`` over all nodes."""
    parts = map_chunks(lambda x, f, w: {k: float(np.abs(v).max()) if np.size(v) else 0.0
                                        for k, v in func(x, f).items()}, quad)
    out = {}
    for p in parts:
        for k, v in p.items():
            out[k] = max(out.get(k, 0.0), v)
    return out


# ---------------------------------------------------------------------------
# points on R^4 x G

class BundlePoint:
    """Jets at base points times fiber points.

    For u1 the coordinates are ``z = (x, s)``; for su2 they are ``z = (x, y)``
    in a chart centred at the fiber quaternion, evaluated at ``y = 0``.
    Attributes ``lam``, ``rho`` and ``S`` are the Maurer-Cartan forms and the
    adjoint matrix as jets; ``q`` is the quaternion (su2) and ``s`` the angle (u1).
    """

    def __init__(self, tag: str, x, fiber, order: int = 1):
        x = np.asarray(x, dtype=float)
        fiber = np.asarray(fiber, dtype=float)
        self.tag = tag
        if tag == "u1":
            pts = np.concatenate([x, fiber.reshape(x.shape[:-1] + (1,))], axis=-1)
            self.chart = GroupChart("u1")
        elif tag == "su2":
            pts = np.concatenate([x, np.zeros(x.shape[:-1] + (3,))], axis=-1)
            self.chart = GroupChart("su2", q0=fiber.reshape(x.shape[:-1] + (4,)))
        else:
            raise ValueError(f"no bundle chart for {tag!r}")
        self.z = J.variables(pts, order)
        self.x = self.z[..., :4]
        self.y = self.z[..., 4:]
        self.lam, self.rho, self.S = self.chart.forms(self.y)
        self.q = self.chart.quaternion(self.y) if tag == "su2" else None
        self.s = self.y[..., 0] if tag == "u1" else None

    @property
    def n(self) -> int:
        return self.z.shape[-1]


def bump(x) -> object:
    """prod (1 - x_mu^2)^2: vanishes with its first derivatives on the box faces."""
    out = None
    for m in range(4):
        f = (1 - x[..., m] * x[..., m])
        f = f * f
        out = f if out is None else out * f
    return out


# ---------------------------------------------------------------------------
# frame tables

@functools.lru_cache(maxsize=None)
def _tables(n: int) -> dict:
    """Frame components of hat volumes and the wedge contractions used below."""
    c1 = math.comb(n, n - 1)

    def hat(*idx):
        if len(set(idx)) < len(idx):
            return np.zeros(math.comb(n, n - len(idx)))
        return F.hat_volume(n, idx).coeffs

    t1 = np.array([hat(i) for i in range(n)])
    t2 = np.array([[hat(i, j) for j in range(n)] for i in range(n)])
    t3 = np.array([[[hat(i, j, k) for k in range(n)] for j in range(n)] for i in range(n)])
    b1 = np.eye(n)
    b2 = np.array([[F.Form.from_components(2, n, {(l, m): 1.0}, "frame").coeffs if l != m
                    else np.zeros(math.comb(n, 2)) for m in range(n)] for l in range(n)])

    def hatc(c):
        return np.einsum("...c,Lc->...L", c, t1)

    w_top = F.frame_wedge(t2[:, :, None, None, :], n - 2, b2[None, None], 2, n)[..., 0]
    w_hat3 = hatc(F.frame_wedge(t3[:, :, :, None, None, :], n - 3, b2[None, None, None], 2, n))
    w_1hat = hatc(F.frame_wedge(b1[:, None, None, :], 1, t2[None], n - 2, n))
    w_2hat3 = hatc(F.frame_wedge(b2[:, :, None, None, None, :], 2, t3[None, None], n - 3, n))
    w_top3 = F.frame_wedge(
        F.frame_wedge(b1[:, None, None, None, :], 1, t3[None], n - 3, n)[:, :, :, :, None, None, :], n - 2,
        b2[None, None, None, None], 2, n)[..., 0]
    # (K J P Q, M L) layout for the coframe variation of pi ^ Theta
    w_top3_flat = np.ascontiguousarray(w_top3.transpose(2, 1, 4, 5, 3, 0).reshape(n ** 4, n * n))
    return dict(t1=t1, t2=t2, t3=t3, w_top=w_top, w_hat3=w_hat3, w_1hat=w_1hat, w_2hat3=w_2hat3,
                w_top3=w_top3, w_top3_flat=w_top3_flat, c1=c1)


def hat_coefficients(comps: np.ndarray, n: int) -> np.ndarray:
    """Coefficients on ``hat_L`` of an N-form given by frame components."""
    return np.einsum("...c,Lc->...L", comps, _tables(n)["t1"])


def _expand_einv(einv, extra: int):
    return einv.reshape(einv.shape[:-2] + (1,) * extra + einv.shape[-2:])


class FrameState:
    """Values of a coframe, its inverse and anholonomy at a batch of points.

    Parameters
    ----------
    e : JetArray
        Coframe ``E[..., I, mu]`` with order >= 1.
    """

    def __init__(self, e: JetArray, h: np.ndarray, split: int = 4):
        ev = np.asarray(J.value(e))
        cond = np.linalg.cond(ev)
        if not np.all(np.isfinite(cond)) or np.any(cond > 1e12):
            raise F.DegeneracyError("singular coframe")
        self.e = e
        self.ev = ev
        self.einv_jet = J.inv(e)
        self.einv = np.asarray(J.value(self.einv_jet))
        self.anh = np.asarray(J.value(coframe_anholonomy(e, self.einv_jet)))
        self.det = np.linalg.det(ev)
        self.h = np.asarray(h, dtype=float)
        self.h_inv = np.linalg.inv(self.h)
        self.n = ev.shape[-1]
        self.split = split

    def fderiv(self, f) -> np.ndarray:
        """Values of the frame derivatives ``e_K(f)`` along a new last axis."""
        if not isinstance(f, JetArray):
            f = np.asarray(f)
            return np.zeros(f.shape + (self.n,))
        g = np.asarray(J.value(f.grad()))
        extra = g.ndim - 1 - (self.einv.ndim - 2)
        return np.einsum("...m,...mK->...K", g, _expand_einv(self.einv, extra))

    def to_frame_1(self, a) -> np.ndarray:
        """Frame components of coordinate one-form values along the last axis."""
        a = np.asarray(J.value(a))
        extra = a.ndim - 1 - (self.einv.ndim - 2)
        return np.einsum("...m,...mK->...K", a, _expand_einv(self.einv, extra))

    def to_frame_2(self, a) -> np.ndarray:
        """Frame components of antisymmetric coordinate 2-form matrices (last two axes)."""
        a = np.asarray(J.value(a))
        extra = a.ndim - 2 - (self.einv.ndim - 2)
        ei = _expand_einv(self.einv, extra)
        return np.swapaxes(ei, -1, -2) @ a @ ei

    def g_curvature(self, c: np.ndarray) -> np.ndarray:
        """``Theta^I_KL`` with ``Theta^i = d theta^i + 1/2 c^i_jk theta^j ^ theta^k``."""
        th = self.anh.copy()
        s = self.split
        th[..., s:, s:, s:] += c
        return th

    def form_d(self, coeffs, degree: int) -> np.ndarray:
        """Frame components of d a for ``a = coeffs_J theta^J`` given as jets or arrays."""
        vals = np.asarray(J.value(coeffs))
        return F.frame_ext_d(vals, self.fderiv(coeffs), self.anh, degree)


def _momentum_forms(pi, n: int):
    """``pi_I = 1/2 pi_I^{JK} hat_JK`` as frame components (jets or arrays)."""
    t2 = _tables(n)["t2"]
    if isinstance(pi, JetArray):
        return J.einsum("...JK,JKc->...c", pi, t2) * 0.5
    return 0.5 * np.einsum("...JK,JKc->...c", pi, t2)


def _antisym(a):
    return a - np.swapaxes(a, -1, -2)


# ---------------------------------------------------------------------------
# Maxwell model on R^4 x S^1

def flat_vierbein(x):
    return J.constant(np.broadcast_to(np.eye(4), x.shape[:-1] + (4, 4)).copy(), x[..., 0])


@functools.lru_cache(maxsize=None)
def _maxwell_tables():
    """Frame components of e2_ab ^ theta (per a, b) and of -e3_a, in 5 dimensions."""
    eps = lie.levi_civita(4)
    idx = F.combo_index(5, 3)
    m2 = np.zeros((4, 4, 10))
    m1 = np.zeros((4, 10))
    for a, b, c, d in itertools.permutations(range(4)):
        if c < d:
            m2[a, b, idx[(c, d, 4)]] += eps[a, b, c, d]
        if b < c < d:
            m1[a, idx[(b, c, d)]] -= eps[a, b, c, d]
    return m2, m1


def maxwell_frame_form(pi_ab, pi_a):
    """Frame components of ``1/2 pi^ab e2_ab ^ theta - pi^a e3_a``."""
    m2, m1 = _maxwell_tables()
    if isinstance(pi_ab, JetArray) or isinstance(pi_a, JetArray):
        return J.einsum("...ab,abc->...c", pi_ab, m2) * 0.5 + J.einsum("...a,ac->...c", pi_a, m1)
    return 0.5 * np.einsum("...ab,abc->...c", pi_ab, m2) + np.einsum("...a,ac->...c", pi_a, m1)


def maxwell_decompose(frame_comps: np.ndarray):
    """``(pi^ab, pi^a)`` of a 3-form from its frame components."""
    m2, m1 = _maxwell_tables()
    # m2 and m1 rows are signed unit vectors, so the transpose inverts them
    return np.einsum("...c,abc->...ab", frame_comps, m2), np.einsum("...c,ac->...a", frame_comps, m1)


@dataclass
class MaxwellFields:
    """``theta`` (coordinate components, jets ``(..., 5)``) and ``pi`` (coordinate 3-form).

    ``extra_order`` counts derivatives consumed inside the field callables
    (pullbacks, exact shifts), so evaluation seeds jets of higher order.
    """

    theta: Callable
    pi: Callable
    vierbein: Callable = None
    extra_order: int = 0

    def base(self, x):
        return (self.vierbein or flat_vierbein)(x)

    def coframe(self, z):
        e = self.base(z[..., :4])
        th = self.theta(z)
        order = min(e.order, th.order)
        out = J.zeros(z.shape[:-1] + (5, 5), th.truncate(order))
        out.c[..., :4, :4, :] = e.truncate(order).c
        out.c[..., 4, :, :] = th.truncate(order).c
        return out

    @classmethod
    def from_components(cls, theta, pi_ab, pi_a, vierbein=None) -> "MaxwellFields":
        f = cls(theta, None, vierbein)

        def pi(z):
            fr = F.Frame(f.coframe(z))
            comps = maxwell_frame_form(J.as_jet(pi_ab(z), z[..., 0]), J.as_jet(pi_a(z), z[..., 0]))
            return fr.to_coordinates(Form(3, 5, comps, "frame"))

        f.pi = pi
        return f

    def perturbed(self, var: "MaxwellFields", eps: float) -> "MaxwellFields":
        return MaxwellFields(lambda z: _add_jets(self.theta(z), var.theta(z), eps),
                             lambda z: _add_forms(self.pi(z), var.pi(z), eps), self.vierbein,
                             max(self.extra_order, var.extra_order))


def _add_jets(a, b, eps):
    order = min(a.order, b.order)
    return a.truncate(order) + b.truncate(order) * eps


def _add_forms(a: Form, b: Form, eps: float) -> Form:
    order = min(a.coeffs.order, b.coeffs.order)
    return Form(a.degree, a.dim, a.coeffs.truncate(order) + b.coeffs.truncate(order) * eps, a.basis)


def _maxwell_points(fields: MaxwellFields, x, s):
    pts = np.concatenate([np.asarray(x, float), np.asarray(s, float).reshape(-1, 1)], axis=-1)
    return J.variables(pts, 1 + fields.extra_order)


def maxwell_state(fields: MaxwellFields, x, s) -> dict:
    """Pointwise Maxwell quantities (values) at base points x and fiber angles s."""
    z = _maxwell_points(fields, x, s)
    e = fields.coframe(z)
    ev = np.asarray(J.value(e))
    fr = F.Frame(ev)
    th = Form(1, 5, fields.theta(z))
    dth = F.ext_d(th).values()
    pi_form = fields.pi(z)
    dpi = F.ext_d(pi_form).values()
    pi_v = pi_form.values()
    pi_ab, pi_a = maxwell_decompose(fr.to_frame(pi_v).coeffs)
    dth_f = fr.to_frame(dth).coeffs
    i2 = F.combo_index(5, 2)
    th_ab = np.zeros(ev.shape[:-2] + (4, 4))
    th_a = np.zeros(ev.shape[:-2] + (4,))
    for a in range(4):
        th_a[..., a] = dth_f[..., i2[(a, 4)]]
        for b in range(a + 1, 4):
            th_ab[..., a, b] = dth_f[..., i2[(a, b)]]
            th_ab[..., b, a] = -th_ab[..., a, b]
    pi_low = np.einsum("ac,bd,...cd->...ab", ETA, ETA, pi_ab)
    norm = 0.5 * np.einsum("...ab,...ab->...", pi_ab, pi_low)
    e4 = fr.to_coordinates(Form.basis_form(5, (0, 1, 2, 3), "frame", ev.shape[:-2])).coeffs
    vol = np.linalg.det(ev)  # e4 ^ theta = det(E) dz^0..dz^4
    return dict(frame=fr, ev=ev, dth=dth, dpi=dpi, pi=pi_v, pi_ab=pi_ab, pi_a=pi_a, pi_low=pi_low,
                th_ab=th_ab, th_a=th_a, norm=norm, e4=e4, vol=vol)


def maxwell_density(fields: MaxwellFields, x, s, both: bool = False):
    """Coordinate density of the action; with ``both`` also the expanded integrand."""
    st = maxwell_state(fields, x, s)
    d1 = 0.5 * st["norm"] * st["vol"] + F.wedge(st["pi"], st["dth"]).coeffs[..., 0]
    if not both:
        return d1
    expanded = (0.25 * np.einsum("...ab,...ab->...", st["pi_ab"], st["pi_low"])
                + 0.5 * np.einsum("...ab,...ab->...", st["th_ab"], st["pi_ab"])
                + np.einsum("...a,...a->...", st["th_a"], st["pi_a"]))
    return d1, expanded * st["vol"]


def action_maxwell(fields: MaxwellFields, quad: Quadrature, check: bool = True, tol: float = 1e-9) -> float:
    """Quadrature of ``1/2 |pi|^2 e4 ^ theta + pi ^ d theta``.

    With ``check`` the expanded integrand is integrated too and a disagreement
    beyond ``tol`` (relative to ``max(1, |A|)``) raises ConsistencyError.
    """
    if quad.tag != "u1":
        raise ValueError("the Maxwell model lives on a circle bundle")
    if not check:
        return integrate(lambda x, s: maxwell_density(fields, x, s), quad)
    parts = map_chunks(lambda x, s, w: [float(np.dot(w, d)) for d in maxwell_density(fields, x, s, True)], quad)
    a1 = math.fsum(p[0] for p in parts)
    a2 = math.fsum(p[1] for p in parts)
    if abs(a1 - a2) > tol * max(1.0, abs(a1)):
        raise ConsistencyError(f"Maxwell action integrands disagree: {a1!r} vs {a2!r}")
    return a1


def el_residual_maxwell(fields: MaxwellFields, x, s) -> dict:
    """Residuals (a) Theta_a, (b) Theta_ab + pi_ab, (c) d pi - 1/2 |pi|^2 e4 (coordinate 4-form)."""
    st = maxwell_state(fields, x, s)
    return {"a": st["th_a"], "b": st["th_ab"] + st["pi_low"],
            "c": st["dpi"].coeffs - 0.5 * st["norm"][..., None] * st["e4"]}


def maxwell_pairing(fields: MaxwellFields, var: MaxwellFields, quad: Quadrature) -> float:
    """Integral of the residuals against a variation (predicted first variation).

    ``int [1/2 (pi_ab + Theta_ab) dpi^ab + Theta_a dpi^a] e4 ^ theta + int (c) ^ d theta``
    where ``dpi^ab, dpi^a`` decompose the varied 3-form in the current frame.
    """
    def density(x, s):
        st = maxwell_state(fields, x, s)
        z = _maxwell_points(var, x, s)
        dth = Form(1, 5, var.theta(z)).values()
        dpi = var.pi(z).values()
        v_ab, v_a = maxwell_decompose(st["frame"].to_frame(dpi).coeffs)
        res_c = Form(4, 5, st["dpi"].coeffs - 0.5 * st["norm"][..., None] * st["e4"])
        bulk = (0.5 * np.einsum("...ab,...ab->...", st["pi_low"] + st["th_ab"], v_ab)
                + np.einsum("...a,...a->...", st["th_a"], v_a)) * st["vol"]
        return bulk + F.wedge(res_c, dth).coeffs[..., 0]

    return integrate(density, quad)


def build_maxwell_solution(B: float = 0.7) -> MaxwellFields:
    """Constant field strength ``F_01 = B`` with ``theta = B x^0 dx^1 + ds``."""
    def theta(z):
        x0 = z[..., 0]
        zero = J.zeros(x0.shape, x0)
        return J.stack([zero, x0 * B, zero, zero, J.ones_like(x0)], axis=-1)

    def pi_ab(z):
        out = np.zeros(z.shape[:-1] + (4, 4))
        out[..., 0, 1], out[..., 1, 0] = B, -B
        return out

    def pi_a(z):
        zero = J.zeros(z.shape[:-1], z[..., 0])
        # p^a = pi^a - pi^ab A_b with p^3 = -1/2 |F|^2 x^3 and |F|^2 = -B^2
        return J.stack([z[..., 0] * B ** 2, zero, zero, z[..., 3] * (0.5 * B ** 2)], axis=-1)

    return MaxwellFields.from_components(theta, pi_ab, pi_a)


MAXWELL_CHART = F.Chart((-1.0,) * 4 + (0.0,), (1.0,) * 4 + (2 * np.pi,), (None,) * 4 + (2 * np.pi,))


def _bumped(field_fn, compact: bool):
    if not compact:
        return field_fn

    def out(z):
        v = field_fn(z)
        b = bump(z[..., :4])
        return v * b.reshape(b.shape + (1,) * (v.ndim - b.ndim))

    return out


def random_maxwell_variation(rng: np.random.Generator, amplitude: float = 0.1, compact: bool = True,
                             degree: int = 2, trig_degree: int = 2) -> MaxwellFields:
    """Random (delta theta, delta pi) supported in the unit box when ``compact``."""
    spec = F.RandomFieldSpec(degree, trig_degree, amplitude)
    th = _bumped(F.random_tensor_field(rng, MAXWELL_CHART, (5,), spec), compact)
    pc = _bumped(F.random_tensor_field(rng, MAXWELL_CHART, (10,), spec), compact)
    return MaxwellFields(th, lambda z: Form(3, 5, pc(z)))


def random_maxwell_offshell(rng: np.random.Generator, B: float = 0.7, amplitude: float = 0.1) -> MaxwellFields:
    """Seeded perturbation of the constant-field solution (not compactly supported)."""
    return build_maxwell_solution(B).perturbed(random_maxwell_variation(rng, amplitude, compact=False), 1.0)


def gateaux(action: Callable, fields, variation, eps: float = 1e-4) -> float:
    """Central difference ``(A[f + eps v] - A[f - eps v]) / (2 eps)``."""
    return (action(fields.perturbed(variation, eps)) - action(fields.perturbed(variation, -eps))) / (2 * eps)


# ---------------------------------------------------------------------------
# Yang-Mills and Einstein-Yang-Mills models on R^4 x G

def _jet(v, like):
    return v if isinstance(v, JetArray) else J.as_jet(np.asarray(v, dtype=float), like)


def _pad_top(e, n: int):
    """Rows ``e^a`` padded with zeros along the fiber coordinates."""
    out = J.zeros(e.shape[:-2] + (4, n), e)
    out.c[..., :, :4, :] = e.c
    return out


def _concat_rows(top, bottom):
    order = min(top.order, bottom.order)
    return top.truncate(order)._wrap(np.concatenate([top.truncate(order).c, bottom.truncate(order).c], axis=-3))


def _metric(alg: LieAlgebraData) -> np.ndarray:
    return FrameMetric.for_algebra(alg).h


def _sum_fields(a: Callable, b: Callable, eps: float) -> Callable:
    def out(pt):
        u, v = _jet(a(pt), pt.x[..., 0]), _jet(b(pt), pt.x[..., 0])
        order = min(u.order, v.order)
        return u.truncate(order) + v.truncate(order) * eps

    return out


@dataclass
class YMFields:
    """Lie-algebra valued coframe rows and momenta ``pi_i^{JK}``.

    ``theta(pt)`` returns coordinate rows ``(..., r, n)`` and ``momenta(pt)``
    returns antisymmetric ``(..., r, n, n)``; the base vierbein is fixed.
    """

    alg: LieAlgebraData
    theta: Callable
    momenta: Callable
    vierbein: Callable = None
    extra_order: int = 0

    def coframe(self, pt: BundlePoint):
        e = (self.vierbein or flat_vierbein)(pt.x)
        return _concat_rows(_pad_top(e, pt.n), _jet(self.theta(pt), pt.x[..., 0]))

    def perturbed(self, var: "YMFields", eps: float) -> "YMFields":
        return replace(self, theta=_sum_fields(self.theta, var.theta, eps),
                       momenta=_sum_fields(self.momenta, var.momenta, eps),
                       extra_order=max(self.extra_order, var.extra_order))


@dataclass
class EYMFields:
    """Coframe ``theta(pt) -> (..., n, n)``, connection ``phi(pt) -> (..., n, n, n)``
    holding coordinate components ``phi^I_{J mu}``, momenta ``pi_I^{JK}`` with the
    horizontal block ignored (the constraint), and the bare constant ``lambda0``."""

    alg: LieAlgebraData
    theta: Callable
    phi: Callable
    momenta: Callable
    lambda0: float = 0.0
    extra_order: int = 0

    def coframe(self, pt):
        return _jet(self.theta(pt), pt.x[..., 0])

    def perturbed(self, var: "EYMFields", eps: float) -> "EYMFields":
        return replace(self, theta=_sum_fields(self.theta, var.theta, eps),
                       phi=_sum_fields(self.phi, var.phi, eps),
                       momenta=_sum_fields(self.momenta, var.momenta, eps),
                       extra_order=max(self.extra_order, var.extra_order))


def constrained(pi):
    """Zero the horizontal ``pi_I^{ab}`` block."""
    if isinstance(pi, JetArray):
        c = pi.c.copy()
        c[..., :4, :4, :] = 0.0
        return pi._wrap(c)
    out = np.array(pi, dtype=float)
    out[..., :4, :4] = 0.0
    return out


class _ModelState:
    """Frame data shared by the Yang-Mills and Einstein-Yang-Mills evaluations."""

    def __init__(self, fields, x, fiber, tag: str):
        self.pt = BundlePoint(tag, x, fiber, 1 + fields.extra_order)
        self.alg = fields.alg
        self.c = fields.alg.c
        self.h = _metric(fields.alg)
        self.n = self.h.shape[0]
        self.frame = FrameState(fields.coframe(self.pt), self.h)
        self.gcurv = self.frame.g_curvature(self.c)
        mom = _jet(fields.momenta(self.pt), self.pt.x[..., 0])
        if isinstance(fields, EYMFields):
            mom = constrained(mom)
        self.mom = mom
        self.pi = np.asarray(J.value(mom))
        self.tab = _tables(self.n)

    def pi_theta(self, vertical_only: bool) -> np.ndarray:
        """Frame density of ``pi_I ^ Theta^I``."""
        th = self.gcurv[..., 4:, :, :] if vertical_only else self.gcurv
        n = self.n
        pair = np.swapaxes(self.pi, -3, -1).reshape(th.shape[:-3] + (n * n, -1)) @ th.reshape(
            th.shape[:-3] + (-1, n * n))  # (JK, LM) summed over I
        return 0.25 * pair.reshape(pair.shape[:-2] + (-1,)) @ np.swapaxes(self.tab["w_top"], 0, 1).reshape(-1)

    def d_momenta(self) -> np.ndarray:
        """Hat coefficients of ``d pi_I``."""
        forms = _momentum_forms(self.mom, self.n)
        return hat_coefficients(self.frame.form_d(forms, self.n - 2), self.n)

    def wedge_theta_pi(self) -> np.ndarray:
        """Hat coefficients of ``theta^k ^ pi_j`` as ``(..., j, k, L)`` (k vertical)."""
        pi = self.pi[..., -self.alg.dim:, :, :]
        return 0.5 * np.einsum("...jJK,kJKL->...jkL", pi, self.tab["w_1hat"][4:])


def _ym_norm(pi, alg):
    ab = pi[..., :4, :4]
    low = np.einsum("ij,ac,bd,...jcd->...iab", np.linalg.inv(alg.k_metric), ETA, ETA, ab)
    return 0.5 * np.einsum("...iab,...iab->...", ab, low), low


def ym_density(fields: YMFields, x, fiber, tag: str) -> np.ndarray:
    st = _ModelState(fields, x, fiber, tag)
    norm, _ = _ym_norm(st.pi, st.alg)
    return (0.5 * norm + st.pi_theta(True)) * st.frame.det


def action_ym(fields: YMFields, quad: Quadrature) -> float:
    """Quadrature of ``1/2 |pi|^2 e4 ^ bar_r + pi_i ^ Theta^i``."""
    return integrate(lambda x, f: ym_density(fields, x, f, quad.tag), quad)


def el_residual_ym(fields: YMFields, x, fiber, tag: str) -> dict:
    """Residuals (a) pi^i_ab + Theta^i_ab, (b) Theta^i_ak, (c) Theta^i_jk and (d) as hat coefficients."""
    st = _ModelState(fields, x, fiber, tag)
    norm, low = _ym_norm(st.pi, st.alg)
    th = st.gcurv[..., 4:, :, :]
    d = st.d_momenta() - np.einsum("jki,...jkL->...iL", st.c, st.wedge_theta_pi())
    d[..., :, 4:] -= 0.5 * norm[..., None, None] * np.eye(st.alg.dim)
    return {"a": low + th[..., :4, :4], "b": th[..., :4, 4:], "c": th[..., 4:, 4:], "d": d}


def _curvature_frame(st: _ModelState, phi) -> tuple:
    """Frame components ``R^I_{J MP}`` of ``Phi = d phi + phi ^ phi`` and ``phi^I_{J K}``."""
    phi = _jet(phi, st.pt.x[..., 0])
    g = phi.grad()
    dphi = np.asarray(J.value(g.swapaxes(-1, -2) - g))  # d_mu phi_nu - d_nu phi_mu
    pv = np.asarray(J.value(phi))
    n = pv.shape[-1]
    sq = (np.swapaxes(pv, -1, -2).reshape(pv.shape[:-3] + (n * n, n)) @ pv.reshape(pv.shape[:-3] + (n, n * n)))
    sq = sq.reshape(pv.shape[:-3] + (n, n, n, n)).transpose(tuple(range(pv.ndim - 3)) + (-4, -2, -3, -1))
    coord = dphi + sq - np.swapaxes(sq, -1, -2)
    return st.frame.to_frame_2(coord), st.frame.to_frame_1(pv)


def eym_density(fields: EYMFields, x, fiber, tag: str) -> np.ndarray:
    st = _ModelState(fields, x, fiber, tag)
    riem, _ = _curvature_frame(st, fields.phi(st.pt))
    wk = np.einsum("KJ,IJLM->IKLM", np.linalg.inv(st.h), st.tab["w_top"])
    ep = 0.25 * riem.reshape(riem.shape[:-4] + (-1,)) @ wk.reshape(-1)
    return (ep + st.pi_theta(False) - fields.lambda0) * st.frame.det


def action_eym(fields: EYMFields, quad: Quadrature) -> float:
    """Quadrature of ``1/2 hat_IJ ^ Phi^IJ + pi_I ^ Theta^I - Lambda0 hat``."""
    return integrate(lambda x, f: eym_density(fields, x, f, quad.tag), quad)


def el_residual_eym(fields: EYMFields, x, fiber, tag: str, check: bool = True, tol: float = 1e-9) -> dict:
    """Residuals (a) Theta^I_ak, (b) Theta^I_jk, (c) d^phi hat_IJ, (d) in literal form and (d) from the variation.

    (c) is evaluated from its definition and again as ``d^phi theta^K ^ hat_IJK``;
    with ``check`` a disagreement above ``tol`` raises ConsistencyError.  (d) is
    returned as hat coefficients ``(..., I, L)`` of the left side minus the right.
    ``d_variational`` replaces the literal ``Theta^K ^ pi_K`` term by the
    variation of ``pi_I ^ Theta^I`` with respect to the hat volumes; the two
    agree wherever ``Theta`` vanishes, in particular on the vacuum.
    """
    st = _ModelState(fields, x, fiber, tag)
    n, tab = st.n, st.tab
    riem, phif = _curvature_frame(st, fields.phi(st.pt))
    h_inv = np.linalg.inv(st.h)
    out = {"a": st.gcurv[..., :4, 4:], "b": st.gcurv[..., 4:, 4:]}

    # (c) from the definition, for I < J
    iu, ju = np.triu_indices(n, 1)
    t2 = tab["t2"][iu, ju]  # (P, C)
    batch = st.frame.anh.shape[:-3]
    dhat = F.frame_ext_d(np.broadcast_to(t2, batch + t2.shape), np.zeros(batch + t2.shape + (n,)),
                         st.frame.anh, n - 2)
    dhat = hat_coefficients(dhat, n)
    w1 = tab["w_1hat"]  # (M, J, K, L)
    # phi^K_I ^ hat_KJ = phi^K_{I M} theta^M ^ hat_KJ
    bshape = phif.shape[:-3]
    # phi^K_{I M} theta^M ^ hat_KJ and phi^K_{J M} theta^M ^ hat_IK
    t_i = (np.swapaxes(phif, -3, -2).reshape(bshape + (n, n * n))
           @ w1.transpose(1, 0, 2, 3).reshape(n * n, n * n)).reshape(bshape + (n, n, n))
    t_j = (np.swapaxes(phif, -3, -2).reshape(bshape + (n, n * n))
           @ w1.transpose(2, 0, 1, 3).reshape(n * n, n * n)).reshape(bshape + (n, n, n))
    path1 = dhat - t_i[..., iu, ju, :] - np.swapaxes(t_j, -2, -3)[..., iu, ju, :]
    tors = st.frame.anh + np.swapaxes(phif, -1, -2) - phif  # d^phi theta^K components (K, M, P)
    w23 = tab["w_2hat3"].transpose(4, 0, 1, 2, 3, 5).reshape(n ** 3, n ** 3)
    path2 = 0.5 * (tors.reshape(bshape + (n ** 3,)) @ w23).reshape(bshape + (n, n, n))[..., iu, ju, :]
    gap = float(np.abs(path1 - path2).max()) if path1.size else 0.0
    if check and gap > tol:
        raise ConsistencyError(f"the two evaluations of (c) disagree by {gap:.3e}")
    out["c"] = path1
    out["c_identity_gap"] = np.array(gap)

    # (d)
    wh = np.einsum("AK,IJKLMP->JALMIP", h_inv, tab["w_hat3"]).reshape(n ** 4, n * n)
    ein_part = 0.25 * (riem.reshape(bshape + (n ** 4,)) @ wh).reshape(bshape + (n, n))
    d = st.d_momenta() + ein_part
    d[..., 4:, :] -= np.einsum("jki,...jkL->...iL", st.c, st.wedge_theta_pi())
    literal = np.einsum("...KIJ,...KlJ->...Il", st.gcurv, st.pi[..., :, 4:, :])
    d[..., :, 4:] -= literal
    d -= fields.lambda0 * np.eye(n)
    out["d"] = d
    # the variation of pi_I ^ Theta^I through the hat volumes, in place of the literal term
    pair = np.swapaxes(st.pi, -3, -1).reshape(bshape + (n * n, n)) @ st.gcurv.reshape(bshape + (n, n * n))
    x_term = 0.25 * (pair.reshape(bshape + (n ** 4,)) @ tab["w_top3_flat"]).reshape(bshape + (n, n))
    dv = d + x_term
    dv[..., :, 4:] += literal
    out["d_variational"] = dv
    return out


def eym_coframe_pairing(fields: EYMFields, var: EYMFields, quad: Quadrature, key: str = "d_variational") -> float:
    """Quadrature of ``delta theta^I_L R_I^L e`` for the (d) residual ``R`` named by ``key``.

    Only the coframe part of ``var`` is used.  With ``key="d_variational"`` this
    equals the Gateaux derivative of the action along that coframe variation.
    """
    def density(x, fiber):
        res = el_residual_eym(fields, x, fiber, quad.tag, check=False)[key]
        st = _ModelState(fields, x, fiber, quad.tag)
        dth = st.frame.to_frame_1(np.asarray(J.value(var.theta(st.pt))))
        return np.einsum("...IL,...IL->...", dth, res) * st.frame.det
    return integrate(density, quad)


def build_eym_vacuum_solution(alg: LieAlgebraData | None = None) -> EYMFields:
    """Flat base times the group with its bi-invariant metric and no potential.

    ``phi^i_j = -1/2 c^i_jk lambda^k`` is the Levi-Civita connection of the fiber,
    the momenta are ``pi_l^{0m} = -x^0 delta_lm / 2`` and ``Lambda0 = 3/4`` for
    su(2).  In general ``Lambda0 = -<B, k>/4`` so that the effective constant
    vanishes, and the momentum slope is ``-<B, k>/(2 r)``; both are zero for u(1).
    """
    alg = alg or lie.su2()
    r = alg.dim
    n = 4 + r
    bk = lie.killing_contraction(alg)
    slope = -bk / (2 * r)

    def theta(pt):
        out = J.zeros(pt.lam.shape[:-2] + (n, n), pt.lam)
        out.c[..., :4, :4, 0] = np.eye(4)
        out.c[..., 4:, 4:, :] = pt.lam.c
        return out

    def phi(pt):
        out = J.zeros(pt.lam.shape[:-2] + (n, n, n), pt.lam)
        out.c[..., 4:, 4:, 4:, :] = -0.5 * np.einsum("ijk,...kmc->...ijmc", alg.c, pt.lam.c)
        return out

    def momenta(pt):
        x0 = pt.x[..., 0]
        out = J.zeros(x0.shape + (n, n, n), x0)
        for l in range(r):
            out.c[..., 4 + l, 0, 4 + l, :] = -slope * x0.c
            out.c[..., 4 + l, 4 + l, 0, :] = slope * x0.c
        return out

    return EYMFields(alg, theta, phi, momenta, 0.0 - 0.25 * bk)


# ---------------------------------------------------------------------------
# random variations on R^4 x G

def random_bundle_field(rng: np.random.Generator, shape: tuple, tag: str, amplitude: float = 0.1,
                        degree: int = 2, compact: bool = True, project: Callable = None) -> Callable:
    """Random smooth scalar array on the bundle, ``pt -> (..., *shape)`` jets.

    Polynomials in ``x`` times ``(1, q)`` on SU(2) or ``(1, cos s, sin s)`` on U(1),
    multiplied by the box bump when ``compact``.  ``project`` is a linear map
    applied to the coefficient array (leading axes ``shape``).
    """
    nmono = math.comb(4 + degree, degree)
    nfib = 5 if tag == "su2" else 3
    coef = amplitude * rng.uniform(-1.0, 1.0, size=tuple(shape) + (nmono * nfib,))
    if project is not None:
        coef = np.moveaxis(project(np.moveaxis(coef, -1, 0)), 0, -1)
    coef = coef.reshape(-1, nmono * nfib)

    def field(pt: BundlePoint):
        like = pt.x[..., 0]
        mon = J.stack(F._monomials([pt.x[..., m] for m in range(4)], degree, like), axis=-1)
        if tag == "su2":
            fib = J.stack([J.ones_like(like)] + list(pt.q), axis=-1)
        else:
            fib = J.stack([J.ones_like(like), pt.s.cos(), pt.s.sin()], axis=-1)
        basis = (mon[..., :, None] * fib[..., None, :]).reshape(like.shape + (-1,))
        if compact:
            basis = basis * bump(pt.x)[..., None]
        c = np.swapaxes(np.swapaxes(basis.c, -1, -2) @ coef.T, -1, -2)  # (..., A, monomials)
        return basis._wrap(c.reshape(like.shape + tuple(shape) + c.shape[-1:]))

    return field


def kk_rows(pt: BundlePoint, potential=None):
    """Vertical coframe rows ``(S^-1 A, lambda)``; pure gauge when ``potential`` is None."""
    out = J.zeros(pt.lam.shape[:-2] + (pt.n - 4, pt.n), pt.lam)
    out.c[..., :, 4:, :] = pt.lam.c
    if potential is not None:
        a = J.einsum("...ji,...jm->...im", pt.S, potential(pt.x))
        out.c[..., :, :4, :] = a.truncate(out.order).c
    return out


def reference_coframe(pt: BundlePoint):
    """Global coframe ``(dx^a, lambda^k)`` as coordinate rows."""
    n = pt.n
    out = J.zeros(pt.lam.shape[:-2] + (n, n), pt.lam)
    out.c[..., :4, :4, 0] = np.eye(4)
    out.c[..., 4:, 4:, :] = pt.lam.c
    return out


def random_eym_variation(rng: np.random.Generator, alg: LieAlgebraData | None = None, amplitude: float = 0.1,
                         compact: bool = True, degree: int = 1) -> EYMFields:
    """Random ``(delta theta, delta phi, delta pi)`` built on the global coframe.

    ``delta phi`` is h-antisymmetric, ``delta pi`` satisfies the constraint.
    """
    alg = alg or lie.su2()
    n = 4 + alg.dim
    h = _metric(alg)
    tag = "su2" if alg.dim == 3 else "u1"
    h_inv = np.linalg.inv(h)

    def so_proj(w):  # w^I_{J L} -> h-antisymmetric in (I, J)
        low = np.einsum("IK,...KJL->...IJL", h, w)
        return np.einsum("IK,...KJL->...IJL", h_inv, low - np.swapaxes(low, -2, -3))

    def mom_proj(w):
        return constrained(w - np.swapaxes(w, -1, -2))

    v = random_bundle_field(rng, (n, n), tag, amplitude, degree, compact)
    w = random_bundle_field(rng, (n, n, n), tag, amplitude, degree, compact, so_proj)
    p = random_bundle_field(rng, (n, n, n), tag, amplitude, degree, compact, mom_proj)

    def theta(pt):
        return J.matmul(v(pt), reference_coframe(pt))

    def phi(pt):
        ref = reference_coframe(pt)
        return J.matmul(w(pt), ref[..., None, :, :])

    return EYMFields(alg, theta, phi, p, 0.0)


# ---------------------------------------------------------------------------
# dressed divergence identity

def identity_check_15abis(red: ReducedData, p_field: Callable, x, fiber, tag: str = "su2") -> float:
    """Largest deviation between ``d^A p_i`` and its closed form.

    ``p_field(pt)`` returns dressed momenta ``p_i^{JK}`` (antisymmetric, jets of
    shape ``(..., r, n, n)``) in the frame ``(e^a, A^i + rho^i)``.  The direct side
    runs the exterior derivative; the closed side assembles
    ``(D_b p^ab + d_k p^ak) e3_a ^ bar_r + (D_b p^jb + d_k p^jk + F p / 2 + c p / 2) e4 ^ bar_j``.
    """
    alg = red.alg
    r, c = alg.dim, alg.c
    pt = BundlePoint(tag, x, fiber, 1)
    n = pt.n
    _, dressed = kk_coframe(red, pt.chart)
    st = FrameState(dressed(pt.z), _metric(alg))
    tab = _tables(n)
    p = _jet(p_field(pt), pt.x[..., 0])
    pv = np.asarray(J.value(p))

    direct = hat_coefficients(st.form_d(_momentum_forms(p, n), n - 2), n)
    a_coord = np.asarray(J.value(red.potential(pt.x)))  # (..., k, mu)
    a_frame = np.einsum("...km,...mM->...kM", a_coord, st.einv[..., :4, :])
    wedge = 0.5 * np.einsum("...kM,...jJK,MJKL->...jkL", a_frame, pv, tab["w_1hat"])
    direct = direct - np.einsum("jki,...jkL->...iL", c, wedge)

    vals = red.at(np.asarray(x, dtype=float), order=2)
    gamma = np.asarray(J.value(vals.gamma))  # (..., a, c, b)
    a_val = np.asarray(J.value(vals.A))  # (..., k, b)
    f_val = np.asarray(J.value(vals.F))  # (..., j, a, b)
    dp = st.fderiv(p)  # (..., i, J, K, M)
    hb, vt = slice(0, 4), slice(4, n)
    pab, pak, pjb, pjk = pv[..., hb, hb], pv[..., hb, vt], pv[..., vt, hb], pv[..., vt, vt]

    def horiz(block, upper):
        """D_b of p_i^{X b} for an upper index block X (horizontal or vertical)."""
        out = np.einsum("...iXbb->...iX", dp[..., upper, hb, :][..., hb])
        out = out - np.einsum("lki,...kb,...lXb->...iX", c, a_val, block)
        out = out + np.einsum("...bcb,...iXc->...iX", gamma, block)
        return out

    xa = horiz(pab, hb) + np.einsum("...iakk->...ia", dp[..., hb, vt, :][..., vt])
    xa = xa + np.einsum("...acb,...icb->...ia", gamma, pab)
    yj = horiz(pjb, vt) + np.einsum("...ijkk->...ij", dp[..., vt, vt, :][..., vt])
    yj = yj + np.einsum("jkl,...kb,...ilb->...ij", c, a_val, pjb)
    yj = yj + 0.5 * np.einsum("...jab,...iab->...ij", f_val, pab) + 0.5 * np.einsum("jkl,...ikl->...ij", c, pjk)
    closed = np.concatenate([xa, yj], axis=-1)
    return float(np.abs(direct - closed).max())


# ---------------------------------------------------------------------------
# gauge transformations

@dataclass(frozen=True)
class Transform:
    """A field transformation with an optional side condition.

    ``apply(fields) -> fields``; ``side(fields, x, fiber) -> array`` must vanish
    at every quadrature node for the transformation to belong to the catalog.
    ``asserted`` is False for transformations whose delta is only reported.
    """

    name: str
    models: tuple
    apply: Callable
    side: Callable = None
    asserted: bool = True


_ACTIONS = {"maxwell": lambda f, q: action_maxwell(f, q, check=False), "ym": action_ym, "eym": action_eym}


def gauge_invariance_delta(model: str, fields, transform: Transform, quad: Quadrature, check: bool = True,
                           side_tol: float = 1e-9) -> float:
    """``|A[T f] - A[f]|`` on the quadrature.

    Raises PreconditionError when ``check`` is set and the side condition of
    the transformation fails by more than ``side_tol``.
    """
    if model not in transform.models:
        raise ValueError(f"transformation {transform.name!r} does not act on the {model} model")
    if check and transform.side is not None:
        worst = max_over(lambda x, f: {"side": transform.side(fields, x, f)}, quad)["side"]
        if worst > side_tol:
            raise PreconditionError(f"{transform.name}: side condition violated by {worst:.3e}")
    action = _ACTIONS[model]
    return abs(action(transform.apply(fields), quad) - action(fields, quad))


def fibered_diffeo(amplitude: float = 0.5) -> Transform:
    """Pullback by ``(x, s) -> (x, s + amplitude sin x^0)``."""
    def T(z):
        shift = J.zeros(z.shape[:-1] + (5,), z[..., 0])
        shift.c[..., 4, :] = (z[..., 0].sin() * amplitude).c
        return z + shift

    def apply(f: MaxwellFields) -> MaxwellFields:
        def theta(z):
            return F.pullback(T, lambda w: Form(1, 5, f.theta(w)), z).coeffs

        return MaxwellFields(theta, lambda z: F.pullback(T, f.pi, z), f.vierbein, f.extra_order + 1)

    return Transform("fibered_diffeo", ("maxwell",), apply)


def dv_shift(potential: Callable) -> Transform:
    """``theta -> theta + dV`` for a base function ``V(x)`` (jets in, jets out)."""
    def apply(f: MaxwellFields) -> MaxwellFields:
        def theta(z):
            return _add_jets(f.theta(z), potential(z[..., :4]).grad(), 1.0)  # V(x) has no s-derivative

        return replace(f, theta=theta, extra_order=f.extra_order + 1)

    return Transform("dv_shift", ("maxwell",), apply)


def _horizontal_part(f: MaxwellFields, psi: Form, x, s) -> np.ndarray:
    z = _maxwell_points(f, x, s)
    fr = F.Frame(np.asarray(J.value(f.coframe(z))))
    pab, _ = maxwell_decompose(fr.to_frame(psi).coeffs)
    return pab


def psi_shift(psi: Callable, name: str = "psi_shift", extra_order: int = 1) -> Transform:
    """``pi -> pi + psi`` for a 3-form field ``psi(z)``.

    Side condition: ``d psi = 0`` and no ``e2 ^ theta`` component, which is
    what keeps the norm term unchanged.  ``extra_order`` counts derivatives
    taken inside ``psi`` (one for ``psi = d beta``).
    """
    def apply(f: MaxwellFields) -> MaxwellFields:
        return replace(f, pi=lambda z: _add_forms(f.pi(z), psi(z), 1.0),
                       extra_order=max(f.extra_order, extra_order))

    def side(f, x, s):
        z = _maxwell_points(replace(f, extra_order=max(f.extra_order, extra_order)), x, s)
        w = psi(z)
        closed = F.ext_d(w).values().coeffs
        return np.concatenate([closed.reshape(len(x), -1),
                               _horizontal_part(f, w.values(), x, s).reshape(len(x), -1)], axis=-1)

    return Transform(name, ("maxwell",), apply, side)


def exact_psi(beta: Callable) -> Callable:
    """``psi = d beta`` for a base 2-form field ``beta(z)`` (coordinate Form on 5 dims)."""
    return lambda z: F.ext_d(beta(z))


def chi_shift(s_field: Callable, alg: LieAlgebraData) -> Transform:
    """``pi_i -> pi_i + e4 ^ s_il theta^l`` with ``s_field(x) -> (..., r, r)`` jets."""
    r = alg.dim
    n = 4 + r
    tab = _tables(n)
    idx = F.combo_index(n, n - 2)
    basis = np.zeros((r, len(idx)))
    for l in range(r):
        basis[l, idx[(0, 1, 2, 3, 4 + l)]] = 1.0
    # pi^{JK} components of e4 ^ theta^l
    comps = np.einsum("JKc,lc->lJK", tab["t2"], basis)

    def shift(pt):
        s = s_field(pt.x)
        return J.einsum("...il,lJK->...iJK", s, comps)

    def apply(f: YMFields) -> YMFields:
        return replace(f, momenta=lambda pt: _jet(f.momenta(pt), pt.x[..., 0]) + shift(pt))

    def side(f, x, fiber):
        st = _ModelState(f, x, fiber, "su2" if r == 3 else "u1")
        chi = _momentum_forms(shift(st.pt), n)
        d = st.frame.form_d(chi, n - 2)
        chiv = np.asarray(J.value(chi))
        theta_k = np.eye(n)[4:]
        wedge = F.frame_wedge(theta_k[None, :, None, :], 1, chiv[..., None, :, :], n - 2, n)  # (..., k, j, C)
        dchi = d - np.einsum("jki,...kjc->...ic", alg.c, wedge)
        return sum(F.frame_wedge(theta_k[i], 1, dchi[..., i, :], n - 1, n)[..., 0] for i in range(r))

    return Transform("chi_shift", ("ym",), apply, side)


def adjoint_constant(g) -> Transform:
    """Constant dressing by ``Ad_g``: ``theta -> S theta``, ``phi -> S phi S^-1``, ``pi -> Ad*_g pi``."""
    def matrices(alg):
        S = lie.adjoint_matrix(g, alg)
        S7 = np.eye(4 + alg.dim)
        S7[4:, 4:] = S
        return S7, np.linalg.inv(S7)

    def apply(f):
        S7, S7inv = matrices(f.alg)
        if isinstance(f, EYMFields):
            def theta(pt):
                return J.einsum("IJ,...Jm->...Im", S7, f.coframe(pt))

            def phi(pt):
                return J.einsum("IJ,...JKm,KL->...ILm", S7, _jet(f.phi(pt), pt.x[..., 0]), S7inv)

            def momenta(pt):
                return J.einsum("LI,JM,KP,...LMP->...IJK", S7inv, S7, S7, _jet(f.momenta(pt), pt.x[..., 0]))

            return replace(f, theta=theta, phi=phi, momenta=momenta)
        S, Sinv = S7[4:, 4:], S7inv[4:, 4:]

        def theta_ym(pt):
            return J.einsum("ij,...jm->...im", S, _jet(f.theta(pt), pt.x[..., 0]))

        def momenta_ym(pt):
            return J.einsum("li,JM,KP,...lMP->...iJK", Sinv, S7, S7, _jet(f.momenta(pt), pt.x[..., 0]))

        return replace(f, theta=theta_ym, momenta=momenta_ym)

    return Transform("adjoint_constant", ("ym", "eym"), apply)


def adjoint_local(angle: Callable, axis: int = 2) -> Transform:
    """Position dependent dressing by ``g(x) = exp(angle(x) t_axis)`` (su2; reported only).

    ``theta -> S theta - dg g^-1`` and ``phi -> S phi S^-1`` without an
    inhomogeneous connection term.
    """
    def apply(f: EYMFields) -> EYMFields:
        alg = f.alg
        ad = alg.c[:, axis, :]

        def S_of(x):
            a = angle(x)
            eye = J.constant(np.broadcast_to(np.eye(3), a.shape + (3, 3)).copy(), a)
            return eye + J.einsum("...,ij->...ij", a.sin(), ad) + J.einsum("...,ij->...ij", 1 - a.cos(), ad @ ad)

        def block(S):
            out = J.constant(np.broadcast_to(np.eye(7), S.shape[:-2] + (7, 7)).copy(), S)
            out.c[..., 4:, 4:, :] = S.c
            return out

        def theta(pt):
            S7 = block(S_of(pt.x))
            th = J.matmul(S7, f.coframe(pt))
            da = angle(pt.x).grad()[..., :4]
            order = min(th.order, da.order)
            inh = J.zeros(th.shape, th.truncate(order))
            inh.c[..., 4 + axis, :4, :] = da.truncate(order).c
            return th.truncate(order) - inh

        def phi(pt):
            S7 = block(S_of(pt.x))
            S7inv = S7.swapaxes(-1, -2)
            ph = _jet(f.phi(pt), pt.x[..., 0])
            out = J.einsum("...IJ,...JKm->...IKm", S7, ph)
            return J.einsum("...IJm,...JK->...IKm", out, S7inv)

        def momenta(pt):
            S7 = block(S_of(pt.x))
            S7inv = S7.swapaxes(-1, -2)
            pi = _jet(f.momenta(pt), pt.x[..., 0])
            pi = J.einsum("...LI,...LMP->...IMP", S7inv, pi)
            pi = J.einsum("...JM,...IMP->...IJP", S7, pi)
            return J.einsum("...KP,...IJP->...IJK", S7, pi)

        return replace(f, theta=theta, phi=phi, momenta=momenta, extra_order=f.extra_order + 1)

    return Transform("adjoint_local", ("eym",), apply, asserted=False)


# ---------------------------------------------------------------------------
# cancellation mechanism and projected equations

@dataclass(frozen=True)
class FiberAverage:
    """Fiber average of an integrand with its statistical error (0 for exact rules)."""

    mean: np.ndarray
    stderr: np.ndarray
    samples: int
    method: str

    def within(self, k: float = 3.0, floor: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.mean) <= k * self.stderr + floor))


def _circle_divergence(p_field: Callable, x, s: np.ndarray) -> np.ndarray:
    pts = np.concatenate([np.broadcast_to(np.asarray(x, float), (len(s), 4)), s[:, None]], axis=-1)
    z = J.variables(pts, 1)
    return np.asarray(J.value(_jet(p_field(z), z[..., 0]).grad()[..., 4]))


def cancellation_average(p_field: Callable, x, tag: str = "u1", samples: int = 16, period: float = 2 * np.pi,
                         rng: np.random.Generator | None = None, method: str = "mc",
                         red: ReducedData | None = None, periodic_tol: float = 1e-9) -> FiberAverage:
    """Fiber average of the vertical divergence of ``p`` at a base point.

    On the circle ``p_field(z)`` returns ``p^a`` and the integrand is ``d_s p^a``,
    averaged with the trapezoid rule on ``samples`` nodes; the fiber must close,
    which is checked by comparing ``p`` at ``s`` and ``s + period``.  On SU(2)
    ``p_field(pt)`` returns ``p_i^{ak}`` as ``(..., r, 4, r)`` and the integrand is
    ``d_k p_i^{ak}`` in the dressed frame of ``red`` (flat, A = 0 by default);
    ``method`` is ``"mc"`` (Haar samples, standard error reported) or
    ``"hopf"`` (deterministic rule with ``samples`` Gauss nodes in ``u``).
    """
    x = np.asarray(x, dtype=float)
    if tag == "u1":
        s, w = trapezoid(samples, period)
        probe = np.linspace(0.0, period, 5)[:-1] + 0.37
        z0 = J.variables(np.concatenate([np.broadcast_to(x, (len(probe), 4)), probe[:, None]], -1), 0)
        z1 = J.variables(np.concatenate([np.broadcast_to(x, (len(probe), 4)), probe[:, None] + period], -1), 0)
        gap = np.abs(np.asarray(J.value(p_field(z1))) - np.asarray(J.value(p_field(z0)))).max()
        if gap > periodic_tol:
            raise PreconditionError(f"integrand is not periodic on the fiber (gap {gap:.3e})")
        vals = _circle_divergence(p_field, x, s)
        mean = np.tensordot(w, vals, axes=(0, 0)) / period
        return FiberAverage(mean, np.zeros_like(mean), samples, "trapezoid")
    if tag != "su2":
        raise PreconditionError(f"no closed fiber rule for {tag!r}")
    if method == "hopf":
        q, w = hopf_rule(samples, 2 * samples)
    else:
        q = lie.random_su2(rng if rng is not None else np.random.default_rng(0), samples)
        w = np.full(samples, 1.0 / samples)
    red = red or flat_reduced_data(lie.su2())
    pt = BundlePoint("su2", np.broadcast_to(x, (len(q), 4)), q, 1)
    _, dressed = kk_coframe(red, pt.chart)
    st = FrameState(dressed(pt.z), _metric(red.alg))
    dp = st.fderiv(_jet(p_field(pt), pt.x[..., 0]))  # (N, i, a, k, M)
    r = red.alg.dim
    vals = np.einsum("...iakk->...ia", dp[..., 4:4 + r])
    mean = np.tensordot(w, vals, axes=(0, 0))
    if method == "hopf":
        return FiberAverage(mean, np.zeros_like(mean), len(q), "hopf")
    std = vals.std(axis=0, ddof=1)
    return FiberAverage(mean, std / math.sqrt(samples), samples, "haar-mc")


def projected_equations_check(red: ReducedData, lambda0: float, points, fiber=None) -> dict:
    """Residuals of the projected Einstein and Yang-Mills equations at base points.

    ``einstein``: ``Ein(g)_a^b + Lambda delta - 1/2 (F^i_ac F_i^bc - 1/2 |F|^2 delta)``
    with ``Lambda = Lambda0 + <B, k> / 4``; ``yang_mills``: ``D_b F_i^ab``;
    ``chain``: ``Ein(h)_i^a - 1/2 D_b F_i^ab`` with ``Ein(h)`` from the full
    metric on base x group at the fiber points ``fiber`` (identity by default).
    """
    alg = red.alg
    points = np.asarray(points, dtype=float)
    vals = red.at(points, order=2)
    ein_g = vals.base.einstein_values(check=False)
    lam = lie.lambda_effective(lambda0, alg)
    fv = np.asarray(J.value(vals.F))
    fu = np.asarray(J.value(vals.F_up()))
    norm = 0.5 * np.einsum("...iab,...iab->...", fu, fv)
    stress = np.einsum("...iac,...ibc->...ab", fv, fu) - 0.5 * norm[..., None, None] * np.eye(4)
    einstein = ein_g + lam * np.eye(4) - 0.5 * stress
    blocks = einstein_reduction(vals, ein_g)
    if alg.dim == 3:
        q = np.tile([1.0, 0.0, 0.0, 0.0], (len(points), 1)) if fiber is None else np.asarray(fiber, float)
        chart = GroupChart("su2", q0=q)
        y = np.zeros((len(points), 3))
    else:
        chart = GroupChart("u1")
        y = np.zeros((len(points), 1)) if fiber is None else np.asarray(fiber, float).reshape(-1, 1)
    geo = full_chart_geometry(red, chart, np.concatenate([points, y], axis=-1), order=2)
    ein_h = geo.einstein_values(check=True)
    chain = ein_h[..., 4:, :4] - 0.5 * blocks["div_F"]
    return {"einstein": einstein, "yang_mills": blocks["div_F"], "chain": chain}
