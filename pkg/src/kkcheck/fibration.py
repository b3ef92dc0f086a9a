"""Vertical leaves, their closure, fiber fluxes and holonomy.

Leaves are integrated with an embedded Runge-Kutta 5(4) scheme and dense
output.  A leaf either lives in a chart (periodic coordinates wrapped) or,
for SU(2) bundles, in base coordinates times unit quaternions with the group
chart recentred at the current point on every right-hand-side evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from . import jets as J
from . import forms as F
from . import lie
from .forms import CoFrameField, Chart, DegeneracyError
from .geometry import GroupChart, ReducedData, kk_coframe


class StiffnessError(RuntimeError):
    pass


class PreconditionError(ValueError):
    pass


def frame_values(theta: CoFrameField, points) -> np.ndarray:
    """Coframe matrix ``E[..., I, mu]`` at points (values only)."""
    z = J.variables(np.atleast_2d(points), 0)
    return np.asarray(theta(z).value)


@dataclass(frozen=True)
class VerticalDistribution:
    """Dual-frame vertical vectors ``V_i`` of a coframe."""

    theta: CoFrameField

    @property
    def rank(self) -> int:
        return self.theta.dim - self.theta.split

    def vectors(self, points) -> np.ndarray:
        """Coordinate components with shape ``(..., r, n)``."""
        e = frame_values(self.theta, points)
        cond = np.linalg.cond(e)
        if not np.all(np.isfinite(cond)) or np.any(cond > 1e12):
            raise DegeneracyError("singular coframe on the leaf")
        einv = np.linalg.inv(e)
        return np.swapaxes(einv[..., :, self.theta.split:], -1, -2)

    def duality_residual(self, points) -> float:
        e = frame_values(self.theta, points)
        v = self.vectors(points)
        pair = np.einsum("...Im,...im->...Ii", e, v)
        target = np.zeros(pair.shape[-2:])
        target[self.theta.split:, :] = np.eye(self.rank)
        return float(np.abs(pair - target).max())


# ---------------------------------------------------------------------------
# leaf systems

class ChartLeafSystem:
    """dz/dt = xi^i V_i(z) on a chart with periodic identifications."""

    def __init__(self, theta: CoFrameField, chart: Chart, xi):
        self.dist = VerticalDistribution(theta)
        self.chart = chart
        self.xi = np.asarray(xi, dtype=float)
        if self.xi.shape != (self.dist.rank,):
            raise ValueError("xi must have one entry per vertical direction")

    def rhs(self, t, z):
        v = self.dist.vectors(z[None, :])[0]
        return self.xi @ v

    def normalize(self, z):
        return self.chart.wrap(z)

    def max_step(self, start):
        per = [p for p in self.chart.periods if p is not None]
        scale = min(per) if per else max(u - l for l, u in zip(self.chart.lower, self.chart.upper))
        return scale / (8.0 * max(np.linalg.norm(self.rhs(0.0, start)), 1e-300))

    def difference(self, a, b):
        return self.chart.difference(a, b)


class BundleFrame:
    """KK coframe on R^4 x SU(2) evaluated in group charts centred at any point."""

    def __init__(self, red: ReducedData, dressed: bool = False):
        if red.alg.dim != 3:
            raise ValueError("bundle frames are implemented for su2")
        self.red = red
        self.dressed = dressed

    def matrix(self, x, q) -> np.ndarray:
        chart = GroupChart("su2", tuple(float(v) for v in q))
        raw, dressed = kk_coframe(self.red, chart)
        pt = np.concatenate([np.asarray(x, dtype=float), np.zeros(3)])
        return frame_values(dressed if self.dressed else raw, pt[None, :])[0]


class BundleLeafSystem:
    """Leaf equation on base x unit quaternions: dx/dt, dq/dt = q (1/2 ydot^k e_k)."""

    def __init__(self, bundle: BundleFrame, xi):
        self.bundle = bundle
        self.xi = np.asarray(xi, dtype=float)

    def rhs(self, t, state):
        x, q = state[:4], state[4:]
        q = q / np.linalg.norm(q)
        e = self.bundle.matrix(x, q)
        cond = np.linalg.cond(e)
        if not np.isfinite(cond) or cond > 1e12:
            raise DegeneracyError("singular coframe on the leaf")
        einv = np.linalg.inv(e)
        vel = einv[:, 4:] @ self.xi
        half = np.concatenate([[0.0], 0.5 * vel[4:]])
        return np.concatenate([vel[:4], lie.quat_mul(q, half)])

    def normalize(self, state):
        out = np.array(state, dtype=float)
        out[..., 4:] /= np.linalg.norm(out[..., 4:], axis=-1, keepdims=True)
        return out

    def difference(self, a, b):
        return np.asarray(a) - np.asarray(b)

    def max_step(self, start):
        return 0.5 / max(np.linalg.norm(self.rhs(0.0, start)), 1e-300)


@dataclass
class LeafTrajectory:
    times: np.ndarray
    points: np.ndarray
    steps: int
    nfev: int
    max_error_estimate: float
    dense: Callable = field(repr=False, default=None)
    system: object = field(repr=False, default=None)

    def at(self, t):
        return self.system.normalize(self.dense(t).T)


def _solve(system, start, horizon, tol, events=None, t_eval=None):
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    start = np.asarray(start, dtype=float)
    max_step = system.max_step(start) if hasattr(system, "max_step") else np.inf
    sol = solve_ivp(system.rhs, (0.0, float(horizon)), start, method="RK45", rtol=tol, atol=tol,
                    dense_output=True, events=events, t_eval=t_eval, max_step=max_step)
    if sol.status == -1:
        raise StiffnessError(sol.message)
    return sol


def integrate_leaf(system, start, horizon: float, tol: float = 1e-10, samples: int = 101) -> LeafTrajectory:
    """Integrate a leaf from ``start`` for affine time ``horizon``."""
    t_eval = np.linspace(0.0, horizon, samples)
    sol = _solve(system, start, horizon, tol, t_eval=t_eval)
    pts = system.normalize(sol.y.T)
    # step-to-step consistency of the dense interpolant against the ODE
    mids = 0.5 * (sol.t[1:] + sol.t[:-1]) if len(sol.t) > 1 else sol.t
    err = 0.0
    for t in mids[:: max(1, len(mids) // 16)]:
        h = 1e-4 * max(1.0, horizon) / max(1, samples)
        fd = (sol.sol(t + h) - sol.sol(t - h)) / (2 * h)
        err = max(err, float(np.abs(fd - system.rhs(t, sol.sol(t))).max()))
    return LeafTrajectory(sol.t, pts, len(sol.t), sol.nfev, err, sol.sol, system)


def chart_leaf(theta: CoFrameField, chart: Chart, start, direction=0, horizon=1.0, tol=1e-10, samples=101):
    """integrate_leaf for a chart coframe; ``direction`` is a vertical index or a vector xi."""
    r = theta.dim - theta.split
    xi = np.eye(r)[direction] if np.isscalar(direction) else np.asarray(direction, dtype=float)
    return integrate_leaf(ChartLeafSystem(theta, chart, xi), start, horizon, tol, samples)


@dataclass
class ClosureResult:
    status: str
    period: float | None
    return_distance: float | None
    crossings: int = 0

    @property
    def closed(self) -> bool:
        return self.status == "closed"


def detect_closure(system, start, horizon: float = 1e3, eps: float = 1e-7, tol: float = 1e-11,
                   min_time: float = 1e-6) -> ClosureResult:
    """Smallest return time to ``start`` through the transverse section at ``start``."""
    start = np.asarray(start, dtype=float)
    v0 = np.asarray(system.rhs(0.0, start), dtype=float)
    if np.linalg.norm(v0) == 0:
        raise DegeneracyError("zero vertical velocity at the start point")
    normal = v0 / np.linalg.norm(v0)

    def section(t, z):
        return float(system.difference(z, start) @ normal)

    section.direction = 1.0
    max_step = system.max_step(start) if hasattr(system, "max_step") else horizon / 64
    chunk = min(horizon, 64 * max_step)
    t0, z0, count = 0.0, start, 0
    while t0 < horizon:
        t1 = min(horizon, t0 + chunk)
        sol = solve_ivp(system.rhs, (t0, t1), z0, method="RK45", rtol=tol, atol=tol, dense_output=True,
                        events=[section], max_step=max_step)
        if sol.status == -1:
            raise StiffnessError(sol.message)
        for t in sol.t_events[0]:
            if t < min_time:
                continue
            count += 1
            z = system.normalize(sol.sol(t))
            d = float(np.linalg.norm(system.difference(z, start)))
            if d <= eps:
                return ClosureResult("closed", float(t), d, count)
        t0, z0 = t1, sol.y[:, -1]
    return ClosureResult("not-closed-within-horizon", None, None, count)


# ---------------------------------------------------------------------------
# flux and fiber coordinate

def fiber_flux(theta: CoFrameField, chart: Chart, x, n: int = 64, vertical: int = None) -> float:
    """Trapezoid integral of the vertical form over the coordinate circle through ``(x, 0)``.

    The leaf must be the coordinate circle of the (single) periodic direction;
    this is checked by requiring the vertical vector to be tangent to it.
    """
    split = theta.split
    vertical = split if vertical is None else vertical
    per = chart.periods[vertical]
    if per is None:
        raise PreconditionError("the fiber direction is not periodic")
    s = chart.lower[vertical] + per * np.arange(n) / n
    pts = np.tile(np.concatenate([np.asarray(x, dtype=float), np.zeros(theta.dim - split)]), (n, 1))
    pts[:, vertical] = s
    v = VerticalDistribution(theta).vectors(pts)[:, vertical - split, :]
    tangent = np.abs(np.delete(v, vertical, axis=-1)).max()
    if tangent > 1e-12 * np.abs(v).max():
        raise PreconditionError("the leaf through x is not the coordinate circle")
    e = frame_values(theta, pts)
    return float(per * np.mean(e[:, vertical, vertical]))


def flux_constancy_scan(theta: CoFrameField, chart: Chart, base_points, n: int = 64) -> float:
    fl = np.array([fiber_flux(theta, chart, x, n) for x in np.atleast_2d(base_points)])
    return float(fl.max() - fl.min())


def _gauss_legendre(a, b, n):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * t + 0.5 * (b + a), 0.5 * (b - a) * w


def fiber_coordinate(theta4: Callable, x, y: float, period: float = None, n: int = 32, y0: float = 0.0):
    """s = integral_0^y theta_4(x, y') dy' (mod period) by Gauss-Legendre.

    ``theta4`` maps coordinate jets ``(..., 4 + 1)`` to the dy-coefficient.
    Also returns the normalized potential ``A_a = theta_a - d_a s`` when
    ``theta4`` is given together with the horizontal coefficients (see
    :func:`normalized_potential`).
    """
    nodes, w = _gauss_legendre(y0, y, n)
    pts = np.column_stack([np.tile(np.asarray(x, dtype=float), (n, 1)), nodes])
    vals = np.asarray(J.value(theta4(J.variables(pts, 0))))
    check = np.column_stack([np.tile(np.asarray(x, dtype=float), (4 * n, 1)),
                             np.linspace(min(y0, y), max(y0, y), 4 * n)])
    chk = np.asarray(J.value(theta4(J.variables(check, 0))))
    if np.any(np.abs(vals) < 1e-12) or np.any(np.sign(chk) != np.sign(chk[0])):
        raise DegeneracyError("theta_4 vanishes on the integration range")
    s = float(w @ vals)
    return s % period if period is not None else s


def normalized_potential(theta_row: Callable, x, y: float, n: int = 32):
    """A_a = theta_a(x, y) - d_a s(x, y) for a row ``theta_row(z) -> (..., 5)``."""
    nodes, w = _gauss_legendre(0.0, y, n)
    pts = np.column_stack([np.tile(np.asarray(x, dtype=float), (n, 1)), nodes])
    row = theta_row(J.variables(pts, 1))
    d4 = row[..., 4].grad()  # d_mu theta_4 at nodes
    ds = np.einsum("n,na->a", w, np.asarray(d4.value)[:, :4])
    here = np.asarray(theta_row(J.variables(np.concatenate([x, [y]])[None, :], 0)).value)[0, :4]
    return here - ds


# ---------------------------------------------------------------------------
# integrability

def frobenius_residual(theta: CoFrameField, c: np.ndarray, points) -> float:
    """max |Theta^i(V_j, V_k)| over vertical indices and points."""
    z = J.variables(np.atleast_2d(points), 1)
    curv = F.g_curvature(theta, c, z)
    v = VerticalDistribution(theta).vectors(np.atleast_2d(points))
    worst = 0.0
    split = theta.split
    for i in range(split, theta.dim):
        form = curv[i].values()
        for j in range(v.shape[-2]):
            for k in range(j + 1, v.shape[-2]):
                val = F.evaluate(form, [v[:, j, :], v[:, k, :]])
                worst = max(worst, float(np.abs(val).max()))
    return worst


def commuting_flows_residual(theta: CoFrameField, xi, points, vertical: int = 0) -> float:
    """|[X(xi), Y]| with X the horizontal lift of xi and Y the vertical frame vector."""
    z = J.variables(np.atleast_2d(points), 1)
    e = theta(z)
    einv = J.inv(e)
    split = theta.split
    x_vec = J.einsum("...ma,a->...m", einv[..., :, :split], np.asarray(xi, dtype=float))
    y_vec = einv[..., :, split + vertical]
    br = F.vector_bracket(x_vec, y_vec)
    return float(np.abs(br.value).max())


# ---------------------------------------------------------------------------
# holonomy

@dataclass(frozen=True)
class GroupPath:
    """Piecewise-constant velocity path: segment k has u^-1 du/dt = xis[k] on [t_k, t_k+1)."""

    xis: tuple
    breaks: tuple

    @classmethod
    def geodesic(cls, xi):
        return cls((tuple(np.asarray(xi, dtype=float)),), (0.0, 1.0))

    @classmethod
    def segments(cls, xis):
        m = len(xis)
        return cls(tuple(tuple(np.asarray(x, dtype=float) * m) for x in xis), tuple(np.linspace(0, 1, m + 1)))

    def endpoint_su2(self) -> np.ndarray:
        q = np.array([1.0, 0.0, 0.0, 0.0])
        for xi, a, b in zip(self.xis, self.breaks[:-1], self.breaks[1:]):
            q = lie.quat_mul(q, lie.quat_exp(np.asarray(xi), b - a))
        return q


def holonomy_map(system_factory: Callable, start, path: GroupPath, tol: float = 1e-11) -> np.ndarray:
    """End point of the leaf path whose Maurer-Cartan velocity follows ``path``.

    ``system_factory(xi)`` returns a leaf system for the constant velocity xi.
    """
    z = np.asarray(start, dtype=float)
    for xi, a, b in zip(path.xis, path.breaks[:-1], path.breaks[1:]):
        if b - a <= 0 or not np.any(xi):
            continue
        system = system_factory(np.asarray(xi))
        sol = _solve(system, z, b - a, tol)
        z = system.normalize(sol.y[:, -1])
    return z


def log_su2(q) -> np.ndarray:
    """xi with quat_exp(xi) = q, using the principal branch."""
    q = np.asarray(q, dtype=float)
    v = q[1:]
    s = np.linalg.norm(v)
    if s < 1e-15:
        return np.zeros(3)
    ang = np.arctan2(s, q[0])
    return 2 * ang * v / s


# ---------------------------------------------------------------------------
# convenient coframes on base x circle

def circle_bundle_frame(row: Callable, dim: int = 5) -> CoFrameField:
    """Coframe (dx^0..dx^3, theta) with ``row(z) -> (..., dim)`` giving theta."""

    def matrix(z):
        r = row(z)
        eye = J.constant(np.broadcast_to(np.eye(dim)[:4], z.shape[:-1] + (4, dim)), z)
        r = J.as_jet(r, z)
        return eye._wrap(np.concatenate([eye.truncate(r.order).c, r.c[..., None, :, :]], axis=-3))

    return CoFrameField(matrix, dim, 4)


def kk_u1_row(potential: Callable, theta4: Callable = None) -> Callable:
    """Row A_mu(x) dx^mu + theta_4 ds; ``theta4`` defaults to 1."""

    def row(z):
        a = potential(z[..., :4])
        t4 = J.ones_like(z[..., 0]) if theta4 is None else J.as_jet(theta4(z), z[..., 0])
        return J.stack([a[..., 0], a[..., 1], a[..., 2], a[..., 3], t4], axis=-1)

    return row


def circle_chart(period: float = 2 * np.pi, half: float = 1.0) -> Chart:
    return Chart((-half,) * 4 + (0.0,), (half,) * 4 + (period,), (None,) * 4 + (period,))
