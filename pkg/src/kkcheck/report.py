"""Named verification suites and machine-readable reports.

Every check returns its largest residual and a dict of extra metrics.  A check
passes when the residual is at most its tolerance.  Random inputs come from a
generator keyed on ``(seed, check name)``, so a check sees the same data
whichever suite runs it and in whatever order.
"""

from __future__ import annotations

import csv
import io
import json
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import __version__
from . import fibration as B
from . import forms as F
from . import geometry as G
from . import jets as J
from . import lie
from . import variational as V

SUITES = ("lie", "forms", "geometry", "fibration", "variational")
GROUPS = ("u1", "su2")
FORMATS = ("json", "csv")
TOLERANCE_TABLE_VERSION = "1"


class UsageError(ValueError):
    pass


class SuiteConsistencyError(RuntimeError):
    """An internal cross-check failed while running ``check``."""

    def __init__(self, check: str, cause: Exception):
        super().__init__(f"{check}: {cause}")
        self.check = check
        self.cause = cause


@dataclass(frozen=True)
class SuiteConfig:
    suite: str
    group: str = "su2"
    seed: int = 0
    tol: float | None = None
    samples: int = 100
    out: str | None = None
    format: str = "json"

    def __post_init__(self):
        if self.suite not in SUITES + ("all",):
            raise UsageError(f"unknown suite {self.suite!r}; choose from {', '.join(SUITES + ('all',))}")
        if self.group not in GROUPS:
            raise UsageError(f"unknown group {self.group!r}; choose from {', '.join(GROUPS)}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise UsageError("seed must be an unsigned 64-bit integer")
        if self.tol is not None and not self.tol > 0:
            raise UsageError("tol must be positive")
        if int(self.samples) < 1:
            raise UsageError("samples must be a positive integer")
        if self.format not in FORMATS:
            raise UsageError(f"unknown format {self.format!r}")


@dataclass
class CheckResult:
    name: str
    max_residual: float
    tolerance: float
    passed: bool
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "max_residual": self.max_residual, "tolerance": self.tolerance,
                "pass": self.passed, "extra": self.extra}


@dataclass
class CheckReport:
    suite: str
    group: str
    seed: int
    checks: list
    wall_ms: int
    version: str = __version__

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"suite": self.suite, "group": self.group, "seed": self.seed,
                "checks": [c.to_dict() for c in self.checks], "wall_ms": self.wall_ms,
                "version": self.version}


@dataclass(frozen=True)
class Check:
    name: str
    suite: str
    tolerance: float
    run: Callable  # (cfg, alg, rng) -> (residual, extra)
    groups: tuple = GROUPS


REGISTRY: list = []


def check(suite: str, tolerance: float, groups: tuple = GROUPS):
    def deco(fn):
        REGISTRY.append(Check(fn.__name__, suite, tolerance, fn, groups))
        return fn
    return deco


def check_rng(seed: int, name: str) -> np.random.Generator:
    """Counter-based generator keyed on the seed and the check name."""
    key = [int(seed) & 0xFFFFFFFF, int(seed) >> 32, zlib.crc32(name.encode())]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def _box(rng, size, lo=-0.5, hi=0.5, dim=4):
    return rng.uniform(lo, hi, (size, dim))


def _few(cfg, cap):
    return max(1, min(int(cfg.samples), cap))


# ---------------------------------------------------------------------------
# lie

@check("lie", 0.0)
def lie_jacobi(cfg, alg, rng):
    vals = {tag: lie.jacobi_residual(lie.catalog(tag)) for tag in sorted(lie.CATALOG)}
    return max(vals.values()), {"algebras": len(vals)}


@check("lie", 0.0)
def lie_unimodularity(cfg, alg, rng):
    return max(lie.unimodularity_residual(lie.catalog(t)) for t in sorted(lie.CATALOG)), {}


@check("lie", 0.0)
def lie_ad_invariance(cfg, alg, rng):
    return max(lie.ad_invariance_residual(lie.catalog(t)) for t in sorted(lie.CATALOG)), {}


_KILLING = {"u1": (np.zeros((1, 1)), 0.0), "su2": (-2.0 * np.eye(3), -3.0)}


@check("lie", 1e-12)
def lie_killing(cfg, alg, rng):
    form, contraction = _KILLING[cfg.group]
    bk = lie.killing_contraction(alg)
    res = max(float(np.abs(lie.killing_form(alg) - form).max()), abs(bk - contraction))
    return res, {"killing_contraction": bk, "lambda_shift": 0.25 * bk}


# ---------------------------------------------------------------------------
# forms

_CHART5 = F.Chart((-1.0,) * 4 + (0.0,), (1.0,) * 4 + (2 * np.pi,), (None,) * 4 + (2 * np.pi,))


def _random_forms(cfg, rng, count):
    spec = F.RandomFieldSpec(degree=2, trig_degree=1, amplitude=1.0)
    for k in range(count):
        deg = k % 4
        z = J.variables(_CHART5.sample(rng, 2, margin=0.1), 3)
        yield z, F.random_form_field(rng, _CHART5, deg, spec)(z), F.random_form_field(rng, _CHART5, 1 + k % 3, spec)(z)


@check("forms", 1e-8)
def forms_dd(cfg, alg, rng):
    res = max(F.ext_d(F.ext_d(a)).max_abs() for _, a, _ in _random_forms(cfg, rng, cfg.samples))
    return res, {"forms": int(cfg.samples)}


@check("forms", 1e-8)
def forms_leibniz(cfg, alg, rng):
    worst = 0.0
    for _, a, b in _random_forms(cfg, rng, cfg.samples):
        lhs = F.ext_d(F.wedge(a, b))
        rhs = F.wedge(F.ext_d(a), b) + F.wedge(a, F.ext_d(b)).scale((-1.0) ** a.degree)
        worst = max(worst, (lhs - rhs).max_abs())
    return worst, {"pairs": int(cfg.samples)}


def random_fibered_map(rng, amplitude=0.1):
    """(x, s) -> (x + P(x), s + Q(x, s)) with small polynomial/trig P and Q."""
    base = F.Chart((-1.0,) * 4, (1.0,) * 4)
    p = F.random_tensor_field(rng, base, (4,), F.RandomFieldSpec(2, 0, amplitude))
    q = F.random_tensor_field(rng, _CHART5, (), F.RandomFieldSpec(1, 1, amplitude))

    def T(z):
        x = z[..., :4] + p(z[..., :4])
        s = z[..., 4] + q(z)
        return J.stack([x[..., i] for i in range(4)] + [s], axis=-1)
    return T


@check("forms", 1e-8)
def forms_pullback_naturality(cfg, alg, rng):
    worst = 0.0
    count = max(1, cfg.samples // 2)
    spec = F.RandomFieldSpec(degree=2, trig_degree=1, amplitude=1.0)
    for k in range(count):
        T = random_fibered_map(rng)
        a = F.random_form_field(rng, _CHART5, k % 4, spec)
        pts = _CHART5.sample(rng, 2, margin=0.2)
        lhs = np.asarray(J.value(F.ext_d(F.pullback(T, a, J.variables(pts, 2))).coeffs))
        # d a at the image points in target coordinates, then pulled back by the Jacobian
        w1 = T(J.variables(pts, 1))
        da = np.asarray(J.value(F.ext_d(a(J.variables(np.asarray(J.value(w1)), 1))).coeffs))
        rhs = np.einsum("...K,...KJ->...J", da, F.compound(np.asarray(J.value(w1.grad())), k % 4 + 1))
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    return worst, {"maps": count}


@check("forms", 1e-10)
def forms_volume_contraction(cfg, alg, rng):
    worst = 0.0
    for _ in range(_few(cfg, 10)):
        e = np.eye(5) + 0.3 * rng.uniform(-1, 1, (5, 5))
        worst = max(worst, F.contraction_identity_residual(F.Frame(e, 4)))
    return worst, {}


# ---------------------------------------------------------------------------
# geometry

def _kk_points(rng, alg, size):
    return np.concatenate([_box(rng, size), rng.uniform(-0.5, 0.5, (size, alg.dim))], axis=1)


def _random_kk(cfg, alg, rng, size):
    red = G.random_reduced_data(rng, alg)
    chart = G.GroupChart(cfg.group)
    pts = _kk_points(rng, alg, size)
    return red, G.full_chart_geometry(red, chart, pts, 2), pts


@check("geometry", 1e-8)
def geometry_connection_closed_form(cfg, alg, rng):
    red, geo, pts = _random_kk(cfg, alg, rng, _few(cfg, 20))
    om = np.asarray(J.value(geo.omega))
    cf = np.asarray(J.value(G.kk_connection_closed_form(red.at(pts[:, :4], 2))))
    lin = G.torsionfree_linear(np.asarray(J.value(geo.theta)), geo.h)
    return float(np.abs(cf - om).max()), {"linear_solve_gap": float(np.abs(lin - om).max())}


@check("geometry", 1e-6)
def geometry_einstein_reduction(cfg, alg, rng):
    red, geo, pts = _random_kk(cfg, alg, rng, _few(cfg, 10))
    full = G.einstein_blocks(geo.einstein_values())
    closed = G.einstein_reduction(red.at(pts[:, :4], 2))
    gaps = {k: float(np.abs(closed[k] - full[k]).max()) for k in ("ab", "ia", "ij")}
    return max(gaps.values()), gaps


@check("geometry", 1e-8)
def geometry_flat_blocks(cfg, alg, rng):
    bk = lie.killing_contraction(alg)
    expect = {"ab": 0.25 * bk * np.eye(4), "ia": np.zeros((alg.dim, 4)),
              "ij": -0.25 * lie.killing_form(alg) @ alg.k_inverse + 0.25 * bk * np.eye(alg.dim)}
    red = G.flat_reduced_data(alg)
    geo = G.full_chart_geometry(red, G.GroupChart(cfg.group), _kk_points(rng, alg, 3), 2)
    blocks = G.einstein_blocks(geo.einstein_values())
    gaps = {k: float(np.abs(blocks[k] - expect[k]).max()) for k in expect}
    return max(gaps.values()), {"ab": 0.25 * bk, "ij": float(expect["ij"][0, 0])}


@check("geometry", 1e-8)
def geometry_palatini(cfg, alg, rng):
    _, geo, _ = _random_kk(cfg, alg, rng, _few(cfg, 10))
    ein = geo.einstein_values(check=False)
    riem = np.asarray(J.value(geo.riemann))
    res = G.palatini_residual(riem, ein, geo.h)
    scalar = np.asarray(J.value(geo.scalar()))
    literal = G.palatini_residual(riem, ein - 0.5 * scalar[..., None, None] * np.eye(geo.n), geo.h)
    return res, {"unhalved_normalization_residual": literal}


@check("geometry", 1e-10)
def geometry_einstein_symmetry(cfg, alg, rng):
    _, geo, _ = _random_kk(cfg, alg, rng, _few(cfg, 10))
    return G.lowered_symmetry_residual(geo.einstein_values(), geo.h), {}


# ---------------------------------------------------------------------------
# fibration

def maxwell_bundle_frame(b=0.7):
    """Circle-bundle coframe of the constant magnetic field ``A = b x^0 dx^1``."""
    def pot(x):
        zero = J.zeros(x.shape[:-1], x)
        return J.stack([zero, x[..., 0] * b, zero, zero], axis=-1)
    return B.circle_bundle_frame(B.kk_u1_row(pot))


@check("fibration", 1e-9, ("u1",))
def fibration_flux_constancy(cfg, alg, rng):
    base = rng.uniform(-1, 1, (_few(cfg, 20), 4))
    frame = maxwell_bundle_frame()
    flux = B.fiber_flux(frame, B.circle_chart(), base[0])
    return B.flux_constancy_scan(frame, B.circle_chart(), base), {"flux": flux}


@check("fibration", 1e-6, ("u1",))
def fibration_closure_period(cfg, alg, rng):
    frame = maxwell_bundle_frame()
    periods = []
    for x in rng.uniform(-1, 1, (_few(cfg, 4), 4)):
        r = B.detect_closure(B.ChartLeafSystem(frame, B.circle_chart(), [1.0]), np.r_[x, rng.uniform(0, 2 * np.pi)])
        periods.append(r.period if r.closed else np.inf)
    return float(np.max(np.abs(np.array(periods) - 2 * np.pi))), {"leaves": len(periods)}


@check("fibration", 1e-8, ("su2",))
def fibration_leaf_exponential(cfg, alg, rng):
    bf = B.BundleFrame(G.flat_reduced_data(alg))
    xi = rng.normal(size=3)
    q0 = lie.random_su2(rng)
    tr = B.integrate_leaf(B.BundleLeafSystem(bf, xi), np.r_[_box(rng, 1)[0], q0], 5.0, 1e-12, 11)
    ex = np.array([lie.quat_mul(q0, lie.quat_exp(xi, t)) for t in tr.times])
    return float(np.abs(tr.points[:, 4:] - ex).max()), {}


@check("fibration", 1e-6, ("su2",))
def fibration_closure_period_su2(cfg, alg, rng):
    bf = B.BundleFrame(G.flat_reduced_data(alg))
    xi = rng.normal(size=3)
    xi /= np.linalg.norm(xi)
    r = B.detect_closure(B.BundleLeafSystem(bf, xi), np.r_[_box(rng, 1)[0], lie.random_su2(rng)], 30.0)
    period = r.period if r.closed else np.inf
    return abs(period - 4 * np.pi), {"period": period}


@check("fibration", 1e-8, ("su2",))
def fibration_holonomy_path_independence(cfg, alg, rng):
    bf = B.BundleFrame(G.random_reduced_data(rng, alg))
    start = np.r_[rng.uniform(-0.3, 0.3, 4), lie.random_su2(rng)]
    g, g1 = lie.random_su2(rng), lie.random_su2(rng)
    p1 = B.GroupPath.geodesic(B.log_su2(g))
    p2 = B.GroupPath.segments([B.log_su2(g1), B.log_su2(lie.quat_mul(lie.quat_conj(g1), g))])
    fac = lambda xi: B.BundleLeafSystem(bf, xi)
    e1, e2 = B.holonomy_map(fac, start, p1), B.holonomy_map(fac, start, p2)
    return float(np.abs(e1 - e2).max()), {"base_drift": float(np.abs(e1[:4] - start[:4]).max())}


# ---------------------------------------------------------------------------
# variational

def _fiber_samples(cfg, rng, k=8):
    if cfg.group == "u1":
        return V.trapezoid(k)[0]
    return lie.random_su2(rng, k)


@check("variational", 1e-7)
def eym_vacuum_residual(cfg, alg, rng):
    sol = V.build_eym_vacuum_solution(alg)
    quad = V.Quadrature.grid(cfg.group, 5, paired=True, fiber=_fiber_samples(cfg, rng))
    res = V.max_over(lambda x, f: V.el_residual_eym(sol, x, f, cfg.group), quad)
    return max(res.values()), {k: res[k] for k in sorted(res)} | {"lambda0": sol.lambda0}


@check("variational", 1e-7, ("u1",))
def maxwell_residual(cfg, alg, rng):
    sol = V.build_maxwell_solution(0.7)
    quad = V.Quadrature.grid("u1", 5, paired=True, fiber=V.trapezoid(8)[0])
    res = V.max_over(lambda x, s: V.el_residual_maxwell(sol, x, s), quad)
    return max(res.values()), {k: res[k] for k in sorted(res)}


@check("variational", 5e-6)
def gateaux_solution(cfg, alg, rng):
    count = _few(cfg, 2)
    if cfg.group == "u1":
        sol = V.build_maxwell_solution(0.7)
        quad = V.Quadrature.box("u1", n=5, fiber=6)
        vals = [V.gateaux(lambda f: V.action_maxwell(f, quad), sol, V.random_maxwell_variation(rng))
                for _ in range(count)]
    else:
        sol = V.build_eym_vacuum_solution(alg)
        quad = V.Quadrature.box("su2", n=3, hopf=(2, 3))
        vals = [V.gateaux(lambda f: V.action_eym(f, quad), sol, V.random_eym_variation(rng, alg))
                for _ in range(count)]
    return float(np.max(np.abs(vals))), {"variations": count}


@check("variational", 1e-12)
def cancellation_average(cfg, alg, rng):
    x = _box(rng, 1)[0]
    if cfg.group == "u1":
        co = rng.uniform(-1, 1, (4, 13))

        def p(z):
            s = z[..., 4]
            modes = [J.ones_like(s)] + [f for k in range(1, 7) for f in ((s * k).cos(), (s * k).sin())]
            return J.einsum("...m,am->...a", J.stack(modes, -1), co) * (1 + z[..., 0] * z[..., 1])[..., None]
        r = V.cancellation_average(p, x, "u1", 16)
    else:
        pf = V.random_bundle_field(rng, (3, 4, 3), "su2", 1.0, 2, compact=False)
        p = lambda pt: J.einsum("...ial,...kl->...iak", pf(pt), pt.S)
        r = V.cancellation_average(p, x, "su2", 4, method="hopf", red=G.random_reduced_data(rng, alg))
    return float(np.abs(r.mean).max()), {"method": r.method, "samples": int(r.samples)}


@check("variational", 1e-3, ("su2",))
def cancellation_haar_mc(cfg, alg, rng):
    """Residual is the mean in units of 3 standard errors (pass iff within 3 sigma)."""
    pf = V.random_bundle_field(rng, (3, 4, 3), "su2", 1.0, 2, compact=False)
    p = lambda pt: J.einsum("...ial,...kl->...iak", pf(pt), pt.S)
    r = V.cancellation_average(p, _box(rng, 1)[0], "su2", max(16, int(cfg.samples)), rng=rng)
    z = float(np.max(np.abs(r.mean) / (3 * np.maximum(r.stderr, 1e-300))))
    return max(0.0, z - 1.0), {"max_abs_mean": float(np.abs(r.mean).max()), "max_stderr": float(r.stderr.max())}


@check("variational", 1e-12, ("su2",))
def identity_divergence_split(cfg, alg, rng):
    pf = V.random_bundle_field(rng, (3, 7, 7), "su2", 0.5, 2, compact=False)

    def p(pt):
        q = pf(pt)
        return q - q.swapaxes(-1, -2)
    red = G.random_reduced_data(rng, alg)
    k = _few(cfg, 8)
    return V.identity_check_15abis(red, p, _box(rng, k), lie.random_su2(rng, k)), {}


@check("variational", 1e-10)
def projected_equations_vacuum(cfg, alg, rng):
    red = G.flat_reduced_data(alg)
    bk = lie.killing_contraction(alg)
    res = V.projected_equations_check(red, -0.25 * bk, _box(rng, _few(cfg, 5)))
    return max(float(np.abs(v).max()) for v in res.values()), {}


@check("variational", 1e-7)
def gauge_invariance(cfg, alg, rng):
    if cfg.group == "u1":
        fields = V.random_maxwell_offshell(rng)
        quad = V.Quadrature.box("u1", n=3, fiber=8)
        t = V.dv_shift(lambda x: V.bump(x) * (x[..., 0] + 0.5 * x[..., 1] * x[..., 2]))
        return abs(V.gauge_invariance_delta("maxwell", fields, t, quad)), {"transform": t.name}
    sol = V.build_eym_vacuum_solution(alg)
    fields = sol.perturbed(V.random_eym_variation(rng, alg, amplitude=0.1, compact=False), 1.0)
    quad = V.Quadrature.box("su2", n=2, hopf=(2, 3))
    t = V.adjoint_constant(lie.GroupElement("su2", lie.random_su2(rng)))
    return abs(V.gauge_invariance_delta("eym", fields, t, quad)), {"transform": t.name}


# ---------------------------------------------------------------------------
# running and emitting

def suite_checks(suite: str, group: str) -> list:
    names = SUITES if suite == "all" else (suite,)
    return [c for s in names for c in REGISTRY if c.suite == s and group in c.groups]


def run_suite(cfg: SuiteConfig) -> CheckReport:
    """Run every check of ``cfg.suite`` for ``cfg.group``; deterministic given the config."""
    alg = lie.catalog(cfg.group)
    start = time.perf_counter()
    results = []
    for c in suite_checks(cfg.suite, cfg.group):
        rng = check_rng(cfg.seed, c.name)
        try:
            res, extra = c.run(cfg, alg, rng)
        except (G.ConsistencyError, ArithmeticError) as exc:
            raise SuiteConsistencyError(c.name, exc) from exc
        tol = c.tolerance if cfg.tol is None else float(cfg.tol)
        res = float(res)
        results.append(CheckResult(c.name, res, tol, bool(res <= tol), _plain(extra)))
    wall = int(round(1000 * (time.perf_counter() - start)))
    return CheckReport(cfg.suite, cfg.group, int(cfg.seed), results, wall)


def _plain(extra: dict) -> dict:
    out = {}
    for k, v in extra.items():
        if isinstance(v, (np.floating, float)):
            out[k] = float(v)
        elif isinstance(v, (np.integer, int)) and not isinstance(v, bool):
            out[k] = int(v)
        else:
            out[k] = v
    return out


def _json_float(x: float):
    return x if np.isfinite(x) else repr(x)


def report_json(r: CheckReport) -> str:
    d = r.to_dict()
    for c in d["checks"]:
        c["max_residual"] = _json_float(c["max_residual"])
    return json.dumps(d, indent=2) + "\n"


def report_csv(r: CheckReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "max_residual", "tolerance", "pass"])
    for c in r.checks:
        w.writerow([c.name, repr(c.max_residual), repr(c.tolerance), "true" if c.passed else "false"])
    return buf.getvalue()


def emit_report(r: CheckReport, path=None, format: str = "json", stream=None) -> None:
    """Write the report to ``path`` (or ``stream`` when no path is given).  Raises OSError on I/O failure."""
    text = report_json(r) if format == "json" else report_csv(r)
    if path is None or path == "-":
        stream.write(text)
        stream.flush()
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
