"""Exterior calculus on a single chart.

Forms store their coefficients over strictly increasing index tuples, in
lexicographic order, along the last array axis.  Coefficients are either
plain arrays (a form *value* at one or more points) or :class:`JetArray`
objects (the germ of a form *field* around each point), in which case the
exterior derivative, Lie derivative and pullback are exact.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import jets as J
from .jets import JetArray


class FormError(ValueError):
    pass


class DegeneracyError(FormError):
    pass


# ---------------------------------------------------------------------------
# combinatorics

@functools.lru_cache(maxsize=None)
def combos(n: int, p: int) -> tuple:
    return tuple(itertools.combinations(range(n), p))


@functools.lru_cache(maxsize=None)
def combo_index(n: int, p: int) -> dict:
    return {c: i for i, c in enumerate(combos(n, p))}


def sort_sign(idx: Sequence[int]):
    """Sorted tuple and permutation sign; sign 0 on repeated indices."""
    idx = list(idx)
    if len(set(idx)) < len(idx):
        return tuple(sorted(idx)), 0
    sign = 1
    arr = idx[:]
    for i in range(len(arr)):
        for j in range(len(arr) - 1 - i):
            if arr[j] > arr[j + 1]:
                arr[j], arr[j + 1] = arr[j + 1], arr[j]
                sign = -sign
    return tuple(arr), sign


@functools.lru_cache(maxsize=None)
def _wedge_matrix(n: int, p: int, q: int):
    ia, ib, rows = [], [], []
    idx = combo_index(n, p + q)
    for a_i, a in enumerate(combos(n, p)):
        for b_i, b in enumerate(combos(n, q)):
            if set(a) & set(b):
                continue
            out, s = sort_sign(a + b)
            ia.append(a_i)
            ib.append(b_i)
            rows.append((idx[out], s))
    mat = np.zeros((len(rows), math.comb(n, p + q)))
    for r, (o, s) in enumerate(rows):
        mat[r, o] = s
    return np.array(ia, dtype=np.intp), np.array(ib, dtype=np.intp), mat


@functools.lru_cache(maxsize=None)
def _d_matrix(n: int, p: int):
    """Matrix sending d_mu a_I (flattened as I*n + mu) to (da)_K."""
    idx = combo_index(n, p + 1)
    cp = combos(n, p)
    mat = np.zeros((len(cp) * n, math.comb(n, p + 1)))
    for i, I in enumerate(cp):
        for mu in range(n):
            if mu in I:
                continue
            out, s = sort_sign((mu,) + I)
            mat[i * n + mu, idx[out]] += s
    return mat


@functools.lru_cache(maxsize=None)
def _interior_matrix(n: int, p: int):
    """Matrix sending X^mu a_K (flattened as K*n + mu) to (i_X a)_J."""
    idx = combo_index(n, p - 1)
    cp = combos(n, p)
    mat = np.zeros((len(cp) * n, math.comb(n, p - 1)))
    for k, K in enumerate(cp):
        for pos, mu in enumerate(K):
            rest = K[:pos] + K[pos + 1:]
            mat[k * n + mu, idx[rest]] += (-1) ** pos
    return mat


@functools.lru_cache(maxsize=None)
def _laplace_table(n: int, m: int, p: int):
    """Index table expanding p x p minors of an n x m matrix along their first row."""
    rows_p, cols_p = combos(n, p), combos(m, p)
    ridx, cidx = combo_index(n, p - 1), combo_index(m, p - 1)
    k0, jt, krest, jminus, sign = [], [], [], [], []
    for K in rows_p:
        for Jc in cols_p:
            for t in range(p):
                k0.append(K[0])
                jt.append(Jc[t])
                krest.append(ridx[K[1:]])
                jminus.append(cidx[Jc[:t] + Jc[t + 1:]])
                sign.append((-1) ** t)
    shape = (len(rows_p), len(cols_p), p)
    return tuple(np.array(a, dtype=np.intp).reshape(shape) for a in (k0, jt, krest, jminus)) + (
        np.array(sign, dtype=float).reshape(shape),)


def compound(mat, p: int):
    """p-th compound matrix: all p x p minors, rows/cols over increasing tuples."""
    n, m = mat.shape[-2], mat.shape[-1]
    batch = mat.shape[:-2]
    if p == 0:
        one = np.ones(batch + (1, 1))
        return J.constant(one, mat) if isinstance(mat, JetArray) else one
    prev = None
    out = mat
    for q in range(2, p + 1):
        prev = out
        k0, jt, krest, jminus, sign = _laplace_table(n, m, q)
        first = _gather2(mat, k0, jt)
        minor = _gather2(prev, krest, jminus)
        out = (first * minor * sign).sum(axis=-1)
    return out


def _gather2(x, ri, ci):
    if isinstance(x, JetArray):
        return x._wrap(x.c[..., ri, ci, :])
    return x[..., ri, ci]


# ---------------------------------------------------------------------------
# coefficient helpers working for arrays and jets alike

def _take(x, idx):
    if isinstance(x, JetArray):
        return x._wrap(x.c[..., idx, :])
    return x[..., idx]


def _apply_matrix(x, mat):
    """Contract the last array axis of x with the rows of a constant matrix."""
    if isinstance(x, JetArray):
        return x._wrap(np.einsum("...lm,lc->...cm", x.c, mat))
    return np.einsum("...l,lc->...c", x, mat)


def _expand(x):
    """Append a unit axis so a per-point scalar broadcasts over components."""
    if isinstance(x, JetArray):
        return x._wrap(x.c[..., None, :])
    return np.asarray(x)[..., None]


def _batch_shape(x):
    return x.shape[:-1]


class Form:
    """A degree-``p`` differential form on an ``n``-dimensional space."""

    def __init__(self, degree: int, dim: int, coeffs, basis: str = "coordinate"):
        if not 0 <= degree <= dim:
            raise FormError(f"degree {degree} outside 0..{dim}")
        if basis not in ("coordinate", "frame"):
            raise FormError(f"unknown basis tag {basis!r}")
        if not isinstance(coeffs, JetArray):
            coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1] != math.comb(dim, degree):
            raise FormError("coefficient count does not match degree")
        self.degree = degree
        self.dim = dim
        self.coeffs = coeffs
        self.basis = basis

    # -- constructors -------------------------------------------------------
    @classmethod
    def zero(cls, degree, dim, batch=(), basis="coordinate", like=None):
        shape = tuple(batch) + (math.comb(dim, degree),)
        if like is not None:
            return cls(degree, dim, J.zeros(shape, like), basis)
        return cls(degree, dim, np.zeros(shape), basis)

    @classmethod
    def from_components(cls, degree, dim, comps: dict, basis="coordinate", batch=()):
        """Build from a mapping of index tuples (any order) to values."""
        idx = combo_index(dim, degree)
        c = np.zeros(tuple(batch) + (math.comb(dim, degree),))
        for key, val in comps.items():
            key, s = sort_sign(key)
            if s == 0:
                continue
            c[..., idx[key]] += s * np.asarray(val, dtype=float)
        return cls(degree, dim, c, basis)

    @classmethod
    def basis_form(cls, dim, indices, basis="coordinate", batch=()):
        return cls.from_components(len(indices), dim, {tuple(indices): 1.0}, basis, batch)

    @classmethod
    def one_form(cls, coeffs, basis="coordinate"):
        """1-form from coefficients along the last axis."""
        n = coeffs.shape[-1]
        return cls(1, n, coeffs, basis)

    # -- access --------------------------------------------------------------
    @property
    def is_jet(self) -> bool:
        return isinstance(self.coeffs, JetArray)

    @property
    def batch_shape(self):
        return _batch_shape(self.coeffs)

    def values(self) -> "Form":
        """Drop jets, keeping only values at the base points."""
        return Form(self.degree, self.dim, J.value(self.coeffs), self.basis)

    def components(self, tol: float = 0.0) -> dict:
        """Mapping of increasing tuples to values (single point only)."""
        vals = np.asarray(J.value(self.coeffs))
        if vals.ndim != 1:
            raise FormError("components() needs a single-point form")
        return {c: float(v) for c, v in zip(combos(self.dim, self.degree), vals) if abs(v) > tol}

    def __getitem__(self, key):
        key, s = sort_sign(key)
        if s == 0:
            return 0.0
        return s * _take(self.coeffs, combo_index(self.dim, self.degree)[key])

    def max_abs(self) -> float:
        v = np.asarray(J.value(self.coeffs))
        return float(np.abs(v).max()) if v.size else 0.0

    # -- algebra -------------------------------------------------------------
    def _check(self, other: "Form"):
        if self.basis != other.basis:
            raise FormError("basis mismatch")
        if self.dim != other.dim or self.degree != other.degree:
            raise FormError("degree/dimension mismatch")

    def __add__(self, other):
        if isinstance(other, (int, float)) and other == 0:
            return self
        self._check(other)
        return Form(self.degree, self.dim, _add(self.coeffs, other.coeffs), self.basis)

    __radd__ = __add__

    def __sub__(self, other):
        self._check(other)
        return Form(self.degree, self.dim, _add(self.coeffs, -other.coeffs), self.basis)

    def __neg__(self):
        return Form(self.degree, self.dim, -self.coeffs, self.basis)

    def scale(self, f) -> "Form":
        """Multiply by a function (per-point scalar, array or jet)."""
        if np.isscalar(f):
            return Form(self.degree, self.dim, self.coeffs * f, self.basis)
        return Form(self.degree, self.dim, _mul(self.coeffs, _expand(f)), self.basis)

    def __mul__(self, f):
        return self.scale(f)

    __rmul__ = __mul__

    def __xor__(self, other):
        return wedge(self, other)

    def __repr__(self):
        kind = "jet" if self.is_jet else "value"
        return f"Form(degree={self.degree}, dim={self.dim}, basis={self.basis}, {kind}, batch={self.batch_shape})"


def _add(a, b):
    if isinstance(a, JetArray) or isinstance(b, JetArray):
        if not isinstance(a, JetArray):
            a, b = b, a
        return a + b
    return a + b


def _mul(a, b):
    if isinstance(b, JetArray) and not isinstance(a, JetArray):
        return b * a
    return a * b


def form_sum(forms):
    out = 0
    for f in forms:
        out = f + out if not isinstance(out, int) else f
    return out


# ---------------------------------------------------------------------------
# operations

def wedge(a: Form, b: Form) -> Form:
    """Exterior product; returns the zero form when the degree overflows."""
    if a.basis != b.basis:
        raise FormError("cannot wedge forms in different bases")
    if a.dim != b.dim:
        raise FormError("dimension mismatch")
    n, p, q = a.dim, a.degree, b.degree
    if p + q > n:
        like = a.coeffs if a.is_jet else (b.coeffs if b.is_jet else None)
        batch = np.broadcast_shapes(a.batch_shape, b.batch_shape)
        return Form.zero(n, n, batch, a.basis, like)
    ia, ib, mat = _wedge_matrix(n, p, q)
    prod = _mul(_take(a.coeffs, ia), _take(b.coeffs, ib))
    return Form(p + q, n, _apply_matrix(prod, mat), a.basis)


def wedge_all(*forms: Form) -> Form:
    out = forms[0]
    for f in forms[1:]:
        out = wedge(out, f)
    return out


def ext_d(a: Form) -> Form:
    """Exterior derivative of a coordinate-basis form with jet coefficients."""
    if a.basis != "coordinate":
        raise FormError("ext_d acts on coordinate-basis forms")
    if not a.is_jet or a.coeffs.order < 1:
        raise FormError("ext_d needs coefficient jets of order >= 1")
    n, p = a.dim, a.degree
    if p == n:
        return Form.zero(n, n, a.batch_shape, "coordinate", a.coeffs.truncate(a.coeffs.order - 1))
    g = a.coeffs.grad()  # (..., C_p, n)
    flat = g.reshape(g.shape[:-2] + (g.shape[-2] * n,))
    return Form(p + 1, n, _apply_matrix(flat, _d_matrix(n, p)), "coordinate")


def interior(x, a: Form) -> Form:
    """Interior product i_X a with X given by components along the last axis."""
    n, p = a.dim, a.degree
    if p == 0:
        like = a.coeffs if a.is_jet else None
        return Form.zero(0, n, a.batch_shape, a.basis, like) if like is None else Form(
            0, n, a.coeffs * 0.0, a.basis)
    ca = _expand(a.coeffs)  # (..., C, 1)
    if isinstance(x, JetArray):
        xx = x._wrap(x.c[..., None, :, :])
    else:
        xx = np.asarray(x)[..., None, :]
    prod = _mul(ca, xx)  # (..., C, n)
    flat = prod.reshape(prod.shape[:-2] + (prod.shape[-2] * n,))
    return Form(p - 1, n, _apply_matrix(flat, _interior_matrix(n, p)), a.basis)


def evaluate(a: Form, vectors) -> object:
    """a(v_1, ..., v_p) for vectors given with components along the last axis."""
    out = a
    for v in vectors:
        out = interior(v, out)
    return _take(out.coeffs, 0)


def lie_derivative(x, a: Form) -> Form:
    """Cartan formula L_X a = d(i_X a) + i_X(d a) for jet-valued X and a."""
    first = ext_d(interior(x, a)) if a.degree > 0 else None
    second = interior(x, ext_d(a)) if a.degree < a.dim else None
    if first is None:
        return second
    if second is None:
        return first
    return first + second


def vector_bracket(x: JetArray, y: JetArray) -> JetArray:
    """[X, Y]^mu = X^nu d_nu Y^mu - Y^nu d_nu X^mu."""
    gy = y.grad()
    gx = x.grad()
    return J.einsum("...n,...mn->...m", x, gy) - J.einsum("...n,...mn->...m", y, gx)


# ---------------------------------------------------------------------------
# charts and fields

@dataclass(frozen=True)
class Chart:
    """Coordinate box with optional periodic directions."""

    lower: tuple
    upper: tuple
    periods: tuple = None

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or any(h <= l for l, h in zip(lo, hi)):
            raise FormError("chart intervals must be nonempty")
        per = self.periods if self.periods is not None else (None,) * len(lo)
        if len(per) != len(lo):
            raise FormError("periods must match chart dimension")
        for p in per:
            if p is not None and p <= 0:
                raise FormError("periods must be positive")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "periods", tuple(per))

    @property
    def dim(self) -> int:
        return len(self.lower)

    def wrap(self, pts) -> np.ndarray:
        pts = np.array(pts, dtype=float)
        for i, p in enumerate(self.periods):
            if p is not None:
                pts[..., i] = self.lower[i] + np.mod(pts[..., i] - self.lower[i], p)
        return pts

    def difference(self, a, b) -> np.ndarray:
        """a - b with periodic coordinates wrapped into [-p/2, p/2)."""
        d = np.array(a, dtype=float) - np.asarray(b, dtype=float)
        for i, p in enumerate(self.periods):
            if p is not None:
                d[..., i] = np.mod(d[..., i] + 0.5 * p, p) - 0.5 * p
        return d

    def distance(self, a, b) -> np.ndarray:
        return np.linalg.norm(self.difference(a, b), axis=-1)

    def contains(self, pts, tol=0.0) -> np.ndarray:
        pts = np.asarray(pts)
        ok = np.ones(pts.shape[:-1], dtype=bool)
        for i, p in enumerate(self.periods):
            if p is None:
                ok &= (pts[..., i] >= self.lower[i] - tol) & (pts[..., i] <= self.upper[i] + tol)
        return ok

    def sample(self, rng: np.random.Generator, size: int, margin: float = 0.0) -> np.ndarray:
        lo = np.array(self.lower) + margin
        hi = np.array(self.upper) - margin
        return lo + (hi - lo) * rng.random((size, self.dim))


Field = Callable[[JetArray], object]


@dataclass(frozen=True)
class ScalarField:
    """Smooth function on a chart, evaluable on coordinate jets."""

    func: Field
    dim: int

    def __call__(self, z):
        return self.func(z)

    def jet(self, points, order: int = 3) -> JetArray:
        return as_jet_output(self.func(J.variables(points, order)), J.variables(points, order))

    def value(self, points) -> np.ndarray:
        return self.jet(points, 0).value


def as_jet_output(out, z: JetArray) -> JetArray:
    if isinstance(out, JetArray):
        return out
    return J.constant(np.broadcast_to(out, z.shape[:-1] + np.shape(out)[len(z.shape) - 1:]), z)


@dataclass(frozen=True)
class CoFrameField:
    """N+1 one-forms theta^I = E[I, mu] dz^mu, with indices < ``split`` horizontal."""

    matrix: Field
    dim: int
    split: int = 4

    def __call__(self, z: JetArray) -> JetArray:
        return self.matrix(z)

    def at(self, points, order: int = 2) -> "Frame":
        z = J.variables(points, order)
        return Frame(self.matrix(z), self.split)

    def one_forms(self, z: JetArray) -> list:
        e = self.matrix(z)
        return [Form(1, self.dim, e[..., i, :]) for i in range(self.dim)]


class Frame:
    """A coframe evaluated (with jets) at a batch of points."""

    def __init__(self, e, split: int = 4, check: bool = True):
        self.e = e
        self.dim = e.shape[-1]
        self.split = split
        e0 = np.asarray(J.value(e))
        if check:
            cond = np.linalg.cond(e0)
            if not np.all(np.isfinite(cond)) or np.any(cond > 1e12):
                raise DegeneracyError("coframe matrix is singular at a sampled point")
        self.einv = J.inv(e)  # einv[mu, I]
        self._compound = {}

    @property
    def is_jet(self):
        return isinstance(self.e, JetArray)

    def compound(self, which: str, p: int):
        key = (which, p)
        if key not in self._compound:
            self._compound[key] = compound(self.e if which == "e" else self.einv, p)
        return self._compound[key]

    def to_frame(self, a: Form) -> Form:
        if a.basis == "frame":
            return a
        lam = self.compound("einv", a.degree)  # rows coordinate tuples, cols frame tuples
        return Form(a.degree, a.dim, _contract_compound(a.coeffs, lam), "frame")

    def to_coordinates(self, a: Form) -> Form:
        if a.basis == "coordinate":
            return a
        lam = self.compound("e", a.degree)  # rows frame tuples, cols coordinate tuples
        return Form(a.degree, a.dim, _contract_compound(a.coeffs, lam), "coordinate")

    def frame_derivative(self, f: JetArray) -> JetArray:
        """e_I(f) along a new trailing axis (order drops by one)."""
        g = f.grad()
        return J.einsum("...m,...mI->...I", g, self.einv) if f.ndim == self.einv.ndim - 2 else \
            _frame_derivative_general(g, self.einv)

    def vector(self, index_or_components) -> object:
        """Coordinate components of the dual frame vector (or a combination)."""
        if isinstance(index_or_components, (int, np.integer)):
            return self.einv[..., :, int(index_or_components)]
        comps = np.asarray(index_or_components, dtype=float)
        return J.einsum("...mI,I->...m", self.einv, comps)

    def one_form(self, i: int) -> Form:
        return Form(1, self.dim, self.e[..., i, :])


def _frame_derivative_general(g, einv):
    # g: (..., A, m) with extra tensor axes A; einv: (batch, m, I)
    nb = einv.ndim - 2
    extra = g.ndim - 1 - nb
    letters = "abcdefgh"[:extra]
    return J.einsum(f"...{letters}m,...mI->...{letters}I", g, einv)


def _contract_compound(coeffs, lam):
    return J.einsum("...K,...KJ->...J", coeffs, lam) if (
        isinstance(coeffs, JetArray) or isinstance(lam, JetArray)) else np.einsum("...K,...KJ->...J", coeffs, lam)


def frame_components(a: Form, frame: Frame) -> Form:
    return frame.to_frame(a)


def pullback(T: Field, a_field: Callable[[JetArray], Form], z: JetArray) -> Form:
    """(T^* a) at jets z, where T maps coordinate jets to coordinate jets."""
    w = T(z)
    a = a_field(w)
    if a.basis != "coordinate":
        raise FormError("pullback needs a coordinate-basis form")
    dt = w.grad()  # (..., n_target, n_source)
    if a.degree == 0:
        return Form(0, z.shape[-1], a.coeffs.truncate(dt.order), "coordinate")
    lam = compound(dt, a.degree)
    coeffs = J.einsum("...K,...KJ->...J", a.coeffs, lam)
    return Form(a.degree, z.shape[-1], coeffs, "coordinate")


def jacobian_check(T: Field, points, order: int = 1) -> np.ndarray:
    z = J.variables(points, order)
    dt = np.asarray(T(z).grad().value)
    det = np.linalg.det(dt)
    if np.any(np.abs(det) < 1e-12):
        raise DegeneracyError("map has a singular Jacobian")
    return det


# ---------------------------------------------------------------------------
# graded frame volumes

def block_volume(dim: int, block: tuple, indices: Sequence[int], basis="frame", batch=()) -> Form:
    """(1/(m-a)!) eps_{i_1..i_a j..} theta^j ^ ... over the index block [start, stop).

    ``indices`` are absolute frame indices inside the block; the
    Levi-Civita symbol of the block has eps_{start, ..., stop-1} = +1.
    """
    start, stop = block
    rest = [i for i in range(start, stop) if i not in indices]
    if len(set(indices)) < len(indices) or any(not start <= i < stop for i in indices):
        return Form.zero(len(rest) if len(set(indices)) == len(indices) else max(0, stop - start - len(indices)),
                         dim, batch, basis)
    _, s = sort_sign(list(indices) + rest)
    return Form.from_components(len(rest), dim, {tuple(rest): float(s)}, basis, batch)


def hat_volume(dim: int, indices: Sequence[int] = (), batch=()) -> Form:
    """theta-hat^{(N-a)}_{I_0..I_a} in the frame basis of an (N+1)-dimensional space."""
    return block_volume(dim, (0, dim), indices, "frame", batch)


def graded_volumes(frame: Frame, r: int = None) -> dict:
    """The table of graded volume forms of a coframe, in coordinates.

    Keys: ``e4``, ``e3[a]``, ``e2[a,b]``, ``bar_r``, ``bar_r1[k]``, ``bar_r2[j,k]``,
    ``hat``, ``hat1[I]``, ``hat2[I,J]``, ``hat3[I,J,K]`` (hat2/hat3 only for I<J<K).
    """
    n = frame.dim
    split = frame.split
    r = n - split if r is None else r
    batch = frame.e.shape[:-2]
    to_c = frame.to_coordinates

    def fb(form):
        return to_c(Form(form.degree, n, np.broadcast_to(form.coeffs, batch + form.coeffs.shape[-1:]).copy(),
                         "frame"))

    hblk, vblk = (0, split), (split, n)
    table = {
        "e4": fb(block_volume(n, hblk, ())),
        "e3": {a: fb(block_volume(n, hblk, (a,))) for a in range(split)},
        "e2": {(a, b): fb(block_volume(n, hblk, (a, b))) for a in range(split) for b in range(split) if a < b},
        "bar_r": fb(block_volume(n, vblk, ())),
        "bar_r1": {k: fb(block_volume(n, vblk, (k,))) for k in range(split, n)},
        "bar_r2": {(j, k): fb(block_volume(n, vblk, (j, k))) for j in range(split, n) for k in range(split, n)
                   if j < k},
        "hat": fb(hat_volume(n)),
        "hat1": {i: fb(hat_volume(n, (i,))) for i in range(n)},
        "hat2": {(i, j): fb(hat_volume(n, (i, j))) for i in range(n) for j in range(n) if i < j},
        "hat3": {(i, j, k): fb(hat_volume(n, (i, j, k))) for i in range(n) for j in range(n) for k in range(n)
                 if i < j < k},
    }
    return table


def contraction_identity_residual(frame: Frame) -> float:
    """max over K, I of |theta^K ^ hat_I - delta^K_I hat| evaluated in coordinates."""
    n = frame.dim
    vals = Frame(np.asarray(J.value(frame.e)), frame.split)
    vol = graded_volumes(vals)
    worst = 0.0
    for k in range(n):
        tk = vals.one_form(k)
        for i in range(n):
            lhs = wedge(tk, vol["hat1"][i])
            target = vol["hat"].coeffs * (1.0 if k == i else 0.0)
            worst = max(worst, float(np.abs(lhs.coeffs - target).max()))
    return worst


# ---------------------------------------------------------------------------
# curvature of a Lie-algebra valued coframe

def g_curvature(frame_field: CoFrameField, c: np.ndarray, z: JetArray) -> list:
    """Theta^a = d theta^a (a < split); Theta^i = d theta^i + 1/2 c^i_jk theta^j ^ theta^k."""
    thetas = frame_field.one_forms(z)
    split = frame_field.split
    out = []
    for i, th in enumerate(thetas):
        d = ext_d(th)
        if i >= split:
            ii = i - split
            for j in range(split, len(thetas)):
                for k in range(split, len(thetas)):
                    cf = c[ii, j - split, k - split]
                    if cf != 0.0:
                        d = d + wedge(thetas[j], thetas[k]).scale(0.5 * cf)
        out.append(d)
    return out


# ---------------------------------------------------------------------------
# random smooth fields

@dataclass
class RandomFieldSpec:
    degree: int = 3
    trig_degree: int = 2
    amplitude: float = 1.0


def _trig_modes(y: JetArray, period: float, kmax: int):
    w = 2 * np.pi / period
    modes = [J.ones_like(y)]
    for k in range(1, kmax + 1):
        modes.append((y * (w * k)).cos())
        modes.append((y * (w * k)).sin())
    return modes


def _monomials(xs, degree: int, like: JetArray):
    out = [J.ones_like(like)]
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(len(xs)), deg):
            term = xs[combo[0]]
            for v in combo[1:]:
                term = term * xs[v]
            out.append(term)
    return out


def random_tensor_field(rng: np.random.Generator, chart: Chart, shape: tuple, spec: RandomFieldSpec = None,
                        box_vars=None, periodic_vars=None) -> Field:
    """Random smooth array-valued field: polynomials in box coordinates times
    trigonometric polynomials in periodic coordinates, coefficients in [-1, 1]."""
    spec = spec or RandomFieldSpec()
    n = chart.dim
    if box_vars is None:
        box_vars = [i for i in range(n) if chart.periods[i] is None]
    if periodic_vars is None:
        periodic_vars = [i for i in range(n) if chart.periods[i] is not None]
    nmono = math.comb(len(box_vars) + spec.degree, spec.degree)
    ntrig = (2 * spec.trig_degree + 1) ** len(periodic_vars)
    coef = spec.amplitude * rng.uniform(-1.0, 1.0, size=tuple(shape) + (nmono, ntrig))
    spec_str = "".join("abcdefgh"[: len(shape)])

    def field(z: JetArray):
        like = z[..., 0]
        mon = J.stack(_monomials([z[..., i] for i in box_vars], spec.degree, like), axis=-1)
        trig = J.stack([J.ones_like(like)], axis=-1)
        for i in periodic_vars:
            modes = J.stack(_trig_modes(z[..., i], chart.periods[i], spec.trig_degree), axis=-1)
            trig = J.einsum("...a,...b->...ab", trig, modes).reshape(like.shape + (-1,))
        return J.einsum(f"...p,...q,{spec_str}pq->...{spec_str}", mon, trig, coef)

    return field


def random_form_field(rng, chart: Chart, degree: int, spec: RandomFieldSpec = None):
    n = chart.dim
    coef_field = random_tensor_field(rng, chart, (math.comb(n, degree),), spec)
    return lambda z: Form(degree, n, coef_field(z), "coordinate")


def finite_difference_grad(func, point, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a value-level function (independent oracle)."""
    point = np.asarray(point, dtype=float)
    cols = []
    for i in range(point.shape[-1]):
        dp = np.zeros_like(point)
        dp[..., i] = h
        cols.append((np.asarray(func(point + dp)) - np.asarray(func(point - dp))) / (2 * h))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# exterior derivative in an anholonomic frame

@functools.lru_cache(maxsize=None)
def _anholonomy_matrix(n: int, p: int):
    """Matrix sending a_J Theta^{J_m}_{KL} (flattened J, m, KL) to d(theta^J) terms."""
    cp = combos(n, p)
    c2 = combos(n, 2)
    idx = combo_index(n, p + 1)
    mat = np.zeros((len(cp) * p * len(c2), math.comb(n, p + 1)))
    for j, Jt in enumerate(cp):
        for m in range(p):
            for kl, (k, l) in enumerate(c2):
                # d theta^{J_m} contributes Theta^{J_m}_{kl} theta^k ^ theta^l in slot m (Leibniz sign)
                new = Jt[:m] + (k, l) + Jt[m + 1:]
                out, s = sort_sign(new)
                if s == 0:
                    continue
                mat[(j * p + m) * len(c2) + kl, idx[out]] += s * (-1) ** m
    return mat


@functools.lru_cache(maxsize=None)
def _anholonomy_operator(n: int, p: int):
    """``_anholonomy_matrix`` regrouped as (I * C2 + KL, J * C_{p+1} + out)."""
    cp = combos(n, p)
    c2 = len(combos(n, 2))
    mat = _anholonomy_matrix(n, p).reshape(len(cp), p, c2, -1)
    op = np.zeros((n, c2, len(cp), mat.shape[-1]))
    for j, Jt in enumerate(cp):
        for m in range(p):
            op[Jt[m], :, j, :] += mat[j, m]
    return op.reshape(n * c2, -1)


def frame_ext_d(coeffs: np.ndarray, frame_grad: np.ndarray, anholonomy: np.ndarray, degree: int) -> np.ndarray:
    """Frame components of d a for a = a_J theta^J.

    Parameters
    ----------
    coeffs : (..., C_p) frame components a_J.
    frame_grad : (..., C_p, n) frame derivatives e_K(a_J).
    anholonomy : (..., n, n, n) with d theta^I = 1/2 Theta^I_KL theta^K ^ theta^L.
    degree : degree p of a.
    """
    n = anholonomy.shape[-1]
    p = degree
    out = frame_grad.reshape(frame_grad.shape[:-2] + (-1,)) @ _d_matrix(n, p)
    if p == 0:
        return out
    extra = coeffs.ndim - 1 - (anholonomy.ndim - 3)
    c2 = np.array(combos(n, 2))
    if extra > 0:  # stacked forms sharing one frame: build the per-point operator once
        th = anholonomy[..., c2[:, 0], c2[:, 1]].reshape(anholonomy.shape[:-3] + (-1,))
        op = (th @ _anholonomy_operator(n, p)).reshape(th.shape[:-1] + (math.comb(n, p), -1))
        op = op.reshape(op.shape[:-2] + (1,) * extra + op.shape[-2:])
        return out + (coeffs[..., None, :] @ op)[..., 0, :]
    cp = np.array(combos(n, p))
    th = anholonomy[..., c2[:, 0], c2[:, 1]]  # (..., I, KL)
    gathered = th[..., cp, :]  # (..., J, m, KL)
    prod = coeffs[..., :, None, None] * gathered
    return out + np.einsum("...l,lc->...c", prod.reshape(prod.shape[:-3] + (-1,)), _anholonomy_matrix(n, p))


def frame_wedge(a: np.ndarray, p: int, b: np.ndarray, q: int, n: int) -> np.ndarray:
    """Wedge of frame-component arrays of degrees p and q."""
    if p + q > n:
        return np.zeros(np.broadcast_shapes(a.shape[:-1], b.shape[:-1]) + (0,))
    ia, ib, mat = _wedge_matrix(n, p, q)
    return np.einsum("...l,lc->...c", a[..., ia] * b[..., ib], mat)
