"""Truncated multivariate Taylor arithmetic.

A :class:`JetArray` stores, for every entry of an array of scalar fields,
the Taylor coefficients ``c_alpha = d^alpha f / alpha!`` around a base point,
for all multi-indices ``alpha`` of total degree up to ``order``.  Leading axes
are ordinary array axes (typically a batch of base points followed by tensor
indices); the trailing axis runs over monomials.

Monomials are sorted by total degree, so the basis of order ``k`` is a prefix
of the basis of any higher order.  Truncation is a slice and derivatives map
coefficients into the lower-order basis without re-indexing.
"""

from __future__ import annotations

import functools
import itertools
import math
import string
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class JetBasis:
    nvars: int
    order: int
    monomials: np.ndarray
    pair_a: np.ndarray
    pair_b: np.ndarray
    pair_starts: np.ndarray
    deriv_src: tuple
    deriv_factor: tuple

    @property
    def size(self) -> int:
        return len(self.monomials)

    def size_of(self, order: int) -> int:
        return math.comb(self.nvars + order, order)


@functools.lru_cache(maxsize=None)
def jet_basis(nvars: int, order: int) -> JetBasis:
    monos = []
    for deg in range(order + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), deg):
            alpha = [0] * nvars
            for v in combo:
                alpha[v] += 1
            monos.append(tuple(alpha))
    index = {m: i for i, m in enumerate(monos)}
    triples = []
    for ia, a in enumerate(monos):
        for ib, b in enumerate(monos):
            s = tuple(x + y for x, y in zip(a, b))
            if sum(s) <= order:
                triples.append((index[s], ia, ib))
    triples.sort()
    out = np.array([t[0] for t in triples], dtype=np.intp)
    pa = np.array([t[1] for t in triples], dtype=np.intp)
    pb = np.array([t[2] for t in triples], dtype=np.intp)
    starts = np.searchsorted(out, np.arange(len(monos)))
    m_lower = math.comb(nvars + order - 1, order - 1) if order > 0 else 0
    deriv_src, deriv_factor = [], []
    for v in range(nvars):
        src, fac = [], []
        for beta in monos[:m_lower]:
            up = list(beta)
            up[v] += 1
            src.append(index[tuple(up)])
            fac.append(float(up[v]))
        deriv_src.append(np.array(src, dtype=np.intp))
        deriv_factor.append(np.array(fac))
    return JetBasis(nvars, order, np.array(monos, dtype=int).reshape(len(monos), nvars),
                    pa, pb, starts, tuple(deriv_src), tuple(deriv_factor))


def _free_letter(spec: str) -> str:
    for ch in string.ascii_letters:
        if ch not in spec:
            return ch
    raise ValueError("einsum spec uses every letter")


class JetArray:
    """Array of truncated Taylor expansions sharing one set of variables."""

    __array_ufunc__ = None

    def __init__(self, coeffs, nvars: int, order: int):
        self.c = np.asarray(coeffs, dtype=float)
        self.nvars = nvars
        self.order = order
        if self.c.shape[-1] != math.comb(nvars + order, order):
            raise ValueError("coefficient axis does not match the jet basis")

    @property
    def basis(self) -> JetBasis:
        return jet_basis(self.nvars, self.order)

    @property
    def shape(self):
        return self.c.shape[:-1]

    @property
    def ndim(self):
        return self.c.ndim - 1

    @property
    def value(self) -> np.ndarray:
        return self.c[..., 0]

    def __repr__(self):
        return f"JetArray(shape={self.shape}, nvars={self.nvars}, order={self.order})"

    def _wrap(self, c, order=None):
        return JetArray(c, self.nvars, self.order if order is None else order)

    def truncate(self, order: int) -> "JetArray":
        if order >= self.order:
            return self
        return self._wrap(self.c[..., :math.comb(self.nvars + order, order)], order)

    # -- indexing / shape --------------------------------------------------
    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        return self._wrap(self.c[key + (slice(None),)])

    def __len__(self):
        return self.shape[0]

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return self._wrap(self.c.reshape(tuple(shape) + (self.c.shape[-1],)))

    def moveaxis(self, src, dst):
        nd = self.ndim
        src = src % nd
        dst = dst % nd
        return self._wrap(np.moveaxis(self.c, src, dst))

    def swapaxes(self, a, b):
        nd = self.ndim
        return self._wrap(np.swapaxes(self.c, a % nd, b % nd))

    def sum(self, axis):
        axis = axis % self.ndim if isinstance(axis, int) else tuple(a % self.ndim for a in axis)
        return self._wrap(self.c.sum(axis=axis))

    def copy(self):
        return self._wrap(self.c.copy())

    # -- arithmetic ----------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, JetArray):
            if other.nvars != self.nvars:
                raise ValueError("jets over different variables")
            order = min(self.order, other.order)
            return self.truncate(order), other.truncate(order)
        return self, other

    def __add__(self, other):
        if isinstance(other, JetArray):
            a, b = self._coerce(other)
            return a._wrap(a.c + b.c)
        other = np.asarray(other, dtype=float)
        c = np.broadcast_to(self.c, np.broadcast_shapes(self.c.shape, other.shape + (1,))).copy()
        c[..., 0] += other
        return self._wrap(c)

    __radd__ = __add__

    def __neg__(self):
        return self._wrap(-self.c)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, JetArray):
            a, b = self._coerce(other)
            if a.order == 1:
                a0, b0 = a.c[..., :1], b.c[..., :1]
                out = a.c * b0 + a0 * b.c
                out[..., 0] = a0[..., 0] * b0[..., 0]
                return a._wrap(out)
            bas = a.basis
            prod = a.c[..., bas.pair_a] * b.c[..., bas.pair_b]
            return a._wrap(np.add.reduceat(prod, bas.pair_starts, axis=-1))
        other = np.asarray(other, dtype=float)
        return self._wrap(self.c * other[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, JetArray):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, (int, np.integer)) and p >= 0:
            out = ones_like(self)
            for _ in range(int(p)):
                out = out * self
            return out
        return self.power(float(p))

    # -- elementary functions -----------------------------------------------
    def _series(self, coefs):
        """Compose with a scalar function given its Taylor coefficients at the value."""
        h = self._wrap(self.c.copy())
        h.c[..., 0] = 0.0
        out = self._wrap(np.zeros_like(self.c))
        out.c[..., 0] = coefs[0]
        hp = h
        for k in range(1, self.order + 1):
            out = out + hp * coefs[k]
            if k < self.order:
                hp = hp * h
        return out

    def sin(self):
        v = self.value
        cyc = [np.sin(v), np.cos(v), -np.sin(v), -np.cos(v)]
        return self._series([cyc[k % 4] / math.factorial(k) for k in range(self.order + 1)])

    def cos(self):
        v = self.value
        cyc = [np.cos(v), -np.sin(v), -np.cos(v), np.sin(v)]
        return self._series([cyc[k % 4] / math.factorial(k) for k in range(self.order + 1)])

    def exp(self):
        e = np.exp(self.value)
        return self._series([e / math.factorial(k) for k in range(self.order + 1)])

    def log(self):
        v = self.value
        coefs = [np.log(v)] + [(-1.0) ** (k + 1) / (k * v ** k) for k in range(1, self.order + 1)]
        return self._series(coefs)

    def power(self, p: float):
        v = self.value
        coefs = []
        binom = 1.0
        for k in range(self.order + 1):
            coefs.append(binom * v ** (p - k))
            binom *= (p - k) / (k + 1)
        return self._series(coefs)

    def reciprocal(self):
        v = self.value
        return self._series([(-1.0) ** k / v ** (k + 1) for k in range(self.order + 1)])

    def sqrt(self):
        return self.power(0.5)

    # -- calculus ------------------------------------------------------------
    def d(self, var: int) -> "JetArray":
        """Partial derivative along variable ``var``; the order drops by one."""
        if self.order == 0:
            raise ValueError("cannot differentiate an order-0 jet")
        bas = self.basis
        return self._wrap(self.c[..., bas.deriv_src[var]] * bas.deriv_factor[var], self.order - 1)

    def grad(self) -> "JetArray":
        """Stack of all first partials along a new trailing array axis."""
        parts = [self.d(v).c for v in range(self.nvars)]
        return JetArray(np.stack(parts, axis=-2), self.nvars, self.order - 1)

    def derivative(self, alpha) -> np.ndarray:
        """Value of the mixed partial ``d^alpha f`` at the base point."""
        alpha = tuple(int(a) for a in alpha)
        if sum(alpha) > self.order:
            raise ValueError("derivative exceeds jet order")
        monos = self.basis.monomials
        idx = int(np.nonzero((monos == np.array(alpha)).all(axis=1))[0][0])
        return self.c[..., idx] * float(np.prod([math.factorial(a) for a in alpha]))


# ---------------------------------------------------------------------------
# construction helpers

def variables(points, order: int) -> JetArray:
    """Jets of the coordinate functions at a batch of points, shape ``(..., n)``."""
    points = np.asarray(points, dtype=float)
    n = points.shape[-1]
    m = math.comb(n + order, order)
    c = np.zeros(points.shape + (m,))
    c[..., 0] = points
    if order > 0:
        for v in range(n):
            c[..., v, 1 + v] = 1.0
    return JetArray(c, n, order)


def constant(value, like: JetArray) -> JetArray:
    value = np.asarray(value, dtype=float)
    c = np.zeros(value.shape + (like.c.shape[-1],))
    c[..., 0] = value
    return JetArray(c, like.nvars, like.order)


def zeros(shape, like: JetArray) -> JetArray:
    return JetArray(np.zeros(tuple(shape) + (like.c.shape[-1],)), like.nvars, like.order)


def ones_like(a: JetArray) -> JetArray:
    return constant(np.ones(a.shape), a)


def as_jet(x, like: JetArray) -> JetArray:
    if isinstance(x, JetArray):
        return x.truncate(like.order) if x.order > like.order else x
    return constant(x, like)


def stack(items, axis: int = 0, like: JetArray | None = None) -> JetArray:
    """Stack jets (or plain numbers broadcast against them) along a new axis."""
    ref = like
    for it in items:
        if isinstance(it, JetArray):
            if ref is None or it.order < ref.order:
                ref = it
    if ref is None:
        raise ValueError("stack needs at least one JetArray or a template")
    jets = [as_jet(it, ref).truncate(ref.order) for it in items]
    shape = np.broadcast_shapes(*[j.shape for j in jets])
    cs = [np.broadcast_to(j.c, shape + (j.c.shape[-1],)) for j in jets]
    nd = len(shape) + 1
    return JetArray(np.stack(cs, axis=axis % nd if axis < 0 else axis), ref.nvars, ref.order)


def einsum(spec: str, *operands):
    """``numpy.einsum`` over jets: at most two JetArray operands are multiplied."""
    jets = [op for op in operands if isinstance(op, JetArray)]
    if not jets:
        return np.einsum(spec, *operands)
    ins, out = spec.split("->")
    terms = ins.split(",")
    if len(jets) > 2:
        raise ValueError("einsum supports at most two jet operands")
    order = min(j.order for j in jets)
    nvars = jets[0].nvars
    bas = jet_basis(nvars, order)
    m = bas.size
    letter = _free_letter(spec)
    new_terms, args = [], []
    if len(jets) == 1:
        for t, op in zip(terms, operands):
            if isinstance(op, JetArray):
                new_terms.append(t + letter)
                args.append(op.truncate(order).c)
            else:
                new_terms.append(t)
                args.append(op)
        res = np.einsum(",".join(new_terms) + "->" + out + letter, *args, optimize=True)
        return JetArray(res, nvars, order)
    seen = 0
    for t, op in zip(terms, operands):
        if isinstance(op, JetArray):
            sel = bas.pair_a if seen == 0 else bas.pair_b
            seen += 1
            new_terms.append(t + letter)
            args.append(op.truncate(order).c[..., sel])
        else:
            new_terms.append(t)
            args.append(op)
    res = np.einsum(",".join(new_terms) + "->" + out + letter, *args, optimize=True)
    res = np.add.reduceat(res, bas.pair_starts, axis=-1)
    assert res.shape[-1] == m
    return JetArray(res, nvars, order)


def matmul(a, b):
    if isinstance(a, JetArray) and isinstance(b, JetArray) and min(a.order, b.order) == 1:
        a, b = a.truncate(1), b.truncate(1)
        ac, bc = np.moveaxis(a.c, -1, 0), np.moveaxis(b.c, -1, 0)
        out = ac[:1] @ bc + ac @ bc[:1]
        out[0] = ac[0] @ bc[0]
        return JetArray(np.moveaxis(out, 0, -1), a.nvars, 1)
    return einsum("...ij,...jk->...ik", a, b)


def inv(a):
    """Inverse of a batch of square jet matrices (trailing two axes)."""
    if not isinstance(a, JetArray):
        return np.linalg.inv(a)
    a0 = a.value
    det = np.linalg.det(a0)
    if not np.all(np.isfinite(det)) or np.any(np.abs(det) < 1e-300):
        raise np.linalg.LinAlgError("singular matrix in jet inverse")
    a0inv = np.linalg.inv(a0)
    nil = a.copy()
    nil.c[..., 0] = 0.0
    x = -einsum("...ij,...jk->...ik", a0inv, nil)
    out = constant(a0inv, a)
    term = out
    for _ in range(a.order):
        term = einsum("...ij,...jk->...ik", x, term)
        out = out + term
    return out


def value(x):
    return x.value if isinstance(x, JetArray) else np.asarray(x)


def sin(x):
    return x.sin() if isinstance(x, JetArray) else np.sin(x)


def cos(x):
    return x.cos() if isinstance(x, JetArray) else np.cos(x)


def exp(x):
    return x.exp() if isinstance(x, JetArray) else np.exp(x)


def sqrt(x):
    return x.sqrt() if isinstance(x, JetArray) else np.sqrt(x)
