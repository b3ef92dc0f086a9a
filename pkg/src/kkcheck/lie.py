"""Lie algebras given by structure constants, and the groups we integrate them to.

Conventions: ``c[k, i, j]`` is ``c^k_ij`` with ``[t_i, t_j] = c^k_ij t_k`` and
``k_metric[i, j]`` is an ad-invariant scalar product.  Catalog algebras carry
an exact copy of their constants as integer arrays ``(P + Q*sqrt(3)) / D`` so
that the invariants can be checked in exact arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

SQRT3 = np.sqrt(3.0)


class LieInputError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ExactConstants:
    """Structure constants as ``(rational + irrational * sqrt(3)) / denom`` with integer arrays."""

    rational: np.ndarray
    irrational: np.ndarray
    denom: int

    def to_float(self) -> np.ndarray:
        return (self.rational + self.irrational * SQRT3) / self.denom


@dataclass(frozen=True, eq=False)
class LieAlgebraData:
    name: str
    c: np.ndarray
    k_metric: np.ndarray
    exact: ExactConstants | None = field(default=None, repr=False)

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        k = np.asarray(self.k_metric, dtype=float)
        r = c.shape[0] if c.ndim == 3 else -1
        if c.ndim != 3 or c.shape != (r, r, r):
            raise LieInputError(f"structure constants must have shape (r, r, r), got {c.shape}")
        if k.shape != (r, r):
            raise LieInputError(f"metric must be {r}x{r}, got {k.shape}")
        if not np.allclose(k, k.T, atol=1e-14):
            raise LieInputError("metric must be symmetric")
        if r and np.linalg.eigvalsh(k).min() <= 0:
            raise LieInputError("metric must be positive definite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "k_metric", k)

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    @property
    def k_inverse(self) -> np.ndarray:
        return np.linalg.inv(self.k_metric)

    def with_metric(self, k_metric) -> "LieAlgebraData":
        return LieAlgebraData(self.name, self.c, np.asarray(k_metric, dtype=float), self.exact)


def _exact_from_int(c_int: np.ndarray) -> ExactConstants:
    c_int = np.asarray(c_int, dtype=np.int64)
    return ExactConstants(c_int, np.zeros_like(c_int), 1)


def u1() -> LieAlgebraData:
    c = np.zeros((1, 1, 1), dtype=np.int64)
    return LieAlgebraData("u1", c.astype(float), np.eye(1), _exact_from_int(c))


def levi_civita(n: int) -> np.ndarray:
    eps = np.zeros((n,) * n, dtype=np.int64)
    for perm in _permutations(n):
        eps[perm] = _perm_sign(perm)
    return eps


def _permutations(n):
    import itertools
    return itertools.permutations(range(n))


def _perm_sign(perm) -> int:
    perm = list(perm)
    sign = 1
    for i in range(len(perm)):
        while perm[i] != i:
            j = perm[i]
            perm[i], perm[j] = perm[j], perm[i]
            sign = -sign
    return sign


def su2(k_metric=None) -> LieAlgebraData:
    """su(2) with ``c^k_ij = eps_ijk`` (basis ``t_i = -i sigma_i / 2``)."""
    eps = levi_civita(3)
    c = np.transpose(eps, (2, 0, 1)).copy()  # c[k, i, j] = eps[i, j, k]
    k = np.eye(3) if k_metric is None else np.asarray(k_metric, dtype=float)
    return LieAlgebraData("su2", c.astype(float), k, _exact_from_int(c))


# Totally antisymmetric f_abc of su(3), 1-based Gell-Mann labels.
# Each entry: (a, b, c, rational numerator, sqrt3 numerator) over denominator 2.
_SU3_F = [
    (1, 2, 3, 2, 0),
    (1, 4, 7, 1, 0),
    (1, 5, 6, -1, 0),
    (2, 4, 6, 1, 0),
    (2, 5, 7, 1, 0),
    (3, 4, 5, 1, 0),
    (3, 6, 7, -1, 0),
    (4, 5, 8, 0, 1),
    (6, 7, 8, 0, 1),
]


def su3(k_metric=None) -> LieAlgebraData:
    """su(3) in the basis ``t_a = -i lambda_a / 2`` so that ``c^c_ab = f_abc``."""
    rat = np.zeros((8, 8, 8), dtype=np.int64)
    irr = np.zeros((8, 8, 8), dtype=np.int64)
    for a, b, cc, p, q in _SU3_F:
        idx = (a - 1, b - 1, cc - 1)
        for perm in _permutations(3):
            sgn = _perm_sign(perm)
            i, j, k = (idx[perm[0]], idx[perm[1]], idx[perm[2]])
            # store as c[k, i, j] = f_ijk
            rat[k, i, j] = sgn * p
            irr[k, i, j] = sgn * q
    exact = ExactConstants(rat, irr, 2)
    k = np.eye(8) if k_metric is None else np.asarray(k_metric, dtype=float)
    return LieAlgebraData("su3", exact.to_float(), k, exact)


def direct_sum(*algs: LieAlgebraData) -> LieAlgebraData:
    if not algs:
        raise LieInputError("direct sum of nothing")
    r = sum(a.dim for a in algs)
    c = np.zeros((r, r, r))
    off = 0
    exact_ok = all(a.exact is not None for a in algs)
    if exact_ok:
        denom = int(np.lcm.reduce([a.exact.denom for a in algs]))
        rat = np.zeros((r, r, r), dtype=np.int64)
        irr = np.zeros((r, r, r), dtype=np.int64)
    for a in algs:
        s = slice(off, off + a.dim)
        c[s, s, s] = a.c
        if exact_ok:
            scale = denom // a.exact.denom
            rat[s, s, s] = a.exact.rational * scale
            irr[s, s, s] = a.exact.irrational * scale
        off += a.dim
    k = block_diag(*[a.k_metric for a in algs])
    exact = ExactConstants(rat, irr, denom) if exact_ok else None
    return LieAlgebraData("+".join(a.name for a in algs), c, k, exact)


CATALOG = {
    "u1": u1,
    "su2": su2,
    "su3": su3,
    "u1+su2": lambda: direct_sum(u1(), su2()),
    "u1+su2+su3": lambda: direct_sum(u1(), su2(), su3()),
}


def catalog(tag: str) -> LieAlgebraData:
    try:
        return CATALOG[tag]()
    except KeyError:
        raise LieInputError(f"unknown algebra {tag!r}; choose from {sorted(CATALOG)}") from None


# ---------------------------------------------------------------------------
# invariants

def _check_shape(alg: LieAlgebraData):
    r = alg.dim
    if alg.c.shape != (r, r, r):
        raise LieInputError("structure constants have inconsistent shape")


def _exact_bilinear(spec: str, ex: ExactConstants):
    """Evaluate a bilinear contraction of c with itself in Z[sqrt 3]; returns (rat, irr, denom^2)."""
    p, q = ex.rational, ex.irrational
    rat = np.einsum(spec, p, p) + 3 * np.einsum(spec, q, q)
    irr = np.einsum(spec, p, q) + np.einsum(spec, q, p)
    return rat, irr, ex.denom ** 2


def _exact_abs_max(rat, irr, denom) -> float:
    vals = (rat + irr * SQRT3) / denom
    exact_zero = (rat == 0) & (irr == 0)
    vals = np.where(exact_zero, 0.0, np.abs(vals))
    return float(vals.max()) if vals.size else 0.0


def jacobi_residual(alg: LieAlgebraData) -> float:
    """max |c^m_il c^l_jk + c^m_jl c^l_ki + c^m_kl c^l_ij| over all m, i, j, k."""
    _check_shape(alg)
    if alg.exact is not None:
        spec = "mil,ljk->mijk"
        rat, irr, den = _exact_bilinear(spec, alg.exact)
        tot_r = rat + rat.transpose(0, 2, 3, 1) + rat.transpose(0, 3, 1, 2)
        tot_i = irr + irr.transpose(0, 2, 3, 1) + irr.transpose(0, 3, 1, 2)
        return _exact_abs_max(tot_r, tot_i, den)
    c = alg.c
    t = np.einsum("mil,ljk->mijk", c, c)
    tot = t + t.transpose(0, 2, 3, 1) + t.transpose(0, 3, 1, 2)
    return float(np.abs(tot).max())


def unimodularity_residual(alg: LieAlgebraData) -> float:
    """max over j of |sum_i c^i_ij|."""
    if alg.exact is not None:
        ex = alg.exact
        rat = np.einsum("iij->j", ex.rational)
        irr = np.einsum("iij->j", ex.irrational)
        return _exact_abs_max(rat, irr, ex.denom)
    return float(np.abs(np.einsum("iij->j", alg.c)).max())


def killing_form(alg: LieAlgebraData) -> np.ndarray:
    """B_jk = sum_{m,n} c^m_jn c^n_km."""
    b = np.einsum("mjn,nkm->jk", alg.c, alg.c)
    return 0.5 * (b + b.T)


def killing_contraction(alg: LieAlgebraData) -> float:
    """<B, k> = 1/2 c^i_lk c^l_ij k^jk, cross-checked against 1/2 B_jk k^jk."""
    try:
        kinv = np.linalg.inv(alg.k_metric)
    except np.linalg.LinAlgError:
        raise LieInputError("metric is singular") from None
    val = 0.5 * np.einsum("ilk,lij,jk->", alg.c, alg.c, kinv)
    alt = 0.5 * np.einsum("jk,jk->", killing_form(alg), kinv)
    if abs(val - alt) > 1e-12 * max(1.0, abs(val)):
        raise ArithmeticError(f"Killing contraction mismatch: {val} vs {alt}")
    return float(val)


def ad_invariance_residual(alg: LieAlgebraData) -> float:
    """max over i, j, m of |k_ml c^l_ij + k_jl c^l_im|."""
    k = alg.k_metric
    t = np.einsum("ml,lij->mij", k, alg.c)
    tot = t + np.einsum("jl,lim->mij", k, alg.c)
    return float(np.abs(tot).max()) if tot.size else 0.0


# ---------------------------------------------------------------------------
# groups

PAULI = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)
SU2_BASIS = -0.5j * PAULI


@dataclass(frozen=True, eq=False)
class GroupElement:
    """Element of U(1), SU(2) or a product of those.

    ``params`` is an angle for ``u1``, a unit quaternion ``(w, x, y, z)`` for
    ``su2`` and a tuple of GroupElements for ``product``.
    """

    tag: str
    params: object

    def __post_init__(self):
        if self.tag == "u1":
            object.__setattr__(self, "params", float(np.mod(self.params, 2 * np.pi)))
        elif self.tag == "su2":
            q = np.asarray(self.params, dtype=float)
            if q.shape != (4,):
                raise LieInputError("su2 element needs a quaternion of 4 reals")
            if abs(np.linalg.norm(q) - 1.0) > 1e-12:
                raise LieInputError("su2 element must be a unit quaternion")
            object.__setattr__(self, "params", q)
        elif self.tag == "product":
            object.__setattr__(self, "params", tuple(self.params))
        else:
            raise LieInputError(f"unknown group tag {self.tag!r}")

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        if self.tag != other.tag:
            raise LieInputError("group mismatch")
        if self.tag == "u1":
            return GroupElement("u1", self.params + other.params)
        if self.tag == "su2":
            return GroupElement("su2", quat_normalize(quat_mul(self.params, other.params)))
        return GroupElement("product", [a @ b for a, b in zip(self.params, other.params)])

    def matrix(self) -> np.ndarray:
        """Defining representation (1x1 phase or 2x2 SU(2) matrix)."""
        if self.tag == "u1":
            return np.array([[np.exp(1j * self.params)]])
        if self.tag == "su2":
            w, x, y, z = self.params
            return w * np.eye(2) - 1j * (x * PAULI[0] + y * PAULI[1] + z * PAULI[2])
        raise LieInputError("product elements have no single defining matrix")


def identity(alg_tag: str) -> GroupElement:
    if alg_tag == "u1":
        return GroupElement("u1", 0.0)
    if alg_tag == "su2":
        return GroupElement("su2", [1.0, 0.0, 0.0, 0.0])
    raise LieInputError(f"no group element type for {alg_tag!r}")


def quat_mul(p, q):
    """Hamilton product of quaternions stored as ``(..., 4)`` arrays or jets lists."""
    pw, px, py, pz = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    qw, qx, qy, qz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ], axis=-1)


def quat_conj(q):
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q):
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_exp(xi, t=1.0):
    """exp(t * xi^i t_i) as a unit quaternion; ``t_i`` acts as half a unit imaginary quaternion."""
    xi = np.asarray(xi, dtype=float)
    t = np.asarray(t, dtype=float)
    norm = np.linalg.norm(xi)
    ang = 0.5 * t * norm
    if norm == 0:
        out = np.zeros(np.shape(t) + (4,))
        out[..., 0] = 1.0
        return out
    axis = xi / norm
    return np.concatenate([np.cos(ang)[..., None], np.sin(ang)[..., None] * axis], axis=-1)


def rotation_from_quat(q) -> np.ndarray:
    """Rotation matrix R with q v q^-1 = R v for imaginary v (works on batches)."""
    w, x, y, z = (q[..., i] for i in range(4))
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def adjoint_matrix(g: GroupElement, alg: LieAlgebraData) -> np.ndarray:
    """Matrix S with g t_j g^-1 = S^i_j t_i, computed in the defining representation."""
    if g.tag == "u1":
        if alg.dim != 1:
            raise LieInputError("u1 element needs a 1-dimensional algebra")
        return np.eye(1)
    if g.tag == "su2":
        if alg.dim != 3:
            raise LieInputError("su2 element needs a 3-dimensional algebra")
        m = g.matrix()
        minv = m.conj().T
        s = np.empty((3, 3))
        for j in range(3):
            conj = m @ SU2_BASIS[j] @ minv
            # tr(t_i t_j) = -delta_ij / 2
            for i in range(3):
                s[i, j] = (-2.0 * np.trace(SU2_BASIS[i] @ conj)).real
        return s
    blocks = []
    off = 0
    for sub in g.params:
        d = 1 if sub.tag == "u1" else 3
        sub_alg = LieAlgebraData("block", alg.c[off:off + d, off:off + d, off:off + d],
                                 alg.k_metric[off:off + d, off:off + d])
        blocks.append(adjoint_matrix(sub, sub_alg))
        off += d
    if off != alg.dim:
        raise LieInputError("product element does not match algebra dimension")
    return block_diag(*blocks)


def random_su2(rng: np.random.Generator, size=None) -> np.ndarray:
    """Haar-uniform unit quaternions."""
    shape = (4,) if size is None else (size, 4)
    q = rng.standard_normal(shape)
    return quat_normalize(q)


def lambda_effective(lambda0: float, alg: LieAlgebraData) -> float:
    """Effective cosmological constant Lambda0 + <B, k> / 4."""
    return float(lambda0 + 0.25 * killing_contraction(alg))
