"""Riemannian primitives for the feature manifolds used across the package.

Four families are supported, each in ambient coordinates:

* ``Euclidean(d)`` -- flat R^d.
* ``Sphere(d)``    -- unit vectors in R^{d+1}.
* ``Lorentz(d)``   -- hyperbolic space as the upper sheet of the hyperboloid
  <x, x>_L = -1 in R^{d+1}, Minkowski signature (+, ..., +, -); the last
  coordinate is the time coordinate and the origin is [0, ..., 0, 1].
* ``SPD(n)``       -- symmetric positive definite n-by-n matrices with the
  affine-invariant metric <X, Y>_p = tr(p^-1 X p^-1 Y).

Euclidean, Lorentz, and SPD are Hadamard spaces, so exp/log/dist are globally
defined; the sphere has a cut locus at the antipode, where ``log`` raises
``CutLocusError``.

All operations are pure, work in double precision, and accept stacked inputs
(leading batch axes).  Randomness always flows through a caller-supplied
``numpy.random.Generator``; there is no global RNG state.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

__all__ = [
    "ManifoldError",
    "CutLocusError",
    "NonConvergenceError",
    "Manifold",
    "Euclidean",
    "Sphere",
    "Lorentz",
    "SPD",
    "Isometry",
    "ManifoldPoint",
    "TangentVector",
    "inner",
    "norm",
    "exp",
    "log",
    "dist",
    "apply_isometry",
    "push_tangent",
    "frechet_mean",
    "random_point",
    "random_tangent",
    "random_isometry",
    "manifold_from_spec",
]

RngLike = Union[int, np.random.Generator]

POINT_ATOL = 1e-10
EIGVAL_FLOOR = 1e-12
ANTIPODE_TOL = 1e-8


class ManifoldError(Exception):
    """Base class for geometric failures."""


class CutLocusError(ManifoldError):
    """The logarithm was requested at (or too close to) a cut locus.

    ``where`` holds the flat indices of the offending pairs in a batched call;
    callers that know more context (edges, steps) re-raise with it attached.
    """

    def __init__(self, message: str, where: np.ndarray | None = None, **context):
        super().__init__(message)
        self.where = where
        self.context = context


class NonConvergenceError(ManifoldError):
    """An iterative geometric solver did not reach its tolerance."""


def _as_rng(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _haar_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    """Haar-distributed matrix in O(n); both components have probability 1/2."""
    a = rng.normal(size=(n, n))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


class Manifold(abc.ABC):
    """Common interface of the four manifold families.

    Points and tangent vectors are plain arrays whose trailing axes match
    ``point_shape``; all methods broadcast over leading axes.
    """

    kind: str

    @property
    @abc.abstractmethod
    def dim(self) -> int:
        """Intrinsic dimension."""

    @property
    @abc.abstractmethod
    def point_shape(self) -> tuple[int, ...]:
        """Trailing shape of the ambient representation."""

    @abc.abstractmethod
    def inner(self, p: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Riemannian inner product <x, y>_p."""

    @abc.abstractmethod
    def exp(self, p: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Endpoint of the geodesic leaving p with velocity x."""

    @abc.abstractmethod
    def log(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Inverse of exp; raises CutLocusError where undefined."""

    @abc.abstractmethod
    def dist(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Geodesic distance (always defined)."""

    @abc.abstractmethod
    def project_tangent(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Project an ambient vector onto the tangent space at p."""

    @abc.abstractmethod
    def check_point(self, p: np.ndarray, atol: float = POINT_ATOL) -> None:
        """Raise ValueError if p violates the point invariants."""

    @abc.abstractmethod
    def check_tangent(self, p: np.ndarray, x: np.ndarray, atol: float = POINT_ATOL) -> None:
        """Raise ValueError if x is not tangent at p."""

    @abc.abstractmethod
    def base_point(self) -> np.ndarray:
        """A canonical point (Lorentz origin, identity matrix, north pole, 0)."""

    @abc.abstractmethod
    def random_point(self, rng: RngLike, size: tuple[int, ...] = ()) -> np.ndarray:
        ...

    @abc.abstractmethod
    def random_isometry(self, rng: RngLike) -> "Isometry":
        ...

    @abc.abstractmethod
    def apply_isometry(self, iso: "Isometry", p: np.ndarray) -> np.ndarray:
        ...

    @abc.abstractmethod
    def push_tangent(self, iso: "Isometry", x: np.ndarray) -> np.ndarray:
        """Differential of the isometry applied to tangent coordinates."""

    @abc.abstractmethod
    def _compose(self, a: "Isometry", b: "Isometry") -> "Isometry":
        ...

    @abc.abstractmethod
    def _inverse(self, a: "Isometry") -> "Isometry":
        ...

    # -- damping bound for the mean iteration -------------------------------
    #
    # theta * cot_kappa(theta) upper-bounds the Hessian eigenvalues of
    # 0.5 * dist(., q)^2 along the geodesic to q; curvature_floor is a lower
    # bound on the sectional curvature.  Flat and positively curved spaces
    # keep the unit step.
    curvature_floor: float = 0.0

    def _hessian_bound(self, theta: np.ndarray) -> np.ndarray:
        k = -self.curvature_floor
        if k == 0.0:
            return np.ones_like(theta)
        s = np.sqrt(k) * theta
        return np.where(s > 1e-12, s / np.tanh(np.maximum(s, 1e-300)), 1.0)

    def norm(self, p: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.sqrt(np.maximum(self.inner(p, x, x), 0.0))

    def zero_tangent(self, p: np.ndarray) -> np.ndarray:
        return np.zeros_like(p)

    def random_tangent(self, rng: RngLike, p: np.ndarray, scale: float = 1.0) -> np.ndarray:
        """Tangent with i.i.d. normal coordinates of std ``scale`` in an
        orthonormal basis of T_pM, so its expected norm does not depend on
        where p sits in the ambient representation."""
        if scale <= 0:
            raise ValueError("scale must be positive")
        return self._random_tangent(_as_rng(rng), np.asarray(p, dtype=float), scale)

    @abc.abstractmethod
    def _random_tangent(self, rng: np.random.Generator, p: np.ndarray, scale: float) -> np.ndarray:
        ...

    # -- serialization helpers ----------------------------------------------

    def flatten_points(self, p: np.ndarray) -> np.ndarray:
        """Points as flat rows (row-major for matrices)."""
        p = np.asarray(p, dtype=float)
        lead = p.shape[: p.ndim - len(self.point_shape)]
        return p.reshape(lead + (int(np.prod(self.point_shape)),))

    def unflatten_points(self, flat: np.ndarray) -> np.ndarray:
        flat = np.asarray(flat, dtype=float)
        return flat.reshape(flat.shape[:-1] + self.point_shape)

    def spec(self) -> dict:
        return {"kind": self.kind, "dim": self.dim}

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return f"{type(self).__name__}({self.dim})"


@dataclass(frozen=True)
class Isometry:
    """A distance-preserving map of one manifold, in matrix form.

    Euclidean: x -> matrix @ x + shift with orthogonal matrix.
    Sphere:    x -> matrix @ x with orthogonal matrix.
    Lorentz:   x -> matrix @ x with an orthochronous Lorentz matrix.
    SPD:       p -> matrix @ p @ matrix.T with invertible matrix.
    """

    manifold: Manifold
    matrix: np.ndarray
    shift: np.ndarray | None = None

    def apply(self, p: np.ndarray) -> np.ndarray:
        return self.manifold.apply_isometry(self, p)

    def apply_tangent(self, x: np.ndarray) -> np.ndarray:
        return self.manifold.push_tangent(self, x)

    def compose(self, other: "Isometry") -> "Isometry":
        """self after other."""
        if self.manifold != other.manifold:
            raise ValueError("cannot compose isometries of different manifolds")
        return self.manifold._compose(self, other)

    def inverse(self) -> "Isometry":
        return self.manifold._inverse(self)


@dataclass(frozen=True, repr=False)
class Euclidean(Manifold):
    d: int

    kind = "euclidean"
    curvature_floor = 0.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")

    @property
    def dim(self) -> int:
        return self.d

    @property
    def point_shape(self) -> tuple[int, ...]:
        return (self.d,)

    def inner(self, p, x, y):
        return np.sum(np.asarray(x) * np.asarray(y), axis=-1)

    def exp(self, p, x):
        return np.asarray(p, dtype=float) + x

    def log(self, p, q):
        return np.asarray(q, dtype=float) - p

    def dist(self, p, q):
        return np.linalg.norm(np.asarray(q, dtype=float) - p, axis=-1)

    def project_tangent(self, p, v):
        return np.asarray(v, dtype=float)

    def check_point(self, p, atol=POINT_ATOL):
        p = np.asarray(p)
        if p.shape[-1:] != (self.d,):
            raise ValueError(f"expected trailing shape ({self.d},), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("point coordinates must be finite")

    def check_tangent(self, p, x, atol=POINT_ATOL):
        self.check_point(x, atol)

    def base_point(self):
        return np.zeros(self.d)

    def random_point(self, rng, size=()):
        return _as_rng(rng).normal(size=size + (self.d,))

    def _random_tangent(self, rng, p, scale):
        return rng.normal(scale=scale, size=np.shape(p))

    def random_isometry(self, rng):
        rng = _as_rng(rng)
        q = _haar_orthogonal(rng, self.d)
        b = rng.normal(size=self.d)
        return Isometry(self, q, b)

    def apply_isometry(self, iso, p):
        return np.asarray(p) @ iso.matrix.T + iso.shift

    def push_tangent(self, iso, x):
        return np.asarray(x) @ iso.matrix.T

    def _compose(self, a, b):
        return Isometry(self, a.matrix @ b.matrix, a.matrix @ b.shift + a.shift)

    def _inverse(self, a):
        return Isometry(self, a.matrix.T, -(a.matrix.T @ a.shift))


@dataclass(frozen=True, repr=False)
class Sphere(Manifold):
    d: int

    kind = "sphere"
    curvature_floor = 1.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")

    @property
    def dim(self) -> int:
        return self.d

    @property
    def point_shape(self) -> tuple[int, ...]:
        return (self.d + 1,)

    def _hessian_bound(self, theta):
        # Positive curvature only flattens the Hessian; keep the unit step.
        return np.ones_like(theta)

    def inner(self, p, x, y):
        return np.sum(np.asarray(x) * np.asarray(y), axis=-1)

    def exp(self, p, x):
        p = np.asarray(p, dtype=float)
        x = np.asarray(x, dtype=float)
        theta = np.linalg.norm(x, axis=-1, keepdims=True)
        q = np.cos(theta) * p + np.sinc(theta / np.pi) * x
        return q / np.linalg.norm(q, axis=-1, keepdims=True)

    def log(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        c = np.clip(np.sum(p * q, axis=-1), -1.0, 1.0)
        u = q - c[..., None] * p
        s = np.linalg.norm(u, axis=-1)
        theta = np.arctan2(s, c)
        bad = theta > np.pi - ANTIPODE_TOL
        if np.any(bad):
            raise CutLocusError(
                "logarithm undefined: point within antipodal tolerance",
                where=np.flatnonzero(bad),
            )
        factor = np.where(s > 1e-15, theta / np.where(s > 1e-15, s, 1.0), 1.0)
        return factor[..., None] * u

    def dist(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        c = np.clip(np.sum(p * q, axis=-1), -1.0, 1.0)
        s = np.linalg.norm(q - c[..., None] * p, axis=-1)
        return np.arctan2(s, c)

    def project_tangent(self, p, v):
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        return v - np.sum(p * v, axis=-1, keepdims=True) * p

    def check_point(self, p, atol=POINT_ATOL):
        p = np.asarray(p)
        if p.shape[-1:] != (self.d + 1,):
            raise ValueError(f"expected trailing shape ({self.d + 1},), got {p.shape}")
        err = np.abs(np.linalg.norm(p, axis=-1) - 1.0)
        if np.any(err > atol):
            raise ValueError(f"point not on unit sphere (|norm-1| up to {err.max():.2e})")

    def check_tangent(self, p, x, atol=POINT_ATOL):
        err = np.abs(np.sum(np.asarray(p) * np.asarray(x), axis=-1))
        if np.any(err > atol):
            raise ValueError(f"vector not tangent (|<p,x>| up to {err.max():.2e})")

    def base_point(self):
        e = np.zeros(self.d + 1)
        e[-1] = 1.0
        return e

    def random_point(self, rng, size=()):
        v = _as_rng(rng).normal(size=size + (self.d + 1,))
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    def _random_tangent(self, rng, p, scale):
        # noise in T_{north pole}, reflected to T_p by the Householder map
        # that exchanges the north pole with p (an isometry of the sphere)
        v = rng.normal(scale=scale, size=p.shape[:-1] + (self.d + 1,))
        v[..., -1] = 0.0
        pole = self.base_point()
        u = pole - p
        un2 = np.sum(u * u, axis=-1, keepdims=True)
        coef = np.where(un2 > 1e-24, 2.0 * np.sum(u * v, axis=-1, keepdims=True) / np.where(un2 > 1e-24, un2, 1.0), 0.0)
        return v - coef * u

    def random_isometry(self, rng):
        return Isometry(self, _haar_orthogonal(_as_rng(rng), self.d + 1))

    def apply_isometry(self, iso, p):
        return np.asarray(p) @ iso.matrix.T

    def push_tangent(self, iso, x):
        return np.asarray(x) @ iso.matrix.T

    def _compose(self, a, b):
        return Isometry(self, a.matrix @ b.matrix)

    def _inverse(self, a):
        return Isometry(self, a.matrix.T)


def _minkowski(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sum(x[..., :-1] * y[..., :-1], axis=-1) - x[..., -1] * y[..., -1]


@dataclass(frozen=True, repr=False)
class Lorentz(Manifold):
    d: int

    kind = "lorentz"
    curvature_floor = -1.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")

    @property
    def dim(self) -> int:
        return self.d

    @property
    def point_shape(self) -> tuple[int, ...]:
        return (self.d + 1,)

    def minkowski(self, x, y):
        return _minkowski(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def inner(self, p, x, y):
        return self.minkowski(x, y)

    def exp(self, p, x):
        p = np.asarray(p, dtype=float)
        x = np.asarray(x, dtype=float)
        n = np.sqrt(np.maximum(_minkowski(x, x), 0.0))
        fac = np.where(n > 1e-15, np.sinh(np.maximum(n, 1e-300)) / np.maximum(n, 1e-300), 1.0)
        q = np.cosh(n)[..., None] * p + fac[..., None] * x
        # renormalize onto the hyperboloid; drift accumulates over long flows
        scale = np.sqrt(np.maximum(-_minkowski(q, q), 1e-300))
        return q / scale[..., None]

    def log(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        b = -_minkowski(p, q)
        u = q - b[..., None] * p
        # |u|_L = sinh(dist); the arcsinh route is well conditioned near 0
        s = np.sqrt(np.maximum(_minkowski(u, u), 0.0))
        fac = np.where(s > 1e-15, np.arcsinh(np.maximum(s, 1e-300)) / np.maximum(s, 1e-300), 1.0)
        return fac[..., None] * u

    def dist(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        b = -_minkowski(p, q)
        u = q - b[..., None] * p
        s = np.sqrt(np.maximum(_minkowski(u, u), 0.0))
        return np.arcsinh(s)

    def project_tangent(self, p, v):
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        return v + _minkowski(p, v)[..., None] * p

    def check_point(self, p, atol=POINT_ATOL):
        p = np.asarray(p)
        if p.shape[-1:] != (self.d + 1,):
            raise ValueError(f"expected trailing shape ({self.d + 1},), got {p.shape}")
        err = np.abs(_minkowski(p, p) + 1.0)
        if np.any(err > atol):
            raise ValueError(f"point not on hyperboloid (|<x,x>+1| up to {err.max():.2e})")
        if np.any(p[..., -1] <= 0):
            raise ValueError("point not on the future sheet (last coordinate <= 0)")

    def check_tangent(self, p, x, atol=POINT_ATOL):
        err = np.abs(_minkowski(np.asarray(p, dtype=float), np.asarray(x, dtype=float)))
        if np.any(err > atol):
            raise ValueError(f"vector not tangent (|<p,x>_L| up to {err.max():.2e})")

    def base_point(self):
        o = np.zeros(self.d + 1)
        o[-1] = 1.0
        return o

    def random_point(self, rng, size=()):
        z = _as_rng(rng).normal(size=size + (self.d,))
        t = np.sqrt(1.0 + np.sum(z * z, axis=-1, keepdims=True))
        return np.concatenate([z, t], axis=-1)

    def _random_tangent(self, rng, p, scale):
        # noise in T_o pushed to T_p by the transvection mapping o to p;
        # projecting ambient noise instead would blow up Minkowski norms far
        # from the origin
        v = rng.normal(scale=scale, size=p.shape[:-1] + (self.d,))
        z, t = p[..., :-1], p[..., -1:]
        zn = np.linalg.norm(z, axis=-1, keepdims=True)
        zh = np.where(zn > 1e-24, z / np.where(zn > 1e-24, zn, 1.0), 0.0)
        radial = np.sum(zh * v, axis=-1, keepdims=True)
        spatial = v + (t - 1.0) * radial * zh
        time = np.sum(z * v, axis=-1, keepdims=True)
        return np.concatenate([spatial, time], axis=-1)

    def random_isometry(self, rng):
        rng = _as_rng(rng)
        rot = np.zeros((self.d + 1, self.d + 1))
        rot[: self.d, : self.d] = _haar_orthogonal(rng, self.d)
        rot[-1, -1] = 1.0
        # transvection moving the origin to a random point (z, t)
        target = self.random_point(rng)
        z, t = target[:-1], target[-1]
        boost = np.zeros((self.d + 1, self.d + 1))
        zn = np.linalg.norm(z)
        zh = z / zn if zn > 0 else z
        boost[: self.d, : self.d] = np.eye(self.d) + (t - 1.0) * np.outer(zh, zh)
        boost[: self.d, -1] = z
        boost[-1, : self.d] = z
        boost[-1, -1] = t
        return Isometry(self, boost @ rot)

    def apply_isometry(self, iso, p):
        return np.asarray(p) @ iso.matrix.T

    def push_tangent(self, iso, x):
        return np.asarray(x) @ iso.matrix.T

    def _compose(self, a, b):
        return Isometry(self, a.matrix @ b.matrix)

    def _inverse(self, a):
        # J Q^T J inverts a Lorentz matrix exactly
        j = np.ones(self.d + 1)
        j[-1] = -1.0
        return Isometry(self, (a.matrix.T * j[None, :]) * j[:, None])


def _sym(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + np.swapaxes(x, -1, -2))


def _eig_apply(m: np.ndarray, fn) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    return (v * fn(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


@dataclass(frozen=True, repr=False)
class SPD(Manifold):
    n: int

    kind = "spd"
    # sectional curvature of the affine-invariant metric lies in [-1/2, 0]
    curvature_floor = -0.5

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("matrix size must be >= 2")

    @property
    def dim(self) -> int:
        return self.n * (self.n + 1) // 2

    @property
    def point_shape(self) -> tuple[int, ...]:
        return (self.n, self.n)

    def inner(self, p, x, y):
        a = np.linalg.solve(p, x)
        b = np.linalg.solve(p, y)
        return np.einsum("...ij,...ji->...", a, b)

    def _sqrt_pair(self, p):
        w, v = np.linalg.eigh(_sym(np.asarray(p, dtype=float)))
        w = np.maximum(w, EIGVAL_FLOOR)
        s = (v * np.sqrt(w)[..., None, :]) @ np.swapaxes(v, -1, -2)
        si = (v * (1.0 / np.sqrt(w))[..., None, :]) @ np.swapaxes(v, -1, -2)
        return s, si

    def exp(self, p, x):
        s, si = self._sqrt_pair(p)
        inner = _sym(si @ _sym(np.asarray(x, dtype=float)) @ si)
        return _sym(s @ _eig_apply(inner, np.exp) @ s)

    def log(self, p, q):
        s, si = self._sqrt_pair(p)
        inner = _sym(si @ np.asarray(q, dtype=float) @ si)
        safe_log = lambda w: np.log(np.maximum(w, EIGVAL_FLOOR))
        return _sym(s @ _eig_apply(inner, safe_log) @ s)

    def dist(self, p, q):
        _, si = self._sqrt_pair(p)
        w = np.linalg.eigvalsh(_sym(si @ np.asarray(q, dtype=float) @ si))
        return np.sqrt(np.sum(np.log(np.maximum(w, EIGVAL_FLOOR)) ** 2, axis=-1))

    def project_tangent(self, p, v):
        return _sym(np.asarray(v, dtype=float))

    def check_point(self, p, atol=POINT_ATOL):
        p = np.asarray(p)
        if p.shape[-2:] != (self.n, self.n):
            raise ValueError(f"expected trailing shape ({self.n},{self.n}), got {p.shape}")
        asym = np.abs(p - np.swapaxes(p, -1, -2)).max()
        if asym > atol:
            raise ValueError(f"matrix not symmetric (asymmetry {asym:.2e})")
        w = np.linalg.eigvalsh(_sym(p.astype(float)))
        if np.any(w.min(axis=-1) <= EIGVAL_FLOOR):
            raise ValueError("matrix not positive definite")

    def check_tangent(self, p, x, atol=POINT_ATOL):
        x = np.asarray(x)
        asym = np.abs(x - np.swapaxes(x, -1, -2)).max()
        if asym > atol:
            raise ValueError(f"tangent matrix not symmetric (asymmetry {asym:.2e})")

    def base_point(self):
        return np.eye(self.n)

    def random_point(self, rng, size=(), spread: float = 0.7):
        a = _as_rng(rng).normal(scale=spread, size=size + (self.n, self.n))
        return self.exp(np.eye(self.n), _sym(a))

    def _random_tangent(self, rng, p, scale):
        # noise in T_I pushed to T_p by the congruence with p^(1/2)
        a = _sym(rng.normal(scale=scale, size=np.shape(p)))
        s, _ = self._sqrt_pair(p)
        return _sym(s @ a @ s)

    def random_isometry(self, rng):
        # g = Q1 diag(s) Q2 with singular values near 1 keeps conditioning mild;
        # any invertible g acts isometrically under the affine-invariant metric.
        rng = _as_rng(rng)
        q1 = _haar_orthogonal(rng, self.n)
        q2 = _haar_orthogonal(rng, self.n)
        s = rng.uniform(0.6, 1.6, size=self.n)
        return Isometry(self, (q1 * s) @ q2)

    def apply_isometry(self, iso, p):
        return _sym(iso.matrix @ np.asarray(p, dtype=float) @ iso.matrix.T)

    def push_tangent(self, iso, x):
        return _sym(iso.matrix @ np.asarray(x, dtype=float) @ iso.matrix.T)

    def _compose(self, a, b):
        return Isometry(self, a.matrix @ b.matrix)

    def _inverse(self, a):
        return Isometry(self, np.linalg.inv(a.matrix))


def manifold_from_spec(spec: dict) -> Manifold:
    """Inverse of ``Manifold.spec``."""
    kind = spec.get("kind")
    dim = int(spec.get("dim", 0))
    if kind == "euclidean":
        return Euclidean(dim)
    if kind == "sphere":
        return Sphere(dim)
    if kind == "lorentz":
        return Lorentz(dim)
    if kind == "spd":
        # dim stores the intrinsic dimension n(n+1)/2
        n = int(round((np.sqrt(8 * dim + 1) - 1) / 2))
        if n * (n + 1) // 2 != dim:
            raise ValueError(f"invalid SPD dimension {dim}")
        return SPD(n)
    raise ValueError(f"unknown manifold kind {kind!r}")


# ---------------------------------------------------------------------------
# validated single-point wrappers


@dataclass(frozen=True)
class ManifoldPoint:
    """A single point with its manifold, validated on construction."""

    manifold: Manifold
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))
        self.manifold.check_point(self.coords)


@dataclass(frozen=True)
class TangentVector:
    """A tangent vector anchored at a validated base point."""

    base: ManifoldPoint
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))
        self.base.manifold.check_tangent(self.base.coords, self.coords)

    @property
    def manifold(self) -> Manifold:
        return self.base.manifold


def _same_base(x: TangentVector, y: TangentVector) -> None:
    if x.base.manifold != y.base.manifold or not np.array_equal(x.base.coords, y.base.coords):
        raise ValueError("tangent vectors anchored at different base points")


def inner(p: ManifoldPoint, x: TangentVector, y: TangentVector) -> float:
    _same_base(x, y)
    if not np.array_equal(p.coords, x.base.coords):
        raise ValueError("inner product requested at a different point than the vectors' base")
    return float(p.manifold.inner(p.coords, x.coords, y.coords))


def norm(x: TangentVector) -> float:
    return float(x.manifold.norm(x.base.coords, x.coords))


def exp(p: ManifoldPoint, x: TangentVector) -> ManifoldPoint:
    if not np.array_equal(p.coords, x.base.coords):
        raise ValueError("tangent vector is not based at the given point")
    return ManifoldPoint(p.manifold, p.manifold.exp(p.coords, x.coords))


def log(p: ManifoldPoint, q: ManifoldPoint) -> TangentVector:
    if p.manifold != q.manifold:
        raise ValueError("points live on different manifolds")
    return TangentVector(p, p.manifold.log(p.coords, q.coords))


def dist(p: ManifoldPoint, q: ManifoldPoint) -> float:
    if p.manifold != q.manifold:
        raise ValueError("points live on different manifolds")
    return float(p.manifold.dist(p.coords, q.coords))


def apply_isometry(iso: Isometry, p: ManifoldPoint) -> ManifoldPoint:
    if iso.manifold != p.manifold:
        raise ValueError("isometry and point belong to different manifolds")
    return ManifoldPoint(p.manifold, iso.apply(p.coords))


def push_tangent(iso: Isometry, x: TangentVector) -> TangentVector:
    if iso.manifold != x.manifold:
        raise ValueError("isometry and vector belong to different manifolds")
    new_base = apply_isometry(iso, x.base)
    return TangentVector(new_base, iso.apply_tangent(x.coords))


def random_point(manifold: Manifold, rng: RngLike, size: tuple[int, ...] = ()) -> np.ndarray:
    return manifold.random_point(_as_rng(rng), size)


def random_tangent(manifold: Manifold, rng: RngLike, p: np.ndarray, scale: float = 1.0) -> np.ndarray:
    return manifold.random_tangent(_as_rng(rng), p, scale)


def random_isometry(manifold: Manifold, rng: RngLike) -> Isometry:
    return manifold.random_isometry(_as_rng(rng))


# ---------------------------------------------------------------------------
# weighted Fréchet mean


def frechet_mean(
    manifold: Manifold,
    points: np.ndarray | Sequence[ManifoldPoint],
    weights: np.ndarray,
    *,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> np.ndarray | ManifoldPoint:
    """Weighted Fréchet mean of points in one normal convex neighborhood.

    The mean is characterized by a vanishing weighted sum of logarithms; the
    returned point satisfies ``|sum_i w_i log_p(p_i)|_p < tol``.

    Iteration: damped fixed point ``p <- exp_p(tau * sum_i w_i log_p(p_i))``.
    The undamped step (tau = 1) oscillates without converging once the spread
    exceeds the scale set by a negative curvature bound, so tau is chosen from
    the Hessian bound ``max_i theta_i * coth(theta_i)`` each iteration.

    ``points`` may be a stacked array ``(k, *point, ...)`` with extra trailing
    batch axes between, i.e. shape (k, *batch, *point_shape): all batch
    problems share the weights and iterate until every one meets ``tol``.
    """
    wrapped = not isinstance(points, np.ndarray) and isinstance(points[0], ManifoldPoint)
    if wrapped:
        pts = np.stack([p.coords for p in points])
    else:
        pts = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.shape[0] != pts.shape[0]:
        raise ValueError("weights must be one per point")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    if abs(w.sum() - 1.0) > 1e-8:
        raise ValueError("weights must sum to 1")

    p = pts[int(np.argmax(w))]
    shape = (pts.shape[0],) + p.shape
    for _ in range(max_iter):
        logs = manifold.log(np.broadcast_to(p, shape), pts)
        g = np.einsum("i,i...->...", w, logs)
        res = manifold.norm(p, g)
        if np.max(res) < tol:
            break
        theta = manifold.norm(np.broadcast_to(p, shape), logs)
        tau = min(1.0, 2.0 / (1.0 + float(np.max(manifold._hessian_bound(theta)))))
        p = manifold.exp(p, tau * g)
    else:
        raise NonConvergenceError(
            f"Fréchet mean did not reach residual {tol:.1e} in {max_iter} iterations"
        )
    return ManifoldPoint(manifold, p) if wrapped else p
