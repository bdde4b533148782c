"""State-space cones and their order structure.

Two self-dual cones are supported: the nonnegative orthant R_+^m and the
positive semidefinite matrices S_d^+.  A third kind, ``product``, attaches an
unconstrained R^n factor to one of them; it is not a proper cone and only the
term-structure code accepts it.

Vectors are plain 1-D numpy arrays of coordinates.  Symmetric matrices are
stored in an orthonormal basis of S_d (diagonal entries as is, off-diagonal
entries scaled by sqrt(2)), so that the trace inner product Tr(xy) is the
Euclidean dot product of the coordinate vectors.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import UsageError

SQRT2 = np.sqrt(2.0)
MEMBERSHIP_RTOL = 1e-10


class Membership(enum.Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    OUTSIDE = "outside"


class ComplementaryPair(NamedTuple):
    """x in K and v in K* with <v, x> = 0."""

    x: np.ndarray
    v: np.ndarray


@functools.lru_cache(maxsize=None)
def _triu_index(d):
    rows, cols = np.triu_indices(d)
    rows.flags.writeable = False
    cols.flags.writeable = False
    return rows, cols


def sym_to_coords(X):
    """Map symmetric matrices of shape (..., d, d) to coordinates (..., d(d+1)/2)."""
    X = np.asarray(X, dtype=float)
    d = X.shape[-1]
    rows, cols = _triu_index(d)
    scale = np.where(rows == cols, 1.0, SQRT2)
    sym = 0.5 * (X + np.swapaxes(X, -1, -2))
    return sym[..., rows, cols] * scale


def coords_to_sym(coords, d):
    """Inverse of :func:`sym_to_coords`."""
    coords = np.asarray(coords, dtype=float)
    rows, cols = _triu_index(d)
    if coords.shape[-1] != rows.size:
        raise UsageError(f"expected {rows.size} coordinates for S_{d}, got {coords.shape[-1]}")
    scale = np.where(rows == cols, 1.0, 1.0 / SQRT2)
    X = np.zeros(coords.shape[:-1] + (d, d))
    vals = coords * scale
    X[..., rows, cols] = vals
    X[..., cols, rows] = vals
    return X


def psd_dim(d):
    return d * (d + 1) // 2


@dataclass(frozen=True)
class ConeSpace:
    """A cone descriptor: ``orthant`` (size m), ``psd`` (size d) or ``product``.

    For ``product`` the proper factor is ``base`` and ``size`` is the number n
    of appended real coordinates.
    """

    kind: str
    size: int
    base: ConeSpace | None = None

    def __post_init__(self):
        if self.kind not in ("orthant", "psd", "product"):
            raise UsageError(f"unknown cone kind {self.kind!r}")
        if self.kind == "product":
            if self.base is None or self.base.kind == "product":
                raise UsageError("product cone needs an orthant or psd base")
            if self.size < 0:
                raise UsageError("product cone needs n >= 0")
        elif self.size < 1:
            raise UsageError(f"{self.kind} cone needs a positive size")

    @classmethod
    def orthant(cls, m):
        return cls("orthant", int(m))

    @classmethod
    def psd(cls, d):
        return cls("psd", int(d))

    @classmethod
    def product(cls, base, n):
        return cls("product", int(n), base)

    @classmethod
    def parse(cls, text):
        """Parse ``orthant:m``, ``psd:d`` or ``product:psd:d+n``."""
        text = text.strip()
        try:
            if text.startswith("product:"):
                inner, _, n = text[len("product:"):].rpartition("+")
                return cls.product(cls.parse(inner), int(n))
            kind, _, size = text.partition(":")
            if kind == "orthant":
                return cls.orthant(int(size))
            if kind == "psd":
                return cls.psd(int(size))
        except ValueError as exc:
            raise UsageError(f"malformed cone descriptor {text!r}") from exc
        raise UsageError(f"malformed cone descriptor {text!r}")

    def __str__(self):
        if self.kind == "product":
            return f"product:{self.base}+{self.size}"
        return f"{self.kind}:{self.size}"

    @property
    def dim(self):
        if self.kind == "orthant":
            return self.size
        if self.kind == "psd":
            return psd_dim(self.size)
        return self.base.dim + self.size

    @property
    def proper(self):
        return self.kind != "product"

    def _require_proper(self):
        if not self.proper:
            raise UsageError(f"{self} is not a proper cone; operation unsupported")

    def check(self, x, name="vector"):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise UsageError(f"{name} has shape {x.shape}, expected trailing dimension {self.dim}")
        return x

    def inner(self, a, b):
        a = self.check(a, "a")
        b = self.check(b, "b")
        return float(a @ b)

    def to_matrix(self, x):
        if self.kind != "psd":
            raise UsageError("to_matrix is defined for psd cones only")
        return coords_to_sym(x, self.size)

    def from_matrix(self, X):
        if self.kind != "psd":
            raise UsageError("from_matrix is defined for psd cones only")
        X = np.asarray(X, dtype=float)
        if X.shape[-2:] != (self.size, self.size):
            raise UsageError(f"expected {self.size}x{self.size} matrices, got shape {X.shape}")
        return sym_to_coords(X)

    def gauge(self, x):
        """Smallest coordinate (orthant) or smallest eigenvalue (psd).

        Equals min over unit-norm y in K of <x, y>; positive exactly on the
        interior.  Works on batches of shape (..., dim).
        """
        self._require_proper()
        x = self.check(x)
        if self.kind == "orthant":
            return x.min(axis=-1)
        return np.linalg.eigvalsh(coords_to_sym(x, self.size))[..., 0]

    def membership(self, x, dual=False):
        """Classify ``x`` against K (or K*, which is the same set here)."""
        self._require_proper()
        x = self.check(x)
        g = float(self.gauge(x))
        tol = MEMBERSHIP_RTOL * (1.0 + float(np.linalg.norm(x)))
        if g > tol:
            return Membership.INTERIOR
        if g >= -tol:
            return Membership.BOUNDARY
        return Membership.OUTSIDE

    def contains(self, x, dual=False):
        return self.membership(x, dual) is not Membership.OUTSIDE

    def canonical_interior(self, dual=False):
        """All-ones vector or identity matrix."""
        self._require_proper()
        if self.kind == "orthant":
            return np.ones(self.size)
        return sym_to_coords(np.eye(self.size))

    def project(self, x):
        """Nearest point of K: clamp negatives or floor eigenvalues at zero."""
        self._require_proper()
        x = self.check(x)
        if self.kind == "orthant":
            return np.maximum(x, 0.0)
        w, V = np.linalg.eigh(coords_to_sym(x, self.size))
        X = (V * np.maximum(w, 0.0)[..., None, :]) @ np.swapaxes(V, -1, -2)
        return sym_to_coords(X)

    def sample_points(self, count, rng, interior=True):
        """Random points of K (strictly interior when ``interior``)."""
        self._require_proper()
        if self.kind == "orthant":
            pts = rng.exponential(1.0, size=(count, self.size))
            if not interior:
                pts *= rng.random((count, self.size)) < 0.7
            return pts
        d = self.size
        G = rng.standard_normal((count, d, d + (2 if interior else 0)))
        if not interior:
            G = G[..., : max(1, d - 1)]
        return sym_to_coords(G @ np.swapaxes(G, -1, -2) / G.shape[-1])

    def sample_complementary_pairs(self, count, seed):
        """Random pairs x in K, v in K* with <v, x> = 0 and both nonzero.

        Orthant: disjoint random supports with positive magnitudes.  PSD:
        x and v share an eigenbasis and have disjoint eigenvalue supports.
        R_+ and S_1^+ admit no such pair, so the list is empty.
        """
        self._require_proper()
        if count < 1:
            raise UsageError("count must be >= 1")
        if self.size < 2:
            return []
        X, V = self.complementary_pair_arrays(count, seed)
        return [ComplementaryPair(x, v) for x, v in zip(X, V)]

    def complementary_pair_arrays(self, count, seed):
        """Arrays (X, V) of shape (count, dim) holding the pairs of :meth:`sample_complementary_pairs`."""
        self._require_proper()
        if count < 1:
            raise UsageError("count must be >= 1")
        n = self.size
        if n < 2:
            return np.zeros((0, self.dim)), np.zeros((0, self.dim))
        rng = np.random.default_rng(seed)
        perm = rng.permuted(np.tile(np.arange(n), (count, 1)), axis=1)
        k = rng.integers(1, n, size=count)
        j = rng.integers(k + 1, n + 1)
        # position of each index within its permutation
        pos = np.argsort(perm, axis=1)
        in_x = pos < k[:, None]
        in_v = (pos >= k[:, None]) & (pos < j[:, None])
        rx = rng.uniform(0.1, 2.0, size=(count, n)) * in_x
        rv = rng.uniform(0.1, 2.0, size=(count, n)) * in_v
        if self.kind == "orthant":
            return rx, rv
        U, _ = np.linalg.qr(rng.standard_normal((count, n, n)))
        Ut = np.swapaxes(U, -1, -2)
        X = sym_to_coords((U * rx[:, None, :]) @ Ut)
        V = sym_to_coords((U * rv[:, None, :]) @ Ut)
        return X, V
