"""Polynomial moments through the finite-dimensional generator on P_m.

The generator maps polynomials of degree <= m into themselves:

    A p(x) = <b + B x, grad p> + 1/2 Tr(A(x) hess p)
             + int (p(x + xi) - p(x)) (m(d xi) + <x, mu(d xi)>),

which is the compensated form with drift b + m_1 + B~ x written out.  On the
monomial basis this is a matrix G; E^x[p(X_t)] = ev(x) . expm(tG) p.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NumericError, UsageError
from .params import MAX_MOMENT_ORDER, mixed_moment


def _compositions(n, total):
    """Multi-indices of length n summing to ``total``, in lexicographic descending order."""
    if n == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(n - 1, total - first):
            yield (first,) + rest


@dataclass(frozen=True, eq=False)
class PolynomialBasis:
    """Graded-lex monomials of total degree <= ``degree`` in ``dim`` variables."""

    dim: int
    degree: int
    monomials: tuple = field(init=False)
    index: dict = field(init=False)

    def __post_init__(self):
        if self.degree < 1:
            raise UsageError("degree must be >= 1")
        monos = tuple(a for k in range(self.degree + 1) for a in _compositions(self.dim, k))
        object.__setattr__(self, "monomials", monos)
        object.__setattr__(self, "index", {a: i for i, a in enumerate(monos)})

    def __len__(self):
        return len(self.monomials)

    @property
    def degrees(self):
        return np.array([sum(a) for a in self.monomials])

    @property
    def exponents(self):
        return np.array(self.monomials)

    def evaluate(self, x):
        """Vector of monomial values at x (batch-aware)."""
        x = np.asarray(x, dtype=float)
        return np.prod(x[..., None, :] ** self.exponents, axis=-1)

    def unit(self, alpha):
        vec = np.zeros(len(self))
        vec[self.index[tuple(alpha)]] = 1.0
        return vec

    def constant(self):
        return self.unit((0,) * self.dim)

    def coordinate(self, i):
        alpha = [0] * self.dim
        alpha[i] = 1
        return self.unit(alpha)

    def product(self, i, j):
        alpha = [0] * self.dim
        alpha[i] += 1
        alpha[j] += 1
        return self.unit(alpha)

    def linear_power(self, eta, power):
        """Coefficients of <eta, x>^power."""
        if power > self.degree:
            raise UsageError(f"power {power} exceeds basis degree {self.degree}")
        eta = np.asarray(eta, dtype=float)
        vec = np.zeros(len(self))
        for alpha in _compositions(self.dim, power):
            coef = math.factorial(power) / math.prod(math.factorial(a) for a in alpha)
            vec[self.index[alpha]] = coef * float(np.prod(eta ** np.array(alpha)))
        return vec


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    basis: PolynomialBasis
    G: np.ndarray

    def propagator(self, t):
        return scipy.linalg.expm(t * self.G)


def _sub(alpha, i, k=1):
    beta = list(alpha)
    beta[i] -= k
    return tuple(beta)


def _add(alpha, i):
    beta = list(alpha)
    beta[i] += 1
    return tuple(beta)


def build_generator(params, degree):
    """Matrix of the generator on P_degree; column j is the image of monomial j."""
    if degree > MAX_MOMENT_ORDER:
        raise UsageError(f"degree > {MAX_MOMENT_ORDER} unsupported")
    if params.c != 0 or np.any(params.gamma != 0):
        raise UsageError("the polynomial generator requires c = 0 and gamma = 0")
    n = params.dim
    basis = PolynomialBasis(n, degree)
    N = len(basis)
    G = np.zeros((N, N))
    b, B, Q = params.b, params.B, params.Q
    for j, alpha in enumerate(basis.monomials):
        col = G[:, j]
        for i in range(n):
            if alpha[i] == 0:
                continue
            lower = _sub(alpha, i)
            col[basis.index[lower]] += b[i] * alpha[i]
            for k in range(n):
                if B[i, k]:
                    col[basis.index[_add(lower, k)]] += B[i, k] * alpha[i]
        for i in range(n):
            for l in range(n):
                if alpha[i] == 0 or alpha[l] - (i == l) <= 0:
                    continue
                factor = 0.5 * alpha[i] * (alpha[l] - (i == l))
                lower = _sub(_sub(alpha, i), l)
                for k in range(n):
                    if Q[k, i, l]:
                        col[basis.index[_add(lower, k)]] += factor * Q[k, i, l]
        if not params.has_jumps:
            continue
        for beta in itertools.product(*(range(a + 1) for a in alpha)):
            if beta == alpha:
                continue
            gap = tuple(a - bb for a, bb in zip(alpha, beta))
            binom = math.prod(math.comb(a, bb) for a, bb in zip(alpha, beta))
            if params.m:
                col[basis.index[beta]] += binom * mixed_moment(params.m, gap)
            for load, meas in params.mu.terms:
                mom = binom * mixed_moment(meas, gap)
                if mom == 0:
                    continue
                for k in range(n):
                    if load[k]:
                        col[basis.index[_add(beta, k)]] += mom * load[k]
    return GeneratorMatrix(basis, G)


def transient_moment(gen, p, x0, t):
    """E^{x0}[p(X_t)] for a coefficient vector p."""
    if t < 0:
        raise UsageError("t must be nonnegative")
    p = np.asarray(p, dtype=float)
    ev = gen.basis.evaluate(x0)
    if t == 0:
        return float(ev @ p)
    return float(ev @ (gen.propagator(t) @ p))


@dataclass
class StationaryMoments:
    """The stationary functional p -> int p d(pi) on P_m."""

    basis: PolynomialBasis
    weights: np.ndarray
    warnings: list = field(default_factory=list)

    def __call__(self, p):
        return float(self.weights @ np.asarray(p, dtype=float))

    def mean(self):
        return np.array([self(self.basis.coordinate(i)) for i in range(self.basis.dim)])

    def second_moment(self):
        if self.basis.degree < 2:
            raise UsageError("second moments need degree >= 2")
        n = self.basis.dim
        return np.array([[self(self.basis.product(i, j)) for j in range(n)] for i in range(n)])


def stationary_moments(gen, certificate):
    """Solve mu* G = 0 with mu*(1) = 1 degree by degree.

    G is block upper triangular in the degree grading, so mu* is determined
    uniquely exactly when every diagonal block of degree k >= 1 is
    nonsingular; under the certificate their eigenvalues are sums of
    eigenvalues of B~ and have negative real part.
    """
    if certificate is None or not certificate.certified:
        raise UsageError("stationary moments need a Certified drift certificate")
    basis, G = gen.basis, gen.G
    deg = basis.degrees
    mu = np.zeros(len(basis))
    mu[deg == 0] = 1.0
    for k in range(1, basis.degree + 1):
        cur = deg == k
        prev = deg < k
        block = G[np.ix_(cur, cur)]
        s = np.linalg.svd(block, compute_uv=False)
        if s[-1] <= 1e-12 * max(1.0, s[0]):
            raise NumericError("generator null space not one-dimensional")
        rhs = -(mu[prev] @ G[np.ix_(prev, cur)])
        mu[cur] = np.linalg.solve(block.T, rhs)
    warnings = []
    if basis.degree < 2:
        warnings.append("degree<2 unsupported: stationary moment claims need degree >= 2")
    return StationaryMoments(basis, mu, warnings)
