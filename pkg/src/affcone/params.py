"""Admissible parameter sets and finite-activity jump measures.

An affine process on a cone K is described by (Q, b, B, c, gamma, m, mu) with
the truncation function fixed to zero.  Jump measures are finite mixtures of
atoms and exponential rays, so every Laplace integral, exponential moment and
polynomial moment has a closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cones import ConeSpace, Membership
from .errors import DomainError, UsageError

ADMISSIBILITY_SAMPLES = 512
MAX_MOMENT_ORDER = 6


@dataclass(frozen=True, eq=False)
class Atom:
    """Point mass ``weight`` at ``point``."""

    weight: float
    point: np.ndarray

    def __post_init__(self):
        if not self.weight > 0:
            raise UsageError(f"atom weight must be positive, got {self.weight}")
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))

    @property
    def mass(self):
        return float(self.weight)


@dataclass(frozen=True, eq=False)
class ExponentialRay:
    """Jumps s * direction with s having density intensity * rate * exp(-rate s)."""

    intensity: float
    direction: np.ndarray
    rate: float

    def __post_init__(self):
        if not self.intensity > 0:
            raise UsageError(f"ray intensity must be positive, got {self.intensity}")
        if not self.rate > 0:
            raise UsageError(f"ray rate must be positive, got {self.rate}")
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=float))

    @property
    def mass(self):
        return float(self.intensity)


@dataclass(frozen=True, eq=False)
class JumpMeasure:
    """Finite measure on K built from atoms and exponential rays.

    ``positive_density`` is user-declared metadata: whether the measure has
    an absolutely continuous part with a strictly positive density near zero
    in the interior of K.
    """

    components: tuple = ()
    positive_density: bool = False

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        for comp in self.components:
            if not isinstance(comp, (Atom, ExponentialRay)):
                raise UsageError(f"unsupported jump component {comp!r}")

    @property
    def total_mass(self):
        return float(sum(c.mass for c in self.components))

    @property
    def atoms(self):
        return [c for c in self.components if isinstance(c, Atom)]

    @property
    def rays(self):
        return [c for c in self.components if isinstance(c, ExponentialRay)]

    def scaled(self, s):
        """Image measure under xi -> s * xi."""
        comps = []
        for c in self.components:
            if isinstance(c, Atom):
                comps.append(Atom(c.weight, s * c.point))
            else:
                comps.append(ExponentialRay(c.intensity, s * c.direction, c.rate))
        return JumpMeasure(tuple(comps), self.positive_density)

    def __bool__(self):
        return bool(self.components)


@dataclass(frozen=True, eq=False)
class StateDependentJumps:
    """The K*-valued measure mu(d xi) = sum_i loading_i * measure_i(d xi).

    ``<x, mu(d xi)> = sum_i <loading_i, x> measure_i(d xi)``.
    """

    terms: tuple = ()

    def __post_init__(self):
        terms = tuple((np.asarray(load, dtype=float), meas) for load, meas in self.terms)
        for _, meas in terms:
            if not isinstance(meas, JumpMeasure):
                raise UsageError("state-dependent jump terms need a JumpMeasure")
        object.__setattr__(self, "terms", terms)

    def total(self, dim):
        """Lambda = mu(K), an element of K*."""
        out = np.zeros(dim)
        for load, meas in self.terms:
            out += meas.total_mass * load
        return out

    def first_moment_matrix(self, dim):
        """Matrix of x -> int xi <x, mu(d xi)>."""
        out = np.zeros((dim, dim))
        for load, meas in self.terms:
            out += np.outer(jump_moment(meas, 1, dim), load)
        return out

    def scaled(self, s):
        return StateDependentJumps(tuple((load / s, meas.scaled(s)) for load, meas in self.terms))

    def __bool__(self):
        return any(bool(meas) for _, meas in self.terms)


@dataclass(frozen=True, eq=False)
class WishartSDE:
    """Raw coefficients of dX = sqrt(X) dW Q0 + Q0' dW' sqrt(X) + (X beta + beta' X + delta Q0'Q0) dt."""

    beta: np.ndarray
    q0: np.ndarray
    delta: float


@dataclass(frozen=True, eq=False)
class AffineParams:
    """Admissible parameters (Q, b, B, c, gamma, m, mu) in cone coordinates.

    ``B`` is the matrix of the linear drift x -> Bx; its transpose is the map
    B^T appearing in the Riccati function R.  ``Q`` has shape (dim, dim, dim)
    with ``Q(u, v)[k] = sum_ij Q[k, i, j] u_i v_j``.
    """

    space: ConeSpace
    b: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    c: float = 0.0
    gamma: np.ndarray | None = None
    m: JumpMeasure = field(default_factory=JumpMeasure)
    mu: StateDependentJumps = field(default_factory=StateDependentJumps)
    density_positive: bool = False
    wishart: WishartSDE | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.space.dim
        b = np.asarray(self.b, dtype=float).reshape(-1)
        B = np.asarray(self.B, dtype=float)
        Q = np.asarray(self.Q, dtype=float)
        gamma = np.zeros(n) if self.gamma is None else np.asarray(self.gamma, dtype=float).reshape(-1)
        if b.shape != (n,):
            raise UsageError(f"b must have {n} coordinates, got {b.shape}")
        if B.shape != (n, n):
            raise UsageError(f"B must be {n}x{n}, got {B.shape}")
        if Q.shape != (n, n, n):
            raise UsageError(f"Q tensor must be {n}x{n}x{n}, got {Q.shape}")
        if gamma.shape != (n,):
            raise UsageError(f"gamma must have {n} coordinates, got {gamma.shape}")
        if not np.allclose(Q, np.swapaxes(Q, 1, 2), rtol=0, atol=1e-14 * (1 + np.abs(Q).max())):
            raise UsageError("Q tensor must be symmetric in its last two indices")
        for comp in self.m.components:
            _check_component_dim(comp, n)
        for load, meas in self.mu.terms:
            if load.shape != (n,):
                raise UsageError(f"mu loading must have {n} coordinates, got {load.shape}")
            for comp in meas.components:
                _check_component_dim(comp, n)
        if not np.all(np.isfinite(B)) or not np.all(np.isfinite(Q)) or not np.all(np.isfinite(b)):
            raise UsageError("parameters must be finite")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "c", float(self.c))

    @property
    def dim(self):
        return self.space.dim

    @property
    def l(self):
        """m(K), the total state-independent jump intensity."""
        return self.m.total_mass

    @property
    def Lambda(self):
        """mu(K) in K*."""
        return self.mu.total(self.dim)

    @property
    def has_diffusion(self):
        return bool(np.any(self.Q))

    @property
    def has_jumps(self):
        return bool(self.m) or bool(self.mu)

    def quad(self, u, v=None):
        """Q(u, v); ``u`` may be a batch (..., dim)."""
        u = np.asarray(u, dtype=float)
        v = u if v is None else np.asarray(v, dtype=float)
        return np.einsum("kij,...i,...j->...k", self.Q, u, v)

    def diffusion_matrix(self, x):
        """A(x) with <u, A(x) v> = <x, Q(u, v)>; batch-aware."""
        return np.einsum("...k,kij->...ij", np.asarray(x, dtype=float), self.Q)

    def replace(self, **changes):
        return replace(self, **changes)

    def scaled(self, s):
        """Parameters of the process s * X."""
        return replace(
            self,
            b=s * self.b,
            Q=s * self.Q,
            gamma=self.gamma / s,
            m=self.m.scaled(s),
            mu=self.mu.scaled(s),
            wishart=None,
        )

    def without_jumps(self, killing=False):
        """Same diffusion part, no jumps; with ``killing`` use c=l, gamma=Lambda."""
        if killing:
            return replace(self, m=JumpMeasure(), mu=StateDependentJumps(), c=self.l, gamma=self.Lambda)
        return replace(self, m=JumpMeasure(), mu=StateDependentJumps())


def _check_component_dim(comp, n):
    vec = comp.point if isinstance(comp, Atom) else comp.direction
    if vec.shape != (n,):
        raise UsageError(f"jump vector must have {n} coordinates, got {vec.shape}")


def _support_vector(comp):
    return comp.point if isinstance(comp, Atom) else comp.direction


def laplace_integral(measure, u):
    """int (exp(-<u, xi>) - 1) measure(d xi), in closed form.

    ``u`` may be a batch of shape (..., dim).
    """
    u = np.asarray(u, dtype=float)
    total = np.zeros(u.shape[:-1])
    for comp in measure.components:
        if isinstance(comp, Atom):
            total = total + comp.weight * np.expm1(-(u @ comp.point))
        else:
            a = u @ comp.direction
            denom = comp.rate + a
            if np.any(denom <= 0):
                raise DomainError(
                    f"Laplace integral diverges: rate + <u, direction> = {np.min(denom):.6g} <= 0",
                    offending=comp,
                )
            total = total - comp.intensity * a / denom
    return total if total.shape else float(total)


def laplace_gradient(measure, u):
    """Gradient in u of :func:`laplace_integral`."""
    u = np.asarray(u, dtype=float)
    grad = np.zeros(u.shape)
    for comp in measure.components:
        if isinstance(comp, Atom):
            grad = grad - comp.weight * np.exp(-(u @ comp.point))[..., None] * comp.point
        else:
            denom = comp.rate + u @ comp.direction
            if np.any(denom <= 0):
                raise DomainError("Laplace integral diverges", offending=comp)
            grad = grad - (comp.intensity * comp.rate / denom**2)[..., None] * comp.direction
    return grad


def exp_moment_integral(measure, eta, region="all"):
    """int exp(<eta, xi>) measure(d xi) over K (``all``) or over ||xi|| >= 1.

    Returns ``inf`` when some ray has <eta, direction> >= rate.
    """
    if region not in ("all", "norm_geq_one"):
        raise UsageError(f"unknown region {region!r}")
    eta = np.asarray(eta, dtype=float)
    total = 0.0
    for comp in measure.components:
        if isinstance(comp, Atom):
            if region == "all" or np.linalg.norm(comp.point) >= 1.0:
                total += comp.weight * math.exp(float(eta @ comp.point))
            continue
        k = float(eta @ comp.direction)
        if k >= comp.rate:
            return math.inf
        s0 = 0.0 if region == "all" else 1.0 / float(np.linalg.norm(comp.direction))
        total += comp.intensity * comp.rate / (comp.rate - k) * math.exp((k - comp.rate) * s0)
    return total


def jump_moment(measure, order, dim=None):
    """Symmetric tensor int xi^{(x) order} measure(d xi)."""
    if not 1 <= order <= MAX_MOMENT_ORDER:
        raise UsageError(f"moment order must be in 1..{MAX_MOMENT_ORDER}")
    if dim is None:
        if not measure.components:
            raise UsageError("dim is required for an empty measure")
        dim = _support_vector(measure.components[0]).size
    out = np.zeros((dim,) * order)
    for comp in measure.components:
        vec = _support_vector(comp)
        if isinstance(comp, Atom):
            coef = comp.weight
        else:
            coef = comp.intensity * math.factorial(order) / comp.rate**order
        t = np.array(coef)
        for _ in range(order):
            t = np.multiply.outer(t, vec)
        out += t
    return out


def mixed_moment(measure, exponents):
    """int prod_i xi_i^{k_i} measure(d xi) for a multi-index ``exponents``."""
    exponents = np.asarray(exponents)
    order = int(exponents.sum())
    total = 0.0
    for comp in measure.components:
        vec = _support_vector(comp)
        mono = float(np.prod(vec**exponents))
        if isinstance(comp, Atom):
            total += comp.weight * mono
        else:
            total += comp.intensity * math.factorial(order) / comp.rate**order * mono
    return total


def sample_jump(measure, rng):
    """Draw one jump from measure / total_mass."""
    total = measure.total_mass
    if total <= 0:
        raise UsageError("cannot sample from a zero measure")
    masses = np.array([c.mass for c in measure.components])
    idx = int(np.searchsorted(np.cumsum(masses), rng.random() * total, side="right"))
    comp = measure.components[min(idx, len(masses) - 1)]
    if isinstance(comp, Atom):
        return comp.point.copy()
    return rng.exponential(1.0 / comp.rate) * comp.direction


@dataclass
class CheckEntry:
    condition: str
    passed: bool
    method: str
    detail: str = ""


@dataclass
class ValidationReport:
    entries: list

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    def failures(self):
        return [e for e in self.entries if not e.passed]

    def to_dict(self):
        return {
            "passed": self.passed,
            "entries": [
                {"condition": e.condition, "passed": e.passed, "method": e.method, "detail": e.detail}
                for e in self.entries
            ],
        }


def _in_cone(space, vec):
    return space.membership(vec) is not Membership.OUTSIDE


def _nonzero_in_cone(space, vec):
    return np.linalg.norm(vec) > 0 and _in_cone(space, vec)


def validate_admissibility(params, samples=ADMISSIBILITY_SAMPLES, seed=0):
    """Check parameter admissibility conditions (i)-(vii).

    Conditions (iv) and (vii) are verified on sampled complementary pairs
    (a failure disproves admissibility, a pass is evidence only), except on
    the orthant where (vii) reduces to the exact Metzler sign pattern.
    """
    space = params.space
    if not space.proper:
        raise UsageError("admissibility is defined on proper cones only")
    rng = np.random.default_rng(seed)
    entries = []
    SAMPLED = "sampled, not a proof"

    entries.append(CheckEntry("(i) b in K", _in_cone(space, params.b), "exact",
                              f"gauge(b) = {space.gauge(params.b):.6g}"))
    entries.append(CheckEntry("(ii) c >= 0", params.c >= 0, "exact", f"c = {params.c:.6g}"))

    bad = [i for i, comp in enumerate(params.m.components)
           if not _nonzero_in_cone(space, _support_vector(comp))]
    entries.append(CheckEntry("(iii) m is a finite measure on K\\{0}", not bad, "structural",
                              f"components outside K\\{{0}}: {bad}" if bad else "atoms and rays in K\\{0}"))

    X, U = space.complementary_pair_arrays(samples, int(rng.integers(2**31)))
    qscale = 1.0 + float(np.abs(params.Q).max())
    v = rng.standard_normal((samples, space.dim))
    qvv = params.quad(v)
    g = space.gauge(qvv)
    worst_psd = float(np.min(g / (qscale * np.sum(v * v, axis=-1))))
    ok_psd = worst_psd >= -1e-10
    worst_pair = 0.0
    if len(X):
        W = rng.standard_normal(X.shape)
        xn, un = np.linalg.norm(X, axis=1), np.linalg.norm(U, axis=1)
        for other in (U, W):
            vals = np.abs(np.sum(X * params.quad(U, other), axis=1))
            worst_pair = max(worst_pair, float(np.max(vals / (qscale * xn * un * np.linalg.norm(other, axis=1)))))
    ok_pair = worst_pair <= 1e-10
    entries.append(CheckEntry(
        "(iv) Q(v,v) in K* and <x,Q(u,v)> = 0 on complementary pairs", ok_psd and ok_pair, SAMPLED,
        f"min normalized gauge of Q(v,v) = {worst_psd:.3g}; max normalized |<x,Q(u,w)>| = {worst_pair:.3g} "
        f"over {len(X)} pairs"))

    entries.append(CheckEntry("(v) gamma in K*", _in_cone(space, params.gamma), "exact",
                              f"gauge(gamma) = {space.gauge(params.gamma):.6g}"))

    bad_terms = []
    for i, (load, meas) in enumerate(params.mu.terms):
        if not _nonzero_in_cone(space, load):
            bad_terms.append(i)
        elif any(not _nonzero_in_cone(space, _support_vector(c)) for c in meas.components):
            bad_terms.append(i)
    entries.append(CheckEntry("(vi) mu is K*-valued on K\\{0}", not bad_terms, "structural",
                              f"offending terms: {bad_terms}" if bad_terms else "loadings in K*, supports in K"))

    Bt = params.B.T
    if space.kind == "orthant":
        off = Bt - np.diag(np.diag(Bt))
        worst = float(off.min()) if space.size > 1 else 0.0
        entries.append(CheckEntry("(vii) <x, B^T u> >= 0 on complementary pairs", worst >= 0, "exact",
                                  f"min off-diagonal entry of B^T = {worst:.6g}"))
    else:
        bscale = 1.0 + float(np.abs(Bt).max())
        worst = 0.0
        if len(X):
            vals = np.sum(X * (U @ Bt.T), axis=1)
            worst = min(worst, float(np.min(vals / (bscale * np.linalg.norm(X, axis=1) * np.linalg.norm(U, axis=1)))))
        entries.append(CheckEntry("(vii) <x, B^T u> >= 0 on complementary pairs", worst >= -1e-10, SAMPLED,
                                  f"min normalized <x, B^T u> = {worst:.3g} over {len(X)} pairs"))
    return ValidationReport(entries)
