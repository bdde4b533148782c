"""Spectral bounds, quasimonotonicity and drift-condition certificates.

The central construction: for a quasimonotone increasing map L with spectral
bound tau(L) < 0, pick tau < lam < 0 and an interior dual vector v; then
eta0 = (lam - L^T)^{-1} v lies in the interior of K* and L^T eta0 lies in the
interior of -K*.  The certificate reports eta0 together with the margins by
which both memberships hold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .cones import ConeSpace, coords_to_sym, sym_to_coords
from .errors import NumericError, UsageError

RANK_RTOL = 1e-10
QMI_TOL = 1e-10
THETA_SAFETY = 0.5


@dataclass(frozen=True, eq=False)
class LinearMap:
    """Linear map on the coordinate space of ``space``."""

    space: ConeSpace
    matrix: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        if M.shape != (self.space.dim, self.space.dim):
            raise UsageError(f"matrix must be {self.space.dim}x{self.space.dim}, got {M.shape}")
        if not np.all(np.isfinite(M)):
            raise UsageError("matrix entries must be finite")
        object.__setattr__(self, "matrix", M)

    @property
    def T(self):
        return LinearMap(self.space, self.matrix.T)

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.matrix.T


def _matrix(A):
    return A.matrix if isinstance(A, LinearMap) else np.atleast_2d(np.asarray(A, dtype=float))


def spectral_bound(A):
    """tau(A) = max real part of the spectrum."""
    M = _matrix(A)
    try:
        return float(np.max(np.linalg.eigvals(M).real))
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed; condition number {np.linalg.cond(M):.3g}") from exc


def perron_vector(A):
    """Eigenvector for the eigenvalue tau(A) with real part maximal, scaled to unit norm.

    Returns ``None`` if that eigenvalue is not real (within roundoff).
    """
    M = _matrix(A)
    w, V = np.linalg.eig(M)
    k = int(np.argmax(w.real))
    if abs(w[k].imag) > 1e-12 * (1 + abs(w[k])):
        return None
    vec = V[:, k].real
    if vec.sum() < 0:
        vec = -vec
    return vec / np.linalg.norm(vec)


@dataclass
class QmiReport:
    qmi: bool
    exact: bool
    min_value: float
    pairs_checked: int

    def to_dict(self):
        return {"qmi": self.qmi, "exact": self.exact, "min_value": self.min_value,
                "pairs_checked": self.pairs_checked}


def is_qmi(A, pairs=512, seed=0):
    """Test <v, A x> >= 0 on complementary pairs (x in K, v in K*, <v, x> = 0).

    On the orthant the Metzler sign test is exact and decisive; on S_d^+ the
    check runs on ``pairs`` sampled pairs.
    """
    if not isinstance(A, LinearMap):
        raise UsageError("is_qmi needs a LinearMap")
    space = A.space
    M = A.matrix
    if space.kind == "orthant":
        off = M - np.diag(np.diag(M))
        worst = float(off.min()) if space.size > 1 else 0.0
        return QmiReport(worst >= 0, True, worst, 0)
    if not space.proper:
        raise UsageError("qmi is defined on proper cones only")
    X, V = space.complementary_pair_arrays(pairs, seed)
    scale = 1.0 + float(np.abs(M).max())
    worst = 0.0
    if len(X):
        vals = np.sum(V * (X @ M.T), axis=1) / (scale * np.linalg.norm(X, axis=1) * np.linalg.norm(V, axis=1))
        worst = min(worst, float(vals.min()))
    return QmiReport(worst >= -QMI_TOL, False, worst, len(X))


def effective_drift(params):
    """B~ = B + int xi <x, mu(d xi)>, the drift of the first moment."""
    return LinearMap(params.space, params.B + params.mu.first_moment_matrix(params.dim))


@dataclass
class ErgodicityCertificate:
    tau: float
    eta0: np.ndarray | None
    residual_interior: float
    residual_image: float
    verdict: str
    reason: str
    lam: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def certified(self):
        return self.verdict == "Certified"

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "reason": self.reason,
            "tau": self.tau,
            "lambda": self.lam,
            "eta0": None if self.eta0 is None else self.eta0.tolist(),
            "residual_interior": self.residual_interior,
            "residual_image": self.residual_image,
            **self.extras,
        }


def resolvent_certificate(L):
    """Construct and verify eta0 = (lam - L^T)^{-1} v for a LinearMap L."""
    space = L.space
    tau = spectral_bound(L)
    if not tau < 0:
        return ErgodicityCertificate(tau, None, float("nan"), float("nan"), "NotCertified",
                                     "spectral bound nonnegative")
    lam = tau / 2
    v = space.canonical_interior(dual=True)
    try:
        eta0 = np.linalg.solve(lam * np.eye(space.dim) - L.matrix.T, v)
    except np.linalg.LinAlgError as exc:
        raise NumericError("resolvent is singular at lambda = tau/2") from exc
    norm = float(np.linalg.norm(eta0))
    margin_in = float(space.gauge(eta0)) / norm
    margin_img = float(space.gauge(-(L.matrix.T @ eta0))) / norm
    if margin_in > 0 and margin_img > 0:
        return ErgodicityCertificate(tau, eta0, margin_in, margin_img, "Certified",
                                     "eta0 verified in int K* with L^T eta0 in -int K*", lam)
    return ErgodicityCertificate(tau, eta0, margin_in, margin_img, "NotCertified",
                                 "constructed vector failed verification", lam)


def drift_certificate(params, check_admissibility=True):
    """Drift-condition certificate for the effective drift of ``params``.

    Requires c = 0 and gamma = 0; killing makes the process non-conservative
    and the certificate is refused.
    """
    if params.c != 0 or np.any(params.gamma != 0):
        return ErgodicityCertificate(float("nan"), None, float("nan"), float("nan"), "NotCertified",
                                     "killing present (c or gamma nonzero)")
    if check_admissibility:
        from .params import validate_admissibility

        report = validate_admissibility(params)
        if not report.passed:
            failed = ", ".join(e.condition for e in report.failures())
            return ErgodicityCertificate(float("nan"), None, float("nan"), float("nan"), "NotCertified",
                                         f"parameters not admissible: {failed}")
    return resolvent_certificate(effective_drift(params))


def lyapunov_operator(beta):
    """Coordinate matrix of u -> beta u + u beta^T on S_d."""
    beta = np.asarray(beta, dtype=float)
    d = beta.shape[0]
    n = d * (d + 1) // 2
    basis = coords_to_sym(np.eye(n), d)
    images = beta @ basis + basis @ beta.T
    return sym_to_coords(images).T


def sandwich_operator(beta):
    """Coordinate matrix of x -> x beta + beta^T x, the adjoint of :func:`lyapunov_operator`."""
    return lyapunov_operator(np.asarray(beta, dtype=float).T)


@dataclass
class LyapunovResult:
    v: np.ndarray | None
    tau_beta: float
    verdict: str
    residual: float = float("nan")
    min_eig: float = float("nan")

    @property
    def certified(self):
        return self.verdict == "Certified"


def lyapunov_psd(beta):
    """Solve beta v + v beta^T = -I when tau(beta) < 0 and check v is positive definite."""
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 2 or beta.shape[0] != beta.shape[1]:
        raise UsageError("beta must be square")
    tau = spectral_bound(beta)
    if not tau < 0:
        return LyapunovResult(None, tau, "NotCertified")
    d = beta.shape[0]
    v = scipy.linalg.solve_continuous_lyapunov(beta, -np.eye(d))
    v = 0.5 * (v + v.T)
    if not np.all(np.isfinite(v)):
        raise NumericError("Lyapunov solve failed: eigenvalue sums near zero")
    residual = float(np.linalg.norm(beta @ v + v @ beta.T + np.eye(d)))
    min_eig = float(np.linalg.eigvalsh(v)[0])
    verdict = "Certified" if min_eig > 0 else "NotCertified"
    return LyapunovResult(v, tau, verdict, residual, min_eig)


def controllability_rank(beta, Qmat):
    """Rank of [Q^T | beta Q^T | ... | beta^{d-1} Q^T]; maximal when it equals d."""
    beta = np.asarray(beta, dtype=float)
    Qt = np.asarray(Qmat, dtype=float).T
    d = beta.shape[0]
    blocks = [Qt]
    for _ in range(d - 1):
        blocks.append(beta @ blocks[-1])
    K = np.hstack(blocks)
    s = np.linalg.svd(K, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0, d == 0
    rank = int(np.sum(s > RANK_RTOL * s[0]))
    return rank, rank == d


@dataclass
class TermStructureCertificate:
    verdict: str
    reason: str
    eta0: np.ndarray | None = None
    Qmat: np.ndarray | None = None
    theta0: float | None = None
    tau_B: float = float("nan")
    tau_D: float = float("nan")
    decay_rate: float | None = None
    bounds: dict = field(default_factory=dict)
    safety: float = THETA_SAFETY

    @property
    def certified(self):
        return self.verdict == "Certified"

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "reason": self.reason,
            "tau_B": self.tau_B,
            "tau_D": self.tau_D,
            "eta0": None if self.eta0 is None else self.eta0.tolist(),
            "Qmat": None if self.Qmat is None else self.Qmat.tolist(),
            "theta0": self.theta0,
            "decay_rate": self.decay_rate,
            "bounds": self.bounds,
            "safety": self.safety,
        }


def _decay_vector(B):
    """eta0 in int K* and r > 0 with B^T eta0 <= -r eta0 in the K* order.

    Prefers the Perron eigenvector of B^T (r = |tau(B)|); falls back to the
    resolvent vector (r = |tau(B)|/2).  Normalized so that gauge(eta0) = 1.
    """
    space = B.space
    tau = spectral_bound(B)
    vec = perron_vector(B.matrix.T)
    if vec is not None and space.gauge(vec) > 1e-10:
        return vec / float(space.gauge(vec)), -tau
    cert = resolvent_certificate(B)
    if not cert.certified:
        return None, None
    eta0 = cert.eta0 / float(space.gauge(cert.eta0))
    return eta0, -cert.lam


def term_structure_certificate(B, C, D):
    """Drift certificate for the block system on K x R^n.

    Lyapunov function f(x, y) = 1 + <eta0, x>^2 + theta0 <y, Qmat y> with
    D^T Qmat + Qmat D = -I and theta0 half the admissible upper bound.
    """
    if not isinstance(B, LinearMap):
        raise UsageError("B must be a LinearMap on the cone block")
    C = np.atleast_2d(np.asarray(C, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    n = D.shape[0]
    if D.shape != (n, n) or C.shape != (n, B.space.dim):
        raise UsageError(f"C must be {n}x{B.space.dim} and D must be {n}x{n}")
    tau_B = spectral_bound(B)
    tau_D = spectral_bound(D)
    qmi = is_qmi(B)
    if not qmi.qmi:
        return TermStructureCertificate("NotCertified", "B is not quasimonotone on K", tau_B=tau_B, tau_D=tau_D)
    if not tau_B < 0:
        return TermStructureCertificate("NotCertified", "tau(B) >= 0", tau_B=tau_B, tau_D=tau_D)
    if not tau_D < 0:
        return TermStructureCertificate("NotCertified", "tau(D) >= 0", tau_B=tau_B, tau_D=tau_D)
    eta0, rate = _decay_vector(B)
    if eta0 is None:
        return TermStructureCertificate("NotCertified", "constructed vector failed verification",
                                        tau_B=tau_B, tau_D=tau_D)
    Qmat = scipy.linalg.solve_continuous_lyapunov(D.T, -np.eye(n))
    Qmat = 0.5 * (Qmat + Qmat.T)
    if np.linalg.eigvalsh(Qmat)[0] <= 0:
        return TermStructureCertificate("NotCertified", "Qmat not positive definite", tau_B=tau_B, tau_D=tau_D)
    first = abs(spectral_bound(D.T @ Qmat + Qmat @ D)) ** 3
    normC = np.linalg.norm(C, 2)
    normD = np.linalg.norm(D, 2)
    normQ = np.linalg.norm(Qmat, 2)
    top = (2 * rate) ** 1.5
    second_D = np.inf if normC == 0 or normD == 0 else top / (normC**3 * normD**3)
    second_Q = np.inf if normC == 0 else top / (normC**3 * normQ**3)
    bound = min(first, second_D, second_Q)
    theta0 = THETA_SAFETY * bound
    bounds = {"spectral": first, "coupling_D": float(second_D), "coupling_Q": float(second_Q), "bound": bound}
    return TermStructureCertificate("Certified", "tau(B) < 0 and tau(D) < 0", eta0, Qmat, theta0,
                                    tau_B, tau_D, rate, bounds)
