"""Generalized Riccati equations of an affine process.

With F(u) = <b, u> + c - int (e^{-<u,xi>} - 1) m(d xi) and
R(u) = -Q(u,u)/2 + B^T u + gamma - int (e^{-<u,xi>} - 1) mu(d xi), the
Laplace transform satisfies

    E^x[exp(-<u, X_t>)] = exp(-phi(t, u) - <psi(t, u), x>),
    psi' = R(psi), phi' = F(psi), psi(0) = u, phi(0) = 0.

The exponential-moment convention tracks q = -psi(t, -eta), p = -phi(t, -eta)
so that E^x[exp(<eta, X_t>)] = exp(p(t) + <q(t), x>) with q' = -R(-q).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.integrate import RK45

from .errors import DomainError, UsageError
from .params import jump_moment, laplace_gradient, laplace_integral
from .stability import effective_drift

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-12
OVERFLOW_GUARD = 1e8
H_MIN_REL = 1e-12
TAIL_SAFETY = 10.0


class Convention(enum.Enum):
    LAPLACE = "laplace"
    EXPONENTIAL = "exponential"

    @classmethod
    def coerce(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError as exc:
            raise UsageError(f"unknown convention {value!r}; use 'laplace' or 'exponential'") from exc


def eval_F(params, u):
    """F(u) in closed form."""
    u = params.space.check(u, "u")
    return float(params.b @ u + params.c - laplace_integral(params.m, u))


def eval_R(params, u):
    """R(u) in closed form."""
    u = params.space.check(u, "u")
    out = -0.5 * params.quad(u) + params.B.T @ u + params.gamma
    for load, meas in params.mu.terms:
        out = out - load * laplace_integral(meas, u)
    return out


def grad_F(params, u):
    u = params.space.check(u, "u")
    return params.b - laplace_gradient(params.m, u)


def grad_F0(params):
    """Gradient of F at the origin: b plus the first moment of m."""
    g = params.b.copy()
    if params.m:
        g = g + jump_moment(params.m, 1, params.dim)
    return g


@dataclass
class RiccatiSolution:
    """Riccati trajectory on a time grid.

    In the exponential convention ``psi_values`` holds q and ``phi_values``
    holds p.
    """

    convention: Convention
    grid: np.ndarray
    psi_values: np.ndarray
    phi_values: np.ndarray
    blow_up: tuple | None = None
    tail: dict | None = None

    def transform(self, x):
        """Transform value at each grid time for initial state x."""
        x = np.asarray(x, dtype=float)
        if self.convention is Convention.LAPLACE:
            return np.exp(-self.phi_values - self.psi_values @ x)
        return np.exp(self.phi_values + self.psi_values @ x)


def _rhs(params, convention):
    n = params.dim
    if convention is Convention.LAPLACE:
        def rhs(t, y):
            u = y[:n]
            return np.append(eval_R(params, u), eval_F(params, u))
    else:
        def rhs(t, y):
            u = -y[:n]
            return np.append(-eval_R(params, u), -eval_F(params, u))
    return rhs


def integrate(params, initial, convention=Convention.LAPLACE, horizon=1.0, grid=None,
              rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL, stop_norm=None):
    """Integrate the Riccati system with an embedded Runge-Kutta 5(4) method.

    Parameters
    ----------
    params : AffineParams
    initial : array_like
        psi(0) = u in K* (Laplace) or q(0) = eta (exponential).
    convention : Convention or str
    horizon : float
    grid : array_like, optional
        Output times in [0, horizon]; defaults to the accepted step times.
    rtol, atol : float
    stop_norm : float, optional
        Stop early once ||psi|| falls to this level.

    Returns
    -------
    RiccatiSolution
        Grid points past a blow-up are dropped; ``blow_up`` holds
        (last accepted time, reason).
    """
    convention = Convention.coerce(convention)
    u0 = params.space.check(initial, "initial").astype(float)
    if u0.ndim != 1:
        raise UsageError("initial must be a single vector")
    if convention is Convention.LAPLACE and not params.space.contains(u0, dual=True):
        raise UsageError("initial value must lie in the dual cone for the Laplace convention")
    if not horizon > 0:
        raise UsageError("horizon must be positive")
    n = params.dim
    y0 = np.append(u0, 0.0)
    rhs = _rhs(params, convention)
    try:
        solver = RK45(rhs, 0.0, y0, float(horizon), rtol=rtol, atol=atol)
    except DomainError as exc:
        raise UsageError(f"initial value outside the convergence region: {exc}") from exc
    h_min = H_MIN_REL * horizon
    times, states, interps = [0.0], [y0], []
    blow_up = None
    while solver.status == "running":
        try:
            solver.step()
        except DomainError as exc:
            blow_up = (times[-1], f"left the convergence region: {exc}")
            break
        if solver.status == "failed":
            blow_up = (times[-1], "step size collapse")
            break
        interps.append(solver.dense_output())
        times.append(solver.t)
        states.append(solver.y.copy())
        norm = float(np.linalg.norm(solver.y[:n]))
        if not np.isfinite(norm) or norm > OVERFLOW_GUARD:
            blow_up = (solver.t, "overflow guard")
            break
        if solver.status == "running" and solver.step_size < h_min:
            blow_up = (solver.t, "step size collapse")
            break
        if stop_norm is not None and norm <= stop_norm:
            break
    times = np.array(times)
    states = np.array(states)
    if grid is None:
        out_t, out_y = times, states
    else:
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or np.any(np.diff(grid) < 0) or grid[0] < 0:
            raise UsageError("grid must be nondecreasing and start at t >= 0")
        keep = grid[grid <= times[-1] * (1 + 1e-14)]
        out_y = np.empty((keep.size, n + 1))
        idx = np.clip(np.searchsorted(times, keep, side="left"), 1, max(len(times) - 1, 1))
        for i, (g, k) in enumerate(zip(keep, idx)):
            if g <= 0 or not interps:
                out_y[i] = y0 if g <= 0 else states[-1]
            elif g >= times[-1]:
                out_y[i] = states[-1]
            else:
                out_y[i] = interps[k - 1](g)
        out_t = keep
    return RiccatiSolution(convention, out_t, out_y[:, :n], out_y[:, n], blow_up)


@dataclass
class ConservativeReport:
    conservative: bool
    reasons: list

    @property
    def message(self):
        if self.conservative:
            return "conservative: yes (sufficient condition)"
        return "conservative: not established (" + "; ".join(self.reasons) + ")"

    def to_dict(self):
        return {"conservative": self.conservative, "message": self.message, "reasons": self.reasons}


def check_conservative(params):
    """Sufficient condition: c = 0, gamma = 0 and finite first moments of mu."""
    reasons = []
    if params.c > 0:
        reasons.append("c>0")
    if np.any(params.gamma != 0):
        reasons.append("gamma nonzero")
    # atoms and exponential rays always have finite first moments
    return ConservativeReport(not reasons, reasons)


def stationary_laplace(params, v, certificate, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL):
    """int exp(<v, x>) pi(dx) for the stationary law pi.

    The trajectory q' = -R(-q), q(0) = v is integrated until it is within
    eps_tail = 1e-9 (1 + ||v||) of the origin; the remaining integral of
    -F(-q) is replaced by its linearization <grad F(0), -(B~^T)^{-1} q(T)>.

    Returns
    -------
    value : float
    truncation_bound : float
        10 ||grad F(0)|| ||q(T)|| / |tau| times ``value``.

    Raises
    ------
    UsageError
        If the certificate is not Certified or v leaves the region where the
        trajectory contracts to zero.
    """
    if certificate is None or not certificate.certified:
        raise UsageError("stationary_laplace needs a Certified drift certificate")
    v = params.space.check(v, "v").astype(float)
    vnorm = float(np.linalg.norm(v))
    if vnorm == 0:
        return 1.0, 0.0
    tau = certificate.tau
    eps_tail = 1e-9 * (1 + vnorm)
    horizon = 100.0 / abs(tau)
    sol = integrate(params, v, Convention.EXPONENTIAL, horizon, rtol=rtol, atol=atol, stop_norm=eps_tail)
    qT = sol.psi_values[-1]
    qnorm = float(np.linalg.norm(qT))
    if sol.blow_up is not None or qnorm > eps_tail:
        raise UsageError("v outside certified neighborhood")
    Lt = effective_drift(params).matrix.T
    g0 = grad_F0(params)
    tail = float(g0 @ -np.linalg.solve(Lt, qT))
    value = float(np.exp(sol.phi_values[-1] + tail))
    bound = TAIL_SAFETY * float(np.linalg.norm(g0)) * qnorm / abs(tau) * value
    return value, bound
