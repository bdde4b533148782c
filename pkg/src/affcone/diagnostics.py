"""Empirical checks of the ergodicity machinery.

Monte Carlo cross-checks of the affine transform formula, two-start
total-variation decay with a log-linear rate fit, empirical Foster-Lyapunov
contraction of the exponential and polynomial Lyapunov functions, and the
irreducibility checklists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import UsageError
from .riccati import Convention, integrate
from .simulation import simulate
from .stability import LinearMap, controllability_rank, drift_certificate, is_qmi, spectral_bound

DEFAULT_DT = 2e-3
DEFAULT_DIRECTIONS = 3
FLOOR_FACTOR = 3.0
MIN_FIT_POINTS = 3
LINE_SEARCH_HORIZON = 20.0
LINE_SEARCH_MAX_HALVINGS = 40
LINE_SEARCH_DECAY = 1e-6
LOG_OVERFLOW = 700.0


def auto_scheme(params):
    """Simulation scheme matching the model's ingredients."""
    if not params.has_diffusion:
        return "purejump"
    return "jumpdiffusion" if params.has_jumps else "euler"


def _ensemble(params, x0, horizon, paths, seed, times, dt, workers, scheme):
    scheme = scheme or auto_scheme(params)
    if scheme == "purejump":
        dt = None
    else:
        dt = DEFAULT_DT if dt is None else dt
    return simulate(params, scheme, x0, horizon, paths, seed, dt=dt, workers=workers, times=times)


# ---------------------------------------------------------------- Laplace check


@dataclass
class LaplaceCheck:
    t: float
    u: np.ndarray
    mc_value: float
    mc_stderr: float
    riccati_value: float
    z_score: float | None

    def passed(self, threshold=4.0):
        """|z| below threshold; an undefined z passes only on exact agreement."""
        if self.z_score is None:
            return abs(self.mc_value - self.riccati_value) <= 1e-12 * max(1.0, abs(self.riccati_value))
        return abs(self.z_score) < threshold

    def to_dict(self):
        return {"t": self.t, "u": self.u.tolist(), "mc_value": self.mc_value, "mc_stderr": self.mc_stderr,
                "riccati_value": self.riccati_value,
                "z_score": "undefined" if self.z_score is None else self.z_score}


def empirical_laplace_check(ensemble, params, u, t, rtol=1e-10, atol=1e-12):
    """Compare the sample mean of exp(-<u, X_t>) with the Riccati transform.

    The ensemble must start from a single state.  ``z_score`` is None when
    the sample standard error is zero.
    """
    u = params.space.check(u, "u").astype(float)
    if not params.space.contains(u, dual=True):
        raise UsageError("u must lie in the dual cone")
    x0 = ensemble.states[:, 0, :]
    if not np.all(x0 == x0[0]):
        raise UsageError("ensemble paths do not share one initial state")
    vals = np.exp(-(ensemble.at(t) @ u))
    n = vals.size
    mc = float(vals.mean())
    # identical samples have zero spread; np.std would report rounding noise
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 and np.ptp(vals) > 0 else 0.0
    if t == 0:
        ric = float(np.exp(-(x0[0] @ u)))
    else:
        sol = integrate(params, u, Convention.LAPLACE, t, grid=[t], rtol=rtol, atol=atol)
        if sol.grid.size == 0:
            raise UsageError(f"Riccati solution does not reach t = {t}")
        ric = float(sol.transform(x0[0])[-1])
    z = (mc - ric) / se if se > 0 else None
    return LaplaceCheck(float(t), u, mc, se, ric, z)


# ---------------------------------------------------------------- TV decay


@dataclass
class DecayFit:
    """Log-linear fit of a distance curve.

    ``fitted_rate`` is the slope of log(distance) against t over the points
    above the noise-floor threshold; it and the intercept are NaN when the
    fit is refused.
    """

    times: np.ndarray
    distances: np.ndarray
    fitted_rate: float
    fitted_log_intercept: float
    r_squared: float
    refused: bool = False
    reason: str = ""
    noise_floor: float = 0.0
    window: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def to_dict(self):
        return {
            "times": self.times.tolist(),
            "distances": self.distances.tolist(),
            "fitted_rate": None if self.refused else self.fitted_rate,
            "fitted_log_intercept": None if self.refused else self.fitted_log_intercept,
            "r_squared": None if self.refused else self.r_squared,
            "refused": self.refused,
            "reason": self.reason,
            "noise_floor": self.noise_floor,
            "window": self.window.tolist(),
        }

    def to_csv(self, handle):
        handle.write("t,distance\n")
        for t, d in zip(self.times, self.distances):
            handle.write(f"{float(t)!r},{float(d)!r}\n")


def projection_directions(space, count, seed):
    """Canonical dual interior point plus ``count - 1`` random dual directions, unit norm."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7D]))
    dirs = [space.canonical_interior(dual=True)]
    if count > 1:
        # both supported cones are self-dual
        dirs.extend(space.sample_points(count - 1, rng))
    dirs = np.array(dirs, dtype=float)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def binned_tv(a, b, bins):
    """Half L1 distance of histograms on pooled-quantile bins (a TV lower bound)."""
    pooled = np.concatenate([a, b])
    edges = np.unique(np.quantile(pooled, np.linspace(0.0, 1.0, bins + 1)[1:-1]))
    ia = np.searchsorted(edges, a, side="right")
    ib = np.searchsorted(edges, b, side="right")
    ha = np.bincount(ia, minlength=edges.size + 1) / a.size
    hb = np.bincount(ib, minlength=edges.size + 1) / b.size
    return float(0.5 * np.abs(ha - hb).sum())


def fit_decay(times, distances, noise_floor, singular=None):
    """Least-squares fit of log(distance) on the points above FLOOR_FACTOR * noise_floor."""
    times = np.asarray(times, dtype=float)
    distances = np.asarray(distances, dtype=float)
    window = distances > FLOOR_FACTOR * noise_floor
    nan = float("nan")
    if singular is not None and np.any(singular & window):
        return DecayFit(times, distances, nan, nan, nan, True,
                        "singular laws (point masses): distance stays at 1 until merged", noise_floor, window)
    if not window.any():
        return DecayFit(times, distances, nan, nan, nan, True, "already mixed at first time",
                        noise_floor, window)
    if window.sum() < MIN_FIT_POINTS:
        return DecayFit(times, distances, nan, nan, nan, True,
                        f"fewer than {MIN_FIT_POINTS} points above the noise floor", noise_floor, window)
    res = stats.linregress(times[window], np.log(distances[window]))
    return DecayFit(times, distances, float(res.slope), float(res.intercept), float(res.rvalue ** 2),
                    False, "", noise_floor, window)


def tv_decay(params, x_a, x_b, times, paths, bins=20, seed=0, dt=None, workers=1, scheme=None,
             directions=DEFAULT_DIRECTIONS):
    """Two-start total-variation decay with an exponential-rate fit.

    Both ensembles use the same seed.  At each time the two samples are
    projected on ``directions`` fixed dual directions; the distance is the
    largest binned half-L1 distance over directions, with ``bins`` pooled
    quantile bins.  The noise floor is sqrt(bins / paths).

    Returns
    -------
    DecayFit
    """
    space = params.space
    x_a = space.check(x_a, "x_a").astype(float)
    x_b = space.check(x_b, "x_b").astype(float)
    if paths < 1000:
        raise UsageError("tv_decay needs paths >= 1000")
    if bins < 2:
        raise UsageError("bins must be >= 2")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1 or np.any(np.diff(times) <= 0) or times[0] < 0:
        raise UsageError("times must be strictly increasing and nonnegative")
    horizon = float(times[-1])
    ens_a = _ensemble(params, x_a, horizon, paths, seed, times, dt, workers, scheme)
    ens_b = _ensemble(params, x_b, horizon, paths, seed, times, dt, workers, scheme)
    dirs = projection_directions(space, directions, seed)
    dist = np.empty(times.size)
    singular = np.zeros(times.size, dtype=bool)
    for k, t in enumerate(times):
        pa = ens_a.at(t) @ dirs.T
        pb = ens_b.at(t) @ dirs.T
        dist[k] = max(binned_tv(pa[:, j], pb[:, j], bins) for j in range(dirs.shape[0]))
        singular[k] = bool(np.all(np.ptp(pa, axis=0) == 0) or np.all(np.ptp(pb, axis=0) == 0))
    floor = math.sqrt(bins / paths)
    return fit_decay(times, dist, floor, singular)


# ---------------------------------------------------------------- Lyapunov contraction


@dataclass(frozen=True, eq=False)
class LyapunovFn:
    """H(x) = exp(<eta, x>) or <eta, x>^degree + 1 with eta in the dual interior."""

    kind: str
    eta: np.ndarray
    degree: int | None = None

    def __post_init__(self):
        if self.kind not in ("exponential", "polynomial"):
            raise UsageError("Lyapunov kind must be 'exponential' or 'polynomial'")
        eta = np.asarray(self.eta, dtype=float)
        object.__setattr__(self, "eta", eta)
        if self.kind == "polynomial" and (self.degree is None or int(self.degree) < 2):
            raise UsageError("polynomial Lyapunov functions need degree >= 2")

    @classmethod
    def exponential(cls, eta):
        return cls("exponential", eta)

    @classmethod
    def polynomial(cls, eta, degree):
        return cls("polynomial", eta, int(degree))

    def log_value(self, X):
        """log H(X), batch-aware and overflow-free."""
        s = np.asarray(X, dtype=float) @ self.eta
        if self.kind == "exponential":
            return s
        with np.errstate(divide="ignore"):
            return np.logaddexp(self.degree * np.log(np.maximum(s, 0.0)), 0.0)

    def __call__(self, X):
        return np.exp(self.log_value(X))

    def to_dict(self):
        return {"kind": self.kind, "eta": self.eta.tolist(), "degree": self.degree}


def exponential_lyapunov(params, certificate=None):
    """Exponential Lyapunov function h0 * eta0 with h0 found by halving.

    h is halved from 1 until the exponential-moment Riccati trajectory from
    h * eta0 stays finite and decreases monotonically to zero over
    [0, 20 / |tau|].

    Returns
    -------
    lyap : LyapunovFn
    h0 : float
    """
    cert = certificate if certificate is not None else drift_certificate(params)
    if not cert.certified:
        raise UsageError("exponential Lyapunov function needs a Certified drift certificate")
    horizon = LINE_SEARCH_HORIZON / abs(cert.tau)
    probe = params.space.canonical_interior()
    h = 1.0
    for _ in range(LINE_SEARCH_MAX_HALVINGS):
        eta = h * cert.eta0
        try:
            sol = integrate(params, eta, Convention.EXPONENTIAL, horizon)
        except UsageError:
            sol = None
        if sol is not None and sol.blow_up is None:
            level = sol.psi_values @ probe
            start = float(level[0])
            monotone = bool(np.all(np.diff(level) <= 1e-12 * abs(start)))
            if monotone and abs(level[-1]) <= LINE_SEARCH_DECAY * abs(start):
                return LyapunovFn.exponential(eta), h
        h /= 2
    raise UsageError("line search for h0 failed")


@dataclass
class ContractionReport:
    lyapunov: LyapunovFn
    delta: float
    points: np.ndarray
    radii: np.ndarray
    ratios: np.ndarray
    stderrs: np.ndarray
    rho_hat: float | None
    ball_radius: float | None
    contracting: bool
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "lyapunov": self.lyapunov.to_dict(),
            "delta": self.delta,
            "points": self.points.tolist(),
            "radii": self.radii.tolist(),
            "ratios": self.ratios.tolist(),
            "stderrs": self.stderrs.tolist(),
            "rho_hat": self.rho_hat,
            "ball_radius": self.ball_radius,
            "contracting": self.contracting,
            "notes": self.notes,
        }


def default_contraction_grid(space, lyap, radii=None, rays=3, seed=0):
    """Points r * e along unit rays through interior points, r on ``radii``."""
    if radii is None:
        radii = np.geomspace(0.1, 50.0, 10)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x51]))
    dirs = [space.canonical_interior()]
    if rays > 1 and space.dim > 1:
        dirs.extend(space.sample_points(rays - 1, rng))
    dirs = np.array(dirs, dtype=float)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return np.array([r * d for d in dirs for r in radii])


def drift_contraction_check(params, lyap, delta=1.0, x_grid=None, paths=10_000, seed=0, dt=None,
                            workers=1, scheme=None):
    """Empirical ratio E^x[H(X_delta)] / H(x) on a grid of starting points.

    The process contracts outside a ball when every grid point beyond some
    radius has ratio < 1; ``rho_hat`` is the largest ratio there and
    ``ball_radius`` the largest radius with ratio >= 1 (0 if none).  Grid
    points whose H overflows are dropped and noted.
    """
    if not delta > 0:
        raise UsageError("delta must be positive")
    space = params.space
    grid = default_contraction_grid(space, lyap) if x_grid is None else np.atleast_2d(np.asarray(x_grid, float))
    if grid.shape[1] != space.dim:
        raise UsageError(f"grid points must have {space.dim} coordinates")
    notes = []
    logs = lyap.log_value(grid)
    keep = logs < LOG_OVERFLOW
    if not keep.all():
        notes.append(f"grid truncated: {int((~keep).sum())} points where H overflows")
    grid = grid[keep]
    radii = np.linalg.norm(grid, axis=1)
    ratios = np.empty(len(grid))
    ses = np.empty(len(grid))
    for i, x in enumerate(grid):
        sub = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        ens = _ensemble(params, x, delta, paths, sub, None, dt, workers, scheme)
        w = np.exp(lyap.log_value(ens.states[:, -1, :]) - lyap.log_value(x))
        ratios[i] = float(w.mean())
        ses[i] = float(w.std(ddof=1) / math.sqrt(w.size)) if w.size > 1 else 0.0
    order = np.argsort(radii, kind="stable")
    bad = radii[ratios >= 1.0]
    ball = float(bad.max()) if bad.size else 0.0
    outside = radii > ball
    if outside.any():
        rho = float(ratios[outside].max())
        contracting = rho < 1.0
    else:
        rho, contracting = None, False
        notes.append("no grid point contracts")
    return ContractionReport(lyap, float(delta), grid[order], radii[order], ratios[order], ses[order],
                             rho, ball if contracting else None, contracting, notes)


# ---------------------------------------------------------------- irreducibility


@dataclass
class Condition:
    name: str
    holds: bool
    detail: str

    def to_dict(self):
        return {"name": self.name, "holds": self.holds, "detail": self.detail}


@dataclass
class IrreducibilityReport:
    routes: dict
    supported: bool

    @property
    def status(self):
        return "irreducible+aperiodic: " + ("supported" if self.supported else "not established")

    def to_dict(self):
        return {
            "status": self.status,
            "supported": self.supported,
            "routes": {name: [c.to_dict() for c in conds] for name, conds in self.routes.items()},
        }


def _interior_mass(params):
    space = params.space
    for comp in params.m.components:
        vec = comp.point if hasattr(comp, "point") else comp.direction
        if comp.mass > 0 and space.gauge(vec) > 0:
            return True
    return False


def _diffusion_route(params):
    if params.wishart is not None:
        w = params.wishart
        rank, full = controllability_rank(w.beta, w.q0)
        return [Condition("controllability rank", full, f"rank {rank} of {w.beta.shape[0]}")]
    if params.dim == 1 and params.space.kind == "orthant" and params.Q[0, 0, 0] > 0:
        return [Condition("one-dimensional square-root diffusion", True, "Q > 0 gives a positive density on the interior")]
    flag = bool(params.density_positive)
    return [Condition("declared density positivity", flag, "model flag density_positive")]


def _jump_route(params):
    space = params.space
    dens = bool(params.m.positive_density) or any(meas.positive_density for _, meas in params.mu.terms)
    B = LinearMap(space, params.B)
    tau = spectral_bound(B)
    fwd, bwd = is_qmi(B), is_qmi(LinearMap(space, -params.B))
    flow_ok = fwd.qmi and bwd.qmi and tau < 0
    b_interior = bool(space.gauge(params.b) > 0)
    m_interior = _interior_mass(params)
    return [
        Condition("(i) positive jump density", dens, "positive_density flag on m or a mu component"),
        Condition("(ii) flow preserves the interior and is stable", flow_ok,
                  f"qmi(B)={fwd.qmi}, qmi(-B)={bwd.qmi}, tau(B)={tau:.6g}"),
        Condition("(iii) m charges the interior or b interior", m_interior or b_interior,
                  f"m(interior)>0: {m_interior}, b interior: {b_interior}"),
    ]


def irreducibility_checklist(params):
    """Sufficient conditions for irreducibility and aperiodicity.

    Models with diffusion are checked on the density route (Wishart rank
    test, one-dimensional square-root diffusion, or the declared flag).
    Models with jumps are checked on the pure-jump route, which needs all
    three conditions.  Support holds if any evaluated route holds.
    """
    routes = {}
    if params.has_diffusion:
        routes["diffusion"] = _diffusion_route(params)
    if params.has_jumps or not params.has_diffusion:
        routes["jump"] = _jump_route(params)
    supported = any(all(c.holds for c in conds) for conds in routes.values())
    return IrreducibilityReport(routes, supported)
