"""Model zoo: concrete admissible parameter sets and the term-structure model.

Wishart parameters follow the SDE

    dX = sqrt(X) dW Q0 + Q0^T dW^T sqrt(X) + (X beta + beta^T X + delta Q0^T Q0) dt,

whose quadratic variation gives <u, A(x) u> = 4 Tr(x u alpha u), alpha = Q0^T Q0.
The diffusion tensor is therefore Q(u, v) = 2(u alpha v + v alpha u).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cones import ConeSpace, coords_to_sym, sym_to_coords
from .errors import UsageError
from .params import (AffineParams, Atom, ExponentialRay, JumpMeasure, StateDependentJumps, WishartSDE,
                     validate_admissibility)
from .simulation import CHUNK, NOISE_BLOCK, PathEnsemble, _rows_matvec, _run_chunks, _Stepper, _stream, output_grid
from .stability import LinearMap, sandwich_operator, term_structure_certificate


def make_cir(a, theta, sigma2):
    """dX = a(theta - X) dt + sqrt(sigma2 X) dW on R_+."""
    if not a > 0:
        raise UsageError("CIR needs a > 0")
    if theta < 0 or sigma2 < 0:
        raise UsageError("CIR needs theta >= 0 and sigma2 >= 0")
    return AffineParams(ConeSpace.orthant(1), [a * theta], [[-a]], np.full((1, 1, 1), float(sigma2)),
                        meta={"model": "cir", "a": a, "theta": theta, "sigma2": sigma2})


def make_bajd(a, theta, sigma2, c0, d0, compensated=True):
    """CIR plus exponential jumps: intensity c0, density c0 d0 exp(-d0 xi).

    With ``compensated`` the SDE jump term is the compensated process, so the
    compensator c0 / d0 is subtracted from the constant drift a * theta.
    """
    if c0 < 0 or not d0 > 0:
        raise UsageError("BAJD needs c0 >= 0 and d0 > 0")
    base = make_cir(a, theta, sigma2)
    if c0 == 0:
        return base.replace(meta={**base.meta, "model": "bajd", "compensated": compensated})
    b = a * theta - (c0 / d0 if compensated else 0.0)
    if b < 0:
        raise UsageError("compensated BAJD needs a * theta >= c0 / d0 so that b stays in K")
    m = JumpMeasure((ExponentialRay(c0, np.array([1.0]), d0),), positive_density=True)
    meta = {"model": "bajd", "a": a, "theta": theta, "sigma2": sigma2, "c0": c0, "d0": d0,
            "compensated": compensated}
    return base.replace(b=np.array([b]), m=m, meta=meta)


def wishart_tensor(alpha):
    """Coordinate tensor of Q(u, v) = 2(u alpha v + v alpha u) on S_d."""
    alpha = np.asarray(alpha, dtype=float)
    d = alpha.shape[0]
    n = d * (d + 1) // 2
    E = coords_to_sym(np.eye(n), d)
    prod = np.einsum("iab,bc,jcd->ijad", E, alpha, E)
    sym = 2 * (prod + np.swapaxes(prod, 0, 1))
    return np.moveaxis(sym_to_coords(sym), -1, 0)


@dataclass
class WishartParams:
    d: int
    delta: float
    beta: np.ndarray
    Q0: np.ndarray
    m: JumpMeasure = field(default_factory=JumpMeasure)
    mu: StateDependentJumps = field(default_factory=StateDependentJumps)

    def __post_init__(self):
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        self.Q0 = np.atleast_2d(np.asarray(self.Q0, dtype=float))
        if self.d < 1:
            raise UsageError("Wishart needs d >= 1")
        if self.beta.shape != (self.d, self.d) or self.Q0.shape != (self.d, self.d):
            raise UsageError(f"beta and Q0 must be {self.d}x{self.d}")
        if not self.delta > self.d - 1:
            raise UsageError(f"Wishart needs delta > d - 1 = {self.d - 1}")

    @property
    def alpha(self):
        return self.Q0.T @ self.Q0


def make_wishart(wp):
    space = ConeSpace.psd(wp.d)
    alpha = wp.alpha
    return AffineParams(
        space,
        b=sym_to_coords(wp.delta * alpha),
        B=sandwich_operator(wp.beta),
        Q=wishart_tensor(alpha),
        m=wp.m,
        mu=wp.mu,
        wishart=WishartSDE(wp.beta, wp.Q0, wp.delta),
        meta={"model": "wishart", "d": wp.d, "delta": wp.delta},
    )


def make_orthant(B, b, sigma2, m=None, mu=None, density_positive=False):
    """Affine jump-diffusion on R_+^m with diagonal diffusion diag(sigma2_i x_i)."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    dim = B.shape[0]
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (dim,))
    if np.any(sigma2 < 0):
        raise UsageError("sigma2 must be nonnegative")
    Q = np.zeros((dim, dim, dim))
    for k in range(dim):
        Q[k, k, k] = sigma2[k]
    return AffineParams(ConeSpace.orthant(dim), b, B, Q, m=m or JumpMeasure(), mu=mu or StateDependentJumps(),
                        density_positive=density_positive, meta={"model": "orthant"})


def make_pure_jump(B, b, m=None, mu=None):
    """Pure-jump affine process on R_+^m (zero diffusion)."""
    p = make_orthant(B, b, 0.0, m, mu)
    return p.replace(meta={"model": "purejump"})


def zoo():
    """Named models used across tests, diagnostics and the CLI."""
    one = np.array([1.0])
    ident2 = sym_to_coords(np.eye(2))
    models = {
        "cir": make_cir(1.0, 1.0, 2.0),
        "bajd": make_bajd(1.0, 1.5, 1.0, 1.0, 2.0),
        "wishart": make_wishart(WishartParams(2, 3.0, -0.5 * np.eye(2), np.eye(2))),
        "wishart_jumps": make_wishart(WishartParams(
            2, 3.0, -np.eye(2), np.eye(2),
            m=JumpMeasure((ExponentialRay(0.5, ident2, 2.0),), positive_density=False),
            mu=StateDependentJumps(((0.5 * ident2, JumpMeasure((Atom(1.0, 0.5 * ident2),))),)),
        )),
        "orthant": make_orthant(
            [[-1.0, 0.3], [0.2, -0.8]], [0.5, 0.4], [0.5, 0.8],
            mu=StateDependentJumps(((np.array([0.2, 0.1]), JumpMeasure((Atom(1.0, np.array([0.5, 0.5])),))),)),
        ),
        "purejump": make_pure_jump(
            [[-1.0]], [0.5],
            m=JumpMeasure((ExponentialRay(0.5, one, 2.0),), positive_density=True),
            mu=StateDependentJumps(((one, JumpMeasure((Atom(0.5, one),))),)),
        ),
    }
    for name, p in models.items():
        models[name] = p.replace(meta={**p.meta, "name": name})
    return models


def control_model():
    """Deliberately uncertified pure-jump model: B = -1, unit atoms at rate x, so B~ = 0."""
    one = np.array([1.0])
    p = make_pure_jump([[-1.0]], [0.0], mu=StateDependentJumps(((one, JumpMeasure((Atom(1.0, one),))),)))
    return p.replace(meta={**p.meta, "name": "control"})


def default_initial_state(params):
    return params.space.canonical_interior()


PRESETS = {
    "cir": ("a", "theta", "sigma2"),
    "bajd": ("a", "theta", "sigma2", "c0", "d0"),
    "wishart": ("d", "delta", "beta", "q0"),
}


def parse_preset(text):
    """Build a model from ``cir:a=1,theta=1,sigma2=2``, ``wishart:d=2,delta=3,beta=-0.5,q0=1``,
    ``bajd:...`` or ``zoo:<name>``.  Wishart beta and q0 are multiples of the identity."""
    kind, _, rest = text.strip().partition(":")
    if kind == "zoo":
        models = {**zoo(), "control": control_model()}
        if rest not in models:
            raise UsageError(f"unknown zoo model {rest!r}; choose from {sorted(models)}")
        return models[rest]
    if kind not in PRESETS:
        raise UsageError(f"unknown preset {kind!r}")
    values = {}
    for item in filter(None, rest.split(",")):
        key, eq, val = item.partition("=")
        key = key.strip()
        if not eq or key not in PRESETS[kind]:
            raise UsageError(f"bad preset field {item!r} for {kind}; expected {PRESETS[kind]}")
        try:
            values[key] = float(val)
        except ValueError as exc:
            raise UsageError(f"preset field {key} is not a number: {val!r}") from exc
    missing = [k for k in PRESETS[kind] if k not in values]
    if missing:
        raise UsageError(f"preset {kind} is missing {missing}")
    if kind == "cir":
        return make_cir(values["a"], values["theta"], values["sigma2"])
    if kind == "bajd":
        return make_bajd(values["a"], values["theta"], values["sigma2"], values["c0"], values["d0"])
    d = int(values["d"])
    if d != values["d"]:
        raise UsageError("wishart d must be an integer")
    return make_wishart(WishartParams(d, values["delta"], values["beta"] * np.eye(d), values["q0"] * np.eye(d)))


# ---------------------------------------------------------------- term structure


@dataclass
class TermStructureParams:
    """X affine diffusion on K; dY = (c + C X + D Y) dt + sigma(X) dW^Y with sigma sigma^T = E + F(X)."""

    coneparams: AffineParams
    C: np.ndarray
    D: np.ndarray
    c_vec: np.ndarray
    E: np.ndarray
    F_load: np.ndarray

    def __post_init__(self):
        dim = self.coneparams.dim
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        n = self.D.shape[0]
        self.C = np.asarray(self.C, dtype=float).reshape(n, dim)
        self.c_vec = np.asarray(self.c_vec, dtype=float).reshape(n)
        self.E = np.atleast_2d(np.asarray(self.E, dtype=float))
        self.F_load = np.asarray(self.F_load, dtype=float).reshape(dim, n, n)
        if self.D.shape != (n, n) or self.E.shape != (n, n):
            raise UsageError(f"D and E must be {n}x{n}")
        if np.linalg.eigvalsh(0.5 * (self.E + self.E.T))[0] < -1e-12:
            raise UsageError("E must be positive semidefinite")
        rng = np.random.default_rng(0)
        for x in self.coneparams.space.sample_points(64, rng):
            S = self.E + np.einsum("k,kij->ij", x, self.F_load)
            if np.linalg.eigvalsh(0.5 * (S + S.T))[0] < -1e-10 * (1 + np.abs(S).max()):
                raise UsageError("E + F(x) must be positive semidefinite on K")

    @property
    def n(self):
        return self.D.shape[0]


@dataclass
class TermStructureModel:
    params: TermStructureParams
    certificate: object

    def simulate(self, x0, y0, horizon, dt, paths, seed, delta=None, workers=1):
        """Euler ensemble of (X, Y); X projected to K, Y unconstrained.

        Returns (ensemble of X, array of Y states with shape (paths, grid, n)).
        """
        return _simulate_term_structure(self.params, x0, y0, horizon, dt, paths, seed, delta, workers)


def make_term_structure(tp):
    cp = tp.coneparams
    if cp.has_jumps:
        raise UsageError("term-structure cone block must be diffusion-only")
    report = validate_admissibility(cp)
    if not report.passed:
        raise UsageError("cone block is not admissible: " + ", ".join(e.condition for e in report.failures()))
    cert = term_structure_certificate(LinearMap(cp.space, cp.B), tp.C, tp.D)
    return TermStructureModel(tp, cert)


def _simulate_term_structure(tp, x0, y0, horizon, dt, paths, seed, delta, workers):
    cp = tp.coneparams
    x0 = cp.space.check(x0, "x0").astype(float)
    y0 = np.asarray(y0, dtype=float).reshape(tp.n)
    grid = output_grid(horizon, delta)
    nsteps = int(round(horizon / dt))
    if nsteps < 1 or abs(nsteps * dt - horizon) > 1e-9 * horizon:
        raise UsageError("horizon must be a multiple of dt")
    stride = int(round((grid[1] - grid[0]) / dt))
    if abs(stride * dt - (grid[1] - grid[0])) > 1e-9 * grid[1]:
        raise UsageError("output grid misaligned: delta must be a multiple of dt")
    stepper = _Stepper(cp)
    n, dim = tp.n, cp.dim
    sqdt = math.sqrt(dt)
    const_root = None
    if not np.any(tp.F_load):
        w, V = np.linalg.eigh(tp.E)
        const_root = (V * np.sqrt(np.maximum(w, 0.0))) @ V.T
    kx = stepper.noise_dim

    def kernel(chunks):
        width = CHUNK * len(chunks)
        streams = [_stream(seed, c, 0) for c in chunks]
        X = np.tile(x0[:, None], (1, width))
        Y = np.tile(y0[:, None], (1, width))
        outx = np.empty((width, grid.size, dim))
        outy = np.empty((width, grid.size, n))
        outx[:, 0], outy[:, 0] = x0, y0
        for step in range(nsteps):
            b = step % NOISE_BLOCK
            if b == 0:
                size = min(NOISE_BLOCK, nsteps - step)
                Z = np.concatenate([s.standard_normal((size, kx + n, CHUNK)) for s in streams], axis=2)
            Zx, Zy = Z[b, :kx], Z[b, kx:]
            ydrift = tp.c_vec[:, None] + _rows_matvec(tp.C, X) + _rows_matvec(tp.D, Y)
            if const_root is not None:
                dy = _rows_matvec(const_root, Zy)
            else:
                S = tp.E + np.einsum("kp,kij->pij", X, tp.F_load)
                w, V = np.linalg.eigh(S)
                root = np.sqrt(np.maximum(w, 0.0))
                dy = np.einsum("pij,pj->ip", V, root * np.einsum("pji,jp->pj", V, Zy))
            Xn = X + stepper.drift(X) * dt
            if kx:
                Xn = Xn + stepper.diffuse(X, Zx, sqdt)
            X = stepper.project(Xn)
            Y = Y + ydrift * dt + dy * sqdt
            if (step + 1) % stride == 0:
                k = (step + 1) // stride
                outx[:, k], outy[:, k] = X.T, Y.T
        return outx, outy, 0

    (states, ystates), _ = _run_chunks(kernel, paths, workers)
    ens = PathEnsemble(grid, states, np.zeros(states.shape[:2], dtype=np.int64), np.full(paths, np.inf),
                       int(seed), "EulerTermStructure", dt, 0, nsteps)
    return ens, ystates
