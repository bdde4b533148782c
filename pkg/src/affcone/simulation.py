"""Path simulation: exact pure-jump sampling, projected Euler schemes, thinning.

Randomness is organized in fixed-width chunks of ``CHUNK`` paths.  Each chunk
owns counter-based Philox streams keyed by (seed, chunk index, purpose), and
every draw is made at full chunk width, so the numbers consumed by path i
depend only on (seed, i).  Path arithmetic is elementwise across paths, which
makes ensembles bitwise reproducible for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .cones import SQRT2, coords_to_sym, sym_to_coords
from .errors import UsageError
from .params import Atom, sample_jump
from .stability import spectral_bound

CHUNK = 1024
NOISE_BLOCK = 16
POOL_SIZE = 16
THINNING_MARGIN = 0.5
CAP_WARN_FRACTION = 0.01
HAZARD_RTOL = 1e-12
EIGEN_COND_MAX = 1e6

_NORMAL, _JUMP, _AUX, _EVENT, _POOL = 0, 1, 2, 3, 4


def _stream(seed, chunk, purpose, extra=()):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chunk), purpose, *extra])))


def _matvec(M, X):
    """X @ M.T row by row with a fixed summation order (batch-size independent)."""
    out = np.zeros(X.shape[:-1] + (M.shape[0],), dtype=np.result_type(M, X))
    for k in range(M.shape[1]):
        out += X[..., k, None] * M[:, k]
    return out


def _dot(v, X):
    out = np.zeros(X.shape[:-1], dtype=np.result_type(v, X))
    for k in range(v.size):
        out += X[..., k] * v[k]
    return out


# ---------------------------------------------------------------- flows


@dataclass(eq=False)
class FlowCache:
    """Deterministic flow x' = Bx + b and cumulative hazard l t + int <Lambda, x_s> ds.

    ``flow`` and ``hazard`` use the augmented matrix exponential of
    [[B, b, 0], [0, 0, 0], [Lambda^T, l, 0]].  The batched variants switch to
    an eigen-decomposition of B when it is invertible and well conditioned.
    """

    B: np.ndarray
    b: np.ndarray
    l: float = 0.0
    Lambda: np.ndarray | None = None

    def __post_init__(self):
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        n = self.B.shape[0]
        self.b = np.asarray(self.b, dtype=float).reshape(n)
        self.Lambda = np.zeros(n) if self.Lambda is None else np.asarray(self.Lambda, dtype=float).reshape(n)
        self.l = float(self.l)
        M = np.zeros((n + 2, n + 2))
        M[:n, :n] = self.B
        M[:n, n] = self.b
        M[n + 1, :n] = self.Lambda
        M[n + 1, n] = self.l
        self.augmented = M
        self.tau = spectral_bound(self.B)
        self._eig = None
        w, V = np.linalg.eig(self.B)
        if np.all(np.abs(w) > 1e-12) and np.linalg.cond(V) < EIGEN_COND_MAX:
            Vinv = np.linalg.inv(V)
            xstar = -np.linalg.solve(self.B, self.b)
            self._eig = (w, V, Vinv, xstar)
            self._LV = self.Lambda @ V
            self._Lxstar = float(self.Lambda @ xstar)

    @classmethod
    def from_params(cls, params):
        return cls(params.B, params.b, params.l, params.Lambda)

    @property
    def dim(self):
        return self.b.size

    def _aug_apply(self, t, x):
        n = self.dim
        E = scipy.linalg.expm(t * self.augmented)
        z = np.concatenate([x, [1.0, 0.0]])
        out = E @ z
        return out[:n], float(out[n + 1])

    def flow(self, t, x):
        """e^{Bt} x + int_0^t e^{B(t-s)} b ds for a single state."""
        x = np.asarray(x, dtype=float)
        if t == 0:
            return x.copy()
        return self._aug_apply(t, x)[0]

    def hazard(self, t, x):
        """(H(t), flow(t, x)) for a single state."""
        if t == 0:
            return 0.0, np.asarray(x, dtype=float).copy()
        fx, H = self._aug_apply(t, np.asarray(x, dtype=float))
        return H, fx

    def batch_hazard(self, t, X):
        """Vectorized (H, flow, rate at flow) for times t (N,) and states X (N, n)."""
        t = np.asarray(t, dtype=float)
        if self._eig is not None:
            w, V, Vinv, xstar = self._eig
            y = _matvec(Vinv, X - xstar)
            e = np.exp(t[:, None] * w)
            fx = xstar + _matvec(V, e * y).real
            integ = _dot(self._LV, (np.expm1(t[:, None] * w) / w) * y).real
            H = self.l * t + self._Lxstar * t + integ
        else:
            n = self.dim
            E = scipy.linalg.expm(t[:, None, None] * self.augmented)
            z = np.concatenate([X, np.ones((X.shape[0], 1)), np.zeros((X.shape[0], 1))], axis=1)
            out = np.einsum("nij,nj->ni", E, z)
            fx, H = out[:, :n], out[:, n + 1]
        rate = self.l + _dot(self.Lambda, fx)
        return H, fx, rate


def flow(cache, t, x):
    if t < 0:
        raise UsageError("t must be nonnegative")
    return cache.flow(t, x)


def _solve_hazard(cache, X, target, hi):
    """Vectorized root of H(z) = target on (0, hi] by safeguarded Newton.

    Converged entries are frozen, so each root depends only on its own inputs
    and not on the rest of the batch.
    """
    lo = np.zeros_like(target)
    hi = hi.copy()
    z = 0.5 * hi
    live = np.arange(z.size)
    for _ in range(200):
        zl, hl, ll = z[live], hi[live], lo[live]
        H, _, rate = cache.batch_hazard(zl, X[live])
        f = H - target[live]
        ll = np.where(f < 0, zl, ll)
        hl = np.where(f >= 0, zl, hl)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = zl - f / rate
        ok = (rate > 0) & (newton > ll) & (newton < hl)
        z_new = np.where(ok, newton, 0.5 * (ll + hl))
        done = (np.abs(z_new - zl) <= HAZARD_RTOL * np.maximum(z_new, 1e-300)) | (hl - ll <= HAZARD_RTOL * hl)
        z[live], hi[live], lo[live] = z_new, hl, ll
        live = live[~done]
        if live.size == 0:
            break
    return z


def next_jump_time(cache, x, l, Lambda, exp1_draw, horizon):
    """First z with l z + int_0^z <Lambda, flow(s, x)> ds = exp1_draw, or None past ``horizon``."""
    if not exp1_draw > 0:
        raise UsageError("exp1_draw must be positive")
    if cache.l != l or not np.array_equal(cache.Lambda, np.asarray(Lambda, dtype=float).reshape(-1)):
        cache = FlowCache(cache.B, cache.b, l, Lambda)
    x = np.asarray(x, dtype=float)
    dt0 = 0.1 / abs(cache.tau) if cache.tau != 0 else 0.1
    z = min(dt0, horizon)
    while True:
        H, _ = cache.hazard(z, x)
        if H >= exp1_draw:
            break
        if z >= horizon:
            return None
        z = min(2 * z, horizon)
    root = _solve_hazard(cache, x[None, :], np.array([exp1_draw]), np.array([z]))
    return float(root[0])


# ---------------------------------------------------------------- containers


@dataclass
class PathSample:
    times: np.ndarray
    states: np.ndarray
    jump_times: np.ndarray
    seed: int
    scheme: str


@dataclass
class PathEnsemble:
    """States of ``paths`` paths on a common output grid.

    ``jumps[p, k]`` counts jumps of path p in (times[k-1], times[k]];
    ``first_jump`` is the first jump time (inf if none before the horizon).
    """

    times: np.ndarray
    states: np.ndarray
    jumps: np.ndarray
    first_jump: np.ndarray
    seed: int
    scheme: str
    dt: float | None = None
    cap_hits: int = 0
    steps: int = 0
    warnings: list = field(default_factory=list)

    @property
    def paths(self):
        return self.states.shape[0]

    def index_of(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise UsageError(f"time {t} is not on the output grid")
        return k

    def at(self, t):
        return self.states[:, self.index_of(t), :]

    def path(self, p):
        return PathSample(self.times.copy(), self.states[p].copy(),
                          self.times[self.jumps[p] > 0].copy(), self.seed, self.scheme)

    def to_csv(self, handle):
        dim = self.states.shape[2]
        handle.write("path_id,time," + ",".join(f"coord_{i + 1}" for i in range(dim)) + ",is_jump\n")
        for p in range(self.paths):
            for k, t in enumerate(self.times):
                coords = ",".join(repr(float(v)) for v in self.states[p, k])
                handle.write(f"{p},{float(t)!r},{coords},{int(self.jumps[p, k] > 0)}\n")


def skeleton(ensemble, delta, k_max):
    """States at times k * delta, k = 0..k_max, shape (paths, k_max + 1, dim)."""
    if not delta > 0 or k_max < 1:
        raise UsageError("delta must be positive and k_max >= 1")
    if k_max * delta > ensemble.times[-1] * (1 + 1e-12):
        raise UsageError("horizon shorter than k_max * delta")
    idx = []
    for k in range(k_max + 1):
        t = k * delta
        j = int(np.argmin(np.abs(ensemble.times - t)))
        if abs(ensemble.times[j] - t) > 1e-9 * max(1.0, t):
            raise UsageError(f"output grid misaligned with delta at t = {t}")
        idx.append(j)
    return ensemble.states[:, idx, :]


def output_grid(horizon, delta=None, times=None):
    """Output times: multiples of delta up to the horizon, or an explicit list."""
    if not horizon > 0:
        raise UsageError("horizon must be positive")
    if times is not None:
        grid = np.unique(np.concatenate([[0.0], np.asarray(times, dtype=float)]))
        if grid[-1] > horizon * (1 + 1e-12) or grid[0] < 0:
            raise UsageError("output times must lie in [0, horizon]")
        return grid
    if delta is None:
        return np.array([0.0, float(horizon)])
    k = int(round(horizon / delta))
    if k < 1 or abs(k * delta - horizon) > 1e-9 * horizon:
        raise UsageError("horizon must be a multiple of delta")
    return delta * np.arange(k + 1)


def _run_chunks(kernel, paths, workers):
    if paths < 1:
        raise UsageError("paths must be >= 1")
    nchunks = -(-paths // CHUNK)
    workers = max(1, min(int(workers), nchunks))
    groups = [list(g) for g in np.array_split(np.arange(nchunks), workers) if len(g)]
    if workers == 1:
        results = [kernel(groups[0])]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(kernel, groups))
    merged = [np.concatenate([r[i] for r in results], axis=0) for i in range(len(results[0]) - 1)]
    extra = sum(r[-1] for r in results)
    return [m[:paths] for m in merged], extra


# ---------------------------------------------------------------- jump marks


class _JumpTable:
    """Components of m and mu flattened for vectorized mark sampling."""

    def __init__(self, params):
        self.n = params.dim
        rows = []
        for comp in params.m.components:
            rows.append((None, comp))
        for load, meas in params.mu.terms:
            for comp in meas.components:
                rows.append((load, comp))
        self.rows = rows
        self.const = np.array([c.mass if load is None else 0.0 for load, c in rows])
        self.loads = np.array([np.zeros(self.n) if load is None else c.mass * load for load, c in rows]).reshape(
            len(rows), self.n)
        self.is_atom = np.array([isinstance(c, Atom) for _, c in rows])
        self.vectors = np.array([c.point if isinstance(c, Atom) else c.direction for _, c in rows]).reshape(
            len(rows), self.n)
        self.rates = np.array([1.0 if isinstance(c, Atom) else c.rate for _, c in rows])

    def __len__(self):
        return len(self.rows)

    def sample(self, X, u_comp, e_mark):
        """Jumps at states X (N, n) from uniforms u_comp and unit exponentials e_mark."""
        R = self.const + _matvec(self.loads, X)
        cum = np.cumsum(R, axis=1)
        total = cum[:, -1]
        k = np.sum(cum < (u_comp * total)[:, None], axis=1)
        k = np.minimum(k, len(self) - 1)
        scale = np.where(self.is_atom[k], 1.0, e_mark / self.rates[k])
        return scale[:, None] * self.vectors[k]


# ---------------------------------------------------------------- pure jump


def _require_pure_jump(params):
    if params.has_diffusion:
        raise UsageError("pure-jump simulation requires a zero diffusion tensor")
    if params.c != 0 or np.any(params.gamma != 0):
        raise UsageError("pure-jump simulation requires c = 0 and gamma = 0")


def simulate_pure_jump(params, x0, horizon, seed, grid=None):
    """Single exact path: flow, hazard inversion, jump, repeat."""
    _require_pure_jump(params)
    x = params.space.check(x0, "x0").astype(float)
    cache = FlowCache.from_params(params)
    grid = output_grid(horizon) if grid is None else np.asarray(grid, dtype=float)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed)])))
    l, Lam = params.l, params.Lambda
    events_t, events_x, jump_times = [0.0], [x.copy()], []
    t = 0.0
    has_jumps = params.has_jumps
    while t < horizon:
        z = next_jump_time(cache, x, l, Lam, rng.exponential(), horizon - t) if has_jumps else None
        if z is None:
            break
        x = cache.flow(z, x)
        t += z
        nu = _state_measure(params, x)
        x = x + sample_jump(nu, rng)
        events_t.append(t)
        events_x.append(x.copy())
        jump_times.append(t)
    events_t = np.array(events_t)
    times = np.unique(np.concatenate([grid, events_t]))
    all_states = []
    for g in times:
        j = int(np.searchsorted(events_t, g, side="right")) - 1
        all_states.append(cache.flow(g - events_t[j], events_x[j]))
    return PathSample(times, np.array(all_states), np.array(jump_times), int(seed), "ExactPureJump")


def _state_measure(params, x):
    """The finite measure m + <x, mu> as a JumpMeasure."""
    from .params import ExponentialRay, JumpMeasure

    comps = list(params.m.components)
    for load, meas in params.mu.terms:
        w = float(load @ x)
        if w <= 0:
            continue
        for c in meas.components:
            if isinstance(c, Atom):
                comps.append(Atom(c.weight * w, c.point))
            else:
                comps.append(ExponentialRay(c.intensity * w, c.direction, c.rate))
    return JumpMeasure(tuple(comps))


def ensemble_pure_jump(params, x0, horizon, paths, seed, delta=None, times=None, workers=1):
    """Exact pure-jump ensemble, vectorized over paths."""
    _require_pure_jump(params)
    x0 = params.space.check(x0, "x0").astype(float)
    grid = output_grid(horizon, delta, times)
    cache = FlowCache.from_params(params)
    table = _JumpTable(params)
    n = params.dim
    has_jumps = params.has_jumps

    def kernel(chunks):
        width = CHUNK * len(chunks)
        streams = [_stream(seed, c, _EVENT) for c in chunks]
        X = np.tile(x0, (width, 1))
        t = np.zeros(width)
        gi = np.ones(width, dtype=int)
        out = np.empty((width, grid.size, n))
        out[:, 0] = x0
        jumps = np.zeros((width, grid.size), dtype=np.int64)
        first = np.full(width, np.inf)

        def draws():
            return np.concatenate([s.random((CHUNK, 3)) for s in streams], axis=0)

        budget = -np.log1p(-draws()[:, 0])
        active = np.ones(width, dtype=bool)
        while np.any(active):
            d = draws()
            idx = np.nonzero(active)[0]
            seg = grid[gi[idx]] - t[idx]
            if has_jumps:
                H, fx, _ = cache.batch_hazard(seg, X[idx])
                jump = H >= budget[idx]
            else:
                fx = cache.batch_hazard(seg, X[idx])[1]
                H = np.zeros(idx.size)
                jump = np.zeros(idx.size, dtype=bool)
            stay = idx[~jump]
            X[stay] = fx[~jump]
            budget[stay] -= H[~jump]
            t[stay] = grid[gi[stay]]
            out[stay, gi[stay]] = X[stay]
            gi[stay] += 1
            active[stay[gi[stay] >= grid.size]] = False
            jid = idx[jump]
            if jid.size:
                z = _solve_hazard(cache, X[jid], budget[jid], seg[jump])
                z = np.minimum(z, seg[jump])
                pre = cache.batch_hazard(z, X[jid])[1]
                X[jid] = pre + table.sample(pre, d[jid, 1], -np.log1p(-d[jid, 2]))
                t[jid] += z
                first[jid] = np.minimum(first[jid], t[jid])
                jumps[jid, gi[jid]] += 1
                budget[jid] = -np.log1p(-d[jid, 0])
        return out, jumps, first, 0

    (states, jumps, first), _ = _run_chunks(kernel, paths, workers)
    return PathEnsemble(grid, states, jumps, first, int(seed), "ExactPureJump")


# ---------------------------------------------------------------- Euler


def _sqrt_psd2(a, c, e):
    """Square root of [[a, c], [c, e]] for psd input, elementwise over batches."""
    s = np.sqrt(np.maximum(a * e - c * c, 0.0))
    t = np.sqrt(np.maximum(a + e + 2 * s, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(t > 0, 1.0 / t, 0.0)
    return (a + s) * inv, c * inv, (e + s) * inv


def _project_psd2(a, c, e):
    """Nearest psd matrix (eigenvalue floor) for batches of 2x2 symmetric matrices."""
    m = 0.5 * (a + e)
    r = np.sqrt((0.5 * (a - e)) ** 2 + c * c)
    lo, hi = m - r, m + r
    neg = lo < 0
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(neg & (hi > 0), hi / np.where(neg, 2 * r, 1.0), 0.0)
    return (np.where(neg, scale * (a - lo), a), np.where(neg, scale * c, c), np.where(neg, scale * (e - lo), e))


def _rows_matvec(M, X):
    """M @ X for state rows X of shape (n, N), summed in a fixed order."""
    out = []
    for j in range(M.shape[0]):
        acc = np.zeros(X.shape[1])
        for k in range(M.shape[1]):
            if M[j, k] != 0:
                acc += M[j, k] * X[k]
        out.append(acc)
    return np.array(out)


class _Stepper:
    """Drift, diffusion increment and projection for one model.

    States are stored as rows: X has shape (dim, paths).
    """

    def __init__(self, params):
        self.params = params
        self.space = params.space
        self.n = params.dim
        self.b = params.b[:, None]
        self.B = params.B
        Q = params.Q
        self.wishart = params.wishart
        if not params.has_diffusion:
            self.mode = "none"
            self.noise_dim = 0
        elif self.wishart is not None:
            self.mode = "wishart"
            self.d = self.space.size
            self.noise_dim = self.d * self.d
            self.q0 = np.asarray(self.wishart.q0, dtype=float)
            self.q0_identity = bool(np.array_equal(self.q0, np.eye(self.d)))
        elif all(np.count_nonzero(Q[k] - np.diag(np.diag(Q[k]))) == 0 for k in range(self.n)):
            self.mode = "diag"
            self.noise_dim = self.n
            self.diag_T = np.array([np.diag(Q[k]) for k in range(self.n)]).T
        else:
            self.mode = "general"
            self.noise_dim = self.n

    def drift(self, X):
        return self.b + _rows_matvec(self.B, X)

    def diffuse(self, X, Z, sqdt):
        """Diffusion increment for normals Z of shape (noise_dim, paths)."""
        if self.mode == "diag":
            var = np.maximum(_rows_matvec(self.diag_T, X), 0.0)
            return np.sqrt(var) * Z * sqdt
        if self.mode == "general":
            A = np.einsum("kp,kij->pij", X, self.params.Q)
            w, V = np.linalg.eigh(A)
            root = np.sqrt(np.maximum(w, 0.0))
            inc = np.einsum("pij,pj->pi", V, root * np.einsum("pji,jp->pi", V, Z))
            return inc.T * sqdt
        d = self.d
        if d == 1:
            return 2 * np.sqrt(np.maximum(X, 0.0)) * Z * (self.q0[0, 0] * sqdt)
        if d == 2:
            return self._diffuse_wishart2(X, Z, sqdt)
        W = Z.T.reshape(-1, d, d) * sqdt
        w, V = np.linalg.eigh(coords_to_sym(X.T, d))
        S = (V * np.sqrt(np.maximum(w, 0.0))[..., None, :]) @ np.swapaxes(V, -1, -2)
        Y = S @ W @ self.q0
        return sym_to_coords(Y + np.swapaxes(Y, -1, -2)).T

    def _diffuse_wishart2(self, X, Z, sqdt):
        s0, s1, s2 = _sqrt_psd2(X[0], X[1] / SQRT2, X[2])
        w00, w01, w10, w11 = (Z[k] * sqdt for k in range(4))
        y = [[s0 * w00 + s1 * w10, s0 * w01 + s1 * w11], [s1 * w00 + s2 * w10, s1 * w01 + s2 * w11]]
        if not self.q0_identity:
            q = self.q0
            y = [[y[i][0] * q[0, j] + y[i][1] * q[1, j] for j in range(2)] for i in range(2)]
        return np.array([2 * y[0][0], SQRT2 * (y[0][1] + y[1][0]), 2 * y[1][1]])

    def project(self, X):
        if self.space.kind == "orthant" or self.space.size == 1:
            return np.maximum(X, 0.0)
        if self.space.size == 2:
            a, c, e = _project_psd2(X[0], X[1] / SQRT2, X[2])
            return np.array([a, c * SQRT2, e])
        return self.space.project(X.T).T


def _poisson_count(u, lam):
    """Smallest k with P(N <= k) >= u for N ~ Poisson(lam), elementwise."""
    p = np.exp(-lam)
    cdf = p.copy()
    k = np.zeros(u.shape, dtype=np.int64)
    more = u > cdf
    j = 0
    while np.any(more):
        j += 1
        k += more
        p = p * lam / j
        cdf = cdf + p
        more = more & (u > cdf) & (p > 0)
    return k


class _CandidatePool:
    """Per-path reserve of thinning candidate records (time, accept, component, mark).

    Records are pre-drawn at full chunk width; a path that exhausts its
    reserve refills it from a stream keyed by (seed, path index, refill).
    """

    def __init__(self, seed, chunks):
        self.seed = seed
        self.chunks = chunks
        self.records = np.concatenate(
            [_stream(seed, c, _POOL).random((CHUNK, POOL_SIZE, 4)) for c in chunks], axis=0)
        self.used = np.zeros(len(chunks) * CHUNK, dtype=np.int64)
        self.refills = np.zeros(len(chunks) * CHUNK, dtype=np.int64)

    def take(self, ids):
        full = ids[self.used[ids] >= POOL_SIZE]
        for p in full:
            path_id = self.chunks[p // CHUNK] * CHUNK + p % CHUNK
            self.refills[p] += 1
            rng = _stream(self.seed, path_id, _AUX, (int(self.refills[p]),))
            self.records[p] = rng.random((POOL_SIZE, 4))
            self.used[p] = 0
        rec = self.records[ids, self.used[ids]]
        self.used[ids] += 1
        return rec


def _euler_kernel_factory(params, x0, grid, dt, nsteps, record, seed, with_jumps):
    stepper = _Stepper(params)
    table = _JumpTable(params) if with_jumps else None
    n = params.dim
    sqdt = math.sqrt(dt)
    l, Lam = params.l, params.Lambda
    slot = np.searchsorted(np.round(grid / dt).astype(np.int64), np.arange(1, nsteps + 1), side="left")

    def kernel(chunks):
        width = CHUNK * len(chunks)
        normal_streams = [_stream(seed, c, _NORMAL) for c in chunks]
        jump_streams = [_stream(seed, c, _JUMP) for c in chunks] if with_jumps else None
        pool = _CandidatePool(seed, chunks) if with_jumps else None
        X = np.tile(x0[:, None], (1, width))
        out = np.empty((width, grid.size, n))
        out[:, 0] = x0
        jumps = np.zeros((width, grid.size), dtype=np.int64)
        first = np.full(width, np.inf)
        caps = 0
        Zblock = Ublock = None
        for step in range(nsteps):
            b = step % NOISE_BLOCK
            if b == 0:
                size = min(NOISE_BLOCK, nsteps - step)
                if stepper.noise_dim:
                    Zblock = np.concatenate(
                        [s.standard_normal((size, stepper.noise_dim, CHUNK)) for s in normal_streams], axis=2)
                if with_jumps:
                    Ublock = np.concatenate([s.random((size, CHUNK)) for s in jump_streams], axis=1)
            Xl = X
            Xr = Xl + stepper.drift(Xl) * dt
            if stepper.noise_dim:
                Xr = Xr + stepper.diffuse(Xl, Zblock[b], sqdt)
            Xr = stepper.project(Xr)
            if with_jumps:
                bound = l + (1.0 + THINNING_MARGIN) * _dot(Lam, Xl.T)
                u0 = Ublock[b]
                ids = np.nonzero(u0 > np.exp(-bound * dt))[0]
                if ids.size:
                    count = _poisson_count(u0[ids], bound[ids] * dt)
                    total = np.zeros((ids.size, n))
                    tfirst = np.full(ids.size, np.inf)
                    XlT, XrT = Xl[:, ids].T, Xr[:, ids].T
                    for j in range(int(count.max())):
                        live = np.nonzero(count > j)[0]
                        rec = pool.take(ids[live])
                        s = rec[:, 0]
                        Xc = XlT[live] + s[:, None] * (XrT[live] - XlT[live])
                        rate = l + _dot(Lam, Xc)
                        bnd = bound[ids[live]]
                        caps += int(np.count_nonzero(rate > bnd))
                        acc = rec[:, 1] * bnd < rate
                        if np.any(acc):
                            a = live[acc]
                            total[a] += table.sample(Xc[acc], rec[acc, 2], -np.log1p(-rec[acc, 3]))
                            tfirst[a] = np.minimum(tfirst[a], (step + s[acc]) * dt)
                            jumps[ids[a], slot[step]] += 1
                    Xr[:, ids] += total.T
                    first[ids] = np.minimum(first[ids], tfirst)
            X = Xr
            k = record.get(step + 1)
            if k is not None:
                out[:, k] = X.T
        return out, jumps, first, caps

    return kernel


def _euler_ensemble(params, x0, horizon, dt, paths, seed, delta, workers, with_jumps, scheme, times=None):
    if not dt > 0:
        raise UsageError("dt must be positive")
    if params.c != 0 or np.any(params.gamma != 0):
        raise UsageError("simulation requires c = 0 and gamma = 0")
    x0 = params.space.check(x0, "x0").astype(float)
    if not params.space.contains(x0):
        raise UsageError("x0 must lie in the cone")
    grid = output_grid(horizon, delta, times)
    nsteps = int(round(horizon / dt))
    if nsteps < 1 or abs(nsteps * dt - horizon) > 1e-9 * horizon:
        raise UsageError("horizon must be a multiple of dt")
    steps_at = np.round(grid / dt).astype(np.int64)
    if np.any(np.abs(steps_at * dt - grid) > 1e-9 * np.maximum(grid, dt)):
        raise UsageError("output grid misaligned: output times must be multiples of dt")
    record = {int(s): k for k, s in enumerate(steps_at) if s > 0}
    kernel = _euler_kernel_factory(params, x0, grid, dt, nsteps, record, seed, with_jumps)
    (states, jumps, first), caps = _run_chunks(kernel, paths, workers)
    ens = PathEnsemble(grid, states, jumps, first, int(seed), scheme, dt, int(caps), nsteps)
    if with_jumps:
        nchunk_paths = -(-paths // CHUNK) * CHUNK
        if caps > CAP_WARN_FRACTION * nsteps * nchunk_paths:
            ens.warnings.append(f"thinning cap hit on {caps} candidate events: bias warning")
    return ens


def ensemble_euler(params, x0, horizon, dt, paths, seed, delta=None, workers=1, times=None):
    """Projected Euler-Maruyama for jump-free models."""
    if params.has_jumps:
        raise UsageError("euler scheme requires empty jump specifications; use jumpdiffusion")
    return _euler_ensemble(params, x0, horizon, dt, paths, seed, delta, workers, False, "EulerDiffusion", times)


def ensemble_jump_diffusion(params, x0, horizon, dt, paths, seed, delta=None, workers=1, times=None):
    """Projected Euler with per-step thinning of the affine jump intensity."""
    return _euler_ensemble(params, x0, horizon, dt, paths, seed, delta, workers, True, "EulerJumpDiffusion", times)


def simulate_diffusion_euler(params, x0, horizon, dt, seed, delta=None):
    ens = ensemble_euler(params, x0, horizon, dt, 1, seed, delta if delta is not None else dt)
    return ens.path(0)


def simulate_jump_diffusion(params, x0, horizon, dt, seed, delta=None):
    ens = ensemble_jump_diffusion(params, x0, horizon, dt, 1, seed, delta if delta is not None else dt)
    return ens.path(0)


def simulate(params, scheme, x0, horizon, paths, seed, dt=None, delta=None, workers=1, times=None):
    """Dispatch on ``scheme`` in {purejump, euler, jumpdiffusion}."""
    if scheme == "purejump":
        return ensemble_pure_jump(params, x0, horizon, paths, seed, delta=delta, times=times, workers=workers)
    if dt is None:
        raise UsageError(f"scheme {scheme} needs dt")
    if scheme == "euler":
        return ensemble_euler(params, x0, horizon, dt, paths, seed, delta, workers, times)
    if scheme == "jumpdiffusion":
        return ensemble_jump_diffusion(params, x0, horizon, dt, paths, seed, delta, workers, times)
    raise UsageError(f"unknown scheme {scheme!r}")
