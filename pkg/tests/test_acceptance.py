"""The eleven acceptance criteria at their stated tolerances.

Each test prints one PASS/FAIL line; the lines are repeated in the pytest
terminal summary.  Simulation-based criteria record digests of their raw
output so the determinism criterion can rerun them with another worker count.
"""

import hashlib
import time

import numpy as np
import pytest
from scipy import stats

from affcone.cones import ConeSpace
from affcone.diagnostics import (LyapunovFn, drift_contraction_check, empirical_laplace_check,
                                 exponential_lyapunov, tv_decay)
from affcone.models import make_cir
from affcone.moments import build_generator, stationary_moments
from affcone.params import AffineParams, Atom, ExponentialRay, JumpMeasure, StateDependentJumps
from affcone.riccati import Convention, integrate, stationary_laplace
from affcone.simulation import ensemble_jump_diffusion, ensemble_pure_jump, simulate
from affcone.stability import (drift_certificate, lyapunov_operator, lyapunov_psd, sandwich_operator,
                               spectral_bound)

from conftest import record_acceptance

SEED = 20240611
PATHS = 100_000
DT = {"cir": 1e-3, "bajd": 1e-3, "wishart": 2e-3, "wishart_jumps": 2e-3, "orthant": 2e-3}
PRIMARY_WORKERS = 4
RERUN_WORKERS = 1

# digests[name][workers] = sha256 of the raw simulation output
DIGESTS = {}


def _digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def _store(name, workers, *arrays):
    DIGESTS.setdefault(name, {})[workers] = _digest(*arrays)


# ---------------------------------------------------------------- simulation runs, parametrized by workers


def run_first_jump(control, workers):
    ens = ensemble_pure_jump(control, [1.0], 10.0, PATHS, SEED, workers=workers)
    return ens.first_jump


def run_skeleton_mean(params, workers):
    ens = ensemble_pure_jump(params, [1.0], 20.0, PATHS, SEED + 1, delta=1.0, workers=workers)
    return ens.states


def killed_model():
    base = make_cir(1.0, 1.0, 2.0)
    one = np.array([1.0])
    return base.replace(
        m=JumpMeasure((ExponentialRay(0.3, one, 2.0),)),
        mu=StateDependentJumps(((0.5 * one, JumpMeasure((Atom(1.0, 0.5 * one),))),)),
    )


def run_killed(workers):
    ens = ensemble_jump_diffusion(killed_model(), [1.0], 1.0, 1e-3, PATHS, SEED + 2, times=[0.5, 1.0],
                                  workers=workers)
    return ens.first_jump


def run_laplace(params, name, workers):
    scheme = "purejump" if name == "purejump" else ("euler" if not params.has_jumps else "jumpdiffusion")
    return simulate(params, scheme, params.space.canonical_interior(), 5.0, PATHS, SEED + 3, dt=DT.get(name),
                    times=[0.5, 1.0, 5.0], workers=workers)


def run_tv(params, x_a, x_b, times, paths, workers, dt=None):
    return tv_decay(params, x_a, x_b, times, paths, bins=20, seed=SEED + 4, dt=dt, workers=workers)


def run_contraction(params, lyap, workers):
    return drift_contraction_check(params, lyap, delta=1.0, paths=10_000, seed=SEED + 5, workers=workers)


# ---------------------------------------------------------------- 1


def _random_qmi_case(rng):
    """A random qmi drift on a random cone, shifted so that tau(L) straddles zero."""
    if rng.random() < 0.5:
        m = int(rng.integers(1, 7))
        space = ConeSpace.orthant(m)
        M = rng.standard_normal((m, m))
        off = np.abs(M) * (rng.random((m, m)) < 0.6)
        L = off - np.diag(np.diag(off)) + np.diag(rng.standard_normal(m))
    else:
        d = int(rng.integers(1, 4))
        space = ConeSpace.psd(d)
        beta = rng.standard_normal((d, d))
        L = sandwich_operator(beta)
        for _ in range(int(rng.integers(0, 3))):
            A = rng.standard_normal((d, d)) * 0.5
            # x -> A^T x A preserves S_d^+ and keeps L qmi
            L = L + _congruence(A, d)
    tau0 = spectral_bound(L)
    shift = tau0 + rng.uniform(-1.0, 1.0)
    while abs(tau0 - shift) < 1e-3:
        shift = tau0 + rng.uniform(-1.0, 1.0)
    L = L - shift * np.eye(space.dim)
    return space, L


def _congruence(A, d):
    from affcone.cones import coords_to_sym, sym_to_coords

    n = d * (d + 1) // 2
    E = coords_to_sym(np.eye(n), d)
    return sym_to_coords(A.T @ E @ A).T


def test_criterion_1_certificate_soundness():
    rng = np.random.default_rng(SEED)
    start = time.perf_counter()
    disagreements = 0
    bad_margins = 0
    for _ in range(200):
        space, L = _random_qmi_case(rng)
        params = AffineParams(space, space.canonical_interior(), L, np.zeros((space.dim,) * 3))
        cert = drift_certificate(params)
        stable = spectral_bound(L) < 0
        if cert.certified != stable:
            disagreements += 1
        if cert.certified and not (cert.residual_interior > 0 and cert.residual_image > 0):
            bad_margins += 1
    elapsed = time.perf_counter() - start
    ok = disagreements == 0 and bad_margins == 0 and elapsed < 10
    record_acceptance(1, ok, f"200 qmi maps: {disagreements} disagreements, {bad_margins} nonpositive margins, "
                             f"{elapsed:.2f}s (limit 10s)")
    assert ok


# ---------------------------------------------------------------- 2


def test_criterion_2_wishart_lyapunov_equivalence():
    rng = np.random.default_rng(SEED + 10)
    start = time.perf_counter()
    mismatches = 0
    worst_identity = 0.0
    for d in (2, 3):
        for _ in range(100):
            beta = rng.standard_normal((d, d))
            beta -= (spectral_bound(beta) + rng.uniform(-1.0, 1.0)) * np.eye(d)
            tau_beta = spectral_bound(beta)
            lyap = lyapunov_psd(beta)
            lyap_ok = lyap.certified and lyap.min_eig > 0
            tau_B = spectral_bound(sandwich_operator(beta))
            if not (tau_beta < 0) == lyap_ok == (tau_B < 0):
                mismatches += 1
            worst_identity = max(worst_identity, abs(tau_B - 2 * tau_beta))
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and worst_identity <= 1e-10 and elapsed < 5
    record_acceptance(2, ok, f"200 random beta: {mismatches} mismatches, max |tau(B) - 2 tau(beta)| = "
                             f"{worst_identity:.2e} (tol 1e-10), {elapsed:.2f}s (limit 5s)")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion_3_riccati_closed_form():
    params = make_cir(1.0, 1.0, 2.0)
    start = time.perf_counter()
    grid = np.linspace(0.0, 10.0, 1001)
    worst = 0.0
    for u in (0.5, 1.0, 2.0):
        sol = integrate(params, [u], Convention.LAPLACE, 10.0, grid=grid)
        exact = u * np.exp(-grid) / (1 + u * (1 - np.exp(-grid)))
        worst = max(worst, float(np.max(np.abs(sol.psi_values[:, 0] - exact))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 1
    record_acceptance(3, ok, f"max psi error {worst:.2e} (tol 1e-8), {elapsed:.2f}s (limit 1s)")
    assert ok


# ---------------------------------------------------------------- 4


def test_criterion_4_stationary_transform():
    params = make_cir(1.0, 1.0, 2.0)
    start = time.perf_counter()
    cert = drift_certificate(params)
    rows = []
    ok = cert.certified
    for v in (-0.1, -0.5, -1.0, -2.0, -3.0):
        value, bound = stationary_laplace(params, [v], cert)
        err = abs(value - 1 / (1 - v))
        rows.append(f"v={v}: err {err:.1e}")
        ok = ok and err <= max(1e-6, bound)
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 1
    record_acceptance(4, ok, "; ".join(rows) + f"; {elapsed:.2f}s (limit 1s)")
    assert ok


# ---------------------------------------------------------------- 5


def test_criterion_5_stationary_moments(models):
    start = time.perf_counter()
    cir = make_cir(1.0, 1.0, 2.0)
    stat = stationary_moments(build_generator(cir, 2), drift_certificate(cir))
    err_cir = max(abs(stat.mean()[0] - 1.0), abs(stat.second_moment()[0, 0] - 2.0))
    wish = models["wishart"]
    stat_w = stationary_moments(build_generator(wish, 1), drift_certificate(wish))
    # oracle: beta M + M beta^T = -delta alpha
    beta, alpha, delta = -0.5 * np.eye(2), np.eye(2), 3.0
    from scipy.linalg import solve_continuous_lyapunov

    M = solve_continuous_lyapunov(beta, -delta * alpha)
    err_w = float(np.max(np.abs(wish.space.to_matrix(stat_w.mean()) - M)))
    elapsed = time.perf_counter() - start
    ok = err_cir <= 1e-10 and err_w <= 1e-10 and np.allclose(M, 3 * np.eye(2)) and elapsed < 1
    record_acceptance(5, ok, f"CIR moment error {err_cir:.1e}, Wishart mean error {err_w:.1e} (tol 1e-10), "
                             f"{elapsed:.2f}s (limit 1s)")
    assert ok


# ---------------------------------------------------------------- 6


def test_criterion_6_pure_jump_sampler(control, models):
    start = time.perf_counter()
    first = run_first_jump(control, PRIMARY_WORKERS)
    _store("6-first-jump", PRIMARY_WORKERS, first)
    horizon = 10.0
    x0 = 1.0
    # P[T > t] = exp(-x0 (1 - e^{-t})): the jump rate is x0 e^{-t} along the flow
    cdf = lambda t: 1.0 - np.exp(-x0 * (1.0 - np.exp(-np.minimum(t, horizon))))  # noqa: E731
    observed = first[np.isfinite(first)]
    p_jump = cdf(horizon)
    ks = stats.kstest(observed, lambda t: cdf(t) / p_jump)
    # the fraction of paths with a jump is binomial
    z_frac = (observed.size / first.size - p_jump) / np.sqrt(p_jump * (1 - p_jump) / first.size)
    purejump = models["purejump"]
    states = run_skeleton_mean(purejump, PRIMARY_WORKERS)
    _store("6-skeleton", PRIMARY_WORKERS, states)
    final = states[:, -1, 0]
    target = stationary_moments(build_generator(purejump, 2), drift_certificate(purejump)).mean()[0]
    z_mean = (final.mean() - target) / (final.std(ddof=1) / np.sqrt(final.size))
    elapsed = time.perf_counter() - start
    ok = ks.pvalue > 0.01 and abs(z_mean) < 4 and abs(z_frac) < 4 and elapsed < 60
    record_acceptance(6, ok, f"first-jump KS p={ks.pvalue:.3f} (>0.01), jump-fraction z={z_frac:.2f}, "
                             f"skeleton mean z={z_mean:.2f} (|z|<4), {elapsed:.1f}s (limit 60s)")
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion_7_killed_diffusion_identity():
    start = time.perf_counter()
    params = killed_model()
    first = run_killed(PRIMARY_WORKERS)
    _store("7-killed", PRIMARY_WORKERS, first)
    killed = params.without_jumps(killing=True)
    sol = integrate(killed, [0.0], Convention.LAPLACE, 1.0, grid=[0.5, 1.0])
    oracle = sol.transform([1.0])
    rows, ok = [], True
    for t, value in zip((0.5, 1.0), oracle):
        survive = (first > t).astype(float)
        p = survive.mean()
        se = np.sqrt(p * (1 - p) / survive.size)
        z = (p - value) / se
        rows.append(f"t={t}: MC {p:.4f} vs Riccati {value:.4f}, z={z:.2f}")
        ok = ok and abs(z) < 4
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 120
    record_acceptance(7, ok, "; ".join(rows) + f"; {elapsed:.1f}s (limit 120s)")
    assert ok


# ---------------------------------------------------------------- 8


def test_criterion_8_affine_transform_crosscheck(models):
    start = time.perf_counter()
    worst = (0.0, "")
    failures = 0
    for name, params in models.items():
        ens = run_laplace(params, name, PRIMARY_WORKERS)
        _store(f"8-{name}", PRIMARY_WORKERS, ens.states, ens.jumps)
        base = params.space.canonical_interior(dual=True)
        for scale in (0.5, 1.0):
            for t in (0.5, 1.0, 5.0):
                check = empirical_laplace_check(ens, params, scale * base, t)
                z = check.z_score
                if z is None or abs(z) >= 4:
                    failures += 1
                if z is not None and abs(z) > worst[0]:
                    worst = (abs(z), f"{name} u={scale} t={t}")
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 300
    record_acceptance(8, ok, f"{len(models)} models x 2 u x 3 t: {failures} with |z|>=4, max |z|={worst[0]:.2f} "
                             f"at {worst[1]}, {elapsed:.1f}s (limit 300s)")
    assert ok


# ---------------------------------------------------------------- 9

CIR_TV_TIMES = np.arange(0.25, 4.01, 0.25)
CONTROL_TV_TIMES = np.arange(1.0, 20.01, 1.0)
CONTROL_TV_PATHS = 20_000


def test_criterion_9_geometric_decay(control):
    start = time.perf_counter()
    cir = make_cir(1.0, 1.0, 2.0)
    fit = run_tv(cir, [0.1], [5.0], CIR_TV_TIMES, PATHS, PRIMARY_WORKERS, dt=1e-3)
    _store("9-cir", PRIMARY_WORKERS, fit.distances)
    fit_c = run_tv(control, [0.1], [5.0], CONTROL_TV_TIMES, CONTROL_TV_PATHS, PRIMARY_WORKERS)
    _store("9-control", PRIMARY_WORKERS, fit_c.distances)
    cir_ok = (not fit.refused and fit.fitted_rate < 0 and fit.r_squared > 0.9
              and 0.5 <= -fit.fitted_rate <= 2.0)
    control_ok = fit_c.refused or fit_c.fitted_rate >= -0.05
    elapsed = time.perf_counter() - start
    ok = cir_ok and control_ok and elapsed < 300
    control_text = f"refused ({fit_c.reason})" if fit_c.refused else f"rate {fit_c.fitted_rate:.4f}"
    record_acceptance(9, ok, f"CIR rate {fit.fitted_rate:.3f} r2={fit.r_squared:.3f} (gap 1, factor 2); "
                             f"control {control_text} (>= -0.05); {elapsed:.1f}s (limit 300s)")
    assert ok


# ---------------------------------------------------------------- 10


def test_criterion_10_foster_lyapunov(models):
    start = time.perf_counter()
    cir = make_cir(1.0, 1.0, 2.0)
    rep_cir = run_contraction(cir, LyapunovFn.polynomial([1.0], 2), PRIMARY_WORKERS)
    _store("10-cir", PRIMARY_WORKERS, rep_cir.ratios)
    wish = models["wishart"]
    lyap, h0 = exponential_lyapunov(wish)
    rep_w = run_contraction(wish, lyap, PRIMARY_WORKERS)
    _store("10-wishart", PRIMARY_WORKERS, rep_w.ratios)
    ok = rep_cir.contracting and rep_w.contracting
    elapsed = time.perf_counter() - start
    record_acceptance(10, ok, f"CIR poly2 rho={rep_cir.rho_hat} outside r={rep_cir.ball_radius}; "
                              f"Wishart exp h0={h0} rho={rep_w.rho_hat} outside r={rep_w.ball_radius}; "
                              f"{elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 11


def _rerun(name, models, control):
    """Recompute one simulation-based run with RERUN_WORKERS."""
    w = RERUN_WORKERS
    if name == "6-first-jump":
        return _digest(run_first_jump(control, w))
    if name == "6-skeleton":
        return _digest(run_skeleton_mean(models["purejump"], w))
    if name == "7-killed":
        return _digest(run_killed(w))
    if name.startswith("8-"):
        model = name[2:]
        ens = run_laplace(models[model], model, w)
        return _digest(ens.states, ens.jumps)
    if name == "9-cir":
        return _digest(run_tv(make_cir(1.0, 1.0, 2.0), [0.1], [5.0], CIR_TV_TIMES, PATHS, w, dt=1e-3).distances)
    if name == "9-control":
        return _digest(run_tv(control, [0.1], [5.0], CONTROL_TV_TIMES, CONTROL_TV_PATHS, w).distances)
    if name == "10-cir":
        return _digest(run_contraction(make_cir(1.0, 1.0, 2.0), LyapunovFn.polynomial([1.0], 2), w).ratios)
    if name == "10-wishart":
        wish = models["wishart"]
        return _digest(run_contraction(wish, exponential_lyapunov(wish)[0], w).ratios)
    raise KeyError(name)


EXPECTED_RUNS = ["6-first-jump", "6-skeleton", "7-killed"] + [
    f"8-{n}" for n in ("cir", "bajd", "wishart", "wishart_jumps", "orthant", "purejump")
] + ["9-cir", "9-control", "10-cir", "10-wishart"]


def test_criterion_11_determinism(models, control):
    start = time.perf_counter()
    mismatched, missing = [], []
    for name in EXPECTED_RUNS:
        if PRIMARY_WORKERS not in DIGESTS.get(name, {}):
            missing.append(name)
            continue
        if _rerun(name, models, control) != DIGESTS[name][PRIMARY_WORKERS]:
            mismatched.append(name)
    elapsed = time.perf_counter() - start
    ok = not mismatched and not missing
    detail = (f"{len(EXPECTED_RUNS) - len(missing)} runs rerun with workers {RERUN_WORKERS} vs "
              f"{PRIMARY_WORKERS}: {len(mismatched)} mismatches")
    if mismatched:
        detail += f" {mismatched}"
    if missing:
        detail += f", {len(missing)} runs missing (earlier criteria not executed: {missing})"
    record_acceptance(11, ok, detail + f", {elapsed:.1f}s")
    if missing and not mismatched:
        pytest.fail("run the full acceptance module so criterion 11 can compare digests")
    assert ok
