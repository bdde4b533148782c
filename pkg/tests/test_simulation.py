import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from affcone.cones import ConeSpace
from affcone.errors import UsageError
from affcone.models import (TermStructureParams, make_cir, make_orthant, make_pure_jump, make_term_structure)
from affcone.params import Atom, JumpMeasure, StateDependentJumps
from affcone.simulation import (CHUNK, FlowCache, ensemble_euler, ensemble_jump_diffusion, ensemble_pure_jump,
                                flow, next_jump_time, output_grid, simulate, simulate_pure_jump, skeleton)

ONE = np.array([1.0])


def unit_atoms(rate_per_x=1.0, B=-2.0, b=0.5):
    return make_pure_jump([[B]], [b], mu=StateDependentJumps(((rate_per_x * ONE, JumpMeasure((Atom(1.0, ONE),))),)))


class TestFlow:
    def test_closed_form_scalar(self):
        cache = FlowCache([[-2.0]], [1.0])
        t, x = 0.7, 3.0
        expected = 0.5 + (x - 0.5) * math.exp(-2 * t)
        assert flow(cache, t, [x])[0] == pytest.approx(expected, rel=1e-13)

    def test_limit_is_equilibrium(self):
        B = np.array([[-1.0, 0.3], [0.2, -0.8]])
        b = np.array([0.5, 0.4])
        np.testing.assert_allclose(flow(FlowCache(B, b), 80.0, [3.0, 0.1]), -np.linalg.solve(B, b), rtol=1e-12)

    def test_singular_b_uses_augmented_exponential(self):
        cache = FlowCache([[0.0]], [2.0])
        assert flow(cache, 1.5, [1.0])[0] == pytest.approx(4.0)

    def test_negative_time(self):
        with pytest.raises(UsageError):
            flow(FlowCache([[-1.0]], [0.0]), -1.0, [1.0])

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.integers(0, 2**31 - 1))
    def test_batch_matches_augmented(self, t, x, seed):
        rng = np.random.default_rng(seed)
        B = -np.eye(2) + 0.3 * np.abs(rng.standard_normal((2, 2)))
        cache = FlowCache(B, [0.5, 0.2], 0.1, [1.0, 0.5])
        H, fx, rate = cache.batch_hazard(np.array([t]), np.array([[x, 1.0]]))
        H1, fx1 = cache.hazard(t, [x, 1.0])
        assert H[0] == pytest.approx(H1, rel=1e-9, abs=1e-12)
        np.testing.assert_allclose(fx[0], fx1, rtol=1e-9, atol=1e-12)
        assert rate[0] == pytest.approx(0.1 + fx1 @ [1.0, 0.5], rel=1e-9)


class TestNextJumpTime:
    def test_constant_rate(self):
        # l = 2, Lambda = 0: hazard 2z
        cache = FlowCache([[-1.0]], [0.0])
        z = next_jump_time(cache, [1.0], 2.0, [0.0], 0.6, 10.0)
        assert z == pytest.approx(0.3, rel=1e-10)

    def test_linear_rate(self):
        # x_t = e^{-t}, rate x: hazard 1 - e^{-z}
        cache = FlowCache([[-1.0]], [0.0])
        z = next_jump_time(cache, [1.0], 0.0, [1.0], 0.5, 10.0)
        assert z == pytest.approx(math.log(2), rel=1e-10)

    def test_beyond_horizon(self):
        cache = FlowCache([[-1.0]], [0.0])
        assert next_jump_time(cache, [1.0], 0.0, [1.0], 2.0, 10.0) is None

    def test_rejects_nonpositive_draw(self):
        with pytest.raises(UsageError):
            next_jump_time(FlowCache([[-1.0]], [0.0]), [1.0], 1.0, [0.0], 0.0, 1.0)


class TestGrid:
    def test_delta(self):
        np.testing.assert_allclose(output_grid(1.0, 0.25), [0, 0.25, 0.5, 0.75, 1.0])

    def test_explicit_times_include_zero(self):
        np.testing.assert_allclose(output_grid(2.0, times=[0.5, 2.0]), [0.0, 0.5, 2.0])

    def test_misaligned(self):
        with pytest.raises(UsageError):
            output_grid(1.0, 0.3)

    def test_skeleton(self):
        ens = ensemble_pure_jump(unit_atoms(), ONE, 2.0, 8, 0, delta=0.5)
        sk = skeleton(ens, 1.0, 2)
        assert sk.shape == (8, 3, 1)
        np.testing.assert_array_equal(sk[:, 1], ens.at(1.0))
        with pytest.raises(UsageError):
            skeleton(ens, 1.0, 3)


class TestPureJump:
    def test_single_path_structure(self):
        path = simulate_pure_jump(unit_atoms(), ONE, 5.0, seed=3)
        assert path.scheme == "ExactPureJump"
        assert np.all(np.diff(path.times) >= 0)
        assert np.all(path.states >= 0)
        # between jumps the path follows the flow, so each jump is a unit increment
        cache = FlowCache([[-2.0]], [0.5])
        for t in path.jump_times:
            k = int(np.searchsorted(path.times, t))
            before = flow(cache, path.times[k] - path.times[k - 1], path.states[k - 1])
            assert path.states[k, 0] - before[0] == pytest.approx(1.0, abs=1e-9)

    def test_rejects_diffusion(self, models):
        with pytest.raises(UsageError):
            ensemble_pure_jump(models["cir"], ONE, 1.0, 10, 0)

    def test_no_jumps_is_deterministic(self):
        p = make_pure_jump([[-1.0]], [1.0])
        ens = ensemble_pure_jump(p, [3.0], 2.0, 5, 0, delta=1.0)
        np.testing.assert_allclose(ens.at(2.0)[:, 0], 1 + 2 * math.exp(-2.0), rtol=1e-12)
        assert np.all(np.isinf(ens.first_jump))

    def test_mean_matches_moments(self):
        # E X_t = x* + (x0 - x*) e^{-t} with drift b - x, x* = 0.5
        ens = ensemble_pure_jump(unit_atoms(), [2.0], 1.0, 20000, 11)
        x = ens.at(1.0)[:, 0]
        expected = 0.5 + 1.5 * math.exp(-1.0)
        assert abs(x.mean() - expected) < 4 * x.std() / math.sqrt(x.size)

    def test_first_jump_law(self):
        # rate x_t = e^{-2t} x0 + 0.25 (1 - e^{-2t}) before the first jump
        p = unit_atoms()
        ens = ensemble_pure_jump(p, [2.0], 3.0, 20000, 5)
        H = lambda t: 0.25 * t + 1.75 * (1 - math.exp(-2 * t)) / 2
        frac = np.mean(ens.first_jump > 1.0)
        expected = math.exp(-H(1.0))
        assert abs(frac - expected) < 4 * math.sqrt(expected * (1 - expected) / 20000)

    def test_ensemble_counts_jumps(self):
        ens = ensemble_pure_jump(unit_atoms(), ONE, 2.0, 50, 1, delta=0.5)
        assert ens.jumps.shape == (50, 5)
        jumped = ens.jumps.sum(axis=1) > 0
        np.testing.assert_array_equal(jumped, np.isfinite(ens.first_jump))


class TestEuler:
    def test_stays_in_cone(self, models):
        p = models["wishart"]
        ens = ensemble_euler(p, p.space.canonical_interior(), 1.0, 0.01, 300, 0, delta=0.1)
        g = p.space.gauge(ens.states.reshape(-1, p.dim))
        assert np.all(g >= -1e-12)

    def test_cir_mean(self):
        ens = ensemble_euler(make_cir(1.0, 1.0, 2.0), [3.0], 1.0, 1e-3, 20000, 2)
        x = ens.at(1.0)[:, 0]
        expected = 1 + 2 * math.exp(-1.0)
        assert abs(x.mean() - expected) < 4 * x.std() / math.sqrt(x.size) + 5e-3

    def test_rejects_jumps(self, models):
        with pytest.raises(UsageError):
            ensemble_euler(models["bajd"], ONE, 1.0, 0.01, 10, 0)

    def test_misaligned_dt(self):
        with pytest.raises(UsageError, match="multiple"):
            ensemble_euler(make_cir(1.0, 1.0, 2.0), ONE, 1.0, 0.3, 10, 0)
        with pytest.raises(UsageError, match="misaligned"):
            ensemble_euler(make_cir(1.0, 1.0, 2.0), ONE, 1.0, 0.002, 10, 0, delta=0.005)

    def test_x0_outside(self):
        with pytest.raises(UsageError):
            ensemble_euler(make_cir(1.0, 1.0, 2.0), [-1.0], 1.0, 0.01, 10, 0)

    def test_wishart_mean(self, models):
        # E X_t solves X' = beta X + X beta^T + delta alpha; X_0 = I gives 3 - 2 e^{-t}
        p = models["wishart"]
        ens = ensemble_euler(p, p.space.canonical_interior(), 1.0, 2e-3, 10000, 4)
        m = p.space.to_matrix(ens.at(1.0).mean(axis=0))
        np.testing.assert_allclose(m, (3 - 2 * math.exp(-1.0)) * np.eye(2), atol=0.06)


class TestJumpDiffusion:
    def test_bajd_mean(self, models):
        # compensated jumps leave the mean reverting to theta = 1.5
        p = models["bajd"]
        ens = ensemble_jump_diffusion(p, ONE, 1.0, 1e-3, 20000, 6)
        x = ens.at(1.0)[:, 0]
        expected = 1.5 - 0.5 * math.exp(-1.0)
        assert abs(x.mean() - expected) < 4 * x.std() / math.sqrt(x.size) + 5e-3
        assert not ens.warnings

    def test_orthant_in_cone(self, models):
        p = models["orthant"]
        ens = ensemble_jump_diffusion(p, p.space.canonical_interior(), 1.0, 0.01, 200, 0, delta=0.5)
        assert np.all(ens.states >= 0)


class TestDeterminism:
    @pytest.mark.parametrize("scheme,name,dt", [("purejump", "purejump", None), ("euler", "cir", 0.01),
                                                ("jumpdiffusion", "orthant", 0.01)])
    def test_worker_invariance(self, models, scheme, name, dt):
        p = models[name]
        x0 = p.space.canonical_interior()
        paths = 2 * CHUNK + 17
        a = simulate(p, scheme, x0, 1.0, paths, 9, dt=dt, delta=0.5, workers=1)
        b = simulate(p, scheme, x0, 1.0, paths, 9, dt=dt, delta=0.5, workers=3)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.first_jump, b.first_jump)

    def test_prefix_stable_in_path_count(self, models):
        p = models["cir"]
        a = simulate(p, "euler", ONE, 1.0, 100, 9, dt=0.01)
        b = simulate(p, "euler", ONE, 1.0, 300, 9, dt=0.01)
        np.testing.assert_array_equal(a.states, b.states[:100])

    def test_seed_changes_output(self, models):
        p = models["cir"]
        a = simulate(p, "euler", ONE, 1.0, 50, 1, dt=0.01)
        b = simulate(p, "euler", ONE, 1.0, 50, 2, dt=0.01)
        assert not np.array_equal(a.states, b.states)

    def test_unknown_scheme(self, models):
        with pytest.raises(UsageError):
            simulate(models["cir"], "milstein", ONE, 1.0, 10, 0, dt=0.1)

    def test_csv(self, models):
        import io
        ens = simulate(models["cir"], "euler", ONE, 1.0, 2, 0, dt=0.5, delta=0.5)
        buf = io.StringIO()
        ens.to_csv(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "path_id,time,coord_1,is_jump"
        assert len(lines) == 1 + 2 * 3


class TestTermStructure:
    def make(self, D=-1.0):
        cp = make_cir(1.0, 1.0, 2.0)
        tp = TermStructureParams(cp, [[1.0]], [[D]], [0.0], [[0.25]], np.zeros((1, 1, 1)))
        return make_term_structure(tp)

    def test_certificate(self):
        assert self.make().certificate.certified
        assert not self.make(D=0.5).certificate.certified

    def test_y_mean(self):
        # E Y_t solves y' = E X_t - y with E X_t = 1: y0 = 0 gives 1 - e^{-t}
        model = self.make()
        ens, Y = model.simulate([1.0], [0.0], 1.0, 0.01, 5000, 3, delta=0.5)
        assert Y.shape == (5000, 3, 1)
        assert abs(Y[:, -1, 0].mean() - (1 - math.exp(-1.0))) < 0.05
        assert np.all(ens.states >= 0)

    def test_rejects_indefinite_covariance(self):
        with pytest.raises(UsageError):
            TermStructureParams(make_cir(1.0, 1.0, 2.0), [[1.0]], [[-1.0]], [0.0], [[-1.0]], np.zeros((1, 1, 1)))

    def test_rejects_jumps(self, models):
        tp = TermStructureParams(models["bajd"], [[1.0]], [[-1.0]], [0.0], [[1.0]], np.zeros((1, 1, 1)))
        with pytest.raises(UsageError):
            make_term_structure(tp)
