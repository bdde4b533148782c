import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from affcone.cones import ConeSpace
from affcone.errors import DomainError, UsageError
from affcone.models import make_cir
from affcone.params import (AffineParams, Atom, ExponentialRay, JumpMeasure, StateDependentJumps,
                            exp_moment_integral, jump_moment, laplace_gradient, laplace_integral,
                            mixed_moment, sample_jump, validate_admissibility)
from affcone.riccati import eval_F, eval_R

ONE = np.array([1.0])


def ray(c=0.7, d=2.0, direction=ONE):
    return JumpMeasure((ExponentialRay(c, direction, d),))


class TestComponents:
    def test_atom_weight_positive(self):
        with pytest.raises(UsageError):
            Atom(0.0, ONE)

    def test_ray_rate_positive(self):
        with pytest.raises(UsageError):
            ExponentialRay(1.0, ONE, 0.0)

    def test_measure_helpers(self):
        m = JumpMeasure((Atom(0.5, ONE), ExponentialRay(0.25, ONE, 1.0)))
        assert m.total_mass == 0.75
        assert len(m.atoms) == 1 and len(m.rays) == 1
        assert not JumpMeasure()

    def test_state_dependent_total_and_moment(self):
        mu = StateDependentJumps(((np.array([2.0, 0.0]), JumpMeasure((Atom(0.5, np.array([1.0, 3.0])),))),))
        np.testing.assert_allclose(mu.total(2), [1.0, 0.0])
        np.testing.assert_allclose(mu.first_moment_matrix(2), [[1.0, 0.0], [3.0, 0.0]])


class TestIntegrals:
    def test_ray_laplace_closed_form(self):
        c, d, u = 0.7, 2.0, 0.9
        expected = integrate.quad(lambda s: (math.exp(-u * s) - 1) * c * d * math.exp(-d * s), 0, np.inf)[0]
        assert laplace_integral(ray(c, d), [u]) == pytest.approx(expected, rel=1e-12)
        assert laplace_integral(ray(c, d), [u]) == pytest.approx(-c * u / (d + u), rel=1e-14)

    def test_laplace_negative_argument_domain(self):
        with pytest.raises(DomainError):
            laplace_integral(ray(1.0, 2.0), [-2.5])
        assert laplace_integral(ray(1.0, 2.0), [-1.0]) == pytest.approx(1.0)

    def test_batch(self):
        u = np.array([[0.1], [0.5], [1.0]])
        vals = laplace_integral(ray(), u)
        assert vals.shape == (3,)
        assert vals[1] == pytest.approx(laplace_integral(ray(), u[1]))

    def test_gradient_matches_finite_difference(self):
        m = JumpMeasure((Atom(0.4, np.array([1.0, 0.5])), ExponentialRay(0.3, np.array([0.2, 1.0]), 1.5)))
        u = np.array([0.3, 0.8])
        h = 1e-6
        fd = [(laplace_integral(m, u + h * e) - laplace_integral(m, u - h * e)) / (2 * h) for e in np.eye(2)]
        np.testing.assert_allclose(laplace_gradient(m, u), fd, rtol=1e-8)

    def test_exp_moment(self):
        c, d, eta = 0.5, 2.0, 0.5
        assert exp_moment_integral(ray(c, d), [eta]) == pytest.approx(c * d / (d - eta))
        assert exp_moment_integral(ray(c, d), [2.0]) == math.inf
        tail = integrate.quad(lambda s: c * d * math.exp((eta - d) * s), 1, np.inf)[0]
        assert exp_moment_integral(ray(c, d), [eta], "norm_geq_one") == pytest.approx(tail, rel=1e-10)
        with pytest.raises(UsageError):
            exp_moment_integral(ray(), [0.1], "bogus")

    @pytest.mark.parametrize("order", [1, 2, 3, 4])
    def test_ray_moments(self, order):
        c, d = 0.7, 2.0
        expected = integrate.quad(lambda s: s**order * c * d * math.exp(-d * s), 0, np.inf)[0]
        assert jump_moment(ray(c, d), order).flat[0] == pytest.approx(expected, rel=1e-10)
        assert mixed_moment(ray(c, d), [order]) == pytest.approx(expected, rel=1e-10)

    def test_mixed_moment_matches_tensor(self):
        m = JumpMeasure((Atom(0.4, np.array([1.0, 0.5])), ExponentialRay(0.3, np.array([0.2, 1.0]), 1.5)))
        T = jump_moment(m, 3)
        assert mixed_moment(m, [2, 1]) == pytest.approx(T[0, 0, 1])

    def test_moment_order_limit(self):
        with pytest.raises(UsageError):
            jump_moment(ray(), 7)

    def test_sample_jump_mean(self):
        m = JumpMeasure((Atom(1.0, np.array([2.0])), ExponentialRay(1.0, ONE, 4.0)))
        rng = np.random.default_rng(0)
        draws = np.array([sample_jump(m, rng)[0] for _ in range(20000)])
        target = jump_moment(m, 1)[0] / m.total_mass
        assert abs(draws.mean() - target) < 4 * draws.std() / math.sqrt(draws.size)


class TestAffineParams:
    def test_shape_errors(self):
        space = ConeSpace.orthant(2)
        with pytest.raises(UsageError):
            AffineParams(space, [1.0], np.eye(2), np.zeros((2, 2, 2)))
        with pytest.raises(UsageError):
            AffineParams(space, [1.0, 1.0], np.eye(3), np.zeros((2, 2, 2)))
        with pytest.raises(UsageError):
            AffineParams(space, [1.0, 1.0], np.eye(2), np.zeros((2, 2, 3)))

    def test_q_must_be_symmetric(self):
        Q = np.zeros((2, 2, 2))
        Q[0, 0, 1] = 1.0
        with pytest.raises(UsageError):
            AffineParams(ConeSpace.orthant(2), [1.0, 1.0], -np.eye(2), Q)

    def test_diffusion_matrix_identity(self, models, rng):
        # <u, A(x) v> = <x, Q(u, v)>
        p = models["wishart"]
        x = p.space.sample_points(1, rng)[0]
        u, v = rng.standard_normal((2, p.dim))
        assert u @ p.diffusion_matrix(x) @ v == pytest.approx(x @ p.quad(u, v), rel=1e-12)

    def test_without_jumps_killing(self, models):
        p = models["purejump"].without_jumps(killing=True)
        assert p.c == pytest.approx(0.5)
        np.testing.assert_allclose(p.gamma, [0.5])
        assert not p.has_jumps

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.2, 5.0), st.floats(0.0, 2.0))
    def test_scaled_process_transform(self, s, u):
        # Y = sX has F_Y(u) = F_X(su) and R_Y(u) = R_X(su) / s
        p = make_cir(1.0, 1.0, 2.0).replace(m=ray(), mu=StateDependentJumps(((ONE, ray(0.3, 3.0)),)))
        q = p.scaled(s)
        assert eval_F(q, [u]) == pytest.approx(eval_F(p, [s * u]), rel=1e-12, abs=1e-14)
        np.testing.assert_allclose(eval_R(q, [u]), eval_R(p, [s * u]) / s, rtol=1e-12, atol=1e-14)


class TestAdmissibility:
    def test_zoo_models_pass(self, models):
        for name, p in models.items():
            assert validate_admissibility(p).passed, name

    def test_b_outside_cone(self):
        p = make_cir(1.0, 1.0, 2.0).replace(b=np.array([-1.0]))
        report = validate_admissibility(p)
        assert [e.condition for e in report.failures()] == ["(i) b in K"]

    def test_negative_killing(self):
        p = make_cir(1.0, 1.0, 2.0).replace(c=-0.1)
        assert not validate_admissibility(p).passed

    def test_non_metzler_drift(self):
        space = ConeSpace.orthant(2)
        p = AffineParams(space, [1.0, 1.0], [[-1.0, -0.5], [0.0, -1.0]], np.zeros((2, 2, 2)))
        failed = [e.condition for e in validate_admissibility(p).failures()]
        assert any(c.startswith("(vii)") for c in failed)

    def test_cross_diffusion_fails_iv(self):
        # x_1 driving the covariance of both coordinates is not admissible on R_+^2
        Q = np.zeros((2, 2, 2))
        Q[0] = [[1.0, 1.0], [1.0, 1.0]]
        p = AffineParams(ConeSpace.orthant(2), [1.0, 1.0], -np.eye(2), Q)
        failed = [e.condition for e in validate_admissibility(p).failures()]
        assert any(c.startswith("(iv)") for c in failed)

    def test_atom_outside_cone(self):
        p = make_cir(1.0, 1.0, 2.0).replace(m=JumpMeasure((Atom(1.0, -ONE),)))
        failed = [e.condition for e in validate_admissibility(p).failures()]
        assert any(c.startswith("(iii)") for c in failed)

    def test_report_dict(self, models):
        d = validate_admissibility(models["wishart"]).to_dict()
        assert d["passed"] and len(d["entries"]) == 7
