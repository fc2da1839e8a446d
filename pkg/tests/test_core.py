import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from trsmpc.core import (JITTER, ContractError, GaussianProposal, OcpConfig, Origin, SampleBatch,
                         from_steps, gaussian_entropy, gaussian_kl, gaussian_logpdf_batch,
                         rollout_batch, to_steps)
from trsmpc.envs import CartPoleParams, cartpole_cost, cartpole_ocp, cartpole_step


def random_spd(rng, d, scale=1.0):
    a = rng.standard_normal((d, d))
    return scale * (a @ a.T / d + 0.5 * np.eye(d))


def random_proposal(rng, d):
    return GaussianProposal.from_cov(rng.standard_normal(d), random_spd(rng, d), jitter=False)


def simple_ocp(horizon=1, stage=None, terminal=None, dynamics=None, du=1, dx=1):
    return OcpConfig(horizon=horizon, control_dim=du, state_dim=dx,
                     control_lower=-np.ones(du), control_upper=np.ones(du),
                     dynamics=dynamics or (lambda x, u: x),
                     stage_cost=stage or (lambda x, u: np.zeros(len(x))),
                     terminal_cost=terminal or (lambda x: np.zeros(len(x))), dt=0.1)


class TestOcpConfig:
    def test_rejects_bad_bounds(self):
        with pytest.raises(ContractError):
            OcpConfig(1, 1, 1, [1.0], [1.0], None, None, None, 0.1)

    def test_rejects_zero_horizon(self):
        with pytest.raises(ContractError):
            simple_ocp(horizon=0)

    def test_stacked_bounds(self):
        ocp = simple_ocp(horizon=3, du=2)
        lo, hi = ocp.stacked_bounds()
        assert lo.shape == (6,) and np.all(lo == -1) and np.all(hi == 1)


@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 5))
def test_layout_round_trip(h, du, n):
    v = np.arange(n * h * du, dtype=float).reshape(n, h * du)
    steps = to_steps(v, h, du)
    assert steps.shape == (n, h, du)
    # step-major: block k holds u_k
    assert np.array_equal(steps[:, 1 % h, :], v[:, (1 % h) * du:(1 % h + 1) * du])
    assert np.array_equal(from_steps(steps), v)


def test_layout_wrong_length():
    with pytest.raises(ContractError):
        to_steps(np.zeros(5), 2, 2)


def test_sample_batch_defaults_fresh():
    b = SampleBatch(np.zeros((3, 2)))
    assert b.fresh.all() and b.origin.dtype == np.int8
    b = SampleBatch(np.zeros((3, 2)), origin=[Origin.FRESH, Origin.BUFFERED, Origin.FRESH])
    assert b.fresh.tolist() == [True, False, True]


class TestProposal:
    def test_chol_reproduces_cov(self):
        rng = np.random.default_rng(0)
        for d in (1, 3, 10):
            p = GaussianProposal.from_cov(np.zeros(d), random_spd(rng, d))
            err = np.linalg.norm(p.chol @ p.chol.T - p.cov) / np.linalg.norm(p.cov)
            assert err <= 1e-8
            assert np.allclose(p.cov, p.cov.T, rtol=1e-10, atol=0)

    def test_jitter_floor_makes_rank_deficient_factorizable(self):
        v = np.array([[1.0, 1.0]])
        p = GaussianProposal.from_cov(np.zeros(2), v.T @ v)
        assert np.linalg.eigvalsh(p.cov).min() >= 0.9 * JITTER * np.trace(v.T @ v) / 2

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            GaussianProposal.from_cov(np.zeros(2), np.eye(3))

    def test_from_marginals_keeps_correlation(self):
        rng = np.random.default_rng(1)
        c = random_spd(rng, 4)
        sd = np.sqrt(np.diag(c))
        corr = c / np.outer(sd, sd)
        p = GaussianProposal.from_marginals(np.zeros(4), [1.0, 4.0, 9.0, 0.25],
                                            np.linalg.cholesky(corr))
        s = np.sqrt(p.variances)
        assert np.allclose(p.variances, [1.0, 4.0, 9.0, 0.25], rtol=1e-12)
        assert np.allclose(p.cov / np.outer(s, s), corr, atol=1e-12)


class TestLogpdf:
    def test_standard_normal_at_zero(self):
        p = GaussianProposal.from_cov([0.0], [[1.0]], jitter=False)
        assert gaussian_logpdf_batch(p, [[0.0]])[0] == pytest.approx(-0.5 * math.log(2 * math.pi),
                                                                     abs=1e-15)

    def test_at_mean(self):
        rng = np.random.default_rng(2)
        p = random_proposal(rng, 5)
        expected = -0.5 * (5 * math.log(2 * math.pi) + np.linalg.slogdet(p.cov)[1])
        assert gaussian_logpdf_batch(p, p.mean[None])[0] == pytest.approx(expected, rel=1e-12)

    def test_explicit_inverse_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            p = random_proposal(rng, 3)
            x = rng.standard_normal((20, 3)) * 2
            inv = np.linalg.inv(p.cov)
            r = x - p.mean
            oracle = -0.5 * (np.einsum("ij,jk,ik->i", r, inv, r) + 3 * math.log(2 * math.pi)
                             + math.log(np.linalg.det(p.cov)))
            assert np.allclose(gaussian_logpdf_batch(p, x), oracle, rtol=1e-10, atol=1e-10)

    def test_dimension_mismatch(self):
        p = GaussianProposal.from_cov(np.zeros(2), np.eye(2))
        with pytest.raises(ContractError):
            gaussian_logpdf_batch(p, np.zeros((1, 3)))

    @pytest.mark.parametrize("d", [1, 2])
    def test_normalization_by_quadrature(self, d):
        rng = np.random.default_rng(4 + d)
        p = random_proposal(rng, d)
        sd = np.sqrt(np.diag(p.cov))
        lo, hi = p.mean - 10 * sd, p.mean + 10 * sd
        if d == 1:
            total, _ = integrate.quad(lambda a: math.exp(gaussian_logpdf_batch(p, [[a]])[0]),
                                      lo[0], hi[0], epsabs=1e-12)
        else:
            f = lambda b, a: math.exp(gaussian_logpdf_batch(p, [[a, b]])[0])  # noqa: E731
            total, _ = integrate.dblquad(f, lo[0], hi[0], lo[1], hi[1], epsabs=1e-10)
        assert total == pytest.approx(1.0, abs=1e-4)


class TestEntropyKl:
    def test_entropy_analytic(self):
        p1 = GaussianProposal.from_cov([0.0], [[1.0]], jitter=False)
        p2 = GaussianProposal.from_cov(np.zeros(2), np.eye(2), jitter=False)
        assert gaussian_entropy(p1) == pytest.approx(0.5 * math.log(2 * math.pi * math.e), abs=1e-14)
        assert gaussian_entropy(p2) == pytest.approx(math.log(2 * math.pi * math.e), abs=1e-14)
        assert gaussian_entropy(p1) == pytest.approx(1.4189385332, abs=1e-9)

    def test_entropy_monte_carlo(self):
        rng = np.random.default_rng(5)
        p = random_proposal(rng, 4)
        x = p.mean + rng.standard_normal((10**6, 4)) @ p.chol.T
        neg = -gaussian_logpdf_batch(p, x)
        se = neg.std() / math.sqrt(len(neg))
        assert abs(neg.mean() - gaussian_entropy(p)) <= 3 * se

    def test_kl_identity_and_mean_shift(self):
        p = GaussianProposal.from_cov([0.0], [[1.0]], jitter=False)
        q = GaussianProposal.from_cov([1.0], [[1.0]], jitter=False)
        assert gaussian_kl(p, p) == pytest.approx(0.0, abs=1e-14)
        assert gaussian_kl(p, q) == pytest.approx(0.5, abs=1e-14)

    def test_kl_quadrature_1d(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            p = random_proposal(rng, 1)
            q = random_proposal(rng, 1)

            def integrand(a):
                lp = gaussian_logpdf_batch(p, [[a]])[0]
                return math.exp(lp) * (lp - gaussian_logpdf_batch(q, [[a]])[0])

            s = math.sqrt(p.cov[0, 0])
            val, _ = integrate.quad(integrand, p.mean[0] - 15 * s, p.mean[0] + 15 * s,
                                    epsabs=1e-13, epsrel=1e-12, limit=200)
            assert gaussian_kl(p, q) == pytest.approx(val, abs=1e-6)

    def test_kl_dimension_mismatch(self):
        with pytest.raises(ContractError):
            gaussian_kl(GaussianProposal.from_cov(np.zeros(1), np.eye(1)),
                        GaussianProposal.from_cov(np.zeros(2), np.eye(2)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 10**6))
    def test_kl_nonnegative(self, d, seed):
        rng = np.random.default_rng(seed)
        assert gaussian_kl(random_proposal(rng, d), random_proposal(rng, d)) >= -1e-12

    def test_kl_plus_entropy_is_cross_entropy(self):
        rng = np.random.default_rng(7)
        for _ in range(3):
            p, q = random_proposal(rng, 3), random_proposal(rng, 3)
            x = p.mean + rng.standard_normal((10**6, 3)) @ p.chol.T
            cross = -gaussian_logpdf_batch(q, x)
            se = cross.std() / math.sqrt(len(cross))
            assert abs(gaussian_kl(p, q) + gaussian_entropy(p) - cross.mean()) <= 3 * se


class TestRollout:
    def test_identity_case(self):
        ocp = simple_ocp(horizon=1, terminal=lambda x: np.sum(x * x, axis=1))
        assert np.all(rollout_batch(ocp, [0.0], np.zeros((4, 1))) == 0.0)

    def test_constant_stage(self):
        ocp = simple_ocp(horizon=5, stage=lambda x, u: np.ones(len(x)))
        assert np.all(rollout_batch(ocp, [0.0], np.zeros((3, 5))) == 5.0)

    def test_cartpole_hanging_loop_oracle(self):
        params = CartPoleParams()
        ocp = cartpole_ocp(params)
        x0 = params.initial_state()
        costs = rollout_batch(ocp, x0, np.zeros((2, ocp.horizon)))
        x, total = x0.copy(), 0.0
        for _ in range(ocp.horizon):
            total += float(cartpole_cost(params, x, np.zeros(1)))
            x = cartpole_step(params, x, np.zeros(1))
        total += float(cartpole_cost(params, x, np.zeros(1)))  # r*0 keeps the terminal state part
        assert costs == pytest.approx(total, rel=1e-12)
        assert costs[0] == pytest.approx((ocp.horizon + 1) * 2 * params.q_theta, rel=1e-9)

    def test_kernel_matches_generic_path(self):
        params = CartPoleParams()
        ocp = cartpole_ocp(params)
        u = np.random.default_rng(8).uniform(-10, 10, (30, ocp.horizon))
        a = rollout_batch(ocp, params.initial_state(), u)
        b = rollout_batch(ocp, params.initial_state(), u, use_kernel=False)
        assert np.allclose(a, b, rtol=1e-12, atol=0)

    def test_divergent_rows_get_infinite_cost(self):
        ocp = simple_ocp(horizon=3, dynamics=lambda x, u: x * 1e200 + u,
                         stage=lambda x, u: x[:, 0] ** 2)
        costs = rollout_batch(ocp, [1.0], np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
        assert np.all(np.isinf(costs))
        ok = simple_ocp(horizon=3, stage=lambda x, u: u[:, 0] ** 2)
        assert np.all(np.isfinite(rollout_batch(ok, [1.0], np.ones((2, 3)))))

    def test_workers_do_not_change_result(self):
        params = CartPoleParams()
        ocp = cartpole_ocp(params)
        u = np.random.default_rng(9).uniform(-10, 10, (64, ocp.horizon))
        ref = rollout_batch(ocp, params.initial_state(), u, workers=1)
        for w in (2, 8):
            assert np.array_equal(ref, rollout_batch(ocp, params.initial_state(), u, workers=w))
            assert np.array_equal(
                rollout_batch(ocp, params.initial_state(), u, use_kernel=False),
                rollout_batch(ocp, params.initial_state(), u, workers=w, use_kernel=False))

    def test_contract_errors(self):
        ocp = simple_ocp(horizon=2)
        with pytest.raises(ContractError):
            rollout_batch(ocp, [np.nan], np.zeros((1, 2)))
        with pytest.raises(ContractError):
            rollout_batch(ocp, [0.0], np.zeros((1, 3)))
