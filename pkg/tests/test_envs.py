import math

import numpy as np
import pytest

from trsmpc.core import rollout_batch
from trsmpc.envs import (CartPoleParams, TruckParams, cartpole_cost, cartpole_energy,
                         cartpole_step, make_env, tractor_pose, truck_cost, truck_step)

CP = CartPoleParams()
TK = TruckParams()


def circumradius(a, b, c):
    ab, bc, ca = np.linalg.norm(a - b), np.linalg.norm(b - c), np.linalg.norm(c - a)
    cross = (b - a)[0] * (c - a)[1] - (b - a)[1] * (c - a)[0]
    return ab * bc * ca / (2.0 * abs(cross))


class TestCartPole:
    @pytest.mark.parametrize("theta", [0.0, math.pi])
    def test_equilibria(self, theta):
        s = np.array([0.3, 0.0, theta, 0.0])
        out = cartpole_step(CP, s, 0.0)
        assert np.max(np.abs(out - s)) <= 1e-10

    def test_energy_conserved(self):
        s = np.array([0.0, 0.5, 1.2, -0.7])
        e0 = cartpole_energy(CP, s)
        for _ in range(1000):
            s = cartpole_step(CP, s, 0.0, dt=1e-3)
        assert abs(cartpole_energy(CP, s) - e0) <= 1e-4 * abs(e0)

    def test_force_pushes_cart(self):
        out = cartpole_step(CP, np.array([0.0, 0.0, math.pi, 0.0]), 5.0)
        assert out[1] > 0

    def test_costs(self):
        assert cartpole_cost(CP, np.zeros(4), 0.0) == 0.0
        assert cartpole_cost(CP, np.array([0.0, 0.0, math.pi, 0.0]), 0.0) == pytest.approx(
            2 * CP.q_theta, rel=1e-15)

    def test_cost_polynomial(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x, xd, th, thd = rng.normal(size=4) * 3
            u = rng.normal() * 5
            ref = (10 * (1 - math.cos(th)) + 1 * x * x + 0.1 * xd * xd + 0.1 * thd * thd
                   + 0.01 * u * u)
            assert cartpole_cost(CP, np.array([x, xd, th, thd]), u) == pytest.approx(ref, rel=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(1)
        s, u = rng.normal(size=(5, 4)), rng.normal(size=(5, 1))
        batch = cartpole_step(CP, s, u)
        for i in range(5):
            assert np.array_equal(batch[i], cartpole_step(CP, s[i], u[i]))


class TestTruck:
    def test_straight_backing(self):
        s = np.array([20.0, 0.0, 0.0, 0.0])
        for k in range(1, 101):
            s = truck_step(TK, s, 0.0)
            assert s[0] == pytest.approx(20.0 + k * TK.speed * TK.dt, abs=1e-12)
            assert s[1] == 0.0 and s[2] == 0.0 and s[3] == 0.0

    def test_goal_cost(self):
        assert truck_cost(TK, np.zeros(4), 0.0) == 0.0

    def test_cost_terms(self):
        s = np.array([2.0, -1.0, 0.2, 0.4])
        ref = 0.01 * 4 + 1.0 * 1 + 10 * 0.04 + 1.0 * 0.16 + 0.1 * 0.09
        assert truck_cost(TK, s, 0.3) == pytest.approx(ref, rel=1e-14)
        assert truck_cost(TK, s, 0.3) >= 0

    def test_jackknife_penalty(self):
        s = np.array([0.0, 0.0, 0.0, TK.jackknife_limit + 0.1])
        ref = TK.q_hitch * (TK.jackknife_limit + 0.1) ** 2 + TK.jackknife_penalty * 0.01
        assert truck_cost(TK, s, 0.0) == pytest.approx(ref, rel=1e-12)

    @pytest.mark.parametrize("u", [0.05, 0.1, -0.2])
    def test_turning_radius(self, u):
        s = np.array([0.0, 0.0, 0.0, 0.0])
        poses = [tractor_pose(TK, s)]
        for _ in range(100):
            s = truck_step(TK, s, u, dt=0.01)
            poses.append(tractor_pose(TK, s))
        p = np.array(poses)[:, :2]
        radius = circumradius(p[0], p[50], p[100])
        assert radius == pytest.approx(TK.wheelbase / math.tan(abs(u)), rel=0.01)

    def test_tractor_follows_trailer_geometry(self):
        s = np.array([1.0, 2.0, 0.3, 0.1])
        pose = tractor_pose(TK, s)
        assert np.hypot(pose[0] - 1.0, pose[1] - 2.0) == pytest.approx(TK.hitch_length)
        assert pose[2] == pytest.approx(0.4)


def rk4_slope(step, s0, u, t_end=1.0):
    ref = s0.copy()
    n_ref = 4096
    for _ in range(n_ref):
        ref = step(ref, u, t_end / n_ref)
    dts, errs = [], []
    for n in (8, 16, 32, 64):
        s = s0.copy()
        for _ in range(n):
            s = step(s, u, t_end / n)
        dts.append(t_end / n)
        errs.append(np.linalg.norm(s - ref))
    return np.polyfit(np.log(dts), np.log(errs), 1)[0]


@pytest.mark.parametrize("env", ["cartpole", "truck"])
def test_rk4_order(env):
    if env == "cartpole":
        step = lambda s, u, dt: cartpole_step(CP, s, u, dt)  # noqa: E731
        s0, u = np.array([0.0, 0.3, 2.5, -0.4]), 1.5
    else:
        step = lambda s, u, dt: truck_step(TK, s, u, dt)  # noqa: E731
        s0, u = np.array([5.0, 1.0, 0.3, 0.2]), 0.3
    assert rk4_slope(step, s0, u) >= 3.5


@pytest.mark.parametrize("env", ["cartpole", "truck"])
def test_kernel_matches_generic_rollout(env):
    params, ocp, _ = make_env(env)
    rng = np.random.default_rng(2)
    u = np.clip(rng.normal(size=(6, ocp.sequence_dim)) * params.init_std,
                *ocp.stacked_bounds())
    x0 = params.initial_state()
    fast = rollout_batch(ocp, x0, u)
    slow = rollout_batch(ocp, x0, u, use_kernel=False)
    assert np.allclose(fast, slow, rtol=1e-12, atol=0)


class TestMakeEnv:
    def test_defaults(self):
        params, ocp, cost = make_env("truck")
        assert ocp.horizon == 40 and params.steps == 200
        assert ocp.control_upper.tolist() == [0.5]
        assert cost(np.zeros((1, 4)), np.zeros((1, 1)))[0] == 0.0

    def test_overrides_coerce_strings(self):
        params, ocp, _ = make_env("cartpole", {"horizon": "20", "pole_mass": "0.2"})
        assert params.horizon == 20 and ocp.horizon == 20 and params.pole_mass == 0.2

    def test_unknown(self):
        with pytest.raises(ValueError):
            make_env("pendulum")
        with pytest.raises(ValueError, match="wheels"):
            make_env("truck", {"wheels": 4})

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            CartPoleParams(dt=0.0)
        with pytest.raises(ValueError):
            TruckParams(jackknife_limit=2.0)
