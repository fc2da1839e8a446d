"""Benchmark plants: cart-pole swing-up and truck (tractor-trailer) backer-upper.

Both plants are integrated with one fixed-step RK4 step per control
interval. Step and cost functions accept a single state ``(d_x,)`` or a batch
``(N, d_x)``. Each plant also ships a compiled rollout kernel that evaluates
whole batches of control sequences without Python overhead; it computes the
same quantities as the handle-based rollout in :mod:`trsmpc.core`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from functools import partial

import numba
import numpy as np

from .core import OcpConfig


def rk4(deriv, x, u, dt):
    k1 = deriv(x, u)
    k2 = deriv(x + 0.5 * dt * k1, u)
    k3 = deriv(x + 0.5 * dt * k2, u)
    k4 = deriv(x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _u0(u):
    u = np.asarray(u, dtype=float)
    return u[..., 0] if u.ndim else u


# --------------------------------------------------------------------------
# cart-pole

@dataclass(frozen=True)
class CartPoleParams:
    """Cart-pole with the pole angle measured from upright (``theta = 0``).

    State is ``(x, x_dot, theta, theta_dot)``; the control is the horizontal
    force on the cart in newtons.
    """

    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_length: float = 0.5
    gravity: float = 9.81
    force_bound: float = 10.0
    dt: float = 0.02
    horizon: int = 50
    steps: int = 150
    q_theta: float = 10.0
    q_x: float = 1.0
    q_xdot: float = 0.1
    q_thetadot: float = 0.1
    r: float = 0.01
    init_std: float = 5.0

    def __post_init__(self):
        if min(self.cart_mass, self.pole_mass, self.half_length, self.dt) <= 0:
            raise ValueError("masses, length and dt must be positive")

    def initial_state(self) -> np.ndarray:
        return np.array([0.0, 0.0, math.pi, 0.0])


def cartpole_deriv(params: CartPoleParams, state, u):
    s = np.asarray(state, dtype=float)
    f = _u0(u)
    xd, th, thd = s[..., 1], s[..., 2], s[..., 3]
    mp, l = params.pole_mass, params.half_length
    total = params.cart_mass + mp
    sin, cos = np.sin(th), np.cos(th)
    tmp = (f + mp * l * thd * thd * sin) / total
    thdd = (params.gravity * sin - cos * tmp) / (l * (4.0 / 3.0 - mp * cos * cos / total))
    xdd = tmp - mp * l * thdd * cos / total
    return np.stack([xd, xdd, thd, thdd], axis=-1)


def cartpole_step(params: CartPoleParams, state, u, dt=None):
    dt = params.dt if dt is None else dt
    return rk4(partial(cartpole_deriv, params), np.asarray(state, dtype=float), u, dt)


def cartpole_energy(params: CartPoleParams, state) -> np.ndarray:
    """Total mechanical energy; conserved when unforced."""
    s = np.asarray(state, dtype=float)
    xd, th, thd = s[..., 1], s[..., 2], s[..., 3]
    mp, l = params.pole_mass, params.half_length
    kin = (0.5 * (params.cart_mass + mp) * xd ** 2
           + mp * l * xd * thd * np.cos(th)
           + 0.5 * mp * l * l * (4.0 / 3.0) * thd ** 2)
    return kin + mp * params.gravity * l * np.cos(th)


def cartpole_state_cost(params: CartPoleParams, state):
    s = np.asarray(state, dtype=float)
    return (params.q_theta * (1.0 - np.cos(s[..., 2])) + params.q_x * s[..., 0] ** 2
            + params.q_xdot * s[..., 1] ** 2 + params.q_thetadot * s[..., 3] ** 2)


def cartpole_cost(params: CartPoleParams, state, u):
    return cartpole_state_cost(params, state) + params.r * _u0(u) ** 2


@numba.njit(cache=True)
def _cp_deriv(x, xd, th, thd, f, mc, mp, l, g):
    total = mc + mp
    s = math.sin(th)
    c = math.cos(th)
    tmp = (f + mp * l * thd * thd * s) / total
    thdd = (g * s - c * tmp) / (l * (4.0 / 3.0 - mp * c * c / total))
    xdd = tmp - mp * l * thdd * c / total
    return xd, xdd, thd, thdd


@numba.njit(cache=True)
def _cartpole_kernel(x0, U, mc, mp, l, g, dt, qth, qx, qxd, qthd, r):
    n, h = U.shape[0], U.shape[1]
    out = np.empty(n)
    for i in range(n):
        x, xd, th, thd = x0[0], x0[1], x0[2], x0[3]
        cost = 0.0
        for k in range(h):
            f = U[i, k, 0]
            cost += (qth * (1.0 - math.cos(th)) + qx * x * x + qxd * xd * xd
                     + qthd * thd * thd + r * f * f)
            a1, b1, c1, d1 = _cp_deriv(x, xd, th, thd, f, mc, mp, l, g)
            a2, b2, c2, d2 = _cp_deriv(x + 0.5 * dt * a1, xd + 0.5 * dt * b1,
                                       th + 0.5 * dt * c1, thd + 0.5 * dt * d1, f, mc, mp, l, g)
            a3, b3, c3, d3 = _cp_deriv(x + 0.5 * dt * a2, xd + 0.5 * dt * b2,
                                       th + 0.5 * dt * c2, thd + 0.5 * dt * d2, f, mc, mp, l, g)
            a4, b4, c4, d4 = _cp_deriv(x + dt * a3, xd + dt * b3, th + dt * c3, thd + dt * d3,
                                       f, mc, mp, l, g)
            x = x + (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            xd = xd + (dt / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            th = th + (dt / 6.0) * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
            thd = thd + (dt / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
            if not (math.isfinite(x) and math.isfinite(xd) and math.isfinite(th)
                    and math.isfinite(thd)):
                cost = math.inf
                break
        if math.isfinite(cost):
            cost += qth * (1.0 - math.cos(th)) + qx * x * x + qxd * xd * xd + qthd * thd * thd
        out[i] = cost
    return out


def cartpole_ocp(params: CartPoleParams = CartPoleParams(), horizon=None) -> OcpConfig:
    p = params
    kernel = partial(_cartpole_kernel, mc=p.cart_mass, mp=p.pole_mass, l=p.half_length,
                     g=p.gravity, dt=p.dt, qth=p.q_theta, qx=p.q_x, qxd=p.q_xdot,
                     qthd=p.q_thetadot, r=p.r)
    return OcpConfig(
        horizon=p.horizon if horizon is None else horizon,
        control_dim=1,
        state_dim=4,
        control_lower=[-p.force_bound],
        control_upper=[p.force_bound],
        dynamics=partial(cartpole_step, p),
        stage_cost=partial(cartpole_cost, p),
        terminal_cost=partial(cartpole_state_cost, p),
        dt=p.dt,
        rollout_kernel=lambda x0, U: kernel(x0, U),
    )


# --------------------------------------------------------------------------
# truck backer-upper

@dataclass(frozen=True)
class TruckParams:
    """Kinematic tractor with one on-axle hitched trailer, reversing at fixed speed.

    State is ``(x, y, yaw, hitch)`` where ``(x, y)`` and ``yaw`` locate the
    trailer axle and ``hitch = yaw_tractor - yaw_trailer``. The control is the
    tractor steering angle. The dock is the origin with zero yaw.
    """

    wheelbase: float = 3.0
    hitch_length: float = 4.0
    speed: float = -1.0
    steer_bound: float = 0.5
    dt: float = 0.05
    horizon: int = 40
    steps: int = 200
    q_x: float = 0.01
    q_y: float = 1.0
    q_yaw: float = 10.0
    q_hitch: float = 1.0
    r: float = 0.1
    jackknife_limit: float = 1.0
    jackknife_penalty: float = 1000.0
    start_distance: float = 20.0
    start_yaw: float = 0.3
    init_std: float = 0.25

    def __post_init__(self):
        if min(self.wheelbase, self.hitch_length, self.dt) <= 0:
            raise ValueError("lengths and dt must be positive")
        if not 0 < self.jackknife_limit < math.pi / 2:
            raise ValueError("jackknife limit must lie in (0, pi/2)")

    def initial_state(self) -> np.ndarray:
        return np.array([self.start_distance, 0.0, self.start_yaw, 0.0])


def truck_deriv(params: TruckParams, state, u):
    s = np.asarray(state, dtype=float)
    delta = _u0(u)
    yaw, hitch = s[..., 2], s[..., 3]
    v = params.speed
    v_trailer = v * np.cos(hitch)
    yaw_rate = v * np.sin(hitch) / params.hitch_length
    return np.stack([
        v_trailer * np.cos(yaw),
        v_trailer * np.sin(yaw),
        yaw_rate,
        v * np.tan(delta) / params.wheelbase - yaw_rate,
    ], axis=-1)


def truck_step(params: TruckParams, state, u, dt=None):
    dt = params.dt if dt is None else dt
    return rk4(partial(truck_deriv, params), np.asarray(state, dtype=float), u, dt)


def truck_state_cost(params: TruckParams, state):
    s = np.asarray(state, dtype=float)
    hitch = s[..., 3]
    over = np.maximum(np.abs(hitch) - params.jackknife_limit, 0.0)
    return (params.q_x * s[..., 0] ** 2 + params.q_y * s[..., 1] ** 2 + params.q_yaw * s[..., 2] ** 2
            + params.q_hitch * hitch ** 2 + params.jackknife_penalty * over ** 2)


def truck_cost(params: TruckParams, state, u):
    return truck_state_cost(params, state) + params.r * _u0(u) ** 2


def tractor_pose(params: TruckParams, state) -> np.ndarray:
    """Tractor rear-axle position and yaw ``(x, y, yaw)`` recovered from the trailer state."""
    s = np.asarray(state, dtype=float)
    yaw = s[..., 2]
    return np.stack([s[..., 0] + params.hitch_length * np.cos(yaw),
                     s[..., 1] + params.hitch_length * np.sin(yaw),
                     yaw + s[..., 3]], axis=-1)


@numba.njit(cache=True)
def _tr_deriv(yaw, hitch, tan_d, v, l1, l2):
    vt = v * math.cos(hitch)
    yr = v * math.sin(hitch) / l2
    return vt * math.cos(yaw), vt * math.sin(yaw), yr, v * tan_d / l1 - yr


@numba.njit(cache=True)
def _truck_state_cost(x, y, yaw, hitch, qx, qy, qyaw, qh, lim, pen):
    over = abs(hitch) - lim
    c = qx * x * x + qy * y * y + qyaw * yaw * yaw + qh * hitch * hitch
    if over > 0.0:
        c += pen * over * over
    return c


@numba.njit(cache=True)
def _truck_kernel(x0, U, v, l1, l2, dt, qx, qy, qyaw, qh, r, lim, pen):
    n, h = U.shape[0], U.shape[1]
    out = np.empty(n)
    for i in range(n):
        x, y, yaw, hitch = x0[0], x0[1], x0[2], x0[3]
        cost = 0.0
        for k in range(h):
            d = U[i, k, 0]
            cost += _truck_state_cost(x, y, yaw, hitch, qx, qy, qyaw, qh, lim, pen) + r * d * d
            t = math.tan(d)
            a1, b1, c1, d1 = _tr_deriv(yaw, hitch, t, v, l1, l2)
            a2, b2, c2, d2 = _tr_deriv(yaw + 0.5 * dt * c1, hitch + 0.5 * dt * d1, t, v, l1, l2)
            a3, b3, c3, d3 = _tr_deriv(yaw + 0.5 * dt * c2, hitch + 0.5 * dt * d2, t, v, l1, l2)
            a4, b4, c4, d4 = _tr_deriv(yaw + dt * c3, hitch + dt * d3, t, v, l1, l2)
            x = x + (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            y = y + (dt / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            yaw = yaw + (dt / 6.0) * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
            hitch = hitch + (dt / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
            if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(yaw)
                    and math.isfinite(hitch)):
                cost = math.inf
                break
        if math.isfinite(cost):
            cost += _truck_state_cost(x, y, yaw, hitch, qx, qy, qyaw, qh, lim, pen)
        out[i] = cost
    return out


def truck_ocp(params: TruckParams = TruckParams(), horizon=None) -> OcpConfig:
    p = params
    kernel = partial(_truck_kernel, v=p.speed, l1=p.wheelbase, l2=p.hitch_length, dt=p.dt,
                     qx=p.q_x, qy=p.q_y, qyaw=p.q_yaw, qh=p.q_hitch, r=p.r, lim=p.jackknife_limit,
                     pen=p.jackknife_penalty)
    return OcpConfig(
        horizon=p.horizon if horizon is None else horizon,
        control_dim=1,
        state_dim=4,
        control_lower=[-p.steer_bound],
        control_upper=[p.steer_bound],
        dynamics=partial(truck_step, p),
        stage_cost=partial(truck_cost, p),
        terminal_cost=partial(truck_state_cost, p),
        dt=p.dt,
        rollout_kernel=lambda x0, U: kernel(x0, U),
    )


# --------------------------------------------------------------------------
# registry

ENVIRONMENTS = {
    "cartpole": (CartPoleParams, cartpole_ocp, cartpole_cost),
    "truck": (TruckParams, truck_ocp, truck_cost),
}


def make_env(name: str, overrides: dict | None = None):
    """Return ``(params, ocp, stage_cost)`` for a named environment.

    ``overrides`` maps parameter names to values (strings are coerced to the
    field type, as read from a config file).
    """
    try:
        cls, make_ocp, cost = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}")
    params = cls()
    if overrides:
        types = {f.name: type(getattr(params, f.name)) for f in fields(cls)}
        clean = {}
        for key, value in overrides.items():
            if key not in types:
                raise ValueError(f"unknown {name} parameter {key!r}")
            clean[key] = types[key](value)
        params = replace(params, **clean)
    return params, make_ocp(params), partial(cost, params)
