"""Compiled rollout-cost kernels for the benchmark plants.

These mirror :func:`dscem.plants.rollout` (same RK4 stages, same cost
expressions) without materializing trajectories.  Tests check agreement
with the numpy path.
"""
import math

import numpy as np
from numba import njit

_MP, _MC, _L, _G = 0.1, 1.0, 0.5, 9.81


@njit(cache=True, inline="always")
def _mc_deriv(x1, x2, u):
    return x2, -0.0025 * math.cos(3.0 * x1) + 0.0015 * u


@njit(cache=True)
def mountain_car_costs(x0, seqs, dt, q, r, qh, goal):
    n, horizon = seqs.shape
    out = np.empty(n)
    for i in range(n):
        a, b = x0[0], x0[1]
        total = 0.0
        for t in range(horizon):
            u = seqs[i, t]
            total += q[0] * (a - goal[0]) ** 2 + q[1] * (b - goal[1]) ** 2 + r * u * u
            k1a, k1b = _mc_deriv(a, b, u)
            k2a, k2b = _mc_deriv(a + 0.5 * dt * k1a, b + 0.5 * dt * k1b, u)
            k3a, k3b = _mc_deriv(a + 0.5 * dt * k2a, b + 0.5 * dt * k2b, u)
            k4a, k4b = _mc_deriv(a + dt * k3a, b + dt * k3b, u)
            a = a + dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
            b = b + dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        total += qh[0] * (a - goal[0]) ** 2 + qh[1] * (b - goal[1]) ** 2
        out[i] = total if math.isfinite(total) and math.isfinite(a) and math.isfinite(b) else np.inf
    return out


@njit(cache=True, inline="always")
def _cp_deriv(xd, phi, phid, u):
    total = _MP + _MC
    s, c = math.sin(phi), math.cos(phi)
    tmp = (u + _MP * _L * phid * phid * s) / total
    phidd = (_G * s - c * tmp) / (_L * (4.0 / 3.0 - _MP * c * c / total))
    xdd = (u + _MP * _L * (phid * phid * s - phidd * c)) / total
    return xd, xdd, phid, phidd


@njit(cache=True, inline="always")
def _cp_cost(x, xd, phi, phid, w, goal):
    return (w[0] * (x - goal[0]) ** 2 + w[1] * (xd - goal[1]) ** 2 + w[2] * (math.cos(phi) - goal[2]) ** 2
            + w[3] * (math.sin(phi) - goal[3]) ** 2 + w[4] * (phid - goal[4]) ** 2)


@njit(cache=True)
def cart_pole_costs(x0, seqs, dt, q, r, qh, goal):
    n, horizon = seqs.shape
    out = np.empty(n)
    h = 0.5 * dt
    for i in range(n):
        x, xd, p, pd = x0[0], x0[1], x0[2], x0[3]
        total = 0.0
        for t in range(horizon):
            u = seqs[i, t]
            total += _cp_cost(x, xd, p, pd, q, goal) + r * u * u
            a1, b1, c1, d1 = _cp_deriv(xd, p, pd, u)
            a2, b2, c2, d2 = _cp_deriv(xd + h * b1, p + h * c1, pd + h * d1, u)
            a3, b3, c3, d3 = _cp_deriv(xd + h * b2, p + h * c2, pd + h * d2, u)
            a4, b4, c4, d4 = _cp_deriv(xd + dt * b3, p + dt * c3, pd + dt * d3, u)
            x = x + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            xd = xd + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            p = p + dt / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
            pd = pd + dt / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
        total += _cp_cost(x, xd, p, pd, qh, goal)
        ok = math.isfinite(total) and math.isfinite(x) and math.isfinite(xd)
        out[i] = total if ok and math.isfinite(p) and math.isfinite(pd) else np.inf
    return out


KERNELS = {"mountain-car": mountain_car_costs, "cart-pole": cart_pole_costs}
