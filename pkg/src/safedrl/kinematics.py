"""Exact longitudinal kinematics for piecewise-constant jerk.

Both the simulator and the safety layer move the ego vehicle with
:func:`advance`, so a maneuver that the safety layer predicts is exactly the
maneuver the simulator executes.  A vehicle at rest holds position: when the
speed reaches zero while braking, the acceleration is reset to zero and the
vehicle only starts moving again once the acceleration becomes positive.
"""
from __future__ import annotations

import math

_EPS = 1e-12


def _first_positive_root(c0: float, c1: float, c2: float) -> float:
    """Smallest t > 0 with c0 + c1*t + c2*t**2 == 0, assuming c0 > 0."""
    if c2 == 0.0:
        return -c0 / c1 if c1 < 0.0 else math.inf
    disc = c1 * c1 - 4.0 * c2 * c0
    if disc < 0.0:
        return math.inf
    sq = math.sqrt(disc)
    # numerically stable pair of roots
    q = -0.5 * (c1 + math.copysign(sq, c1))
    pos = [r for r in (q / c2, c0 / q) if r > 0.0]
    return min(pos) if pos else math.inf


def _piece_events(v: float, a: float, j: float, a_lo: float, a_hi: float):
    """Effective jerk and time to the next bound/stop event for a moving state."""
    if (j > 0.0 and a >= a_hi) or (j < 0.0 and a <= a_lo):
        j = 0.0
    if j > 0.0:
        t_bound = (a_hi - a) / j
    elif j < 0.0:
        t_bound = (a_lo - a) / j
    else:
        t_bound = math.inf
    t_stop = _first_positive_root(v, a, 0.5 * j) if v > 0.0 else 0.0
    return j, t_bound, t_stop


def _restart_stop(a: float, j: float) -> float:
    # from rest with a > 0: v(t) = a t + j t^2 / 2 returns to zero at t = -2a/j
    return -2.0 * a / j if j < 0.0 and a > 0.0 else math.inf


def advance(s: float, v: float, a: float, jerk: float, dt: float,
            a_lo: float = -10.0, a_hi: float = 3.0) -> tuple[float, float, float]:
    """Integrate (s, v, a) exactly for ``dt`` seconds under a constant jerk command."""
    a = min(max(a, a_lo), a_hi)
    t_left = dt
    for _ in range(16):
        if t_left <= _EPS:
            break
        if v < _EPS:
            v = 0.0  # sub-picometre speeds underflow the stop-time root
        if v <= 0.0 and a <= 0.0:
            v, a = 0.0, 0.0
            if jerk <= 0.0:
                return s, 0.0, 0.0
        j, t_bound, t_stop = _piece_events(v, a, jerk, a_lo, a_hi)
        if v <= 0.0:
            t_stop = _restart_stop(a, j)
        tau = min(t_left, t_bound, t_stop)
        s += v * tau + 0.5 * a * tau * tau + j * tau ** 3 / 6.0
        v_new = v + a * tau + 0.5 * j * tau * tau
        a += j * tau
        t_left -= tau
        if tau == t_stop:
            v_new = 0.0
            a = min(a, 0.0)
        elif tau == t_bound:
            a = a_hi if j > 0.0 else a_lo
        v = max(v_new, 0.0)
    return s, v, a


def stop_distance(v: float, a: float, jerk_limit: float, b_max: float) -> float:
    """Distance to standstill when ramping to ``-b_max`` at ``jerk_limit``.

    The profile is piecewise polynomial and evaluated in closed form.  With an
    infinite jerk limit it reduces to ``v**2 / (2 * b_max)``.
    """
    if v < _EPS:
        return 0.0
    a = max(a, -b_max)
    if math.isinf(jerk_limit):
        return v * v / (2.0 * b_max)
    # ramp phase: a(t) = a - J t until a = -b_max
    t_ramp = (a + b_max) / jerk_limit
    t_stop = _first_positive_root(v, a, -0.5 * jerk_limit)
    if t_stop <= t_ramp:
        t = t_stop
        return v * t + 0.5 * a * t * t - jerk_limit * t ** 3 / 6.0
    t = t_ramp
    d_ramp = v * t + 0.5 * a * t * t - jerk_limit * t ** 3 / 6.0
    v_ramp = v + a * t - 0.5 * jerk_limit * t * t
    return d_ramp + v_ramp * v_ramp / (2.0 * b_max)


def time_to_cover(v: float, a: float, jerk: float, distance: float,
                  a_lo: float = -10.0, a_hi: float = 3.0) -> tuple[float, float, float]:
    """Earliest time to travel ``distance`` under a constant jerk command.

    Returns ``(t, v_end, a_end)``; ``t`` is ``inf`` if the distance is never
    covered (e.g. the profile comes to rest).
    """
    if distance <= 0.0:
        return 0.0, v, a
    a = min(max(a, a_lo), a_hi)
    t_total = 0.0
    remaining = distance
    for _ in range(8):
        if v < _EPS:
            v = 0.0
        if v <= 0.0 and a <= 0.0:
            v, a = 0.0, 0.0
            if jerk <= 0.0:
                return math.inf, 0.0, 0.0
        j, t_bound, t_stop = _piece_events(v, a, jerk, a_lo, a_hi)
        if v <= 0.0:
            t_stop = _restart_stop(a, j)
        tau = min(t_bound, t_stop)
        if math.isinf(tau):
            seg = math.inf
        else:
            seg = v * tau + 0.5 * a * tau * tau + j * tau ** 3 / 6.0
        if seg >= remaining:
            t = _solve_distance(v, a, j, remaining, tau)
            return (t_total + t, v + a * t + 0.5 * j * t * t, a + j * t)
        remaining -= seg
        t_total += tau
        v_new = v + a * tau + 0.5 * j * tau * tau
        a += j * tau
        if tau == t_stop:
            v_new = 0.0
            a = min(a, 0.0)
        elif tau == t_bound:
            a = a_hi if j > 0.0 else a_lo
        v = max(v_new, 0.0)
    return math.inf, v, a


def _solve_distance(v: float, a: float, j: float, dist: float, t_max: float) -> float:
    """Root of v t + a t^2/2 + j t^3/6 = dist on [0, t_max]; monotone there."""
    if j == 0.0:
        if a == 0.0:
            return dist / v
        disc = v * v + 2.0 * a * dist
        if disc < 0.0:
            disc = 0.0
        # stable form of (-v + sqrt(disc)) / a
        return 2.0 * dist / (v + math.sqrt(disc))
    lo, hi = 0.0, t_max
    if math.isinf(hi):
        hi = 1.0
        while v * hi + 0.5 * a * hi * hi + j * hi ** 3 / 6.0 < dist:
            hi *= 2.0
    t = 0.5 * (lo + hi)
    for _ in range(200):
        f = v * t + 0.5 * a * t * t + j * t ** 3 / 6.0 - dist
        if abs(f) < 1e-13 or hi - lo < 1e-13:
            break
        if f > 0.0:
            hi = t
        else:
            lo = t
        df = v + a * t + 0.5 * j * t * t
        t_newton = t - f / df if df > 0.0 else 0.5 * (lo + hi)
        t = t_newton if lo < t_newton < hi else 0.5 * (lo + hi)
    return t


def accel_limited_arrival(d: float, v: float, v_max: float, a_max: float) -> float:
    """Time for a point at distance ``d`` to arrive when accelerating to ``v_max``."""
    if d <= 0.0:
        return 0.0
    v = min(max(v, 0.0), v_max)
    if a_max <= 0.0 or v >= v_max:
        return d / v if v > 0.0 else math.inf
    t_acc = (v_max - v) / a_max
    d_acc = v * t_acc + 0.5 * a_max * t_acc * t_acc
    if d <= d_acc:
        return 2.0 * d / (v + math.sqrt(v * v + 2.0 * a_max * d))
    return t_acc + (d - d_acc) / v_max


def accel_limited_advance(v: float, v_max: float, a_max: float, dt: float) -> tuple[float, float]:
    """Distance travelled and final speed after accelerating toward ``v_max``."""
    v = min(max(v, 0.0), v_max)
    if a_max <= 0.0 or v >= v_max:
        return v * dt, v
    t_acc = (v_max - v) / a_max
    if dt <= t_acc:
        return v * dt + 0.5 * a_max * dt * dt, v + a_max * dt
    return v * t_acc + 0.5 * a_max * t_acc * t_acc + v_max * (dt - t_acc), v_max


def decel_advance(v: float, a_min: float, dt: float) -> tuple[float, float]:
    """Distance and speed after braking at ``a_min`` (< 0) until standstill."""
    v = max(v, 0.0)
    t_stop = v / -a_min
    if dt >= t_stop:
        return 0.5 * v * t_stop, 0.0
    return v * dt + 0.5 * a_min * dt * dt, v + a_min * dt
