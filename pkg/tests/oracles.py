"""Brute-force reference computations, independent of the analytic code under test."""

import math

import numpy as np

from v2vru.geocast import heading_difference
from v2vru.risk import closest_approach_vectors

STEP_S = 0.001


def random_pairs(rng: np.random.Generator, n: int, max_ratio_s: float = 25.0):
    """Relative states (rx, ry, vx, vy, radius) with |r|/|v| bounded so the window covers CPA."""
    out = []
    while sum(len(o) for o in out) < n:
        k = 2 * n
        r = rng.uniform(-100, 100, size=(k, 2))
        v = rng.uniform(-20, 20, size=(k, 2))
        radius = rng.uniform(0.5, 3.0, size=k)
        speed = np.hypot(v[:, 0], v[:, 1])
        keep = (speed > 0.5) & (np.hypot(r[:, 0], r[:, 1]) / np.maximum(speed, 1e-12) < max_ratio_s)
        out.append(np.column_stack([r[keep], v[keep], radius[keep]]))
    return np.concatenate(out)[:n]


def sampled_encounters(pairs: np.ndarray, horizon_s: float = 30.0, chunk: int = 200):
    """1 ms scan of |r + t v| over [0, horizon].

    Returns per pair: sampled argmin time, the minimum refined by a 1 us scan
    around the coarse argmin, the first sampled time at distance <= R (NaN if
    never), and the coarse sampled minimum.
    """
    t = np.arange(0.0, horizon_s + STEP_S / 2, STEP_S)
    fine = np.arange(-STEP_S, STEP_S + 5e-7, 1e-6)
    n = len(pairs)
    t_min = np.empty(n)
    d_fine = np.empty(n)
    t_first = np.full(n, np.nan)
    d_coarse = np.empty(n)
    for s in range(0, n, chunk):
        p = pairs[s:s + chunk]
        rx, ry, vx, vy, rad = (p[:, i:i + 1] for i in range(5))
        d = np.hypot(rx + vx * t, ry + vy * t)
        k = d.argmin(axis=1)
        t_min[s:s + chunk] = t[k]
        d_coarse[s:s + chunk] = d[np.arange(len(p)), k]
        tf = np.clip(t[k][:, None] + fine, 0.0, None)
        d_fine[s:s + chunk] = np.hypot(rx + vx * tf, ry + vy * tf).min(axis=1)
        inside = d <= rad
        hit = inside.any(axis=1)
        t_first[s:s + chunk][hit] = t[inside[hit].argmax(axis=1)]
    return t_min, d_fine, t_first, d_coarse


def sampled_min_distance(u, event, horizon_s: float, step_s: float = 0.001) -> float:
    t = np.arange(0.0, horizon_s + step_s / 2, step_s)
    vx, vy = u.effective_velocity()
    x = u.position_m[0] + vx * t - event[0]
    y = u.position_m[1] + vy * t - event[1]
    return float(np.hypot(x, y).min())


def bfs_components(users, eps_d, eps_h):
    """Oracle clustering by breadth-first search over the explicit pair relation."""
    n = len(users)
    adj = [[] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            a, b = users[i], users[j]
            if (a.profile == b.profile
                    and math.dist(a.position_m, b.position_m) <= eps_d
                    and heading_difference(a.heading_deg, b.heading_deg) <= eps_h):
                adj[i].append(j)
                adj[j].append(i)
    seen, comps = set(), set()
    for s in range(n):
        if s in seen:
            continue
        stack, comp = [s], set()
        seen.add(s)
        while stack:
            k = stack.pop()
            comp.add(users[k].pseudonym)
            for m in adj[k]:
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        comps.add(frozenset(comp))
    return comps


def well_conditioned(rx, ry, vx, vy, radius):
    """False near a tangent pass, where TTC has a square-root sensitivity to rounding."""
    _, d = closest_approach_vectors(rx, ry, vx, vy)
    return abs(d - radius) > 1e-6 * radius


def close(a, b, scale):
    """Equal to 1e-9 relative to the problem's own magnitude."""
    if a is None or b is None:
        return a is None and b is None
    return abs(a - b) <= 1e-9 * max(abs(a), abs(b), scale)
