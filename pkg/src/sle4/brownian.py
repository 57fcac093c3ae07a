"""Brownian building blocks: drifted paths, exact bridge maxima, last-exit conditioning."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, ResourceError
from .loewner import SamplePath, _rng


@dataclass(frozen=True)
class ConditionedPath:
    """U = (B_t - a t) conditioned to stay negative, sampled after its last exit."""

    path: SamplePath
    a: float
    tau: float
    bias_bound: float

    @property
    def values(self):
        return self.path.values


def barrier_level(a, tol=1e-9):
    """Depth M with P(drifted path started at -M ever returns to 0) = exp(-2aM) = tol."""
    return np.log(1.0 / tol) / (2.0 * a)


def bridge_maxima(left, right, dt, rng):
    """Exact maxima of Brownian bridges between consecutive grid values."""
    u = rng.random(np.shape(left))
    return 0.5 * (left + right + np.sqrt((right - left) ** 2 - 2.0 * dt * np.log1p(-u)))


def conditioned_drifted_bm_batch(a, dt, horizon, n, seed=None, tol=1e-9, substeps=1,
                                 max_steps=10_000_000, chunk=2048):
    """``n`` independent copies of U on the grid ``0, dt, ..., horizon``.

    Each replica is a drifted path B_t - a t simulated on the fine grid
    dt/substeps until it has reached the barrier -M (see ``barrier_level``)
    after its last visit to [0, inf) and then stayed quiet for 10/a^2 time
    units. Sub-grid returns to 0 between two negative grid values are drawn
    with the exact bridge crossing probability exp(-2uv/h), so the last exit
    is located to within one fine step. U_0 is set to 0 and later values are
    the raw path values after that step, so every value
    is <= 0. Returns (values[n, m+1], tau[n], bias_bound).
    """
    if not a > 0:
        raise InvalidArgument("drift a must be positive")
    if not dt > 0 or horizon < 0:
        raise InvalidArgument("need dt > 0 and horizon >= 0")
    rng = _rng(seed)
    h = dt / substeps
    m = int(np.floor(horizon / dt + 1e-9))
    need = m * substeps + 1
    M = barrier_level(a, tol)
    quiet = 10.0 / a**2
    cap = np.zeros((n, need))
    fill = np.ones(n, dtype=np.int64)
    last_exit = np.zeros(n, dtype=np.int64)
    hit_time = np.full(n, -1, dtype=np.int64)
    v = np.zeros(n)
    active = np.arange(n)
    step = 0
    sd = np.sqrt(h)
    cols = np.arange(chunk)
    while active.size:
        if step >= max_steps:
            raise ResourceError(f"last exit not bracketed for a={a} within {max_steps} steps")
        k = active.size
        path = v[active, None] + np.cumsum(sd * rng.standard_normal((k, chunk)) - a * h, axis=1)
        left = np.concatenate([v[active, None], path[:, :-1]], axis=1)
        # a step between two negative values still crosses 0 with the bridge probability
        with np.errstate(over="ignore"):
            p_cross = np.exp(-2.0 * left * path / h)
        crossed = (left < 0) & (path < 0) & (rng.random(path.shape) < p_cross)
        touch = np.where(path >= 0, cols[None, :], np.where(crossed, cols[None, :] - 1, -2))
        last = touch.max(axis=1)
        has = last > -2
        # replicas that touched [0, inf): restart capture after the last touch
        idx = active[has]
        last_exit[idx] = step + 1 + last[has]
        fill[idx] = 1
        hit_time[idx] = -1
        cap[idx, 0] = 0.0
        start = np.where(has, last + 1, 0)
        # append chunk values from ``start`` into the capture buffers
        offs = fill[active][:, None] + cols[None, :] - start[:, None]
        ok = (cols[None, :] >= start[:, None]) & (offs < need)
        rows = np.broadcast_to(active[:, None], ok.shape)
        cap[rows[ok], offs[ok]] = path[ok]
        fill[active] = np.minimum(need, fill[active] + (chunk - start))
        # barrier bookkeeping
        below = path <= -M
        below &= cols[None, :] >= start[:, None]
        first_below = np.where(below.any(axis=1), np.argmax(below, axis=1), -1)
        new_hit = (hit_time[active] < 0) & (first_below >= 0)
        hit_time[active[new_hit]] = step + 1 + first_below[new_hit]
        v[active] = path[:, -1]
        step += chunk
        ht = hit_time[active]
        done = (ht >= 0) & (step - ht >= quiet / h) & (fill[active] >= need)
        active = active[~done]
    values = cap[:, ::substeps][:, : m + 1]
    tau = last_exit * h
    return values, tau, float(np.exp(-2.0 * a * M))


def sample_conditioned_drifted_bm(a, dt, horizon, seed=None, tol=1e-9, substeps=1,
                                  max_steps=10_000_000):
    """Single ConditionedPath built from the last-exit decomposition."""
    values, tau, bias = conditioned_drifted_bm_batch(
        a, dt, horizon, 1, seed, tol=tol, substeps=substeps, max_steps=max_steps)
    return ConditionedPath(SamplePath(0.0, dt, values[0]), float(a), float(tau[0]), bias)


def sup_drifted_bm(a, n, seed=None, dt=0.01, tol=1e-9, chunk=1024):
    """Samples of sup_{t>=0} (B_t - a t), with exact bridge maxima between grid points.

    Each path runs until it sits below -M with M = log(1/tol)/(2a); the chance
    of a later excursion above the running maximum is then below ``tol``.
    """
    rng = _rng(seed)
    M = barrier_level(a, tol)
    sup = np.zeros(n)
    v = np.zeros(n)
    active = np.arange(n)
    sd = np.sqrt(dt)
    while active.size:
        k = active.size
        incr = sd * rng.standard_normal((k, chunk)) - a * dt
        path = v[active, None] + np.cumsum(incr, axis=1)
        left = np.concatenate([v[active, None], path[:, :-1]], axis=1)
        mx = bridge_maxima(left, path, dt, rng).max(axis=1)
        sup[active] = np.maximum(sup[active], mx)
        v[active] = path[:, -1]
        active = active[v[active] > -M]
    return sup


def two_sided_drifted_bm(ts, drift, rng):
    """B_{2|t|} + drift*|t| on a grid of non-positive times ``ts`` (ascending, ending at 0)."""
    u = -np.asarray(ts)[::-1]
    du = np.diff(u)
    incr = np.sqrt(2.0 * du) * rng.standard_normal(du.size) + drift * du
    vals = np.concatenate([[0.0], np.cumsum(incr)])
    return vals[::-1]
