"""Discrete centred Loewner chains built from exact vertical-slit maps.

Each driver step of length ``dt`` with increment ``dW`` is applied as the
exact solution of the Loewner equation for a constant driver,

    f_k(z) = sqrt((f_{k-1}(z) - dW_k)**2 + 4 dt),

so forward maps, inverses and derivative products are all exact
compositions of elementary maps. Nothing is re-solved by an ODE integrator.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericalFailure

SWALLOWED_FLOOR = 1e-12


class _Swallowed:
    def __repr__(self):
        return "SWALLOWED"


SWALLOWED = _Swallowed()


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SamplePath:
    """Real process on a uniform grid; ``values[k]`` is the value at ``t0 + k*dt``."""

    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidArgument(f"dt must be positive, got {self.dt}")
        vals = _frozen(self.values)
        if vals.ndim != 1 or vals.size == 0:
            raise InvalidArgument("values must be a non-empty 1-d array")
        object.__setattr__(self, "values", vals)

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.values.size)

    def __len__(self):
        return self.values.size


def sample_driver(kappa, horizon, dt, seed=None):
    """Driving function W = sqrt(kappa) B sampled on ``[0, horizon]``."""
    if not dt > 0 or not horizon > 0:
        raise InvalidArgument("dt and horizon must be positive")
    if horizon < dt:
        raise InvalidArgument("horizon must be at least one step")
    if not kappa > 0:
        raise InvalidArgument("kappa must be positive")
    n = int(np.floor(horizon / dt + 1e-9))
    rng = _rng(seed)
    incr = np.sqrt(kappa * dt) * rng.standard_normal(n)
    return SamplePath(0.0, dt, np.concatenate([[0.0], np.cumsum(incr)]))


def _sqrt_upper(u, ref):
    """Square root with Im >= 0; on the real axis the sign follows ``ref``."""
    r = np.sqrt(u)
    flip = (r.imag < 0) | ((r.imag == 0) & (np.real(ref) < 0))
    return np.where(flip, -r, r)


@dataclass(frozen=True)
class LoewnerChain:
    kappa: float
    driver: SamplePath
    steps: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.driver.values[0] != 0:
            raise InvalidArgument("driver must start at 0")
        object.__setattr__(self, "steps", _frozen(np.diff(self.driver.values)))

    @classmethod
    def from_increments(cls, kappa, dt, increments):
        values = np.concatenate([[0.0], np.cumsum(increments)])
        return cls(kappa, SamplePath(0.0, dt, values))

    @property
    def dt(self):
        return self.driver.dt

    @property
    def n_steps(self):
        return self.steps.size

    @property
    def horizon(self):
        return self.n_steps * self.dt

    def step_index(self, t):
        """Index of the grid time at or below ``t`` (times are rounded down)."""
        if t < 0 or t > self.horizon * (1 + 1e-12) + 1e-15:
            raise InvalidArgument(f"t={t} outside [0, {self.horizon}]")
        return min(int(np.floor(t / self.dt + 1e-9)), self.n_steps)

    def grid_time(self, t):
        return self.step_index(t) * self.dt

    def shifted(self, s):
        """The chain restarted at capacity time ``s`` from the recentred driver."""
        j = self.step_index(s)
        return LoewnerChain.from_increments(self.kappa, self.dt, self.steps[j:])

    def scaled(self, a):
        """Chain of the image curve under z -> z/a (driver W~_t = W_{a^2 t}/a)."""
        return LoewnerChain.from_increments(self.kappa, self.dt / a**2, self.steps / a)


def zero_chain(horizon, dt, kappa=4.0):
    """Chain with driver identically 0: a vertical slit [0, 2i sqrt(t)]."""
    n = int(np.floor(horizon / dt + 1e-9))
    return LoewnerChain.from_increments(kappa, dt, np.zeros(n))


# --- composition kernels -------------------------------------------------


def _flow_forward(chain, z, k0, k1, with_derivative=False):
    """Apply steps k0+1..k1 to interior points. Returns (w, logderiv, swallowed)."""
    z = np.array(z, dtype=complex, copy=True)
    logd = np.zeros(z.shape)
    dead = np.zeros(z.shape, dtype=bool)
    four_dt = 4.0 * chain.dt
    for dw in chain.steps[k0:k1]:
        d = z - dw
        hit = np.abs(d) < SWALLOWED_FLOOR
        w = _sqrt_upper(d * d + four_dt, d)
        hit |= w.imag <= 0
        if with_derivative:
            with np.errstate(divide="ignore", invalid="ignore"):
                logd += np.log(np.abs(d)) - np.log(np.abs(w))
        dead |= hit
        z = np.where(dead, 0.0, w)
    z = np.where(dead, np.nan + 0j, z)
    logd = np.where(dead, np.nan, logd)
    return z, logd, dead


def _flow_inverse(chain, w, k, with_derivative=False):
    """Apply the inverse steps k..1 to points of the closed upper half-plane."""
    w = np.array(w, dtype=complex, copy=True)
    logd = np.zeros(w.shape)
    four_dt = 4.0 * chain.dt
    for dw in chain.steps[:k][::-1]:
        r = _sqrt_upper(w * w - four_dt, w)
        if with_derivative:
            with np.errstate(divide="ignore"):
                logd += np.log(np.abs(w)) - np.log(np.abs(r))
        w = dw + r
    return w, logd


def _flow_boundary(chain, x, side, k0, k1):
    """Two-sided flow of real points; ``side`` (+1/-1) resolves the sign at x = 0."""
    x = np.array(x, dtype=float, copy=True)
    side = np.broadcast_to(np.asarray(side, dtype=float), x.shape).copy()
    four_dt = 4.0 * chain.dt
    for dw in chain.steps[k0:k1]:
        d = x - dw
        sgn = np.where(d == 0, side, np.sign(d))
        x = sgn * np.sqrt(d * d + four_dt)
    return x


def _check_interior(z):
    z = np.asarray(z, dtype=complex)
    if np.any(z.imag <= 0):
        raise InvalidArgument("forward maps need Im(z) > 0; use boundary_images for real points")
    return z


def _scalar_or_array(z, out, dead):
    if np.ndim(out) == 0:
        return SWALLOWED if bool(dead) else complex(out)
    return out


# --- public map evaluation -----------------------------------------------


def centred_forward(chain, z, t):
    """f_t(z) = g_t(z) - W_t. Swallowed points give SWALLOWED (scalar) or nan (array)."""
    z = _check_interior(z)
    w, _, dead = _flow_forward(chain, z, 0, chain.step_index(t))
    return _scalar_or_array(z, w, dead)


def forward_map(chain, z, t):
    """g_t(z) for the discrete chain."""
    k = chain.step_index(t)
    z = _check_interior(z)
    w, _, dead = _flow_forward(chain, z, 0, k)
    return _scalar_or_array(z, w + chain.driver.values[k], dead)


def inverse_map(chain, w, t):
    """psi_t(w) = f_t^{-1}(w); real ``w`` is evaluated as a prime end."""
    w = np.asarray(w, dtype=complex)
    if np.any(w.imag < 0):
        raise InvalidArgument("inverse_map needs Im(w) >= 0")
    z, _ = _flow_inverse(chain, w, chain.step_index(t))
    return complex(z) if np.ndim(z) == 0 else z


def inverse_with_derivative(chain, w, t):
    """(psi_t(w), |psi_t'(w)|), vectorised."""
    w = np.asarray(w, dtype=complex)
    z, logd = _flow_inverse(chain, w, chain.step_index(t), with_derivative=True)
    return z, np.exp(logd)


def map_derivative(chain, z, t):
    """|f_t'(z)| as the product of elementary derivative moduli."""
    z = _check_interior(z)
    _, logd, dead = _flow_forward(chain, z, 0, chain.step_index(t), with_derivative=True)
    if np.ndim(logd) == 0:
        return SWALLOWED if bool(dead) else float(np.exp(logd))
    return np.exp(logd)


def hcap_coefficient(chain, t, radii=(50.0, 100.0, 200.0)):
    """Fit c1 in g_t(z) = z + c1/z + c2/z^2 + c3/z^3 from samples at large |z|."""
    theta = np.array([np.pi / 6, np.pi / 3, np.pi / 2, 2 * np.pi / 3, 5 * np.pi / 6])
    z = np.concatenate([r * np.exp(1j * theta) for r in radii])
    g = forward_map(chain, z, t)
    y = (g - z) * z
    A = np.stack([np.ones_like(z), 1 / z, 1 / z**2], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(coef[0].real)


# --- curves ----------------------------------------------------------------


@dataclass(frozen=True)
class CurveTrace:
    chain: LoewnerChain
    times: np.ndarray
    points: np.ndarray
    tip_offset: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "re", "im"])
            for t, p in zip(self.times, self.points):
                w.writerow([f"{t:.17g}", f"{p.real:.17g}", f"{p.imag:.17g}"])

    @staticmethod
    def read_csv(path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return data[:, 0], data[:, 1] + 1j * data[:, 2]


def _reverse_compose_all(chain, start, n):
    """pts[k] = psi_{t_k}(start) for k = 0..n, built in one backward sweep."""
    pts = np.full(n + 1, start, dtype=complex)
    four_dt = 4.0 * chain.dt
    for j in range(n, 0, -1):
        w = pts[j:]
        pts[j:] = chain.steps[j - 1] + _sqrt_upper(w * w - four_dt, w)
    return pts


def trace(chain, y0=None, t=None):
    """Curve points eta(t_k) ~ psi_{t_k}(i y0); default y0 = 10 sqrt(dt)."""
    if y0 is None:
        y0 = 10.0 * np.sqrt(chain.dt)
    if not y0 > 0:
        raise InvalidArgument("y0 must be positive")
    n = chain.n_steps if t is None else chain.step_index(t)
    pts = _reverse_compose_all(chain, 1j * y0, n)
    pts[0] = 0.0
    times = chain.dt * np.arange(n + 1)
    return CurveTrace(chain, _frozen(times), _frozen(pts, complex), float(y0))


def tips(chain, t=None):
    """Exact tips of the discrete hull, psi_{t_k}(0) (prime-end evaluation)."""
    n = chain.n_steps if t is None else chain.step_index(t)
    return _reverse_compose_all(chain, 0.0, n)


def _base_points(chain, j, n):
    """Base of slit j+1 in the f_{s_j} plane (0 when j == n, the current tip)."""
    return chain.steps[j] if j < n else 0.0


def slit_corner_images(chain, t):
    """Raw images under f_t of the two base corners of every later slit.

    Entry j holds f_{s_j,t}(b^-), f_{s_j,t}(b^+) with b = dW_{j+1} the base of
    slit j+1 in the f_{s_j} plane; the last entry (j = n) is the tip, 0.
    """
    n = chain.step_index(t)
    base = np.append(chain.steps[:n], 0.0)
    xm = base.copy()
    xp = base.copy()
    four_dt = 4.0 * chain.dt
    # entries j < k have had step k applied
    for k in range(1, n + 1):
        dw = chain.steps[k - 1]
        for arr, side in ((xm, -1.0), (xp, 1.0)):
            d = arr[:k] - dw
            sgn = np.where(d == 0, side, np.sign(d))
            arr[:k] = sgn * np.sqrt(d * d + four_dt)
    return xm, xp


def _envelope(xm_raw, xp_raw):
    xm = np.minimum(np.minimum.accumulate(xm_raw[::-1])[::-1], 0.0)
    xp = np.maximum(np.maximum.accumulate(xp_raw[::-1])[::-1], 0.0)
    return xm, xp


def boundary_images_all(chain, t):
    """x^-(s_j), x^+(s_j) for every grid time s_j <= t.

    The piecewise-constant driver makes the discrete hull tree-like at the
    sqrt(dt) scale (a new slit may branch off the side of an older one), so
    the image of eta(s_j) on each side is taken as the outermost corner image
    of any slit grown after s_j. This is monotone in s by construction and
    reduces to +-2 sqrt(t - s) for the vertical slit.
    """
    return _envelope(*slit_corner_images(chain, t))


def boundary_images(chain, s, t, ladder=range(6, 15), rtol=1e-3):
    """The two real images (x-, x+) of the prime ends of eta(s) under f_t.

    f_t(psi_s(b +- e)) = f_{s,t}(b +- e) exactly for the discrete chain, with b
    the base of the next slit in the s-unzipped plane. The prime ends are
    approached along the boundary with e = 2^-m sqrt(dt) over the ladder ``m``
    and must converge to the sign-tracked flow of b^-/b^+; the returned pair
    is the outer envelope described in ``boundary_images_all``.
    """
    if not 0 <= s < t:
        raise InvalidArgument("need 0 <= s < t")
    j, n = chain.step_index(s), chain.step_index(t)
    b = _base_points(chain, j, n)
    eps = np.array([2.0**-m for m in ladder]) * np.sqrt(chain.dt)
    lad_m = _flow_boundary(chain, b - eps, -1.0, j, n)
    lad_p = _flow_boundary(chain, b + eps, 1.0, j, n)
    bm, bp = _flow_boundary(chain, np.array([b, b]), np.array([-1.0, 1.0]), j, n)
    tol = rtol * (abs(bp - bm) + 1.0)
    spreads = (abs(lad_m[-1] - lad_m[-2]), abs(lad_p[-1] - lad_p[-2]))
    if max(spreads) > tol or abs(lad_m[-1] - bm) > tol or abs(lad_p[-1] - bp) > tol:
        raise NumericalFailure(
            "boundary image ladder did not converge",
            {"ladder_minus": lad_m.tolist(), "ladder_plus": lad_p.tolist(), "tol": tol},
        )
    sub = chain.shifted(j * chain.dt)
    xm, xp = boundary_images_all(sub, (n - j) * chain.dt)
    return float(xm[0]), float(xp[0])
