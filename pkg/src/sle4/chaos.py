"""Critical (gamma = 2) boundary measure, coordinate changes and wedge moments.

The boundary measure on an interval I at regularisation eps is

    nu_eps(I) = int_I eps (log(1/eps) - h_eps(x)/2) exp(h_eps(x)) dx,

with h_eps the half-circle average. The density is evaluated on the boundary
grid nodes and integrated as a piecewise-linear function, so masses of
adjacent intervals add up exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .brownian import (ConditionedPath, conditioned_drifted_bm_batch,  # noqa: F401
                       sample_conditioned_drifted_bm, sup_drifted_bm, two_sided_drifted_bm)
from .errors import InvalidArgument
from .field import (STRIP, FieldSample, _bilinear, sample_gff, semicircle_average_values,
                    strip)
from .loewner import _rng
from .stats import MCEstimate

GAMMA = 2.0
Q = 2.0 / GAMMA + GAMMA / 2.0


def critical_density(h_eps, eps, offset=0.0):
    """eps (log(1/eps) - (h_eps - c)/2) e^{h_eps}; c = 0 gives the plain regularisation.

    A level c that is fixed before eps -> 0 does not change the limit, since
    eps e^{h_eps} alone vanishes at criticality; choosing c near the local
    field level keeps fixed-eps masses positive when the field is large.
    """
    return eps * (np.log(1.0 / eps) - 0.5 * (h_eps - offset)) * np.exp(h_eps)


def _cumulative(xs, dens):
    """Running integral of the piecewise-linear interpolant of ``dens`` on nodes ``xs``."""
    seg = 0.5 * (dens[..., 1:] + dens[..., :-1]) * np.diff(xs)
    out = np.zeros(dens.shape)
    out[..., 1:] = np.cumsum(seg, axis=-1)
    return out


def _primitive(xs, dens, cum, pts):
    """Evaluate the running integral at arbitrary points inside [xs[0], xs[-1]]."""
    pts = np.asarray(pts, float)
    if np.any(pts < xs[0] - 1e-9) or np.any(pts > xs[-1] + 1e-9):
        raise InvalidArgument("interval endpoint outside the measured boundary range")
    i = np.clip(np.searchsorted(xs, pts, side="right") - 1, 0, xs.size - 2)
    u = pts - xs[i]
    h = xs[i + 1] - xs[i]
    d0 = dens[..., i]
    d1 = dens[..., i + 1]
    return cum[..., i] + u * d0 + 0.5 * u * u * (d1 - d0) / h


def interval_masses(xs, dens, intervals):
    """Exact integrals of the piecewise-linear density over each interval.

    ``dens`` may carry leading batch axes; returns shape (..., len(intervals)).
    """
    iv = np.asarray(intervals, float).reshape(-1, 2)
    cum = _cumulative(xs, dens)
    return _primitive(xs, dens, cum, iv[:, 1]) - _primitive(xs, dens, cum, iv[:, 0])


@dataclass(frozen=True)
class BoundaryMeasure:
    intervals: np.ndarray  # (m, 2), ordered and disjoint
    eps: np.ndarray  # strictly decreasing ladder
    mass_at_eps: np.ndarray  # (len(eps), m), signed
    extrapolated: np.ndarray  # (m,), smallest-eps rung
    spread: np.ndarray  # (m,), max pairwise difference over the last three rungs
    nodes: np.ndarray | None = None  # boundary nodes carrying the density
    density: np.ndarray | None = None  # (len(eps), len(nodes))

    def total(self, rung=-1):
        return float(self.mass_at_eps[rung].sum())

    def masses(self, intervals):
        """Rung masses (len(eps), m) of arbitrary intervals inside the node range."""
        if self.nodes is None:
            raise InvalidArgument("this measure carries no node density")
        return interval_masses(self.nodes, self.density, intervals)


def _check_ladder(eps_ladder, delta):
    eps = np.asarray(eps_ladder, float)
    if eps.size < 3:
        raise InvalidArgument("eps ladder needs at least 3 rungs")
    if np.any(np.diff(eps) >= 0):
        raise InvalidArgument("eps ladder must be strictly decreasing")
    if eps[-1] < 2 * delta * (1 - 1e-12):
        raise InvalidArgument("smallest eps must be at least 2*delta")
    return eps


def _check_partition(intervals):
    iv = np.asarray(intervals, float).reshape(-1, 2)
    if np.any(iv[:, 1] < iv[:, 0]) or np.any(iv[1:, 0] < iv[:-1, 1] - 1e-12):
        raise InvalidArgument("partition intervals must be ordered and disjoint")
    return iv


def ladder_summary(masses):
    """(extrapolated, spread) from rung masses of shape (..., L, m)."""
    last = masses[..., -3:, :]
    return masses[..., -1, :], last.max(axis=-2) - last.min(axis=-2)


def boundary_measure_masses(values, domain, intervals, eps_ladder, edge="bottom", offset=None,
                            return_density=False):
    """Rung masses (..., L, m) for a stack of field value arrays on one domain.

    ``offset`` (shape (..., nx+1), one value per x node) is the level c of
    ``critical_density``.
    """
    eps = _check_ladder(eps_ladder, domain.delta)
    iv = _check_partition(intervals)
    xs = domain.xs
    lo, hi = iv.min(), iv.max()
    pad = 1e-9
    if lo < domain.x0 + eps[0] - pad or hi > domain.x1 - eps[0] + pad:
        raise InvalidArgument("partition must stay eps_max away from the domain sides")
    # nodes needed to cover the partition, plus one on each side for interpolation
    i0 = max(int(np.searchsorted(xs, lo, side="right")) - 1, 0)
    i1 = min(int(np.searchsorted(xs, hi, side="left")), xs.size - 1)
    nodes = xs[i0: i1 + 1]
    # node positions must keep the half-circle inside the domain
    nodes_c = np.clip(nodes, domain.x0 + eps[0], domain.x1 - eps[0])
    c = 0.0 if offset is None else np.asarray(offset)[..., i0: i1 + 1]
    out, dens = [], []
    for e in eps:
        h = semicircle_average_values(values, domain, nodes_c, e, edge)
        dens.append(critical_density(h, e, c))
        out.append(interval_masses(nodes, dens[-1], iv))
    if return_density:
        return np.stack(out, axis=-2), nodes, np.stack(dens, axis=-2)
    return np.stack(out, axis=-2)


def critical_boundary_measure(field, partition, eps_ladder, edge="bottom", offset=None):
    """Critical boundary measure of ``field`` on the intervals of ``partition``."""
    m, nodes, dens = boundary_measure_masses(field.values, field.domain, partition, eps_ladder,
                                             edge, offset, return_density=True)
    ext, spread = ladder_summary(m)
    iv = _check_partition(partition)
    return BoundaryMeasure(iv, np.asarray(eps_ladder, float), m, ext, spread, nodes, dens)


def change_coordinates(field, map_eval, deriv_eval, Q=Q, target=None, max_invalid=0.01):
    """h o psi + Q log|psi'| on the vertices of ``target`` (default: the source domain).

    ``map_eval`` sends target points to source points and ``deriv_eval``
    returns |psi'| there. Vertices whose preimage leaves the source domain
    (or whose derivative is 0 or infinite) are marked invalid and set to 0.
    """
    src = field.domain
    tgt = src if target is None else target
    X, Y = np.meshgrid(tgt.xs, tgt.ys, indexing="ij")
    z = X + 1j * Y
    pre = np.asarray(map_eval(z), dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        logd = Q * np.log(np.asarray(deriv_eval(z), dtype=float))
    valid = (np.isfinite(pre) & np.isfinite(logd) & src.contains(pre))
    frac = 1.0 - valid.mean()
    if frac > max_invalid:
        raise InvalidArgument(f"{frac:.3%} of target vertices have no valid preimage")
    u = np.where(valid, (pre.real - src.x0) / src.delta, 0.0)
    v = np.where(valid, (pre.imag - src.y0) / src.delta, 0.0)
    vals = np.where(valid, _bilinear(field.values, u, v) + np.where(valid, logd, 0.0), 0.0)
    out = FieldSample(tgt, vals, field.mean_convention)
    object.__setattr__(out, "valid", valid)
    return out


def tail_sup_drifted_bm(x_grid, n, a=1.0, seed=None, dt=0.01):
    """Empirical P(sup_t (B_t - a t) > x) at each x, with binomial standard errors."""
    if n < 1000:
        raise InvalidArgument("tail estimate needs n >= 1000")
    sup = sup_drifted_bm(a, n, seed, dt=dt)
    x = np.asarray(x_grid, float)
    p = (sup[None, :] > x[:, None]).mean(axis=1)
    p[x <= 0] = 1.0
    return p, np.sqrt(p * (1 - p) / n), sup


# --- wedge moments on the strip -------------------------------------------------

STRIP_MARGIN = 2.0


def wedge_window(k, n_across=64, margin=STRIP_MARGIN):
    return strip(k - 1 - margin, k + margin, n_across)


def sample_wedge_batch(domain, n, alpha=1.0, gamma=GAMMA, seed=None):
    """``n`` wedge fields on a strip window as an array (n, nx+1, ny+1)."""
    if domain.shape != STRIP:
        raise InvalidArgument("wedge fields live on a STRIP domain")
    q = 2.0 / gamma + gamma / 2.0
    if not alpha < q:
        raise InvalidArgument(f"alpha={alpha} must be below Q={q}")
    rng = _rng(seed)
    xs = domain.xs
    d = domain.delta
    lo = min(xs[0], 0.0)
    hi = max(xs[-1], 0.0)
    i_lo = int(round(lo / d))
    i_hi = int(round(hi / d))
    grid_idx = np.arange(i_lo, i_hi + 1)
    X = np.zeros((n, grid_idx.size))
    pos = grid_idx >= 0
    if i_hi > 0:
        vals, _, _ = conditioned_drifted_bm_batch((q - alpha) / 2.0, 2.0 * d, 2.0 * d * i_hi,
                                                  n, rng)
        X[:, pos] = vals
    if i_lo < 0:
        # B_{-2t} + (Q - alpha)|t| walking outward from t = 0
        steps = np.sqrt(2.0 * d) * rng.standard_normal((n, -i_lo)) + (q - alpha) * d
        X[:, ~pos] = np.cumsum(steps, axis=1)[:, ::-1]
    off = int(round(xs[0] / d)) - i_lo
    radial = X[:, off: off + xs.size]
    lateral = sample_gff(domain, rng, n=n) if n else np.zeros((0,) + (xs.size, domain.ny + 1))
    lateral = lateral - (lateral @ _line_weights(domain))[..., None]
    return lateral + radial[:, :, None], radial


def _line_weights(domain):
    w = np.ones(domain.ny + 1)
    w[[0, -1]] = 0.5
    return w / w.sum()


def wedge_interval_masses(k, n, eps_ladder=(0.4, 0.2, 0.1), n_across=64, seed=None,
                          alpha=1.0):
    """Rung masses (n, L) of nu_h(I_k), I_k = [k-1, k] x {0, pi}, for a (2, alpha) wedge."""
    dom = wedge_window(k, n_across)
    fields, radial = sample_wedge_batch(dom, n, alpha=alpha, seed=seed)
    iv = [(k - 1.0, float(k))]
    # the radial level is factored out of the log term (see critical_density)
    bottom = boundary_measure_masses(fields, dom, iv, eps_ladder, "bottom", radial)
    top = boundary_measure_masses(fields, dom, iv, eps_ladder, "top", radial)
    return (bottom + top)[..., 0]


def wedge_interval_moment(k, p, n, seed=None, eps_ladder=(0.4, 0.2, 0.1), n_across=64):
    """E[nu_h(I_k)^p] for the (2, 1) wedge; masses clipped at 0 before the power."""
    if not 0 < p < 1:
        raise InvalidArgument("p must lie in (0, 1)")
    m = wedge_interval_masses(k, n, eps_ladder, n_across, seed)
    ext = m[:, -1]
    powered = np.maximum(ext, 0.0) ** p
    unclipped = np.sign(ext) * np.abs(ext) ** p
    spread_p = np.abs(np.maximum(m[:, -2], 0) ** p - powered).mean()
    est = float(powered.mean())
    se = float(powered.std(ddof=1) / np.sqrt(n)) if n > 1 else None
    return MCEstimate(est, se, n, {
        "k": k, "p": p, "eps_min": float(eps_ladder[-1]),
        "clipped_fraction": float((ext < 0).mean()),
        "unclipped_moment": float(unclipped.mean()),
        "spread": float(spread_p),
    })


def moment_exponent(p):
    return 4 * p * p + 2 * p


def summability_diagnostic(p):
    """Whether the moment bounds leave a summable tail: needs 4p^2 + 2p - 2 < -1."""
    e = moment_exponent(p) - 2.0
    return {"p": p, "exponent": e, "threshold": -1.0, "pass": bool(e < -1.0)}
