"""The natural measure on SLE_4 built from boundary measures of unzipped fields.

For a curve eta^0 = eta([0, t]) and an independent zero-boundary field h0,
the unzipped field h^t = h0 o psi_t + 2 log|psi_t'| lives on the half-plane,
the two sides of the curve landing on [x^-(0), x^+(0)]. A curve segment
eta([s_i, s_{i+1}]) receives the boundary mass of its two images

    [x^+(s_{i+1}), x^+(s_i)]  and  [x^-(s_i), x^-(s_{i+1})],

averaged over field replicas with the curve fixed and weighted by
F(z) = (2 Im z)^{-1/2} at the segment midpoint.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy import ndimage, spatial, special, stats

from .chaos import _check_ladder, change_coordinates, critical_density, interval_masses
from .errors import InvalidArgument
from .field import GridDomain, halfplane_rect, sample_gff, semicircle_weights
from .loewner import (LoewnerChain, _rng, boundary_images_all, inverse_map,
                      inverse_with_derivative, sample_driver, tips)
from .stats import MCEstimate, mc_mean

KAPPA = 4.0
D_KAPPA = 1.0 + KAPPA / 8.0


@dataclass(frozen=True)
class MeasureConfig:
    source: GridDomain = field(default_factory=lambda: halfplane_rect(-4.0, 4.0, 4.0, 1 / 64))
    eps_ladder: tuple = (1 / 16, 1 / 32, 1 / 64)
    node_spacing: float = 1 / 128
    seg_steps: int = 5
    min_height: float = 4 / 64
    weight_exponent: float = -0.5
    push_exponent: float = D_KAPPA
    field_batch: int = 10

    def __post_init__(self):
        _check_ladder(self.eps_ladder, self.node_spacing)
        if self.seg_steps < 1:
            raise InvalidArgument("seg_steps must be >= 1")


# --- curve measures ----------------------------------------------------------


@dataclass(frozen=True)
class CurveMeasure:
    """Masses on curve segments [s_i, s_{i+1}] in capacity time."""

    bounds: np.ndarray  # s_0 < ... < s_m
    masses: np.ndarray  # (m,)
    midpoints: np.ndarray  # (m,) complex curve points
    t: float
    n_fields: int = 0
    eps: tuple = ()
    stderr: np.ndarray | None = None
    rung_masses: np.ndarray | None = None  # (L, m)
    spread: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    image_lengths: np.ndarray | None = None  # (m,) total length of both boundary images

    def __post_init__(self):
        b = np.asarray(self.bounds, float)
        if b.size != np.size(self.masses) + 1 or np.any(np.diff(b) <= 0):
            raise InvalidArgument("segment bounds must be increasing, one more than masses")

    @property
    def total(self):
        return float(np.sum(self.masses))

    def restrict(self, s):
        """Segments contained in [0, s]."""
        keep = self.bounds[1:] <= s + 1e-12
        m = int(keep.sum())
        return _subset(self, slice(0, m))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s_lo", "s_hi", "mass", "midpoint_re", "midpoint_im"])
            for lo, hi, m, z in zip(self.bounds[:-1], self.bounds[1:], self.masses,
                                    self.midpoints):
                w.writerow([f"{lo:.17g}", f"{hi:.17g}", f"{m:.17g}", f"{z.real:.17g}",
                            f"{z.imag:.17g}"])


def _subset(cm, sl):
    pick = (lambda a: None if a is None else a[..., sl])
    return replace(cm, bounds=cm.bounds[sl.start: sl.stop + 1], masses=cm.masses[sl],
                   midpoints=cm.midpoints[sl], stderr=pick(cm.stderr),
                   rung_masses=pick(cm.rung_masses), spread=pick(cm.spread),
                   image_lengths=pick(cm.image_lengths))


def read_curve_measure_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data


def segment_groups(tip_points, n, seg_steps, min_height):
    """Step-index boundaries of curve segments.

    Base segments cover ``seg_steps`` steps; a segment whose midpoint tip sits
    below ``min_height`` is merged with the next one (the last one with the
    previous) so F is never evaluated too close to the real line.
    """
    edges = list(range(0, n, seg_steps)) + [n]
    out = [0]
    for e in edges[1:]:
        mid = (out[-1] + e) // 2
        if tip_points[mid].imag >= min_height or e == n:
            out.append(e)
    if len(out) > 2:
        mid = (out[-2] + out[-1]) // 2
        if tip_points[mid].imag < min_height:
            out.pop(-2)
    return np.array(out)


def group_sum(step_values, groups):
    """Sum per-step values (..., n) into segments delimited by ``groups``."""
    c = np.concatenate([np.zeros(step_values.shape[:-1] + (1,)),
                        np.cumsum(step_values, axis=-1)], axis=-1)
    return c[..., groups[1:]] - c[..., groups[:-1]]


def step_intervals(xm, xp):
    """Boundary images of every step: right side then left side, shape (2, n, 2)."""
    right = np.stack([xp[1:], xp[:-1]], axis=-1)
    left = np.stack([xm[:-1], xm[1:]], axis=-1)
    return np.stack([right, left])


def pullback_measure(bm, chain, t, seg_steps=1, min_height=0.0, rung=-1):
    """Pull the boundary measure of h^t back to curve segments of eta([0, t]).

    ``bm`` must carry its node density (see chaos.BoundaryMeasure.masses).
    Returns the unweighted CurveMeasure for rung ``rung`` of the eps ladder.
    """
    n = chain.step_index(t)
    xm, xp = boundary_images_all(chain, t)
    lo, hi = bm.nodes[0], bm.nodes[-1]
    bad = np.nonzero((xm[:-1] < lo - 1e-12) | (xp[:-1] > hi + 1e-12))[0]
    if bad.size:
        j = int(bad[0])
        raise InvalidArgument(
            f"boundary partition [{lo}, {hi}] does not resolve segment "
            f"[{j * chain.dt}, {(j + 1) * chain.dt}] with images ({xm[j]}, {xp[j]})")
    iv = step_intervals(xm, xp).reshape(-1, 2)
    m = bm.masses(iv).reshape(len(bm.eps), 2, n).sum(axis=1)
    tp = tips(chain, t)
    groups = segment_groups(tp, n, seg_steps, min_height)
    seg = group_sum(m, groups)
    mids = tp[(groups[:-1] + groups[1:]) // 2]
    return CurveMeasure(groups * chain.dt, seg[rung], mids, n * chain.dt, 1,
                        tuple(bm.eps), None, seg)


def unzip_field(h0, chain, t, target=None, max_invalid=0.01):
    """h^t = h0 o psi_t + 2 log|psi_t'| on the vertices of ``target``."""
    k_t = chain.grid_time(t)
    return change_coordinates(
        h0, lambda z: inverse_map(chain, z, k_t),
        lambda z: inverse_with_derivative(chain, z, k_t)[1], Q=2.0, target=target,
        max_invalid=max_invalid)


# --- the field-averaged measure on a fixed curve ---------------------------------


class CurvePlan:
    """Everything about one curve that field replicas can share.

    For each eps rung the half-circle averages of h^t at the boundary nodes
    are a fixed linear map of the source field values plus a fixed offset
    (the 2 log|psi_t'| term); both are assembled once as a sparse matrix.
    """

    def __init__(self, chain, t, cfg=MeasureConfig()):
        self.chain = chain
        self.cfg = cfg
        self.n = chain.step_index(t)
        if self.n < 1:
            raise InvalidArgument("need at least one step")
        self.t = self.n * chain.dt
        self.xm, self.xp = boundary_images_all(chain, self.t)
        self.tips = tips(chain, self.t)
        h = cfg.node_spacing
        lo = np.floor(self.xm[0] / h) - 1
        hi = np.ceil(self.xp[0] / h) + 1
        self.nodes = h * np.arange(lo, hi + 1)
        self.groups = segment_groups(self.tips, self.n, cfg.seg_steps, cfg.min_height)
        self.midpoints = self.tips[(self.groups[:-1] + self.groups[1:]) // 2]
        self.intervals = step_intervals(self.xm, self.xp).reshape(-1, 2)
        self.ops = [self._operator(e) for e in cfg.eps_ladder]

    def _operator(self, eps):
        src = self.cfg.source
        theta, wts = semicircle_weights(eps, self.cfg.node_spacing)
        pts = self.nodes[:, None] + eps * np.exp(1j * theta)[None, :]
        pre, dpsi = inverse_with_derivative(self.chain, pts, self.t)
        with np.errstate(divide="ignore"):
            logd = 2.0 * np.log(dpsi)
        ok = np.isfinite(logd) & np.isfinite(pre)
        if not np.all(src.contains(pre[ok])):
            raise InvalidArgument("curve leaves the source field window")
        w = np.where(ok, wts[None, :], 0.0)
        w = w / w.sum(axis=1, keepdims=True)
        offset = (w * np.where(ok, logd, 0.0)).sum(axis=1)
        u = np.where(ok, (pre.real - src.x0) / src.delta, 0.0)
        v = np.where(ok, (pre.imag - src.y0) / src.delta, 0.0)
        i = np.minimum(np.floor(u).astype(np.intp), src.nx - 1)
        j = np.minimum(np.floor(v).astype(np.intp), src.ny - 1)
        fu, fv = u - i, v - j
        rows = np.broadcast_to(np.arange(self.nodes.size)[:, None], pts.shape)
        ny1 = src.ny + 1
        r, c, val = [], [], []
        for di, dj, f in ((0, 0, (1 - fu) * (1 - fv)), (1, 0, fu * (1 - fv)),
                          (0, 1, (1 - fu) * fv), (1, 1, fu * fv)):
            r.append(rows.ravel())
            c.append(((i + di) * ny1 + (j + dj)).ravel())
            val.append((w * f).ravel())
        B = sp.csr_matrix((np.concatenate(val), (np.concatenate(r), np.concatenate(c))),
                          shape=(self.nodes.size, src.n_vertices))
        B.sum_duplicates()
        return B, offset, int((~ok).sum())

    def step_masses(self, fields):
        """Per-step pulled-back masses (N, L, n) for source fields (N, nx+1, ny+1)."""
        H = fields.reshape(fields.shape[0], -1).T
        out = []
        for eps, (B, off, _) in zip(self.cfg.eps_ladder, self.ops):
            h = (B @ H).T + off
            m = interval_masses(self.nodes, critical_density(h, eps), self.intervals)
            out.append(m.reshape(-1, 2, self.n).sum(axis=1))
        return np.stack(out, axis=1)

    def image_lengths(self):
        """Summed length of the two boundary images of every segment."""
        per_step = np.abs(np.diff(self.intervals, axis=1)).reshape(2, self.n).sum(axis=0)
        return group_sum(per_step, self.groups)

    def weights(self, exponent=None):
        e = self.cfg.weight_exponent if exponent is None else exponent
        return (2.0 * self.midpoints.imag) ** e


def conditional_measure(chain, t, n_fields, seed=None, cfg=MeasureConfig(), plan=None):
    """F-weighted field average of the pulled-back boundary measure on eta([0, t])."""
    if n_fields < 1:
        raise InvalidArgument("need at least one field replica")
    rng = _rng(seed)
    plan = CurvePlan(chain, t, cfg) if plan is None else plan
    L = len(cfg.eps_ladder)
    m = plan.groups.size - 1
    s1 = np.zeros((L, m))
    s2 = np.zeros((L, m))
    done = 0
    while done < n_fields:
        k = min(cfg.field_batch, n_fields - done)
        seg = group_sum(plan.step_masses(sample_gff(cfg.source, rng, n=k)), plan.groups)
        s1 += seg.sum(axis=0)
        s2 += (seg * seg).sum(axis=0)
        done += k
    mean = s1 / n_fields
    if n_fields > 1:
        var = np.maximum(s2 - n_fields * mean * mean, 0.0) / (n_fields - 1)
        se = np.sqrt(var / n_fields)
    else:
        se = np.full_like(mean, np.nan)
    F = plan.weights()
    rung = mean * F
    last = rung[-3:]
    clipped = rung[-1] < 0
    return CurveMeasure(
        plan.groups * chain.dt, np.maximum(rung[-1], 0.0), plan.midpoints, plan.t, n_fields,
        tuple(cfg.eps_ladder), se[-1] * F, rung, last.max(axis=0) - last.min(axis=0),
        {"clipped_fraction": float(clipped.mean()),
         "invalid_points": int(sum(op[2] for op in plan.ops))},
        plan.image_lengths())


# --- boxes and intensities -------------------------------------------------------


@dataclass(frozen=True)
class BoxGrid:
    """Disjoint boxes (x0, x1, y0, y1) in the upper half-plane."""

    boxes: np.ndarray

    def __post_init__(self):
        b = np.array(self.boxes, dtype=float).reshape(-1, 4)
        if np.any(b[:, 1] <= b[:, 0]) or np.any(b[:, 3] <= b[:, 2]):
            raise InvalidArgument("boxes need x0 < x1 and y0 < y1")
        if np.any(b[:, 2] <= 0):
            raise InvalidArgument("boxes must sit at positive height")
        for i in range(len(b)):
            for j in range(i + 1, len(b)):
                if (b[i, 0] < b[j, 1] and b[j, 0] < b[i, 1]
                        and b[i, 2] < b[j, 3] and b[j, 2] < b[i, 3]):
                    raise InvalidArgument(f"boxes {i} and {j} overlap")
        b.setflags(write=False)
        object.__setattr__(self, "boxes", b)

    def __len__(self):
        return len(self.boxes)

    def locate(self, z):
        """Index of the box containing each point (half-open boxes), -1 if none."""
        z = np.asarray(z)
        b = self.boxes
        inside = ((z.real[:, None] >= b[None, :, 0]) & (z.real[:, None] < b[None, :, 1])
                  & (z.imag[:, None] >= b[None, :, 2]) & (z.imag[:, None] < b[None, :, 3]))
        return np.where(inside.any(axis=1), np.argmax(inside, axis=1), -1)

    def masses(self, cm):
        idx = self.locate(cm.midpoints)
        out = np.zeros(len(self))
        np.add.at(out, idx[idx >= 0], cm.masses[idx >= 0])
        return out

    def scaled(self, a):
        return BoxGrid(self.boxes * a)

    def mirrored(self):
        b = self.boxes
        return BoxGrid(np.stack([-b[:, 1], -b[:, 0], b[:, 2], b[:, 3]], axis=1))


def dyadic_boxes(level, x_range, y_range):
    """Boxes of side 2^-level tiling [x_range] x [y_range] (corners on the dyadic lattice)."""
    s = 2.0**-level
    xs = np.arange(x_range[0], x_range[1] - 1e-12, s)
    ys = np.arange(y_range[0], y_range[1] - 1e-12, s)
    return BoxGrid([(x, x + s, y, y + s) for y in ys for x in xs])


def density_integral(box, n=48):
    """Tensor Gauss-Legendre quadrature of sin(arg z) Im(z)^{-1/2} over a box."""
    x0, x1, y0, y1 = box
    g, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x1 - x0) * g + 0.5 * (x1 + x0)
    y = 0.5 * (y1 - y0) * g + 0.5 * (y1 + y0)
    X, Y = np.meshgrid(x, y, indexing="ij")
    f = np.sqrt(Y) / np.hypot(X, Y)
    return float(0.25 * (x1 - x0) * (y1 - y0) * (w @ f @ w))


def curve_chain(seed, t, dt, kappa=KAPPA):
    return LoewnerChain(kappa, sample_driver(kappa, t, dt, seed))


def curve_box_masses(seeds, boxes, t, dt, n_fields, cfg=MeasureConfig()):
    """Box masses of mu^0 on one curve; ``seeds`` = (curve seed, field seed)."""
    chain = curve_chain(seeds[0], t, dt)
    cm = conditional_measure(chain, t, n_fields, seeds[1], cfg)
    return boxes.masses(cm), cm


def intensity_profile(per_curve_masses, n_batches=None):
    """Per-box MCEstimate from an (n_curves, n_boxes) array of box masses."""
    m = np.asarray(per_curve_masses, float)
    return [mc_mean(m[:, j], n_batches) for j in range(m.shape[1])]


def ratio_test(per_curve_masses, pairs, boxes, z=3.0):
    """Compare box-mass ratios with the density quadrature for each (A, B) pair.

    The ratio's standard error comes from the delta method with the
    per-curve covariance of the two box masses.
    """
    m = np.asarray(per_curve_masses, float)
    n = m.shape[0]
    rows = []
    for a, b in pairs:
        ma, mb = m[:, a].mean(), m[:, b].mean()
        cov = np.cov(m[:, a], m[:, b]) / n
        r = ma / mb
        se = abs(r) * np.sqrt(cov[0, 0] / ma**2 + cov[1, 1] / mb**2 - 2 * cov[0, 1] / (ma * mb))
        expect = density_integral(boxes.boxes[a]) / density_integral(boxes.boxes[b])
        rows.append({"A": a, "B": b, "ratio": r, "stderr": se, "expected": expect,
                     "pass": bool(abs(r - expect) <= z * se)})
    return rows


def scaling_exponent(per_curve_masses, factors):
    """GLS slope of log(I(aA)/I(A)) on log a through the origin.

    ``per_curve_masses`` has columns [A, a_1 A, a_2 A, ...] summed over a
    base box family. Returns (slope, stderr, log-ratios).
    """
    m = np.asarray(per_curve_masses, float)
    n = m.shape[0]
    mu = m.mean(axis=0)
    C = np.cov(m, rowvar=False) / n
    y = np.log(mu[1:] / mu[0])
    # delta-method covariance of log ratios
    J = np.zeros((len(factors), m.shape[1]))
    J[:, 0] = -1.0 / mu[0]
    J[np.arange(len(factors)), np.arange(1, m.shape[1])] = 1.0 / mu[1:]
    S = J @ C @ J.T
    x = np.log(np.asarray(factors, float))
    Si = np.linalg.inv(S)
    info = x @ Si @ x
    slope = float(x @ Si @ y / info)
    return slope, float(1.0 / np.sqrt(info)), y


# --- Minkowski content -------------------------------------------------------------


def _resample(points, spacing):
    """Points along the polyline with consecutive gaps at most ``spacing``."""
    seg = np.diff(points)
    k = np.maximum(np.ceil(np.abs(seg) / spacing).astype(int), 1)
    pts = [points[:1]]
    for a, d, m in zip(points[:-1], seg, k):
        pts.append(a + d * (np.arange(1, m + 1) / m))
    return np.concatenate(pts)


def _ball_volume(k):
    return np.pi ** (k / 2) / special.gamma(1 + k / 2)


def minkowski_estimate(points, d=D_KAPPA, r_ladder=(1 / 8, 1 / 16, 1 / 32, 1 / 64)):
    """r^{d-2} Area{z : dist(z, curve) <= r} / omega_{2-d} for each r.

    omega_k is the volume of the unit k-ball, so a segment of length L gives
    L at d = 1. The area is a count of pixels of side r/8. A distance
    transform on the rasterised curve screens pixels; those within a pixel
    diagonal of the tube edge get their exact distance to the densely
    resampled curve.
    """
    points = np.asarray(points, dtype=complex)
    out = []
    for r in r_ladder:
        pix = r / 8.0
        p = _resample(points, pix / 4)
        lo = complex(p.real.min() - r - 2 * pix, p.imag.min() - r - 2 * pix)
        shape = (int(np.ceil((p.real.max() - lo.real + r + 2 * pix) / pix)) + 1,
                 int(np.ceil((p.imag.max() - lo.imag + r + 2 * pix) / pix)) + 1)
        img = np.ones(shape, dtype=bool)
        img[np.floor((p.real - lo.real) / pix).astype(int),
            np.floor((p.imag - lo.imag) / pix).astype(int)] = False
        approx = ndimage.distance_transform_edt(img) * pix
        band = np.abs(approx - r) <= 1.5 * pix
        inside = np.count_nonzero(approx < r - 1.5 * pix)
        ii, jj = np.nonzero(band)
        centres = np.column_stack([lo.real + (ii + 0.5) * pix, lo.imag + (jj + 0.5) * pix])
        dist, _ = spatial.cKDTree(np.column_stack([p.real, p.imag])).query(centres)
        area = (inside + np.count_nonzero(dist <= r)) * pix * pix
        out.append(r ** (d - 2.0) * area / _ball_volume(2.0 - d))
    return np.array(out)


# --- invariance under unzipping ------------------------------------------------------


def unzipped_measure(cm, chain, t, exponent=D_KAPPA):
    """mu^t on eta^t: segments with s >= t moved by f_t, masses times |psi_t'|^{-exponent}."""
    j = chain.step_index(t)
    keep = cm.bounds[:-1] >= j * chain.dt - 1e-12
    sub = chain.shifted(j * chain.dt)
    n_sub = sub.n_steps
    idx = np.rint(cm.bounds / chain.dt).astype(int)
    mid_idx = (idx[:-1] + idx[1:]) // 2 - j
    tp = tips(sub, n_sub * sub.dt) if n_sub else np.zeros(1, complex)
    w = tp[mid_idx[keep]]
    _, dpsi = inverse_with_derivative(chain, w, j * chain.dt)
    masses = cm.masses[keep] * dpsi ** (-exponent)
    first = int(np.argmax(keep))
    return CurveMeasure(cm.bounds[first:] - j * chain.dt, masses, w, cm.t - j * chain.dt,
                        cm.n_fields, cm.eps)


def ks_invariance(sample_a, sample_b, alpha=0.05):
    """Per-box two-sample KS tests with Bonferroni correction.

    Boxes where both samples are identically zero carry no information and
    are skipped.
    """
    a = np.asarray(sample_a, float)
    b = np.asarray(sample_b, float)
    rows = []
    live = [j for j in range(a.shape[1]) if np.any(a[:, j] != 0) or np.any(b[:, j] != 0)]
    level = alpha / max(len(live), 1)
    for j in live:
        res = stats.ks_2samp(a[:, j], b[:, j])
        rows.append({"box": j, "statistic": float(res.statistic), "pvalue": float(res.pvalue),
                     "reject": bool(res.pvalue < level)})
    return {"level": level, "rows": rows, "rejections": sum(r["reject"] for r in rows),
            "pass": not any(r["reject"] for r in rows)}


# --- last exit of the unit disk --------------------------------------------------------


def last_exit_sup(points, r_end=None):
    """sup_{t <= tau} |eta(t)| with tau the last visit to the unit disk, or None.

    A trace counts as witnessing the last exit only if it ends at modulus at
    least ``r_end``.
    """
    mod = np.abs(points)
    if r_end is not None and mod[-1] < r_end:
        return None
    inside = np.nonzero(mod < 1.0)[0]
    tau = inside[-1] if inside.size else 0
    return float(mod[: tau + 1].max())


def last_exit_radius_tail(sups, r_grid):
    """Empirical P(sup_{t<=tau} |eta| >= R) and the log-log slope over R > 1."""
    s = np.asarray([x for x in sups if x is not None], float)
    r = np.asarray(r_grid, float)
    p = np.array([1.0 if R <= 1 else float((s >= R).mean()) for R in r])
    se = np.sqrt(p * (1 - p) / s.size)
    return p, se, s.size, len(sups) - s.size

