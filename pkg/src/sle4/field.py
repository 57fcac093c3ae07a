"""Discrete Gaussian free fields on rectangles and strips.

Fields live on the vertex grid of an axis-aligned rectangle. Each edge is
either DIRICHLET (vertices pinned to 0) or FREE. The covariance is 2*pi times
the pseudo-inverse of the grid stiffness matrix, which makes the continuum
limit on the half-plane the Green's function log|z - conj(w)| - log|z - w|
(Dirichlet form (1/2pi) int grad f . grad g). Edges along a FREE boundary get
half weight, the trapezoid rule for the energy integral, so the stiffness
matrix is separable and every sampler here is exact in law.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgument, ResourceError
from .loewner import SamplePath, _rng

DIRICHLET = "DIRICHLET"
FREE = "FREE"
HALFPLANE_RECT = "HALFPLANE_RECT"
STRIP = "STRIP"

FACTOR_CAP = 100_000


def _as_int(x, what):
    n = int(round(x))
    if abs(x - n) > 1e-8 * max(1.0, abs(x)):
        raise InvalidArgument(f"{what} must be an integer number of mesh steps, got {x}")
    return n


@dataclass(frozen=True)
class GridDomain:
    x0: float
    x1: float
    y0: float
    y1: float
    delta: float
    bc: tuple = (DIRICHLET, DIRICHLET, DIRICHLET, DIRICHLET)  # left, right, bottom, top
    shape: str = HALFPLANE_RECT

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidArgument("delta must be positive")
        _as_int((self.x1 - self.x0) / self.delta, "width")
        _as_int((self.y1 - self.y0) / self.delta, "height")
        if self.shape == HALFPLANE_RECT and self.y0 != 0:
            raise InvalidArgument("HALFPLANE_RECT must have y0 = 0")
        if self.shape == STRIP:
            if self.y0 != 0 or abs(self.y1 - np.pi) > 1e-12 or self.bc[2:] != (FREE, FREE):
                raise InvalidArgument("STRIP must be [x0,x1] x [0,pi] with FREE top and bottom")
        for b in self.bc:
            if b not in (DIRICHLET, FREE):
                raise InvalidArgument(f"unknown boundary condition {b}")

    @property
    def nx(self):
        return _as_int((self.x1 - self.x0) / self.delta, "width")

    @property
    def ny(self):
        return _as_int((self.y1 - self.y0) / self.delta, "height")

    @property
    def xs(self):
        return self.x0 + self.delta * np.arange(self.nx + 1)

    @property
    def ys(self):
        return self.y0 + self.delta * np.arange(self.ny + 1)

    @property
    def n_vertices(self):
        return (self.nx + 1) * (self.ny + 1)

    def vertex(self, z):
        """Grid indices of the vertex at complex coordinate ``z``."""
        i = _as_int((z.real - self.x0) / self.delta, "x offset")
        j = _as_int((z.imag - self.y0) / self.delta, "y offset")
        if not (0 <= i <= self.nx and 0 <= j <= self.ny):
            raise InvalidArgument(f"{z} is not a vertex of the domain")
        return i, j

    def contains(self, z, margin=0.0):
        z = np.asarray(z)
        return ((z.real >= self.x0 + margin) & (z.real <= self.x1 - margin)
                & (z.imag >= self.y0 + margin) & (z.imag <= self.y1 - margin))

    def to_json(self):
        return {"x0": self.x0, "x1": self.x1, "y0": self.y0, "y1": self.y1,
                "delta": self.delta, "bc": list(self.bc), "shape": self.shape}


def halfplane_rect(x0, x1, height, delta, bottom=DIRICHLET):
    return GridDomain(x0, x1, 0.0, height, delta, (DIRICHLET, DIRICHLET, bottom, DIRICHLET))


def strip(x0, x1, n_across):
    """Strip covering [x0, x1] x [0, pi] with mesh pi/n_across; all edges FREE.

    The x-extent is widened to the nearest mesh multiples of delta.
    """
    delta = np.pi / n_across
    x0 = np.floor(x0 / delta + 1e-9) * delta
    x1 = np.ceil(x1 / delta - 1e-9) * delta
    return GridDomain(x0, x1, 0.0, np.pi, delta, (FREE, FREE, FREE, FREE), STRIP)


@dataclass(frozen=True)
class FieldSample:
    domain: GridDomain
    values: np.ndarray  # shape (nx+1, ny+1), indexed [x, y]
    mean_convention: str = "none"
    valid: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.domain.nx + 1, self.domain.ny + 1):
            raise InvalidArgument(f"values shape {v.shape} does not match domain")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __add__(self, other):
        if isinstance(other, FieldSample):
            other = other.values
        return FieldSample(self.domain, self.values + other, self.mean_convention)

    def to_files(self, csv_path, json_path):
        d = self.domain
        X, Y = np.meshgrid(d.xs, d.ys, indexing="ij")
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "value"])
            for x, y, v in zip(X.ravel(), Y.ravel(), self.values.ravel()):
                w.writerow([f"{x:.17g}", f"{y:.17g}", f"{v:.17g}"])
        with open(json_path, "w") as fh:
            json.dump({"domain": d.to_json(), "mean_convention": self.mean_convention}, fh,
                      indent=2, sort_keys=True)

    @classmethod
    def from_files(cls, csv_path, json_path):
        with open(json_path) as fh:
            meta = json.load(fh)
        dj = meta["domain"]
        d = GridDomain(dj["x0"], dj["x1"], dj["y0"], dj["y1"], dj["delta"], tuple(dj["bc"]),
                       dj["shape"])
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        return cls(d, data[:, 2].reshape(d.nx + 1, d.ny + 1), meta["mean_convention"])


# --- spectral machinery ------------------------------------------------------


@lru_cache(maxsize=32)
def _axis_basis(n, lo, hi):
    """Generalised eigenpairs of a weighted path with n+1 vertices.

    Returns (U, lam, w): U[:, k] is the k-th eigenvector on all n+1 vertices
    (zero at DIRICHLET ends), orthonormal for the trapezoid weights ``w``.
    """
    w = np.ones(n + 1)
    if lo == FREE:
        w[0] = 0.5
    if hi == FREE:
        w[-1] = 0.5
    K = np.zeros((n + 1, n + 1))
    i = np.arange(n)
    np.add.at(K, (i, i), 1.0)
    np.add.at(K, (i + 1, i + 1), 1.0)
    K[i, i + 1] -= 1.0
    K[i + 1, i] -= 1.0
    keep = np.ones(n + 1, dtype=bool)
    if lo == DIRICHLET:
        keep[0] = False
    if hi == DIRICHLET:
        keep[-1] = False
    lam, V = scipy.linalg.eigh(K[np.ix_(keep, keep)], np.diag(w[keep]))
    lam[np.abs(lam) < 1e-12] = 0.0
    U = np.zeros((n + 1, lam.size))
    U[keep] = V
    U.setflags(write=False)
    lam.setflags(write=False)
    return U, lam, w


def _bases(domain):
    left, right, bottom, top = domain.bc
    Ux, ax, wx = _axis_basis(domain.nx, left, right)
    Uy, ay, wy = _axis_basis(domain.ny, bottom, top)
    lam = ax[:, None] + ay[None, :]
    with np.errstate(divide="ignore"):
        scale = np.where(lam > 0, np.sqrt(2 * np.pi / np.where(lam > 0, lam, 1.0)), 0.0)
    return Ux, Uy, lam, scale, wx, wy


def _mean_convention(domain):
    return "zero-weighted-mean" if all(b == FREE for b in domain.bc) else "none"


def sample_gff(domain, seed=None, n=None, lateral_only=False):
    """Exact spectral sample(s) of the discrete GFF on ``domain``.

    With ``n`` given, returns an array of shape (n, nx+1, ny+1) instead of a
    FieldSample. ``lateral_only`` keeps only modes with zero trapezoid mean on
    every vertical line (used for wedge fields on the strip).
    """
    rng = _rng(seed)
    Ux, Uy, lam, scale, _, _ = _bases(domain)
    if lateral_only:
        scale = scale.copy()
        _, ay, _ = _axis_basis(domain.ny, domain.bc[2], domain.bc[3])
        scale[:, ay == 0] = 0.0
    shape = (scale.shape if n is None else (n,) + scale.shape)
    C = rng.standard_normal(shape) * scale
    F = Ux @ C @ Uy.T
    if n is not None:
        return F
    conv = "lateral" if lateral_only else _mean_convention(domain)
    return FieldSample(domain, F, conv)


def _stiffness(domain):
    """Dirichlet grid Laplacian on interior vertices (sparse)."""
    nx, ny = domain.nx - 1, domain.ny - 1
    Tx = sp.diags([-np.ones(nx - 1), 2 * np.ones(nx), -np.ones(nx - 1)], [-1, 0, 1])
    Ty = sp.diags([-np.ones(ny - 1), 2 * np.ones(ny), -np.ones(ny - 1)], [-1, 0, 1])
    return (sp.kron(Tx, sp.identity(ny)) + sp.kron(sp.identity(nx), Ty)).tocsc()


@lru_cache(maxsize=4)
def _factor(domain):
    A = _stiffness(domain)
    lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options={"SymmetricMode": True})
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise ResourceError("symmetric factorisation unavailable for this grid")
    d = lu.U.diagonal()
    return lu, d


def sample_dirichlet_gff(domain, seed=None, method="spectral", cap=FACTOR_CAP):
    """Zero-boundary GFF; ``method='factor'`` uses a sparse LDL^T factorisation."""
    if any(b != DIRICHLET for b in domain.bc):
        raise InvalidArgument("sample_dirichlet_gff needs DIRICHLET on every edge")
    if method == "spectral":
        return sample_gff(domain, seed)
    if method != "factor":
        raise InvalidArgument(f"unknown method {method}")
    if domain.n_vertices > cap:
        raise ResourceError(
            f"{domain.n_vertices} vertices exceed the factorisation cap {cap}; "
            "use method='spectral'")
    rng = _rng(seed)
    lu, d = _factor(domain)
    # with r = argsort(perm_c): A[r][:, r] = L D L^T, so x[r] = L^{-T} D^{-1/2} xi
    y = rng.standard_normal(d.size) / np.sqrt(d)
    xr = spla.spsolve_triangular(lu.L.T.tocsr(), y, lower=False)
    x = xr[lu.perm_c]
    values = np.zeros((domain.nx + 1, domain.ny + 1))
    values[1:-1, 1:-1] = np.sqrt(2 * np.pi) * x.reshape(domain.nx - 1, domain.ny - 1)
    return FieldSample(domain, values)


def green_discrete(domain, z, w, diagonal=False):
    """Covariance of the discrete field at vertices ``z`` and ``w`` (complex coordinates)."""
    if z == w and not diagonal:
        raise InvalidArgument("z == w: the diagonal needs diagonal=True")
    Ux, Uy, lam, _, _, _ = _bases(domain)
    (iz, jz), (iw, jw) = domain.vertex(z), domain.vertex(w)
    ax = Ux[iz] * Ux[iw]
    ay = Uy[jz] * Uy[jw]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(lam > 0, 1.0 / lam, 0.0)
    return float(2 * np.pi * (ax @ inv @ ay))


def green_quadratic(domain, f, g):
    """sum_ij f_i G_ij g_j for vertex arrays f, g (the covariance of (h, f) and (h, g))."""
    Ux, Uy, lam, _, _, _ = _bases(domain)
    fa = Ux.T @ f @ Uy
    ga = Ux.T @ g @ Uy
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(lam > 0, 1.0 / lam, 0.0)
    return float(2 * np.pi * np.sum(fa * ga * inv))


def green_continuum(z, w):
    return float(np.log(abs(z - np.conj(w))) - np.log(abs(z - w)))


def conformal_radius(z):
    """Conformal radius of the upper half-plane seen from z: 2 Im z."""
    z = np.asarray(z, dtype=complex)
    if np.any(z.imag <= 0):
        raise InvalidArgument("conformal radius needs Im(z) > 0")
    r = 2.0 * z.imag
    return float(r) if r.ndim == 0 else r


# --- interpolation and averages ---------------------------------------------


def interpolate(field, pts):
    """Bilinear interpolation of ``field`` at complex points (must lie in the domain)."""
    d = field.domain
    pts = np.asarray(pts, dtype=complex)
    u = (pts.real - d.x0) / d.delta
    v = (pts.imag - d.y0) / d.delta
    tol = 1e-9
    if np.any((u < -tol) | (u > d.nx + tol) | (v < -tol) | (v > d.ny + tol)):
        raise InvalidArgument("interpolation point outside the domain")
    return _bilinear(field.values, u, v)


def _bilinear(values, u, v):
    nx, ny = values.shape[-2] - 1, values.shape[-1] - 1
    u = np.clip(u, 0, nx)
    v = np.clip(v, 0, ny)
    i = np.minimum(np.floor(u).astype(np.intp), nx - 1)
    j = np.minimum(np.floor(v).astype(np.intp), ny - 1)
    fu = u - i
    fv = v - j
    return ((1 - fu) * (1 - fv) * values[..., i, j] + fu * (1 - fv) * values[..., i + 1, j]
            + (1 - fu) * fv * values[..., i, j + 1] + fu * fv * values[..., i + 1, j + 1])


def _n_angles(eps, delta):
    return 64 * int(np.ceil(eps / delta - 1e-9))


def circle_average(field, z, eps):
    d = field.domain
    if eps < 2 * d.delta * (1 - 1e-12):
        raise InvalidArgument("eps must be at least 2*delta")
    if not d.contains(z, margin=eps - 1e-12):
        raise InvalidArgument("circle leaves the domain")
    m = _n_angles(eps, d.delta)
    pts = z + eps * np.exp(2j * np.pi * np.arange(m) / m)
    return float(np.mean(interpolate(field, pts)))


def semicircle_weights(eps, delta):
    m = _n_angles(eps, delta)
    theta = np.pi * np.arange(m + 1) / m
    wts = np.full(m + 1, 1.0 / m)
    wts[[0, -1]] *= 0.5
    return theta, wts


def semicircle_average(field, x, eps, edge="bottom"):
    """Average over the half-circle of radius eps centred at boundary point x.

    ``edge='top'`` uses the top edge of the domain (half-circle pointing down).
    ``field`` may also be a raw value array stack (..., nx+1, ny+1) paired with
    its domain via ``semicircle_average_values``.
    """
    vals = semicircle_average_values(field.values, field.domain, x, eps, edge)
    return float(vals) if np.ndim(vals) == 0 else vals


def semicircle_average_values(values, domain, x, eps, edge="bottom"):
    d = domain
    if eps < 2 * d.delta * (1 - 1e-12):
        raise InvalidArgument("eps must be at least 2*delta")
    x = np.asarray(x, dtype=float)
    if np.any(x - eps < d.x0 - 1e-12) or np.any(x + eps > d.x1 + 1e-12) or eps > d.y1 - d.y0:
        raise InvalidArgument("half-circle leaves the domain")
    theta, wts = semicircle_weights(eps, d.delta)
    px = x[..., None] + eps * np.cos(theta)
    py = eps * np.sin(theta)
    u = (px - d.x0) / d.delta
    if edge == "bottom":
        v = np.broadcast_to((py - d.y0) / d.delta, u.shape)
    elif edge == "top":
        v = np.broadcast_to((d.y1 - py - d.y0) / d.delta, u.shape)
    else:
        raise InvalidArgument(f"unknown edge {edge}")
    return _bilinear(values, u, v) @ wts


# --- strip decomposition -------------------------------------------------------


def _line_weights(domain):
    _, _, wy = _axis_basis(domain.ny, domain.bc[2], domain.bc[3])
    return wy / wy.sum()


def radial_part(field):
    """Trapezoid average of the field on every vertical line, as a path in x."""
    d = field.domain
    if d.shape != STRIP:
        raise InvalidArgument("radial_part needs a STRIP domain")
    return SamplePath(d.x0, d.delta, field.values @ _line_weights(d))


def lateral_part(field):
    d = field.domain
    if d.shape != STRIP:
        raise InvalidArgument("lateral_part needs a STRIP domain")
    r = field.values @ _line_weights(d)
    return FieldSample(d, field.values - r[:, None], "lateral")


@dataclass(frozen=True)
class WedgeField:
    lateral: FieldSample
    radial: SamplePath
    alpha: float = 1.0
    gamma: float = 2.0

    def field(self):
        return FieldSample(self.lateral.domain,
                           self.lateral.values + self.radial.values[:, None], "wedge")


def wedge_radial(alpha, gamma, ts, rng, substeps=1):
    """Average-on-vertical-lines process X of a (gamma, alpha) wedge on times ``ts``.

    t >= 0: B_{2t} - (Q - alpha) t conditioned to stay <= 0, i.e. in s = 2t
    time a path with drift (Q - alpha)/2 conditioned to stay negative.
    t <= 0: B_{-2t} - (Q - alpha) t, unconditioned. ``ts`` must be a uniform
    grid that contains 0 whenever it has points on both sides.
    """
    from .brownian import conditioned_drifted_bm_batch, two_sided_drifted_bm

    Q = 2.0 / gamma + gamma / 2.0
    if not alpha < Q:
        raise InvalidArgument(f"alpha={alpha} must be below Q={Q}")
    ts = np.asarray(ts, dtype=float)
    dt = ts[1] - ts[0]
    out = np.zeros(ts.size)
    pos = ts >= -1e-12
    if pos.any():
        k = int(pos.sum()) - 1
        vals, _, _ = conditioned_drifted_bm_batch(
            (Q - alpha) / 2.0, 2.0 * dt, 2.0 * dt * k, 1, rng, substeps=substeps)
        out[pos] = vals[0]
    if (~pos).any():
        neg = np.append(ts[~pos], 0.0)
        out[~pos] = two_sided_drifted_bm(neg, Q - alpha, rng)[:-1]
    return out


def sample_wedge(domain, alpha=1.0, gamma=2.0, seed=None):
    """(gamma, alpha)-wedge field on a strip window: conditioned radial part plus lateral GFF."""
    if domain.shape != STRIP:
        raise InvalidArgument("sample_wedge needs a STRIP domain")
    rng = _rng(seed)
    lateral = sample_gff(domain, rng, lateral_only=True)
    ts = domain.xs
    if ts[0] > 0 or ts[-1] < 0:
        full = np.arange(min(ts[0], 0.0), max(ts[-1], 0.0) + domain.delta / 2, domain.delta)
        X = wedge_radial(alpha, gamma, full, rng)
        off = _as_int((ts[0] - full[0]) / domain.delta, "offset")
        X = X[off: off + ts.size]
    else:
        X = wedge_radial(alpha, gamma, ts, rng)
    return WedgeField(lateral, SamplePath(domain.x0, domain.delta, X), alpha, gamma)
