import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import rectangle_green, ring_stencil
from sle4.errors import InvalidArgument, ResourceError
from sle4.field import (FREE, STRIP, FieldSample, GridDomain, circle_average, conformal_radius,
                        green_continuum, green_discrete, green_quadratic, halfplane_rect,
                        lateral_part, radial_part, sample_dirichlet_gff, sample_gff,
                        sample_wedge, semicircle_average, strip)

SMALL = halfplane_rect(-2.0, 2.0, 2.0, 1 / 16)


def test_domain_validation():
    with pytest.raises(InvalidArgument):
        GridDomain(0, 1, 0, 1, 0.3)
    with pytest.raises(InvalidArgument):
        GridDomain(0, 1, 0.5, 1.5, 0.25)
    with pytest.raises(InvalidArgument):
        GridDomain(0, 1, 0, 1, 0.25, (FREE,) * 4, STRIP)


def test_dirichlet_vertices_are_zero():
    f = sample_gff(SMALL, seed=1)
    v = f.values
    assert np.all(v[0] == 0) and np.all(v[-1] == 0) and np.all(v[:, 0] == 0) and np.all(v[:, -1] == 0)


def test_green_symmetric_and_decays():
    z, w = 0.5 + 1j, -0.25 + 0.5j
    assert green_discrete(SMALL, z, w) == pytest.approx(green_discrete(SMALL, w, z), abs=1e-12)
    near = green_discrete(SMALL, z, 1.9375 + 1j)
    mid = green_discrete(SMALL, z, 1.0 + 1j)
    assert near < mid
    with pytest.raises(InvalidArgument):
        green_discrete(SMALL, z, z)
    assert green_discrete(SMALL, z, z, diagonal=True) > mid


def test_green_matches_rectangle_continuum():
    d = halfplane_rect(-4.0, 4.0, 4.0, 1 / 64)
    for z, w in [(1j, 0.5 + 1j), (0.5j, 1 + 0.5j), (2 + 2j, -1 + 1j)]:
        assert green_discrete(d, z, w) == pytest.approx(rectangle_green(z, w, -4, 4, 4), rel=0.05)


def test_green_converges_with_mesh():
    z, w = 0.5 + 0.5j, 0.75 + 0.75j
    exact = rectangle_green(z, w, -2, 2, 2)
    errs = [abs(green_discrete(halfplane_rect(-2, 2, 2, 2.0**-k), z, w) - exact)
            for k in (3, 4, 5, 6)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_green_halfplane_on_wide_window():
    d = halfplane_rect(-16.0, 16.0, 16.0, 1 / 16)
    z, w = 1j, 0.5 + 1j
    assert green_discrete(d, z, w) == pytest.approx(green_continuum(z, w), rel=0.05)
    assert green_continuum(z, w) == pytest.approx(np.log(np.sqrt(4.25) / 0.5), rel=1e-12)


def test_sampler_covariance_matches_green():
    rng = np.random.default_rng(5)
    F = sample_gff(SMALL, rng, n=10_000)
    pts = [((16, 16), (24, 20)), ((10, 8), (40, 30)), ((32, 16), (33, 17))]
    xs, ys = SMALL.xs, SMALL.ys
    for (i, j), (k, l) in pts:
        a, b = F[:, i, j], F[:, k, l]
        prod = (a - a.mean()) * (b - b.mean())
        g = green_discrete(SMALL, xs[i] + 1j * ys[j], xs[k] + 1j * ys[l])
        assert abs(prod.mean() - g) < 3 * prod.std() / np.sqrt(a.size)
    f = np.zeros(F.shape[1:])
    f[20:30, 10:14] = 1.0
    g = np.zeros(F.shape[1:])
    g[30:40, 5:9] = 1.0
    pf = np.tensordot(F, f, 2)
    pg = np.tensordot(F, g, 2)
    assert abs(pf.mean()) < 3 * pf.std() / np.sqrt(pf.size)
    prod = (pf - pf.mean()) * (pg - pg.mean())
    assert abs(prod.mean() - green_quadratic(SMALL, f, g)) < 3 * prod.std() / np.sqrt(pf.size)


def test_factor_path_matches_spectral_law():
    d = halfplane_rect(-1.0, 1.0, 1.0, 1 / 16)
    rng = np.random.default_rng(3)
    S = np.array([sample_dirichlet_gff(d, rng, method="factor").values for _ in range(4000)])
    i, j = 16, 8
    v = S[:, i, j]
    g = green_discrete(d, 0.0 + 0.5j, 0.0 + 0.5j, diagonal=True)
    assert abs(v.var() - g) < 3 * g * np.sqrt(2 / v.size)
    with pytest.raises(ResourceError):
        sample_dirichlet_gff(halfplane_rect(-4, 4, 4, 1 / 64), 1, method="factor", cap=10_000)


def test_averages_exact_on_constants_and_linear():
    c = FieldSample(SMALL, np.full((SMALL.nx + 1, SMALL.ny + 1), 1.7))
    assert circle_average(c, 0.2 + 1j, 0.25) == pytest.approx(1.7, abs=1e-12)
    assert semicircle_average(c, 0.3, 0.25) == pytest.approx(1.7, abs=1e-12)
    f = sample_gff(SMALL, seed=2)
    g = sample_gff(SMALL, seed=3)
    s = f + g
    assert circle_average(s, 1j, 0.5) == pytest.approx(
        circle_average(f, 1j, 0.5) + circle_average(g, 1j, 0.5), abs=1e-12)
    with pytest.raises(InvalidArgument):
        circle_average(f, 0.1j, 0.5)
    with pytest.raises(InvalidArgument):
        circle_average(f, 1j, 1 / 32)


def test_circle_average_variance():
    d = halfplane_rect(-4.0, 4.0, 4.0, 1 / 64)
    z, eps = 1j, 0.125
    W = ring_stencil(d, z, eps)
    quad = green_quadratic(d, W, W)
    # conformal radius of the rectangle at z from the continuum Green's function
    h = 1e-2
    log_r = rectangle_green(z, z + h, -4, 4, 4, terms=40_000) + np.log(h)
    assert quad == pytest.approx(np.log(1 / eps) + log_r, rel=0.05)
    F = sample_gff(d, np.random.default_rng(8), n=400)
    vals = np.array([circle_average(FieldSample(d, f), z, eps) for f in F])
    assert abs(vals.var() - quad) < 3 * quad * np.sqrt(2 / vals.size)


def test_conformal_radius():
    assert conformal_radius(1j) == 2
    assert conformal_radius(3 + 0.5j) == 1
    assert conformal_radius(2.5 * (1 + 1j)) == pytest.approx(2.5 * conformal_radius(1 + 1j))
    with pytest.raises(InvalidArgument):
        conformal_radius(1.0)


def test_strip_decomposition_exact():
    s = strip(-2.0, 2.0, 32)
    f = sample_gff(s, seed=4)
    r = radial_part(f)
    lat = lateral_part(f)
    assert np.max(np.abs(f.values - r.values[:, None] - lat.values)) < 1e-12
    const = FieldSample(s, np.repeat(r.values[:, None], s.ny + 1, axis=1))
    assert np.max(np.abs(lateral_part(const).values)) < 1e-12


def test_radial_brownian_scaling():
    s = strip(-4.0, 4.0, 32)
    F = sample_gff(s, np.random.default_rng(9), n=3000)
    w = np.ones(s.ny + 1)
    w[[0, -1]] = 0.5
    R = F @ (w / w.sum())
    i0 = s.nx // 2
    for lag in (8, 16, 32):
        sq = (R[:, i0 + lag] - R[:, i0]) ** 2
        assert abs(sq.mean() - 2 * lag * s.delta) < 3 * sq.std() / np.sqrt(sq.size)


def test_radial_lateral_orthogonal():
    s = strip(-2.0, 2.0, 32)
    F = sample_gff(s, np.random.default_rng(10), n=4000)
    fs = [FieldSample(s, f) for f in F[:1]]
    assert fs
    w = np.ones(s.ny + 1)
    w[[0, -1]] = 0.5
    R = F @ (w / w.sum())
    lat = F - R[..., None]
    x = R[:, s.nx // 2]
    y = lat[:, s.nx // 2 + 3, 5]
    prod = (x - x.mean()) * (y - y.mean())
    assert abs(prod.mean()) < 3 * prod.std() / np.sqrt(x.size)


def test_wedge_properties():
    s = strip(-3.0, 3.0, 32)
    xs = s.xs
    neg_end = []
    for seed in range(200):
        w = sample_wedge(s, seed=seed)
        X = w.radial.values
        assert np.all(X[xs >= -1e-12] <= 0)
        lat = w.lateral.values
        wy = np.ones(s.ny + 1)
        wy[[0, -1]] = 0.5
        assert np.max(np.abs(lat @ (wy / wy.sum()))) < 1e-10
        neg_end.append(X[0] - X[np.argmin(np.abs(xs + 1.0))])
    # unconditioned side: increments over |dt| = 2 have variance 2*2 and drift 1*2
    t = -xs[0] - 1.0
    v = np.var(neg_end)
    assert abs(v - 2 * t) < 3 * 2 * t * np.sqrt(2 / len(neg_end))
    with pytest.raises(InvalidArgument):
        sample_wedge(s, alpha=2.0)


def test_field_serialisation_round_trip(tmp_path):
    f = sample_gff(SMALL, seed=11)
    f.to_files(tmp_path / "f.csv", tmp_path / "f.json")
    g = FieldSample.from_files(tmp_path / "f.csv", tmp_path / "f.json")
    assert g.domain == f.domain and np.array_equal(g.values, f.values)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_averages_linear_property(a, b):
    f = sample_gff(SMALL, seed=1)
    g = sample_gff(SMALL, seed=2)
    comb = FieldSample(SMALL, a * f.values + b * g.values)
    lhs = semicircle_average(comb, 0.1, 0.5)
    rhs = a * semicircle_average(f, 0.1, 0.5) + b * semicircle_average(g, 0.1, 0.5)
    assert lhs == pytest.approx(rhs, abs=1e-10)
