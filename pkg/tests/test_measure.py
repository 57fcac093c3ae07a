import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from oracles import density_box_integral, slit_inverse
from sle4.chaos import critical_boundary_measure, critical_density
from sle4.errors import InvalidArgument
from sle4.field import FieldSample, halfplane_rect, sample_gff
from sle4.loewner import (LoewnerChain, boundary_images_all, inverse_with_derivative,
                          sample_driver, zero_chain)
from sle4.measure import (BoxGrid, CurveMeasure, CurvePlan, MeasureConfig, conditional_measure,
                          curve_chain, density_integral, dyadic_boxes, group_sum,
                          ks_invariance, last_exit_radius_tail, last_exit_sup,
                          minkowski_estimate, pullback_measure, ratio_test, scaling_exponent,
                          unzip_field, unzipped_measure)

SRC = halfplane_rect(-2.0, 2.0, 2.0, 1 / 32)
CFG = MeasureConfig(source=SRC, eps_ladder=(1 / 8, 1 / 12, 1 / 16), node_spacing=1 / 64,
                    min_height=1 / 8, field_batch=25)


@pytest.fixture(scope="module")
def small_chain():
    return LoewnerChain(4.0, sample_driver(4.0, 0.05, 1e-3, seed=21))


def test_unzip_identity_at_time_zero(small_chain):
    h = sample_gff(SRC, seed=1)
    u = unzip_field(h, small_chain, 0.0)
    assert np.max(np.abs(u.values - h.values)) < 1e-12


def test_unzip_slit_log_derivative():
    ch = zero_chain(0.25, 1e-3)
    zero = FieldSample(SRC, np.zeros((SRC.nx + 1, SRC.ny + 1)))
    tgt = halfplane_rect(-1.0, 1.0, 1.0, 1 / 32)
    u = unzip_field(zero, ch, 0.25, target=tgt)
    X, Y = np.meshgrid(tgt.xs, tgt.ys, indexing="ij")
    z = X + 1j * Y
    ok = u.valid & (Y > 0)
    exact = 2 * np.log(np.abs(z[ok] / slit_inverse(z[ok], 0.25)))
    assert np.max(np.abs(u.values[ok] - exact)) < 1e-6


def test_unzip_tower_property(small_chain):
    s, t = 0.02, 0.05
    X, Y = np.meshgrid(SRC.xs, SRC.ys, indexing="ij")
    h = FieldSample(SRC, 0.3 * X - 0.7 * Y + 0.1)  # bilinear interpolation is exact
    tgt = halfplane_rect(-1.0, 1.0, 1.0, 1 / 32)
    direct = unzip_field(h, small_chain, t, target=tgt)
    Xt, Yt = np.meshgrid(tgt.xs, tgt.ys, indexing="ij")
    z = (Xt + 1j * Yt)[direct.valid & (Yt > 0)]
    sub = small_chain.shifted(s)
    w, d_st = inverse_with_derivative(sub, z, t - s)
    p, d_s = inverse_with_derivative(small_chain, w, s)
    two = 0.3 * p.real - 0.7 * p.imag + 0.1 + 2 * np.log(d_s) + 2 * np.log(d_st)
    assert np.max(np.abs(direct.values[direct.valid & (Yt > 0)] - two)) < 1e-6


def _pullback_setup(seg_steps=1):
    ch = LoewnerChain(4.0, sample_driver(4.0, 0.04, 2e-3, seed=4))
    h = sample_gff(SRC, seed=5)
    tgt = halfplane_rect(-1.5, 1.5, 1.5, 1 / 32)
    u = unzip_field(h, ch, 0.04, target=tgt, max_invalid=0.05)
    xm, xp = boundary_images_all(ch, 0.04)
    bm = critical_boundary_measure(u, [(-1.25, 1.25)], (1 / 4, 1 / 8, 1 / 16))
    return ch, bm, xm, xp


def test_pullback_mass_conservation():
    ch, bm, xm, xp = _pullback_setup()
    cm = pullback_measure(bm, ch, 0.04)
    whole = bm.masses([(xm[0], xp[0])])[-1, 0]
    sliver = bm.masses([(xm[-1], xp[-1])])[-1, 0]
    assert cm.total == pytest.approx(whole - sliver, abs=1e-9)
    assert np.all(np.diff(cm.bounds) > 0) and cm.bounds[0] == 0


def test_pullback_refinement_only_splits():
    ch, bm, _, _ = _pullback_setup()
    fine = pullback_measure(bm, ch, 0.04, seg_steps=1)
    coarse = pullback_measure(bm, ch, 0.04, seg_steps=4)
    idx = np.rint(coarse.bounds / ch.dt).astype(int)
    sums = group_sum(fine.masses, idx)
    assert np.max(np.abs(sums - coarse.masses)) < 1e-12


def test_pullback_unresolved_partition():
    ch, _, _, _ = _pullback_setup()
    h = sample_gff(SRC, seed=6)
    bm = critical_boundary_measure(h, [(0.1, 0.2)], (1 / 4, 1 / 8, 1 / 16))
    with pytest.raises(InvalidArgument, match="does not resolve"):
        pullback_measure(bm, ch, 0.04)


def test_plan_slit_closed_form():
    """Zero driver, zero field: h^t = 2 log|psi_t'| with psi_t(z) = sqrt(z^2 - 4t)."""
    t = 0.25
    ch = zero_chain(t, 0.01)
    plan = CurvePlan(ch, t, CFG)
    m = plan.step_masses(np.zeros((1, SRC.nx + 1, SRC.ny + 1)))[0]
    eps = CFG.eps_ladder[-1]

    def avg(x):
        f = lambda th: 2 * np.log(np.abs(
            (x + eps * np.exp(1j * th)) / slit_inverse(x + eps * np.exp(1j * th), t)))
        return integrate.quad(f, 0, np.pi, limit=200, epsabs=1e-13)[0] / np.pi

    nodes = plan.nodes
    for j in (5, 10, 15):  # right-side images away from the slit ends
        lo, hi = plan.xp[j + 1], plan.xp[j]
        inner = nodes[(nodes > lo) & (nodes < hi)]
        grid = np.concatenate([[nodes[nodes <= lo][-1]], inner, [nodes[nodes >= hi][0]]])
        dens = critical_density(np.array([avg(x) for x in grid]), eps)
        right = integrate.quad(lambda x: np.interp(x, grid, dens), lo, hi, points=inner,
                               epsabs=1e-14)[0]
        lo2, hi2 = plan.xm[j], plan.xm[j + 1]
        inner = nodes[(nodes > lo2) & (nodes < hi2)]
        grid = np.concatenate([[nodes[nodes <= lo2][-1]], inner, [nodes[nodes >= hi2][0]]])
        dens = critical_density(np.array([avg(x) for x in grid]), eps)
        left = integrate.quad(lambda x: np.interp(x, grid, dens), lo2, hi2, points=inner,
                              epsabs=1e-14)[0]
        assert m[-1, j] == pytest.approx(right + left, rel=1e-4)


def test_conditional_measure_properties():
    ch = LoewnerChain(4.0, sample_driver(4.0, 0.05, 2e-3, seed=8))
    plan = CurvePlan(ch, 0.05, CFG)
    cm = conditional_measure(ch, 0.05, 25, seed=9, cfg=CFG, plan=plan)
    assert np.all(cm.masses >= 0) and np.isfinite(cm.total)
    assert cm.n_fields == 25 and cm.eps == CFG.eps_ladder
    assert np.all(cm.midpoints.imag >= CFG.min_height) or len(cm.masses) == 1
    again = conditional_measure(ch, 0.05, 25, seed=9, cfg=CFG, plan=plan)
    assert np.array_equal(cm.masses, again.masses)
    # F weighting: doubling Im of a midpoint multiplies its weight by 2^{-1/2}
    w = plan.weights()
    plan.midpoints = plan.midpoints.real + 2j * plan.midpoints.imag
    assert np.allclose(plan.weights() / w, 2**-0.5)
    with pytest.raises(InvalidArgument):
        conditional_measure(ch, 0.05, 0, cfg=CFG)


def test_image_lengths_telescope():
    ch = LoewnerChain(4.0, sample_driver(4.0, 0.05, 2e-3, seed=8))
    plan = CurvePlan(ch, 0.05, CFG)
    lens = plan.image_lengths()
    n = plan.n
    # base images minus what is left between the two images of the tip
    assert lens.sum() == pytest.approx((plan.xp[0] - plan.xm[0]) - (plan.xp[n] - plan.xm[n]),
                                       rel=1e-12)
    assert np.all(lens >= 0) and lens.size == plan.groups.size - 1
    cm = conditional_measure(ch, 0.05, 2, seed=9, cfg=CFG, plan=plan)
    assert np.array_equal(cm.image_lengths, lens)
    assert np.array_equal(cm.restrict(0.02).image_lengths, lens[: cm.restrict(0.02).masses.size])


def test_stderr_decays_like_root_n():
    ch = LoewnerChain(4.0, sample_driver(4.0, 0.05, 2e-3, seed=8))
    plan = CurvePlan(ch, 0.05, CFG)
    # N se^2 estimates the per-replica variance without bias; average it over seeds
    nvar = []
    for n, reps in ((25, 16), (100, 4), (400, 1)):
        v = [np.mean(conditional_measure(ch, 0.05, n, seed=100 + k, cfg=CFG, plan=plan).stderr ** 2)
             for k in range(reps)]
        nvar.append(n * np.mean(v))
    assert max(nvar) / min(nvar) < 2.0


def test_restrict_and_csv(tmp_path):
    cm = CurveMeasure(np.array([0.0, 0.1, 0.2, 0.3]), np.array([1.0, 2.0, 3.0]),
                      np.array([1j, 1 + 1j, 2j]), 0.3)
    r = cm.restrict(0.2)
    assert r.total == 3.0 and np.array_equal(r.bounds, [0.0, 0.1, 0.2])
    cm.to_csv(tmp_path / "m.csv")
    data = np.loadtxt(tmp_path / "m.csv", delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 2], cm.masses)
    with pytest.raises(InvalidArgument):
        CurveMeasure(np.array([0.0, 0.1]), np.array([1.0, 2.0]), np.array([1j, 1j]), 0.1)


def test_box_grid_validation_and_lookup():
    with pytest.raises(InvalidArgument):
        BoxGrid([(0, 1, 0, 1)])
    with pytest.raises(InvalidArgument):
        BoxGrid([(0, 1, 1, 2), (0.5, 1.5, 1.5, 2.5)])
    g = dyadic_boxes(2, (-0.5, 0.5), (0.25, 0.75))
    assert len(g) == 8
    assert g.locate(np.array([0.1 + 0.3j, 5 + 5j])).tolist() == [2, -1]
    cm = CurveMeasure(np.array([0.0, 1.0, 2.0]), np.array([1.0, 2.0]),
                      np.array([0.1 + 0.3j, -0.4 + 0.6j]), 2.0)
    m = g.masses(cm)
    assert m.sum() == 3.0 and m[2] == 1.0
    mir = g.mirrored()
    assert np.allclose(np.sort(mir.boxes[:, 0]), np.sort(g.boxes[:, 0]))


def test_density_quadrature():
    for box in [(-0.25, 0.0, 0.125, 0.375), (0.5, 0.75, 0.01, 0.26), (1, 2, 1, 2)]:
        assert density_integral(box) == pytest.approx(density_box_integral(box), rel=1e-7)


@settings(max_examples=30, deadline=None)
@given(x=st.floats(-2, 2), y=st.floats(0.05, 2), w=st.floats(0.05, 1), h=st.floats(0.05, 1))
def test_density_scales_by_three_halves(x, y, w, h):
    box = (x, x + w, y, y + h)
    big = tuple(2 * c for c in box)
    assert density_integral(big) / density_integral(box) == pytest.approx(2**1.5, rel=1e-6)


def test_ratio_test_and_scaling_on_synthetic_data():
    rng = np.random.default_rng(0)
    boxes = BoxGrid([(-0.5, -0.25, 0.25, 0.5), (0.25, 0.5, 0.25, 0.5), (0.0, 0.25, 0.5, 0.75)])
    dens = np.array([density_integral(b) for b in boxes.boxes])
    per = dens * rng.gamma(4.0, 0.25, size=(4000, 3))
    rows = ratio_test(per, [(0, 1), (2, 1)], boxes)
    assert all(r["pass"] for r in rows)
    fac = (1.5, 2.0, 3.0)
    base = rng.gamma(4.0, 0.25, size=4000)
    cols = np.column_stack([base] + [a**1.5 * rng.gamma(4.0, 0.25, size=4000) for a in fac])
    slope, se, _ = scaling_exponent(cols, fac)
    assert abs(slope - 1.5) < 3 * se and se < 0.05
    same = np.column_stack([base, base])
    s1, _, y = scaling_exponent(same + rng.normal(0, 1e-3, same.shape), (1.0 + 1e-9,))
    assert abs(y[0]) < 1e-3


def test_minkowski_segment():
    pts = 1j * np.linspace(0, 1, 2001)
    r = (1 / 8, 1 / 16, 1 / 32, 1 / 64)
    v1 = minkowski_estimate(pts, 1.0, r)
    # tube of the segment: (2 r + pi r^2) / (2 r) -> length 1
    assert np.allclose(v1, 1 + np.pi * np.array(r) / 2, rtol=0.01)
    assert abs(v1[-1] - 1) < 0.05
    v15 = minkowski_estimate(pts, 1.5, r)
    ratio = v15[1:] / v15[:-1]
    assert np.allclose(ratio, 2**-0.5, rtol=0.1)


def test_unzipped_measure_time_zero_identity():
    ch = curve_chain(3, 0.05, 1e-3)
    cm = CurveMeasure(np.arange(0, 0.0501, 0.01), np.arange(1.0, 6.0),
                      np.array([0.1j, 0.2j, 0.3j, 0.4j, 0.5j]), 0.05)
    u = unzipped_measure(cm, ch, 0.0)
    assert np.allclose(u.masses, cm.masses) and np.array_equal(u.bounds, cm.bounds)


def test_ks_identical_ensembles_pass():
    a = np.random.default_rng(1).random((200, 5))
    a[:, 4] = 0
    rep = ks_invariance(a, a.copy())
    assert rep["pass"] and len(rep["rows"]) == 4 and rep["level"] == pytest.approx(0.05 / 4)
    b = a + 0.5
    assert not ks_invariance(a, b)["pass"]


def test_last_exit():
    pts = np.array([0, 0.5j, 1.5j, 0.9j, 3 + 3j])
    assert last_exit_sup(pts) == pytest.approx(1.5)
    assert last_exit_sup(pts[:3], r_end=2.0) is None
    p, se, n, excl = last_exit_radius_tail([1.5, 3.0, None, 9.0], [1.0, 2.0, 4.0, 8.0])
    assert p[0] == 1.0 and np.all(np.diff(p) <= 0) and n == 3 and excl == 1
