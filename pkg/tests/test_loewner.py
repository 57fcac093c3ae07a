import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import slit_forward, slit_inverse
from sle4.errors import InvalidArgument
from sle4.loewner import (SWALLOWED, CurveTrace, LoewnerChain, boundary_images,
                          boundary_images_all, centred_forward, forward_map, hcap_coefficient,
                          inverse_map, inverse_with_derivative, map_derivative, sample_driver,
                          tips, trace, zero_chain)


@pytest.fixture(scope="module")
def chain():
    return LoewnerChain(4.0, sample_driver(4.0, 1.0, 1e-3, seed=7))


def test_driver_variance():
    w1 = np.array([sample_driver(4.0, 1.0, 1e-2, seed=s).values[-1] for s in range(10_000)])
    se = w1.var() * np.sqrt(2 / w1.size)
    assert abs(w1.var() - 4.0) < 3 * se


def test_driver_deterministic_and_degenerate():
    a = sample_driver(4.0, 1.0, 1e-3, seed=3)
    b = sample_driver(4.0, 1.0, 1e-3, seed=3)
    assert np.array_equal(a.values, b.values)
    tiny = [sample_driver(1e-12, 1.0, 1e-3, seed=s).values[-1] for s in range(200)]
    assert np.var(tiny) < 1e-10


@pytest.mark.parametrize("bad", [dict(dt=0.0), dict(horizon=-1.0), dict(kappa=0.0)])
def test_driver_rejects_bad_arguments(bad):
    args = dict(kappa=4.0, horizon=1.0, dt=1e-3) | bad
    with pytest.raises(InvalidArgument):
        sample_driver(**args)


def test_zero_driver_closed_forms():
    ch = zero_chain(1.0, 1e-3)
    z = 1 + 1j
    assert abs(forward_map(ch, z, 1.0) - (2.05817 + 0.48587j)) < 1e-5
    assert abs(forward_map(ch, z, 1.0) - slit_forward(z, 1.0)) < 1e-9
    assert forward_map(ch, 0.5j, 1.0) is SWALLOWED
    assert abs(map_derivative(ch, z, 1.0) - 0.66874) < 1e-5
    assert abs(inverse_map(ch, np.sqrt(3.0), 1.0) - 1j) < 1e-9
    assert abs(hcap_coefficient(ch, 1.0) - 2.0) < 1e-4


def test_zero_driver_lattice():
    ch = zero_chain(1.0, 1e-3)
    x, y = np.meshgrid(np.linspace(-2.05, 2.05, 10), np.linspace(0.1, 2.5, 10))
    z = (x + 1j * y).ravel()
    ex = slit_forward(z, 1.0)
    assert np.max(np.abs(forward_map(ch, z, 1.0) / ex - 1)) < 1e-6
    assert np.max(np.abs(centred_forward(ch, z, 1.0) / ex - 1)) < 1e-6
    assert np.max(np.abs(inverse_map(ch, z, 1.0) / slit_inverse(z, 1.0) - 1)) < 1e-6
    d = map_derivative(ch, z, 1.0)
    assert np.max(np.abs(d / (np.abs(z) / np.abs(ex)) - 1)) < 1e-6


def test_time_zero_is_identity(chain):
    z = 0.3 + 0.7j
    assert centred_forward(chain, z, 0.0) == z
    assert inverse_map(chain, z, 0.0) == z
    assert map_derivative(chain, z, 0.0) == 1.0
    assert abs(hcap_coefficient(chain, 0.0)) < 1e-8


def test_real_point_rejected(chain):
    with pytest.raises(InvalidArgument):
        forward_map(chain, 0.5 + 0j, 0.5)


def test_time_rounded_down(chain):
    z = 0.2 + 1j
    assert centred_forward(chain, z, 0.5004) == centred_forward(chain, z, 0.5)
    with pytest.raises(InvalidArgument):
        centred_forward(chain, z, 1.5)


@settings(max_examples=40, deadline=None)
@given(x=st.floats(-3, 3), y=st.floats(0.1, 3), t=st.sampled_from([0.1, 0.37, 1.0]))
def test_inverse_undoes_forward(chain, x, y, t):
    z = complex(x, y)
    w = centred_forward(chain, z, t)
    if w is SWALLOWED or map_derivative(chain, z, t) < 1e-6:
        return  # nearly enclosed pockets are ill-conditioned for any inversion
    assert abs(inverse_map(chain, w, t) - z) / abs(z) < 1e-9


@settings(max_examples=30, deadline=None)
@given(x=st.floats(-3, 3), y=st.floats(0.1, 3), s=st.floats(0.0, 0.6))
def test_semigroup(chain, x, y, s):
    z = complex(x, y)
    t = 0.8
    direct = centred_forward(chain, z, t)
    mid = centred_forward(chain, z, s)
    if direct is SWALLOWED or mid is SWALLOWED:
        return
    sub = chain.shifted(s)
    two = centred_forward(sub, mid, t - chain.grid_time(s))
    assert abs(two - direct) / abs(direct) < 1e-8


def test_derivative_identities(chain):
    z = np.array([0.3 + 0.9j, -1 + 0.5j, 2 + 2j])
    d = map_derivative(chain, z, 0.6)
    w = centred_forward(chain, z, 0.6)
    _, dpsi = inverse_with_derivative(chain, w, 0.6)
    assert np.allclose(dpsi * d, 1.0, rtol=1e-9)
    h = 1e-6
    fd = np.abs((centred_forward(chain, z + h, 0.6) - w) / h)
    assert np.allclose(fd, d, rtol=1e-4)


def test_hcap_random_chains():
    for s in range(5):
        ch = LoewnerChain(4.0, sample_driver(4.0, 0.5, 1e-3, seed=s))
        assert abs(hcap_coefficient(ch, 0.5) - 1.0) < 1e-3


def test_trace_zero_driver_and_invariants(chain, tmp_path):
    ch = zero_chain(1.0, 1e-3)
    tr = trace(ch)
    assert abs(tr.points[-1] - 2j) < 5 * tr.tip_offset
    assert tr.points[0] == 0
    assert np.all(np.diff(tr.times) > 0)
    tr = trace(chain)
    assert np.all(tr.points.imag >= 0)
    tr.to_csv(tmp_path / "trace.csv")
    t, p = CurveTrace.read_csv(tmp_path / "trace.csv")
    assert np.array_equal(t, tr.times) and np.array_equal(p, tr.points)


def test_tips_start_at_origin(chain):
    tp = tips(chain, 0.5)
    assert tp[0] == 0 and np.all(tp.imag >= 0)


def test_boundary_images_zero_driver():
    ch = zero_chain(1.0, 1e-3)
    xm, xp = boundary_images(ch, 0.0, 1.0)
    assert abs(xm + 2) < 1e-9 and abs(xp - 2) < 1e-9
    xm, xp = boundary_images(ch, 0.75, 1.0)
    assert abs(xm + 1) < 1e-9 and abs(xp - 1) < 1e-9


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_boundary_images_monotone(seed):
    ch = LoewnerChain(4.0, sample_driver(4.0, 0.5, 1e-3, seed=seed))
    xm, xp = boundary_images_all(ch, 0.5)
    assert np.all(xm <= xp)
    assert np.all(np.diff(xm) >= 0) and np.all(np.diff(xp) <= 0)
    for s in (0.0, 0.1, 0.3):
        a, b = boundary_images(ch, s, 0.5)
        j = ch.step_index(s)
        assert a <= b and np.isclose(a, xm[j]) and np.isclose(b, xp[j])


def test_scaled_chain_maps_by_dilation(chain):
    a = 2.0
    sc = chain.scaled(a)
    z = 0.4 + 0.8j
    # g~_t(z/a) = g_{a^2 t}(z)/a
    assert abs(forward_map(sc, z / a, 0.2) - forward_map(chain, z, 0.2 * a * a) / a) < 1e-9
