import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wct.phantom import (
    ImageGrid,
    Phantom,
    PhantomError,
    Primitive,
    annulus_phantom,
    ball_phantom,
    beam_integral_analytic,
    evaluate,
    phantom_from_spec,
    radon_analytic,
    rasterize,
    ray_intersect,
    total_mass,
)
from wct.verify import beam_integral_oracle


def test_ball_preset():
    ball = ball_phantom()
    assert ball.primitives == (Primitive((0.0, 0.0, 0.25), 0.5, 1.0),)


def test_annulus_preset():
    ann = annulus_phantom()
    assert set(ann.primitives) == {
        Primitive((0.0, 0.4), 0.5, -0.5),
        Primitive((0.0, 0.4), 0.25, 1.0),
    }


def test_ray_through_ball():
    assert ray_intersect(ball_phantom(), (0, 0, 1), (0, 0, -1)) == [(0.25, 1.25, 1.0)]


def test_ray_pointing_away():
    assert ray_intersect(ball_phantom(), (0, 0, 1), (0, 0, 1)) == []


def test_ray_through_both_disks():
    got = sorted(ray_intersect(annulus_phantom(), (-1, 0.4), (1, 0)))
    assert got == [(0.5, 1.5, -0.5), (0.75, 1.25, 1.0)]


def test_ray_non_unit_direction():
    with pytest.raises(PhantomError):
        ray_intersect(ball_phantom(), (0, 0, 1), (0, 0, -2))


def test_ray_from_inside_is_clipped():
    assert ray_intersect(ball_phantom(), (0, 0, 0.25), (1, 0, 0)) == [(0.0, 0.5, 1.0)]


@pytest.mark.parametrize("k,expected", [(1, 0.75), (2, 0.6458333333333334)])
def test_beam_integral_ball(k, expected):
    assert math.isclose(
        beam_integral_analytic(ball_phantom(), (0, 0, 1), (0, 0, -1), k), expected, rel_tol=1e-14
    )


def test_beam_integral_signed_chords():
    assert beam_integral_analytic(annulus_phantom(), (-1, 0.4), (1, 0), 0) == 0.0


def test_radon_examples():
    assert radon_analytic(annulus_phantom(), (0, 1), 0.4) == 0.0
    assert math.isclose(radon_analytic(ball_phantom(), (0, 0, 1), 0.25), 0.7853981633974483)
    assert radon_analytic(ball_phantom(), (0, 0, 1), 2.0) == 0.0
    assert radon_analytic(annulus_phantom(), (1, 0), -1.5) == 0.0


def test_rasterize_point_values():
    vals = evaluate(annulus_phantom(), np.array([[0.0, 0.4], [0.9, 0.9]]))
    np.testing.assert_array_equal(vals, [0.5, 0.0])


def test_raster_mass():
    grid = rasterize(annulus_phantom(), ImageGrid(((-1, 1), (-1, 1)), (256, 256)))
    mass = grid.values.sum() * np.prod(grid.spacing)
    exact = math.pi * (0.0625 - 0.125)
    assert math.isclose(total_mass(annulus_phantom()), exact, rel_tol=1e-14)
    assert abs(mass / exact - 1) < 0.01


def test_degenerate_grid():
    with pytest.raises(PhantomError):
        ImageGrid(((0, 0), (-1, 1)), (8, 8))


def test_phantom_definition_block():
    ph = phantom_from_spec({"dim": 2, "primitives": [{"center": [0, 0], "radius": 0.3, "density": 2}]})
    assert ph == Phantom(2, (Primitive((0.0, 0.0), 0.3, 2.0),))
    assert Phantom.from_dict(ph.to_dict()) == ph
    with pytest.raises(PhantomError):
        phantom_from_spec("cube")


def test_analytic_beam_matches_quadrature_oracle():
    ann = annulus_phantom()
    for sigma in ((1.0, 0.0), (0.6, 0.8), (0.8, 0.6)):
        for k in (0, 1, 2):
            val, scale = beam_integral_oracle(ann, (-1.0, 0.1), sigma, k)
            assert abs(beam_integral_analytic(ann, (-1.0, 0.1), sigma, k) - val) <= 1e-10 * scale


# ---------------------------------------------------------------- properties

coord = st.floats(-0.6, 0.6)
radius = st.floats(0.05, 0.5)
density = st.floats(-2.0, 2.0)


@st.composite
def phantoms3(draw, max_size=3):
    prims = draw(
        st.lists(st.tuples(st.tuples(coord, coord, coord), radius, density), min_size=1, max_size=max_size)
    )
    return Phantom(3, tuple(Primitive(c, r, d) for c, r, d in prims))


@st.composite
def rays3(draw):
    u = np.array(draw(st.tuples(coord, coord, coord))) * 2.0
    v = np.array(draw(st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))))
    if np.linalg.norm(v) < 1e-3:
        v = np.array([0.0, 0.0, 1.0])
    return u, v / np.linalg.norm(v)


@settings(max_examples=60, deadline=None)
@given(a=phantoms3(), b=phantoms3(), ray=rays3(), k=st.integers(0, 2), c=st.floats(-3, 3))
def test_beam_integral_linear_and_homogeneous(a, b, ray, k, c):
    u, sigma = ray
    fa = beam_integral_analytic(a, u, sigma, k)
    fb = beam_integral_analytic(b, u, sigma, k)
    scale = 1.0 + abs(fa) + abs(fb)
    assert abs(beam_integral_analytic(a + b, u, sigma, k) - (fa + fb)) <= 1e-12 * scale
    assert abs(beam_integral_analytic(a.scaled(c), u, sigma, k) - c * fa) <= 1e-12 * scale * (1 + abs(c))


@settings(max_examples=60, deadline=None)
@given(a=phantoms3(), ray=rays3(), k=st.integers(0, 2), shift=st.tuples(coord, coord, coord))
def test_beam_integral_translation_covariant(a, ray, k, shift):
    u, sigma = ray
    base = beam_integral_analytic(a, u, sigma, k)
    moved = beam_integral_analytic(a.translated(shift), u + np.array(shift), sigma, k)
    assert abs(moved - base) <= 1e-12 * (1 + abs(base))


@settings(max_examples=60, deadline=None)
@given(a=phantoms3(), ray=rays3(), s=st.floats(-1.5, 1.5))
def test_radon_even(a, ray, s):
    _, beta = ray
    assert math.isclose(radon_analytic(a, beta, s), radon_analytic(a, -beta, -s), abs_tol=1e-13)


@settings(max_examples=60, deadline=None)
@given(a=phantoms3(), ray=rays3())
def test_two_sided_beams_give_line_integral(a, ray):
    u, sigma = ray
    both = beam_integral_analytic(a, u, sigma, 0) + beam_integral_analytic(a, u, -sigma, 0)
    # full line integral: signed chord length of each primitive
    full = 0.0
    for p in a.primitives:
        d = u - np.array(p.center)
        b = d @ sigma
        disc = b * b - (d @ d - p.radius**2)
        if disc > 0:
            full += p.density * 2 * math.sqrt(disc)
    assert abs(both - full) <= 1e-12 * (1 + sum(abs(p.density) for p in a.primitives))
