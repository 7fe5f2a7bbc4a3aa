import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agfem.geometry import (DegenerateGradientError, LevelSet, circle_levelset,
                            csg_complement, csg_intersection, csg_union,
                            flower_levelset, halfplane_levelset, normal_at,
                            pacman_levelset)

PI = math.pi


def test_circle_values():
    ls = circle_levelset((0.0, 0.0), 0.7)
    assert ls.value((0.7, 0.0)) == pytest.approx(0.0, abs=1e-15)
    assert ls.value((0.0, 0.0)) == pytest.approx(-0.7)
    assert ls.value((1.0, 1.0)) == pytest.approx(math.sqrt(2) - 0.7)


def test_circle_rejects_bad_radius():
    with pytest.raises(ValueError):
        circle_levelset((0, 0), -1.0)


def test_flower_zero_crossings():
    ls = flower_levelset((0.0, 0.0))
    # lobe peak along theta = pi/2 where sin(5 theta) = 1
    assert ls.value((0.0, 0.91)) == pytest.approx(0.0, abs=1e-14)
    # sin(0) = 0 along the positive x axis
    assert ls.value((0.7, 0.0)) == pytest.approx(0.0, abs=1e-14)


def test_flower_center_convention():
    ls = flower_levelset((0.0, 0.0))
    assert ls.value((0.0, 0.0)) == pytest.approx(-0.7)


def test_pacman_sign_regions():
    th0 = 0.3
    ls = pacman_levelset((0.5, 0.5), 0.3, (th0, th0 + 1.5 * PI))
    inside = (0.5 + 0.1 * math.cos(th0 + PI), 0.5 + 0.1 * math.sin(th0 + PI))
    removed = (0.5 + 0.1 * math.cos(th0 - PI / 4),
               0.5 + 0.1 * math.sin(th0 - PI / 4))
    arc = (0.5 + 0.3 * math.cos(th0 + 1.0), 0.5 + 0.3 * math.sin(th0 + 1.0))
    assert ls.value(inside) < 0
    assert ls.value(removed) > 0
    assert ls.value(arc) == pytest.approx(0.0, abs=1e-12)


def test_pacman_rejects_small_sector():
    with pytest.raises(ValueError):
        pacman_levelset((0, 0), 1.0, (0.0, 0.5 * PI))


def test_csg_involution_and_idempotence():
    a = circle_levelset((0.2, 0.1), 0.5)
    pts = np.random.default_rng(7).uniform(-1, 1, size=(64, 2))
    cc = csg_complement(csg_complement(a))
    assert np.allclose(cc.values(pts), a.values(pts))
    uu = csg_union(a, a)
    assert np.allclose(uu.values(pts), a.values(pts))


def test_csg_halfplane_intersection():
    h1 = halfplane_levelset((-1, 0), -0.3)   # inside: x > 0.3
    h2 = halfplane_levelset((0, -1), -0.3)   # inside: y > 0.3
    both = csg_intersection(h1, h2)
    assert both.value((0.5, 0.2)) > 0
    assert both.value((0.5, 0.5)) < 0


@settings(max_examples=100, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_csg_de_morgan(x, y):
    a = circle_levelset((0.0, 0.0), 0.6)
    b = halfplane_levelset((1.0, 0.5), 0.2)
    lhs = csg_complement(csg_union(a, b))
    rhs = csg_intersection(csg_complement(a), csg_complement(b))
    assert lhs.value((x, y)) == pytest.approx(rhs.value((x, y)), abs=1e-14)


@pytest.mark.parametrize("shape", ["circle", "flower", "pacman", "halfplane"])
def test_sign_stability_under_perturbation(shape):
    ls = {
        "circle": circle_levelset((0.0, 0.0), 0.7),
        "flower": flower_levelset((0.0, 0.0)),
        "pacman": pacman_levelset((0.5, 0.5), 0.3),
        "halfplane": halfplane_levelset((1, 0), 0.5),
    }[shape]
    rng = np.random.default_rng(42)
    pts = rng.uniform(0, 1, size=(1000, 2))
    vals = ls.values(pts)
    keep = np.abs(vals) > 1e-10
    delta = rng.uniform(-1, 1, size=(1000, 2))
    delta = 1e-12 * delta / np.linalg.norm(delta, axis=1)[:, None]
    vals2 = ls.values(pts + delta)
    assert np.all(np.sign(vals[keep]) == np.sign(vals2[keep]))


def test_normal_circle_radial():
    ls = circle_levelset((0.0, 0.0), 0.7)
    n = normal_at(ls, (0.7, 0.0))
    assert n == pytest.approx([-1.0, 0.0], abs=1e-12)


def test_normal_halfplane_constant():
    ls = halfplane_levelset((1.0, 0.0), 0.5)
    for p in [(0.1, 0.9), (0.5, 0.0), (0.7, 0.3)]:
        assert normal_at(ls, p) == pytest.approx([-1.0, 0.0], abs=1e-12)


def test_normal_flower_fd_matches_analytic():
    flower = flower_levelset((0.0, 0.0))
    p = (0.7, 0.0)   # theta = 0, on the zero set
    n_analytic = normal_at(flower, p)
    stripped = LevelSet(flower.evaluator, None, flower.smoothness)
    n_fd = normal_at(stripped, p)
    assert n_fd == pytest.approx(n_analytic, abs=1e-5)
    # independent polar derivation: grad = e_r - (1.05 cos 5t / r) e_t
    g = np.array([1.0, -1.05 / 0.7])
    expected = -g / np.linalg.norm(g)
    assert n_analytic == pytest.approx(expected, abs=1e-12)


def test_normals_unit_on_smooth_shapes():
    rng = np.random.default_rng(3)
    for ls, gamma in [
        (circle_levelset((0.0, 0.0), 0.7), lambda t: (0.7 * math.cos(t), 0.7 * math.sin(t))),
        (flower_levelset((0.0, 0.0)),
         lambda t: ((0.7 * (1 + 0.3 * math.sin(5 * t))) * math.cos(t),
                    (0.7 * (1 + 0.3 * math.sin(5 * t))) * math.sin(t))),
    ]:
        for t in rng.uniform(0, 2 * PI, size=50):
            n = normal_at(ls, gamma(t))
            assert abs(np.linalg.norm(n) - 1.0) < 1e-8


def test_degenerate_gradient_raises():
    flat = LevelSet(lambda p: np.zeros(len(p)), None, "smooth")
    with pytest.raises(DegenerateGradientError):
        normal_at(flat, (0.3, 0.3))
