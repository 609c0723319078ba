from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from npshape.geometry2d import (
    GeometryError,
    PerturbationField,
    build_curve,
    curve_from_samples,
    dilation,
    fourier_upsample,
    normal_derivative_formula,
    perturb,
    spectral_derivative,
    surface_divergence,
    tangential_field,
    tangential_gradient,
    translation,
    weight_ratio,
)
from npshape.shapederiv import richardson


def test_circle_geometry():
    c = build_curve("circle", 64, 1.0)
    assert_allclose(c.curvature, 1.0, rtol=1e-12)
    assert_allclose(c.weights.sum(), 2 * math.pi, rtol=1e-12)


@pytest.mark.parametrize("kind,args", [("circle", (2.0,)), ("ellipse", (1.0, 0.5)), ("kite", ()), ("star", ())])
def test_frame_is_orthonormal(kind, args):
    c = build_curve(kind, 128, *args, **({"cos": {4: 0.2}} if kind == "star" else {}))
    assert_allclose(np.einsum("ij,ij->i", c.tangent, c.normal), 0.0, atol=1e-12)
    assert_allclose(np.linalg.norm(c.normal, axis=1), 1.0, atol=1e-12)
    assert_allclose(np.linalg.norm(c.tangent, axis=1), 1.0, atol=1e-12)
    assert c.area() > 0


def test_ellipse_area():
    c = build_curve("ellipse", 128, 1.0, 0.5)
    assert abs(c.area() - math.pi * 0.5) < 1e-10


def test_star_closes():
    c = build_curve("star", 256, cos={4: 0.2})
    # continuation of the parametrization at t = 2 pi lands on node 0
    t = 2 * math.pi
    r = 1 + 0.2 * math.cos(4 * t)
    assert_allclose(c.nodes[0], [r * math.cos(t), r * math.sin(t)], atol=1e-12)
    assert_allclose(c.curvature[0], c.curvature[c.n // 4], atol=1e-12)


def test_curvature_matches_sampled_construction():
    a = build_curve("kite", 128)
    b = curve_from_samples(a.nodes)
    assert_allclose(b.curvature, a.curvature, atol=1e-9)


@pytest.mark.parametrize("bad", [dict(kind="ellipse", args=(1.0, -0.5)), dict(kind="circle", args=(0.0,)), dict(kind="blob", args=())])
def test_rejects_degenerate(bad):
    with pytest.raises(GeometryError):
        build_curve(bad["kind"], 64, *bad["args"])


def test_rejects_bad_grid():
    with pytest.raises(GeometryError):
        build_curve("circle", 15)
    with pytest.raises(GeometryError):
        build_curve("circle", 8)


def test_rejects_nonpositive_radius():
    with pytest.raises(GeometryError):
        build_curve("star", 64, cos={3: 1.2})


def test_rejects_self_intersection():
    c = build_curve("ellipse", 64, 1.0, 0.5)
    squash = PerturbationField.from_values(np.column_stack([np.zeros(c.n), -c.nodes[:, 1]]))
    with pytest.raises(GeometryError):
        perturb(c, squash, 1.0)


def test_perturb_identity_bitwise():
    c = build_curve("kite", 64)
    p = perturb(c, dilation(c), 0.0)
    assert np.array_equal(p.nodes, c.nodes)


def test_dilation_scales_weights():
    c = build_curve("ellipse", 64, 1.0, 0.5)
    p = perturb(c, dilation(c), 0.3)
    assert_allclose(p.weights, 1.3 * c.weights, rtol=1e-13)


def test_perturb_composes():
    c = build_curve("ellipse", 64, 1.0, 0.5)
    th = tangential_field(c, np.cos(c.t)) + translation(c, (0.2, 0.1))
    once = perturb(c, th, 0.05)
    twice = perturb(perturb(c, th, 0.02), th, 0.03)
    assert_allclose(twice.nodes, once.nodes, atol=1e-15)


def test_tangential_gradient_constant_is_zero():
    c = build_curve("kite", 64)
    assert_allclose(tangential_gradient(c, np.full(c.n, 3.0)), 0.0, atol=1e-12)


def test_tangential_gradient_circle():
    c = build_curve("circle", 64, 1.0)
    g = tangential_gradient(c, np.cos(c.t))
    assert_allclose(g, -np.sin(c.t)[:, None] * c.tangent, atol=1e-12)


def test_tangential_gradient_ellipse_coordinate():
    c = build_curve("ellipse", 256, 1.0, 0.5)
    g = tangential_gradient(c, c.nodes[:, 0])
    assert_allclose(g, c.tangent[:, :1] * c.tangent, atol=1e-10)
    assert_allclose(np.einsum("ij,ij->i", g, c.normal), 0.0, atol=1e-12)


def test_spectral_derivative_exact_for_trig_polynomials():
    t = 2 * np.pi * np.arange(32) / 32
    f = np.cos(3 * t) + 0.5 * np.sin(15 * t)
    assert_allclose(spectral_derivative(f), -3 * np.sin(3 * t) + 7.5 * np.cos(15 * t), atol=1e-12)


def test_fourier_upsample_exact():
    t = 2 * np.pi * np.arange(32) / 32
    tf = 2 * np.pi * np.arange(96) / 96
    assert_allclose(fourier_upsample(np.sin(5 * t) + 1, 96), np.sin(5 * tf) + 1, atol=1e-13)


def test_field_decomposition():
    c = build_curve("kite", 64)
    th = PerturbationField.from_values(np.column_stack([np.cos(c.t), np.sin(2 * c.t)]))
    tan = th.tangential_part(c)
    assert_allclose(np.einsum("ij,ij->i", tan, c.normal), 0.0, atol=1e-12)
    assert_allclose(th.normal_component(c)[:, None] * c.normal + tan, th.values, atol=1e-15)


def _fd(func, steps=(1e-3, 5e-4, 2.5e-4)):
    return richardson(steps, [(func(h) - func(-h)) / (2 * h) for h in steps])


def test_divergence_matches_weight_variation():
    c = build_curve("ellipse", 128, 1.0, 0.5)
    th = PerturbationField.from_values(np.column_stack([0.3 * np.cos(2 * c.t), 0.2 * np.sin(3 * c.t) + 0.1]))
    oracle = _fd(lambda t: weight_ratio(c, perturb(c, th, t)))
    assert_allclose(surface_divergence(c, th), oracle, atol=1e-9)


def test_divergence_of_dilation_is_one():
    c = build_curve("kite", 128)
    assert_allclose(surface_divergence(c, dilation(c)), 1.0, atol=1e-12)
    oracle = _fd(lambda t: weight_ratio(c, perturb(c, dilation(c), t)))
    assert_allclose(oracle, 1.0, atol=1e-9)


def test_normal_variation_formula():
    c = build_curve("ellipse", 128, 1.0, 0.5)
    th = PerturbationField.from_values(np.column_stack([0.3 * np.cos(2 * c.t), 0.2 * np.sin(3 * c.t)]))
    h = 1e-5
    fd = (perturb(c, th, h).normal - perturb(c, th, -h).normal) / (2 * h)
    assert_allclose(normal_derivative_formula(c, th), fd, atol=1e-8)


def test_csv_export(tmp_path):
    c = build_curve("circle", 16, 1.0)
    p = tmp_path / "c.csv"
    c.to_csv(p)
    rows = p.read_text().splitlines()
    assert rows[0] == "t,x1,x2,nu1,nu2,kappa,w"
    assert len(rows) == 17
    data = np.loadtxt(p, delimiter=",", skiprows=1)
    assert_allclose(data[:, 5], 1.0, rtol=1e-12)
