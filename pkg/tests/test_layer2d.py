from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from npshape.geometry2d import arclength_derivative, build_curve
from npshape.layer2d import (
    NearBoundaryWarning,
    assemble_K,
    assemble_Kstar,
    assemble_S,
    assemble_T,
    boundary_limit,
    calderon_residual,
    eval_potential,
    eval_potential_gradient,
    extrapolation_weights,
    harmonic_residual,
    pv_gradient_double_layer,
    sS_selfadjoint_residual,
)


def test_K_of_one_on_kite(kite):
    assert_allclose(assemble_K(kite)(np.ones(kite.n)), 0.5, atol=1e-10)


def test_circle_K_kills_oscillations():
    c = build_curve("circle", 64, 1.7)
    K = assemble_K(c)
    for k in range(1, 5):
        assert_allclose(K(np.cos(k * c.t)), 0.0, atol=1e-13)
    assert_allclose(K(np.ones(c.n)), 0.5, atol=1e-13)


def test_K_diagonal_is_curvature_limit(ellipse):
    # off-diagonal kernel (1/2pi)(y-x).nu(y)/|x-y|^2 evaluated as y -> x
    s = 0.7
    x = np.array([math.cos(s), 0.5 * math.sin(s)])
    kappa = 0.5 / (math.sin(s) ** 2 + 0.25 * math.cos(s) ** 2) ** 1.5
    vals = []
    hs = [1e-2, 5e-3, 2.5e-3]
    for h in hs:
        t = s + h
        y = np.array([math.cos(t), 0.5 * math.sin(t)])
        tau = np.array([-math.sin(t), 0.5 * math.cos(t)])
        nu = np.array([tau[1], -tau[0]]) / np.linalg.norm(tau)
        vals.append(np.dot(y - x, nu) / (2 * math.pi * np.dot(y - x, y - x)))
    # first-order extrapolation in h
    lim = 2 * vals[2] - vals[1]
    assert abs(lim - kappa / (4 * math.pi)) < 1e-4
    assert lim > 0


def test_Kstar_is_weighted_adjoint(kite):
    K = assemble_K(kite)
    Ks = assemble_Kstar(kite)
    rng = np.random.default_rng(1)
    f, g = rng.standard_normal((2, kite.n))
    assert_allclose(kite.inner(K(f), g), kite.inner(f, Ks(g)), rtol=1e-13)


def test_circle_Kstar_equals_K():
    c = build_curve("circle", 64, 1.0)
    assert_allclose(assemble_Kstar(c).matrix, assemble_K(c).matrix, atol=1e-15)


def test_S_circle_radius_two():
    # S[1] = -r log r on a circle of radius r
    c = build_curve("circle", 64, 2.0)
    assert_allclose(assemble_S(c)(np.ones(c.n)), -2 * math.log(2), rtol=1e-13)


def test_S_unit_circle_modes():
    c = build_curve("circle", 64, 1.0)
    S = assemble_S(c)
    assert_allclose(S(np.ones(c.n)), 0.0, atol=1e-13)
    for k in (1, 2, 5):
        assert_allclose(S(np.cos(k * c.t)), np.cos(k * c.t) / (2 * k), atol=1e-13)


def test_S_positive_on_mean_zero(kite):
    S = assemble_S(kite)
    rng = np.random.default_rng(3)
    for _ in range(5):
        psi = rng.standard_normal(kite.n)
        psi -= kite.integrate(psi) / kite.length()
        assert kite.inner(S(psi), psi) > 0


def test_S_symmetric_in_weighted_product(kite):
    ws = kite.weights[:, None] * assemble_S(kite).matrix
    assert_allclose(ws, ws.T, atol=1e-14)


@pytest.mark.parametrize("name", ["ellipse", "kite"])
def test_calderon(name, request):
    c = request.getfixturevalue(name)
    assert calderon_residual(assemble_K(c), assemble_S(c), assemble_Kstar(c)) <= 1e-8


def test_sS_selfadjoint(kite):
    assert sS_selfadjoint_residual(kite, assemble_S(kite), assemble_Kstar(kite)) <= 1e-10


def test_T_annihilates_constants_and_is_selfadjoint(kite):
    T = assemble_T(kite)
    assert_allclose(T(np.ones(kite.n)), 0.0, atol=1e-10)
    wt = kite.weights[:, None] * T.matrix
    assert np.max(np.abs(wt - wt.T)) <= 1e-8 * np.max(np.abs(wt))


def test_T_circle_modes():
    c = build_curve("circle", 64, 1.0)
    T = assemble_T(c)
    for k in (1, 3):
        assert_allclose(T(np.cos(k * c.t)), 0.5 * k * np.cos(k * c.t), atol=1e-12)


def test_double_layer_of_one():
    c = build_curve("ellipse", 128, 1.0, 0.5)
    one = np.ones(c.n)
    assert abs(eval_potential(c, one, [0.1, 0.05], "double") - 1.0) < 1e-12
    assert abs(eval_potential(c, one, [1.5, 0.3], "double")) < 1e-12


def test_near_boundary_warns():
    c = build_curve("circle", 64, 1.0)
    with pytest.warns(NearBoundaryWarning):
        eval_potential(c, np.ones(c.n), [0.999, 0.0], "single")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        eval_potential(c, np.ones(c.n), [0.2, 0.0], "single")


def test_single_layer_harmonic(ellipse):
    psi = np.cos(ellipse.t) + 0.3 * np.sin(2 * ellipse.t)
    res = harmonic_residual(ellipse, psi, [0.2, 0.1], "single")
    assert abs(res) <= 1e-6 * np.max(np.abs(psi))


def test_gradient_matches_difference_quotient(ellipse):
    psi = np.cos(ellipse.t)
    x = np.array([0.3, -0.1])
    h = 1e-5
    for which in ("single", "double"):
        g = eval_potential_gradient(ellipse, psi, x, which)
        fd = [
            (eval_potential(ellipse, psi, x + h * e, which) - eval_potential(ellipse, psi, x - h * e, which)) / (2 * h)
            for e in np.eye(2)
        ]
        assert_allclose(g, fd, atol=1e-8)


def test_extrapolation_weights_reproduce_polynomials():
    d = 0.01 * np.arange(1, 6)
    w = extrapolation_weights(d)
    assert_allclose(w @ (3 + 2 * d - d**4), 3.0, atol=1e-12)


@pytest.fixture(scope="module")
def density(ellipse):
    return np.cos(ellipse.t) + 0.3 * np.sin(3 * ellipse.t)


def test_double_layer_jumps(ellipse, density):
    K = assemble_K(ellipse)
    inner = boundary_limit(ellipse, density, "double", "interior")
    outer = boundary_limit(ellipse, density, "double", "exterior")
    assert_allclose(inner, 0.5 * density + K(density), atol=1e-5)
    assert_allclose(outer, -0.5 * density + K(density), atol=1e-5)


def test_single_layer_normal_jumps(ellipse, density):
    Ks = assemble_Kstar(ellipse)
    for side, sign in (("interior", 1.0), ("exterior", -1.0)):
        g = boundary_limit(ellipse, density, "single", side, gradient=True)
        dn = np.einsum("ij,ij->i", g, ellipse.normal)
        assert_allclose(dn, sign * 0.5 * density - Ks(density), atol=1e-5)


def test_gradient_double_layer_jump(ellipse, density):
    for side in ("interior", "exterior"):
        lim = boundary_limit(ellipse, density, "double", side, gradient=True)
        assert_allclose(pv_gradient_double_layer(ellipse, density, side), lim, atol=1e-5)


def test_gradient_double_layer_constant(kite):
    assert_allclose(pv_gradient_double_layer(kite, np.full(kite.n, 2.0)), 0.0, atol=1e-12)


def test_gradient_double_layer_split(ellipse, density):
    # normal part is T, tangential part is +-1/2 d/ds eta + d/ds K eta
    g = pv_gradient_double_layer(ellipse, density, "interior")
    T = assemble_T(ellipse)
    K = assemble_K(ellipse)
    assert_allclose(np.einsum("ij,ij->i", g, ellipse.normal), T(density), atol=1e-8)
    tang = np.einsum("ij,ij->i", g, ellipse.tangent)
    expect = 0.5 * arclength_derivative(ellipse, density) + arclength_derivative(ellipse, K(density))
    assert_allclose(tang, expect, atol=1e-8)


def test_operator_csv(tmp_path):
    c = build_curve("circle", 16, 1.0)
    K = assemble_K(c)
    K.to_csv(tmp_path / "k.csv")
    assert_allclose(np.loadtxt(tmp_path / "k.csv", delimiter=","), K.matrix, rtol=0, atol=0)
