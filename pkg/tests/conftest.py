from __future__ import annotations

import numpy as np
import pytest

from npshape.geometry2d import PerturbationField, build_curve
from npshape.shapederiv import Operators
from npshape.spectral import extract_cluster, solve_spectrum


def generic_field(curve):
    t = curve.t
    vals = np.column_stack([0.3 * np.cos(2 * t) + 0.1 * np.sin(t), 0.2 * np.sin(3 * t) + 0.1 * np.cos(t)])
    return PerturbationField.from_values(vals, "generic")


@pytest.fixture(scope="session")
def ellipse():
    return build_curve("ellipse", 256, 1.0, 0.5)


@pytest.fixture(scope="session")
def kite():
    return build_curve("kite", 256)


@pytest.fixture(scope="session")
def star():
    return build_curve("star", 256, cos={4: 0.2})


@pytest.fixture(scope="session")
def ellipse_ops(ellipse):
    return Operators.build(ellipse)


@pytest.fixture(scope="session")
def star_ops(star):
    return Operators.build(star)


@pytest.fixture(scope="session")
def ellipse_spectrum(ellipse_ops):
    return solve_spectrum(ellipse_ops.Kstar)


@pytest.fixture(scope="session")
def star_spectrum(star_ops):
    return solve_spectrum(star_ops.Kstar)


@pytest.fixture(scope="session")
def ellipse_cluster(ellipse, ellipse_ops, ellipse_spectrum):
    return extract_cluster(ellipse_spectrum, 1.0 / 6.0, 0.05, ellipse_ops.S, ellipse, ellipse_ops.Kstar)


@pytest.fixture(scope="session")
def ellipse_cluster_neg(ellipse, ellipse_ops, ellipse_spectrum):
    return extract_cluster(ellipse_spectrum, -1.0 / 6.0, 0.05, ellipse_ops.S, ellipse, ellipse_ops.Kstar)


@pytest.fixture(scope="session")
def star_pair_value(star_spectrum):
    """Largest eigenvalue below 1/2 that comes as a numerically double pair."""
    for g in star_spectrum.groups():
        if len(g) == 2 and star_spectrum.values[g[0]] < 0.5 - 1e-6:
            return float(np.mean(star_spectrum.values[g]))
    raise AssertionError("no double eigenvalue found")


@pytest.fixture(scope="session")
def star_cluster(star, star_ops, star_spectrum, star_pair_value):
    return extract_cluster(star_spectrum, star_pair_value, 0.01, star_ops.S, star, star_ops.Kstar)
