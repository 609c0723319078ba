"""Smooth closed planar curves on an equispaced parameter grid.

A :class:`Curve` stores the nodes x(t_i), t_i = 2*pi*i/N, of a smooth
2*pi-periodic parametrization together with the derived geometry (unit
tangent, outward normal, signed curvature, arclength weights).  Derivatives
of sampled data are taken spectrally, so every quantity is accurate to
roughly machine precision once the data are resolved on the grid.

Perturbations phi_t = I + t*theta are applied on the fixed grid: the node
index is the parameter identification between the reference curve and the
deformed one, which is exactly the pullback used by the derivative
formulas.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np


class GeometryError(ValueError):
    """Raised for degenerate, non-simple, or badly oriented curves."""


# ---------------------------------------------------------------------------
# spectral helpers


def wavenumbers(n: int) -> np.ndarray:
    """Integer Fourier wavenumbers for an n-point periodic grid."""
    return np.fft.fftfreq(n, d=1.0 / n)


def spectral_derivative(values: np.ndarray, order: int = 1) -> np.ndarray:
    """Differentiate periodic samples with respect to the parameter t.

    Works along axis 0, so (N,) and (N, d) arrays are both accepted.  The
    Nyquist mode is dropped for odd derivatives so real data stay real.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    k = wavenumbers(n)
    mult = (1j * k) ** order
    if order % 2 == 1 and n % 2 == 0:
        mult[n // 2] = 0.0
    shape = (n,) + (1,) * (values.ndim - 1)
    return np.real(np.fft.ifft(np.fft.fft(values, axis=0) * mult.reshape(shape), axis=0))


def differentiation_matrix(n: int) -> np.ndarray:
    """Dense matrix of spectral d/dt on an even n-point grid."""
    if n % 2:
        raise ValueError("differentiation matrix requires an even grid")
    h = 2.0 * np.pi / n
    idx = np.arange(n)
    diff = idx[:, None] - idx[None, :]
    with np.errstate(divide="ignore"):
        mat = 0.5 * (-1.0) ** diff / np.tan(diff * h / 2.0)
    mat[idx, idx] = 0.0
    return mat


def fourier_upsample(values: np.ndarray, m: int) -> np.ndarray:
    """Trigonometric interpolation of periodic samples onto an m-point grid."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if m == n:
        return values.copy()
    if m < n:
        raise ValueError("upsampling target must not be smaller than the source grid")
    coeffs = np.fft.fft(values, axis=0)
    padded = np.zeros((m,) + values.shape[1:], dtype=complex)
    half = n // 2
    padded[:half] = coeffs[:half]
    padded[m - half + 1:] = coeffs[half + 1:]
    # split the Nyquist coefficient symmetrically
    padded[half] = 0.5 * coeffs[half]
    padded[m - half] = 0.5 * coeffs[half]
    return np.real(np.fft.ifft(padded, axis=0)) * (m / n)


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class Curve:
    """Discretized closed boundary, counter-clockwise, outward normal."""

    t: np.ndarray
    nodes: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    descriptor: str = "samples"
    speed: np.ndarray = field(init=False, repr=False)
    tangent: np.ndarray = field(init=False, repr=False)
    normal: np.ndarray = field(init=False, repr=False)
    curvature: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        speed = np.hypot(self.d1[:, 0], self.d1[:, 1])
        if np.any(speed <= 1e-14):
            raise GeometryError("parametrization has a vanishing derivative")
        tangent = self.d1 / speed[:, None]
        normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])
        cross = self.d1[:, 0] * self.d2[:, 1] - self.d1[:, 1] * self.d2[:, 0]
        n = self.t.size
        for name, value in (
            ("speed", speed),
            ("tangent", tangent),
            ("normal", normal),
            ("curvature", cross / speed**3),
            ("weights", (2.0 * np.pi / n) * speed),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        for arr in (self.t, self.nodes, self.d1, self.d2):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.t.size

    @property
    def h(self) -> float:
        """Parameter step 2*pi/N."""
        return 2.0 * np.pi / self.n

    def area(self) -> float:
        """Enclosed area from the divergence theorem."""
        return 0.5 * float(np.sum(self.weights * np.einsum("ij,ij->i", self.nodes, self.normal)))

    def length(self) -> float:
        return float(np.sum(self.weights))

    def integrate(self, f: np.ndarray) -> float:
        """Trapezoid rule for a scalar density sampled at the nodes."""
        return float(np.dot(self.weights, f))

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.dot(self.weights * f, g))

    def min_spacing(self) -> float:
        return float(np.min(np.linalg.norm(np.roll(self.nodes, -1, axis=0) - self.nodes, axis=1)))

    def upsample(self, m: int) -> "Curve":
        """Same curve on an m-point grid, by trigonometric interpolation."""
        t = 2.0 * np.pi * np.arange(m) / m
        return Curve(
            t,
            fourier_upsample(self.nodes, m),
            fourier_upsample(self.d1, m),
            fourier_upsample(self.d2, m),
            descriptor=self.descriptor,
        )

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x1", "x2", "nu1", "nu2", "kappa", "w"])
            for i in range(self.n):
                writer.writerow(
                    [
                        repr(float(self.t[i])),
                        repr(float(self.nodes[i, 0])),
                        repr(float(self.nodes[i, 1])),
                        repr(float(self.normal[i, 0])),
                        repr(float(self.normal[i, 1])),
                        repr(float(self.curvature[i])),
                        repr(float(self.weights[i])),
                    ]
                )


def parameter_grid(n: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n) / n


def curve_from_samples(nodes: np.ndarray, descriptor: str = "samples") -> Curve:
    """Build a curve from node positions alone, differentiating spectrally."""
    nodes = np.asarray(nodes, dtype=float)
    n = nodes.shape[0]
    _check_grid(n)
    return _finish(
        Curve(parameter_grid(n), nodes.copy(), spectral_derivative(nodes, 1), spectral_derivative(nodes, 2), descriptor)
    )


def _check_grid(n: int) -> None:
    if n < 16 or n % 2:
        raise GeometryError(f"node count must be even and at least 16, got {n}")


def _finish(curve: Curve, check_simple: bool = True) -> Curve:
    if curve.area() <= 0:
        raise GeometryError("curve is not counter-clockwise (non-positive enclosed area)")
    if check_simple:
        check_simple_curve(curve)
    return curve


def check_simple_curve(curve: Curve) -> None:
    """Reject curves where non-adjacent nodes nearly touch.

    The guard: no two nodes with index distance >= 2 may be closer than half
    of the smallest adjacent spacing.
    """
    pts = curve.nodes
    n = curve.n
    adjacent = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    limit = 0.5 * adjacent.min()
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    idx = np.arange(n)
    sep = np.abs(idx[:, None] - idx[None, :])
    sep = np.minimum(sep, n - sep)
    bad = (sep >= 2) & (d < limit)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise GeometryError(f"curve self-intersects or nearly touches itself (nodes {i} and {j})")


def _circle(r: float, t):
    c, s = np.cos(t), np.sin(t)
    x = np.column_stack([r * c, r * s])
    d1 = np.column_stack([-r * s, r * c])
    return x, d1, -x


def _ellipse(a: float, b: float, t):
    c, s = np.cos(t), np.sin(t)
    x = np.column_stack([a * c, b * s])
    d1 = np.column_stack([-a * s, b * c])
    return x, d1, -x


def _kite(t):
    c, s = np.cos(t), np.sin(t)
    c2, s2 = np.cos(2 * t), np.sin(2 * t)
    x = np.column_stack([c + 0.65 * c2 - 0.65, 1.5 * s])
    d1 = np.column_stack([-s - 1.3 * s2, 1.5 * c])
    d2 = np.column_stack([-c - 2.6 * c2, -1.5 * s])
    return x, d1, d2


def _star(r0: float, cos_terms: dict, sin_terms: dict, t):
    r = np.full_like(t, r0)
    dr = np.zeros_like(t)
    ddr = np.zeros_like(t)
    for k, a in cos_terms.items():
        r += a * np.cos(k * t)
        dr -= a * k * np.sin(k * t)
        ddr -= a * k * k * np.cos(k * t)
    for k, b in sin_terms.items():
        r += b * np.sin(k * t)
        dr += b * k * np.cos(k * t)
        ddr -= b * k * k * np.sin(k * t)
    if np.any(r <= 0):
        raise GeometryError("radial function must stay positive")
    c, s = np.cos(t), np.sin(t)
    x = np.column_stack([r * c, r * s])
    d1 = np.column_stack([dr * c - r * s, dr * s + r * c])
    d2 = np.column_stack([ddr * c - 2 * dr * s - r * c, ddr * s + 2 * dr * c - r * s])
    return x, d1, d2


def build_curve(kind: str, n: int, *params, **terms) -> Curve:
    """Construct one of the built-in analytic curves on an n-point grid.

    kind is one of ``circle`` (radius), ``ellipse`` (a, b), ``kite`` or
    ``star``.  A star is r(t) = r0 + sum a_k cos(kt) + b_k sin(kt); pass
    ``cos={k: a_k}``, ``sin={k: b_k}`` and optionally ``r0``.

    >>> build_curve("ellipse", 64, 1.0, 0.5).n
    64
    """
    _check_grid(n)
    t = parameter_grid(n)
    if kind == "circle":
        (r,) = params or (1.0,)
        if r <= 0:
            raise GeometryError("circle radius must be positive")
        x, d1, d2 = _circle(float(r), t)
        desc = f"circle:{r:g}"
    elif kind == "ellipse":
        if len(params) != 2:
            raise GeometryError("ellipse needs two semi-axes")
        a, b = map(float, params)
        if a <= 0 or b <= 0:
            raise GeometryError("ellipse semi-axes must be positive")
        x, d1, d2 = _ellipse(a, b, t)
        desc = f"ellipse:{a:g},{b:g}"
    elif kind == "kite":
        x, d1, d2 = _kite(t)
        desc = "kite"
    elif kind == "star":
        r0 = float(terms.get("r0", 1.0))
        cos_terms = {int(k): float(v) for k, v in terms.get("cos", {}).items()}
        sin_terms = {int(k): float(v) for k, v in terms.get("sin", {}).items()}
        # cheap positivity test on a fine grid before sampling at n nodes
        _star(r0, cos_terms, sin_terms, parameter_grid(max(4 * n, 1024)))
        x, d1, d2 = _star(r0, cos_terms, sin_terms, t)
        parts = [f"r0={r0:g}"] + [f"{k}={v:g}" for k, v in sorted(cos_terms.items())]
        parts += [f"s{k}={v:g}" for k, v in sorted(sin_terms.items())]
        desc = "star:" + ",".join(parts)
    else:
        raise GeometryError(f"unknown curve kind {kind!r}")
    return _finish(Curve(t, x, d1, d2, desc))


# ---------------------------------------------------------------------------
# perturbation fields and tangential calculus


@dataclass(frozen=True)
class PerturbationField:
    """Vector field theta sampled at the nodes of a host curve."""

    values: np.ndarray
    dt: np.ndarray
    descriptor: str = "field"

    @classmethod
    def from_values(cls, values: np.ndarray, descriptor: str = "field") -> "PerturbationField":
        values = np.array(values, dtype=float)
        return cls(values, spectral_derivative(values, 1), descriptor)

    @classmethod
    def from_function(cls, curve: Curve, func: Callable[[np.ndarray], np.ndarray], descriptor: str = "field"):
        """Sample a map R^2 -> R^2 at the nodes; func receives an (N, 2) array."""
        return cls.from_values(func(np.asarray(curve.nodes)), descriptor)

    def __add__(self, other: "PerturbationField") -> "PerturbationField":
        return PerturbationField(self.values + other.values, self.dt + other.dt, f"{self.descriptor}+{other.descriptor}")

    def scaled(self, a: float) -> "PerturbationField":
        return PerturbationField(a * self.values, a * self.dt, f"{a:g}*{self.descriptor}")

    def normal_component(self, curve: Curve) -> np.ndarray:
        return np.einsum("ij,ij->i", self.values, curve.normal)

    def tangential_part(self, curve: Curve) -> np.ndarray:
        """theta minus its normal projection; the remainder is tangent."""
        return self.values - self.normal_component(curve)[:, None] * curve.normal


def dilation(curve: Curve) -> PerturbationField:
    return PerturbationField(np.array(curve.nodes), np.array(curve.d1), "dilation")


def translation(curve: Curve, zeta=(1.0, 0.0)) -> PerturbationField:
    vals = np.tile(np.asarray(zeta, dtype=float), (curve.n, 1))
    return PerturbationField(vals, np.zeros_like(vals), f"translation:{zeta[0]:g},{zeta[1]:g}")


def rotation(curve: Curve, omega: float = 1.0) -> PerturbationField:
    """theta(x) = Z x with Z = omega * [[0, -1], [1, 0]]."""
    rot = np.array([[0.0, -omega], [omega, 0.0]])
    return PerturbationField(curve.nodes @ rot.T, curve.d1 @ rot.T, f"rotation:{omega:g}")


def normal_field(curve: Curve, amplitude: np.ndarray, descriptor: str = "normal") -> PerturbationField:
    """theta = a * nu for a scalar a sampled at the nodes."""
    return PerturbationField.from_values(np.asarray(amplitude)[:, None] * curve.normal, descriptor)


def tangential_field(curve: Curve, amplitude: np.ndarray, descriptor: str = "tangential") -> PerturbationField:
    """theta = a * tau; has zero normal component by construction."""
    return PerturbationField.from_values(np.asarray(amplitude)[:, None] * curve.tangent, descriptor)


def perturb(curve: Curve, theta: PerturbationField, t: float) -> Curve:
    """Nodes x_i + t*theta_i on the same parameter grid, geometry recomputed."""
    if t == 0:
        return curve
    d2 = spectral_derivative(theta.dt, 1)
    out = Curve(
        curve.t,
        curve.nodes + t * theta.values,
        curve.d1 + t * theta.dt,
        curve.d2 + t * d2,
        descriptor=f"{curve.descriptor}+{t:g}*{theta.descriptor}",
    )
    try:
        return _finish(out)
    except GeometryError as exc:
        raise GeometryError(f"perturbation step t={t:g} too large: {exc}") from exc


def arclength_derivative(curve: Curve, f: np.ndarray) -> np.ndarray:
    """df/ds at the nodes (works on scalar or vector densities)."""
    f = np.asarray(f, dtype=float)
    df = spectral_derivative(f, 1)
    if f.ndim == 1:
        return df / curve.speed
    return df / curve.speed[:, None]


def tangential_gradient(curve: Curve, f: np.ndarray) -> np.ndarray:
    """Tangential gradient (df/ds) tau of a scalar density, shape (N, 2)."""
    return arclength_derivative(curve, f)[:, None] * curve.tangent


def tangential_gradient_matrix(curve: Curve, theta: PerturbationField) -> np.ndarray:
    """Matrix field (grad_T theta)_{ij} = tau_i d(theta_j)/ds, shape (N, 2, 2)."""
    dtheta_ds = theta.dt / curve.speed[:, None]
    return curve.tangent[:, :, None] * dtheta_ds[:, None, :]


def surface_divergence(curve: Curve, theta: PerturbationField) -> np.ndarray:
    """div_T theta = trace of the tangential gradient = tau . d(theta)/ds."""
    return np.einsum("ij,ij->i", curve.tangent, theta.dt) / curve.speed


def normal_derivative_formula(curve: Curve, theta: PerturbationField) -> np.ndarray:
    """First variation of the normal, -(grad_T theta) nu, at each node."""
    g = tangential_gradient_matrix(curve, theta)
    return -np.einsum("nij,nj->ni", g, curve.normal)


def weight_ratio(reference: Curve, deformed: Curve) -> np.ndarray:
    """Area-element Jacobian of the deformation, as a ratio of weights."""
    return deformed.weights / reference.weights


def circle_area_check(curve: Curve) -> float:
    return abs(curve.area() - math.pi)
