"""Nystrom discretization of the 2D Laplace layer potentials.

Conventions: E(x) = -(1/2pi) log|x|, so that the single layer S is positive
on mean-zero densities, and

    K[psi](x)  =  int nu(y) . grad E(x - y) psi(y) dsigma_y
    K*[psi](x) = -int nu(x) . grad E(x - y) psi(y) dsigma_y

The interior limit of the double layer is +psi/2 + K psi and the interior
normal derivative of the single layer is +psi/2 - K* psi.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry2d import Curve, arclength_derivative, differentiation_matrix, fourier_upsample

TWO_PI = 2.0 * np.pi


class NearBoundaryWarning(UserWarning):
    """Target point is too close to the curve for plain quadrature."""


@dataclass(frozen=True)
class DiscreteOperator:
    matrix: np.ndarray
    weights: np.ndarray
    kind: str

    def __post_init__(self):
        self.matrix.setflags(write=False)

    def __call__(self, psi: np.ndarray) -> np.ndarray:
        return self.matrix @ psi

    apply = __call__

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def weighted_adjoint(self, kind: str | None = None) -> "DiscreteOperator":
        """W^{-1} A^T W, the adjoint in the discrete L^2(dsigma) product."""
        w = self.weights
        mat = (self.matrix.T * w[None, :]) / w[:, None]
        return DiscreteOperator(mat, w, kind or f"{self.kind}^*")

    def to_csv(self, path: str | Path) -> None:
        np.savetxt(path, self.matrix, delimiter=",", fmt="%.17g")


# ---------------------------------------------------------------------------
# kernels


def _pair_differences(curve: Curve):
    """z_ij = x_i - y_j and |z_ij|^2 with the diagonal set to 1."""
    z = curve.nodes[:, None, :] - curve.nodes[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", z, z)
    np.fill_diagonal(r2, 1.0)
    return z, r2


def double_layer_kernel(curve: Curve) -> np.ndarray:
    """k(x_i, y_j) = (1/2pi)(y_j - x_i).nu_j / |x_i - y_j|^2, curvature limit on the diagonal."""
    z, r2 = _pair_differences(curve)
    k = -np.einsum("ijk,jk->ij", z, curve.normal) / (TWO_PI * r2)
    # (y-x).nu(y) ~ kappa |y-x|^2 / 2 as y -> x
    np.fill_diagonal(k, curve.curvature / (4.0 * np.pi))
    return k


def assemble_K(curve: Curve) -> DiscreteOperator:
    return DiscreteOperator(double_layer_kernel(curve) * curve.weights[None, :], curve.weights, "K")


def assemble_Kstar(curve: Curve) -> DiscreteOperator:
    return assemble_K(curve).weighted_adjoint("Kstar")


def _kress_log_weights(n_half: int) -> np.ndarray:
    """R_j for the log(4 sin^2(t/2)) quadrature on a 2n-point grid."""
    n2 = 2 * n_half
    t = np.pi * np.arange(n2) / n_half
    m = np.arange(1, n_half)
    r = -(2.0 * np.pi / n_half) * (np.cos(np.outer(t, m)) / m).sum(axis=1)
    r -= (np.pi / n_half**2) * np.cos(n_half * t)
    return r


def assemble_S(curve: Curve) -> DiscreteOperator:
    """Single layer via log splitting with spectrally accurate weights."""
    n = curve.n
    half = n // 2
    r = _kress_log_weights(half)
    idx = np.arange(n)
    lag = (idx[:, None] - idx[None, :]) % n
    z, r2 = _pair_differences(curve)
    dt = curve.t[:, None] - curve.t[None, :]
    with np.errstate(divide="ignore"):
        smooth = np.log(r2 / (4.0 * np.sin(dt / 2.0) ** 2))
    np.fill_diagonal(smooth, np.log(curve.speed**2))
    mat = -(1.0 / (4.0 * np.pi)) * (r[lag] + (np.pi / half) * smooth) * curve.speed[None, :]
    return DiscreteOperator(mat, curve.weights, "S")


def assemble_T(curve: Curve, S: DiscreteOperator | None = None) -> DiscreteOperator:
    """Normal derivative of the double layer, T = -(d/ds) S (d/ds)."""
    S = S or assemble_S(curve)
    dmat = differentiation_matrix(curve.n)
    dds = dmat / curve.speed[:, None]
    return DiscreteOperator(-dds @ S.matrix @ dds, curve.weights, "T")


# ---------------------------------------------------------------------------
# principal values

# extrapolation of (F(t+kh) + F(t-kh))/2, k = 1..4, to k = 0 in powers of (kh)^2
_PV_EXTRAP = np.array([1.6, -0.8, 8.0 / 35.0, -1.0 / 35.0])


def pv_trapezoid(values: np.ndarray, h: float) -> np.ndarray:
    """Principal value of a periodic integral with a simple pole at each node.

    values[i, j, ...] holds the integrand (in the parameter measure) for
    target i and source j; the diagonal is ignored.  The symmetric sum
    over j != i kills the odd pole part exactly; the finite part at j = i
    that the trapezoid rule would need is recovered from the even averages
    of the neighbours by polynomial extrapolation.
    """
    n = values.shape[0]
    f = np.array(values, dtype=float, copy=True)
    idx = np.arange(n)
    f[idx, idx] = 0.0
    total = f.sum(axis=1)
    finite = np.zeros_like(total)
    for k, c in enumerate(_PV_EXTRAP, start=1):
        finite += c * 0.5 * (f[idx, (idx + k) % n] + f[idx, (idx - k) % n])
    return h * (total + finite)


def pv_gradient_double_layer(curve: Curve, eta: np.ndarray, side: str = "interior") -> np.ndarray:
    """Boundary limit of grad D[eta] from one side, shape (N, 2).

    grad D(+/-)[eta] = +/- (1/2) grad_T eta + pv int (eta(y) - eta(x)) Hess E(x - y) nu(y).
    """
    sign = {"interior": 1.0, "exterior": -1.0}[side]
    pv = _pv_hessian_term(curve, eta)
    return sign * 0.5 * arclength_derivative(curve, eta)[:, None] * curve.tangent + pv


def _pv_hessian_term(curve: Curve, eta: np.ndarray) -> np.ndarray:
    z, r2 = _pair_differences(curve)
    nu = curve.normal
    # Hess E(z) nu = -(1/2pi)[nu/|z|^2 - 2 z (z.nu)/|z|^4]
    zn = np.einsum("ijk,jk->ij", z, nu)
    hess_nu = -(nu[None, :, :] / r2[..., None] - 2.0 * z * (zn / r2**2)[..., None]) / TWO_PI
    diff = eta[None, :] - eta[:, None]
    vals = (diff * curve.speed[None, :])[..., None] * hess_nu
    return pv_trapezoid(vals, curve.h)


def pv_gradient_single_layer(curve: Curve, psi: np.ndarray) -> np.ndarray:
    """pv int psi(y) grad E(x - y) dsigma_y at the nodes, shape (N, 2)."""
    z, r2 = _pair_differences(curve)
    vals = -(z / r2[..., None]) / TWO_PI * (psi * curve.speed)[None, :, None]
    return pv_trapezoid(vals, curve.h)


# ---------------------------------------------------------------------------
# off-boundary evaluation


def _check_distance(curve: Curve, x: np.ndarray) -> None:
    d = np.min(np.linalg.norm(curve.nodes[None, :, :] - x[:, None, :], axis=2), axis=1)
    spacing = np.max(np.linalg.norm(np.roll(curve.nodes, -1, axis=0) - curve.nodes, axis=1))
    if np.any(d < spacing):
        warnings.warn(
            f"target within one node spacing ({spacing:.3g}) of the boundary; quadrature is inaccurate",
            NearBoundaryWarning,
            stacklevel=3,
        )


def _field(curve: Curve, psi: np.ndarray, x: np.ndarray, which: str, gradient: bool) -> np.ndarray:
    z = x[:, None, :] - curve.nodes[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", z, z)
    wpsi = curve.weights * psi
    if which == "single":
        if not gradient:
            return -(0.5 / TWO_PI) * np.log(r2) @ wpsi
        return -np.einsum("ijk,j->ik", z / r2[..., None], wpsi) / TWO_PI
    if which == "double":
        zn = np.einsum("ijk,jk->ij", z, curve.normal)
        if not gradient:
            return -(zn / r2) @ wpsi / TWO_PI
        nu = curve.normal[None, :, :]
        g = nu / r2[..., None] - 2.0 * z * (zn / r2**2)[..., None]
        return -np.einsum("ijk,j->ik", g, wpsi) / TWO_PI
    raise ValueError(f"unknown potential {which!r}")


def eval_potential(curve: Curve, psi: np.ndarray, x, which: str = "single", check: bool = True):
    """S[psi](x) or D[psi](x) by plain trapezoid quadrature; x is (2,) or (M, 2)."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if check:
        _check_distance(curve, pts)
    out = _field(curve, np.asarray(psi, dtype=float), pts, which, gradient=False)
    return float(out[0]) if np.ndim(x) == 1 else out


def eval_potential_gradient(curve: Curve, psi: np.ndarray, x, which: str = "single", check: bool = True):
    """Gradient of S[psi] or D[psi] at off-boundary points."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if check:
        _check_distance(curve, pts)
    out = _field(curve, np.asarray(psi, dtype=float), pts, which, gradient=True)
    return out[0] if np.ndim(x) == 1 else out


def extrapolation_weights(offsets: np.ndarray) -> np.ndarray:
    """Lagrange weights evaluating the interpolant through (offsets, f) at 0."""
    d = np.asarray(offsets, dtype=float)
    w = np.ones_like(d)
    for k in range(d.size):
        for j in range(d.size):
            if j != k:
                w[k] *= d[j] / (d[j] - d[k])
    return w


def boundary_limit(
    curve: Curve,
    psi: np.ndarray,
    which: str = "single",
    side: str = "interior",
    gradient: bool = False,
    nodes=None,
    d0: float = 0.005,
    levels: int = 10,
) -> np.ndarray:
    """One-sided boundary trace of a layer potential (or its gradient).

    The potential is evaluated at x_i -/+ k*d0*nu_i, k = 1..levels, on a
    Fourier-upsampled copy of the curve fine enough that the trapezoid rule
    is converged at distance d0, then extrapolated to zero offset.
    """
    sign = {"interior": -1.0, "exterior": 1.0}[side]
    idx = np.arange(curve.n) if nodes is None else np.asarray(nodes)
    m = curve.n
    while curve.length() / m * 7.0 > d0:
        m *= 2
    fine = curve.upsample(m) if m > curve.n else curve
    fpsi = fourier_upsample(np.asarray(psi, dtype=float), m) if m > curve.n else np.asarray(psi, dtype=float)
    offsets = d0 * np.arange(1, levels + 1)
    wts = extrapolation_weights(offsets)
    base = curve.nodes[idx]
    nu = curve.normal[idx]
    acc = None
    for d, c in zip(offsets, wts):
        val = _field(fine, fpsi, base + sign * d * nu, which, gradient)
        acc = c * val if acc is None else acc + c * val
    return acc


def harmonic_residual(curve: Curve, psi: np.ndarray, x, which: str = "single", h: float = 1e-3) -> float:
    """Five-point Laplacian of the potential at an off-boundary point."""
    x = np.asarray(x, dtype=float)
    e = np.eye(2) * h
    pts = np.array([x, x + e[0], x - e[0], x + e[1], x - e[1]])
    v = _field(curve, np.asarray(psi, dtype=float), pts, which, gradient=False)
    return float((v[1] + v[2] + v[3] + v[4] - 4.0 * v[0]) / h**2)


# ---------------------------------------------------------------------------
# identities


def calderon_residual(K: DiscreteOperator, S: DiscreteOperator, Kstar: DiscreteOperator) -> float:
    """max |K S - S K*| entrywise."""
    return float(np.max(np.abs(K.matrix @ S.matrix - S.matrix @ Kstar.matrix)))


def sS_inner(curve: Curve, S: DiscreteOperator, f: np.ndarray, g: np.ndarray) -> float:
    """<f, g>_{sS} = int S[f] g dsigma."""
    return float(np.dot(curve.weights * (S.matrix @ f), g))


def sS_selfadjoint_residual(curve: Curve, S: DiscreteOperator, Kstar: DiscreteOperator, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(4):
        f, g = rng.standard_normal((2, curve.n))
        a = sS_inner(curve, S, Kstar.matrix @ f, g)
        b = sS_inner(curve, S, f, Kstar.matrix @ g)
        scale = math.sqrt(curve.inner(f, f) * curve.inner(g, g))
        worst = max(worst, abs(a - b) / scale)
    return worst


def write_density_csv(curve: Curve, columns: dict, path: str | Path) -> None:
    names = list(columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t"] + names)
        for i in range(curve.n):
            wr.writerow([repr(float(curve.t[i]))] + [repr(float(columns[k][i])) for k in names])
