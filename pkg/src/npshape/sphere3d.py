"""NP eigenvalues and spherical-harmonic identities on the unit sphere.

Everything here works with closed-form eigenfunctions (real spherical
harmonics), so only smooth quadrature is needed: Gauss-Legendre in cos(theta)
times the trapezoid rule in the azimuth.  The one genuinely singular
integral, the single layer of a harmonic, is reduced to a 1D Legendre
integral by the Funk-Hecke formula.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import integrate, special

FOUR_PI = 4.0 * np.pi


def np_eigenvalue(n: int, k: int) -> Fraction:
    """(n - 2) / (2 (2k + n - 2)), exactly."""
    if n < 3:
        raise ValueError("sphere eigenvalues are only meaningful for n >= 3")
    if k < 0:
        raise ValueError("degree must be non-negative")
    return Fraction(n - 2, 2 * (2 * k + n - 2))


def multiplicity(n: int, k: int) -> int:
    """dim of degree-k spherical harmonics on S^{n-1}."""
    if n < 3:
        raise ValueError("n must be at least 3")
    if k < 0:
        raise ValueError("degree must be non-negative")
    if k == 0:
        return 1
    if k == 1:
        return n
    return math.comb(k + n - 1, n - 1) - math.comb(k + n - 3, n - 1)


def surface_measure(n: int) -> float:
    """omega_n = 2 pi^{n/2} / Gamma(n/2)."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


@dataclass(frozen=True)
class SphereGrid:
    n_theta: int = 64
    n_phi: int = 128
    theta: np.ndarray = field(init=False, repr=False)
    phi: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x, wx = np.polynomial.legendre.leggauss(self.n_theta)
        phi = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi
        th, ph = np.meshgrid(np.arccos(x), phi, indexing="ij")
        w = np.outer(wx, np.full(self.n_phi, 2.0 * np.pi / self.n_phi))
        for name, val in (("theta", th.ravel()), ("phi", ph.ravel()), ("weights", w.ravel())):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def size(self) -> int:
        return self.theta.size

    @property
    def points(self) -> np.ndarray:
        s = np.sin(self.theta)
        return np.column_stack([s * np.cos(self.phi), s * np.sin(self.phi), np.cos(self.theta)])

    def integrate(self, f: np.ndarray) -> float:
        return float(np.dot(self.weights, f))

    def to_csv(self, path: str | Path, value: np.ndarray) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["theta_polar", "phi_azimuth", "weight", "value"])
            for row in zip(self.theta, self.phi, self.weights, value):
                wr.writerow([repr(float(v)) for v in row])


def normalized_legendre(lmax: int, theta: np.ndarray):
    """Orthonormal associated Legendre functions Pbar[l][m] and d/dtheta.

    Normalized so that Pbar_l^m(cos theta) cos(m phi) * sqrt(2) (m > 0) is
    unit in L^2(S^2); no Condon-Shortley phase.  Computed by the standard
    three-term recurrences, which stay well scaled for the degrees used here.
    """
    x = np.cos(theta)
    s = np.sin(theta)
    P = [[None] * (lmax + 1) for _ in range(lmax + 1)]
    P[0][0] = np.full_like(x, 1.0 / math.sqrt(FOUR_PI))
    for m in range(1, lmax + 1):
        P[m][m] = math.sqrt((2 * m + 1) / (2 * m)) * s * P[m - 1][m - 1]
    for m in range(0, lmax):
        P[m + 1][m] = math.sqrt(2 * m + 3) * x * P[m][m]
    for m in range(0, lmax + 1):
        for l in range(m + 2, lmax + 1):
            a = math.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = math.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            P[l][m] = a * (x * P[l - 1][m] - b * P[l - 2][m])
    dP = [[None] * (lmax + 1) for _ in range(lmax + 1)]
    for l in range(lmax + 1):
        for m in range(l + 1):
            prev = P[l - 1][m] if l - 1 >= m else 0.0
            c = math.sqrt((2 * l + 1) * (l * l - m * m) / (2 * l - 1)) if l > 0 else 0.0
            dP[l][m] = (l * x * P[l][m] - c * prev) / s
    return P, dP


@dataclass(frozen=True)
class HarmonicBasis:
    """Real orthonormal degree-k harmonics at the grid nodes.

    Rows of Y are Y_{k,i}; grad holds the tangential gradient in the
    (e_theta, e_phi) frame, shape (d_k, npts, 2).
    """

    k: int
    Y: np.ndarray
    grad: np.ndarray

    @property
    def d(self) -> int:
        return self.Y.shape[0]

    def normal_derivative_solid(self) -> np.ndarray:
        """nu . grad P_{k,i} on the unit sphere, with P = |x|^k Y."""
        return self.k * self.Y


def harmonic_basis(grid: SphereGrid, k: int) -> HarmonicBasis:
    P, dP = normalized_legendre(k, grid.theta)
    s = np.sin(grid.theta)
    rows, grads = [], []
    rows.append(P[k][0])
    grads.append(np.stack([dP[k][0], np.zeros_like(s)], axis=-1))
    r2 = math.sqrt(2.0)
    for m in range(1, k + 1):
        c, sn = np.cos(m * grid.phi), np.sin(m * grid.phi)
        rows.append(r2 * P[k][m] * c)
        grads.append(np.stack([r2 * dP[k][m] * c, -r2 * m * P[k][m] * sn / s], axis=-1))
        rows.append(r2 * P[k][m] * sn)
        grads.append(np.stack([r2 * dP[k][m] * sn, r2 * m * P[k][m] * c / s], axis=-1))
    return HarmonicBasis(k, np.array(rows), np.array(grads))


def gram_matrix(grid: SphereGrid, basis: HarmonicBasis) -> np.ndarray:
    return (basis.Y * grid.weights) @ basis.Y.T


def dirichlet_gram(grid: SphereGrid, basis: HarmonicBasis) -> np.ndarray:
    """<grad_S Y_i, grad_S Y_j>; equals k(k+1) I by integrating Delta_S by parts."""
    g = basis.grad
    return np.einsum("ipc,jpc,p->ij", g, g, grid.weights)


def unsold_check(grid: SphereGrid, basis: HarmonicBasis) -> float:
    """sup |sum_i Y_i^2 - d_k / (4 pi)|."""
    return float(np.max(np.abs(np.sum(basis.Y**2, axis=0) - basis.d / FOUR_PI)))


def gradient_identities(grid: SphereGrid, basis: HarmonicBasis) -> tuple[float, float]:
    """Pointwise residuals of sum |grad_S Y|^2 = k(k+1) sum Y^2 and sum (nu.grad P)^2 = k^2 sum Y^2."""
    k = basis.k
    ysq = np.sum(basis.Y**2, axis=0)
    gsq = np.sum(basis.grad**2, axis=(0, 2))
    nsq = np.sum(basis.normal_derivative_solid() ** 2, axis=0)
    return float(np.max(np.abs(gsq - k * (k + 1) * ysq))), float(np.max(np.abs(nsq - k * k * ysq)))


def sphere_cluster_matrix(grid: SphereGrid, basis: HarmonicBasis, theta_nu: np.ndarray) -> np.ndarray:
    """d_k x d_k matrix int (theta.nu)(-grad Y_i . grad Y_j + eps nu.grad P_i nu.grad P_j)."""
    k = basis.k
    if k == 0:
        return np.zeros((1, 1))
    lam = np_eigenvalue(3, k)
    eps = float((Fraction(1, 2) + lam) / (Fraction(1, 2) - lam))
    w = grid.weights * theta_nu
    g = basis.grad
    dn = basis.normal_derivative_solid()
    return -np.einsum("ipc,jpc,p->ij", g, g, w) + eps * (dn * w) @ dn.T


def sphere_cluster_derivative(grid: SphereGrid, k: int, theta_nu: np.ndarray) -> float:
    """Trace of the cluster matrix, i.e. the derivative of Lambda_1^{d_k}."""
    return float(np.trace(sphere_cluster_matrix(grid, harmonic_basis(grid, k), theta_nu)))


def random_band_limited(grid: SphereGrid, lmax: int, rng: np.random.Generator) -> np.ndarray:
    """Random real combination of harmonics of degree <= lmax."""
    out = np.zeros(grid.size)
    for l in range(lmax + 1):
        b = harmonic_basis(grid, l)
        out += rng.standard_normal(b.d) @ b.Y
    return out


def _legendre_moment(k: int, func) -> float:
    """int_{-1}^{1} func(t) P_k(t) (1 - t)^{-1/2} dt by weighted adaptive quadrature."""
    val, _ = integrate.quad(
        lambda t: func(t) * special.eval_legendre(k, t), -1.0, 1.0, weight="alg", wvar=(0.0, -0.5), epsabs=1e-14, epsrel=1e-14, limit=200
    )
    return val


def single_layer_factor(k: int) -> float:
    """S[Y_k] = c_k Y_k on the unit sphere, from the kernel 1/(4 pi |x - y|).

    |x - y| = sqrt(2 - 2t) with t = x.y, and Funk-Hecke gives
    c_k = 2 pi int P_k(t) / (4 pi sqrt(2 - 2t)) dt.
    """
    return 0.5 * _legendre_moment(k, lambda t: 1.0 / math.sqrt(2.0))


def kstar_factor(k: int) -> float:
    """K*[Y_k] = c_k Y_k from the kernel x.(x - y) / (4 pi |x - y|^3)."""
    # x.(x - y) = 1 - t and |x - y|^3 = (2 - 2t)^{3/2}; one (1 - t)^{-1/2} is the weight
    return 2.0 * np.pi * _legendre_moment(k, lambda t: 1.0 / (4.0 * np.pi * 2.0 ** 1.5))


def funk_hecke_single_layer(k: int) -> float:
    """|S[(2k+1) Y_k] / Y_k - 1|."""
    return abs((2 * k + 1) * single_layer_factor(k) - 1.0)


def funk_hecke_kstar(k: int) -> float:
    """|K* factor - lambda_k| for n = 3."""
    return abs(kstar_factor(k) - float(np_eigenvalue(3, k)))


def sphere_report(kmax: int = 6, grid: SphereGrid | None = None, samples: int = 20, seed: int = 0) -> dict:
    grid = grid or SphereGrid()
    rng = np.random.default_rng(seed)
    rows = []
    fields = [random_band_limited(grid, 6, rng) for _ in range(samples)]
    for k in range(kmax + 1):
        b = harmonic_basis(grid, k)
        gi = gradient_identities(grid, b)
        crit = 0.0
        if k >= 1 and fields:
            mat_vals = [abs(np.trace(sphere_cluster_matrix(grid, b, f))) / np.max(np.abs(f)) for f in fields]
            crit = float(max(mat_vals))
        rows.append(
            {
                "k": k,
                "lambda": str(np_eigenvalue(3, k)),
                "d_k": multiplicity(3, k),
                "unsold": unsold_check(grid, b),
                "grad_identity": gi[0],
                "normal_identity": gi[1],
                "orthonormality": float(np.max(np.abs(gram_matrix(grid, b) - np.eye(b.d)))),
                "laplacian_weak": float(np.max(np.abs(dirichlet_gram(grid, b) - k * (k + 1) * np.eye(b.d)))),
                "funk_hecke_S": funk_hecke_single_layer(k),
                "funk_hecke_Kstar": funk_hecke_kstar(k),
                "criticality": crit,
            }
        )
    return {"grid": [grid.n_theta, grid.n_phi], "samples": samples, "degrees": rows}
