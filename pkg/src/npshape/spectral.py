"""NP spectra, eigenvalue clusters, Riesz projectors and plasmonic checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .geometry2d import Curve
from .layer2d import DiscreteOperator, boundary_limit, sS_inner

log = logging.getLogger(__name__)

IMAG_TOL = 1e-8
CLUSTER_TOL = 1e-7


class SpectralError(RuntimeError):
    pass


@dataclass(frozen=True)
class Spectrum:
    """Eigenpairs of a discrete K*, sorted by decreasing real part."""

    values: np.ndarray
    vectors: np.ndarray
    imag_parts: np.ndarray
    flagged: tuple = ()

    def near(self, target: float, radius: float) -> np.ndarray:
        return np.flatnonzero(np.abs(self.values - target) < radius)

    def groups(self, tol: float = CLUSTER_TOL) -> list[list[int]]:
        """Indices of numerically degenerate groups, in spectrum order."""
        out: list[list[int]] = []
        for i, v in enumerate(self.values):
            if out and abs(self.values[out[-1][-1]] - v) < tol:
                out[-1].append(i)
            else:
                out.append([i])
        return out

    def near_zero(self, tol: float = 1e-10) -> int:
        return int(np.sum(np.abs(self.values) < tol))


def solve_spectrum(Kstar: DiscreteOperator) -> Spectrum:
    """Dense eigen-decomposition of A_{K*}.

    Eigenvalues whose imaginary part exceeds 1e-8 are flagged as
    discretization artifacts; the real parts are kept.
    """
    try:
        vals, vecs = scipy.linalg.eig(Kstar.matrix)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise SpectralError(f"eigensolver did not converge: {exc}") from exc
    order = np.argsort(-vals.real, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    flagged = tuple(int(i) for i in np.flatnonzero(np.abs(vals.imag) > IMAG_TOL))
    if flagged:
        log.warning("%d eigenvalues with imaginary part above %g", len(flagged), IMAG_TOL)
    # the real part of a complex eigenvector for a real eigenvalue is still
    # an eigenvector once the phase is removed
    phase = np.exp(-1j * np.angle(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(vecs.shape[1])]))
    real_vecs = np.real(vecs * phase[None, :])
    real_vecs /= np.linalg.norm(real_vecs, axis=0)[None, :]
    return Spectrum(vals.real.copy(), real_vecs, vals.imag.copy(), flagged)


def fix_phase(v: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of each column positive."""
    v = np.array(v, dtype=float)
    if v.ndim == 1:
        return v if v[np.argmax(np.abs(v))] >= 0 else -v
    signs = np.sign(v[np.argmax(np.abs(v), axis=0), np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs[None, :]


@dataclass(frozen=True)
class EigenCluster:
    lambda_bar: float
    delta: float
    m: int
    basis: np.ndarray  # shape (N, m), columns mu_j
    lambdas: np.ndarray  # ascending
    normalization: str = "sS"
    residuals: np.ndarray = field(default=None, repr=False)

    def summary(self) -> dict:
        return {
            "lambda_bar": float(self.lambda_bar),
            "m": int(self.m),
            "lambdas": [float(v) for v in self.lambdas],
            "normalization": self.normalization,
            "residuals": [float(r) for r in self.residuals],
        }


def _l2_norm(curve: Curve, f: np.ndarray) -> float:
    return float(np.sqrt(curve.inner(f, f)))


def extract_cluster(
    spectrum: Spectrum,
    lambda_target: float,
    delta: float,
    S: DiscreteOperator,
    curve: Curve,
    Kstar: DiscreteOperator | None = None,
) -> EigenCluster:
    """Eigenvalues in (lambda_target - delta, lambda_target + delta) with an sS-orthonormal basis.

    The window must not contain 0 and, unless 1/2 is targeted, must not
    contain 1/2.  An eigenvalue sitting on the window edge is reported as an
    intruder since isolation cannot then be certified.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    targeting_half = abs(lambda_target - 0.5) < delta
    if abs(lambda_target) < delta:
        raise SpectralError("cluster window contains 0, where the spectrum accumulates")
    vals = spectrum.values
    dist = np.abs(vals - lambda_target)
    inside = np.flatnonzero(dist < delta)
    edge = np.flatnonzero(np.abs(dist - delta) <= max(CLUSTER_TOL, 1e-12 * delta))
    if edge.size:
        raise SpectralError(f"eigenvalue {vals[edge[0]]:.12g} lies on the window boundary")
    if inside.size == 0:
        raise SpectralError(f"no eigenvalue within {delta:g} of {lambda_target:g}")
    if not targeting_half and np.any(np.abs(vals[inside] - 0.5) < 1e-9):
        raise SpectralError("window contains the eigenvalue 1/2")
    # all members must form one numerically coherent group
    spread = np.ptp(vals[inside])
    if spread > delta:
        raise SpectralError(f"window holds several separated eigenvalues: {np.sort(vals[inside])}")

    inside = inside[np.argsort(vals[inside], kind="stable")]
    vecs = spectrum.vectors[:, inside]
    lam = vals[inside]
    # orthonormalize in <f, g> = int S[f] g
    gram = vecs.T @ (curve.weights[:, None] * (S.matrix @ vecs))
    gram = 0.5 * (gram + gram.T)
    normalization = "sS"
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        chol = None
    if chol is None or np.min(np.diag(chol)) < 1e-10 * np.sqrt(np.max(np.abs(np.diag(gram)))):
        if not targeting_half:
            raise SpectralError("sS Gram matrix is not positive definite on the cluster")
        # 2D only: int S[1] can vanish or change sign (circle of radius 1)
        log.info("sS form degenerate on the 1/2 cluster, using L2 normalization")
        normalization = "L2"
        gram = vecs.T @ (curve.weights[:, None] * vecs)
        chol = np.linalg.cholesky(0.5 * (gram + gram.T))
    basis = np.linalg.solve(chol, vecs.T).T
    if basis.shape[1] > 1 and Kstar is not None:
        # rotate to diagonalize the restricted (sS-symmetric) operator
        r = basis.T @ (curve.weights[:, None] * (S.matrix @ (Kstar.matrix @ basis)))
        w, q = np.linalg.eigh(0.5 * (r + r.T))
        basis = basis @ q
        lam = w
    basis = fix_phase(basis)
    if Kstar is not None:
        resid = np.array(
            [np.linalg.norm(Kstar.matrix @ basis[:, j] - lam[j] * basis[:, j]) / np.linalg.norm(basis[:, j]) for j in range(basis.shape[1])]
        )
    else:
        resid = np.zeros(basis.shape[1])
    if not targeting_half:
        for j in range(basis.shape[1]):
            mean = abs(curve.integrate(basis[:, j]))
            if mean > 1e-9 * _l2_norm(curve, basis[:, j]):
                log.warning("eigenfunction %d has nonzero mean %.3g", j, mean)
    return EigenCluster(float(lambda_target), float(delta), int(basis.shape[1]), basis, np.asarray(lam), normalization, resid)


def cluster_gram(curve: Curve, S: DiscreteOperator, cluster: EigenCluster) -> np.ndarray:
    b = cluster.basis
    return b.T @ (curve.weights[:, None] * (S.matrix @ b))


def mean_zero_defect(curve: Curve, spectrum: Spectrum, skip_half: float = 1e-6) -> float:
    """max |int mu dsigma| / ||mu|| over eigenvectors whose eigenvalue is not 1/2."""
    worst = 0.0
    for j, v in enumerate(spectrum.values):
        if abs(v - 0.5) < skip_half:
            continue
        mu = spectrum.vectors[:, j]
        worst = max(worst, abs(curve.integrate(mu)) / _l2_norm(curve, mu))
    return worst


def kellogg_violation(spectrum: Spectrum) -> float:
    """Distance by which the spectrum leaves [-1/2, 1/2] (0 if inside)."""
    return float(max(0.0, np.max(np.abs(spectrum.values)) - 0.5))


# ---------------------------------------------------------------------------
# Riesz projector


@dataclass(frozen=True)
class RieszProjector:
    matrix: np.ndarray
    center: float
    radius: float
    M: int
    imag_residual: float
    quadrature_bound: float = 0.0

    def rank(self, tol: float = 1e-8) -> int:
        s = np.linalg.svd(self.matrix, compute_uv=False)
        return int(np.sum(s > tol * max(1.0, s[0])))

    def idempotency_defect(self) -> float:
        return float(np.max(np.abs(self.matrix @ self.matrix - self.matrix)))


def riesz_projector(
    Kstar: DiscreteOperator,
    center: float,
    radius: float,
    M: int = 32,
    spectrum: Spectrum | None = None,
    rcond_min: float = 1e-13,
) -> RieszProjector:
    """Trapezoid rule for -(1/2 pi i) oint (A - xi)^{-1} dxi on a circle."""
    A = Kstar.matrix
    n = A.shape[0]
    vals = spectrum.values if spectrum is not None else np.linalg.eigvals(A)
    margin = np.min(np.abs(np.abs(vals - center) - radius))
    if margin < radius / 10.0:
        raise SpectralError(f"contour passes within {margin:.3g} of the spectrum (need >= {radius / 10:.3g})")
    # trapezoid error on the circle decays like rho^M, rho the worst ratio of
    # eigenvalue distance to radius (inside) or radius to distance (outside)
    d = np.abs(vals - center)
    rho = float(np.max(np.where(d < radius, d / radius, radius / d)))
    bound = rho**M
    if bound > 1e-10:
        log.warning("contour quadrature with M=%d is under-resolved (rho^M = %.1e)", M, bound)
    eye = np.eye(n)
    acc = np.zeros((n, n), dtype=complex)
    anorm = np.linalg.norm(A, 1) + abs(center) + radius
    for k in range(M):
        e = np.exp(2j * np.pi * k / M)
        xi = center + radius * e
        lu, piv, info = scipy.linalg.lapack.zgetrf(A - xi * eye)
        if info != 0:
            raise SpectralError(f"singular resolvent at contour node {k}")
        rcond, _ = scipy.linalg.lapack.zgecon(lu, anorm, norm="1")
        if rcond < rcond_min:
            raise SpectralError(f"resolvent nearly singular at xi={xi:.6g} (rcond={rcond:.2e})")
        res, _ = scipy.linalg.lapack.zgetrs(lu, piv, eye.astype(complex))
        acc += e * res
    P = -(radius / M) * acc
    imag = float(np.max(np.abs(P.imag)))
    if imag > 1e-10:
        log.warning("projector has imaginary part %.2e", imag)
    return RieszProjector(P.real.copy(), float(center), float(radius), int(M), imag, bound)


# ---------------------------------------------------------------------------
# plasmonic correspondence


def plasmonic_eps(lam: float) -> float:
    """Permittivity ratio (1/2 + lam)/(1/2 - lam)."""
    if lam == 0.5:
        raise ZeroDivisionError("lambda = 1/2 has no plasmonic permittivity")
    return (0.5 + lam) / (0.5 - lam)


def verify_plasmonic(curve: Curve, cluster: EigenCluster, nodes=None) -> dict:
    """Transmission residuals for u = S+[mu], v = S-[mu] at sample nodes.

    Returns the max over basis functions of |u - v| and |eps du/dnu + dv/dnu|,
    both relative to max |mu|.
    """
    if abs(cluster.lambda_bar - 0.5) < 1e-12:
        raise ValueError("the plasmonic problem is not defined for lambda = 1/2")
    idx = np.arange(0, curve.n, max(1, curve.n // 32)) if nodes is None else np.asarray(nodes)
    jump = 0.0
    flux = 0.0
    for j in range(cluster.m):
        mu = cluster.basis[:, j]
        eps = plasmonic_eps(float(cluster.lambdas[j]))
        scale = np.max(np.abs(mu))
        u = boundary_limit(curve, mu, "single", "interior", nodes=idx)
        v = boundary_limit(curve, mu, "single", "exterior", nodes=idx)
        gu = boundary_limit(curve, mu, "single", "interior", gradient=True, nodes=idx)
        gv = boundary_limit(curve, mu, "single", "exterior", gradient=True, nodes=idx)
        nu = curve.normal[idx]
        du = np.einsum("ij,ij->i", gu, nu)
        dv = np.einsum("ij,ij->i", gv, nu)
        jump = max(jump, float(np.max(np.abs(u - v)) / scale))
        flux = max(flux, float(np.max(np.abs(eps * du + dv)) / scale))
    return {"trace_jump": jump, "flux_residual": flux, "nodes": int(len(idx))}


def spectrum_report(curve: Curve, spectrum: Spectrum, clusters=()) -> dict:
    return {
        "curve": curve.descriptor,
        "N": int(curve.n),
        "eigenvalues": [float(v) for v in spectrum.values],
        "flagged_complex": list(spectrum.flagged),
        "near_zero_count": spectrum.near_zero(),
        "clusters": [c.summary() for c in clusters],
    }


__all__ = [
    "EigenCluster",
    "RieszProjector",
    "Spectrum",
    "SpectralError",
    "cluster_gram",
    "extract_cluster",
    "kellogg_violation",
    "mean_zero_defect",
    "plasmonic_eps",
    "riesz_projector",
    "solve_spectrum",
    "spectrum_report",
    "verify_plasmonic",
    "sS_inner",
]
