"""Shape derivatives of NP eigenvalue clusters and their finite-difference oracles.

Every formula here is evaluated on the reference curve using boundary data
only.  Oracles re-assemble the operators on perturb(curve, theta, t), which
keeps the parameter grid fixed and therefore realizes the pulled-back
operators directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry2d import Curve, PerturbationField, arclength_derivative, perturb
from .layer2d import (
    TWO_PI,
    DiscreteOperator,
    _pair_differences,
    assemble_K,
    assemble_Kstar,
    assemble_S,
    assemble_T,
    pv_trapezoid,
)
from .spectral import EigenCluster, SpectralError, cluster_gram, solve_spectrum

DEFAULT_STEPS = (1e-3, 5e-4, 2.5e-4)


@dataclass
class Operators:
    """The four boundary operators on one curve, assembled once."""

    curve: Curve
    K: DiscreteOperator
    Kstar: DiscreteOperator
    S: DiscreteOperator
    T: DiscreteOperator

    @classmethod
    def build(cls, curve: Curve) -> "Operators":
        K = assemble_K(curve)
        S = assemble_S(curve)
        return cls(curve, K, K.weighted_adjoint("Kstar"), S, assemble_T(curve, S))


# ---------------------------------------------------------------------------
# operator derivative


def pv_tangent_term(curve: Curve, theta: PerturbationField, eta: np.ndarray) -> np.ndarray:
    """pv int (theta.nu)(y) grad_T eta(y) . grad E(x - y) dsigma_y."""
    z, r2 = _pair_differences(curve)
    tn = theta.normal_component(curve)
    eta_s = arclength_derivative(curve, eta)
    # grad E(x - y) = -(1/2pi) (x - y)/|x - y|^2, dotted with tau(y)
    zt = np.einsum("ijk,jk->ij", z, curve.tangent)
    vals = -(zt / r2) / TWO_PI * (tn * eta_s * curve.speed)[None, :]
    return pv_trapezoid(vals, curve.h)


def dK_operator(curve: Curve, theta: PerturbationField, eta: np.ndarray, ops: Operators | None = None) -> np.ndarray:
    """d/dt K_{I+t theta}[eta] at t = 0, as a density on the nodes."""
    ops = ops or Operators.build(curve)
    eta = np.asarray(eta, dtype=float)
    tn = theta.normal_component(curve)
    ttan = np.einsum("ij,ij->i", theta.values, curve.tangent)
    eta_s = arclength_derivative(curve, eta)
    term1 = pv_tangent_term(curve, theta, eta)
    term2 = tn * (ops.T.matrix @ eta)
    term3 = ttan * arclength_derivative(curve, ops.K.matrix @ eta)
    term4 = -(ops.K.matrix @ (ttan * eta_s))
    return term1 + term2 + term3 + term4


# ---------------------------------------------------------------------------
# finite-difference oracles


def richardson(steps, values, power: int = 2) -> np.ndarray:
    """Neville extrapolation to step 0 assuming an expansion in step**power."""
    x = np.asarray(steps, dtype=float) ** power
    table = [np.asarray(v, dtype=float) for v in values]
    n = len(table)
    for level in range(1, n):
        table = [
            (x[i + level] * table[i] - x[i] * table[i + 1]) / (x[i + level] - x[i]) for i in range(n - level)
        ]
    return table[0]


@dataclass
class DerivativeReport:
    quantity: str
    theta: str
    formula: np.ndarray
    steps: tuple
    oracle_values: list
    oracle: np.ndarray
    discrepancy: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def plain(a):
            return np.asarray(a, dtype=float).tolist()

        return {
            "quantity": self.quantity,
            "theta": self.theta,
            "formula": plain(self.formula),
            "steps": list(self.steps),
            "oracle_values": [plain(v) for v in self.oracle_values],
            "oracle": plain(self.oracle),
            "discrepancy": float(self.discrepancy),
            "extra": self.extra,
        }


def _relative(formula, oracle, floor: float = 0.0) -> float:
    f = np.asarray(formula, dtype=float)
    o = np.asarray(oracle, dtype=float)
    scale = max(float(np.max(np.abs(o))), floor)
    err = float(np.max(np.abs(f - o)))
    return err / scale if scale > 0 else err


def central_fd(func, steps=DEFAULT_STEPS):
    """Central differences of func(t) for each step, plus their extrapolation."""
    vals = [(np.asarray(func(h)) - np.asarray(func(-h))) / (2.0 * h) for h in steps]
    return vals, richardson(steps, vals, 2)


def dK_fd_report(curve: Curve, theta: PerturbationField, eta: np.ndarray, steps=DEFAULT_STEPS) -> DerivativeReport:
    formula = dK_operator(curve, theta, eta)

    def k_at(t):
        return assemble_K(perturb(curve, theta, t)).matrix @ eta

    vals, oracle = central_fd(k_at, steps)
    return DerivativeReport("dK", theta.descriptor, formula, tuple(steps), vals, oracle, _relative(formula, oracle))


# ---------------------------------------------------------------------------
# cluster derivative


@dataclass(frozen=True)
class ClusterDerivative:
    dA: np.ndarray
    lam: float
    m: int
    theta: str
    dLambda_h: tuple
    branch_derivs: np.ndarray
    dnu_route_gap: float = 0.0

    def summary(self) -> dict:
        return {
            "lambda": self.lam,
            "m": self.m,
            "theta": self.theta,
            "dA": self.dA.tolist(),
            "dLambda": list(self.dLambda_h),
            "branch_derivatives": self.branch_derivs.tolist(),
            "dnu_route_gap": self.dnu_route_gap,
        }


def symmetric_function(h: int, values) -> float:
    """Elementary symmetric polynomial of degree h, by the product recurrence."""
    vals = list(values)
    m = len(vals)
    if not 1 <= h <= m:
        raise ValueError(f"h must lie in 1..{m}, got {h}")
    e = [1.0] + [0.0] * m
    for v in vals:
        for k in range(m, 0, -1):
            e[k] += v * e[k - 1]
    return e[h]


def boundary_fields(ops: Operators, cluster: EigenCluster):
    """u_j traces: tangential derivative du/ds and both routes for du/dnu."""
    c = ops.curve
    b = cluster.basis
    u = ops.S.matrix @ b
    u_s = arclength_derivative(c, u)
    dnu_jump = 0.5 * b - ops.Kstar.matrix @ b
    dnu_eig = (0.5 - cluster.lambdas)[None, :] * b
    return u, u_s, dnu_jump, dnu_eig


def _renormalized(ops: Operators, cluster: EigenCluster) -> EigenCluster:
    gram = cluster_gram(ops.curve, ops.S, cluster)
    if np.max(np.abs(gram - np.eye(cluster.m))) <= 1e-10:
        return cluster
    chol = np.linalg.cholesky(0.5 * (gram + gram.T))
    basis = np.linalg.solve(chol, cluster.basis.T).T
    return EigenCluster(cluster.lambda_bar, cluster.delta, cluster.m, basis, cluster.lambdas, cluster.normalization, cluster.residuals)


def cluster_derivative_matrix(
    curve: Curve, cluster: EigenCluster, theta: PerturbationField, ops: Operators | None = None
) -> ClusterDerivative:
    """The m x m matrix int (theta.nu)(-grad_T u_i . grad_T u_j + eps du_i/dnu du_j/dnu)."""
    lam = float(np.mean(cluster.lambdas))
    if abs(lam - 0.5) < 1e-9:
        # 1/2 is simple with constant eigenfunction for every shape
        z = np.zeros((1, 1))
        return ClusterDerivative(z, 0.5, 1, theta.descriptor, (0.0,), np.zeros(1))
    if abs(lam) < 1e-9:
        raise SpectralError("the derivative formula is not available at lambda = 0")
    ops = ops or Operators.build(curve)
    cluster = _renormalized(ops, cluster)
    eps = (0.5 + lam) / (0.5 - lam)
    _, u_s, dnu, dnu_eig = boundary_fields(ops, cluster)
    gap = float(np.max(np.abs(dnu - dnu_eig)) / np.max(np.abs(dnu_eig)))
    tn = theta.normal_component(curve)
    w = curve.weights * tn
    dA = -(u_s.T @ (w[:, None] * u_s)) + eps * (dnu.T @ (w[:, None] * dnu))
    m = cluster.m
    tr = float(np.trace(dA))
    dlh = tuple(lam ** (h - 1) * math.comb(m - 1, h - 1) * tr for h in range(1, m + 1))
    return ClusterDerivative(dA, lam, m, theta.descriptor, dlh, branch_derivatives_of(dA), gap)


def branch_derivatives_of(dA: np.ndarray) -> np.ndarray:
    return np.sort(np.linalg.eigvalsh(0.5 * (dA + dA.T)))


def branch_derivatives(cd: ClusterDerivative) -> np.ndarray:
    return branch_derivatives_of(cd.dA)


def dLambda(cd: ClusterDerivative, h: int) -> float:
    """lambda^{h-1} C(m-1, h-1) trace(dA)."""
    if not 1 <= h <= cd.m:
        raise ValueError(f"h must lie in 1..{cd.m}, got {h}")
    return cd.lam ** (h - 1) * math.comb(cd.m - 1, h - 1) * float(np.trace(cd.dA))


def cluster_eigenvalues(curve: Curve, center: float, delta: float, m: int) -> np.ndarray:
    """Sorted eigenvalues of K* on curve inside the window; must be exactly m of them."""
    vals = solve_spectrum(assemble_Kstar(curve)).values
    sel = np.sort(vals[np.abs(vals - center) < delta])
    if sel.size != m:
        raise SpectralError(f"expected {m} eigenvalues near {center:g}, found {sel.size}")
    return sel


def dLambda_fd_report(
    curve: Curve, cluster: EigenCluster, theta: PerturbationField, h: int = 1, steps=DEFAULT_STEPS
) -> DerivativeReport:
    cd = cluster_derivative_matrix(curve, cluster, theta)
    formula = dLambda(cd, h)

    def lam_h(t):
        ev = cluster_eigenvalues(perturb(curve, theta, t), cluster.lambda_bar, cluster.delta, cluster.m)
        return symmetric_function(h, ev)

    vals, oracle = central_fd(lam_h, steps)
    scale = max(abs(float(oracle)), 1e-12)
    return DerivativeReport(
        f"dLambda_{h}", theta.descriptor, np.array(formula), tuple(steps), vals, oracle, abs(formula - float(oracle)) / scale
    )


def branch_fd_report(
    curve: Curve, cluster: EigenCluster, theta: PerturbationField, steps=DEFAULT_STEPS
) -> DerivativeReport:
    """One-sided FD of sorted branches, extrapolated in powers of t.

    With two steps t, t/2 this is the usual 2 D(t/2) - D(t); the default
    third step removes the O(t^2) term as well, which matters for strongly
    localized fields.
    """
    cd = cluster_derivative_matrix(curve, cluster, theta)
    base = cluster_eigenvalues(curve, cluster.lambda_bar, cluster.delta, cluster.m)
    vals = []
    for t in steps:
        ev = cluster_eigenvalues(perturb(curve, theta, t), cluster.lambda_bar, cluster.delta, cluster.m)
        vals.append(np.sort((ev - base) / t))
    oracle = richardson(steps, vals, 1)
    formula = cd.branch_derivs
    return DerivativeReport(
        "branches", theta.descriptor, formula, tuple(steps), vals, oracle, _relative(formula, oracle, 1e-12)
    )


# ---------------------------------------------------------------------------
# identities from the derivative chain


def tangential_energy_residual(ops: Operators, cluster: EigenCluster, theta: PerturbationField) -> float:
    """int pvterm[S mu_i] mu_j against -int (theta.nu) grad_T u_i . grad_T u_j, max relative gap."""
    c = ops.curve
    _, u_s, _, _ = boundary_fields(ops, cluster)
    tn = theta.normal_component(c)
    rhs = -(u_s.T @ ((c.weights * tn)[:, None] * u_s))
    lhs = np.empty_like(rhs)
    for i in range(cluster.m):
        term = pv_tangent_term(c, theta, ops.S.matrix @ cluster.basis[:, i])
        lhs[i] = (c.weights * term) @ cluster.basis
    return float(np.max(np.abs(lhs - rhs)) / max(np.max(np.abs(rhs)), 1e-300))


def normal_energy_residual(ops: Operators, cluster: EigenCluster, theta: PerturbationField) -> float:
    """<(theta.nu) mu_j, T S mu_i> against eps int (theta.nu) du_i/dnu du_j/dnu."""
    c = ops.curve
    lam = float(np.mean(cluster.lambdas))
    eps = (0.5 + lam) / (0.5 - lam)
    _, _, dnu, _ = boundary_fields(ops, cluster)
    tn = theta.normal_component(c)
    b = cluster.basis
    lhs = (ops.T.matrix @ (ops.S.matrix @ b)).T @ ((c.weights * tn)[:, None] * b)
    rhs = eps * (dnu.T @ ((c.weights * tn)[:, None] * dnu))
    return float(np.max(np.abs(lhs - rhs)) / max(np.max(np.abs(rhs)), 1e-300))


def switcheroo_check(
    curve: Curve, cluster: EigenCluster, theta: PerturbationField, steps=DEFAULT_STEPS, ops: Operators | None = None
) -> DerivativeReport:
    """int S[mu_i] (dK*[mu_j]) against int dK[S mu_i] mu_j, all (i, j)."""
    ops = ops or Operators.build(curve)
    b = cluster.basis
    u = ops.S.matrix @ b
    w = curve.weights
    rhs = np.array([[float((w * dK_operator(curve, theta, u[:, i], ops)) @ b[:, j]) for j in range(cluster.m)] for i in range(cluster.m)])

    def kstar_at(t):
        return assemble_Kstar(perturb(curve, theta, t)).matrix @ b

    vals, dks = central_fd(kstar_at, steps)
    lhs = u.T @ (w[:, None] * dks)
    return DerivativeReport(
        "switcheroo", theta.descriptor, rhs, tuple(steps), [u.T @ (w[:, None] * v) for v in vals], lhs, _relative(rhs, lhs, 1e-12)
    )


# ---------------------------------------------------------------------------
# Rellich-Pohozaev


def _energy_parts(ops: Operators, cluster: EigenCluster, weight: np.ndarray):
    c = ops.curve
    _, u_s, dnu, _ = boundary_fields(ops, cluster)
    w = c.weights * weight
    tang = (u_s**2).T @ w
    norm = (dnu**2).T @ w
    return tang, norm


def pohozaev_lambda(curve: Curve, cluster: EigenCluster, ops: Operators | None = None) -> np.ndarray:
    """Recover each eigenvalue from dilation invariance: lam = (A - B)/(2(A + B))."""
    if abs(float(np.mean(cluster.lambdas)) - 0.5) < 1e-9:
        raise ValueError("the identity carries no information at lambda = 1/2")
    xn = np.einsum("ij,ij->i", curve.nodes, curve.normal)
    if np.any(xn <= 0):
        raise ValueError("curve is not star-shaped with respect to the origin")
    ops = ops or Operators.build(curve)
    a, b = _energy_parts(ops, cluster, xn)
    den = a + b
    if np.any(np.abs(den) < 1e-12):
        raise ValueError("denominator vanishes")
    return 0.5 * (a - b) / den


def pohozaev_residual(curve: Curve, cluster: EigenCluster, weight: np.ndarray, ops: Operators | None = None) -> np.ndarray:
    """int w (-|grad_T u|^2 + eps (du/dnu)^2), relative to int |w| |grad u|^2."""
    ops = ops or Operators.build(curve)
    lam = cluster.lambdas
    eps = (0.5 + lam) / (0.5 - lam)
    a, b = _energy_parts(ops, cluster, weight)
    sa, sb = _energy_parts(ops, cluster, np.abs(weight))
    return (-a + eps * b) / (sa + sb)
