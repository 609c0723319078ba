"""Command-line front end: ``np-shape <verb> [options]``.

Exit codes: 0 when every check passes, 1 on a tolerance failure (or a
numerical error while checking), 2 on a usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .geometry2d import (
    Curve,
    GeometryError,
    PerturbationField,
    build_curve,
    dilation,
    normal_field,
    rotation,
    tangential_field,
    translation,
)
from .layer2d import (
    assemble_K,
    assemble_Kstar,
    assemble_S,
    assemble_T,
    boundary_limit,
    calderon_residual,
    pv_gradient_double_layer,
    sS_selfadjoint_residual,
)
from .spectral import (
    SpectralError,
    extract_cluster,
    kellogg_violation,
    mean_zero_defect,
    solve_spectrum,
    spectrum_report,
)
from . import shapederiv as sd
from . import sphere3d

log = logging.getLogger("npshape")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

NULL_FIELDS = ("dilation", "translation", "rotation", "tangential")

DEFAULT_TOL = {
    "spectrum": 1e-8,
    "deriv-check": 1e-4,
    "identities": 1e-8,
    "pohozaev": 1e-6,
    "sphere-crit": 1e-9,
    "convergence": 1e-10,
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """All experiment knobs; every field has a default.

    curve: ``circle:r``, ``ellipse:a,b``, ``kite`` or ``star:k=a_k,...``
    (``r0=`` sets the mean radius, ``sK=`` adds a sine term).
    theta: ``dilation``, ``translation:zx,zy``, ``rotation[:omega]``,
    ``tangential[:k]``, ``normal[:bump|k]`` or ``generic``.
    """

    curve: str = "ellipse:1,0.5"
    N: int = 256
    N_list: list = field(default_factory=lambda: [32, 64, 128, 256])
    lam: float = 1.0 / 6.0
    delta: float = 0.05
    theta: str = "generic"
    steps: list = field(default_factory=lambda: [1e-3, 5e-4, 2.5e-4])
    out: str | None = None
    tol: float | None = None
    only: list | None = None
    sphere: bool = False
    kmax: int = 6
    samples: int = 20
    seed: int = 0

    # JSON spelling of fields whose Python name differs
    _aliases = {"lambda": "lam"}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in data.items():
            name = cls._aliases.get(key, key)
            if name not in names:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[name] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not isinstance(self.N, int) or self.N < 16 or self.N % 2:
            raise ConfigError(f"N: must be an even integer >= 16, got {self.N!r}")
        for n in self.N_list:
            if not isinstance(n, int) or n < 16 or n % 2:
                raise ConfigError(f"N_list: bad entry {n!r}")
        if self.delta <= 0:
            raise ConfigError("delta: must be positive")
        if not self.steps or any(s <= 0 for s in self.steps):
            raise ConfigError("steps: need positive step sizes")
        if self.kmax < 0:
            raise ConfigError("kmax: must be non-negative")
        parse_curve_spec(self.curve)
        parse_theta_spec(self.theta)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    def experiment_dict(self) -> dict:
        """Config without the output location, which does not affect results."""
        d = self.to_dict()
        d.pop("out")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.experiment_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# spec parsing


def parse_curve_spec(spec: str):
    kind, _, rest = spec.partition(":")
    kind = kind.strip()
    try:
        if kind == "circle":
            return kind, (float(rest) if rest else 1.0,), {}
        if kind == "ellipse":
            a, b = (float(v) for v in rest.split(","))
            return kind, (a, b), {}
        if kind == "kite":
            if rest:
                raise ValueError("kite takes no parameters")
            return kind, (), {}
        if kind == "star":
            cos_terms, sin_terms, r0 = {}, {}, 1.0
            for item in filter(None, rest.split(",")):
                key, _, val = item.partition("=")
                key = key.strip()
                if key == "r0":
                    r0 = float(val)
                elif key.startswith("s"):
                    sin_terms[int(key[1:])] = float(val)
                else:
                    cos_terms[int(key)] = float(val)
            return kind, (), {"r0": r0, "cos": cos_terms, "sin": sin_terms}
    except ValueError as exc:
        raise ConfigError(f"curve: cannot parse {spec!r} ({exc})") from exc
    raise ConfigError(f"curve: unknown kind {kind!r} in {spec!r}")


def make_curve(spec: str, n: int) -> Curve:
    kind, args, kw = parse_curve_spec(spec)
    try:
        return build_curve(kind, n, *args, **kw)
    except GeometryError as exc:
        raise ConfigError(f"curve: {exc}") from exc


def parse_theta_spec(spec: str):
    name, _, rest = spec.partition(":")
    if name not in NULL_FIELDS + ("normal", "generic"):
        raise ConfigError(f"theta: unknown field {name!r}")
    try:
        args = [a for a in rest.split(",") if a] if rest else []
        if name == "translation":
            vals = [float(a) for a in args] or [1.0, 0.0]
            if len(vals) != 2:
                raise ValueError("translation needs two components")
            return name, vals
        if name == "rotation":
            return name, [float(args[0]) if args else 1.0]
        if name == "tangential":
            return name, [int(args[0]) if args else 3]
        if name == "normal":
            mode = args[0] if args else "bump"
            if mode != "bump":
                int(mode)
            return name, [mode]
        return name, []
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"theta: cannot parse {spec!r} ({exc})") from exc


def make_theta(spec: str, curve: Curve) -> PerturbationField:
    name, args = parse_theta_spec(spec)
    t = curve.t
    if name == "dilation":
        return dilation(curve)
    if name == "translation":
        return translation(curve, tuple(args))
    if name == "rotation":
        return rotation(curve, args[0])
    if name == "tangential":
        return tangential_field(curve, np.cos(args[0] * t) + 0.5, f"tangential:{args[0]}")
    if name == "normal":
        if args[0] == "bump":
            return normal_field(curve, np.exp(2.0 * np.cos(t - 0.7)), "normal:bump")
        k = int(args[0])
        return normal_field(curve, np.cos(k * t), f"normal:{k}")
    vals = np.column_stack([0.3 * np.cos(2 * t) + 0.1 * np.sin(t), 0.2 * np.sin(3 * t) + 0.1 * np.cos(t)])
    return PerturbationField.from_values(vals, "generic")


# ---------------------------------------------------------------------------
# output


def _finite(obj):
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def render_json(report: dict) -> str:
    return json.dumps(_finite(report), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def emit(cfg: ExperimentConfig, verb: str, report: dict, table=None) -> None:
    report = dict(report)
    report["command"] = verb
    report["config"] = cfg.experiment_dict()
    report["config_sha256"] = cfg.digest()
    report["version"] = __version__
    text = render_json(report)
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        stem = verb.replace("-", "_")
        (out / f"{stem}.json").write_text(text, encoding="utf-8")
        if table is not None:
            (out / f"{stem}.csv").write_text(render_csv(*table), encoding="utf-8")
    else:
        sys.stdout.write(text)


def _check(name: str, value: float, tol: float) -> dict:
    ok = bool(np.isfinite(value) and value <= tol)
    return {"name": name, "value": float(value), "tol": float(tol), "pass": ok}


# ---------------------------------------------------------------------------
# commands


def cmd_spectrum(cfg: ExperimentConfig) -> tuple[int, dict, tuple]:
    curve = make_curve(cfg.curve, cfg.N)
    Ks = assemble_Kstar(curve)
    spec = solve_spectrum(Ks)
    clusters = []
    try:
        clusters.append(extract_cluster(spec, cfg.lam, cfg.delta, assemble_S(curve), curve, Ks))
    except SpectralError as exc:
        log.info("no cluster report: %s", exc)
    report = spectrum_report(curve, spec, clusters)
    tol = cfg.tol if cfg.tol is not None else DEFAULT_TOL["spectrum"]
    checks = [_check("kellogg", kellogg_violation(spec), tol)]
    report["checks"] = checks
    rows = [(i, float(v), float(spec.imag_parts[i])) for i, v in enumerate(spec.values)]
    status = EXIT_OK if all(c["pass"] for c in checks) else EXIT_FAIL
    return status, report, (["index", "eigenvalue", "imag"], rows)


def cmd_deriv_check(cfg: ExperimentConfig) -> tuple[int, dict, tuple]:
    curve = make_curve(cfg.curve, cfg.N)
    ops = sd.Operators.build(curve)
    spec = solve_spectrum(ops.Kstar)
    cluster = extract_cluster(spec, cfg.lam, cfg.delta, ops.S, curve, ops.Kstar)
    theta = make_theta(cfg.theta, curve)
    cd = sd.cluster_derivative_matrix(curve, cluster, theta, ops)
    steps = tuple(cfg.steps)
    checks, rows = [], []
    checks.append(_check("dA_symmetry", float(np.max(np.abs(cd.dA - cd.dA.T))), 1e-9))
    if parse_theta_spec(cfg.theta)[0] in NULL_FIELDS:
        tol = cfg.tol if cfg.tol is not None else 1e-7
        checks.append(_check("dA_null", float(np.max(np.abs(cd.dA))), tol))
        for h in range(1, cd.m + 1):
            rows.append((h, sd.dLambda(cd, h), 0.0, abs(sd.dLambda(cd, h))))
    else:
        tol = cfg.tol if cfg.tol is not None else DEFAULT_TOL["deriv-check"]
        for h in range(1, cd.m + 1):
            rep = sd.dLambda_fd_report(curve, cluster, theta, h, steps)
            checks.append(_check(f"dLambda_{h}", rep.discrepancy, tol))
            rows.append((h, float(rep.formula), float(rep.oracle), rep.discrepancy))
        br = sd.branch_fd_report(curve, cluster, theta, steps)
        checks.append(_check("branches", br.discrepancy, tol))
    report = {
        "curve": curve.descriptor,
        "N": curve.n,
        "cluster": cluster.summary(),
        "derivative": cd.summary(),
        "checks": checks,
    }
    status = EXIT_OK if all(c["pass"] for c in checks) else EXIT_FAIL
    return status, report, (["h", "formula", "oracle", "rel_err"], rows)


IDENTITY_NAMES = ("K1", "calderon", "sS_selfadjoint", "T_selfadjoint", "jump_D", "jump_nuS", "nablaDjump", "kellogg", "mean_zero")


def _identity_values(curve: Curve, only) -> dict:
    K = assemble_K(curve)
    S = assemble_S(curve)
    Ks = K.weighted_adjoint("Kstar")
    T = assemble_T(curve, S)
    t = curve.t
    psi = np.cos(t) + 0.3 * np.sin(3 * t)
    spec = None
    out = {}
    for name in only:
        if name == "K1":
            out[name] = (float(np.max(np.abs(K(np.ones(curve.n)) - 0.5))), 1e-10)
        elif name == "calderon":
            out[name] = (calderon_residual(K, S, Ks), 1e-8)
        elif name == "sS_selfadjoint":
            out[name] = (sS_selfadjoint_residual(curve, S, Ks), 1e-10)
        elif name == "T_selfadjoint":
            wt = curve.weights[:, None] * T.matrix
            out[name] = (float(np.max(np.abs(wt - wt.T)) / np.max(np.abs(wt))), 1e-8)
        elif name == "jump_D":
            d = boundary_limit(curve, psi, "double", "interior")
            out[name] = (float(np.max(np.abs(d - (0.5 * psi + K(psi))))), 1e-5)
        elif name == "jump_nuS":
            g = boundary_limit(curve, psi, "single", "interior", gradient=True)
            dn = np.einsum("ij,ij->i", g, curve.normal)
            out[name] = (float(np.max(np.abs(dn - (0.5 * psi - Ks(psi))))), 1e-5)
        elif name == "nablaDjump":
            g = boundary_limit(curve, psi, "double", "interior", gradient=True)
            out[name] = (float(np.max(np.abs(g - pv_gradient_double_layer(curve, psi, "interior")))), 1e-5)
        elif name in ("kellogg", "mean_zero"):
            spec = spec or solve_spectrum(Ks)
            if name == "kellogg":
                out[name] = (kellogg_violation(spec), 1e-8)
            else:
                out[name] = (mean_zero_defect(curve, spec), 1e-9)
    return out


SPHERE_IDENTITIES = ("unsold", "grad_identity", "normal_identity", "orthonormality", "laplacian_weak", "funk_hecke_S", "funk_hecke_Kstar")


def cmd_identities(cfg: ExperimentConfig) -> tuple[int, dict, tuple]:
    checks = []
    if cfg.sphere:
        rep = sphere3d.sphere_report(cfg.kmax, samples=0)
        only = cfg.only or list(SPHERE_IDENTITIES)
        bad = [o for o in only if o not in SPHERE_IDENTITIES]
        if bad:
            raise ConfigError(f"only: unknown sphere identity {bad[0]!r}")
        tol = cfg.tol if cfg.tol is not None else 1e-10
        for row in rep["degrees"]:
            for name in only:
                checks.append(_check(f"{name}[k={row['k']}]", row[name], tol))
        report = {"sphere": True, "kmax": cfg.kmax, "checks": checks}
    else:
        only = cfg.only or list(IDENTITY_NAMES)
        bad = [o for o in only if o not in IDENTITY_NAMES]
        if bad:
            raise ConfigError(f"only: unknown identity {bad[0]!r}")
        curve = make_curve(cfg.curve, cfg.N)
        for name, (val, tol) in _identity_values(curve, only).items():
            checks.append(_check(name, val, cfg.tol if cfg.tol is not None else tol))
        report = {"curve": curve.descriptor, "N": curve.n, "checks": checks}
    status = EXIT_OK if all(c["pass"] for c in checks) else EXIT_FAIL
    rows = [(c["name"], c["value"], c["tol"], "PASS" if c["pass"] else "FAIL") for c in checks]
    return status, report, (["identity", "residual", "tol", "status"], rows)


def cmd_pohozaev(cfg: ExperimentConfig) -> tuple[int, dict, tuple]:
    curve = make_curve(cfg.curve, cfg.N)
    ops = sd.Operators.build(curve)
    spec = solve_spectrum(ops.Kstar)
    tol = cfg.tol if cfg.tol is not None else DEFAULT_TOL["pohozaev"]
    checks, rows = [], []
    for target in (cfg.lam, -cfg.lam):
        try:
            cl = extract_cluster(spec, target, cfg.delta, ops.S, curve, ops.Kstar)
        except SpectralError as exc:
            log.info("skipping %g: %s", target, exc)
            continue
        rec = sd.pohozaev_lambda(curve, cl, ops)
        for j, (lam, r) in enumerate(zip(cl.lambdas, rec)):
            checks.append(_check(f"lambda[{target:+.6g}][{j}]", abs(float(r) - float(lam)), tol))
            rows.append((float(target), j, float(lam), float(r), abs(float(r) - float(lam))))
        zeta = np.array([0.6, -0.8])
        resid = sd.pohozaev_residual(curve, cl, curve.normal @ zeta, ops)
        checks.append(_check(f"translation[{target:+.6g}]", float(np.max(np.abs(resid))), 1e-7))
    if not checks:
        raise SpectralError("no cluster found near +/- lambda")
    status = EXIT_OK if all(c["pass"] for c in checks) else EXIT_FAIL
    report = {"curve": curve.descriptor, "N": curve.n, "checks": checks}
    return status, report, (["target", "index", "spectral", "recovered", "abs_err"], rows)


def cmd_sphere_crit(cfg: ExperimentConfig) -> tuple[int, dict, tuple]:
    grid = sphere3d.SphereGrid()
    rng = np.random.default_rng(cfg.seed)
    fields = [sphere3d.random_band_limited(grid, 6, rng) for _ in range(cfg.samples)]
    tol = cfg.tol if cfg.tol is not None else DEFAULT_TOL["sphere-crit"]
    checks, rows = [], []
    for k in range(1, max(cfg.kmax, 1) + 1):
        basis = sphere3d.harmonic_basis(grid, k)
        worst, offdiag = 0.0, 0.0
        for f in fields:
            mat = sphere3d.sphere_cluster_matrix(grid, basis, f)
            worst = max(worst, abs(float(np.trace(mat))) / float(np.max(np.abs(f))))
            offdiag = max(offdiag, float(np.max(np.abs(mat - np.diag(np.diag(mat))))))
        checks.append(_check(f"trace[k={k}]", worst, tol))
        rows.append((k, worst, offdiag))
    report = {"grid": [grid.n_theta, grid.n_phi], "samples": cfg.samples, "checks": checks, "max_offdiag": [r[2] for r in rows]}
    status = EXIT_OK if all(c["pass"] for c in checks) else EXIT_FAIL
    return status, report, (["k", "rel_trace", "max_offdiag"], rows)


def _ellipse_oracle(a: float, b: float, kmax: int = 8) -> list:
    q = (a - b) / (a + b)
    return [0.5] + [s * q**k / 2 for k in range(1, kmax + 1) for s in (1.0, -1.0)]


def cmd_convergence(cfg: ExperimentConfig) -> tuple[int, dict, tuple]:
    kind, args, _ = parse_curve_spec(cfg.curve)
    rows = []
    ref = None
    if kind == "ellipse":
        ref = np.array(_ellipse_oracle(*args))
    results = {}
    for n in sorted(cfg.N_list):
        curve = make_curve(cfg.curve, n)
        K = assemble_K(curve)
        S = assemble_S(curve)
        Ks = K.weighted_adjoint("Kstar")
        vals = solve_spectrum(Ks).values
        results[n] = vals
        rows.append((n, "calderon", calderon_residual(K, S, Ks)))
    finest = max(results)
    target = ref if ref is not None else results[finest][:9]
    errs = []
    for n in sorted(results):
        v = results[n]
        err = max(float(np.min(np.abs(v - x))) for x in target)
        errs.append(err)
        rows.append((n, "eigenvalue", err))
    rows.sort(key=lambda r: (r[1], r[0]))
    tol = cfg.tol if cfg.tol is not None else DEFAULT_TOL["convergence"]
    checks = [_check("finest_eigenvalue_error", errs[-1], tol)]
    mono = all(errs[i + 1] <= errs[i] or errs[i + 1] < 1e-12 for i in range(len(errs) - 1))
    checks.append({"name": "monotone", "value": float(mono), "tol": 1.0, "pass": bool(mono)})
    report = {"curve": cfg.curve, "reference": "closed form" if ref is not None else f"N={finest}", "checks": checks}
    status = EXIT_OK if all(c["pass"] for c in checks) else EXIT_FAIL
    return status, report, (["N", "quantity", "error"], rows)


COMMANDS = {
    "spectrum": cmd_spectrum,
    "deriv-check": cmd_deriv_check,
    "identities": cmd_identities,
    "pohozaev": cmd_pohozaev,
    "sphere-crit": cmd_sphere_crit,
    "convergence": cmd_convergence,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="np-shape", description="NP spectra and shape-derivative checks on smooth curves.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb in COMMANDS:
        sp = sub.add_parser(verb)
        sp.add_argument("--config", help="JSON file with ExperimentConfig fields")
        sp.add_argument("--curve")
        sp.add_argument("--N", type=int)
        sp.add_argument("--N-list", dest="N_list", type=lambda s: [int(v) for v in s.split(",")])
        sp.add_argument("--lambda", dest="lam", type=float)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--theta")
        sp.add_argument("--steps", type=lambda s: [float(v) for v in s.split(",")])
        sp.add_argument("--out")
        sp.add_argument("--tol", type=float)
        sp.add_argument("--only", type=lambda s: [v for v in s.split(",") if v])
        sp.add_argument("--sphere", action="store_true", default=None)
        sp.add_argument("--kmax", type=int)
        sp.add_argument("--samples", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(ns: argparse.Namespace) -> ExperimentConfig:
    data = {}
    if ns.config:
        try:
            data = json.loads(Path(ns.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: cannot read {ns.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
    cfg = ExperimentConfig.from_dict(data)
    overrides = {k: v for k, v in vars(ns).items() if k not in ("config", "verb", "verbose") and v is not None}
    cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    return cfg


def _thread_limit():
    val = os.environ.get("NP_SHAPE_THREADS")
    if not val:
        return None
    try:
        n = int(val)
    except ValueError as exc:
        raise ConfigError(f"NP_SHAPE_THREADS must be an integer, got {val!r}") from exc
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, n))


def main(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(ns)
        limiter = _thread_limit()
        try:
            status, report, table = COMMANDS[ns.verb](cfg)
        finally:
            if limiter is not None:
                limiter.unregister()
        emit(cfg, ns.verb, report, table)
        for c in report.get("checks", []):
            if not c["pass"]:
                print(f"FAIL {c['name']}: {c['value']:.3e} > {c['tol']:.1e}", file=sys.stderr)
        return status
    except ConfigError as exc:
        print(f"np-shape: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SpectralError, GeometryError, np.linalg.LinAlgError) as exc:
        print(f"np-shape: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
