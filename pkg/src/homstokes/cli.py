"""Command-line driver: ``homstokes <subcommand> --config <path> [--out <dir>]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 invariant violation.
The thread count in ``[solver]`` is overridden by the HOMSTOKES_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import math
import os
import re
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .correctors import corrector_set, flux_identity_errors
from .errors import ConfigError, ConsistencyError, HomStokesError
from .fields.expressions import parse_expression, parse_vector_expression
from .fields.geometry import HalfSpaceGeometry
from .fields.gridio import format_grid_field
from .fields.periodic import BoundaryData, EllipticTensorField, GridSpec, PeriodicField, check_ellipticity
from .halfspace.layer import (compare_tails, extract_tail, gradient_decay_check, profile_csv,
                              solve_boundary_layer, to_cylinder)
from .halfspace.sem import SpectralElementMesh, uniform_mesh
from .tail_formula import compute_tail_formula
from .verify import (Box, bump_force, convergence_study, dns_effective_tensor, green_box, green_sample,
                     verify_green_decay, verify_green_homogenization)

SUBCOMMANDS = ("cell", "bl", "tail", "verify-homog", "verify-green", "report")
THREADS_ENV = "HOMSTOKES_THREADS"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INVARIANT = 0, 2, 3, 4


# value parsers -------------------------------------------------------------------------------
_SQRT = re.compile(r"^(-?)sqrt\(\s*([0-9.]+)\s*\)$")


def _number(text: str) -> float:
    t = text.strip()
    m = _SQRT.match(t)
    if m:
        return (-1.0 if m.group(1) else 1.0) * math.sqrt(float(m.group(2)))
    try:
        return float(Fraction(t))
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"not a number: '{t}'") from None


def _integer(text: str) -> int:
    t = text.strip()
    if not re.fullmatch(r"[+-]?\d+", t):
        raise ValueError(f"not an integer: '{t}'")
    return int(t)


def _numbers(text: str) -> tuple[float, ...]:
    t = text.strip()
    return tuple(_number(p) for p in t.split(",")) if t else ()


def _boolean(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: '{text.strip()}'")


def _words(text: str) -> tuple[str, ...]:
    return tuple(w.strip() for w in text.split(",") if w.strip())


def _text(text: str) -> str:
    return text.strip()


def _bounded(parse: Callable[[str], Any], lo: float | None = None, hi: float | None = None) -> Callable[[str], Any]:
    def inner(text: str):
        v = parse(text)
        for x in (v if isinstance(v, tuple) else (v,)):
            if lo is not None and x < lo:
                raise ValueError(f"value {x!r} is below the minimum {lo!r}")
            if hi is not None and x > hi:
                raise ValueError(f"value {x!r} exceeds the maximum {hi!r}")
        return v
    return inner


_positive = _bounded(_number, lo=np.finfo(float).tiny)

SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "problem": {
        "dim": (_bounded(_integer, 2, 3), None),
        "coefficient": (_text, "1"),
        "coefficient_entries": (_text, ""),
        "boundary_data": (_text, ""),
    },
    "geometry": {
        "normal": (_numbers, ()),
        "offset": (_number, 0.0),
        "truncation": (_bounded(_number, lo=2.5), 8.0),
        "shifts": (_numbers, ()),
        "scan_radius": (_bounded(_integer, lo=10), 10),
    },
    "grid": {
        "points_per_axis": (_bounded(_integer, 8, 256), 32),
        "lateral_points_per_unit": (_bounded(_integer, 4, 128), 16),
    },
    "solver": {
        "tol": (_bounded(_number, 1e-12, 1e-4), 1e-10),
        "max_iterations": (_bounded(_integer, 1, 100000), 400),
        "threads": (_bounded(_integer, lo=1), 1),
    },
    "output": {
        "directory": (_text, "out"),
        "formats": (_words, ("csv", "grid", "report")),
    },
    "verify": {
        "seed": (_integer, 42),
        "epsilons": (_bounded(_numbers, lo=1e-6, hi=1.0), (1 / 8, 1 / 16, 1 / 32)),
        "dns_epsilons": (_bounded(_numbers, lo=1e-6, hi=1.0), (1 / 8, 1 / 16)),
        "width": (_bounded(_number, lo=4.0), 4.0),
        "height": (_bounded(_number, lo=4.0), 4.0),
        "normal_axis": (_bounded(_integer, 1, 3), None),
        "boundary": (_text, "zero"),
        "include_boundary_layer": (_boolean, True),
        "force_center": (_numbers, ()),
        "force_radius": (_positive, 1.0),
        "force_direction": (_numbers, ()),
        "force_amplitude": (_number, 1.0),
    },
    "green": {
        "decay": (_boolean, True),
        "homogenization": (_boolean, True),
        "width": (_positive, 8.0),
        "height": (_positive, 20.0),
        "lateral_points": (_bounded(_integer, 8, 512), 128),
        "element": (_positive, 0.125),
        "fine_height": (_positive, 3.5),
        "order": (_bounded(_integer, 2, 16), 6),
        "source_height": (_positive, 2.0),
        "rho": (_positive, 0.125),
        "homog_epsilons": (_bounded(_numbers, lo=1e-6, hi=1.0), (1 / 4, 1 / 8, 1 / 16)),
        "homog_width": (_positive, 4.0),
        "homog_height": (_positive, 3.0),
        "homog_lateral_points": (_bounded(_integer, 8, 512), 64),
        "homog_normal_axis": (_bounded(_integer, 1, 3), 1),
        "homog_source_height": (_positive, 1.0),
        "homog_order": (_bounded(_integer, 2, 16), 6),
    },
}

_FORMATS = {"csv", "grid", "report"}


# config file ---------------------------------------------------------------------------------
@dataclass
class RunConfig:
    """Parsed configuration; ``positions`` maps (section, key) to the (line, column) of its value."""

    values: dict[str, dict[str, Any]]
    positions: dict[tuple[str, str], tuple[int, int]]
    sha256: str
    path: str = ""
    objects: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    @property
    def dim(self) -> int:
        return self.values["problem"]["dim"]

    def fail(self, section: str, key: str, message: str, column_offset: int = 0) -> ConfigError:
        line, col = self.positions.get((section, key), (None, None))
        if line is None:
            return ConfigError(f"[{section}] {key}: {message}")
        return ConfigError(f"[{section}] {key}: {message}", line, col + column_offset)


def parse_config_text(text: str, path: str = "") -> RunConfig:
    """Parse ``[section]`` headers and ``key = value`` lines; ``#`` and ``;`` start comment lines."""
    values: dict[str, dict[str, Any]] = {s: {} for s in SCHEMA}
    positions: dict[tuple[str, str], tuple[int, int]] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = raw.strip()
        if not stripped or stripped[0] in "#;":
            continue
        indent = len(raw) - len(raw.lstrip())
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError("unterminated section header", lineno, indent + 1)
            name = stripped[1:-1].strip()
            if name not in SCHEMA:
                raise ConfigError(f"unknown section '[{name}]'", lineno, indent + 2)
            section = name
            continue
        if "=" not in raw:
            raise ConfigError("expected 'key = value'", lineno, indent + 1)
        if section is None:
            raise ConfigError("key outside of any section", lineno, indent + 1)
        eq = raw.index("=")
        key = raw[:eq].strip()
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key '{key}' in section [{section}]", lineno, indent + 1)
        if (section, key) in positions:
            raise ConfigError(f"duplicate key '{key}' in section [{section}]", lineno, indent + 1)
        rest = raw[eq + 1:]
        vcol = eq + 2 + (len(rest) - len(rest.lstrip()))
        parse = SCHEMA[section][key][0]
        try:
            values[section][key] = parse(rest)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}", lineno, vcol) from None
        positions[(section, key)] = (lineno, vcol)
    for sec, keys in SCHEMA.items():
        for key, (_, default) in keys.items():
            values[sec].setdefault(key, default)
    cfg = RunConfig(values, positions, hashlib.sha256(text.encode()).hexdigest(), path)
    _validate(cfg)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config '{p}': {exc.strerror}") from None
    return parse_config_text(text, str(p))


def _validate(cfg: RunConfig) -> None:
    prob = cfg["problem"]
    if prob["dim"] is None:
        raise ConfigError("[problem] dim is required")
    d = prob["dim"]
    if cfg["grid"]["points_per_axis"] % 2:
        raise cfg.fail("grid", "points_per_axis", "must be even")
    bad = set(cfg["output"]["formats"]) - _FORMATS
    if bad:
        raise cfg.fail("output", "formats", f"unknown formats {sorted(bad)}; allowed {sorted(_FORMATS)}")
    if not cfg["output"]["formats"]:
        raise cfg.fail("output", "formats", "at least one format is required")
    n = cfg["geometry"]["normal"]
    if n and (len(n) != d or not any(n)):
        raise cfg.fail("geometry", "normal", f"needs {d} components, not all zero")
    ver = cfg["verify"]
    if ver["boundary"] not in ("zero", "data"):
        raise cfg.fail("verify", "boundary", "must be 'zero' or 'data'")
    for key in ("force_center", "force_direction"):
        if ver[key] and len(ver[key]) != d:
            raise cfg.fail("verify", key, f"needs {d} components")
    if ver["normal_axis"] is not None and ver["normal_axis"] > d:
        raise cfg.fail("verify", "normal_axis", f"must lie in 1..{d}")
    if cfg["green"]["homog_normal_axis"] > d:
        raise cfg.fail("green", "homog_normal_axis", f"must lie in 1..{d}")
    for sec, key in (("verify", "epsilons"), ("green", "homog_epsilons")):
        if len(ver[key] if sec == "verify" else cfg[sec][key]) < 3:
            raise cfg.fail(sec, key, "at least 3 values are required for a rate fit")
    for key in ("epsilons", "dns_epsilons"):
        for e in ver[key]:
            cells = ver["width"] / e
            if abs(cells - round(cells)) > 1e-9:
                raise cfg.fail("verify", key, f"width {ver['width']!r} is not a whole number of cells of size {e!r}")
    _build_objects(cfg)


def _expression_error(cfg: RunConfig, section: str, key: str, exc: ConfigError) -> ConfigError:
    msg = str(exc).split(": ", 1)[-1] if exc.column is not None else str(exc)
    return cfg.fail(section, key, msg, (exc.column or 1) - 1)


def _build_objects(cfg: RunConfig) -> None:
    d = cfg.dim
    grid = GridSpec(d, cfg["grid"]["points_per_axis"])
    prob = cfg["problem"]
    try:
        scalar = parse_expression(prob["coefficient"], d)
    except ConfigError as exc:
        raise _expression_error(cfg, "problem", "coefficient", exc) from None
    entries = {}
    if prob["coefficient_entries"]:
        for part in prob["coefficient_entries"].split(";"):
            if not part.strip():
                continue
            if ":" not in part:
                raise cfg.fail("problem", "coefficient_entries", "entries have the form 'a b i j : expression'")
            idx, expr = part.split(":", 1)
            try:
                key = tuple(_integer(t) - 1 for t in idx.split())
            except ValueError as exc:
                raise cfg.fail("problem", "coefficient_entries", str(exc)) from None
            if len(key) != 4 or not all(0 <= k < d for k in key):
                raise cfg.fail("problem", "coefficient_entries", f"index '{idx.strip()}' needs 4 values in 1..{d}")
            try:
                entries[key] = parse_expression(expr, d)
            except ConfigError as exc:
                raise cfg.fail("problem", "coefficient_entries", str(exc)) from None
    eye = np.einsum("ab,ij->abij", np.eye(d), np.eye(d))

    def coefficient(y):
        extra = np.shape(y)[1:]
        a = np.broadcast_to(np.asarray(scalar(y), dtype=float), extra)
        out = eye.reshape(eye.shape + (1,) * len(extra)) * a
        for k, e in entries.items():
            out[k] = out[k] + e(y)
        return out

    A = EllipticTensorField.from_callable(grid, coefficient, label=prob["coefficient"])
    try:
        report = check_ellipticity(A, seed=cfg["verify"]["seed"])
    except HomStokesError as exc:
        raise cfg.fail("problem", "coefficient", str(exc)) from None
    if not report.passed:
        raise cfg.fail("problem", "coefficient", f"coefficient is not elliptic (min form {report.mu_lower:.3e})")
    cfg.objects.update(grid=grid, A=A, ellipticity=report)
    if prob["boundary_data"]:
        try:
            comps = parse_vector_expression(prob["boundary_data"], d)
        except ConfigError as exc:
            raise cfg.fail("problem", "boundary_data", str(exc)) from None
        cfg.objects["g"] = BoundaryData.from_expressions(grid, comps)


# outputs -------------------------------------------------------------------------------------
class InvariantViolation(Exception):
    def __init__(self, criterion: str, message: str):
        super().__init__(f"{criterion}: {message}")
        self.criterion = criterion


@dataclass
class Check:
    criterion: str
    quantity: str
    value: float
    threshold: float
    relation: str   # "le" or "ge"

    @property
    def passed(self) -> bool:
        if not math.isfinite(self.value):
            return False
        return self.value <= self.threshold if self.relation == "le" else self.value >= self.threshold


class Outputs:
    """Writes artifacts into the output directory, honouring the configured formats."""

    def __init__(self, cfg: RunConfig, directory: Path):
        self.cfg = cfg
        self.dir = directory
        self.formats = set(cfg["output"]["formats"])
        self.written: list[Path] = []

    def _write(self, name: str, text: str) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        p.write_text(text)
        self.written.append(p)

    def csv(self, name: str, text: str) -> None:
        if "csv" in self.formats:
            self._write(name, text)

    def grid(self, name: str, f: PeriodicField, comment: str = "") -> None:
        if "grid" in self.formats:
            self._write(name, format_grid_field(f, f"config_sha256={self.cfg.sha256}\n{comment}".strip()))

    def report(self, name: str, text: str) -> None:
        if "report" in self.formats:
            self._write(name, text)

    def table(self, header: list[str], rows: list[list[Any]]) -> str:
        buf = io.StringIO()
        buf.write(f"# config_sha256={self.cfg.sha256}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
        return buf.getvalue()

    def summary(self, subcommand: str, checks: list[Check]) -> None:
        rows = [[c.criterion, c.quantity, float(c.value), float(c.threshold), c.relation, str(c.passed).lower()]
                for c in checks]
        self._write(f"{subcommand}_summary.csv",
                    self.table(["criterion", "quantity", "value", "threshold", "relation", "passed"], rows))


def _threads(cfg: RunConfig) -> int:
    env = os.environ.get(THREADS_ENV)
    if env is None or not env.strip():
        return cfg["solver"]["threads"]
    try:
        n = _integer(env)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{env}'") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{env}'")
    return n


def _geometry(cfg: RunConfig, offset: float | None = None) -> HalfSpaceGeometry:
    geo = cfg["geometry"]
    if not geo["normal"]:
        raise cfg.fail("geometry", "normal", "is required by this subcommand")
    s = geo["offset"] if offset is None else offset
    return HalfSpaceGeometry.from_normal(geo["normal"], s, H=geo["scan_radius"])


def _boundary_data(cfg: RunConfig) -> BoundaryData:
    g = cfg.objects.get("g")
    if g is None:
        raise cfg.fail("problem", "boundary_data", "is required by this subcommand")
    return g


def _correctors(cfg: RunConfig, threads: int):
    solver = cfg["solver"]
    return corrector_set(cfg.objects["A"], min(solver["tol"], 1e-10), threads, solver["max_iterations"])


def _fmt(x: float) -> str:
    return f"{x:.6e}"


def _markdown_checks(title: str, checks: list[Check], extra: list[str] = ()) -> str:
    lines = [f"# {title}", ""] + list(extra) + ([""] if extra else [])
    lines += ["| criterion | quantity | value | threshold | status |", "|---|---|---|---|---|"]
    for c in checks:
        rel = "<=" if c.relation == "le" else ">="
        lines.append(f"| {c.criterion} | {c.quantity} | {_fmt(c.value)} | {rel} {_fmt(c.threshold)} | "
                     f"{'pass' if c.passed else 'FAIL'} |")
    return "\n".join(lines) + "\n"


# subcommands ---------------------------------------------------------------------------------
def run_cell(cfg: RunConfig, out: Outputs, threads: int) -> list[Check]:
    A = cfg.objects["A"]
    d = A.dim
    cs = _correctors(cfg, threads)
    A0 = cs.A0
    rows = [[a + 1, b + 1, i + 1, j + 1, float(A0.A0[a, b, i, j])]
            for a in range(d) for b in range(d) for i in range(d) for j in range(d)]
    out.csv("homogenized_tensor.csv", out.table(["alpha", "beta", "i", "j", "value"], rows))
    out.grid("chi.grid", cs.chi_field(), "first-order velocity correctors chi[beta, j, k]")
    out.grid("pi.grid", cs.pi_field(), "first-order pressure correctors pi[beta, j]")
    norms = cs.max_norms()
    out.csv("corrector_norms.csv", out.table(["family", "max_abs"], [[k, v] for k, v in norms.items()]))
    lo, hi = A0.quadratic_form_bounds()
    mu = cfg.objects["ellipticity"].mu_lower
    e_b, e_pi = flux_identity_errors(A, cs.flux, cs.pi)
    scale = max(1.0, float(np.abs(A.samples).max()))
    checks = [Check("effective-ellipticity", "min quadratic form of A0 minus mu/2", lo - mu / 2, 0.0, "ge"),
              Check("flux-potentials", "max error of b = div phi + grad q", e_b / scale, 1e-10, "le"),
              Check("flux-potentials", "max error of pi = div q", e_pi / scale, 1e-10, "le")]
    if A.is_constant():
        C = A.mean()
        checks.append(Check("corrector-exactness", "max corrector magnitude", max(norms.values()), 1e-10, "le"))
        checks.append(Check("corrector-exactness", "max |A0 - A|", float(np.abs(A0.A0 - C).max()), 1e-10, "le"))
    extra = [f"- quadratic form of A0 in [{_fmt(lo)}, {_fmt(hi)}]; coefficient ellipticity {_fmt(mu)}"]
    out.report("cell_report.md", _markdown_checks("cell problem", checks, extra))
    return checks


def _class_ratio(sol, profile: np.ndarray) -> float:
    """The class-condition ratio, with the round-off floor of the decay check in the denominator."""
    t, prof = profile[:, 0], profile[:, 1]
    mid, far = (t > 1) & (t < sol.T / 2), (t >= sol.T / 2) & (t < sol.T)
    if not mid.any() or not far.any():
        return 0.0
    floor = 1e-12 * max(1.0, float(np.abs(sol.V).max()))
    return float(prof[far].max() / (np.median(prof[mid]) + floor / 2))


def run_bl(cfg: RunConfig, out: Outputs, threads: int) -> list[Check]:
    A, g = cfg.objects["A"], _boundary_data(cfg)
    geo, solver = cfg["geometry"], cfg["solver"]
    geometry = _geometry(cfg)
    ppu = cfg["grid"]["lateral_points_per_unit"]
    prob = to_cylinder(A, g, geometry, geo["truncation"], points_per_unit=ppu)
    sol = solve_boundary_layer(prob, solver["tol"])
    tail = extract_tail(sol)
    out.csv("bl_profile.csv", profile_csv(sol, cfg.sha256))
    rows = [[i + 1, float(u), float(tail.error_estimate)] for i, u in enumerate(tail.U)]
    out.csv("bl_tail.csv", out.table(["component", "U", "error_estimate"], rows))
    profile, _ = gradient_decay_check(sol)
    checks = [Check("class-condition", "max far-field t|grad V| over near-field median", _class_ratio(sol, profile),
                    2.0, "le"),
              Check("strip-solver", "relative residual", float(sol.residual), max(10 * solver["tol"], 1e-9), "le")]
    extra = ["- tail U = " + " ".join(f"{x:.12g}" for x in tail.U), f"- error estimate {_fmt(tail.error_estimate)}"]
    if geo["shifts"]:
        offsets = [geo["offset"]] + [geo["offset"] + s for s in geo["shifts"]]
        cmp = compare_tails(A, g, geometry, offsets, geo["truncation"], solver["tol"], points_per_unit=ppu)
        rows = [[float(s)] + [float(x) for x in u] + [float(cmp.differences[0, k])]
                for k, (s, u) in enumerate(zip(cmp.offsets, cmp.tails))]
        d = A.dim
        out.csv("bl_shift_tails.csv", out.table(["offset"] + [f"U{i + 1}" for i in range(d)]
                                                + ["max_abs_difference"], rows))
        v = np.array(geometry.lattice_direction(), dtype=float)
        step = 1.0 / np.linalg.norm(v)
        lattice = all(abs(s / step - round(s / step)) < 1e-12 for s in geo["shifts"])
        if lattice:
            aligned = np.count_nonzero(v) == 1
            thr = 1e-10 if aligned else max(1e-8, 10 * solver["tol"])
            checks.append(Check("tail-shift-invariance", "max tail difference over lattice shifts",
                                float(cmp.differences[0].max()), thr, "le"))
        else:
            extra.append(f"- off-lattice shifts: max tail difference {_fmt(float(cmp.differences[0].max()))}")
    out.report("bl_report.md", _markdown_checks("boundary layer", checks, extra))
    return checks


def run_tail(cfg: RunConfig, out: Outputs, threads: int) -> list[Check]:
    A, g = cfg.objects["A"], _boundary_data(cfg)
    geo, solver = cfg["geometry"], cfg["solver"]
    geometry = _geometry(cfg)
    cs = _correctors(cfg, threads)
    res = compute_tail_formula(A, g, geometry, cs, solver["tol"], geo["truncation"],
                               cfg["grid"]["lateral_points_per_unit"], cross_check=True)
    out.csv("tail_formula.csv", res.to_csv(cfg.sha256))
    I = res.integrals
    d = A.dim
    rows = [[b + 1, k + 1, i + 1, float(I.I_G[b, k, i])] for b in range(d) for k in range(d) for i in range(d)]
    out.csv("green_integrals.csv", out.table(["beta", "k", "i", "value"], rows))
    checks = [Check("green-identity", "max identity error", float(I.identity_error), 1e-8, "le")]
    if geometry.is_rational:
        thr = max(1e-3, 10 * float(res.extrapolation_error))
        checks.append(Check("tail-cross-check", "|U_formula - U_extrapolation|", float(res.cross_check), thr, "le"))
    if g.g.max_norm() > 0 and np.ptp(g.g.samples.reshape(d, -1), axis=1).max() == 0:
        c = g.g.samples.reshape(d, -1)[:, 0]
        checks.append(Check("constant-data-tail", "max |U - c|", float(np.abs(res.U - c).max()), 1e-8, "le"))
    out.report("tail_report.md", _markdown_checks("tail formula", checks, [f"```\n{res.report()}```"]))
    return checks


def _force(cfg: RunConfig):
    ver = cfg["verify"]
    d = cfg.dim
    m = (ver["normal_axis"] or d) - 1
    center = ver["force_center"] or tuple(ver["height"] / 2 if a == m else ver["width"] / 2 for a in range(d))
    direction = ver["force_direction"] or None
    return bump_force(center, ver["force_radius"], direction, ver["force_amplitude"])


def run_verify_homog(cfg: RunConfig, out: Outputs, threads: int) -> list[Check]:
    A = cfg.objects["A"]
    ver, solver = cfg["verify"], cfg["solver"]
    g = _boundary_data(cfg) if ver["boundary"] == "data" else None
    m = None if ver["normal_axis"] is None else ver["normal_axis"] - 1
    box_kw = dict(width=ver["width"], height=ver["height"], normal_axis=m)
    cs = _correctors(cfg, threads)
    study = convergence_study(A, g, _force(cfg), ver["epsilons"], ver["include_boundary_layer"],
                              solver["tol"], threads, **box_kw)
    out.csv("convergence.csv", study.to_csv(cfg.sha256))
    checks = [Check("homogenization-rate", "fitted exponent of sup|u_eps - u0|", study.fit.fitted_exponent,
                    0.9, "ge")]
    extra = [f"- r^2 = {study.fit.r_squared:.4f}"]
    if study.remainder_fit is not None:
        extra.append(f"- expansion remainder exponent {study.remainder_fit.fitted_exponent:.4f}")
    if ver["dns_epsilons"]:
        axes = None if m is None else (m,)
        dns = dns_effective_tensor(A, ver["dns_epsilons"], axes, ver["width"], ver["height"], solver["tol"], cs)
        out.csv("effective_tensor_dns.csv", dns.to_csv(cfg.sha256))
        checks.append(Check("effective-tensor", "max relative error of DNS against A0",
                            dns.max_relative_error(), 0.05, "le"))
    out.report("verify_homog_report.md", _markdown_checks("homogenization", checks, extra))
    return checks


def run_verify_green(cfg: RunConfig, out: Outputs, threads: int) -> list[Check]:
    A = cfg.objects["A"]
    gr, solver = cfg["green"], cfg["solver"]
    d = cfg.dim
    checks: list[Check] = []
    extra: list[str] = []
    cs = _correctors(cfg, threads)
    if gr["decay"]:
        box = green_box(d, gr["width"], gr["height"], gr["lateral_points"], gr["element"], gr["order"],
                        fine_height=gr["fine_height"])
        src = np.full(d, gr["width"] / 2)
        src[box.normal_axis] = gr["source_height"]
        sample = green_sample(cs.A0.A0, src, box, gr["rho"], solver["tol"])
        fits = verify_green_decay([sample])
        out.csv("green_decay.csv", fits.to_csv(cfg.sha256))
        for k, f in fits.fits.items():
            dev = abs(f.fitted_exponent - fits.expected[k])
            checks.append(Check(f"green-decay-{k}", f"|exponent - {fits.expected[k]:g}|", dev, fits.tolerances[k],
                                "le"))
    if gr["homogenization"]:
        m = gr["homog_normal_axis"] - 1
        src = np.full(d, gr["homog_width"] / 2)
        src[m] = gr["homog_source_height"]

        def factory(eps):
            mesh = SpectralElementMesh(uniform_mesh(gr["homog_height"], eps / 2), gr["homog_order"])
            shape = (gr["homog_lateral_points"],) * (d - 1)
            return Box(d, gr["homog_width"], gr["homog_height"], m, shape, mesh)

        hom = verify_green_homogenization(A, gr["homog_epsilons"], src, gr["rho"], factory, tol=solver["tol"],
                                          correctors=cs)
        out.csv("green_homogenization.csv", hom.to_csv(cfg.sha256))
        checks.append(Check("green-homogenization", "fitted exponent of sup|G_eps - G0|",
                            hom.fit.fitted_exponent, hom.band[0], "ge"))
        extra.append(f"- guaranteed band [{hom.band[0]:.4f}, {hom.band[1]:.4f}]; exceeding it passes")
    out.report("verify_green_report.md", _markdown_checks("Green kernels", checks, extra))
    return checks


def run_report(cfg: RunConfig, out: Outputs, threads: int) -> list[Check]:
    checks: list[Check] = []
    sections = []
    for sub in SUBCOMMANDS[:-1]:
        p = out.dir / f"{sub.replace('-', '_')}_summary.csv"
        if not p.exists():
            continue
        rows = list(csv.reader(line for line in p.read_text().splitlines() if not line.startswith("#")))
        sub_checks = [Check(r[0], r[1], float(r[2]), float(r[3]), r[4]) for r in rows[1:]]
        checks += sub_checks
        sections.append((sub, sub_checks))
    if not sections:
        raise HomStokesError(f"no subcommand summaries found in '{out.dir}'", stage="report")
    lines = ["# summary", ""]
    for sub, sub_checks in sections:
        lines.append(f"## {sub}")
        lines.append("")
        for c in sub_checks:
            lines.append(f"- {'PASS' if c.passed else 'FAIL'} {c.criterion}: {c.quantity} = {_fmt(c.value)}")
        lines.append("")
    n_fail = sum(not c.passed for c in checks)
    lines.append(f"{len(checks) - n_fail} of {len(checks)} checks passed")
    text = "\n".join(lines) + "\n"
    out._write("report.md", text)
    return checks


RUNNERS = {
    "cell": run_cell,
    "bl": run_bl,
    "tail": run_tail,
    "verify-homog": run_verify_homog,
    "verify-green": run_verify_green,
    "report": run_report,
}


def run(subcommand: str, config_path: str | Path, out_dir: str | Path | None = None,
        stream=None) -> int:
    """Run one subcommand and return its exit status; messages go to ``stream`` (stderr by default)."""
    err = stream if stream is not None else sys.stderr
    if subcommand not in RUNNERS:
        print(f"error: unknown subcommand '{subcommand}'", file=err)
        return EXIT_CONFIG
    try:
        cfg = load_config(config_path)
        threads = _threads(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG
    directory = Path(out_dir) if out_dir is not None else Path(cfg["output"]["directory"])
    out = Outputs(cfg, directory)
    try:
        checks = RUNNERS[subcommand](cfg, out, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG
    except ConsistencyError as exc:
        print(f"invariant violated: {exc.stage}: {exc}", file=err)
        return EXIT_INVARIANT
    except HomStokesError as exc:
        print(f"numerical failure in stage '{exc.stage}': {exc}", file=err)
        return EXIT_NUMERICAL
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure in stage 'linear-algebra': {exc}", file=err)
        return EXIT_NUMERICAL
    if subcommand != "report":
        out.summary(subcommand.replace("-", "_"), checks)
    failed = [c for c in checks if not c.passed]
    for c in failed:
        rel = "<=" if c.relation == "le" else ">="
        print(f"invariant violated: {c.criterion}: {c.quantity} = {c.value:.6e}, required {rel} {c.threshold:.6e}",
              file=err)
    return EXIT_INVARIANT if failed else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="homstokes", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="sectioned key = value configuration file")
    parser.add_argument("--out", default=None, help="output directory (overrides [output] directory)")
    args = parser.parse_args(argv)
    return run(args.subcommand, args.config, args.out)


if __name__ == "__main__":
    sys.exit(main())
