"""Experiment configuration: JSON schema validation and problem assembly.

Every validation error is a ConfigError naming the offending field path
(e.g. "omega[0][1]"), so sweep scripts can triage failures without reading
tracebacks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import cones
from . import fields
from . import flow
from . import quat
from .errors import AdmissibilityError, ConfigError, MalformedInputError

KNOWN_KEYS = {
    "n", "active", "points_per_dim", "operator", "omega", "omega1", "h",
    "phi0", "subsolution", "tol_osc", "dt_safety", "dt_max", "max_steps",
    "checkpoint_every", "record_every", "out_dir", "force",
}

OPERATOR_KINDS = {"log_sigma_k", "log_ma", "log_quotient", "n_minus_one_psh"}


@dataclass
class ExperimentConfig:
    n: int
    active: tuple
    points_per_dim: tuple
    operator: dict
    h: dict
    phi0: list
    omega: list | None = None
    omega1: list | None = None
    subsolution: list | None = None
    tol_osc: float = 1e-8
    dt_safety: float = 0.5
    dt_max: float = 1.0
    max_steps: int = 1_000_000
    checkpoint_every: int = 0
    record_every: int = 50
    out_dir: str | None = None
    force: bool = False


def _fail(path, message):
    raise ConfigError(f"{path}: {message}")


def _require(doc, key):
    if key not in doc:
        _fail(key, "missing required field")
    return doc[key]


def _as_int(path, value, minimum=None):
    if not isinstance(value, int) or isinstance(value, bool):
        _fail(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        _fail(path, f"must be >= {minimum}, got {value}")
    return value


def _as_number(path, value):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        _fail(path, f"expected a number, got {value!r}")
    return float(value)


def _parse_modes(path, value, grid):
    if not isinstance(value, list):
        _fail(path, f"expected a list of modes, got {type(value).__name__}")
    modes = []
    for i, item in enumerate(value):
        if not isinstance(item, dict):
            _fail(f"{path}[{i}]", "expected an object with amplitude/wave/phase")
        unknown = set(item) - {"amplitude", "wave", "phase"}
        if unknown:
            _fail(f"{path}[{i}]", f"unknown keys {sorted(unknown)}")
        amp = _as_number(f"{path}[{i}].amplitude", _require_at(item, "amplitude", f"{path}[{i}]"))
        wave = item.get("wave")
        if not isinstance(wave, list) or len(wave) != len(grid.active):
            _fail(
                f"{path}[{i}].wave",
                f"expected {len(grid.active)} integer frequencies (one per active coordinate)",
            )
        for j, w in enumerate(wave):
            if not isinstance(w, int) or isinstance(w, bool):
                _fail(f"{path}[{i}].wave[{j}]", f"expected an integer, got {w!r}")
            if abs(w) >= grid.points[j] // 2:
                _fail(
                    f"{path}[{i}].wave[{j}]",
                    f"frequency {w} at or above Nyquist {grid.points[j] // 2}",
                )
        phase = _as_number(f"{path}[{i}].phase", item.get("phase", 0.0))
        modes.append(fields.Mode(amp, tuple(wave), phase))
    return fields.ModeSum(modes)


def _require_at(doc, key, path):
    if key not in doc:
        _fail(f"{path}.{key}", "missing required field")
    return doc[key]


def _parse_matrix(path, value, n):
    if not isinstance(value, list) or len(value) != n:
        _fail(path, f"expected an {n} x {n} matrix of 4-real entries")
    ent = np.zeros((n, n, 4))
    for r in range(n):
        row = value[r]
        if not isinstance(row, list) or len(row) != n:
            _fail(f"{path}[{r}]", f"expected {n} entries")
        for s in range(n):
            cell = row[s]
            if not isinstance(cell, list) or len(cell) != 4:
                _fail(f"{path}[{r}][{s}]", "expected 4 real components")
            for c in range(4):
                ent[r, s, c] = _as_number(f"{path}[{r}][{s}][{c}]", cell[c])
    for r in range(n):
        for s in range(r, n):
            mirror = ent[s, r].copy()
            mirror[1:] = -mirror[1:]
            if not np.allclose(ent[r, s], mirror, rtol=0.0, atol=quat.HERMITICITY_TOL):
                _fail(f"{path}[{r}][{s}]", f"not the conjugate of {path}[{s}][{r}]")
    return ent


def _parse_operator(path, value, n):
    if not isinstance(value, dict):
        _fail(path, "expected an object with a kind")
    kind = value.get("kind")
    if kind not in OPERATOR_KINDS:
        _fail(f"{path}.kind", f"unknown kind {kind!r}, expected one of {sorted(OPERATOR_KINDS)}")
    unknown = set(value) - {"kind", "k", "l"}
    if unknown:
        _fail(path, f"unknown keys {sorted(unknown)}")
    try:
        if kind == "log_sigma_k":
            return cones.log_sigma_k(n, _as_int(f"{path}.k", _require_at(value, "k", path)))
        if kind == "log_ma":
            return cones.log_ma(n)
        if kind == "log_quotient":
            return cones.log_quotient(
                n,
                _as_int(f"{path}.k", _require_at(value, "k", path)),
                _as_int(f"{path}.l", _require_at(value, "l", path)),
            )
        return cones.n_minus_one_psh(n)
    except MalformedInputError as exc:
        _fail(path, str(exc))


def parse_config(document):
    """Validate a JSON document (dict or text) into a runnable configuration.

    Performs the eager checks: grid sanity, hyperhermitian background,
    Nyquist bounds, operator parameters, manufactured-data admissibility,
    and admissibility of the initial field.  The built FlowProblem is
    attached as .problem.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigError(f"top level must be an object, got {type(document).__name__}")
    unknown = set(document) - KNOWN_KEYS
    if unknown:
        _fail(sorted(unknown)[0], "unknown field")

    n = _as_int("n", _require(document, "n"), minimum=1)
    active = _require(document, "active")
    points = _require(document, "points_per_dim")
    if not isinstance(active, list) or not all(
        isinstance(a, int) and not isinstance(a, bool) for a in active
    ):
        _fail("active", "expected a list of integers")
    if not isinstance(points, list) or not all(
        isinstance(m, int) and not isinstance(m, bool) for m in points
    ):
        _fail("points_per_dim", "expected a list of integers")
    try:
        grid = fields.TorusGrid(n, tuple(active), tuple(points))
    except MalformedInputError as exc:
        _fail("active/points_per_dim", str(exc))

    op = _parse_operator("operator", _require(document, "operator"), n)

    if op.kind == "n_minus_one_psh":
        if "omega" in document:
            _fail("omega", "the averaged-eigenvalue operator takes omega1, not omega")
        omega1 = _parse_matrix("omega1", _require(document, "omega1"), n)
        omega = flow.derived_background(omega1)
    else:
        if "omega1" in document:
            _fail("omega1", "omega1 is only meaningful for the averaged-eigenvalue operator")
        omega = _parse_matrix("omega", _require(document, "omega"), n)

    phi0_modes = _parse_modes("phi0", _require(document, "phi0"), grid)
    phi0 = phi0_modes.evaluate(grid)

    h_doc = _require(document, "h")
    if not isinstance(h_doc, dict) or h_doc.get("mode") not in ("explicit", "manufactured"):
        _fail("h.mode", "expected 'explicit' or 'manufactured'")
    if h_doc["mode"] == "explicit":
        unknown = set(h_doc) - {"mode", "modes", "offset"}
        if unknown:
            _fail("h", f"unknown keys {sorted(unknown)}")
        h = _parse_modes("h.modes", _require_at(h_doc, "modes", "h"), grid).evaluate(grid)
        if "offset" in h_doc:
            h = fields.ScalarField(grid, h.values + _as_number("h.offset", h_doc["offset"]))
    else:
        unknown = set(h_doc) - {"mode", "phi_star"}
        if unknown:
            _fail("h", f"unknown keys {sorted(unknown)}")
        phi_star = _parse_modes("h.phi_star", _require_at(h_doc, "phi_star", "h"), grid)
        try:
            h = fields.manufacture_h(op, omega, phi_star.evaluate(grid))
        except AdmissibilityError as exc:
            _fail("h.phi_star", str(exc))

    subsolution = None
    if document.get("subsolution") is not None:
        subsolution = _parse_modes("subsolution", document["subsolution"], grid).evaluate(grid)

    tol_osc = _as_number("tol_osc", document.get("tol_osc", 1e-8))
    if tol_osc <= 0:
        _fail("tol_osc", "must be positive")
    dt_safety = _as_number("dt_safety", document.get("dt_safety", 0.5))
    if not 0.0 < dt_safety <= 1.0:
        _fail("dt_safety", f"must lie in (0, 1], got {dt_safety}")
    dt_max = _as_number("dt_max", document.get("dt_max", 1.0))
    if dt_max <= 0:
        _fail("dt_max", "must be positive")
    max_steps = _as_int("max_steps", document.get("max_steps", 1_000_000), minimum=0)
    checkpoint_every = _as_int("checkpoint_every", document.get("checkpoint_every", 0), minimum=0)
    record_every = _as_int("record_every", document.get("record_every", 50), minimum=0)
    force = document.get("force", False)
    if not isinstance(force, bool):
        _fail("force", f"expected a boolean, got {force!r}")
    out_dir = document.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        _fail("out_dir", "expected a string path")

    cfg = ExperimentConfig(
        n=n, active=tuple(active), points_per_dim=tuple(points),
        operator=document["operator"], h=h_doc, phi0=document["phi0"],
        omega=document.get("omega"), omega1=document.get("omega1"),
        subsolution=document.get("subsolution"),
        tol_osc=tol_osc, dt_safety=dt_safety, dt_max=dt_max,
        max_steps=max_steps, checkpoint_every=checkpoint_every,
        record_every=record_every, out_dir=out_dir, force=force,
    )
    problem = flow.FlowProblem(
        grid=grid, op=op, omega=omega, h=h, phi0=phi0, subsolution=subsolution,
        tol_osc=tol_osc, dt_safety=dt_safety, dt_max=dt_max, max_steps=max_steps,
        record_every=record_every, force=force,
    )
    # eager admissibility of the initial field, reported as a config error
    ev = flow.evaluate(problem, phi0.values)
    if ev.rhs is None:
        _fail("phi0", f"initial field is not admissible (worst margin {ev.margin:.6e})")
    cfg.problem = problem
    return cfg


def load_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
