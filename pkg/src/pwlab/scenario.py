"""Scenario files: flat ``key = value`` documents with ``#`` comments.

Example::

    name = dichotomy
    extents = 0, pi            # one (a, b) pair per axis
    n_interior = 1023
    p = 3
    lambda = 0, 1
    delta = 0, 1
    family = eigenfunction     # eigenfunction | gaussian | from_file
    amplitude = 0.01, 10
    tasks = depths, classify, evolve, compare, verify

Unknown keys are rejected so that misspellings never fall back to defaults.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .flow import FlowConfig
from .functionals import Params
from .mesh import GridFunction, Mesh, build_mesh, read_snapshot


class ScenarioError(ValueError):
    pass


TASKS = ("depths", "classify", "evolve", "compare", "verify")
FAMILIES = ("eigenfunction", "gaussian", "from_file")
FLOW_KEYS = ("dt_init", "dt_min", "t_max", "blowup_sup_threshold", "decay_h1_threshold",
             "snapshot_stride", "safety", "tol_step", "adaptive")
KNOWN_KEYS = {"name", "dim", "extents", "n_interior", "p", "lambda", "delta", "family",
              "amplitude", "center", "width", "file", "tasks", "seed", "restarts", *FLOW_KEYS}
REQUIRED = ("name", "extents", "n_interior", "p", "tasks")

_PI = re.compile(r"^([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+])?\s*\*?\s*pi(?:\s*/\s*(\d+\.?\d*))?$")


def parse_number(tok: str) -> float:
    """A float literal, or a multiple of pi such as ``pi``, ``2*pi``, ``pi/2``."""
    tok = tok.strip()
    try:
        return float(tok)
    except ValueError:
        pass
    mm = _PI.match(tok)
    if not mm:
        raise ScenarioError(f"cannot parse number {tok!r}")
    coef = mm.group(1)
    c = 1.0 if coef in (None, "", "+") else (-1.0 if coef == "-" else float(coef))
    den = float(mm.group(2)) if mm.group(2) else 1.0
    return c * np.pi / den


def _numbers(val: str, key: str) -> list[float]:
    items = [x for x in val.split(",") if x.strip()]
    if not items:
        raise ScenarioError(f"{key}: empty list")
    try:
        return [parse_number(x) for x in items]
    except ScenarioError as e:
        raise ScenarioError(f"{key}: {e}") from None


@dataclass
class Scenario:
    name: str
    mesh: Mesh
    p: float
    lambdas: list[float] = field(default_factory=lambda: [0.0])
    deltas: list[float] = field(default_factory=lambda: [0.0])
    family: str = "eigenfunction"
    amplitudes: list[float] = field(default_factory=lambda: [1.0])
    center: list[float] | None = None
    width: float | None = None
    file: Path | None = None
    tasks: list[str] = field(default_factory=list)
    flow: dict = field(default_factory=dict)
    seed: int = 0
    restarts: int = 0

    @property
    def params(self) -> Params:
        return Params(self.p)

    def flow_config(self, params: Params | None = None) -> FlowConfig:
        return FlowConfig(params or self.params, **self.flow)

    def initial_data(self) -> list[tuple[str, float, GridFunction]]:
        """(datum id, amplitude, grid function) for every requested datum, in order."""
        out = []
        base = self._base_shape()
        for k, a in enumerate(self.amplitudes):
            out.append((f"d{k:02d}_{self.family}_a{a:.6g}", a, a * base))
        return out

    def _base_shape(self) -> GridFunction:
        m = self.mesh
        if self.family == "eigenfunction":
            def phi1(*xs):
                return np.prod([np.sin(np.pi * (x - a) / (b - a)) for x, (a, b) in zip(xs, m.extents)], axis=0)
            return m.interpolate(phi1)
        if self.family == "gaussian":
            center = self.center or [(a + b) / 2 for a, b in m.extents]
            width = self.width or 0.1 * min(b - a for a, b in m.extents)
            return m.interpolate(lambda *xs: np.exp(-sum((x - c) ** 2 for x, c in zip(xs, center))
                                                    / (2 * width**2)))
        return read_snapshot(self.file, m)


def parse_scenario(text: str, base_dir: str | Path = ".") -> Scenario:
    kv: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ScenarioError(f"line {lineno}: unknown key {key!r}")
        if key in kv:
            raise ScenarioError(f"line {lineno}: duplicate key {key!r}")
        kv[key] = val
    missing = [k for k in REQUIRED if k not in kv]
    if missing:
        raise ScenarioError(f"missing required key(s): {', '.join(missing)}")

    name = kv["name"]
    if not re.fullmatch(r"[A-Za-z0-9_.-]+", name) or name in (".", ".."):
        raise ScenarioError(f"name {name!r} is not filesystem-safe")

    ext = _numbers(kv["extents"], "extents")
    counts = _numbers(kv["n_interior"], "n_interior")
    if len(ext) % 2:
        raise ScenarioError("extents: need (a, b) pairs")
    dim = int(parse_number(kv["dim"])) if "dim" in kv else len(ext) // 2
    try:
        mesh = build_mesh(dim, [ext[i:i + 2] for i in range(0, len(ext), 2)], counts)
    except ValueError as e:
        raise ScenarioError(f"mesh: {e}") from None

    tasks = [t.strip() for t in kv["tasks"].split(",") if t.strip()]
    if not tasks:
        raise ScenarioError("tasks: empty list")
    for t in tasks:
        if t not in TASKS:
            raise ScenarioError(f"unknown task {t!r}")
    family = kv.get("family", "eigenfunction")
    if family not in FAMILIES:
        raise ScenarioError(f"unknown family {family!r}")

    s = Scenario(name=name, mesh=mesh, p=_numbers(kv["p"], "p")[0], family=family, tasks=tasks)
    try:
        Params(s.p)
    except ValueError as e:
        raise ScenarioError(str(e)) from None
    if "lambda" in kv:
        s.lambdas = _numbers(kv["lambda"], "lambda")
    if "delta" in kv:
        s.deltas = _numbers(kv["delta"], "delta")
    if any(x < 0 for x in s.lambdas + s.deltas):
        raise ScenarioError("lambda and delta must be nonnegative")
    if "amplitude" in kv:
        s.amplitudes = _numbers(kv["amplitude"], "amplitude")
    if "center" in kv:
        s.center = _numbers(kv["center"], "center")
        if len(s.center) != dim:
            raise ScenarioError("center: need one coordinate per axis")
    if "width" in kv:
        s.width = _numbers(kv["width"], "width")[0]
        if s.width <= 0:
            raise ScenarioError("width must be positive")
    if family == "from_file":
        if "file" not in kv:
            raise ScenarioError("family from_file needs a 'file' key")
        path = Path(kv["file"])
        s.file = path if path.is_absolute() else Path(base_dir) / path
        if not s.file.exists():
            raise ScenarioError(f"file {s.file} does not exist")
    elif "file" in kv:
        raise ScenarioError("'file' is only valid with family = from_file")
    for key in ("seed", "restarts"):
        if key in kv:
            setattr(s, key, int(_numbers(kv[key], key)[0]))

    types = {f.name: f.type for f in fields(FlowConfig)}
    for key in FLOW_KEYS:
        if key not in kv:
            continue
        if key == "adaptive":
            if kv[key].lower() not in ("true", "false", "yes", "no", "1", "0"):
                raise ScenarioError(f"adaptive: expected a boolean, got {kv[key]!r}")
            s.flow[key] = kv[key].lower() in ("true", "yes", "1")
        else:
            v = _numbers(kv[key], key)[0]
            s.flow[key] = int(v) if types[key] == "int" else v
    try:
        s.flow_config()
    except ValueError as e:
        raise ScenarioError(f"flow settings: {e}") from None
    return s


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), base_dir=path.parent)
