"""Run configuration: a flat ``dotted.key = value`` text format.

Values are Python literals (numbers, strings, lists); a bare word is read as a
string. ``#`` starts a comment. Unknown keys are rejected with their line.

Example::

    task = bounds
    ensemble.family = cpf
    ensemble.M = 3
    ensemble.T = 2
    ensemble.q_T = 0.5
    ensemble.dq = 0.04
    bounds = ["ub1", "ub1prime", "bayes", "pgm"]
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field, replace
from typing import Any

TASKS = ("validate", "bounds", "sweep-cpf", "sweep-gad", "export-sdpa")
BOUNDS = ("ub1", "ub2", "ub1prime", "partition", "exact", "bayes", "pgm", "choistate",
          "nonadaptive")
FAMILIES = ("cpf", "memory", "ad", "identical", "random")

# key -> (type, default)
SCHEMA: dict[str, tuple[type | tuple, Any]] = {
    "task": (str, None),
    "ensemble.family": (str, None),
    "ensemble.M": (int, None),
    "ensemble.T": (int, None),
    "ensemble.priors": (list, None),
    "ensemble.q": (float, 0.3),
    "ensemble.q_B": (float, None),
    "ensemble.q_T": (float, None),
    "ensemble.dq": (float, None),
    "ensemble.nu0": (float, 0.3),
    "ensemble.dnu": (float, 0.04),
    "ensemble.p_c": (float, 0.2),
    "ensemble.n": (float, 1.0),
    "ensemble.seed": (int, 0),
    "bounds": (list, None),
    "partition.breakpoints": (list, None),
    "partition.allocation": (list, None),
    "solver.tol": (float, 1e-8),
    "solver.max_iter": (int, 200),
    "sweep.parameter": (str, None),
    "sweep.start": (float, None),
    "sweep.stop": (float, None),
    "sweep.points": (int, None),
    "sweep.values": (list, None),
    "limits.max_order": (int, 256),
    "export.problem": (str, "exact"),
    "export.step": (int, 1),
    "output.path": (str, None),
}

DEFAULT_BOUNDS = {
    "cpf": ["ub1", "ub1prime", "bayes", "pgm"],
    "memory": ["exact", "bayes", "ub1", "ub2", "choistate"],
    "ad": ["exact", "ub1", "bayes", "nonadaptive"],
    "identical": ["exact", "ub1", "ub2", "bayes"],
    "random": ["exact", "ub1", "ub2", "bayes"],
}

SWEEP_DEFAULTS = {"sweep-cpf": ("cpf", "q_T"), "sweep-gad": ("memory", "nu0")}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key or line."""


@dataclass(frozen=True)
class RunConfig:
    task: str
    values: dict = field(default_factory=dict)

    def get(self, key: str):
        if key not in SCHEMA:
            raise KeyError(key)
        return self.values.get(key, SCHEMA[key][1])

    @property
    def family(self) -> str:
        return self.get("ensemble.family")

    @property
    def bounds(self) -> list[str]:
        b = self.get("bounds")
        return list(b) if b is not None else list(DEFAULT_BOUNDS[self.family])

    def with_values(self, **updates) -> "RunConfig":
        vals = dict(self.values)
        vals.update(updates)
        return replace(self, values=vals)

    def sweep_points(self) -> list[float]:
        vals = self.get("sweep.values")
        if vals is not None:
            return sorted(float(v) for v in vals)
        start, stop, n = self.get("sweep.start"), self.get("sweep.stop"), self.get("sweep.points")
        if n == 1:
            return [float(start)]
        return [start + (stop - start) * i / (n - 1) for i in range(n)]


def _parse_value(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def _coerce(key: str, value, where: str):
    typ = SCHEMA[key][0]
    if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if typ is list and isinstance(value, (list, tuple)):
        return list(value)
    if typ is str and isinstance(value, str):
        return value
    raise ConfigError(f"{where}: key {key!r} expects {typ.__name__}, got {value!r}")


def parse_assignment(text: str, where: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"{where}: expected 'key = value', got {text.strip()!r}")
    key, raw = text.split("=", 1)
    key = key.strip()
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown key {key!r}")
    return key, _coerce(key, _parse_value(raw.strip()), where)


def parse_config(text: str, overrides: list[str] | None = None,
                 task: str | None = None) -> RunConfig:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, val = parse_assignment(body, f"line {lineno}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = val
    for ov in overrides or []:
        key, val = parse_assignment(ov, f"--set {ov!r}")
        values[key] = val
    if task is not None:
        values["task"] = task
    return validate_config(values)


def validate_config(values: dict) -> RunConfig:
    task = values.get("task")
    if task is None:
        raise ConfigError("missing key 'task'")
    if task not in TASKS:
        raise ConfigError(f"key 'task': unknown task {task!r}; choose from {', '.join(TASKS)}")
    if task in SWEEP_DEFAULTS:
        fam, par = SWEEP_DEFAULTS[task]
        values.setdefault("ensemble.family", fam)
        values.setdefault("sweep.parameter", par)
        if values["ensemble.family"] != fam:
            raise ConfigError(f"key 'ensemble.family': task {task} needs family {fam!r}")
    fam = values.get("ensemble.family")
    if fam is None:
        raise ConfigError("missing key 'ensemble.family'")
    if fam not in FAMILIES:
        raise ConfigError(f"key 'ensemble.family': unknown family {fam!r}")
    cfg = RunConfig(task, dict(values))

    M = cfg.get("ensemble.M")
    if fam == "memory":
        M = 3 if M is None else M
        values["ensemble.M"] = M
        values["ensemble.T"] = M
    if fam == "ad":
        if M not in (None, 2):
            raise ConfigError("key 'ensemble.M': the ad family is binary (M = 2)")
        values["ensemble.M"] = 2
    if values.get("ensemble.M") is None:
        raise ConfigError("missing key 'ensemble.M'")
    if values["ensemble.M"] < 2:
        raise ConfigError("key 'ensemble.M': need at least two processes")
    values.setdefault("ensemble.T", 1)
    if values["ensemble.T"] < 1:
        raise ConfigError("key 'ensemble.T': need at least one step")
    if fam in ("cpf", "ad"):
        sweeping = values.get("sweep.parameter") == "q_T"
        if values.get("ensemble.q_T") is None and not sweeping:
            raise ConfigError("missing key 'ensemble.q_T'")
        if values.get("ensemble.q_B") is None and values.get("ensemble.dq") is None:
            raise ConfigError("missing key 'ensemble.q_B' (or 'ensemble.dq')")

    priors = values.get("ensemble.priors")
    if priors is not None:
        if len(priors) != values["ensemble.M"]:
            raise ConfigError("key 'ensemble.priors': need one prior per process")
        if any((not isinstance(p, (int, float))) or p < 0 for p in priors):
            raise ConfigError("key 'ensemble.priors': priors must be nonnegative numbers")
        if abs(sum(priors) - 1.0) > 1e-12:
            raise ConfigError("key 'ensemble.priors': priors must sum to 1")

    bounds = values.get("bounds")
    if bounds is not None:
        for b in bounds:
            if b not in BOUNDS:
                raise ConfigError(f"key 'bounds': unknown bound {b!r}; choose from {', '.join(BOUNDS)}")
        if "partition" in bounds and values.get("partition.breakpoints") is None:
            raise ConfigError("missing key 'partition.breakpoints' for bound 'partition'")

    if values.get("solver.tol", 1e-8) <= 0:
        raise ConfigError("key 'solver.tol' must be positive")
    if values.get("solver.max_iter", 200) < 1:
        raise ConfigError("key 'solver.max_iter' must be positive")

    if task.startswith("sweep"):
        if values.get("sweep.values") is None:
            for k in ("sweep.start", "sweep.stop", "sweep.points"):
                if values.get(k) is None:
                    raise ConfigError(f"missing key {k!r}")
            if values["sweep.points"] < 1:
                raise ConfigError("key 'sweep.points' must be positive")
        par = values["sweep.parameter"]
        if f"ensemble.{par}" not in SCHEMA:
            raise ConfigError(f"key 'sweep.parameter': {par!r} is not an ensemble parameter")
    if values.get("export.problem", "exact") not in ("exact", "step"):
        raise ConfigError("key 'export.problem' must be 'exact' or 'step'")
    return RunConfig(task, dict(values))
