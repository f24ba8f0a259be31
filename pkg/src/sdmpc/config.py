"""INI-style experiment configuration.

Sections ``[system]``, ``[constraints]``, ``[cost]``, ``[solver]`` and
``[experiment]``.  Values are JSON literals (matrices row-major, boxes as
``[lo, hi]`` pairs)::

    [system]
    name = double_integrator        ; registry name, or give A and B
    ; A = [[0, 1], [0, 0]]
    ; B = [[0], [1]]

    [constraints]
    state_box = [[-1, -1], [1, 1]]
    input_box = [[-1], [1]]

    [cost]
    Q = [[1, 0], [0, 1]]
    R = [[1]]

    [solver]
    feas_tol = 1e-6

    [experiment]
    kind = table1
    delta_list = [0.1, 0.05, 0.03]
"""
from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from .model import REGISTRY, ConstraintSpec, LinearSystem, StageCost
from .ocp import SolverOptions

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "KINDS", "DEFAULTS"]

KINDS = ("simulate", "table1", "figure1", "certify", "viability", "sweep")

TABLE1_X0 = [[0.5, 0.5], [0.6, 0.6], [0.7, 0.7]]
TABLE1_DELTAS = [0.1, 0.05, 0.03]
FIGURE1_RUNS = [[[0.5, 0.5], 4], [[0.6, 0.6], 4], [[0.7, 0.7], 5], [[0.733, 0.73], 7]]

# per-kind experiment defaults
DEFAULTS: Dict[str, Dict[str, Any]] = {
    "simulate": {"x0": [0.5, 0.5], "delta": 0.1, "N": 5, "t_sim": 30.0},
    "table1": {"x0_list": TABLE1_X0, "delta_list": TABLE1_DELTAS, "N_range": [1, 30], "t_sim": 10.0,
               "success_mode": "feasible", "constraint_nodes": "sample"},
    "figure1": {"runs": FIGURE1_RUNS, "delta": 0.1, "t_sim": 10.0},
    "certify": {"K": [[0.5, 0.5]], "delta": 0.1, "N_range": None, "radius": None,
                "T_long": 10.0},
    "viability": {"resolution": 0.05, "margin": 0, "horizon": 10.0, "lambda": 0.5},
    "sweep": {"x0_list": TABLE1_X0, "delta_list": [0.1], "N_range": [1, 10], "t_sim": 10.0,
              "success_mode": "goal"},
}
COMMON = {"goal_radius": 1e-2, "substeps": 10, "seed": 0, "success_mode": "goal",
          "constraint_nodes": "substep"}


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class ExperimentConfig:
    """Resolved configuration: problem data, solver options and experiment parameters."""

    kind: str
    system: LinearSystem
    constraints: ConstraintSpec
    cost: StageCost
    solver: SolverOptions
    params: Dict[str, Any] = field(default_factory=dict)
    system_name: str = "double_integrator"

    def __getitem__(self, key):
        return self.params[key]

    def solver_for(self, constraint_nodes: Optional[str] = None) -> SolverOptions:
        nodes = constraint_nodes or self.params.get("constraint_nodes", self.solver.constraint_nodes)
        opts = dict(self.solver.__dict__)
        opts["constraint_nodes"] = nodes
        return SolverOptions(**opts)

    def validate(self):
        p = self.params
        for key in ("delta",):
            if key in p and p[key] is not None and float(p[key]) <= 0:
                raise ConfigError("delta must be positive")
        for d in p.get("delta_list", []) or []:
            if float(d) <= 0:
                raise ConfigError("delta must be positive")
        nr = p.get("N_range")
        if nr is not None and self.kind != "sweep":
            if len(nr) != 2 or int(nr[0]) < 1 or int(nr[1]) < int(nr[0]):
                raise ConfigError("N_range must be [N_min, N_max] with 1 <= N_min <= N_max")
        if p.get("goal_radius", 1.0) <= 0:
            raise ConfigError("goal_radius must be positive")
        if p.get("success_mode") not in ("goal", "feasible"):
            raise ConfigError("success_mode must be 'goal' or 'feasible'")
        return self


def _literal(raw: str, where: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        s = raw.strip()
        if s.lower() in ("none", "null", ""):
            return None
        return s  # bare word, e.g. a registry name


def _section(cp, name):
    return {k: _literal(v, f"[{name}] {k}") for k, v in cp.items(name)} if cp.has_section(name) else {}


def _matrix(value, key):
    try:
        return np.atleast_2d(np.asarray(value, float))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key} is not a numeric matrix") from exc


def _box(value, key):
    if value is None:
        return None
    if not isinstance(value, list) or len(value) != 2:
        raise ConfigError(f"{key} must be a [lo, hi] pair")
    return tuple(np.asarray(v, float).ravel() for v in value)


def load_config(source: Union[str, Path, None] = None, kind: Optional[str] = None,
                overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Read a config file (or just defaults when ``source`` is None).

    ``kind`` overrides ``[experiment] kind``; ``overrides`` replace
    experiment parameters.

    Raises
    ------
    ConfigError
        Missing file, malformed values or inconsistent dimensions.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # keep Q/R case
    if source is not None:
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
    system_sec = _section(cp, "system")
    cons_sec = _section(cp, "constraints")
    cost_sec = _section(cp, "cost")
    exp_sec = _section(cp, "experiment")

    name = system_sec.get("name")
    if "A" in system_sec or "B" in system_sec:
        if "A" not in system_sec or "B" not in system_sec:
            raise ConfigError("[system] needs both A and B")
        try:
            sys = LinearSystem(_matrix(system_sec["A"], "A"), _matrix(system_sec["B"], "B"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        name = name or "custom"
        base_cons, base_cost = None, None
    else:
        name = name or "double_integrator"
        if name not in REGISTRY:
            raise ConfigError(f"unknown system {name!r}; known: {sorted(REGISTRY)}")
        sys, base_cons, base_cost = REGISTRY[name]()

    if cons_sec:
        try:
            cons = ConstraintSpec.from_boxes(_box(cons_sec.get("state_box"), "state_box"),
                                             _box(cons_sec.get("input_box"), "input_box"),
                                             sys.state_dim, sys.input_dim)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    elif base_cons is not None:
        cons = base_cons
    else:
        raise ConfigError("[constraints] is required for a custom system")
    if cons.state_dim != sys.state_dim or cons.input_dim != sys.input_dim:
        raise ConfigError("constraint dimensions do not match the system")

    if cost_sec:
        if "Q" not in cost_sec or "R" not in cost_sec:
            raise ConfigError("[cost] needs Q and R")
        Q, R = _matrix(cost_sec["Q"], "Q"), _matrix(cost_sec["R"], "R")
        Nc = cost_sec.get("N_cross")
        if Q.shape != (sys.state_dim,) * 2 or R.shape != (sys.input_dim,) * 2:
            raise ConfigError("Q or R has the wrong shape")
        cost = StageCost.quadratic(Q, R, None if Nc is None else _matrix(Nc, "N_cross"))
    elif base_cost is not None:
        cost = base_cost
    else:
        raise ConfigError("[cost] is required for a custom system")

    try:
        solver = SolverOptions.from_mapping(dict(cp.items("solver")) if cp.has_section("solver") else {})
    except ValueError as exc:
        raise ConfigError(f"[solver]: {exc}") from exc

    kind = kind or exp_sec.pop("kind", None) or "simulate"
    exp_sec.pop("kind", None)
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    params = dict(COMMON)
    params.update(DEFAULTS[kind])
    params.update(exp_sec)
    params.update(overrides or {})
    return ExperimentConfig(kind, sys, cons, cost, solver, params, name).validate()
