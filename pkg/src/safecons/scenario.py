"""JSON scenario files: parsing, canonical hashing and randomised variants."""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError
from .graph import CommGraph
from .objectives import ObjectiveEnsemble, Quadratic
from .plant import LinearAgent
from .protocol import ProtocolParams
from .regions import Ball, Box, ExpandingSchedule, HalfspaceIntersection
from .simulator import ScenarioConfig

__all__ = [
    "load_scenario",
    "parse_scenario",
    "read_scenario_json",
    "config_hash",
    "bundled_scenario_path",
    "bundled_scenarios",
    "random_boundary_instance",
]


def _canon_floats(obj):
    if isinstance(obj, float):
        return float(f"{obj:.17g}")
    if isinstance(obj, dict):
        return {k: _canon_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon_floats(v) for v in obj]
    return obj


def config_hash(raw: Mapping[str, Any]) -> str:
    """SHA-256 of the sorted-key, compact JSON rendering of the raw config."""
    text = json.dumps(_canon_floats(raw), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def bundled_scenario_path(name: str) -> Path:
    if not name.endswith(".json"):
        name += ".json"
    return Path(str(resources.files("safecons") / "scenarios" / name))


def bundled_scenarios():
    root = resources.files("safecons") / "scenarios"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def read_scenario_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _req(d, key, where):
    if not isinstance(d, Mapping) or key not in d:
        raise ConfigError(f"missing field '{where}{key}'")
    return d[key]


def _region(spec):
    kind = _req(spec, "type", "constraint.")
    try:
        if kind == "ball":
            return Ball(np.asarray(_req(spec, "center", "constraint."), float),
                        float(_req(spec, "radius", "constraint.")))
        if kind == "box":
            return Box(np.asarray(_req(spec, "lower", "constraint."), float),
                       np.asarray(_req(spec, "upper", "constraint."), float))
        if kind == "halfspaces":
            return HalfspaceIntersection(np.asarray(_req(spec, "normals", "constraint."), float),
                                         np.asarray(_req(spec, "offsets", "constraint."), float))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"constraint: {exc}") from exc
    raise ConfigError(f"constraint.type must be ball, box or halfspaces, got {kind!r}")


def _objectives(items):
    if not isinstance(items, list) or not items:
        raise ConfigError("objectives must be a nonempty list")
    out = []
    for k, it in enumerate(items):
        kind = it.get("type", "quadratic")
        if kind != "quadratic":
            raise ConfigError(f"objectives[{k}].type: only 'quadratic' is supported in files")
        out.append(Quadratic(_req(it, "target", f"objectives[{k}]."), it.get("weight", 1.0)))
    return ObjectiveEnsemble(out)


def _poles(spec, where):
    """Poles are numbers or ``[re, im]`` pairs."""
    if spec is None:
        return None
    out = []
    for p in spec:
        if isinstance(p, (list, tuple)):
            if len(p) != 2:
                raise ConfigError(f"{where}poles: complex poles are [re, im] pairs")
            out.append(complex(float(p[0]), float(p[1])))
        else:
            out.append(float(p))
    return out


def _agents(items):
    agents, gains, poles, x0 = [], [], [], []
    for k, it in enumerate(items):
        w = f"agents[{k}]."
        agents.append(LinearAgent(_req(it, "A", w), _req(it, "B", w), _req(it, "C", w)))
        gains.append(None if it.get("K1") is None else np.asarray(it["K1"], float))
        poles.append(_poles(it.get("poles"), w))
        x0.append(None if it.get("x0") is None else np.asarray(it["x0"], float))
    return agents, gains, poles, x0


def parse_scenario(raw: Mapping[str, Any]) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from the decoded JSON document.

    Graph edges are 1-based ``[i, j]`` or ``[i, j, weight]``.
    """
    raw = dict(raw)
    mode = raw.get("mode", "closed_loop")
    g = _req(raw, "graph", "")
    graph = CommGraph.from_edges(int(_req(g, "n_agents", "graph.")), _req(g, "edges", "graph."))
    region = _region(_req(raw, "constraint", ""))
    objectives = _objectives(_req(raw, "objectives", ""))
    if mode == "closed_loop":
        agents, gains, poles, x0 = _agents(_req(raw, "agents", ""))
        if all(k is None for k in x0):
            x0 = None
    else:
        agents, gains, poles, x0 = [], None, None, None
    exp = raw.get("expanding")
    schedule = None
    if exp is not None:
        schedule = ExpandingSchedule(
            region, float(_req(exp, "gap", "expanding.")), float(_req(exp, "rate", "expanding.")),
            xi=float(exp.get("xi", 1.0)), v=exp.get("v"),
            curvature_override=exp.get("M1"),
        )
    pr = _req(raw, "protocol", "")
    params = ProtocolParams(*(float(_req(pr, k, "protocol.")) for k in ("alpha", "beta", "k1", "k2")))
    init = _req(raw, "initial", "")
    integ = raw.get("integration", {})
    analysis = raw.get("analysis", {})
    try:
        cfg = ScenarioConfig(
            graph=graph, agents=agents, objectives=objectives, region=region,
            schedule=schedule, params=params,
            y0=np.asarray(_req(init, "outputs", "initial."), float),
            gains=gains or None, poles=poles or None, x0=x0,
            eta0=init.get("eta"), state_rule=init.get("state_rule", "regulator"),
            step=float(integ.get("step", 1e-3)), horizon=float(integ.get("horizon", 30.0)),
            output_stride=integ.get("output_stride", 10),
            substep_on_boundary=bool(integ.get("substep_on_boundary", False)),
            mode=mode, seed=int(raw.get("seed", 0)), name=raw.get("name", "scenario"),
            M1=analysis.get("M1"), grad_bound=analysis.get("grad_bound"),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return cfg


def load_scenario(path, **overrides):
    """Read and parse a scenario; returns ``(config, raw_dict)``.

    ``overrides`` may set ``step`` or ``horizon``.
    """
    raw = read_scenario_json(path)
    raw = apply_overrides(raw, **overrides)
    return parse_scenario(raw), raw


def apply_overrides(raw, step=None, horizon=None):
    raw = copy.deepcopy(raw)
    integ = raw.setdefault("integration", {})
    if step is not None:
        integ["step"] = float(step)
    if horizon is not None:
        integ["horizon"] = float(horizon)
    return raw


def random_boundary_instance(raw: Mapping[str, Any], seed: int, target_box=6.0,
                             min_centroid_excess=0.5, init_fraction=0.9) -> dict:
    """Copy `raw` with random quadratic targets whose centroid lies outside the ball.

    Targets are uniform in ``[-target_box, target_box]^p``, redrawn until the
    centroid is at least ``min_centroid_excess`` beyond the constraint ball;
    initial outputs are uniform in the concentric ball scaled by ``init_fraction``.
    """
    raw = copy.deepcopy(dict(raw))
    con = raw["constraint"]
    if con.get("type") != "ball":
        raise ConfigError("random boundary instances need a ball constraint")
    c = np.asarray(con["center"], float)
    R = float(con["radius"])
    N = int(raw["graph"]["n_agents"])
    p = c.size
    rng = np.random.default_rng(seed)
    while True:
        E = rng.uniform(-target_box, target_box, size=(N, p)) + c
        if np.linalg.norm(E.mean(axis=0) - c) >= R + min_centroid_excess:
            break
    d = rng.normal(size=(N, p))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    rad = init_fraction * R * rng.uniform(size=N) ** (1.0 / p)
    Y0 = c + d * rad[:, None]
    raw["objectives"] = [{"type": "quadratic", "target": e.tolist()} for e in E]
    init = dict(raw.get("initial", {}))
    init["outputs"] = Y0.tolist()
    init.pop("eta", None)
    raw["initial"] = init
    raw["seed"] = int(seed)
    raw["name"] = f"{raw.get('name', 'scenario')}_seed{seed}"
    return raw
