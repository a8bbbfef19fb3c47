"""Instance files (JSON) and run directories.

The instance layout is documented in ``docs/instance_format.md``. Files are
written in canonical form: two-space indentation, sorted keys, trailing newline.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..errors import InstanceFormatError
from ..functions import family_from_dict
from ..problem import AgentSpec, CommGraph, ConstraintOracle, CostOracle, CoupledProblem
from ..sets import Ball, Box, ConvexSet, Halfspaces, ProductSet

FORMAT_TAG = "coupledpd-instance/1"


# ----------------------------------------------------------------------------
# sets


def set_to_dict(s: ConvexSet) -> dict:
    if isinstance(s, Box):
        return {"type": "box", "lower": s.lower.tolist(), "upper": s.upper.tolist()}
    if isinstance(s, Ball):
        return {"type": "ball", "center": s.center.tolist(), "radius": s.radius}
    if isinstance(s, Halfspaces):
        return {"type": "halfspaces",
                "rows": [{"normal": a.tolist(), "offset": float(b)} for a, b in zip(s.normals, s.offsets)]}
    if isinstance(s, ProductSet):
        return {"type": "product", "parts": [set_to_dict(p) for p in s.parts]}
    raise TypeError(f"cannot serialize {type(s).__name__}")


def set_from_dict(doc: dict) -> ConvexSet:
    try:
        kind = doc["type"]
        if kind == "box":
            return Box(doc["lower"], doc["upper"])
        if kind == "ball":
            return Ball(doc["center"], doc["radius"])
        if kind == "halfspaces":
            return Halfspaces.from_rows([(r["normal"], r["offset"]) for r in doc["rows"]])
        if kind == "product":
            return ProductSet(tuple(set_from_dict(p) for p in doc["parts"]))
    except (KeyError, TypeError) as exc:
        raise InstanceFormatError(f"bad set description {doc!r}: {exc}") from exc
    except ValueError as exc:
        raise InstanceFormatError(f"invalid set: {exc}") from exc
    raise InstanceFormatError(f"unknown set type {doc.get('type')!r}")


# ----------------------------------------------------------------------------
# problems


def problem_to_dict(problem: CoupledProblem) -> dict:
    agents = []
    for a in problem.agents:
        entry = {
            "dim": a.dim,
            "set": set_to_dict(a.set),
            "cost": a.cost.family.to_dict(),
            "constraint": {"family": "rows", "params": {"rows": [r.to_dict() for r in a.constraint.rows]}},
        }
        if a.x0 is not None:
            entry["x0"] = a.x0.tolist()
        agents.append(entry)
    doc = {
        "format": FORMAT_TAG,
        "name": problem.name,
        "n_agents": problem.n_agents,
        "m_constraints": problem.m_constraints,
        "edges": [[i + 1, j + 1] for i, j in problem.graph.sorted_edges()],
        "agents": agents,
    }
    if problem.slater_point is not None:
        doc["slater_point"] = problem.slater_point.tolist()
    return doc


def problem_from_dict(doc: dict) -> CoupledProblem:
    if not isinstance(doc, dict):
        raise InstanceFormatError("instance must be a JSON object")
    try:
        n, m = int(doc["n_agents"]), int(doc["m_constraints"])
        edges = [(int(i) - 1, int(j) - 1) for i, j in doc["edges"]]
        raw_agents = doc["agents"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceFormatError(f"missing or malformed top-level field: {exc}") from exc
    if len(raw_agents) != n:
        raise InstanceFormatError(f"n_agents = {n} but {len(raw_agents)} agent entries")
    agents = []
    for k, ad in enumerate(raw_agents):
        try:
            cset = set_from_dict(ad["set"])
            cost = family_from_dict(ad["cost"])
            cons = ad["constraint"]
            if cons.get("family") != "rows":
                raise InstanceFormatError(f"agent {k + 1}: constraint family must be 'rows'")
            rows = [family_from_dict(r) for r in cons["params"]["rows"]]
            if int(ad["dim"]) != cset.dimension():
                raise InstanceFormatError(f"agent {k + 1}: dim {ad['dim']} but set dimension {cset.dimension()}")
            agents.append(AgentSpec(k + 1, cset, CostOracle(cost), ConstraintOracle(rows), x0=ad.get("x0")))
        except InstanceFormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise InstanceFormatError(f"agent {k + 1}: {exc}") from exc
    try:
        graph = CommGraph(n, edges)
        return CoupledProblem(tuple(agents), graph, m, doc.get("slater_point"), name=doc.get("name", ""))
    except ValueError as exc:
        raise InstanceFormatError(str(exc)) from exc


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def serialize(problem: CoupledProblem) -> str:
    return dumps(problem_to_dict(problem))


def parse(text: str) -> CoupledProblem:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"not valid JSON: {exc}") from exc
    return problem_from_dict(doc)


def load(path) -> CoupledProblem:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InstanceFormatError(f"cannot read {path}: {exc}") from exc
    return parse(text)


def save(problem: CoupledProblem, path) -> None:
    Path(path).write_text(serialize(problem))


# ----------------------------------------------------------------------------
# run directories


def trajectory_header(problem: CoupledProblem) -> list:
    cols = ["t"]
    for i, a in enumerate(problem.agents):
        cols += [f"x_{i + 1}_{k + 1}" for k in range(a.dim)]
    for i in range(problem.n_agents):
        cols += [f"lam_{i + 1}_{k + 1}" for k in range(problem.m_constraints)]
    return cols


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def write_run(out_dir, problem: CoupledProblem, record, summary: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save(problem, out / "instance.json")
    base = trajectory_header(problem)
    d = record.diagnostics
    S = record.times.size
    lam_flat = record.lams.reshape(S, -1)
    diag = np.column_stack([d["V"], d["W"], d["phi"], d["viol"], d["kkt"]])
    _write_csv(out / "trajectory.csv", base + ["V", "W", "phi", "viol", "kkt"],
               np.column_stack([record.times, record.xs, lam_flat, diag]))
    avg_head = ["t"] + ["hat_" + c for c in base[1:]] + ["lagrangian_avg"]
    _write_csv(out / "averages.csv", avg_head,
               np.column_stack([record.times, record.xhat, record.lamhat.reshape(S, -1), d["lagrangian_avg"]]))
    (out / "summary.json").write_text(dumps(summary))
    return out


def read_run(run_dir):
    """``(problem, trajectory, averages, summary)``; the tables are dicts of column arrays."""
    run_dir = Path(run_dir)
    problem = load(run_dir / "instance.json")
    try:
        summary = json.loads((run_dir / "summary.json").read_text())
        traj = _read_csv(run_dir / "trajectory.csv")
        avgs = _read_csv(run_dir / "averages.csv")
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise InstanceFormatError(f"incomplete run directory {run_dir}: {exc}") from exc
    return problem, traj, avgs, summary


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    if body.ndim != 2 or body.shape[1] != len(header):
        raise ValueError(f"{path}: ragged table")
    return {name: body[:, k] for k, name in enumerate(header)}
