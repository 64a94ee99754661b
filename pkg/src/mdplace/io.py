"""JSON/CSV/DOT file formats.

Every JSON document carries ``format_version``. Floats are written with
``repr`` precision (17 significant digits) so files round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .distflow import GridState, LoadingScenario
from .errors import ParseError
from .estimator import MeasurementEntry, MeasurementKind, MeasurementSet
from .grid import Level, Line, Node, RadialGrid, build_grid
from .noise import NoiseSpec
from .placement import PlacementResult, Thresholds, UncertaintyReport

FORMAT_VERSION = 1


def _load_json(path: str | Path) -> dict:
    path = Path(path)
    try:
        with path.open() as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno}: {exc.msg}", context=str(path)) from exc
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object", context=str(path))
    version = doc.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {version}", context=str(path))
    return doc


def _write_json(path: str | Path, doc: dict) -> None:
    doc = {"format_version": FORMAT_VERSION, **doc}
    Path(path).write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n")


def _finite_or_none(v: float) -> float | None:
    return None if not math.isfinite(v) else float(v)


def _field(obj: dict, key: str, ctx: str, kind=float):
    try:
        return kind(obj[key])
    except KeyError:
        raise ParseError(f"missing field '{key}'", context=ctx) from None
    except (TypeError, ValueError):
        raise ParseError(f"field '{key}' has invalid value {obj[key]!r}", context=ctx) from None


# -- grid --------------------------------------------------------------------


def grid_to_dict(grid: RadialGrid) -> dict:
    return {
        "s_base_mva": grid.s_base_mva,
        "v_base_kv": grid.v_base_kv,
        "nodes": [{"id": nd.id, "level": nd.level.value, "label": nd.label} for nd in grid.nodes],
        "lines": [
            {
                "id": ln.id,
                "from": ln.upstream,
                "to": ln.downstream,
                "r_pu": ln.r,
                "x_pu": ln.x,
                "b_pu": ln.b,
                "i_cap_pu": ln.i_cap,
            }
            for ln in grid.lines
        ],
    }


def grid_from_dict(doc: dict, source: str = "grid") -> RadialGrid:
    nodes, lines = [], []
    for k, nd in enumerate(doc.get("nodes") or []):
        ctx = f"{source}: nodes[{k}]"
        try:
            level = Level(nd.get("level", "LV"))
        except ValueError:
            raise ParseError(f"unknown level {nd.get('level')!r}", context=ctx) from None
        nodes.append(Node(_field(nd, "id", ctx, int), level, str(nd.get("label", ""))))
    seen = set()
    for k, ln in enumerate(doc.get("lines") or []):
        ctx = f"{source}: lines[{k}]"
        line_id = _field(ln, "id", ctx, int)
        if line_id in seen:
            raise ParseError(f"duplicate line id {line_id}", context=ctx)
        seen.add(line_id)
        lines.append(
            Line(
                id=line_id,
                upstream=_field(ln, "from", ctx, int),
                downstream=_field(ln, "to", ctx, int),
                r=_field(ln, "r_pu", ctx),
                x=_field(ln, "x_pu", ctx),
                b=float(ln.get("b_pu", 0.0)),
                i_cap=_field(ln, "i_cap_pu", ctx),
            )
        )
    if not nodes:
        raise ParseError("no nodes", context=source)
    return build_grid(
        nodes, lines, s_base_mva=float(doc.get("s_base_mva", 10.0)), v_base_kv=float(doc.get("v_base_kv", 20.0))
    )


def save_grid(grid: RadialGrid, path: str | Path) -> None:
    _write_json(path, grid_to_dict(grid))


def parse_grid(path: str | Path) -> RadialGrid:
    return grid_from_dict(_load_json(path), source=str(path))


# -- scenario ----------------------------------------------------------------


def save_scenario(scenario: LoadingScenario, path: str | Path) -> None:
    loads = [
        {"node": j, "p_pu": float(p), "q_pu": float(q)}
        for j, (p, q) in enumerate(zip(scenario.p_load, scenario.q_load))
        if j and (p or q)
    ]
    _write_json(path, {"v0_sq_pu": float(scenario.v0_sq), "loads": loads})


def parse_scenario(path: str | Path, grid: RadialGrid) -> LoadingScenario:
    doc = _load_json(path)
    p = np.zeros(grid.n_nodes)
    q = np.zeros(grid.n_nodes)
    for k, item in enumerate(doc.get("loads") or []):
        ctx = f"{path}: loads[{k}]"
        node = _field(item, "node", ctx, int)
        if not 1 <= node < grid.n_nodes:
            raise ParseError(f"node {node} is not a load bus of the grid", context=ctx)
        p[node] = float(item.get("p_pu", 0.0))
        q[node] = float(item.get("q_pu", 0.0))
    v0 = _field(doc, "v0_sq_pu", str(path))
    try:
        return LoadingScenario(p, q, v0)
    except ValueError as exc:
        raise ParseError(str(exc), context=str(path)) from None


# -- noise / thresholds ------------------------------------------------------


def save_noise(spec: NoiseSpec, path: str | Path, master_seed: int | None = None) -> None:
    doc = dict(spec.__dict__)
    if master_seed is not None:
        doc["master_seed"] = master_seed
    _write_json(path, doc)


def parse_noise(path: str | Path) -> tuple[NoiseSpec, int | None]:
    doc = _load_json(path)
    fields = {k: float(doc[k]) for k in NoiseSpec.__dataclass_fields__ if k in doc}
    try:
        spec = NoiseSpec(**fields)
    except ValueError as exc:
        raise ParseError(str(exc), context=str(path)) from None
    seed = doc.get("master_seed")
    return spec, None if seed is None else int(seed)


def save_thresholds(th: Thresholds, path: str | Path) -> None:
    _write_json(
        path,
        {
            "rel_sigma_v2": _finite_or_none(th.rel_sigma_v2),
            "rel_sigma_i": _finite_or_none(th.rel_sigma_i),
            "current_squared": th.current_squared,
        },
    )


def parse_thresholds(path: str | Path) -> Thresholds:
    doc = _load_json(path)

    def limit(key):
        v = doc.get(key)
        return math.inf if v is None else float(v)

    try:
        return Thresholds(limit("rel_sigma_v2"), limit("rel_sigma_i"), bool(doc.get("current_squared", False)))
    except ValueError as exc:
        raise ParseError(str(exc), context=str(path)) from None


# -- measurements ------------------------------------------------------------


def measurements_to_dict(z: MeasurementSet) -> dict:
    return {
        "master_seed": z.master_seed,
        "realization": z.realization,
        "entries": [
            {"kind": m.kind.name, "element": m.element, "value": m.value, "sigma": m.sigma} for m in z.entries
        ],
    }


def save_measurements(z: MeasurementSet, path: str | Path) -> None:
    _write_json(path, measurements_to_dict(z))


def parse_measurements(path: str | Path) -> MeasurementSet:
    doc = _load_json(path)
    entries = []
    for k, item in enumerate(doc.get("entries") or []):
        ctx = f"{path}: entries[{k}]"
        try:
            kind = MeasurementKind[item["kind"]]
        except KeyError:
            raise ParseError(f"unknown or missing kind {item.get('kind')!r}", context=ctx) from None
        entries.append(
            MeasurementEntry(kind, _field(item, "element", ctx, int), _field(item, "value", ctx), _field(item, "sigma", ctx))
        )
    try:
        return MeasurementSet.from_entries(entries, master_seed=doc.get("master_seed"), realization=doc.get("realization"))
    except ValueError as exc:
        raise ParseError(str(exc), context=str(path)) from None


# -- state -------------------------------------------------------------------


def state_to_dict(grid: RadialGrid, state: GridState) -> dict:
    loading = state.loading(grid)
    return {
        "iterations": state.iterations,
        "nodes": [
            {"id": i, "p_load": float(state.p_load[i]), "q_load": float(state.q_load[i]), "v_sq": float(state.v_sq[i])}
            for i in range(grid.n_nodes)
        ],
        "lines": [
            {
                "id": j,
                "p_flow": float(state.p_flow[j]),
                "q_flow": float(state.q_flow[j]),
                "i_flow": float(state.i_flow[j]),
                "loading": float(loading[j]),
            }
            for j in range(1, grid.n_nodes)
        ],
    }


def save_state(grid: RadialGrid, state: GridState, path: str | Path, extra: dict | None = None) -> None:
    _write_json(path, {**state_to_dict(grid, state), **(extra or {})})


def parse_state(path: str | Path, grid: RadialGrid) -> GridState:
    doc = _load_json(path)
    n = grid.n_nodes
    arrays = {k: np.zeros(n) for k in ("p_load", "q_load", "v_sq", "p_flow", "q_flow", "i_flow")}
    for item in doc["nodes"]:
        for k in ("p_load", "q_load", "v_sq"):
            arrays[k][item["id"]] = item[k]
    for item in doc["lines"]:
        for k in ("p_flow", "q_flow", "i_flow"):
            arrays[k][item["id"]] = item[k]
    return GridState(**arrays, iterations=int(doc.get("iterations", 0)))


# -- reports -----------------------------------------------------------------


def report_to_dict(rep: UncertaintyReport) -> dict:
    return {
        "devices": rep.devices,
        "j_inf": rep.j_inf,
        "realizations": rep.realizations,
        "failures": rep.failures,
        "master_seed": rep.master_seed,
        "violations": [{"kind": k, "id": i} for k, i in rep.violations],
        "nodes": [
            {
                "id": i,
                "sigma_v2": float(rep.sigma_v2[i]),
                "limit_v2": float(rep.limit_v2[i]),
                "cost": float(rep.cost_v2[i]),
            }
            for i in range(len(rep.sigma_v2))
        ],
        "lines": [
            {
                "id": j,
                "sigma_i": float(rep.sigma_i[j]),
                "limit_i": _finite_or_none(rep.limit_i[j]),
                "cost": float(rep.cost_i[j]),
            }
            for j in range(1, len(rep.sigma_i))
        ],
    }


def result_to_dict(result: PlacementResult) -> dict:
    return {
        "placements": result.placements,
        "n_devices": result.n_devices,
        "evaluations_count": result.evaluations_count,
        "verified": result.verified,
        "per_iteration": [
            {"candidates": r.candidates, "chosen": r.chosen, "j_inf": r.j_inf} for r in result.per_iteration
        ],
        "base_report": report_to_dict(result.base_report),
        "final_report": report_to_dict(result.final_report),
    }


def write_sigma_csv(rep: UncertaintyReport, nodes_path: str | Path, lines_path: str | Path) -> None:
    with open(nodes_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "sigma_v2", "limit_v2", "cost"])
        for i in range(len(rep.sigma_v2)):
            w.writerow([i, repr(float(rep.sigma_v2[i])), repr(float(rep.limit_v2[i])), repr(float(rep.cost_v2[i]))])
    with open(lines_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["line", "sigma_i", "limit_i", "cost"])
        for j in range(1, len(rep.sigma_i)):
            w.writerow([j, repr(float(rep.sigma_i[j])), repr(float(rep.limit_i[j])), repr(float(rep.cost_i[j]))])


def _colour(ratio: float) -> str:
    # green (within limit) to red (twice the limit or worse)
    t = min(max(ratio / 2.0, 0.0), 1.0)
    return "#%02x%02x00" % (int(255 * t), int(255 * (1 - t)))


def to_dot(grid: RadialGrid, rep: UncertaintyReport, devices: list[int] | None = None) -> str:
    """Graphviz document: node/edge colour encodes sigma relative to its limit."""
    devices = set(rep.devices if devices is None else devices)
    out = ["digraph grid {", "  node [style=filled];"]
    for nd in grid.nodes:
        i = nd.id
        ratio = rep.sigma_v2[i] / rep.limit_v2[i] if rep.limit_v2[i] > 0 else 0.0
        attrs = [
            f'label="{i}"',
            f'fillcolor="{_colour(ratio)}"',
            f'tooltip="{nd.label} sigma_v2={rep.sigma_v2[i]:.3e}"',
            f"sigma_v2={float(rep.sigma_v2[i])!r}",
        ]
        if i in devices:
            attrs += ["device=true", "penwidth=3", 'color="orange"', "shape=doublecircle"]
        out.append(f"  n{i} [{', '.join(attrs)}];")
    for ln in grid.lines:
        j = ln.id
        lim = rep.limit_i[j]
        ratio = rep.sigma_i[j] / lim if math.isfinite(lim) and lim > 0 else 0.0
        out.append(f'  n{ln.upstream} -> n{ln.downstream} [color="{_colour(ratio)}", sigma_i={float(rep.sigma_i[j])!r}];')
    out.append("}")
    return "\n".join(out) + "\n"


def emit_report(
    result: PlacementResult,
    grid: RadialGrid,
    out: str | Path,
    json_out: bool = True,
    csv_out: bool = False,
    dot_out: bool = False,
    extra: dict[str, Any] | None = None,
) -> list[Path]:
    """Write the result file and optional CSV/DOT companions next to it.

    ``out`` is the JSON path; companions share its stem
    (``<stem>_nodes.csv``, ``<stem>_lines.csv``, ``<stem>.dot``).
    """
    out = Path(out)
    written = []
    if json_out:
        _write_json(out, {**result_to_dict(result), **(extra or {})})
        written.append(out)
    if csv_out:
        nodes_csv = out.with_name(out.stem + "_nodes.csv")
        lines_csv = out.with_name(out.stem + "_lines.csv")
        write_sigma_csv(result.final_report, nodes_csv, lines_csv)
        written += [nodes_csv, lines_csv]
    if dot_out:
        dot = out.with_suffix(".dot")
        dot.write_text(to_dot(grid, result.final_report, result.placements))
        written.append(dot)
    return written
