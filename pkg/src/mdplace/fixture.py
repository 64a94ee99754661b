"""Synthetic MV/LV test grid of configurable size.

This is NOT a real utility network. It reproduces only the coarse shape of
a typical urban subgrid: an MV backbone fed from the slack, MV/LV
transformers into LV busbars, and short LV feeders, one busbar acting as a
high-connectivity hub. Every LV feeder is a chain ending in exactly one
leaf, so the leaf count is set directly by the number of feeders.

Line data are drawn from physical ranges (ohm/km, uF/km, km, A) and
converted to per-unit on ``s_base_mva`` with a 20 kV MV and 0.4 kV LV base.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distflow import GridState, LoadingScenario, solve_distflow
from .errors import InfeasibleSpec
from .grid import Level, Line, Node, RadialGrid, build_grid

OMEGA = 2 * math.pi * 50


@dataclass(frozen=True)
class FixtureSpec:
    mv_count: int = 10
    lv_count: int = 75
    substations: int = 6
    hub_feeders: int = 11
    leaf_count: int = 43
    seed: int = 1
    s_base_mva: float = 10.0
    mv_kv: float = 20.0
    lv_kv: float = 0.4
    # MV cable: ohm/km, ohm/km, uF/km, km, A
    mv_r: tuple[float, float] = (0.10, 0.20)
    mv_x: tuple[float, float] = (0.09, 0.12)
    mv_c: tuple[float, float] = (0.25, 0.40)
    mv_len: tuple[float, float] = (0.3, 1.5)
    mv_amp: tuple[float, float] = (300.0, 400.0)
    # transformer ratings (kVA) and short-circuit / copper-loss voltages
    tr_kva: tuple[float, ...] = (400.0, 630.0, 1000.0)
    tr_uk: float = 0.04
    tr_ur: float = 0.012
    lv_r: tuple[float, float] = (0.12, 0.32)
    lv_x: tuple[float, float] = (0.07, 0.09)
    lv_c: tuple[float, float] = (0.5, 0.8)
    lv_len: tuple[float, float] = (0.03, 0.15)
    lv_amp: tuple[float, float] = (180.0, 300.0)
    power_factor: tuple[float, float] = (0.9, 0.98)
    # the scenario is rescaled until the most loaded line sits here
    target_max_loading: float = 0.78
    v0_sq: float = 1.0

    def validate(self) -> None:
        if self.mv_count < 2 or self.lv_count < 1:
            raise InfeasibleSpec("need at least two MV nodes and one LV node")
        if not 1 <= self.substations < self.mv_count:
            raise InfeasibleSpec("substations must be between 1 and mv_count - 1")
        feeders = self.leaf_count
        min_feeders = self.hub_feeders + 2 * (self.substations - 1)
        if feeders < min_feeders:
            raise InfeasibleSpec(f"{feeders} leaves cannot cover {min_feeders} feeders")
        if self.lv_count - self.substations < feeders:
            raise InfeasibleSpec("too few LV nodes for the requested number of feeders")
        if not 0 < self.target_max_loading < 1:
            raise InfeasibleSpec("target_max_loading must lie in (0, 1)")


def _mv_tree(rng, spec):
    """Parent list for MV nodes 0..mv_count-1 with at most ``substations`` leaves."""
    for _ in range(1000):
        parent = [-1]
        for k in range(1, spec.mv_count):
            # prefer extending recent nodes: long backbone with a few branches
            lo = max(0, k - 3)
            parent.append(int(rng.integers(lo, k)))
        has_child = set(parent[1:])
        mv_leaves = [k for k in range(1, spec.mv_count) if k not in has_child]
        if len(mv_leaves) <= spec.substations:
            return parent, mv_leaves
    raise InfeasibleSpec("could not draw an MV backbone with few enough leaves")


def _split(rng, total, parts, minimum):
    """Random composition of ``total`` into ``parts`` integers, each ``>= minimum``."""
    extra = total - parts * minimum
    cuts = np.sort(rng.integers(0, extra + 1, size=parts - 1))
    sizes = np.diff(np.concatenate([[0], cuts, [extra]])) + minimum
    return [int(s) for s in sizes]


def _pu_impedance(ohm, kv, s_base):
    return ohm / (kv**2 / s_base)


def _pu_current(amp, kv, s_base):
    return amp / (s_base * 1e6 / (math.sqrt(3) * kv * 1e3))


def generate_fixture(spec: FixtureSpec | None = None) -> tuple[RadialGrid, LoadingScenario]:
    """Deterministic (seeded) grid and loading scenario.

    Raises:
        InfeasibleSpec: inconsistent counts, or no load scaling reaches the
            target loading without voltage collapse.
    """
    spec = spec or FixtureSpec()
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    mv_parent, mv_leaves = _mv_tree(rng, spec)

    others = [k for k in range(1, spec.mv_count) if k not in mv_leaves]
    rng.shuffle(others)
    hosts = mv_leaves + others[: spec.substations - len(mv_leaves)]
    hub = int(rng.integers(len(hosts)))
    rest = _split(rng, spec.leaf_count - spec.hub_feeders, spec.substations - 1, 2)
    feeders_per_sub = rest[:hub] + [spec.hub_feeders] + rest[hub:]
    chain_lengths = _split(rng, spec.lv_count - spec.substations, spec.leaf_count, 1)
    rng.shuffle(chain_lengths)

    # symbolic tree: ("mv", k) / ("bus", s) / ("lv", f, pos) keys
    children: dict[tuple, list[tuple]] = {("mv", k): [] for k in range(spec.mv_count)}
    for k in range(1, spec.mv_count):
        children[("mv", mv_parent[k])].append(("mv", k))
    chain_iter = iter(chain_lengths)
    feeder_id = 0
    for s, host in enumerate(hosts):
        bus = ("bus", s)
        children[("mv", host)].append(bus)
        children[bus] = []
        for _ in range(feeders_per_sub[s]):
            length = next(chain_iter)
            prev = bus
            for pos in range(length):
                key = ("lv", feeder_id, pos)
                children[prev].append(key)
                children[key] = []
                prev = key
            feeder_id += 1

    # depth-first numbering from the slack
    order, stack = [], [("mv", 0)]
    while stack:
        key = stack.pop()
        order.append(key)
        stack.extend(reversed(children[key]))
    ids = {key: i for i, key in enumerate(order)}

    sb = spec.s_base_mva
    nodes, lines = [], []
    tr_rating = {}
    for key in order:
        i = ids[key]
        if key[0] == "mv":
            nodes.append(Node(i, Level.MV, f"MV{key[1]}"))
        elif key[0] == "bus":
            nodes.append(Node(i, Level.LV, f"SS{key[1]} busbar"))
        else:
            nodes.append(Node(i, Level.LV, f"F{key[1]}.{key[2]}"))
        for child in children[key]:
            j = ids[child]
            if child[0] == "mv":
                length = rng.uniform(*spec.mv_len)
                r = _pu_impedance(rng.uniform(*spec.mv_r) * length, spec.mv_kv, sb)
                x = _pu_impedance(rng.uniform(*spec.mv_x) * length, spec.mv_kv, sb)
                b = OMEGA * rng.uniform(*spec.mv_c) * 1e-6 * length * spec.mv_kv**2 / sb
                cap = _pu_current(rng.uniform(*spec.mv_amp), spec.mv_kv, sb)
            elif child[0] == "bus":
                kva = float(spec.tr_kva[-1] if child[1] == hub else rng.choice(spec.tr_kva))
                tr_rating[j] = kva
                z_scale = sb / (kva / 1000)
                r = spec.tr_ur * z_scale
                x = math.sqrt(spec.tr_uk**2 - spec.tr_ur**2) * z_scale
                b = 0.0
                cap = kva / 1000 / sb
            else:
                length = rng.uniform(*spec.lv_len)
                r = _pu_impedance(rng.uniform(*spec.lv_r) * length, spec.lv_kv, sb)
                x = _pu_impedance(rng.uniform(*spec.lv_x) * length, spec.lv_kv, sb)
                b = OMEGA * rng.uniform(*spec.lv_c) * 1e-6 * length * spec.lv_kv**2 / sb
                cap = _pu_current(rng.uniform(*spec.lv_amp), spec.lv_kv, sb)
            lines.append(Line(j, i, j, float(r), float(x), float(b), float(cap)))

    grid = build_grid(nodes, lines, s_base_mva=sb, v_base_kv=spec.mv_kv)

    # loads only on LV feeder nodes; MV nodes and busbars are connection nodes
    n = grid.n_nodes
    shape_p = np.zeros(n)
    shape_q = np.zeros(n)
    for key in order:
        if key[0] == "lv":
            p = rng.uniform(0.2, 1.0)
            pf = rng.uniform(*spec.power_factor)
            shape_p[ids[key]] = p
            shape_q[ids[key]] = p * math.tan(math.acos(pf))
    scenario = _scale_to_loading(grid, shape_p, shape_q, spec)
    return grid, scenario


def _scale_to_loading(grid, shape_p, shape_q, spec) -> LoadingScenario:
    # shape loads are O(1); start from a scale that loads the weakest feeder modestly
    scale = 0.2 * float(np.min(grid.i_cap[1:]))
    for _ in range(60):
        scenario = LoadingScenario(scale * shape_p, scale * shape_q, spec.v0_sq)
        state = solve_distflow(grid, scenario, max_iter=200)
        peak = float(state.loading(grid).max())
        if abs(peak - spec.target_max_loading) < 1e-4:
            return scenario
        scale *= spec.target_max_loading / peak
    raise InfeasibleSpec("load scaling did not reach the target loading")


def fixture_state(spec: FixtureSpec | None = None) -> tuple[RadialGrid, GridState]:
    """Grid plus its solved reference state."""
    grid, scenario = generate_fixture(spec)
    return grid, solve_distflow(grid, scenario)
