"""Radial grid topology and per-unit line parameters.

Nodes are indexed ``0..L`` with node 0 the slack bus. Every non-slack node
``j`` has exactly one incoming line, and that line carries id ``j`` as well,
so node-indexed and line-indexed arrays share one index space (entry 0 of a
line array is unused and held at zero).
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import BadSlack, DuplicateParent, GridValidationError, NotRadial, UnknownLine, UnknownNode

SLACK = 0


class Level(str, enum.Enum):
    MV = "MV"
    LV = "LV"


@dataclass(frozen=True)
class Node:
    id: int
    level: Level = Level.LV
    label: str = ""


@dataclass(frozen=True)
class Line:
    """PI-model line; ``b`` is the total shunt susceptance (half at each end).

    MV/LV transformers are represented as lines with ``b = 0``.
    """

    id: int
    upstream: int
    downstream: int
    r: float
    x: float
    b: float = 0.0
    i_cap: float = 1.0


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Validated, immutable radial grid. Build it with :func:`build_grid`."""

    nodes: tuple[Node, ...]
    lines: tuple[Line, ...]
    s_base_mva: float = 10.0
    v_base_kv: float = 20.0
    # parent[j] = upstream node of node j, -1 for the slack
    parent: np.ndarray = field(repr=False, default=None)
    children: tuple[tuple[int, ...], ...] = field(repr=False, default=())

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RadialGrid):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.lines == other.lines
            and self.s_base_mva == other.s_base_mva
            and self.v_base_kv == other.v_base_kv
        )

    __hash__ = None

    def line(self, line_id: int) -> Line:
        if not 1 <= line_id < self.n_nodes:
            raise UnknownLine(f"unknown line {line_id}")
        return self.lines[line_id - 1]

    def check_node(self, node: int) -> int:
        if not 0 <= node < self.n_nodes:
            raise UnknownNode(f"unknown node {node}")
        return int(node)

    # line-parameter arrays indexed by line id (entry 0 unused)
    @cached_property
    def r(self) -> np.ndarray:
        return self._line_array("r")

    @cached_property
    def x(self) -> np.ndarray:
        return self._line_array("x")

    @cached_property
    def b(self) -> np.ndarray:
        return self._line_array("b")

    @cached_property
    def i_cap(self) -> np.ndarray:
        return self._line_array("i_cap")

    def _line_array(self, attr: str) -> np.ndarray:
        out = np.zeros(self.n_nodes)
        for ln in self.lines:
            out[ln.id] = getattr(ln, attr)
        out.flags.writeable = False
        return out

    @cached_property
    def depth(self) -> np.ndarray:
        d = np.zeros(self.n_nodes, dtype=int)
        for j in self.topological_order[1:]:
            d[j] = d[self.parent[j]] + 1
        d.flags.writeable = False
        return d

    @cached_property
    def topological_order(self) -> tuple[int, ...]:
        """Breadth-first order from the slack (parents before children)."""
        order = []
        queue = deque([SLACK])
        while queue:
            i = queue.popleft()
            order.append(i)
            queue.extend(self.children[i])
        return tuple(order)

    @cached_property
    def levels(self) -> tuple[np.ndarray, ...]:
        """Non-slack nodes grouped by depth: ``levels[0]`` holds depth 1."""
        if self.n_nodes == 1:
            return ()
        depth = self.depth
        return tuple(np.flatnonzero(depth == d) for d in range(1, int(depth.max()) + 1))

    @cached_property
    def path_r(self) -> np.ndarray:
        """Cumulative series resistance from the slack to each node."""
        return self._cumulative(self.r)

    @cached_property
    def path_x(self) -> np.ndarray:
        return self._cumulative(self.x)

    def _cumulative(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_nodes)
        for j in self.topological_order[1:]:
            out[j] = out[self.parent[j]] + values[j]
        out.flags.writeable = False
        return out

    @cached_property
    def half_susceptance(self) -> np.ndarray:
        """Per-node sum of the shunt halves of every incident line."""
        out = np.zeros(self.n_nodes)
        for ln in self.lines:
            out[ln.upstream] += ln.b / 2
            out[ln.downstream] += ln.b / 2
        out.flags.writeable = False
        return out

    @cached_property
    def level_children(self) -> tuple[tuple[np.ndarray, np.ndarray, np.ndarray], ...]:
        """Per depth level: positions of nodes with children, their concatenated
        children, and ``reduceat`` offsets into that concatenation."""
        out = []
        for nodes in self.levels:
            pos, kids, offsets = [], [], []
            for p, i in enumerate(nodes):
                if self.children[i]:
                    pos.append(p)
                    offsets.append(len(kids))
                    kids.extend(self.children[i])
            out.append((np.array(pos, dtype=int), np.array(kids, dtype=int), np.array(offsets, dtype=int)))
        return tuple(out)

    @cached_property
    def subtree_mask(self) -> np.ndarray:
        """Boolean ``(n, n)`` matrix: ``[i, j]`` is True iff j lies below line i (j in subtree of i)."""
        n = self.n_nodes
        mask = np.zeros((n, n), dtype=bool)
        for j in reversed(self.topological_order):
            mask[j, j] = True
            for c in self.children[j]:
                mask[j] |= mask[c]
        mask.flags.writeable = False
        return mask


def build_grid(
    nodes: Sequence[Node],
    lines: Sequence[Line],
    s_base_mva: float = 10.0,
    v_base_kv: float = 20.0,
) -> RadialGrid:
    """Validate topology and parameters and return an immutable grid.

    Raises:
        BadSlack: node 0 missing or fed by a line.
        DuplicateParent: a node has two incoming lines.
        NotRadial: the line set has a cycle, a disconnection, or the wrong count.
        GridValidationError: malformed ids or parameters.
    """
    nodes = tuple(sorted(nodes, key=lambda nd: nd.id))
    n = len(nodes)
    ids = [nd.id for nd in nodes]
    if n == 0 or ids[0] != SLACK:
        raise BadSlack("grid has no slack node 0", element=SLACK)
    if ids != list(range(n)):
        dup = next((a for a, b in zip(ids, ids[1:]) if a == b), None)
        if dup is not None:
            raise GridValidationError(f"duplicate node id {dup}", element=dup)
        raise GridValidationError("node ids must be contiguous 0..L", element=ids[-1])

    if len(lines) != n - 1:
        raise NotRadial(f"{len(lines)} lines for {n} nodes; a radial grid needs {n - 1}")

    parent = np.full(n, -1, dtype=int)
    children: list[list[int]] = [[] for _ in range(n)]
    seen_lines: set[int] = set()
    for ln in lines:
        for end in (ln.upstream, ln.downstream):
            if not 0 <= end < n:
                raise GridValidationError(f"line {ln.id} references unknown node {end}", element=ln.id)
        if ln.upstream == ln.downstream:
            raise NotRadial(f"line {ln.id} is a self-loop", element=ln.id)
        if ln.id in seen_lines:
            raise GridValidationError(f"duplicate line id {ln.id}", element=ln.id)
        seen_lines.add(ln.id)
        if ln.downstream == SLACK:
            raise BadSlack(f"line {ln.id} feeds the slack node", element=ln.id)
        if parent[ln.downstream] != -1:
            raise DuplicateParent(f"node {ln.downstream} has two incoming lines", element=ln.downstream)
        if ln.id != ln.downstream:
            raise GridValidationError(
                f"line {ln.id} must carry the id of its downstream node {ln.downstream}", element=ln.id
            )
        _check_params(ln)
        parent[ln.downstream] = ln.upstream
        children[ln.upstream].append(ln.downstream)

    # reachability from the slack rules out cycles once the count is right
    reached = np.zeros(n, dtype=bool)
    queue = deque([SLACK])
    while queue:
        i = queue.popleft()
        reached[i] = True
        queue.extend(children[i])
    if not reached.all():
        orphan = int(np.flatnonzero(~reached)[0])
        raise NotRadial(f"node {orphan} is not connected to the slack", element=orphan)

    parent.flags.writeable = False
    return RadialGrid(
        nodes=nodes,
        lines=tuple(sorted(lines, key=lambda ln: ln.id)),
        s_base_mva=float(s_base_mva),
        v_base_kv=float(v_base_kv),
        parent=parent,
        children=tuple(tuple(sorted(c)) for c in children),
    )


def _check_params(ln: Line) -> None:
    vals = (ln.r, ln.x, ln.b, ln.i_cap)
    if not all(np.isfinite(v) for v in vals):
        raise GridValidationError(f"line {ln.id} has non-finite parameters", element=ln.id)
    if ln.r < 0:
        raise GridValidationError(f"line {ln.id}: negative resistance", element=ln.id)
    if ln.b < 0:
        raise GridValidationError(f"line {ln.id}: negative susceptance", element=ln.id)
    if ln.i_cap <= 0:
        raise GridValidationError(f"line {ln.id}: current limit must be positive", element=ln.id)


def downstream_nodes(grid: RadialGrid, line_id: int) -> set[int]:
    grid.line(line_id)
    return {int(j) for j in np.flatnonzero(grid.subtree_mask[line_id])}


def path_to_slack(grid: RadialGrid, node: int) -> list[int]:
    """Nodes from ``node`` up to and including the slack."""
    node = grid.check_node(node)
    path = [node]
    while path[-1] != SLACK:
        path.append(int(grid.parent[path[-1]]))
    return path


def lca(grid: RadialGrid, i: int, j: int) -> int:
    """Deepest node on both slack-to-i and slack-to-j paths."""
    i, j = grid.check_node(i), grid.check_node(j)
    depth, parent = grid.depth, grid.parent
    while depth[i] > depth[j]:
        i = parent[i]
    while depth[j] > depth[i]:
        j = parent[j]
    while i != j:
        i, j = parent[i], parent[j]
    return int(i)


def shared_path_lines(grid: RadialGrid, i: int, j: int) -> list[int]:
    """Lines from the slack down to ``lca(i, j)``, slack side first."""
    top = lca(grid, i, j)
    return path_to_slack(grid, top)[-2::-1]


def incident_half_susceptance(grid: RadialGrid, node: int) -> float:
    return float(grid.half_susceptance[grid.check_node(node)])


def leaves(grid: RadialGrid) -> set[int]:
    return {j for j in range(1, grid.n_nodes) if not grid.children[j]}


def incident_lines(grid: RadialGrid, node: int) -> list[int]:
    """Parent line (if any) followed by child lines, as line ids."""
    node = grid.check_node(node)
    own = [node] if node != SLACK else []
    return own + list(grid.children[node])


def grid_from_edges(
    edges: Iterable[tuple[int, int]],
    r: float | Sequence[float] = 0.01,
    x: float | Sequence[float] = 0.01,
    b: float | Sequence[float] = 0.0,
    i_cap: float | Sequence[float] = 1.0,
    **kwargs,
) -> RadialGrid:
    """Convenience constructor from ``(upstream, downstream)`` pairs.

    Scalar parameters apply to every line; sequences follow edge order.
    """
    edges = list(edges)
    n = max((max(e) for e in edges), default=0) + 1

    def pick(v, k):
        return float(v) if np.isscalar(v) else float(v[k])

    lines = [
        Line(id=d, upstream=u, downstream=d, r=pick(r, k), x=pick(x, k), b=pick(b, k), i_cap=pick(i_cap, k))
        for k, (u, d) in enumerate(edges)
    ]
    nodes = [Node(id=k) for k in range(n)]
    return build_grid(nodes, lines, **kwargs)
